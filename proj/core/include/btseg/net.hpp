#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btseg/augment.hpp"
#include "btseg/grid.hpp"
#include "btseg/rng.hpp"

namespace btseg {

enum class LayerKind { Conv3, ResidualStandard, ResidualBottleneck };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv3;
  int features = 8;
  int bottleneck = 0;  // middle width of a bottleneck block

  bool operator==(const LayerSpec&) const = default;
};

struct PathwaySpec {
  std::vector<LayerSpec> layers;

  bool empty() const { return layers.empty(); }
  bool operator==(const PathwaySpec&) const = default;
};

/// Configurable dual-pathway classifier: a native-resolution convolution
/// stack, an optional 1/4-resolution stack, and a dense head of 1x1x1
/// convolutions ending in a softmax. All convolutions are valid (no padding);
/// 3x3x3 kernels shrink the output by 2 voxels per axis. Residual blocks are
/// pre-activation, so a block whose branch weights are all zero is the
/// identity on its (spatially cropped) input.
struct NetworkSpec {
  PathwaySpec native;
  PathwaySpec low;
  std::vector<int> hidden;
  double dropout = 0.5;
  int num_classes = 2;
  int output_region = 1;

  static constexpr int low_scale = 4;

  void validate() const;

  bool operator==(const NetworkSpec&) const = default;

  /// Voxels removed per axis by the native stack (always even).
  int native_reduction() const;
  /// Lattice steps removed per axis by the low stack, in low-res units.
  int low_reduction_steps() const;

  int native_input_size() const { return output_region + native_reduction(); }
  int low_output_size() const;
  int low_input_size() const {
    return low.empty() ? 0 : low_output_size() + low_reduction_steps();
  }

  /// Input extent influencing one output voxel, in native voxels.
  int native_receptive_field() const { return 1 + native_reduction(); }
  int low_receptive_field() const {
    return low.empty() ? 0 : low_scale * (1 + low_reduction_steps());
  }

  int concat_features() const;
  std::size_t param_count() const;

  PatchRequest patch_request() const;
};

/// One training sample: pathway patches plus the class ids of the
/// output-region voxels.
struct BatchSample {
  Patch native;
  std::optional<Patch> low;
  std::vector<std::uint8_t> targets;
};

enum class Mode { Train, Eval };

template <typename T>
struct BatchCache;

template <typename T>
struct ForwardResult {
  int samples = 0;
  int num_classes = 0;
  int region = 0;  // output cube side
  std::vector<T> probs;  // [sample][class][voxel]
  std::shared_ptr<BatchCache<T>> cache;  // present after a train-mode forward

  std::int64_t voxels() const { return std::int64_t(region) * region * region; }
  T prob(int sample, int cls, std::int64_t voxel) const {
    return probs[(std::int64_t(sample) * num_classes + cls) * voxels() + voxel];
  }
};

/// The network: a spec plus a flat parameter vector. T is float in training
/// and double in gradient-check builds.
///
/// Parameter layout (also the checkpoint wire order): native pathway units,
/// then low pathway units, then dense head units ending with the classifier.
/// A Conv3 layer is one unit; ResidualStandard two; ResidualBottleneck three
/// (1x1x1, 3x3x3, 1x1x1). Each unit stores weights indexed
/// [out][in][kz][ky][kx], then its biases.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, std::vector<T> weights);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t param_count() const { return weights_.size(); }
  std::span<const T> weights() const { return weights_; }

  /// Whole-vector replacement and in-place mutation both advance the weight
  /// version, which invalidates outstanding forward caches.
  std::span<T> mutable_weights() {
    ++version_;
    return weights_;
  }
  std::uint64_t version() const { return version_; }

  /// 1 where L2 decay applies. The classifier layer before the softmax is
  /// exempt, weights and bias both.
  std::vector<std::uint8_t> decay_mask() const;

  template <typename U>
  Network<U> cast() const {
    std::vector<U> w(weights_.begin(), weights_.end());
    return Network<U>(spec_, std::move(w));
  }

 private:
  NetworkSpec spec_;
  std::vector<T> weights_;
  std::uint64_t version_ = 0;
};

/// Glorot-uniform initialization: each weight tensor drawn from
/// U(-sqrt(6/(fan_in+fan_out)), +...), biases zero. Deterministic in seed.
template <typename T>
Network<T> glorot_init(const NetworkSpec& spec, std::uint64_t seed);

/// Runs the batch through the network. Train mode records the state backward
/// needs (inputs, activations, dropout masks); eval mode is deterministic and
/// caches nothing. `dropout_rng` is required in train mode when dropout > 0.
template <typename T>
ForwardResult<T> forward(const Network<T>& net, std::span<const BatchSample> batch, Mode mode,
                         RngStream* dropout_rng = nullptr);

/// Mean over samples and output voxels of -log p_target, p floored at 1e-12.
template <typename T>
T cross_entropy(const ForwardResult<T>& result, std::span<const BatchSample> batch);

/// Gradient of cross_entropy w.r.t. every parameter, same layout as
/// weights(). Requires the train-mode forward state for this batch against
/// the current weights; a stale cache throws std::logic_error.
template <typename T>
std::vector<T> backward(const Network<T>& net, const ForwardResult<T>& result,
                        std::span<const BatchSample> batch);

/// Dense per-voxel class probabilities for the output box [origin,
/// origin+size) of a normalized volume: the low pathway runs as dilated
/// convolutions on the native grid, so every voxel's prediction equals the
/// one a single patch centered on it would produce. Inputs outside the
/// volume mirror-reflect. Returns [class][z][y][x], eval mode.
std::vector<float> infer_region(const Network<float>& net, const Volume& volume, Vec3i origin,
                                Vec3i size);

extern template class Network<float>;
extern template class Network<double>;
extern template Network<float> glorot_init<float>(const NetworkSpec&, std::uint64_t);
extern template Network<double> glorot_init<double>(const NetworkSpec&, std::uint64_t);
extern template ForwardResult<float> forward<float>(const Network<float>&,
                                                    std::span<const BatchSample>, Mode,
                                                    RngStream*);
extern template ForwardResult<double> forward<double>(const Network<double>&,
                                                      std::span<const BatchSample>, Mode,
                                                      RngStream*);
extern template float cross_entropy<float>(const ForwardResult<float>&,
                                           std::span<const BatchSample>);
extern template double cross_entropy<double>(const ForwardResult<double>&,
                                             std::span<const BatchSample>);
extern template std::vector<float> backward<float>(const Network<float>&,
                                                   const ForwardResult<float>&,
                                                   std::span<const BatchSample>);
extern template std::vector<double> backward<double>(const Network<double>&,
                                                     const ForwardResult<double>&,
                                                     std::span<const BatchSample>);

}  // namespace btseg
