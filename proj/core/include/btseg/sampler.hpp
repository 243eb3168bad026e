#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "btseg/augment.hpp"
#include "btseg/grid.hpp"
#include "btseg/net.hpp"
#include "btseg/rng.hpp"

namespace btseg {

/// A training scan: normalized intensities plus its label map.
struct TrainingImage {
  Volume volume;
  LabelMap labels;
};

enum class SamplerMode { Boosted, Uniform };

struct SamplerConfig {
  SamplerMode mode = SamplerMode::Boosted;
  /// Lower bound on the acceptance probability; keeps batch assembly from
  /// stalling once the error maps approach zero.
  double error_floor = 0.01;
  /// After this many rejected candidates a slot takes the last candidate
  /// unconditionally (counted in the diagnostics).
  int max_rejections = 1000;
  /// Fraction of the training images whose error maps refresh per call.
  double refresh_fraction = 0.25;

  void validate() const;
};

struct SamplerDiagnostics {
  std::int64_t candidates = 0;   // candidates put through the acceptance test
  std::int64_t accepted = 0;     // accepted by the test itself
  std::int64_t forced = 0;       // accepted only by the rejection cap

  double acceptance_rate() const {
    return candidates > 0 ? double(accepted) / double(candidates) : 0.0;
  }
};

struct SamplerState {
  SamplerConfig config;
  std::vector<ErrorMap> error_maps;
  /// Per image, per class: linear voxel indices with that label. The union
  /// over classes partitions each image.
  std::vector<std::vector<std::vector<std::uint32_t>>> class_index;
  /// Per image: classes with a nonempty index.
  std::vector<std::vector<int>> classes_present;
  std::int64_t refresh_cursor = 0;
  SamplerDiagnostics diagnostics;
};

/// Error maps start at 1 everywhere, so every first candidate is accepted.
SamplerState init_sampler(std::span<const TrainingImage> images, const SamplerConfig& config);

/// Fills a batch per the boosted scheme: image, class, and center are drawn
/// uniformly; in boosted mode a candidate at center c is accepted iff
/// max(E(c), error_floor) > u with u ~ U[0,1). Uniform mode draws the same
/// variates and accepts every candidate. Accepted centers become augmented
/// samples when `aug` is given, plain extractions otherwise.
std::vector<BatchSample> sample_batch(SamplerState& state, std::span<const TrainingImage> images,
                                      int batch_size, const PatchRequest& request,
                                      const AugmentConfig* aug, RngStream& rng);

/// Per-class probability grids for a normalized volume.
using VolumePredictor = std::function<std::vector<Volume>(const Volume&)>;

/// Refreshes ceil(refresh_fraction * N) error maps, round-robin over a cursor
/// persisted in the state: E(x) = 1 - p(true class at x), clamped to [0, 1].
void update_error_maps(SamplerState& state, const VolumePredictor& predict,
                       std::span<const TrainingImage> images);

}  // namespace btseg
