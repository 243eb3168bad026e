#include "btseg/optimizer.hpp"

#include <cmath>

namespace btseg {

template <typename T>
void sgd_nesterov_step(Network<T>& net, OptimizerState<T>& state, std::span<const T> gradient,
                       T eta, const OptimizerConfig& config,
                       std::span<const std::uint8_t> decay_mask) {
  config.validate();
  const std::size_t n = net.param_count();
  if (gradient.size() != n || state.velocity.size() != n || decay_mask.size() != n) {
    throw std::invalid_argument("gradient/velocity/mask length mismatch");
  }
  for (T g : gradient) {
    if (!std::isfinite(double(g))) {
      throw TrainingError("non-finite gradient: training aborted");
    }
  }

  const T mu = T(config.momentum);
  const T wd = T(config.weight_decay);
  const std::span<T> w = net.mutable_weights();
  T* v = state.velocity.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T g = decay_mask[i] ? gradient[i] + wd * w[i] : gradient[i];
    // The step product is rounded once up front so the mu = 0 reduction to
    // plain SGD is bitwise stable under FMA contraction.
    const T step = eta * g;
    v[i] = mu * v[i] - step;
    w[i] += mu * v[i] - step;
  }
}

template void sgd_nesterov_step<float>(Network<float>&, OptimizerState<float>&,
                                       std::span<const float>, float, const OptimizerConfig&,
                                       std::span<const std::uint8_t>);
template void sgd_nesterov_step<double>(Network<double>&, OptimizerState<double>&,
                                        std::span<const double>, double, const OptimizerConfig&,
                                        std::span<const std::uint8_t>);

}  // namespace btseg
