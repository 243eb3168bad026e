#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "btseg/net.hpp"

namespace btseg {

/// Training aborted on a numerical failure (non-finite gradient or loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  double momentum = 0.8;
  double weight_decay = 0.0001;

  void validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw std::invalid_argument("momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  }
};

template <typename T>
struct OptimizerState {
  std::vector<T> velocity;

  static OptimizerState zeros(std::size_t n) { return OptimizerState{std::vector<T>(n, T(0))}; }
};

/// Nesterov momentum in look-ahead-free form. With g' = g + decay * w on
/// decaying parameters:
///   v <- mu * v - eta * g'
///   w <- w + mu * v - eta * g'
/// `decay_mask` marks the parameters the L2 term applies to (the classifier
/// layer is exempt). Throws TrainingError on a non-finite gradient.
template <typename T>
void sgd_nesterov_step(Network<T>& net, OptimizerState<T>& state, std::span<const T> gradient,
                       T eta, const OptimizerConfig& config,
                       std::span<const std::uint8_t> decay_mask);

extern template void sgd_nesterov_step<float>(Network<float>&, OptimizerState<float>&,
                                              std::span<const float>, float,
                                              const OptimizerConfig&,
                                              std::span<const std::uint8_t>);
extern template void sgd_nesterov_step<double>(Network<double>&, OptimizerState<double>&,
                                               std::span<const double>, double,
                                               const OptimizerConfig&,
                                               std::span<const std::uint8_t>);

}  // namespace btseg
