#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "btseg/grid.hpp"

namespace btseg {

/// Synthetic phantom description. Foreground classes get ellipsoidal blobs at
/// their intensity means; distractors are elongated structures at a foreground
/// intensity but labeled background, so intensity alone cannot separate them.
struct PhantomConfig {
  Dims dims{64, 64, 64};
  Spacing spacing{1.0f, 1.0f, 1.5f};
  int num_classes = 2;
  double foreground_fraction_target = 0.003;
  int blobs_per_class = 2;
  int distractor_count = 3;
  std::vector<double> intensity_means{0.0, 200.0};  // [background, class 1, ...]
  double noise_sigma = 30.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic in (config, config.seed). Throws std::runtime_error when the
/// foreground fraction target cannot be placed within +/-50%.
std::pair<Volume, LabelMap> generate_phantom(const PhantomConfig& config);

}  // namespace btseg
