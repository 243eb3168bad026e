#pragma once

#include <array>
#include <optional>

#include "btseg/grid.hpp"
#include "btseg/rng.hpp"

namespace btseg {

/// Intensity preprocessing: clamp to [clamp_lo, clamp_hi], divide by divisor.
struct NormalizeConfig {
  double clamp_lo = -1000.0;
  double clamp_hi = 1000.0;
  double divisor = 218.0;

  void validate() const;
};

Volume normalize(const Volume& volume, const NormalizeConfig& config);

/// Geometric augmentation: resample to base_spacing with a per-axis jitter
/// drawn from U(-spacing_jitter, spacing_jitter), and rotate about the patch
/// center by per-axis angles drawn from U(-range, range).
struct AugmentConfig {
  Spacing base_spacing{1.0f, 1.0f, 1.5f};
  double spacing_jitter = 0.1;
  std::array<double, 3> rotation_ranges_deg{10.0, 4.0, 4.0};

  void validate() const;
};

/// One realized draw. Jitter is drawn per axis; the same draw is shared by
/// both pathways of a sample.
struct AugmentDraw {
  std::array<double, 3> spacing_jitter{0.0, 0.0, 0.0};
  std::array<double, 3> angles_deg{0.0, 0.0, 0.0};
};

AugmentDraw draw_augment(const AugmentConfig& config, RngStream& rng);

/// Patch sizes requested per pathway; low_size 0 means no downsampled
/// pathway. output_region is the odd side of the label target block.
struct PatchRequest {
  int native_size = 0;
  int low_size = 0;
  int low_scale = 4;
  int output_region = 1;
};

struct AugmentedSample {
  Patch native;
  std::optional<Patch> low;
  std::vector<std::uint8_t> targets;  // output_region^3 class ids
};

/// Extracts a margin patch at `center`, applies rotate_patch then trilinear
/// resampling about the center onto the jittered target spacing, and crops
/// the pathway patches. Label targets come from the unaugmented label map at
/// the output coordinates mapped through the same transform, nearest
/// neighbor. With a zero draw and volume spacing equal to base_spacing this
/// reduces exactly to extract_patch.
AugmentedSample augment(const Volume& volume, const LabelMap& labels, Vec3i center,
                        const PatchRequest& request, const AugmentConfig& config,
                        const AugmentDraw& draw);

AugmentedSample augment(const Volume& volume, const LabelMap& labels, Vec3i center,
                        const PatchRequest& request, const AugmentConfig& config, RngStream& rng);

/// Plain extraction, no geometry change: the uniform-augmentation-off path.
AugmentedSample extract_sample(const Volume& volume, const LabelMap& labels, Vec3i center,
                               const PatchRequest& request);

}  // namespace btseg
