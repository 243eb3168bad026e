#include "btseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace btseg {

void NormalizeConfig::validate() const {
  if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("clamp_lo must be < clamp_hi");
  if (!(divisor > 0.0)) throw std::invalid_argument("divisor must be > 0");
}

Volume normalize(const Volume& volume, const NormalizeConfig& config) {
  config.validate();
  std::vector<float> out(volume.data().begin(), volume.data().end());
  const float lo = float(config.clamp_lo), hi = float(config.clamp_hi);
  const float inv = float(1.0 / config.divisor);
  for (float& v : out) v = std::clamp(v, lo, hi) * inv;
  return Volume(volume.dims(), volume.spacing(), std::move(out));
}

void AugmentConfig::validate() const {
  if (!(base_spacing.x > 0 && base_spacing.y > 0 && base_spacing.z > 0)) {
    throw std::invalid_argument("base_spacing components must be > 0");
  }
  if (spacing_jitter < 0.0) throw std::invalid_argument("spacing_jitter must be >= 0");
  const double min_sp = std::min({base_spacing.x, base_spacing.y, base_spacing.z});
  if (!(spacing_jitter < min_sp)) {
    throw std::invalid_argument("spacing_jitter must be smaller than the base spacing");
  }
  for (double r : rotation_ranges_deg) {
    if (r < 0.0) throw std::invalid_argument("rotation range must be >= 0");
  }
}

AugmentDraw draw_augment(const AugmentConfig& config, RngStream& rng) {
  AugmentDraw d;
  for (int a = 0; a < 3; ++a) {
    d.spacing_jitter[a] = rng.uniform(-config.spacing_jitter, config.spacing_jitter);
  }
  for (int a = 0; a < 3; ++a) {
    const double r = config.rotation_ranges_deg[a];
    d.angles_deg[a] = r > 0.0 ? rng.uniform(-r, r) : 0.0;
  }
  return d;
}

namespace {

void check_request(const PatchRequest& req) {
  if (req.native_size <= 0 || req.native_size % 2 == 0) {
    throw std::invalid_argument("native patch size must be odd and positive");
  }
  if (req.low_size < 0 || (req.low_size > 0 && req.low_size % 2 == 0)) {
    throw std::invalid_argument("low patch size must be odd (or 0 for no low pathway)");
  }
  if (req.low_size > 0 && req.low_scale != 4) {
    throw std::invalid_argument("low pathway scale must be 4");
  }
  if (req.output_region <= 0 || req.output_region % 2 == 0) {
    throw std::invalid_argument("output_region must be odd and positive");
  }
}

std::vector<std::uint8_t> targets_at_center(const LabelMap& labels, Vec3i center, int region) {
  std::vector<std::uint8_t> t;
  t.reserve(std::size_t(region) * region * region);
  const int h = (region - 1) / 2;
  const Dims& d = labels.dims();
  for (int k = -h; k <= h; ++k) {
    for (int j = -h; j <= h; ++j) {
      for (int i = -h; i <= h; ++i) {
        t.push_back(labels.at(mirror_index(center.x + i, d.nx), mirror_index(center.y + j, d.ny),
                              mirror_index(center.z + k, d.nz)));
      }
    }
  }
  return t;
}

}  // namespace

AugmentedSample extract_sample(const Volume& volume, const LabelMap& labels, Vec3i center,
                               const PatchRequest& request) {
  check_request(request);
  AugmentedSample s;
  s.native = extract_patch(volume, center, request.native_size, 1);
  if (request.low_size > 0) {
    s.low = extract_patch(volume, center, request.low_size, request.low_scale);
  }
  s.targets = targets_at_center(labels, center, request.output_region);
  return s;
}

AugmentedSample augment(const Volume& volume, const LabelMap& labels, Vec3i center,
                        const PatchRequest& request, const AugmentConfig& config,
                        const AugmentDraw& draw) {
  check_request(request);
  config.validate();
  if (!(volume.dims() == labels.dims())) {
    throw std::invalid_argument("augment: volume/label dims mismatch");
  }

  // Target lattice step in source voxel units, per axis.
  const Spacing& src = volume.spacing();
  const double ratio[3] = {
      (double(config.base_spacing.x) + draw.spacing_jitter[0]) / double(src.x),
      (double(config.base_spacing.y) + draw.spacing_jitter[1]) / double(src.y),
      (double(config.base_spacing.z) + draw.spacing_jitter[2]) / double(src.z)};

  // Margin patch covering the farthest resample offset through any rotation.
  const double max_ratio = std::max({ratio[0], ratio[1], ratio[2]});
  double reach = (request.native_size - 1) / 2.0;
  if (request.low_size > 0) {
    reach = std::max(reach, (request.low_size - 1) / 2.0 * request.low_scale);
  }
  reach = std::max(reach, double((request.output_region - 1) / 2));
  const int margin_half = int(std::ceil(reach * max_ratio)) + 2;
  const int margin_size = 2 * margin_half + 1;

  const Patch base = extract_patch(volume, center, margin_size, 1);
  const Patch rotated = rotate_patch(base, draw.angles_deg);

  const double ctr = margin_half;
  const Dims pd{margin_size, margin_size, margin_size};

  const auto sample_pathway = [&](int size, int scale) {
    Patch p;
    p.size = size;
    p.scale = scale;
    p.center = center;
    p.data.resize(std::size_t(size) * size * size);
    const int h = (size - 1) / 2;
    std::size_t o = 0;
    for (int k = -h; k <= h; ++k) {
      for (int j = -h; j <= h; ++j) {
        for (int i = -h; i <= h; ++i) {
          p.data[o++] = sample_trilinear_mirrored(rotated.data, pd, ctr + i * scale * ratio[0],
                                                  ctr + j * scale * ratio[1],
                                                  ctr + k * scale * ratio[2]);
        }
      }
    }
    return p;
  };

  AugmentedSample s;
  s.native = sample_pathway(request.native_size, 1);
  if (request.low_size > 0) s.low = sample_pathway(request.low_size, request.low_scale);

  // Labels: map each output-region offset through the same transform
  // (resample offset, then the inverse rotation used for sampling) back into
  // the unaugmented label map, nearest neighbor.
  const Mat3 r = rotation_xyz(draw.angles_deg);
  const int h = (request.output_region - 1) / 2;
  const Dims& ld = labels.dims();
  s.targets.reserve(std::size_t(request.output_region) * request.output_region *
                    request.output_region);
  for (int k = -h; k <= h; ++k) {
    for (int j = -h; j <= h; ++j) {
      for (int i = -h; i <= h; ++i) {
        const double ox = i * ratio[0], oy = j * ratio[1], oz = k * ratio[2];
        const double sx = r.m[0] * ox + r.m[3] * oy + r.m[6] * oz;
        const double sy = r.m[1] * ox + r.m[4] * oy + r.m[7] * oz;
        const double sz = r.m[2] * ox + r.m[5] * oy + r.m[8] * oz;
        const int x = mirror_index(int(std::lround(center.x + sx)), ld.nx);
        const int y = mirror_index(int(std::lround(center.y + sy)), ld.ny);
        const int z = mirror_index(int(std::lround(center.z + sz)), ld.nz);
        s.targets.push_back(labels.at(x, y, z));
      }
    }
  }
  return s;
}

AugmentedSample augment(const Volume& volume, const LabelMap& labels, Vec3i center,
                        const PatchRequest& request, const AugmentConfig& config,
                        RngStream& rng) {
  return augment(volume, labels, center, request, config, draw_augment(config, rng));
}

}  // namespace btseg
