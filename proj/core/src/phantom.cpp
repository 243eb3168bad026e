#include "btseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "btseg/rng.hpp"

namespace btseg {

namespace {

struct Ellipsoid {
  double cx, cy, cz;
  double ax, ay, az;  // semi-axes, voxels
  double intensity;   // delta over background mean
  int label;          // 0 for distractors
};

struct Capsule {
  double x0, y0, z0, x1, y1, z1;  // segment endpoints
  double radius;
  double intensity;
};

// Intensity falloff vs. normalized radius: solid core, linear fade to zero at
// kEdge. The fade produces partial-volume voxels around every boundary, the
// hard part of the labeling.
constexpr double kEdge = 1.35;

double falloff(double r) {
  if (r <= 1.0) return 1.0;
  if (r >= kEdge) return 0.0;
  return (kEdge - r) / (kEdge - 1.0);
}

double capsule_distance(const Capsule& c, double x, double y, double z) {
  const double dx = c.x1 - c.x0, dy = c.y1 - c.y0, dz = c.z1 - c.z0;
  const double len2 = dx * dx + dy * dy + dz * dz;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((x - c.x0) * dx + (y - c.y0) * dy + (z - c.z0) * dz) / len2;
    t = std::clamp(t, 0.0, 1.0);
  }
  const double px = c.x0 + t * dx - x, py = c.y0 + t * dy - y, pz = c.z0 + t * dz - z;
  return std::sqrt(px * px + py * py + pz * pz);
}

}  // namespace

void PhantomConfig::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw std::invalid_argument("phantom dims must be positive");
  }
  if (num_classes < 2 || num_classes > 255) {
    throw std::invalid_argument("phantom num_classes must be in [2, 255]");
  }
  if (!(foreground_fraction_target > 0.0 && foreground_fraction_target < 0.5)) {
    throw std::invalid_argument("foreground_fraction_target must be in (0, 0.5)");
  }
  if (blobs_per_class < 1) throw std::invalid_argument("blobs_per_class must be >= 1");
  if (distractor_count < 0) throw std::invalid_argument("distractor_count must be >= 0");
  if (int(intensity_means.size()) != num_classes) {
    throw std::invalid_argument("intensity_means must have one entry per class");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
}

std::pair<Volume, LabelMap> generate_phantom(const PhantomConfig& config) {
  config.validate();
  const Dims& d = config.dims;
  const double total_voxels = double(d.total());
  const int fg_classes = config.num_classes - 1;
  const double blob_volume = config.foreground_fraction_target * total_voxels /
                             double(fg_classes * config.blobs_per_class);
  const double mean_radius = std::cbrt(blob_volume * 3.0 / (4.0 * std::numbers::pi));

  const int min_dim = std::min({d.nx, d.ny, d.nz});
  if (mean_radius * kEdge * 2.0 + 4.0 > min_dim) {
    throw std::runtime_error("phantom generation error: blobs do not fit the grid");
  }

  for (int attempt = 0; attempt < 8; ++attempt) {
    RngStream rng = RngStream::derive(config.seed, 0x70684e544dULL, std::uint64_t(attempt));

    std::vector<Ellipsoid> blobs;
    bool placed_all = true;
    for (int k = 1; k < config.num_classes && placed_all; ++k) {
      for (int b = 0; b < config.blobs_per_class; ++b) {
        Ellipsoid e{};
        e.label = k;
        e.intensity = config.intensity_means[k] - config.intensity_means[0];
        bool ok = false;
        for (int tries = 0; tries < 200 && !ok; ++tries) {
          const double fa = rng.uniform(0.75, 1.35);
          const double fb = rng.uniform(0.75, 1.35);
          e.ax = mean_radius * fa;
          e.ay = mean_radius * fb;
          e.az = mean_radius / (fa * fb);  // keeps the blob volume on target
          const double m = kEdge * std::max({e.ax, e.ay, e.az}) + 1.0;
          if (2.0 * m + 2.0 > min_dim) continue;
          e.cx = rng.uniform(m, d.nx - m);
          e.cy = rng.uniform(m, d.ny - m);
          e.cz = rng.uniform(m, d.nz - m);
          ok = true;
          for (const Ellipsoid& other : blobs) {
            const double dist = std::hypot(e.cx - other.cx, e.cy - other.cy, e.cz - other.cz);
            const double sep = kEdge * (std::max({e.ax, e.ay, e.az}) +
                                        std::max({other.ax, other.ay, other.az}));
            if (dist < sep + 1.0) {
              ok = false;
              break;
            }
          }
        }
        if (!ok) {
          placed_all = false;
          break;
        }
        blobs.push_back(e);
      }
    }
    if (!placed_all) continue;

    // Distractors: tubes at the first foreground class intensity, labeled
    // background, radius comparable to the blobs.
    std::vector<Capsule> distractors;
    for (int t = 0; t < config.distractor_count; ++t) {
      Capsule c{};
      c.intensity = config.num_classes > 1
                        ? config.intensity_means[1] - config.intensity_means[0]
                        : 0.0;
      bool ok = false;
      for (int tries = 0; tries < 200 && !ok; ++tries) {
        c.radius = mean_radius * rng.uniform(0.6, 0.95);
        const double half_len = rng.uniform(0.18, 0.30) * min_dim;
        const double m = kEdge * c.radius + 1.0;
        const double cx = rng.uniform(m + half_len * 0.2, d.nx - m - half_len * 0.2);
        const double cy = rng.uniform(m + half_len * 0.2, d.ny - m - half_len * 0.2);
        const double cz = rng.uniform(m + half_len * 0.2, d.nz - m - half_len * 0.2);
        // Mostly-axial direction, like a vessel running through the scan.
        double ux = rng.uniform(-0.3, 0.3);
        double uy = rng.uniform(-0.3, 0.3);
        double uz = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double norm = std::sqrt(ux * ux + uy * uy + uz * uz);
        ux /= norm;
        uy /= norm;
        uz /= norm;
        c.x0 = std::clamp(cx - ux * half_len, m, d.nx - m);
        c.y0 = std::clamp(cy - uy * half_len, m, d.ny - m);
        c.z0 = std::clamp(cz - uz * half_len, m, d.nz - m);
        c.x1 = std::clamp(cx + ux * half_len, m, d.nx - m);
        c.y1 = std::clamp(cy + uy * half_len, m, d.ny - m);
        c.z1 = std::clamp(cz + uz * half_len, m, d.nz - m);
        ok = true;
        for (const Ellipsoid& blob : blobs) {
          const double dist = capsule_distance(c, blob.cx, blob.cy, blob.cz);
          const double sep = kEdge * (c.radius + std::max({blob.ax, blob.ay, blob.az}));
          if (dist < sep + 1.0) {
            ok = false;
            break;
          }
        }
      }
      if (ok) distractors.push_back(c);
    }
    if (int(distractors.size()) != config.distractor_count) continue;

    // Rasterize: noise background, then shape intensities and labels.
    std::vector<float> vol(static_cast<std::size_t>(d.total()));
    std::vector<std::uint8_t> lab(static_cast<std::size_t>(d.total()), 0);
    for (auto& v : vol) {
      v = float(config.intensity_means[0] + config.noise_sigma * rng.normal());
    }

    std::int64_t fg_count = 0;
    for (int z = 0; z < d.nz; ++z) {
      for (int y = 0; y < d.ny; ++y) {
        for (int x = 0; x < d.nx; ++x) {
          const std::int64_t i = d.index(x, y, z);
          double add = 0.0;
          for (const Ellipsoid& e : blobs) {
            const double rx = (x - e.cx) / e.ax;
            const double ry = (y - e.cy) / e.ay;
            const double rz = (z - e.cz) / e.az;
            const double r = std::sqrt(rx * rx + ry * ry + rz * rz);
            if (r < kEdge) {
              add += e.intensity * falloff(r);
              if (r <= 1.0) {
                if (lab[i] == 0) ++fg_count;
                lab[i] = std::uint8_t(e.label);
              }
            }
          }
          for (const Capsule& c : distractors) {
            const double r = capsule_distance(c, x, y, z) / c.radius;
            if (r < kEdge) add += c.intensity * falloff(r);
          }
          vol[i] += float(add);
        }
      }
    }

    const double target = config.foreground_fraction_target * total_voxels;
    if (fg_count < std::llround(0.5 * target) || fg_count > std::llround(1.5 * target)) {
      continue;
    }
    return {Volume(d, config.spacing, std::move(vol)),
            LabelMap(d, config.spacing, config.num_classes, std::move(lab))};
  }
  throw std::runtime_error(
      "phantom generation error: could not hit the foreground fraction target");
}

}  // namespace btseg
