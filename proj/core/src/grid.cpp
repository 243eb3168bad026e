#include "btseg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace btseg {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_finite(std::span<const float> data, const char* what) {
  for (float v : data) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

void check_dims(const Dims& d) {
  require(d.nx > 0 && d.ny > 0 && d.nz > 0, "dims must be positive");
}

void check_spacing(const Spacing& s) {
  require(std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.z),
          "spacing must be finite");
  require(s.x > 0 && s.y > 0 && s.z > 0, "spacing components must be > 0");
}

}  // namespace

int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_dims(dims_);
  check_spacing(spacing_);
  require(std::int64_t(data_.size()) == dims_.total(), "data length must equal nx*ny*nz");
  check_finite(data_, "Volume");
}

Volume::Volume(Dims dims, Spacing spacing, float fill)
    : dims_(dims), spacing_(spacing) {
  check_dims(dims_);
  check_spacing(spacing_);
  require(std::isfinite(fill), "Volume: non-finite fill");
  data_.assign(static_cast<std::size_t>(dims_.total()), fill);
}

void Volume::set_data(std::vector<float> data) {
  require(std::int64_t(data.size()) == dims_.total(), "data length must equal nx*ny*nz");
  check_finite(data, "Volume");
  data_ = std::move(data);
}

LabelMap::LabelMap(Dims dims, Spacing spacing, int num_classes, std::vector<std::uint8_t> data)
    : dims_(dims), spacing_(spacing), num_classes_(num_classes), data_(std::move(data)) {
  check_dims(dims_);
  check_spacing(spacing_);
  require(num_classes_ >= 2, "num_classes must be >= 2");
  require(std::int64_t(data_.size()) == dims_.total(), "data length must equal nx*ny*nz");
  for (std::uint8_t v : data_) {
    require(v < num_classes_, "label value out of range");
  }
}

LabelMap::LabelMap(Dims dims, Spacing spacing, int num_classes, std::uint8_t fill)
    : dims_(dims), spacing_(spacing), num_classes_(num_classes) {
  check_dims(dims_);
  check_spacing(spacing_);
  require(num_classes_ >= 2, "num_classes must be >= 2");
  require(fill < num_classes_, "label value out of range");
  data_.assign(static_cast<std::size_t>(dims_.total()), fill);
}

void LabelMap::set_data(std::vector<std::uint8_t> data) {
  require(std::int64_t(data.size()) == dims_.total(), "data length must equal nx*ny*nz");
  for (std::uint8_t v : data) {
    require(v < num_classes_, "label value out of range");
  }
  data_ = std::move(data);
}

ErrorMap::ErrorMap(Dims dims, float fill) : dims_(dims) {
  check_dims(dims_);
  require(fill >= 0.0f && fill <= 1.0f, "error value outside [0,1]");
  data_.assign(static_cast<std::size_t>(dims_.total()), fill);
}

ErrorMap::ErrorMap(Dims dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
  check_dims(dims_);
  require(std::int64_t(data_.size()) == dims_.total(), "data length must equal nx*ny*nz");
  for (float v : data_) {
    require(v >= 0.0f && v <= 1.0f, "error value outside [0,1]");
  }
}

void ErrorMap::set_data(std::vector<float> data) {
  require(std::int64_t(data.size()) == dims_.total(), "data length must equal nx*ny*nz");
  for (float v : data) {
    require(v >= 0.0f && v <= 1.0f, "error value outside [0,1]");
  }
  data_ = std::move(data);
}

double ErrorMap::mean() const {
  double sum = 0.0;
  for (float v : data_) sum += v;
  return data_.empty() ? 0.0 : sum / double(data_.size());
}

Volume ErrorMap::to_volume(Spacing spacing) const {
  return Volume(dims_, spacing, data_);
}

Patch extract_patch(const Volume& volume, Vec3i center, int size, int scale) {
  require(size > 0 && size % 2 == 1, "patch size must be odd");
  require(scale == 1 || scale == 4, "patch scale must be 1 or 4");
  const Dims& d = volume.dims();
  if (!d.contains(center.x, center.y, center.z)) {
    throw std::out_of_range("patch center outside the volume");
  }
  const int half = (size - 1) / 2;
  Patch p;
  p.size = size;
  p.scale = scale;
  p.center = center;
  p.data = extract_box(volume,
                       {center.x - half * scale, center.y - half * scale, center.z - half * scale},
                       {size, size, size}, scale);
  return p;
}

std::vector<float> extract_box(const Volume& volume, Vec3i origin, Vec3i size, int step) {
  require(size.x > 0 && size.y > 0 && size.z > 0, "box size must be positive");
  require(step > 0, "box step must be positive");
  const Dims& d = volume.dims();
  std::vector<float> out(std::size_t(size.x) * size.y * size.z);

  std::vector<int> xi(size.x);
  for (int i = 0; i < size.x; ++i) xi[i] = mirror_index(origin.x + i * step, d.nx);

  std::size_t o = 0;
  for (int k = 0; k < size.z; ++k) {
    const int z = mirror_index(origin.z + k * step, d.nz);
    for (int j = 0; j < size.y; ++j) {
      const int y = mirror_index(origin.y + j * step, d.ny);
      const std::int64_t row = d.index(0, y, z);
      for (int i = 0; i < size.x; ++i) out[o++] = volume[row + xi[i]];
    }
  }
  return out;
}

float sample_trilinear_clamped(std::span<const float> data, const Dims& d, double x, double y,
                               double z) {
  const auto clampf = [](double v, int n) { return std::clamp(v, 0.0, double(n - 1)); };
  x = clampf(x, d.nx);
  y = clampf(y, d.ny);
  z = clampf(z, d.nz);
  const int x0 = std::min(int(x), d.nx - 1), y0 = std::min(int(y), d.ny - 1),
            z0 = std::min(int(z), d.nz - 1);
  const int x1 = std::min(x0 + 1, d.nx - 1), y1 = std::min(y0 + 1, d.ny - 1),
            z1 = std::min(z0 + 1, d.nz - 1);
  const double fx = x - x0, fy = y - y0, fz = z - z0;

  const auto v = [&](int xx, int yy, int zz) { return double(data[d.index(xx, yy, zz)]); };
  const double c00 = v(x0, y0, z0) + fx * (v(x1, y0, z0) - v(x0, y0, z0));
  const double c10 = v(x0, y1, z0) + fx * (v(x1, y1, z0) - v(x0, y1, z0));
  const double c01 = v(x0, y0, z1) + fx * (v(x1, y0, z1) - v(x0, y0, z1));
  const double c11 = v(x0, y1, z1) + fx * (v(x1, y1, z1) - v(x0, y1, z1));
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  return float(c0 + fz * (c1 - c0));
}

float sample_trilinear_mirrored(std::span<const float> data, const Dims& d, double x, double y,
                                double z) {
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y)), z0 = int(std::floor(z));
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  const auto v = [&](int xx, int yy, int zz) {
    return double(data[d.index(mirror_index(xx, d.nx), mirror_index(yy, d.ny),
                               mirror_index(zz, d.nz))]);
  };
  const double c00 = v(x0, y0, z0) + fx * (v(x0 + 1, y0, z0) - v(x0, y0, z0));
  const double c10 = v(x0, y0 + 1, z0) + fx * (v(x0 + 1, y0 + 1, z0) - v(x0, y0 + 1, z0));
  const double c01 = v(x0, y0, z0 + 1) + fx * (v(x0 + 1, y0, z0 + 1) - v(x0, y0, z0 + 1));
  const double c11 =
      v(x0, y0 + 1, z0 + 1) + fx * (v(x0 + 1, y0 + 1, z0 + 1) - v(x0, y0 + 1, z0 + 1));
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  return float(c0 + fz * (c1 - c0));
}

Mat3 rotation_xyz(std::array<double, 3> angles_deg) {
  const double ax = angles_deg[0] * std::numbers::pi / 180.0;
  const double ay = angles_deg[1] * std::numbers::pi / 180.0;
  const double az = angles_deg[2] * std::numbers::pi / 180.0;
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  return Mat3{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,  //
               sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,  //
               -sy, cy * sx, cy * cx}};
}

Volume resample_trilinear(const Volume& volume, Spacing target_spacing) {
  check_spacing(target_spacing);
  const Dims& d = volume.dims();
  const Spacing& s = volume.spacing();

  const auto new_dim = [](int n, float old_sp, float new_sp) {
    return std::max(1, int(std::lround(double(n) * double(old_sp) / double(new_sp))));
  };
  const Dims nd{new_dim(d.nx, s.x, target_spacing.x), new_dim(d.ny, s.y, target_spacing.y),
                new_dim(d.nz, s.z, target_spacing.z)};

  // Voxel i's center sits at (i + 0.5) * spacing mm. With equal spacings the
  // ratio is exactly 1 and the source coordinate collapses to i, so the
  // identity resample is bitwise exact.
  const double rx = double(target_spacing.x) / double(s.x);
  const double ry = double(target_spacing.y) / double(s.y);
  const double rz = double(target_spacing.z) / double(s.z);

  std::vector<float> out(static_cast<std::size_t>(nd.total()));
  std::size_t o = 0;
  for (int k = 0; k < nd.nz; ++k) {
    const double zc = (k + 0.5) * rz - 0.5;
    for (int j = 0; j < nd.ny; ++j) {
      const double yc = (j + 0.5) * ry - 0.5;
      for (int i = 0; i < nd.nx; ++i) {
        const double xc = (i + 0.5) * rx - 0.5;
        out[o++] = sample_trilinear_clamped(volume.data(), d, xc, yc, zc);
      }
    }
  }
  return Volume(nd, target_spacing, std::move(out));
}

Patch rotate_patch(const Patch& patch, std::array<double, 3> angles_deg) {
  require(patch.scale == 1, "rotate_patch requires a scale-1 patch");
  for (double a : angles_deg) {
    require(std::isfinite(a), "rotation angle must be finite");
  }
  const int s = patch.size;
  const Dims d{s, s, s};
  const double c = (s - 1) / 2.0;

  // Sampling runs through the inverse rotation, R^T.
  const Mat3 r = rotation_xyz(angles_deg);
  const double r00 = r.m[0], r01 = r.m[1], r02 = r.m[2];
  const double r10 = r.m[3], r11 = r.m[4], r12 = r.m[5];
  const double r20 = r.m[6], r21 = r.m[7], r22 = r.m[8];

  Patch out;
  out.size = s;
  out.scale = 1;
  out.center = patch.center;
  out.data.resize(patch.data.size());

  std::size_t o = 0;
  for (int k = 0; k < s; ++k) {
    const double qz = k - c;
    for (int j = 0; j < s; ++j) {
      const double qy = j - c;
      for (int i = 0; i < s; ++i) {
        const double qx = i - c;
        const double px = r00 * qx + r10 * qy + r20 * qz + c;
        const double py = r01 * qx + r11 * qy + r21 * qz + c;
        const double pz = r02 * qx + r12 * qy + r22 * qz + c;
        out.data[o++] = sample_trilinear_mirrored(patch.data, d, px, py, pz);
      }
    }
  }
  return out;
}

double dice(const LabelMap& pred, const LabelMap& truth, int class_id) {
  if (!(pred.dims() == truth.dims())) {
    throw std::invalid_argument("dice: label map dims mismatch");
  }
  require(class_id >= 0 && class_id < pred.num_classes() && class_id < truth.num_classes(),
          "dice: class_id out of range");
  std::int64_t a = 0, b = 0, inter = 0;
  const auto pa = pred.data();
  const auto pb = truth.data();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const bool ia = pa[i] == class_id;
    const bool ib = pb[i] == class_id;
    a += ia;
    b += ib;
    inter += ia && ib;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * double(inter) / double(a + b);
}

LabelMap largest_component(const LabelMap& mask) {
  const Dims& d = mask.dims();
  const auto in = mask.data();
  for (std::uint8_t v : in) {
    require(v <= 1, "largest_component: mask must be binary");
  }

  std::vector<std::int32_t> label(in.size(), -1);
  std::vector<std::int64_t> stack;
  std::int64_t best_size = 0;
  std::int32_t best_label = -1;
  std::int32_t next = 0;

  for (std::int64_t start = 0; start < std::int64_t(in.size()); ++start) {
    if (in[start] == 0 || label[start] >= 0) continue;
    const std::int32_t cur = next++;
    std::int64_t size = 0;
    stack.push_back(start);
    label[start] = cur;
    while (!stack.empty()) {
      const std::int64_t v = stack.back();
      stack.pop_back();
      ++size;
      const int x = int(v % d.nx);
      const int y = int((v / d.nx) % d.ny);
      const int z = int(v / (std::int64_t(d.nx) * d.ny));
      const auto visit = [&](int xx, int yy, int zz) {
        if (!d.contains(xx, yy, zz)) return;
        const std::int64_t u = d.index(xx, yy, zz);
        if (in[u] == 1 && label[u] < 0) {
          label[u] = cur;
          stack.push_back(u);
        }
      };
      visit(x - 1, y, z);
      visit(x + 1, y, z);
      visit(x, y - 1, z);
      visit(x, y + 1, z);
      visit(x, y, z - 1);
      visit(x, y, z + 1);
    }
    // Scan order discovers components by their lowest linear index, so a
    // strict > keeps the earlier component on ties.
    if (size > best_size) {
      best_size = size;
      best_label = cur;
    }
  }

  std::vector<std::uint8_t> out(in.size(), 0);
  if (best_label >= 0) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      out[i] = label[i] == best_label ? 1 : 0;
    }
  }
  return LabelMap(d, mask.spacing(), 2, std::move(out));
}

}  // namespace btseg
