#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace btseg {

struct Dims {
  int nx = 0, ny = 0, nz = 0;

  std::int64_t total() const { return std::int64_t(nx) * ny * nz; }
  bool operator==(const Dims&) const = default;
  bool contains(int x, int y, int z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }
  // Linear layout: index = x + nx*(y + ny*z). This order is also the wire
  // order of the volume and checkpoint file formats.
  std::int64_t index(int x, int y, int z) const {
    return x + std::int64_t(nx) * (y + std::int64_t(ny) * z);
  }
};

struct Spacing {
  float x = 1.0f, y = 1.0f, z = 1.0f;
  bool operator==(const Spacing&) const = default;
};

struct Vec3i {
  int x = 0, y = 0, z = 0;
  bool operator==(const Vec3i&) const = default;
};

/// Reflect an out-of-range index into [0, n) by mirroring at the grid
/// boundary without repeating the edge sample: -1 -> 1, n -> n-2.
int mirror_index(int i, int n);

/// Trilinear sample at a continuous voxel coordinate; out-of-range
/// coordinates mirror-reflect.
float sample_trilinear_mirrored(std::span<const float> data, const Dims& dims, double x, double y,
                                double z);

/// Trilinear sample at a continuous voxel coordinate, edge-clamped.
float sample_trilinear_clamped(std::span<const float> data, const Dims& dims, double x, double y,
                               double z);

struct Mat3 {
  double m[9];  // row-major
};

/// Rotation by the given angles in degrees about x, then y, then z:
/// R = Rz * Ry * Rx.
Mat3 rotation_xyz(std::array<double, 3> angles_deg);

/// Dense 3D scalar grid of intensities. Immutable after construction except
/// by whole-grid replacement through set_data().
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, Spacing spacing, std::vector<float> data);
  Volume(Dims dims, Spacing spacing, float fill = 0.0f);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const float> data() const { return data_; }

  float at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }
  float operator[](std::int64_t i) const { return data_[i]; }

  /// Replaces the whole grid. Values must be finite.
  void set_data(std::vector<float> data);

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<float> data_;
};

/// Per-voxel integer class labels paired with a Volume.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Dims dims, Spacing spacing, int num_classes, std::vector<std::uint8_t> data);
  LabelMap(Dims dims, Spacing spacing, int num_classes, std::uint8_t fill = 0);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  int num_classes() const { return num_classes_; }
  std::span<const std::uint8_t> data() const { return data_; }

  std::uint8_t at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }
  std::uint8_t operator[](std::int64_t i) const { return data_[i]; }

  void set_data(std::vector<std::uint8_t> data);

 private:
  Dims dims_;
  Spacing spacing_;
  int num_classes_ = 2;
  std::vector<std::uint8_t> data_;
};

/// Per-voxel training error in [0, 1]. Values outside the range are rejected
/// at construction and on replacement.
class ErrorMap {
 public:
  ErrorMap() = default;
  ErrorMap(Dims dims, float fill);
  ErrorMap(Dims dims, std::vector<float> data);

  const Dims& dims() const { return dims_; }
  std::span<const float> data() const { return data_; }
  float at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }
  float operator[](std::int64_t i) const { return data_[i]; }
  double mean() const;

  void set_data(std::vector<float> data);

  Volume to_volume(Spacing spacing) const;

 private:
  Dims dims_;
  std::vector<float> data_;
};

/// Cubic block of scalars sampled from a source grid. `scale` is the voxel
/// step of the sampling lattice (1 = native resolution, 4 = the downsampled
/// pathway's lattice).
struct Patch {
  int size = 0;
  int scale = 1;
  Vec3i center;
  std::vector<float> data;

  float at(int i, int j, int k) const {
    return data[i + std::int64_t(size) * (j + std::int64_t(size) * k)];
  }
};

/// Extracts the size^3 block centered at `center`, sampling on a lattice with
/// step `scale` voxels. Out-of-bounds coordinates resolve by mirror
/// reflection. `size` must be odd, `scale` in {1, 4}, `center` in bounds.
Patch extract_patch(const Volume& volume, Vec3i center, int size, int scale);

/// Extracts an arbitrary box [origin, origin + size) on a lattice with step
/// `step`, mirror reflection outside the grid. Sliding-window inference and
/// patch margins are built on this.
std::vector<float> extract_box(const Volume& volume, Vec3i origin, Vec3i size, int step = 1);

/// Resamples onto a grid with the given spacing covering the same physical
/// extent. New dims = round(old_dims * old_spacing / new_spacing), at least 1
/// per axis. Trilinear interpolation; resampling to the source spacing is the
/// identity.
Volume resample_trilinear(const Volume& volume, Spacing target_spacing);

/// Rotates a scale-1 patch about its center by the given angles in degrees,
/// axes applied x, then y, then z. Values are resampled trilinearly; source
/// coordinates outside the patch mirror-reflect. The caller extracts with
/// enough margin that the voxels it keeps have in-footprint sources.
Patch rotate_patch(const Patch& patch, std::array<double, 3> angles_deg);

/// Dice overlap 2|A^B| / (|A| + |B|) for the voxel sets of `class_id`.
/// Returns 1.0 when both sets are empty.
double dice(const LabelMap& pred, const LabelMap& truth, int class_id);

/// Keeps only the largest 6-connected component of a binary mask. Ties break
/// toward the component whose first voxel has the lowest linear index.
LabelMap largest_component(const LabelMap& mask);

}  // namespace btseg
