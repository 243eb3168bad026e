#pragma once

#include <filesystem>
#include <stdexcept>

#include "btseg/grid.hpp"

namespace btseg {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binary grid format: 8-byte magic "BTVOL001", little-endian u32 nx, ny, nz,
// u32 kind (0 = f32 volume, 1 = u8 labels), 3 x f32 spacing, then raw data in
// linear index order x + nx*(y + ny*z).

void save_volume(const std::filesystem::path& path, const Volume& volume);
Volume load_volume(const std::filesystem::path& path);

/// `num_classes` <= 0 derives the class count as max label + 1 (at least 2).
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path, int num_classes = 0);

}  // namespace btseg
