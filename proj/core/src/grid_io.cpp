#include "btseg/grid_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace btseg {

static_assert(std::endian::native == std::endian::little,
              "grid file I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'B', 'T', 'V', 'O', 'L', '0', '0', '1'};

struct Header {
  std::uint32_t nx, ny, nz, kind;
  float sx, sy, sz;
};

void write_header(std::ofstream& f, const Dims& d, std::uint32_t kind, const Spacing& s) {
  f.write(kMagic, sizeof(kMagic));
  const Header h{std::uint32_t(d.nx), std::uint32_t(d.ny), std::uint32_t(d.nz),
                 kind,                s.x,                 s.y,
                 s.z};
  f.write(reinterpret_cast<const char*>(&h.nx), 4);
  f.write(reinterpret_cast<const char*>(&h.ny), 4);
  f.write(reinterpret_cast<const char*>(&h.nz), 4);
  f.write(reinterpret_cast<const char*>(&h.kind), 4);
  f.write(reinterpret_cast<const char*>(&h.sx), 4);
  f.write(reinterpret_cast<const char*>(&h.sy), 4);
  f.write(reinterpret_cast<const char*>(&h.sz), 4);
}

Header read_header(std::ifstream& f, const std::filesystem::path& path) {
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a BTVOL001 file: " + path.string());
  }
  Header h{};
  f.read(reinterpret_cast<char*>(&h.nx), 4);
  f.read(reinterpret_cast<char*>(&h.ny), 4);
  f.read(reinterpret_cast<char*>(&h.nz), 4);
  f.read(reinterpret_cast<char*>(&h.kind), 4);
  f.read(reinterpret_cast<char*>(&h.sx), 4);
  f.read(reinterpret_cast<char*>(&h.sy), 4);
  f.read(reinterpret_cast<char*>(&h.sz), 4);
  if (!f) throw IoError("truncated header: " + path.string());
  return h;
}

}  // namespace

void save_volume(const std::filesystem::path& path, const Volume& volume) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  write_header(f, volume.dims(), 0, volume.spacing());
  const auto data = volume.data();
  f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * 4));
  if (!f) throw IoError("write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  const Header h = read_header(f, path);
  if (h.kind != 0) throw IoError("expected a f32 volume (kind 0): " + path.string());
  const Dims d{int(h.nx), int(h.ny), int(h.nz)};
  std::vector<float> data(static_cast<std::size_t>(d.total()));
  f.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * 4));
  if (!f) throw IoError("truncated data: " + path.string());
  return Volume(d, Spacing{h.sx, h.sy, h.sz}, std::move(data));
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  write_header(f, labels.dims(), 1, labels.spacing());
  const auto data = labels.data();
  f.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

LabelMap load_labels(const std::filesystem::path& path, int num_classes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  const Header h = read_header(f, path);
  if (h.kind != 1) throw IoError("expected a u8 label map (kind 1): " + path.string());
  const Dims d{int(h.nx), int(h.ny), int(h.nz)};
  std::vector<std::uint8_t> data(static_cast<std::size_t>(d.total()));
  f.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size()));
  if (!f) throw IoError("truncated data: " + path.string());
  if (num_classes <= 0) {
    num_classes = std::max<int>(2, int(*std::max_element(data.begin(), data.end())) + 1);
  }
  return LabelMap(d, Spacing{h.sx, h.sy, h.sz}, num_classes, std::move(data));
}

}  // namespace btseg
