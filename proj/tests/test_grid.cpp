#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "btseg/grid.hpp"
#include "btseg/grid_io.hpp"
#include "btseg/rng.hpp"

using namespace btseg;

namespace {

// Independent mirror oracle: walk the index back into range one reflection at
// a time instead of using the closed form.
int mirror_oracle(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

Volume ramp_volume(int nx, Spacing sp = {}) {
  std::vector<float> data(static_cast<std::size_t>(nx));
  for (int i = 0; i < nx; ++i) data[std::size_t(i)] = float(i);
  return Volume(Dims{nx, 1, 1}, sp, std::move(data));
}

Volume random_volume(Dims d, RngStream& rng) {
  std::vector<float> data(std::size_t(d.total()));
  for (auto& v : data) v = float(rng.uniform(-1.0, 1.0));
  return Volume(d, Spacing{}, std::move(data));
}

LabelMap random_mask(Dims d, double p, RngStream& rng) {
  std::vector<std::uint8_t> data(std::size_t(d.total()));
  for (auto& v : data) v = rng.uniform() < p ? 1 : 0;
  return LabelMap(d, Spacing{}, 2, std::move(data));
}

// Brute-force component oracle: repeated whole-grid sweeps propagating the
// minimum seed index, no explicit stack.
std::vector<int> flood_labels_oracle(const LabelMap& mask) {
  const Dims& d = mask.dims();
  std::vector<int> label(std::size_t(d.total()), -1);
  for (std::int64_t i = 0; i < d.total(); ++i) {
    if (mask[i] == 1) label[std::size_t(i)] = int(i);
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (int z = 0; z < d.nz; ++z) {
      for (int y = 0; y < d.ny; ++y) {
        for (int x = 0; x < d.nx; ++x) {
          const std::int64_t i = d.index(x, y, z);
          if (label[std::size_t(i)] < 0) continue;
          const auto relax = [&](int xx, int yy, int zz) {
            if (!d.contains(xx, yy, zz)) return;
            const std::int64_t j = d.index(xx, yy, zz);
            if (label[std::size_t(j)] >= 0 &&
                label[std::size_t(j)] < label[std::size_t(i)]) {
              label[std::size_t(i)] = label[std::size_t(j)];
              changed = true;
            }
          };
          relax(x - 1, y, z);
          relax(x + 1, y, z);
          relax(x, y - 1, z);
          relax(x, y + 1, z);
          relax(x, y, z - 1);
          relax(x, y, z + 1);
        }
      }
    }
  }
  return label;
}

}  // namespace

TEST_CASE("mirror_index matches the reflection oracle") {
  for (int n : {1, 2, 3, 5, 8}) {
    for (int i = -3 * n; i <= 3 * n; ++i) {
      CAPTURE(i);
      CAPTURE(n);
      CHECK(mirror_index(i, n) == mirror_oracle(i, n));
    }
  }
  CHECK(mirror_index(-1, 4) == 1);
  CHECK(mirror_index(4, 4) == 2);
}

TEST_CASE("volume invariants") {
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, Spacing{}, std::vector<float>(7)), std::invalid_argument);
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, Spacing{1, 0, 1}, 0.0f), std::invalid_argument);
  std::vector<float> bad(8, 0.0f);
  bad[3] = NAN;
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, Spacing{}, bad), std::invalid_argument);
}

TEST_CASE("error map rejects values outside [0,1]") {
  CHECK_THROWS_AS(ErrorMap(Dims{2, 2, 2}, 1.5f), std::invalid_argument);
  ErrorMap e(Dims{2, 2, 2}, 1.0f);
  std::vector<float> bad(8, 0.5f);
  bad[0] = -0.01f;
  CHECK_THROWS_AS(e.set_data(bad), std::invalid_argument);
  std::vector<float> good(8, 0.25f);
  e.set_data(good);
  CHECK(e.mean() == doctest::Approx(0.25));
}

TEST_CASE("extract_patch interior is the exact neighborhood") {
  RngStream rng(7);
  const Volume v = random_volume(Dims{6, 5, 7}, rng);
  const Patch p = extract_patch(v, {3, 2, 3}, 3, 1);
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 3; ++i) {
        CHECK(p.at(i, j, k) == v.at(2 + i, 1 + j, 2 + k));
      }
    }
  }
}

TEST_CASE("extract_patch at a corner mirror-reflects") {
  RngStream rng(8);
  const Volume v = random_volume(Dims{4, 4, 4}, rng);
  const Patch p = extract_patch(v, {0, 0, 0}, 3, 1);
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 3; ++i) {
        const int x = mirror_oracle(i - 1, 4);
        const int y = mirror_oracle(j - 1, 4);
        const int z = mirror_oracle(k - 1, 4);
        CHECK(p.at(i, j, k) == v.at(x, y, z));
      }
    }
  }
  // index -1 maps to index 1
  CHECK(p.at(0, 1, 1) == v.at(1, 0, 0));
}

TEST_CASE("extract_patch degenerate and scaled forms") {
  RngStream rng(9);
  const Volume v = random_volume(Dims{9, 9, 9}, rng);
  CHECK(extract_patch(v, {4, 4, 4}, 1, 1).data[0] == v.at(4, 4, 4));
  CHECK(extract_patch(v, {4, 4, 4}, 1, 4).data[0] == v.at(4, 4, 4));

  const Patch p = extract_patch(v, {4, 4, 4}, 3, 4);
  CHECK(p.at(1, 1, 1) == v.at(4, 4, 4));
  CHECK(p.at(0, 1, 1) == v.at(0, 4, 4));
  CHECK(p.at(2, 1, 1) == v.at(8, 4, 4));

  CHECK_THROWS_AS(extract_patch(v, {9, 4, 4}, 3, 1), std::out_of_range);
  CHECK_THROWS_AS(extract_patch(v, {4, 4, 4}, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(extract_patch(v, {4, 4, 4}, 3, 2), std::invalid_argument);
}

TEST_CASE("extract_patch size 1 everywhere reconstructs the volume") {
  RngStream rng(10);
  const Volume v = random_volume(Dims{4, 3, 5}, rng);
  for (int z = 0; z < 5; ++z) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 4; ++x) {
        CHECK(extract_patch(v, {x, y, z}, 1, 1).data[0] == v.at(x, y, z));
      }
    }
  }
}

TEST_CASE("resample to the source spacing is the identity") {
  RngStream rng(11);
  const Volume v = random_volume(Dims{5, 6, 7}, rng);
  const Volume r = resample_trilinear(v, v.spacing());
  REQUIRE(r.dims() == v.dims());
  for (std::int64_t i = 0; i < v.dims().total(); ++i) CHECK(r[i] == v[i]);
}

TEST_CASE("resample of a linear ramp matches the closed-form interpolant") {
  const Volume v = ramp_volume(16);
  const Volume r = resample_trilinear(v, Spacing{2.0f, 1.0f, 1.0f});
  REQUIRE(r.dims().nx == 8);
  for (int i = 0; i < 8; ++i) {
    // Voxel centers at (i + 0.5) * 2 - 0.5 in source coordinates; the ramp is
    // its own interpolant away from the clamped edges.
    const double coord = (i + 0.5) * 2.0 - 0.5;
    const double expected = std::min(coord, 15.0);
    CHECK(r.at(i, 0, 0) == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("resample of a constant volume is constant at any spacing") {
  const Volume v(Dims{5, 5, 5}, Spacing{1.0f, 1.0f, 1.5f}, 3.25f);
  for (Spacing sp : {Spacing{0.7f, 1.3f, 2.0f}, Spacing{2.0f, 2.0f, 3.0f}}) {
    const Volume r = resample_trilinear(v, sp);
    for (std::int64_t i = 0; i < r.dims().total(); ++i) CHECK(r[i] == 3.25f);
  }
  CHECK_THROWS_AS(resample_trilinear(v, Spacing{0.0f, 1.0f, 1.0f}), std::invalid_argument);
}

TEST_CASE("rotation by zero angles is the identity") {
  RngStream rng(12);
  const Volume v = random_volume(Dims{9, 9, 9}, rng);
  const Patch p = extract_patch(v, {4, 4, 4}, 7, 1);
  const Patch r = rotate_patch(p, {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < p.data.size(); ++i) CHECK(r.data[i] == p.data[i]);
}

TEST_CASE("rotation composed with its inverse recovers a smooth patch") {
  Patch p;
  p.size = 9;
  p.scale = 1;
  p.data.resize(9 * 9 * 9);
  for (int k = 0; k < 9; ++k) {
    for (int j = 0; j < 9; ++j) {
      for (int i = 0; i < 9; ++i) {
        const double r2 = (i - 4.0) * (i - 4.0) + (j - 4.0) * (j - 4.0) + (k - 4.0) * (k - 4.0);
        p.data[std::size_t(i + 9 * (j + 9 * k))] = float(std::exp(-r2 / 18.0) + 0.1 * i);
      }
    }
  }
  const Patch fwd = rotate_patch(p, {90.0, 0.0, 0.0});
  const Patch back = rotate_patch(fwd, {-90.0, 0.0, 0.0});
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    CHECK(back.data[i] == doctest::Approx(p.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("spherically symmetric patches are rotation invariant") {
  // Oracle: evaluate f(radius) on the rotated grid directly; rotation
  // preserves radius, so the expected block is the input itself up to
  // trilinear interpolation error.
  Patch p;
  p.size = 11;
  p.scale = 1;
  p.data.resize(11 * 11 * 11);
  // Wide enough that the trilinear error bound (~0.375 * max|f''|) stays
  // below the asserted 0.02.
  const auto f = [](double r2) { return std::exp(-r2 / 50.0); };
  for (int k = 0; k < 11; ++k) {
    for (int j = 0; j < 11; ++j) {
      for (int i = 0; i < 11; ++i) {
        const double r2 = (i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0) + (k - 5.0) * (k - 5.0);
        p.data[std::size_t(i + 11 * (j + 11 * k))] = float(f(r2));
      }
    }
  }
  for (auto angles : {std::array<double, 3>{10, 4, 4}, std::array<double, 3>{-33, 17, 52}}) {
    const Patch r = rotate_patch(p, angles);
    const int h = 3;  // stay clear of the mirrored corners
    for (int k = 5 - h; k <= 5 + h; ++k) {
      for (int j = 5 - h; j <= 5 + h; ++j) {
        for (int i = 5 - h; i <= 5 + h; ++i) {
          const double r2 =
              (i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0) + (k - 5.0) * (k - 5.0);
          CHECK(std::abs(double(r.data[std::size_t(i + 11 * (j + 11 * k))]) - f(r2)) < 0.02);
        }
      }
    }
  }
}

TEST_CASE("dice hand-computed example") {
  // |A|=6, |B|=4, intersection 3 -> 2*3/10 = 0.6
  std::vector<std::uint8_t> a(27, 0), b(27, 0);
  for (int i = 0; i < 6; ++i) a[std::size_t(i)] = 1;
  for (int i = 3; i < 7; ++i) b[std::size_t(i)] = 1;
  const LabelMap la(Dims{3, 3, 3}, Spacing{}, 2, a);
  const LabelMap lb(Dims{3, 3, 3}, Spacing{}, 2, b);
  CHECK(dice(la, lb, 1) == doctest::Approx(0.6));
}

TEST_CASE("dice conventions and errors") {
  RngStream rng(13);
  const LabelMap a = random_mask(Dims{4, 4, 4}, 0.3, rng);
  CHECK(dice(a, a, 1) == 1.0);
  CHECK(dice(a, a, 0) == 1.0);

  const LabelMap empty(Dims{4, 4, 4}, Spacing{}, 2, std::uint8_t(0));
  CHECK(dice(empty, empty, 1) == 1.0);  // both-empty convention

  std::vector<std::uint8_t> da(8, 0), db(8, 0);
  da[0] = 1;
  db[5] = 1;
  CHECK(dice(LabelMap(Dims{2, 2, 2}, Spacing{}, 2, da), LabelMap(Dims{2, 2, 2}, Spacing{}, 2, db),
             1) == 0.0);

  CHECK_THROWS_AS(dice(a, LabelMap(Dims{3, 3, 3}, Spacing{}, 2, std::uint8_t(0)), 1),
                  std::invalid_argument);
}

TEST_CASE("dice is symmetric") {
  RngStream rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap a = random_mask(Dims{5, 4, 3}, 0.4, rng);
    const LabelMap b = random_mask(Dims{5, 4, 3}, 0.4, rng);
    CHECK(dice(a, b, 1) == dice(b, a, 1));
    CHECK(dice(a, b, 0) == dice(b, a, 0));
  }
}

TEST_CASE("largest_component keeps the bigger of two components") {
  // A 5-voxel bar and a 3-voxel bar, separated.
  std::vector<std::uint8_t> m(std::size_t(8 * 4 * 1), 0);
  const Dims d{8, 4, 1};
  for (int x = 0; x < 5; ++x) m[std::size_t(d.index(x, 0, 0))] = 1;
  for (int x = 0; x < 3; ++x) m[std::size_t(d.index(x, 2, 0))] = 1;
  const LabelMap mask(d, Spacing{}, 2, m);
  const LabelMap kept = largest_component(mask);
  for (int x = 0; x < 8; ++x) {
    CHECK(kept.at(x, 0, 0) == (x < 5 ? 1 : 0));
    CHECK(kept.at(x, 2, 0) == 0);
  }
}

TEST_CASE("largest_component edge cases") {
  const LabelMap empty(Dims{3, 3, 3}, Spacing{}, 2, std::uint8_t(0));
  const LabelMap kept = largest_component(empty);
  for (std::int64_t i = 0; i < 27; ++i) CHECK(kept[i] == 0);

  std::vector<std::uint8_t> single(27, 0);
  single[13] = 1;
  const LabelMap one = largest_component(LabelMap(Dims{3, 3, 3}, Spacing{}, 2, single));
  for (std::int64_t i = 0; i < 27; ++i) CHECK(one[i] == (i == 13 ? 1 : 0));

  std::vector<std::uint8_t> bad(27, 0);
  bad[0] = 2;
  CHECK_THROWS_AS(largest_component(LabelMap(Dims{3, 3, 3}, Spacing{}, 3, bad)),
                  std::invalid_argument);
}

TEST_CASE("largest_component agrees with the flood-fill oracle on random masks") {
  RngStream rng(15);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 4 + int(rng.uniform_int(13));  // up to 16^3
    const Dims d{n, n, n};
    const LabelMap mask = random_mask(d, 0.2 + 0.4 * rng.uniform(), rng);
    const LabelMap kept = largest_component(mask);

    const std::vector<int> oracle = flood_labels_oracle(mask);
    std::set<int> kept_seeds;
    std::int64_t kept_size = 0;
    for (std::int64_t i = 0; i < d.total(); ++i) {
      CHECK(kept[i] <= mask[i]);  // subset of the input
      if (kept[i]) {
        kept_seeds.insert(oracle[std::size_t(i)]);
        ++kept_size;
      }
    }
    if (kept_size > 0) {
      CHECK(kept_seeds.size() == 1);  // output is one oracle component, so connected
      // ... and no oracle component is bigger (earliest seed wins ties).
      std::int64_t max_size = 0;
      int max_seed = -1;
      std::map<int, std::int64_t> by_seed;
      for (std::int64_t i = 0; i < d.total(); ++i) {
        if (oracle[std::size_t(i)] >= 0) ++by_seed[oracle[std::size_t(i)]];
      }
      for (const auto& [seed, size] : by_seed) {
        if (size > max_size) {
          max_size = size;
          max_seed = seed;
        }
      }
      CHECK(kept_size == max_size);
      CHECK(*kept_seeds.begin() == max_seed);
    }
  }
}

TEST_CASE("volume and label file round trips") {
  RngStream rng(16);
  const Volume v = random_volume(Dims{5, 6, 7}, rng);
  const auto dir = std::filesystem::temp_directory_path() / "btseg_grid_io_test";
  std::filesystem::create_directories(dir);

  save_volume(dir / "v.btvol", v);
  const Volume lv = load_volume(dir / "v.btvol");
  CHECK(lv.dims() == v.dims());
  CHECK(lv.spacing() == v.spacing());
  for (std::int64_t i = 0; i < v.dims().total(); ++i) CHECK(lv[i] == v[i]);

  const LabelMap m = random_mask(Dims{5, 6, 7}, 0.5, rng);
  save_labels(dir / "m.btvol", m);
  const LabelMap lm = load_labels(dir / "m.btvol");
  CHECK(lm.dims() == m.dims());
  for (std::int64_t i = 0; i < m.dims().total(); ++i) CHECK(lm[i] == m[i]);

  CHECK_THROWS_AS(load_volume(dir / "m.btvol"), IoError);   // wrong kind
  CHECK_THROWS_AS(load_labels(dir / "v.btvol"), IoError);
  CHECK_THROWS_AS(load_volume(dir / "missing.btvol"), IoError);
  std::filesystem::remove_all(dir);
}
