#include <doctest.h>

#include <array>
#include <cmath>

#include "btseg/sampler.hpp"

using namespace btseg;

namespace {

// A labeled image with the class layout controlled per test.
TrainingImage striped_image(Dims d, int num_classes, Spacing sp = {}) {
  std::vector<float> vol(std::size_t(d.total()));
  std::vector<std::uint8_t> lab(std::size_t(d.total()));
  for (std::int64_t i = 0; i < d.total(); ++i) {
    vol[std::size_t(i)] = float(i % 17) * 0.1f;
    lab[std::size_t(i)] = std::uint8_t(i % num_classes);
  }
  return TrainingImage{Volume(d, sp, std::move(vol)),
                       LabelMap(d, sp, num_classes, std::move(lab))};
}

PatchRequest tiny_request() { return PatchRequest{3, 0, 4, 1}; }

void set_error_everywhere(SamplerState& state, float value) {
  for (ErrorMap& e : state.error_maps) {
    std::vector<float> data(e.data().begin(), e.data().end());
    std::fill(data.begin(), data.end(), value);
    e.set_data(std::move(data));
  }
}

}  // namespace

TEST_CASE("init_sampler sets every error value to 1 and partitions voxels") {
  std::vector<TrainingImage> images;
  images.push_back(striped_image(Dims{8, 8, 8}, 3));
  images.push_back(striped_image(Dims{6, 6, 6}, 3));

  const SamplerState state = init_sampler(images, SamplerConfig{});
  REQUIRE(state.error_maps.size() == 2);
  for (const ErrorMap& e : state.error_maps) {
    for (std::int64_t i = 0; i < e.dims().total(); ++i) CHECK(e[i] == 1.0f);
  }
  for (std::size_t img = 0; img < images.size(); ++img) {
    std::int64_t total = 0;
    for (const auto& idx : state.class_index[img]) total += std::int64_t(idx.size());
    CHECK(total == images[img].labels.dims().total());
    CHECK(state.classes_present[img] == std::vector<int>{0, 1, 2});
  }
}

TEST_CASE("single-class image parks every voxel in that class index") {
  std::vector<TrainingImage> images;
  images.push_back(striped_image(Dims{5, 5, 5}, 2));
  auto lab = std::vector<std::uint8_t>(125, 0);
  images[0].labels = LabelMap(Dims{5, 5, 5}, Spacing{}, 2, std::move(lab));
  const SamplerState state = init_sampler(images, SamplerConfig{});
  CHECK(state.class_index[0][0].size() == 125);
  CHECK(state.class_index[0][1].empty());
  CHECK(state.classes_present[0] == std::vector<int>{0});
}

TEST_CASE("init_sampler rejects mismatched or empty inputs") {
  std::vector<TrainingImage> images;
  images.push_back(striped_image(Dims{4, 4, 4}, 2));
  images[0].labels = LabelMap(Dims{5, 4, 4}, Spacing{}, 2, std::uint8_t(0));
  CHECK_THROWS_AS(init_sampler(images, SamplerConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(init_sampler(std::vector<TrainingImage>{}, SamplerConfig{}),
                  std::invalid_argument);
}

TEST_CASE("fresh error maps accept the first candidate of every slot") {
  std::vector<TrainingImage> images{striped_image(Dims{8, 8, 8}, 2)};
  SamplerState state = init_sampler(images, SamplerConfig{});
  RngStream rng(51);
  const auto batch = sample_batch(state, images, 32, tiny_request(), nullptr, rng);
  CHECK(batch.size() == 32);
  CHECK(state.diagnostics.candidates == 32);
  CHECK(state.diagnostics.accepted == 32);
  CHECK(state.diagnostics.forced == 0);
}

TEST_CASE("acceptance rate follows the error map value") {
  // Criterion: over 10k candidates at constant error p, the empirical rate
  // stays within 3*sqrt(p(1-p)/n) of p.
  std::vector<TrainingImage> images{striped_image(Dims{8, 8, 8}, 2)};
  for (double p : {0.1, 0.3, 0.9}) {
    CAPTURE(p);
    SamplerState state = init_sampler(images, SamplerConfig{});
    set_error_everywhere(state, float(p));
    RngStream rng(52);
    while (state.diagnostics.candidates < 10000) {
      sample_batch(state, images, 16, tiny_request(), nullptr, rng);
    }
    const double n = double(state.diagnostics.candidates);
    const double rate = double(state.diagnostics.accepted) / n;
    const double band = 3.0 * std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(rate - p) < band);
  }
}

TEST_CASE("uniform mode accepts every candidate regardless of error maps") {
  std::vector<TrainingImage> images{striped_image(Dims{8, 8, 8}, 2)};
  SamplerConfig cfg;
  cfg.mode = SamplerMode::Uniform;
  SamplerState state = init_sampler(images, cfg);
  set_error_everywhere(state, 0.0f);
  RngStream rng(53);
  sample_batch(state, images, 200, tiny_request(), nullptr, rng);
  CHECK(state.diagnostics.acceptance_rate() == 1.0);
  CHECK(state.diagnostics.forced == 0);
}

TEST_CASE("always-accept boosted equals uniform under the same seed") {
  std::vector<TrainingImage> images{striped_image(Dims{8, 8, 8}, 3)};
  SamplerConfig boosted;  // error maps start at 1: accepts everything
  SamplerConfig uniform;
  uniform.mode = SamplerMode::Uniform;

  SamplerState sb = init_sampler(images, boosted);
  SamplerState su = init_sampler(images, uniform);
  RngStream rb(54), ru(54);
  const auto bb = sample_batch(sb, images, 25, tiny_request(), nullptr, rb);
  const auto bu = sample_batch(su, images, 25, tiny_request(), nullptr, ru);
  REQUIRE(bb.size() == bu.size());
  for (std::size_t i = 0; i < bb.size(); ++i) {
    CHECK(bb[i].native.center == bu[i].native.center);
    CHECK(bb[i].native.data == bu[i].native.data);
    CHECK(bb[i].targets == bu[i].targets);
  }
}

TEST_CASE("accepted centers are class balanced when error maps are uniform") {
  // Chi-square over the four center classes at 10k samples, df 3, alpha 0.01.
  std::vector<TrainingImage> images{striped_image(Dims{12, 12, 12}, 4)};
  SamplerState state = init_sampler(images, SamplerConfig{});
  RngStream rng(55);
  std::array<std::int64_t, 4> counts{0, 0, 0, 0};
  std::int64_t total = 0;
  while (total < 10000) {
    const auto batch = sample_batch(state, images, 100, tiny_request(), nullptr, rng);
    for (const BatchSample& b : batch) {
      ++counts[b.targets[0]];  // region 1: the target is the center label
      ++total;
    }
  }
  const double expected = double(total) / 4.0;
  double chi2 = 0.0;
  for (std::int64_t c : counts) {
    chi2 += (double(c) - expected) * (double(c) - expected) / expected;
  }
  CHECK(chi2 < 11.345);
}

TEST_CASE("rejection cap forces acceptance and is counted") {
  std::vector<TrainingImage> images{striped_image(Dims{8, 8, 8}, 2)};
  SamplerConfig cfg;
  cfg.error_floor = 1e-4;
  cfg.max_rejections = 3;
  SamplerState state = init_sampler(images, cfg);
  set_error_everywhere(state, 0.0f);
  RngStream rng(56);
  const auto batch = sample_batch(state, images, 10, tiny_request(), nullptr, rng);
  CHECK(batch.size() == 10);  // assembly is total even with hopeless maps
  CHECK(state.diagnostics.forced > 0);
  CHECK(state.diagnostics.candidates <= 10 * 3);
}

TEST_CASE("update_error_maps applies 1 - p_true with clamping") {
  std::vector<TrainingImage> images{striped_image(Dims{4, 4, 4}, 2)};
  SamplerConfig cfg;
  cfg.refresh_fraction = 1.0;
  SamplerState state = init_sampler(images, cfg);

  // Scripted predictor: p(class 0) = 0.75, p(class 1) = 0.25 everywhere.
  const VolumePredictor predict = [](const Volume& v) {
    return std::vector<Volume>{Volume(v.dims(), v.spacing(), 0.75f),
                               Volume(v.dims(), v.spacing(), 0.25f)};
  };
  update_error_maps(state, predict, images);
  const auto& labels = images[0].labels;
  for (std::int64_t i = 0; i < labels.dims().total(); ++i) {
    CHECK(state.error_maps[0][i] == (labels[i] == 0 ? 0.25f : 0.75f));  // exact dyadics
  }

  // A perfect oracle drives the maps to zero; an overconfident one clamps.
  const VolumePredictor oracle = [&](const Volume& v) {
    return std::vector<Volume>{Volume(v.dims(), v.spacing(), 0.0f),
                               Volume(v.dims(), v.spacing(), 1.0f)};
  };
  update_error_maps(state, oracle, images);
  for (std::int64_t i = 0; i < labels.dims().total(); ++i) {
    CHECK(state.error_maps[0][i] == (labels[i] == 1 ? 0.0f : 1.0f));
  }
}

TEST_CASE("refresh walks the training set round robin") {
  std::vector<TrainingImage> images;
  for (int i = 0; i < 8; ++i) images.push_back(striped_image(Dims{4, 4, 4}, 2));
  SamplerConfig cfg;
  cfg.refresh_fraction = 0.25;  // 2 images per call
  SamplerState state = init_sampler(images, cfg);

  std::vector<int> refreshed(8, 0);
  int stamp = 0;
  const VolumePredictor predict = [&](const Volume& v) {
    ++stamp;
    return std::vector<Volume>{Volume(v.dims(), v.spacing(), 1.0f - 0.001f * float(stamp)),
                               Volume(v.dims(), v.spacing(), 0.001f * float(stamp))};
  };
  for (int call = 0; call < 4; ++call) {
    const std::vector<ErrorMap> before = state.error_maps;
    update_error_maps(state, predict, images);
    for (int i = 0; i < 8; ++i) {
      if (!(state.error_maps[std::size_t(i)].data()[0] ==
            before[std::size_t(i)].data()[0])) {
        ++refreshed[std::size_t(i)];
      }
    }
  }
  // ceil(1/f) = 4 calls visit every image exactly once.
  for (int i = 0; i < 8; ++i) CHECK(refreshed[std::size_t(i)] == 1);
  CHECK(state.refresh_cursor == 0);  // wrapped around
}

TEST_CASE("sampler config validation") {
  SamplerConfig cfg;
  cfg.error_floor = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.refresh_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.max_rejections = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
