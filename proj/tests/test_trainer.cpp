#include <doctest.h>

#include <cmath>
#include <limits>

#include "btseg/phantom.hpp"
#include "btseg/trainer.hpp"

using namespace btseg;

namespace {

NetworkSpec scalar_spec() {
  NetworkSpec spec;
  spec.native.layers = {{LayerKind::Conv3, 1, 0}};
  spec.hidden = {};
  spec.dropout = 0.0;
  spec.num_classes = 2;
  return spec;
}

// Predicts class 1 exactly where the center voxel is positive: a
// center-pass-through conv and a steep classifier margin.
Network<float> threshold_net() {
  const NetworkSpec spec = scalar_spec();
  std::vector<float> w(spec.param_count(), 0.0f);
  w[13] = 1.0f;   // conv center tap
  w[28] = 0.0f;   // classifier weight, class 0
  w[29] = 100.0f; // classifier weight, class 1
  w[30] = 0.0f;   // bias class 0
  w[31] = -1.0f;  // bias class 1
  return Network<float>(spec, std::move(w));
}

Volume pattern_volume(Dims d, const std::vector<std::int64_t>& positive) {
  std::vector<float> data(std::size_t(d.total()), -1.0f);
  for (std::int64_t i : positive) data[std::size_t(i)] = 1.0f;
  return Volume(d, Spacing{}, std::move(data));
}

LabelMap labels_from(Dims d, const std::vector<std::int64_t>& ones) {
  std::vector<std::uint8_t> data(std::size_t(d.total()), 0);
  for (std::int64_t i : ones) data[std::size_t(i)] = 1;
  return LabelMap(d, Spacing{}, 2, std::move(data));
}

}  // namespace

TEST_CASE("nesterov step hand example") {
  const NetworkSpec spec = scalar_spec();
  std::vector<double> w(spec.param_count(), 0.0);
  w[0] = 1.0;
  Network<double> net(spec, std::move(w));
  OptimizerState<double> state = OptimizerState<double>::zeros(net.param_count());
  std::vector<double> grad(net.param_count(), 0.0);
  grad[0] = 0.5;
  const std::vector<std::uint8_t> mask(net.param_count(), 1);

  OptimizerConfig cfg;
  cfg.momentum = 0.8;
  cfg.weight_decay = 0.0;
  sgd_nesterov_step<double>(net, state, grad, 0.1, cfg, mask);

  CHECK(state.velocity[0] == doctest::Approx(-0.05).epsilon(1e-15));
  CHECK(net.weights()[0] == doctest::Approx(0.91).epsilon(1e-15));
}

TEST_CASE("momentum-free step is plain SGD, bitwise") {
  const NetworkSpec spec = scalar_spec();
  Network<double> net = glorot_init<double>(spec, 31);
  const std::vector<double> before(net.weights().begin(), net.weights().end());
  OptimizerState<double> state = OptimizerState<double>::zeros(net.param_count());
  RngStream rng(32);
  std::vector<double> grad(net.param_count());
  for (auto& g : grad) g = rng.uniform(-1.0, 1.0);
  const std::vector<std::uint8_t> mask(net.param_count(), 1);

  OptimizerConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  const double eta = 0.01;
  sgd_nesterov_step<double>(net, state, grad, eta, cfg, mask);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double step = eta * grad[i];
    CHECK(net.weights()[i] == before[i] - step);
  }
}

TEST_CASE("zero learning rate leaves fresh weights unchanged") {
  const NetworkSpec spec = scalar_spec();
  Network<double> net = glorot_init<double>(spec, 33);
  const std::vector<double> before(net.weights().begin(), net.weights().end());
  OptimizerState<double> state = OptimizerState<double>::zeros(net.param_count());
  std::vector<double> grad(net.param_count(), 0.25);
  const std::vector<std::uint8_t> mask(net.param_count(), 1);

  OptimizerConfig cfg;
  sgd_nesterov_step<double>(net, state, grad, 0.0, cfg, mask);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(net.weights()[i] == before[i]);
    CHECK(state.velocity[i] == 0.0);
  }
}

TEST_CASE("weight decay skips masked-out parameters") {
  const NetworkSpec spec = scalar_spec();
  Network<double> net = glorot_init<double>(spec, 34);
  const std::vector<double> before(net.weights().begin(), net.weights().end());
  OptimizerState<double> state = OptimizerState<double>::zeros(net.param_count());
  const std::vector<double> grad(net.param_count(), 0.0);
  const std::vector<std::uint8_t> mask = net.decay_mask();

  OptimizerConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.1;
  sgd_nesterov_step<double>(net, state, std::span<const double>(grad), 0.5, cfg, mask);
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (mask[i]) {
      CHECK(net.weights()[i] == doctest::Approx(before[i] * (1.0 - 0.5 * 0.1)));
    } else {
      CHECK(net.weights()[i] == before[i]);  // the classifier layer is exempt
    }
  }
}

TEST_CASE("classifier layer is the exempt span of the decay mask") {
  const NetworkSpec spec = scalar_spec();
  const Network<float> net = glorot_init<float>(spec, 35);
  const auto mask = net.decay_mask();
  // conv unit: 27 weights + 1 bias decay; classifier 1x1 (1->2): 2 weights +
  // 2 biases exempt.
  REQUIRE(mask.size() == 32);
  for (std::size_t i = 0; i < 28; ++i) CHECK(mask[i] == 1);
  for (std::size_t i = 28; i < 32; ++i) CHECK(mask[i] == 0);
}

TEST_CASE("non-finite gradients abort training") {
  const NetworkSpec spec = scalar_spec();
  Network<double> net = glorot_init<double>(spec, 36);
  OptimizerState<double> state = OptimizerState<double>::zeros(net.param_count());
  std::vector<double> grad(net.param_count(), 0.0);
  grad[5] = std::numeric_limits<double>::quiet_NaN();
  const std::vector<std::uint8_t> mask(net.param_count(), 1);
  CHECK_THROWS_AS(
      sgd_nesterov_step<double>(net, state, std::span<const double>(grad), 0.1, OptimizerConfig{},
                                mask),
      TrainingError);
}

TEST_CASE("loss on a repeated batch is near-monotone under small steps") {
  NetworkSpec spec;
  spec.native.layers = {{LayerKind::Conv3, 4, 0}};
  spec.hidden = {8};
  spec.dropout = 0.0;
  spec.num_classes = 2;
  Network<float> net = glorot_init<float>(spec, 37);
  OptimizerState<float> state = OptimizerState<float>::zeros(net.param_count());
  const std::vector<std::uint8_t> mask(net.param_count(), 1);

  RngStream rng(38);
  std::vector<BatchSample> batch;
  for (int s = 0; s < 8; ++s) {
    BatchSample b;
    b.native.size = 3;
    b.native.scale = 1;
    b.native.data.resize(27);
    for (auto& v : b.native.data) v = float(rng.uniform(-1.0, 1.0));
    b.targets = {std::uint8_t(rng.uniform_int(2))};
    batch.push_back(std::move(b));
  }

  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  int increases = 0;
  float prev = std::numeric_limits<float>::infinity();
  for (int step = 0; step < 50; ++step) {
    const auto fwd = forward(net, batch, Mode::Train);
    const float loss = cross_entropy(fwd, batch);
    if (loss > prev) ++increases;
    prev = loss;
    const auto grad = backward(net, fwd, batch);
    sgd_nesterov_step(net, state, std::span<const float>(grad), 1e-3f, cfg, mask);
  }
  CHECK(increases <= 5);
}

TEST_CASE("rigged constant predictor labels everything class 0") {
  NetworkSpec spec = scalar_spec();
  std::vector<float> w(spec.param_count(), 0.0f);
  w[30] = 5.0f;  // classifier bias, class 0
  const Network<float> net(spec, std::move(w));

  RngStream rng(39);
  std::vector<float> data(8 * 7 * 6);
  for (auto& v : data) v = float(rng.uniform(-1.0, 1.0));
  const Volume vol(Dims{8, 7, 6}, Spacing{}, std::move(data));

  const Prediction pred = predict_volume(net, vol, 4);
  for (std::int64_t i = 0; i < vol.dims().total(); ++i) {
    CHECK(pred.labels[i] == 0);
    CHECK(std::abs(pred.class_probs[0][i] + pred.class_probs[1][i] - 1.0f) < 1e-6f);
  }
}

TEST_CASE("predict_volume is independent of the tile size and order") {
  NetworkSpec spec;
  spec.native.layers = {{LayerKind::Conv3, 3, 0}, {LayerKind::Conv3, 4, 0}};
  spec.low.layers = {{LayerKind::Conv3, 3, 0}};
  spec.hidden = {6};
  spec.dropout = 0.5;  // inference is eval mode, dropout must not fire
  spec.num_classes = 3;
  const Network<float> net = glorot_init<float>(spec, 40);

  RngStream rng(41);
  std::vector<float> data(12 * 12 * 12);
  for (auto& v : data) v = float(rng.uniform(-1.0, 1.0));
  const Volume vol(Dims{12, 12, 12}, Spacing{}, std::move(data));

  const Prediction a = predict_volume(net, vol, 1, 1);
  const Prediction b = predict_volume(net, vol, 2, 1);
  const Prediction c = predict_volume(net, vol, 5, 2);
  const Prediction d = predict_volume(net, vol, 16, 2);
  for (int cls = 0; cls < 3; ++cls) {
    for (std::int64_t i = 0; i < vol.dims().total(); ++i) {
      CHECK(a.class_probs[std::size_t(cls)][i] == b.class_probs[std::size_t(cls)][i]);
      CHECK(a.class_probs[std::size_t(cls)][i] == c.class_probs[std::size_t(cls)][i]);
      CHECK(a.class_probs[std::size_t(cls)][i] == d.class_probs[std::size_t(cls)][i]);
    }
  }
}

TEST_CASE("volume inference equals per-sample forward at each center") {
  NetworkSpec spec;
  spec.native.layers = {{LayerKind::Conv3, 3, 0}};
  spec.low.layers = {{LayerKind::Conv3, 2, 0}};
  spec.hidden = {5};
  spec.dropout = 0.0;
  spec.num_classes = 2;
  const Network<float> net = glorot_init<float>(spec, 42);

  RngStream rng(43);
  std::vector<float> data(10 * 10 * 10);
  for (auto& v : data) v = float(rng.uniform(-1.0, 1.0));
  const Volume vol(Dims{10, 10, 10}, Spacing{}, std::move(data));

  const Prediction pred = predict_volume(net, vol, 4);
  for (Vec3i c : {Vec3i{5, 5, 5}, Vec3i{0, 0, 0}, Vec3i{9, 3, 7}}) {
    BatchSample s;
    s.native = extract_patch(vol, c, spec.native_input_size(), 1);
    s.low = extract_patch(vol, c, spec.low_input_size(), 4);
    s.targets = {0};
    const auto out = forward(net, std::vector<BatchSample>{s}, Mode::Eval);
    const std::int64_t i = vol.dims().index(c.x, c.y, c.z);
    CHECK(out.prob(0, 0, 0) == pred.class_probs[0][i]);
    CHECK(out.prob(0, 1, 0) == pred.class_probs[1][i]);
  }
}

TEST_CASE("validate averages per-class dice over scans") {
  const Network<float> net = threshold_net();
  const Dims d{6, 6, 6};

  // The net predicts class 1 exactly on the positive voxels (set X, |X|=10).
  std::vector<std::int64_t> x_set;
  for (std::int64_t i = 40; i < 50; ++i) x_set.push_back(i);

  // Scan 1 truth overlaps X in 8 of 10 -> dice 0.8; scan 2 in 6 -> 0.6.
  std::vector<std::int64_t> truth1(x_set.begin(), x_set.begin() + 8);
  truth1.push_back(100);
  truth1.push_back(101);
  std::vector<std::int64_t> truth2(x_set.begin(), x_set.begin() + 6);
  for (std::int64_t i = 110; i < 114; ++i) truth2.push_back(i);

  std::vector<TrainingImage> scans;
  scans.push_back(TrainingImage{pattern_volume(d, x_set), labels_from(d, truth1)});
  scans.push_back(TrainingImage{pattern_volume(d, x_set), labels_from(d, truth2)});

  const ValidationScores scores = validate(net, scans, 4);
  REQUIRE(scores.per_class.size() == 1);
  CHECK(scores.per_class[0] == doctest::Approx(0.7));
  CHECK(scores.mean == doctest::Approx(0.7));
}

TEST_CASE("oracle predictor scores dice 1, constant predictor scores 0") {
  const Dims d{6, 6, 6};
  std::vector<std::int64_t> x_set{7, 8, 9, 77, 78};
  std::vector<TrainingImage> scans;
  scans.push_back(TrainingImage{pattern_volume(d, x_set), labels_from(d, x_set)});

  CHECK(validate(threshold_net(), scans, 4).mean == doctest::Approx(1.0));

  NetworkSpec spec = scalar_spec();
  std::vector<float> w(spec.param_count(), 0.0f);
  w[30] = 5.0f;  // always class 0
  CHECK(validate(Network<float>(spec, std::move(w)), scans, 4).mean == doctest::Approx(0.0));
}

TEST_CASE("train_epoch draws exactly batches_per_epoch batches") {
  PhantomConfig pc;
  pc.dims = Dims{16, 16, 16};
  pc.num_classes = 2;
  pc.foreground_fraction_target = 0.02;
  pc.blobs_per_class = 1;
  pc.distractor_count = 0;
  pc.intensity_means = {0.0, 200.0};
  pc.noise_sigma = 10.0;
  pc.seed = 44;
  auto [vol, lab] = generate_phantom(pc);
  std::vector<TrainingImage> images;
  images.push_back(TrainingImage{std::move(vol), std::move(lab)});

  NetworkSpec spec = scalar_spec();
  Network<float> net = glorot_init<float>(spec, 45);
  OptimizerState<float> opt = OptimizerState<float>::zeros(net.param_count());

  SamplerConfig sc;
  sc.mode = SamplerMode::Uniform;
  SamplerState sampler = init_sampler(images, sc);

  EpochConfig ec{7, 5};
  RngStream rng(46);
  const double loss = train_epoch(net, opt, sampler, images, 0.001, OptimizerConfig{}, ec,
                                  spec.patch_request(), nullptr, rng);
  CHECK(std::isfinite(loss));
  // Uniform mode accepts every candidate, so candidates == one per slot.
  CHECK(sampler.diagnostics.candidates == 7 * 5);
  CHECK(sampler.diagnostics.accepted == 7 * 5);
}
