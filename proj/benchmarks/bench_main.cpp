#include <benchmark/benchmark.h>

#include "btseg/experiment.hpp"
#include "btseg/phantom.hpp"
#include "btseg/trainer.hpp"

namespace {

using namespace btseg;

NetworkSpec preset_net() {
  return ExperimentConfig::preset("kidney2class").network;
}

Volume random_volume(Dims d, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<float> data(std::size_t(d.total()));
  for (auto& v : data) v = float(rng.uniform(-1.0, 1.0));
  return Volume(d, Spacing{1.0f, 1.0f, 1.5f}, std::move(data));
}

std::pair<Volume, LabelMap> bench_phantom(std::uint64_t seed = 1) {
  PhantomConfig pc;
  pc.dims = Dims{64, 64, 64};
  pc.num_classes = 2;
  pc.foreground_fraction_target = 0.003;
  pc.blobs_per_class = 2;
  pc.distractor_count = 3;
  pc.intensity_means = {0.0, 200.0};
  pc.noise_sigma = 30.0;
  pc.seed = seed;
  return generate_phantom(pc);
}

void BM_GeneratePhantom(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(bench_phantom(++seed));
  }
}
BENCHMARK(BM_GeneratePhantom)->Unit(benchmark::kMillisecond);

void BM_ResampleTrilinear(benchmark::State& state) {
  const Volume v = random_volume(Dims{64, 64, 64}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(resample_trilinear(v, Spacing{1.1f, 0.95f, 1.4f}));
  }
}
BENCHMARK(BM_ResampleTrilinear)->Unit(benchmark::kMillisecond);

void BM_RotatePatch(benchmark::State& state) {
  const Volume v = random_volume(Dims{32, 32, 32}, 3);
  const Patch p = extract_patch(v, {16, 16, 16}, 25, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rotate_patch(p, {7.0, -3.0, 2.0}));
  }
}
BENCHMARK(BM_RotatePatch)->Unit(benchmark::kMicrosecond);

void BM_AugmentSample(benchmark::State& state) {
  auto [vol, lab] = bench_phantom();
  const NormalizeConfig norm;
  const Volume nv = normalize(vol, norm);
  const AugmentConfig cfg;
  const PatchRequest request = preset_net().patch_request();
  RngStream rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(augment(nv, lab, {32, 32, 32}, request, cfg, rng));
  }
}
BENCHMARK(BM_AugmentSample)->Unit(benchmark::kMicrosecond);

void BM_SampleBatch20(benchmark::State& state) {
  auto [vol, lab] = bench_phantom();
  const NormalizeConfig norm;
  std::vector<TrainingImage> images;
  images.push_back(TrainingImage{normalize(vol, norm), lab});
  SamplerState sampler = init_sampler(images, SamplerConfig{});
  const AugmentConfig aug;
  const PatchRequest request = preset_net().patch_request();
  RngStream rng(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_batch(sampler, images, 20, request, &aug, rng));
  }
}
BENCHMARK(BM_SampleBatch20)->Unit(benchmark::kMillisecond);

void BM_TrainBatch20(benchmark::State& state) {
  auto [vol, lab] = bench_phantom();
  const NormalizeConfig norm;
  std::vector<TrainingImage> images;
  images.push_back(TrainingImage{normalize(vol, norm), lab});
  SamplerState sampler = init_sampler(images, SamplerConfig{});
  const AugmentConfig aug;
  const NetworkSpec spec = preset_net();
  Network<float> net = glorot_init<float>(spec, 6);
  OptimizerState<float> opt = OptimizerState<float>::zeros(net.param_count());
  const auto mask = net.decay_mask();
  RngStream rng(7);
  for (auto _ : state) {
    const auto batch = sample_batch(sampler, images, 20, spec.patch_request(), &aug, rng);
    const auto fwd = forward(net, batch, Mode::Train, &rng);
    const auto grad = backward(net, fwd, batch);
    sgd_nesterov_step(net, opt, std::span<const float>(grad), 0.001f, OptimizerConfig{}, mask);
  }
}
BENCHMARK(BM_TrainBatch20)->Unit(benchmark::kMillisecond);

void BM_PredictVolume64(benchmark::State& state) {
  auto [vol, lab] = bench_phantom();
  const NormalizeConfig norm;
  const Volume nv = normalize(vol, norm);
  const Network<float> net = glorot_init<float>(preset_net(), 8);
  const int region = int(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict_volume(net, nv, region));
  }
}
BENCHMARK(BM_PredictVolume64)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Dice(benchmark::State& state) {
  auto [vol, lab] = bench_phantom(9);
  auto [vol2, lab2] = bench_phantom(10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dice(lab, lab2, 1));
  }
}
BENCHMARK(BM_Dice)->Unit(benchmark::kMicrosecond);

void BM_LargestComponent(benchmark::State& state) {
  RngStream rng(11);
  std::vector<std::uint8_t> mask(64 * 64 * 64);
  for (auto& m : mask) m = rng.uniform() < 0.4 ? 1 : 0;
  const LabelMap lm(Dims{64, 64, 64}, Spacing{}, 2, mask);
  for (auto _ : state) {
    benchmark::DoNotOptimize(largest_component(lm));
  }
}
BENCHMARK(BM_LargestComponent)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
