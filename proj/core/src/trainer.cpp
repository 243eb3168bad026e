#include "btseg/trainer.hpp"

#include <cmath>
#include <string>

namespace btseg {

Prediction predict_volume(const Network<float>& net, const Volume& volume, int region, int jobs) {
  if (region < 1) throw std::invalid_argument("inference region must be >= 1");
  const Dims& d = volume.dims();
  const int classes = net.spec().num_classes;

  std::vector<std::vector<float>> probs(classes);
  for (auto& p : probs) p.resize(std::size_t(d.total()));

  struct Tile {
    Vec3i origin;
    Vec3i size;
  };
  std::vector<Tile> tiles;
  for (int z = 0; z < d.nz; z += region) {
    for (int y = 0; y < d.ny; y += region) {
      for (int x = 0; x < d.nx; x += region) {
        tiles.push_back(Tile{{x, y, z},
                             {std::min(region, d.nx - x), std::min(region, d.ny - y),
                              std::min(region, d.nz - z)}});
      }
    }
  }

  parallel_for(
      std::int64_t(tiles.size()),
      [&](std::int64_t t) {
        const Tile& tile = tiles[std::size_t(t)];
        const std::vector<float> out = infer_region(net, volume, tile.origin, tile.size);
        const std::int64_t plane = std::int64_t(tile.size.x) * tile.size.y * tile.size.z;
        for (int c = 0; c < classes; ++c) {
          const float* src = out.data() + c * plane;
          std::int64_t o = 0;
          for (int z = 0; z < tile.size.z; ++z) {
            for (int y = 0; y < tile.size.y; ++y) {
              const std::int64_t row = d.index(tile.origin.x, tile.origin.y + y, tile.origin.z + z);
              for (int x = 0; x < tile.size.x; ++x) probs[c][row + x] = src[o++];
            }
          }
        }
      },
      jobs);

  std::vector<std::uint8_t> labels(std::size_t(d.total()), 0);
  for (std::int64_t i = 0; i < d.total(); ++i) {
    int best = 0;
    float best_p = probs[0][i];
    for (int c = 1; c < classes; ++c) {
      if (probs[c][i] > best_p) {
        best_p = probs[c][i];
        best = c;
      }
    }
    labels[i] = std::uint8_t(best);
  }

  Prediction pred;
  pred.class_probs.reserve(classes);
  for (int c = 0; c < classes; ++c) {
    pred.class_probs.emplace_back(d, volume.spacing(), std::move(probs[c]));
  }
  pred.labels = LabelMap(d, volume.spacing(), classes, std::move(labels));
  return pred;
}

ValidationScores validate(const Network<float>& net, std::span<const TrainingImage> scans,
                          int region, int jobs) {
  if (scans.empty()) throw std::invalid_argument("validate: empty validation set");
  const int classes = net.spec().num_classes;

  ValidationScores scores;
  scores.per_class.assign(std::size_t(classes - 1), 0.0);
  for (const TrainingImage& scan : scans) {
    const Prediction pred = predict_volume(net, scan.volume, region, jobs);
    for (int c = 1; c < classes; ++c) {
      scores.per_class[std::size_t(c - 1)] += dice(pred.labels, scan.labels, c);
    }
  }
  double sum = 0.0;
  for (double& s : scores.per_class) {
    s /= double(scans.size());
    sum += s;
  }
  scores.mean = sum / double(classes - 1);
  return scores;
}

double train_epoch(Network<float>& net, OptimizerState<float>& opt, SamplerState& sampler,
                   std::span<const TrainingImage> images, double eta,
                   const OptimizerConfig& opt_config, const EpochConfig& config,
                   const PatchRequest& request, const AugmentConfig* aug, RngStream& rng) {
  config.validate();
  const std::vector<std::uint8_t> mask = net.decay_mask();

  double loss_sum = 0.0;
  for (int b = 0; b < config.batches_per_epoch; ++b) {
    const std::vector<BatchSample> batch =
        sample_batch(sampler, images, config.batch_size, request, aug, rng);
    const ForwardResult<float> fwd = forward(net, batch, Mode::Train, &rng);
    const float loss = cross_entropy(fwd, batch);
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss at batch " + std::to_string(b) +
                          ": training aborted");
    }
    loss_sum += loss;
    const std::vector<float> grad = backward(net, fwd, batch);
    sgd_nesterov_step(net, opt, std::span<const float>(grad), float(eta), opt_config, mask);
  }
  return loss_sum / double(config.batches_per_epoch);
}

}  // namespace btseg
