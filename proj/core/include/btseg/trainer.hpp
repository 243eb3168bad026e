#pragma once

#include <span>
#include <vector>

#include "btseg/optimizer.hpp"
#include "btseg/parallel.hpp"
#include "btseg/sampler.hpp"

namespace btseg {

struct EpochConfig {
  int batches_per_epoch = 100;
  int batch_size = 20;

  void validate() const {
    if (batches_per_epoch <= 0 || batch_size <= 0) {
      throw std::invalid_argument("epoch config values must be positive");
    }
  }
};

/// One per-epoch metrics row. `seconds` stays 0 in the CSV so reruns of the
/// same (config, seed) are byte-identical; wall time goes to the run log.
struct MetricsRecord {
  int epoch = 0;
  std::int64_t iteration = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  std::vector<double> dice_per_class;  // foreground classes 1..K
  double mean_dice = 0.0;
  double seconds = 0.0;
};

struct Prediction {
  std::vector<Volume> class_probs;
  LabelMap labels;
};

/// Sliding-window inference over a normalized volume. The volume is tiled
/// with `region`-sided output boxes (clipped at the far edges), every voxel
/// predicted exactly once; borders use mirror-padded extraction. Tiles are
/// independent, so the result is the same under any tile schedule and any
/// region size.
Prediction predict_volume(const Network<float>& net, const Volume& volume, int region = 16,
                          int jobs = default_jobs());

struct ValidationScores {
  std::vector<double> per_class;  // foreground classes 1..K, averaged over scans
  double mean = 0.0;              // mean over foreground classes
};

/// Per-class Dice per scan, averaged over scans; the mean excludes the
/// background class.
ValidationScores validate(const Network<float>& net, std::span<const TrainingImage> scans,
                          int region = 16, int jobs = default_jobs());

/// Runs exactly `config.batches_per_epoch` batches from the sampler at the
/// given learning rate (schedules change eta at epoch granularity only).
/// Returns the mean batch loss. A non-finite loss or gradient aborts with
/// TrainingError.
double train_epoch(Network<float>& net, OptimizerState<float>& opt, SamplerState& sampler,
                   std::span<const TrainingImage> images, double eta,
                   const OptimizerConfig& opt_config, const EpochConfig& config,
                   const PatchRequest& request, const AugmentConfig* aug, RngStream& rng);

}  // namespace btseg
