#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "btseg/autolr.hpp"
#include "btseg/phantom.hpp"
#include "btseg/trainer.hpp"

namespace btseg {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct SplitConfig {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const;
  /// Deterministic counts for n volumes; throws when a nonzero fraction
  /// rounds to zero volumes.
  std::array<int, 3> counts(int n) const;
};

/// Complete declarative description of one experiment. Serializes to JSON
/// with full defaulting; print-config resolves a file to this form.
struct ExperimentConfig {
  std::string name = "experiment";
  PhantomConfig phantom;
  int num_volumes = 20;
  SplitConfig split;
  NetworkSpec network;
  OptimizerConfig optimizer;
  EpochConfig epochs;
  SamplerConfig sampler;
  Schedule schedule;
  bool augment_enabled = true;
  AugmentConfig augment;
  NormalizeConfig normalize;
  int total_epochs = 200;
  std::uint64_t seed = 1;
  int checkpoint_every = 50;
  int inference_region = 16;
  std::string data_dir = "data";
  std::string output_dir = "out";

  void validate() const;
  std::string to_json_text(int indent = 2) const;
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  /// "kidney2class": the two-class sparse setup (batch 20, eta 0.001, boosted
  /// sampling). "multiclass": four classes, batch 40, AutoLR population.
  static ExperimentConfig preset(const std::string& name);
};

struct Dataset {
  std::vector<TrainingImage> train, val, test;
  int num_classes = 2;

  std::span<const TrainingImage> split(const std::string& name) const;
};

/// Writes phantoms, labels, split lists, provenance sidecars, and
/// dataset.json under `dir`. Deterministic in (config, seed).
void generate_dataset(const ExperimentConfig& config, const std::filesystem::path& dir);

/// Loads a generated dataset with intensities normalized for the network.
Dataset load_dataset(const std::filesystem::path& dir, const NormalizeConfig& normalize);

struct TrainOutcome {
  std::vector<MetricsRecord> metrics;  // the winner stream for AutoLR runs
  std::filesystem::path final_checkpoint;
};

/// Trains per the config (single schedule or AutoLR population), writing
/// manifest, metrics, sampler diagnostics, and checkpoints under out_dir.
TrainOutcome run_training(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct EvalRow {
  std::string scan;
  std::vector<double> dice_per_class;
  double mean = 0.0;
};

/// predict_volume per scan, optional largest-component filtering per
/// foreground class, Dice against ground truth. The last row aggregates.
std::vector<EvalRow> evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                         const std::filesystem::path& data_dir,
                                         const std::string& split_name, bool postprocess,
                                         int inference_region,
                                         const NormalizeConfig& normalize);

/// Keeps only the largest connected object of each foreground class; voxels
/// dropped by the filter become background.
LabelMap keep_largest_components(const LabelMap& labels);

struct CompareOptions {
  int seeds = 3;
  double threshold_fraction = 0.9;
  int reference = 0;  // config whose final score defines the threshold
};

struct CompareCurve {
  std::string name;
  std::vector<double> mean, sd;  // per epoch, over seeds
};

struct CompareSummary {
  std::string name;
  double final_mean_dice = 0.0;
  std::int64_t iterations_to_threshold = -1;
};

struct CompareResult {
  std::vector<CompareCurve> curves;
  std::vector<CompareSummary> summary;
  double threshold = 0.0;
  std::int64_t batches_per_epoch = 0;
};

/// Rejects config lists that differ outside a single compared axis (sampler
/// or schedule).
void check_comparable(std::span<const ExperimentConfig> configs);

/// Runs every config over `seeds` derived seeds and aggregates the
/// validation curves; writes comparison.csv and summary.csv under out_dir.
CompareResult run_compare(std::span<const ExperimentConfig> configs, const CompareOptions& options,
                          const std::filesystem::path& out_dir);

}  // namespace btseg
