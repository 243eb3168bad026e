#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "btseg/net.hpp"
#include "btseg/optimizer.hpp"

namespace btseg {

/// One run of the population: initial rate, modulating factor, and the id
/// used to derive its rng streams (defaults to the run index; tests can give
/// several runs the same stream).
struct RunSetup {
  double initial_eta = 0.01;
  double lambda = 1.0;
  std::optional<std::uint64_t> stream_id;
};

struct PopulationConfig {
  // Appendix configuration: explore up, hold, explore down.
  std::vector<RunSetup> runs{{0.05, 2.0, {}}, {0.01, 1.0, {}}, {0.005, 0.5, {}}};
  /// Validation period in epochs (the step length and the per-period epoch
  /// count are one parameter).
  int period = 50;
  int warmup_epochs = 10;
  /// When set, evolve zeroes the spawned runs' momentum instead of cloning
  /// the winner's.
  bool reset_momentum = false;

  void validate() const;
};

enum class ScheduleKind { Constant, StepDecay, Piecewise, AutoLR };

/// Learning-rate schedule. Every variant answers a target rate per global
/// epoch; the effective rate adds the linear warm-up.
struct Schedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double eta = 0.001;  // Constant
  struct {
    double eta0 = 0.1;
    double decay = 0.5;
    int step_epochs = 100;
  } step;                                        // StepDecay
  std::vector<std::pair<int, double>> table;     // Piecewise: (start_epoch, eta)
  PopulationConfig population;                   // AutoLR
  int warmup_epochs = 10;

  void validate() const;
  /// Target rate before warm-up. Not defined for the AutoLR variant.
  double target_eta(int global_epoch) const;
  /// Epochs since the target rate last changed value, derived analytically.
  int epochs_since_change(int global_epoch) const;
};

/// min(1, (epochs_since_change + 1) / W): epoch 0 after a change runs at
/// eta/W, never 0; the ramp meets the target exactly at W.
double warmup_scale(int epochs_since_lr_change, int warmup_epochs);

double effective_lr(const Schedule& schedule, int global_epoch, int epochs_since_lr_change);
double effective_lr(const Schedule& schedule, int global_epoch);

/// Per-run state: current rate, modulating factor, model, momentum, and the
/// validation vector of the current period.
struct RunState {
  int run_id = 0;
  double eta = 0.0;
  double lambda = 1.0;
  std::uint64_t stream_id = 0;
  Network<float> net;
  OptimizerState<float> opt;
  std::vector<double> scores;  // v_i
};

/// Appends a validation score. Rejects non-finite scores and past-the-period
/// overflow.
void record_validation(RunState& run, int epoch_in_period, int period, double score);

/// Index of the run whose maximum recorded score is largest; ties break
/// toward the smallest eta, then the smallest run_id.
int select_best(std::span<const RunState> population);

/// Respawns the population from the winner: every run's weights and momentum
/// become copies of the winner's, eta_i = eta* x lambda_i, score vectors
/// clear. Warm-up re-arming is the driver's business (it re-arms only runs
/// whose rate actually changed value).
void evolve(std::vector<RunState>& population, int best_index, const PopulationConfig& config);

/// The per-epoch trainer the driver calls: trains `run` for one epoch at the
/// effective rate and returns the epoch's validation score.
struct AutoLRHooks {
  std::function<double(RunState& run, int global_epoch, double eta)> train_epoch;
  std::function<void(int period, int winner, double eta_star)> on_period_end;  // optional
};

struct AutoLRResult {
  std::vector<std::vector<std::vector<double>>> scores;  // [period][run][epoch]
  std::vector<std::vector<std::vector<double>>> etas;    // effective rates, same shape
  std::vector<std::vector<double>> target_rates;         // [period][run]
  std::vector<int> winners;                              // per period
  int final_best = -1;
};

/// Algorithm 2 driver over a prebuilt population. total_epochs must be a
/// multiple of the period. Runs train sequentially within a period; all
/// cross-run coupling happens at the period boundary.
AutoLRResult run_autolr(std::vector<RunState>& population, const PopulationConfig& config,
                        int total_epochs, const AutoLRHooks& hooks);

}  // namespace btseg
