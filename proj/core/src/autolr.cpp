#include "btseg/autolr.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace btseg {

void PopulationConfig::validate() const {
  if (runs.empty()) throw std::invalid_argument("population must have at least one run");
  std::set<double> lambdas;
  for (const RunSetup& r : runs) {
    if (!(r.initial_eta > 0.0)) throw std::invalid_argument("initial eta must be > 0");
    if (!(r.lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
    lambdas.insert(r.lambda);
  }
  if (runs.size() >= 2 && lambdas.size() != runs.size()) {
    throw std::invalid_argument("modulating factors must be distinct");
  }
  if (period < 1) throw std::invalid_argument("period must be >= 1");
  if (warmup_epochs < 1) throw std::invalid_argument("warmup_epochs must be >= 1");
  if (period <= warmup_epochs) throw std::invalid_argument("period must exceed the warm-up");
}

void record_validation(RunState& run, int epoch_in_period, int period, double score) {
  if (!std::isfinite(score)) {
    throw std::invalid_argument("validation score must be finite");
  }
  if (epoch_in_period >= period || int(run.scores.size()) >= period) {
    throw std::logic_error("validation vector overflow: period already full");
  }
  if (int(run.scores.size()) != epoch_in_period) {
    throw std::logic_error("validation scores must be recorded in epoch order");
  }
  run.scores.push_back(score);
}

int select_best(std::span<const RunState> population) {
  if (population.empty()) throw std::logic_error("select_best: empty population");
  int best = -1;
  double best_max = 0.0;
  for (int i = 0; i < int(population.size()); ++i) {
    const RunState& run = population[std::size_t(i)];
    if (run.scores.empty()) {
      throw std::logic_error("select_best: run has no recorded validation scores");
    }
    double m = run.scores[0];
    for (double s : run.scores) m = std::max(m, s);
    if (best < 0 || m > best_max ||
        (m == best_max && run.eta < population[std::size_t(best)].eta)) {
      best = i;
      best_max = m;
    }
  }
  return best;
}

void evolve(std::vector<RunState>& population, int best_index, const PopulationConfig& config) {
  if (best_index < 0 || best_index >= int(population.size())) {
    throw std::invalid_argument("evolve: best_index out of range");
  }
  const double eta_star = population[std::size_t(best_index)].eta;
  const Network<float> winner_net = population[std::size_t(best_index)].net;
  const OptimizerState<float> winner_opt = population[std::size_t(best_index)].opt;

  for (RunState& run : population) {
    run.net = winner_net;
    run.opt = config.reset_momentum
                  ? OptimizerState<float>::zeros(winner_opt.velocity.size())
                  : winner_opt;
    run.eta = eta_star * run.lambda;
    run.scores.clear();
  }
}

AutoLRResult run_autolr(std::vector<RunState>& population, const PopulationConfig& config,
                        int total_epochs, const AutoLRHooks& hooks) {
  config.validate();
  if (population.size() != config.runs.size()) {
    throw std::invalid_argument("population does not match the config");
  }
  if (total_epochs < config.period || total_epochs % config.period != 0) {
    throw std::invalid_argument("total epochs must be a positive multiple of the period");
  }
  if (!hooks.train_epoch) throw std::invalid_argument("run_autolr needs a train_epoch hook");

  const int periods = total_epochs / config.period;
  AutoLRResult result;
  result.scores.resize(std::size_t(periods));
  result.etas.resize(std::size_t(periods));
  result.target_rates.resize(std::size_t(periods));
  result.winners.reserve(std::size_t(periods));

  // Warm-up re-arms at the start of training and whenever a run's rate
  // changes value; a run whose evolve left eta identical keeps counting.
  std::vector<int> since_change(population.size(), 0);

  for (int p = 0; p < periods; ++p) {
    result.scores[std::size_t(p)].assign(population.size(), {});
    result.etas[std::size_t(p)].assign(population.size(), {});
    for (const RunState& run : population) {
      result.target_rates[std::size_t(p)].push_back(run.eta);
    }

    for (int e = 0; e < config.period; ++e) {
      const int global_epoch = p * config.period + e;
      for (std::size_t r = 0; r < population.size(); ++r) {
        RunState& run = population[r];
        const double eta_eff = run.eta * warmup_scale(since_change[r], config.warmup_epochs);
        const double score = hooks.train_epoch(run, global_epoch, eta_eff);
        record_validation(run, e, config.period, score);
        result.scores[std::size_t(p)][r].push_back(score);
        result.etas[std::size_t(p)][r].push_back(eta_eff);
      }
      for (std::size_t r = 0; r < population.size(); ++r) ++since_change[r];
    }

    const int winner = select_best(population);
    result.winners.push_back(winner);
    const double eta_star = population[std::size_t(winner)].eta;
    if (hooks.on_period_end) hooks.on_period_end(p, winner, eta_star);
    result.final_best = winner;

    if (p + 1 < periods) {
      std::vector<double> old_rates;
      for (const RunState& run : population) old_rates.push_back(run.eta);
      evolve(population, winner, config);
      for (std::size_t r = 0; r < population.size(); ++r) {
        if (population[r].eta != old_rates[r]) since_change[r] = 0;
      }
    }
  }
  return result;
}

}  // namespace btseg
