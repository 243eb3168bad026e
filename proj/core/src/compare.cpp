#include <cmath>
#include <fstream>

#include <json.hpp>

#include "btseg/experiment.hpp"
#include "btseg/hash.hpp"

namespace btseg {

namespace {

using nlohmann::json;

// Canonical form for the confound guard: drops the fields a comparison is
// allowed to vary plus the purely organizational ones.
json canonical_without(const ExperimentConfig& c, const char* axis) {
  json j = json::parse(c.to_json_text(-1));
  j.erase("name");
  j.erase("output_dir");
  j.erase(axis);
  return j;
}

bool all_equal(std::span<const ExperimentConfig> configs, const char* axis) {
  const json first = canonical_without(configs[0], axis);
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (canonical_without(configs[i], axis) != first) return false;
  }
  return true;
}

}  // namespace

void check_comparable(std::span<const ExperimentConfig> configs) {
  if (configs.size() < 2) {
    throw std::invalid_argument("compare needs at least two configs");
  }
  if (!all_equal(configs, "sampler") && !all_equal(configs, "schedule")) {
    throw std::invalid_argument(
        "configs differ outside the compared axis (sampler or schedule)");
  }
}

CompareResult run_compare(std::span<const ExperimentConfig> configs, const CompareOptions& options,
                          const std::filesystem::path& out_dir) {
  check_comparable(configs);
  if (options.seeds < 1) throw std::invalid_argument("compare needs at least one seed");
  if (options.reference < 0 || options.reference >= int(configs.size())) {
    throw std::invalid_argument("reference config index out of range");
  }
  for (const ExperimentConfig& c : configs) c.validate();
  std::filesystem::create_directories(out_dir);

  const int epochs = configs[0].total_epochs;
  CompareResult result;
  result.batches_per_epoch = configs[0].epochs.batches_per_epoch;

  std::string banner_src;
  for (const ExperimentConfig& c : configs) banner_src += c.to_json_text(-1);
  const std::string banner = hex64(fnv1a64(banner_src));

  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    // Per-seed mean-dice curves.
    std::vector<std::vector<double>> curves;
    for (int s = 0; s < options.seeds; ++s) {
      ExperimentConfig run_cfg = configs[ci];
      run_cfg.seed = configs[ci].seed + std::uint64_t(s);
      const std::filesystem::path run_dir =
          out_dir / ("cfg" + std::to_string(ci) + "_" + run_cfg.name) /
          ("seed_" + std::to_string(run_cfg.seed));
      const TrainOutcome outcome = run_training(run_cfg, run_dir);
      std::vector<double> curve;
      curve.reserve(outcome.metrics.size());
      for (const MetricsRecord& m : outcome.metrics) curve.push_back(m.mean_dice);
      if (int(curve.size()) != epochs) {
        throw std::logic_error("compare: metrics stream has unexpected length");
      }
      curves.push_back(std::move(curve));
    }

    CompareCurve agg;
    agg.name = configs[ci].name;
    agg.mean.resize(std::size_t(epochs));
    agg.sd.resize(std::size_t(epochs));
    for (int e = 0; e < epochs; ++e) {
      double m = 0.0;
      for (const auto& c : curves) m += c[std::size_t(e)];
      m /= double(options.seeds);
      double var = 0.0;
      for (const auto& c : curves) var += (c[std::size_t(e)] - m) * (c[std::size_t(e)] - m);
      agg.mean[std::size_t(e)] = m;
      agg.sd[std::size_t(e)] = options.seeds > 1 ? std::sqrt(var / double(options.seeds - 1)) : 0.0;
    }
    result.curves.push_back(std::move(agg));
  }

  result.threshold =
      options.threshold_fraction * result.curves[std::size_t(options.reference)].mean.back();
  for (const CompareCurve& curve : result.curves) {
    CompareSummary s;
    s.name = curve.name;
    s.final_mean_dice = curve.mean.back();
    s.iterations_to_threshold = -1;
    for (std::size_t e = 0; e < curve.mean.size(); ++e) {
      if (curve.mean[e] >= result.threshold) {
        s.iterations_to_threshold = std::int64_t(e + 1) * result.batches_per_epoch;
        break;
      }
    }
    result.summary.push_back(std::move(s));
  }

  {
    std::ofstream f(out_dir / "comparison.csv");
    f << "# manifest=" << banner << "\n";
    f << "epoch,iteration";
    for (const CompareCurve& c : result.curves) {
      f << ',' << c.name << "_mean_dice," << c.name << "_sd";
    }
    f << "\n";
    for (int e = 0; e < epochs; ++e) {
      f << e + 1 << ',' << std::int64_t(e + 1) * result.batches_per_epoch;
      char buf[40];
      for (const CompareCurve& c : result.curves) {
        std::snprintf(buf, sizeof(buf), ",%.9g,%.9g", c.mean[std::size_t(e)],
                      c.sd[std::size_t(e)]);
        f << buf;
      }
      f << "\n";
    }
  }
  {
    std::ofstream f(out_dir / "summary.csv");
    f << "# manifest=" << banner << "\n";
    f << "config,final_mean_dice,threshold,iterations_to_threshold\n";
    char buf[80];
    for (const CompareSummary& s : result.summary) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,", s.final_mean_dice, result.threshold);
      f << s.name << ',' << buf << s.iterations_to_threshold << "\n";
    }
  }
  return result;
}

}  // namespace btseg
