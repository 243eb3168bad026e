// btseg: phantom generation, boosted-sampler / AutoLR training, evaluation,
// and comparison runs, driven by JSON experiment configs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "btseg/checkpoint.hpp"
#include "btseg/experiment.hpp"
#include "btseg/grid_io.hpp"
#include "btseg/hash.hpp"

namespace {

namespace fs = std::filesystem;
using namespace btseg;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

struct ConfigSource {
  std::string config_file;
  std::string preset;

  ExperimentConfig load() const {
    if (!config_file.empty() && !preset.empty()) {
      throw std::invalid_argument("give either --config or --preset, not both");
    }
    if (!config_file.empty()) return ExperimentConfig::from_file(config_file);
    if (!preset.empty()) return ExperimentConfig::preset(preset);
    throw std::invalid_argument("one of --config or --preset is required");
  }
};

void add_config_source(CLI::App* cmd, ConfigSource& src) {
  cmd->add_option("--config", src.config_file, "experiment config JSON file");
  cmd->add_option("--preset", src.preset, "built-in preset: kidney2class or multiclass");
}

std::string env_output_override() {
  const char* env = std::getenv("BTSEG_OUT_DIR");
  return env ? std::string(env) : std::string();
}

// Command-line and environment overrides applied on top of the config file.
struct Overrides {
  std::string data_dir, out_dir, sampler_mode, schedule_kind, name;
  double eta = -1.0;
  std::int64_t seed = -1;
  int total_epochs = -1;

  void apply(ExperimentConfig& cfg) const {
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (!name.empty()) cfg.name = name;
    if (!sampler_mode.empty()) {
      if (sampler_mode == "boosted") {
        cfg.sampler.mode = SamplerMode::Boosted;
      } else if (sampler_mode == "uniform") {
        cfg.sampler.mode = SamplerMode::Uniform;
      } else {
        throw std::invalid_argument("--sampler must be boosted or uniform");
      }
    }
    if (!schedule_kind.empty()) {
      if (schedule_kind == "constant") {
        cfg.schedule.kind = ScheduleKind::Constant;
      } else if (schedule_kind == "step") {
        cfg.schedule.kind = ScheduleKind::StepDecay;
      } else if (schedule_kind == "piecewise") {
        cfg.schedule.kind = ScheduleKind::Piecewise;
      } else if (schedule_kind == "autolr") {
        cfg.schedule.kind = ScheduleKind::AutoLR;
      } else {
        throw std::invalid_argument("--schedule must be constant, step, piecewise, or autolr");
      }
    }
    if (eta > 0.0) {
      cfg.schedule.kind = ScheduleKind::Constant;
      cfg.schedule.eta = eta;
    }
    if (seed >= 0) cfg.seed = std::uint64_t(seed);
    if (total_epochs > 0) cfg.total_epochs = total_epochs;
    const std::string env_out = env_output_override();
    if (!env_out.empty()) cfg.output_dir = env_out;
  }
};

void add_overrides(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--data", ov.data_dir, "dataset directory (overrides config)");
  cmd->add_option("--out", ov.out_dir, "output directory (overrides config)");
  cmd->add_option("--name", ov.name, "experiment name (overrides config)");
  cmd->add_option("--sampler", ov.sampler_mode, "sampler mode: boosted or uniform");
  cmd->add_option("--schedule", ov.schedule_kind,
                  "schedule variant: constant, step, piecewise, or autolr (parameters from the "
                  "config)");
  cmd->add_option("--eta", ov.eta, "constant learning rate (replaces the schedule)");
  cmd->add_option("--seed", ov.seed, "base seed (overrides config)");
  cmd->add_option("--total-epochs", ov.total_epochs, "total epochs (overrides config)");
}

int cmd_generate_data(const ConfigSource& src, const Overrides& ov) {
  ExperimentConfig cfg = src.load();
  ov.apply(cfg);
  const fs::path dir = cfg.data_dir;
  generate_dataset(cfg, dir);
  const auto counts = cfg.split.counts(cfg.num_volumes);
  std::cout << "generated " << cfg.num_volumes << " volumes under " << dir.string() << " (train "
            << counts[0] << ", val " << counts[1] << ", test " << counts[2] << ")\n";
  return kExitOk;
}

int cmd_train(const ConfigSource& src, const Overrides& ov) {
  ExperimentConfig cfg = src.load();
  ov.apply(cfg);
  const TrainOutcome outcome = run_training(cfg, cfg.output_dir);
  std::cout << "trained " << cfg.name << " for " << cfg.total_epochs << " epochs; final mean dice "
            << (outcome.metrics.empty() ? 0.0 : outcome.metrics.back().mean_dice) << "\n"
            << "final checkpoint: " << outcome.final_checkpoint.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_dir,
                 const std::string& split, bool postproc, int region, const std::string& out) {
  const NormalizeConfig normalize_cfg;
  const std::vector<EvalRow> rows =
      evaluate_checkpoint(checkpoint, data_dir, split, postproc, region, normalize_cfg);

  std::cout << "scan";
  for (std::size_t c = 0; c < rows.front().dice_per_class.size(); ++c) {
    std::cout << "\tdice_class_" << c + 1;
  }
  std::cout << "\tmean\n";
  char buf[40];
  for (const EvalRow& r : rows) {
    std::cout << r.scan;
    for (double d : r.dice_per_class) {
      std::snprintf(buf, sizeof(buf), "\t%.4f", d);
      std::cout << buf;
    }
    std::snprintf(buf, sizeof(buf), "\t%.4f", r.mean);
    std::cout << buf << "\n";
  }

  fs::path out_csv = out.empty() ? fs::path("eval.csv") : fs::path(out);
  if (!out_csv.parent_path().empty()) fs::create_directories(out_csv.parent_path());
  std::ofstream f(out_csv);
  f << "# manifest=" << hash_file(checkpoint) << "\n";
  f << "scan";
  for (std::size_t c = 0; c < rows.front().dice_per_class.size(); ++c) {
    f << ",dice_class_" << c + 1;
  }
  f << ",mean\n";
  for (const EvalRow& r : rows) {
    f << r.scan;
    for (double d : r.dice_per_class) {
      std::snprintf(buf, sizeof(buf), ",%.9g", d);
      f << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.9g", r.mean);
    f << buf << "\n";
  }
  std::cout << "wrote " << out_csv.string() << "\n";
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& config_files, int seeds, int reference,
                double threshold_fraction, const std::string& out) {
  std::vector<ExperimentConfig> configs;
  for (const std::string& f : config_files) configs.push_back(ExperimentConfig::from_file(f));
  CompareOptions options;
  options.seeds = seeds;
  options.reference = reference;
  options.threshold_fraction = threshold_fraction;
  std::string out_dir = out;
  const std::string env_out = env_output_override();
  if (!env_out.empty()) out_dir = env_out;

  const CompareResult result = run_compare(configs, options, out_dir);
  std::cout << "config\tfinal_mean_dice\titerations_to_threshold (threshold "
            << result.threshold << ")\n";
  for (const CompareSummary& s : result.summary) {
    std::cout << s.name << '\t' << s.final_mean_dice << '\t' << s.iterations_to_threshold << "\n";
  }
  std::cout << "wrote " << (fs::path(out_dir) / "comparison.csv").string() << " and summary.csv\n";
  return kExitOk;
}

int cmd_print_config(const ConfigSource& src) {
  ExperimentConfig cfg = src.load();
  cfg.validate();
  std::cout << cfg.to_json_text();
  return kExitOk;
}

int cmd_export_error_maps(const std::string& checkpoint, const std::string& data_dir,
                          const std::string& split, int region, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const NormalizeConfig normalize_cfg;
  const Dataset data = load_dataset(data_dir, normalize_cfg);
  const auto scans = data.split(split);
  if (scans.empty()) throw std::invalid_argument("split '" + split + "' is empty");

  SamplerConfig sampler_cfg;
  sampler_cfg.refresh_fraction = 1.0;  // refresh every map in one call
  SamplerState state = init_sampler(scans, sampler_cfg);
  update_error_maps(
      state, [&](const Volume& v) { return predict_volume(ckpt.net, v, region).class_probs; },
      scans);

  const fs::path out_dir = out.empty() ? fs::path("error_maps") : fs::path(out);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < state.error_maps.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "err_%04zu.btvol", i);
    save_volume(out_dir / name, state.error_maps[i].to_volume(scans[i].volume.spacing()));
  }
  std::cout << "wrote " << state.error_maps.size() << " error maps under " << out_dir.string()
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-based volumetric segmentation training with boosted "
               "error-map sampling and population-based learning rates"};
  app.require_subcommand(1);

  ConfigSource gen_src, train_src, print_src;
  Overrides gen_ov, train_ov;

  CLI::App* gen = app.add_subcommand("generate-data", "Generate a synthetic phantom dataset");
  add_config_source(gen, gen_src);
  add_overrides(gen, gen_ov);

  CLI::App* train = app.add_subcommand("train", "Train per an experiment config");
  add_config_source(train, train_src);
  add_overrides(train, train_ov);

  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  bool eval_postproc = false;
  int eval_region = 16;
  CLI::App* eval = app.add_subcommand("evaluate", "Dice report for a checkpoint on a split");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "train, val, or test");
  eval->add_flag("--postproc", eval_postproc, "keep only the largest object per class");
  eval->add_option("--region", eval_region, "inference tile side");
  eval->add_option("--out", eval_out, "output CSV path");

  std::vector<std::string> cmp_configs;
  int cmp_seeds = 3, cmp_reference = 0;
  double cmp_threshold = 0.9;
  std::string cmp_out = "compare_out";
  CLI::App* cmp = app.add_subcommand(
      "compare", "Run configs differing in one axis over several seeds and aggregate");
  cmp->add_option("--configs", cmp_configs, "config files")->required()->expected(2, -1);
  cmp->add_option("--seeds", cmp_seeds, "seeds per config");
  cmp->add_option("--reference", cmp_reference, "config index defining the threshold");
  cmp->add_option("--threshold-fraction", cmp_threshold, "fraction of the reference final dice");
  cmp->add_option("--out", cmp_out, "output directory");

  CLI::App* print = app.add_subcommand("print-config", "Print the fully resolved config");
  add_config_source(print, print_src);

  std::string exp_ckpt, exp_data, exp_split = "train", exp_out = "error_maps";
  int exp_region = 16;
  CLI::App* exp = app.add_subcommand("export-error-maps",
                                     "Compute and write per-image error maps for a checkpoint");
  exp->add_option("--checkpoint", exp_ckpt, "checkpoint file")->required();
  exp->add_option("--data", exp_data, "dataset directory")->required();
  exp->add_option("--split", exp_split, "train, val, or test");
  exp->add_option("--region", exp_region, "inference tile side");
  exp->add_option("--out", exp_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(gen_src, gen_ov);
    if (train->parsed()) return cmd_train(train_src, train_ov);
    if (eval->parsed()) {
      return cmd_evaluate(eval_ckpt, eval_data, eval_split, eval_postproc, eval_region, eval_out);
    }
    if (cmp->parsed()) {
      return cmd_compare(cmp_configs, cmp_seeds, cmp_reference, cmp_threshold, cmp_out);
    }
    if (print->parsed()) return cmd_print_config(print_src);
    if (exp->parsed()) {
      return cmd_export_error_maps(exp_ckpt, exp_data, exp_split, exp_region, exp_out);
    }
  } catch (const TrainingError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
