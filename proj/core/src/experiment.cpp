#include "btseg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "btseg/checkpoint.hpp"
#include "btseg/grid_io.hpp"
#include "btseg/hash.hpp"

namespace btseg {

namespace {

using nlohmann::json;

// --------------------------------------------------------------------------
// Config <-> JSON

json network_to_json(const NetworkSpec& spec) {
  return json::parse(network_spec_to_json(spec));
}

json schedule_to_json(const Schedule& s) {
  json j{{"warmup_epochs", s.warmup_epochs}};
  switch (s.kind) {
    case ScheduleKind::Constant:
      j["kind"] = "constant";
      j["eta"] = s.eta;
      break;
    case ScheduleKind::StepDecay:
      j["kind"] = "step";
      j["eta0"] = s.step.eta0;
      j["decay"] = s.step.decay;
      j["step_epochs"] = s.step.step_epochs;
      break;
    case ScheduleKind::Piecewise: {
      j["kind"] = "piecewise";
      json table = json::array();
      for (const auto& [e, eta] : s.table) table.push_back({e, eta});
      j["table"] = std::move(table);
      break;
    }
    case ScheduleKind::AutoLR: {
      j["kind"] = "autolr";
      json runs = json::array();
      for (const RunSetup& r : s.population.runs) {
        runs.push_back({r.initial_eta, r.lambda});
      }
      j["runs"] = std::move(runs);
      j["period"] = s.population.period;
      j["warmup_epochs"] = s.population.warmup_epochs;
      j["reset_momentum"] = s.population.reset_momentum;
      break;
    }
  }
  return j;
}

Schedule schedule_from_json(const json& j) {
  Schedule s;
  const std::string kind = j.value("kind", "constant");
  s.warmup_epochs = j.value("warmup_epochs", 10);
  if (kind == "constant") {
    s.kind = ScheduleKind::Constant;
    s.eta = j.value("eta", 0.001);
  } else if (kind == "step") {
    s.kind = ScheduleKind::StepDecay;
    s.step.eta0 = j.value("eta0", 0.1);
    s.step.decay = j.value("decay", 0.5);
    s.step.step_epochs = j.value("step_epochs", 100);
  } else if (kind == "piecewise") {
    s.kind = ScheduleKind::Piecewise;
    for (const json& row : j.at("table")) {
      s.table.emplace_back(row.at(0).get<int>(), row.at(1).get<double>());
    }
  } else if (kind == "autolr") {
    s.kind = ScheduleKind::AutoLR;
    s.population = PopulationConfig{};
    if (j.contains("runs")) {
      s.population.runs.clear();
      for (const json& row : j.at("runs")) {
        s.population.runs.push_back(RunSetup{row.at(0).get<double>(), row.at(1).get<double>(), {}});
      }
    }
    s.population.period = j.value("period", 50);
    s.population.warmup_epochs = j.value("warmup_epochs", 10);
    s.population.reset_momentum = j.value("reset_momentum", false);
  } else {
    throw std::invalid_argument("unknown schedule kind: " + kind);
  }
  return s;
}

json config_to_json(const ExperimentConfig& c) {
  const PhantomConfig& p = c.phantom;
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["num_volumes"] = c.num_volumes;
  j["total_epochs"] = c.total_epochs;
  j["checkpoint_every"] = c.checkpoint_every;
  j["inference_region"] = c.inference_region;
  j["data_dir"] = c.data_dir;
  j["output_dir"] = c.output_dir;
  j["phantom"] = json{{"dims", {p.dims.nx, p.dims.ny, p.dims.nz}},
                      {"spacing", {p.spacing.x, p.spacing.y, p.spacing.z}},
                      {"classes", p.num_classes},
                      {"foreground_fraction", p.foreground_fraction_target},
                      {"blobs_per_class", p.blobs_per_class},
                      {"distractors", p.distractor_count},
                      {"intensity_means", p.intensity_means},
                      {"noise_sigma", p.noise_sigma}};
  j["split"] = json{{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["network"] = network_to_json(c.network);
  j["optimizer"] = json{{"momentum", c.optimizer.momentum},
                        {"weight_decay", c.optimizer.weight_decay}};
  j["epochs"] = json{{"batches_per_epoch", c.epochs.batches_per_epoch},
                     {"batch_size", c.epochs.batch_size}};
  j["sampler"] = json{{"mode", c.sampler.mode == SamplerMode::Boosted ? "boosted" : "uniform"},
                      {"error_floor", c.sampler.error_floor},
                      {"max_rejections", c.sampler.max_rejections},
                      {"refresh_fraction", c.sampler.refresh_fraction}};
  j["schedule"] = schedule_to_json(c.schedule);
  j["augment"] = json{{"enabled", c.augment_enabled},
                      {"base_spacing",
                       {c.augment.base_spacing.x, c.augment.base_spacing.y,
                        c.augment.base_spacing.z}},
                      {"spacing_jitter", c.augment.spacing_jitter},
                      {"rotation_deg",
                       {c.augment.rotation_ranges_deg[0], c.augment.rotation_ranges_deg[1],
                        c.augment.rotation_ranges_deg[2]}}};
  j["normalize"] = json{{"clamp_lo", c.normalize.clamp_lo},
                        {"clamp_hi", c.normalize.clamp_hi},
                        {"divisor", c.normalize.divisor}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.seed = j.value("seed", c.seed);
  c.num_volumes = j.value("num_volumes", c.num_volumes);
  c.total_epochs = j.value("total_epochs", c.total_epochs);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.inference_region = j.value("inference_region", c.inference_region);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("phantom")) {
    const json& p = j.at("phantom");
    if (p.contains("dims")) {
      c.phantom.dims = Dims{p.at("dims").at(0).get<int>(), p.at("dims").at(1).get<int>(),
                            p.at("dims").at(2).get<int>()};
    }
    if (p.contains("spacing")) {
      c.phantom.spacing = Spacing{p.at("spacing").at(0).get<float>(),
                                  p.at("spacing").at(1).get<float>(),
                                  p.at("spacing").at(2).get<float>()};
    }
    c.phantom.num_classes = p.value("classes", c.phantom.num_classes);
    c.phantom.foreground_fraction_target =
        p.value("foreground_fraction", c.phantom.foreground_fraction_target);
    c.phantom.blobs_per_class = p.value("blobs_per_class", c.phantom.blobs_per_class);
    c.phantom.distractor_count = p.value("distractors", c.phantom.distractor_count);
    if (p.contains("intensity_means")) {
      c.phantom.intensity_means = p.at("intensity_means").get<std::vector<double>>();
    }
    c.phantom.noise_sigma = p.value("noise_sigma", c.phantom.noise_sigma);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    c.split.train = s.value("train", c.split.train);
    c.split.val = s.value("val", c.split.val);
    c.split.test = s.value("test", c.split.test);
  }
  if (j.contains("network")) c.network = network_spec_from_json(j.at("network").dump());
  if (j.contains("optimizer")) {
    c.optimizer.momentum = j.at("optimizer").value("momentum", c.optimizer.momentum);
    c.optimizer.weight_decay = j.at("optimizer").value("weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("epochs")) {
    c.epochs.batches_per_epoch =
        j.at("epochs").value("batches_per_epoch", c.epochs.batches_per_epoch);
    c.epochs.batch_size = j.at("epochs").value("batch_size", c.epochs.batch_size);
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    const std::string mode = s.value("mode", "boosted");
    if (mode == "boosted") {
      c.sampler.mode = SamplerMode::Boosted;
    } else if (mode == "uniform") {
      c.sampler.mode = SamplerMode::Uniform;
    } else {
      throw std::invalid_argument("unknown sampler mode: " + mode);
    }
    c.sampler.error_floor = s.value("error_floor", c.sampler.error_floor);
    c.sampler.max_rejections = s.value("max_rejections", c.sampler.max_rejections);
    c.sampler.refresh_fraction = s.value("refresh_fraction", c.sampler.refresh_fraction);
  }
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    c.augment_enabled = a.value("enabled", c.augment_enabled);
    if (a.contains("base_spacing")) {
      c.augment.base_spacing = Spacing{a.at("base_spacing").at(0).get<float>(),
                                       a.at("base_spacing").at(1).get<float>(),
                                       a.at("base_spacing").at(2).get<float>()};
    }
    c.augment.spacing_jitter = a.value("spacing_jitter", c.augment.spacing_jitter);
    if (a.contains("rotation_deg")) {
      c.augment.rotation_ranges_deg = {a.at("rotation_deg").at(0).get<double>(),
                                       a.at("rotation_deg").at(1).get<double>(),
                                       a.at("rotation_deg").at(2).get<double>()};
    }
  }
  if (j.contains("normalize")) {
    const json& n = j.at("normalize");
    c.normalize.clamp_lo = n.value("clamp_lo", c.normalize.clamp_lo);
    c.normalize.clamp_hi = n.value("clamp_hi", c.normalize.clamp_hi);
    c.normalize.divisor = n.value("divisor", c.normalize.divisor);
  }
  return c;
}

// --------------------------------------------------------------------------
// Output helpers

void write_csv_banner(std::ofstream& f, const std::string& manifest_hash,
                      const std::string& header) {
  f << "# manifest=" << manifest_hash << "\n" << header << "\n";
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string metrics_header(int num_classes) {
  std::string h = "epoch,iteration,lr,loss";
  for (int c = 1; c < num_classes; ++c) h += ",dice_class_" + std::to_string(c);
  h += ",mean_dice,seconds";
  return h;
}

void write_metrics_row(std::ofstream& f, const MetricsRecord& m) {
  f << m.epoch << ',' << m.iteration << ',' << format_double(m.learning_rate) << ','
    << format_double(m.train_loss);
  for (double d : m.dice_per_class) f << ',' << format_double(d);
  f << ',' << format_double(m.mean_dice) << ',' << format_double(m.seconds) << "\n";
  f.flush();
}

std::string diagnostics_header(std::size_t images) {
  std::string h = "epoch,acceptance_rate,forced_count";
  for (std::size_t i = 0; i < images; ++i) h += ",mean_error_img_" + std::to_string(i);
  return h;
}

void write_diagnostics_row(std::ofstream& f, int epoch, const SamplerState& sampler,
                           const SamplerDiagnostics& epoch_diag) {
  f << epoch << ',' << format_double(epoch_diag.acceptance_rate()) << ',' << epoch_diag.forced;
  for (const ErrorMap& e : sampler.error_maps) f << ',' << format_double(e.mean());
  f << "\n";
  f.flush();
}

SamplerDiagnostics diff_diagnostics(const SamplerDiagnostics& now, const SamplerDiagnostics& prev) {
  SamplerDiagnostics d;
  d.candidates = now.candidates - prev.candidates;
  d.accepted = now.accepted - prev.accepted;
  d.forced = now.forced - prev.forced;
  return d;
}

// --------------------------------------------------------------------------
// Training drivers

struct RunContext {
  const ExperimentConfig& config;
  const Dataset& data;
  std::string manifest_hash;
};

VolumePredictor make_predictor(const Network<float>& net, int region) {
  return [&net, region](const Volume& v) { return predict_volume(net, v, region).class_probs; };
}

MetricsRecord make_record(int epoch, std::int64_t iteration, double lr, double loss,
                          const ValidationScores& scores) {
  MetricsRecord m;
  m.epoch = epoch;
  m.iteration = iteration;
  m.learning_rate = lr;
  m.train_loss = loss;
  m.dice_per_class = scores.per_class;
  m.mean_dice = scores.mean;
  m.seconds = 0.0;  // deterministic CSVs; wall time goes to run.log
  return m;
}

TrainOutcome train_single(const RunContext& ctx, const std::filesystem::path& out_dir) {
  const ExperimentConfig& cfg = ctx.config;
  const PatchRequest request = cfg.network.patch_request();
  const AugmentConfig* aug = cfg.augment_enabled ? &cfg.augment : nullptr;

  Network<float> net = glorot_init<float>(cfg.network, RngStream::derive(cfg.seed, 0x11717).raw());
  OptimizerState<float> opt = OptimizerState<float>::zeros(net.param_count());
  SamplerState sampler = init_sampler(ctx.data.train, cfg.sampler);

  std::ofstream metrics_f(out_dir / "metrics.csv");
  write_csv_banner(metrics_f, ctx.manifest_hash, metrics_header(ctx.data.num_classes));
  std::ofstream diag_f(out_dir / "diagnostics.csv");
  write_csv_banner(diag_f, ctx.manifest_hash, diagnostics_header(ctx.data.train.size()));
  std::ofstream log_f(out_dir / "run.log");

  TrainOutcome outcome;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    RngStream rng = RngStream::derive(cfg.seed, 0x42A71, std::uint64_t(epoch));
    const double eta = effective_lr(cfg.schedule, epoch);
    const SamplerDiagnostics before = sampler.diagnostics;
    double loss = 0.0;
    try {
      loss = train_epoch(net, opt, sampler, ctx.data.train, eta, cfg.optimizer, cfg.epochs,
                         request, aug, rng);
    } catch (const TrainingError& e) {
      throw TrainingError("epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
    const ValidationScores scores = validate(net, ctx.data.val, cfg.inference_region);
    const std::int64_t iteration = std::int64_t(epoch + 1) * cfg.epochs.batches_per_epoch;
    const MetricsRecord rec = make_record(epoch + 1, iteration, eta, loss, scores);
    write_metrics_row(metrics_f, rec);
    write_diagnostics_row(diag_f, epoch + 1, sampler, diff_diagnostics(sampler.diagnostics, before));
    outcome.metrics.push_back(rec);

    if (cfg.sampler.mode == SamplerMode::Boosted) {
      update_error_maps(sampler, make_predictor(net, cfg.inference_region), ctx.data.train);
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.btckpt", epoch + 1);
      save_checkpoint(out_dir / name, net, opt.velocity);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_f << "epoch " << epoch + 1 << " lr " << format_double(eta) << " loss "
          << format_double(loss) << " mean_dice " << format_double(scores.mean) << " wall_s "
          << format_double(wall) << "\n";
    log_f.flush();
  }
  outcome.final_checkpoint = out_dir / "ckpt_final.btckpt";
  save_checkpoint(outcome.final_checkpoint, net, opt.velocity);
  return outcome;
}

TrainOutcome train_autolr(const RunContext& ctx, const std::filesystem::path& out_dir) {
  const ExperimentConfig& cfg = ctx.config;
  const PopulationConfig& pop_cfg = cfg.schedule.population;
  if (pop_cfg.runs.size() < 2) {
    throw std::invalid_argument("the autolr schedule needs at least two runs");
  }
  const PatchRequest request = cfg.network.patch_request();
  const AugmentConfig* aug = cfg.augment_enabled ? &cfg.augment : nullptr;

  const Network<float> init =
      glorot_init<float>(cfg.network, RngStream::derive(cfg.seed, 0x11717).raw());

  std::vector<RunState> population;
  std::vector<SamplerState> samplers;
  std::vector<std::ofstream> run_metrics;
  std::vector<std::vector<MetricsRecord>> run_records(pop_cfg.runs.size());
  for (std::size_t r = 0; r < pop_cfg.runs.size(); ++r) {
    RunState run;
    run.run_id = int(r);
    run.eta = pop_cfg.runs[r].initial_eta;
    run.lambda = pop_cfg.runs[r].lambda;
    run.stream_id = pop_cfg.runs[r].stream_id.value_or(std::uint64_t(r));
    run.net = init;
    run.opt = OptimizerState<float>::zeros(init.param_count());
    population.push_back(std::move(run));
    samplers.push_back(init_sampler(ctx.data.train, cfg.sampler));

    const std::filesystem::path run_dir = out_dir / ("run" + std::to_string(r));
    std::filesystem::create_directories(run_dir);
    run_metrics.emplace_back(run_dir / "metrics.csv");
    write_csv_banner(run_metrics.back(), ctx.manifest_hash, metrics_header(ctx.data.num_classes));
  }

  std::ofstream pop_f(out_dir / "population.csv");
  {
    std::string header = "period,winner,eta_star";
    for (std::size_t r = 0; r < pop_cfg.runs.size(); ++r) {
      header += ",eta_run_" + std::to_string(r);
    }
    write_csv_banner(pop_f, ctx.manifest_hash, header);
  }
  std::ofstream log_f(out_dir / "run.log");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<RngStream> streams;
  for (std::size_t r = 0; r < population.size(); ++r) streams.emplace_back(0);

  AutoLRHooks hooks;
  hooks.train_epoch = [&](RunState& run, int global_epoch, double eta) {
    const std::size_t r = std::size_t(run.run_id);
    const int period_idx = global_epoch / pop_cfg.period;
    if (global_epoch % pop_cfg.period == 0) {
      streams[r] = RngStream::derive(cfg.seed, 0xB00 + run.stream_id, std::uint64_t(period_idx));
    }
    double loss = 0.0;
    try {
      loss = train_epoch(run.net, run.opt, samplers[r], ctx.data.train, eta, cfg.optimizer,
                         cfg.epochs, request, aug, streams[r]);
    } catch (const TrainingError& e) {
      throw TrainingError("run " + std::to_string(r) + " epoch " +
                          std::to_string(global_epoch + 1) + ": " + e.what());
    }
    const ValidationScores scores = validate(run.net, ctx.data.val, cfg.inference_region);
    const std::int64_t iteration = std::int64_t(global_epoch + 1) * cfg.epochs.batches_per_epoch;
    const MetricsRecord rec = make_record(global_epoch + 1, iteration, eta, loss, scores);
    write_metrics_row(run_metrics[r], rec);
    run_records[r].push_back(rec);
    if (cfg.sampler.mode == SamplerMode::Boosted) {
      update_error_maps(samplers[r], make_predictor(run.net, cfg.inference_region),
                        ctx.data.train);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_f << "run " << r << " epoch " << global_epoch + 1 << " lr " << format_double(eta)
          << " loss " << format_double(loss) << " mean_dice " << format_double(scores.mean)
          << " wall_s " << format_double(wall) << "\n";
    log_f.flush();
    return scores.mean;
  };
  hooks.on_period_end = [&](int period, int winner, double eta_star) {
    pop_f << period + 1 << ',' << winner << ',' << format_double(eta_star);
    for (const RunState& run : population) {
      pop_f << ',' << format_double(eta_star * run.lambda);
    }
    pop_f << "\n";
    pop_f.flush();
    char name[40];
    std::snprintf(name, sizeof(name), "ckpt_period_%02d.btckpt", period + 1);
    save_checkpoint(out_dir / name, population[std::size_t(winner)].net,
                    population[std::size_t(winner)].opt.velocity);
    // Spawned runs continue from the winner's training state, error maps
    // included.
    for (std::size_t r = 0; r < samplers.size(); ++r) {
      if (int(r) != winner) {
        samplers[r].error_maps = samplers[std::size_t(winner)].error_maps;
        samplers[r].refresh_cursor = samplers[std::size_t(winner)].refresh_cursor;
      }
    }
  };

  const AutoLRResult result = run_autolr(population, pop_cfg, cfg.total_epochs, hooks);

  // Winner stream: the winning run's rows of each period.
  TrainOutcome outcome;
  std::ofstream winner_f(out_dir / "winner_metrics.csv");
  write_csv_banner(winner_f, ctx.manifest_hash, metrics_header(ctx.data.num_classes));
  for (std::size_t p = 0; p < result.winners.size(); ++p) {
    const std::size_t w = std::size_t(result.winners[p]);
    for (int e = 0; e < pop_cfg.period; ++e) {
      const MetricsRecord& rec = run_records[w][p * std::size_t(pop_cfg.period) + std::size_t(e)];
      write_metrics_row(winner_f, rec);
      outcome.metrics.push_back(rec);
    }
  }

  outcome.final_checkpoint = out_dir / "ckpt_final.btckpt";
  const RunState& best = population[std::size_t(result.final_best)];
  save_checkpoint(outcome.final_checkpoint, best.net, best.opt.velocity);
  return outcome;
}

}  // namespace

// --------------------------------------------------------------------------
// ExperimentConfig

void ExperimentConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("experiment name must not be empty");
  phantom.validate();
  if (num_volumes < 1) throw std::invalid_argument("num_volumes must be >= 1");
  split.counts(num_volumes);
  network.validate();
  if (network.num_classes != phantom.num_classes) {
    throw std::invalid_argument("network and phantom class counts differ");
  }
  optimizer.validate();
  epochs.validate();
  sampler.validate();
  schedule.validate();
  augment.validate();
  normalize.validate();
  if (total_epochs < 1) throw std::invalid_argument("total_epochs must be >= 1");
  if (inference_region < 1) throw std::invalid_argument("inference_region must be >= 1");
  if (schedule.kind == ScheduleKind::AutoLR) {
    if (schedule.population.runs.size() < 2) {
      throw std::invalid_argument("the autolr schedule needs at least two runs");
    }
    if (total_epochs % schedule.population.period != 0) {
      throw std::invalid_argument("total_epochs must be a multiple of the autolr period");
    }
  }
}

std::string ExperimentConfig::to_json_text(int indent) const {
  return config_to_json(*this).dump(indent) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  return config_from_json(json::parse(text));
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig ExperimentConfig::preset(const std::string& preset_name) {
  ExperimentConfig c;
  if (preset_name == "kidney2class") {
    c.name = "kidney2class";
    c.phantom.dims = Dims{64, 64, 64};
    c.phantom.spacing = Spacing{1.0f, 1.0f, 1.5f};
    c.phantom.num_classes = 2;
    c.phantom.foreground_fraction_target = 0.003;
    c.phantom.blobs_per_class = 2;
    c.phantom.distractor_count = 3;
    c.phantom.intensity_means = {0.0, 200.0};
    c.phantom.noise_sigma = 30.0;
    c.num_volumes = 20;
    c.split = SplitConfig{0.8, 0.2, 0.0};
    c.network.native.layers = {{LayerKind::Conv3, 8, 0}, {LayerKind::Conv3, 12, 0}};
    c.network.low.layers = {{LayerKind::Conv3, 8, 0}, {LayerKind::Conv3, 12, 0}};
    c.network.hidden = {24};
    c.network.dropout = 0.5;
    c.network.num_classes = 2;
    c.network.output_region = 1;
    c.epochs = EpochConfig{100, 20};
    c.sampler.mode = SamplerMode::Boosted;
    c.schedule.kind = ScheduleKind::Constant;
    c.schedule.eta = 0.001;
    c.schedule.warmup_epochs = 10;
    c.total_epochs = 200;
    c.checkpoint_every = 50;
    c.inference_region = 16;
  } else if (preset_name == "multiclass") {
    c.name = "multiclass";
    c.phantom.dims = Dims{48, 48, 48};
    c.phantom.spacing = Spacing{1.0f, 1.0f, 1.5f};
    c.phantom.num_classes = 4;
    c.phantom.foreground_fraction_target = 0.012;
    c.phantom.blobs_per_class = 1;
    c.phantom.distractor_count = 2;
    c.phantom.intensity_means = {0.0, 200.0, 120.0, -150.0};
    c.phantom.noise_sigma = 30.0;
    c.num_volumes = 20;
    c.split = SplitConfig{0.7, 0.1, 0.2};
    c.network.native.layers = {{LayerKind::Conv3, 8, 0}, {LayerKind::Conv3, 12, 0}};
    c.network.low.layers = {{LayerKind::Conv3, 8, 0}, {LayerKind::Conv3, 12, 0}};
    c.network.hidden = {32};
    c.network.dropout = 0.5;
    c.network.num_classes = 4;
    c.network.output_region = 1;
    c.epochs = EpochConfig{100, 40};
    c.sampler.mode = SamplerMode::Boosted;
    c.schedule.kind = ScheduleKind::AutoLR;
    c.schedule.population = PopulationConfig{};  // appendix R_0..R_2, period 50
    c.total_epochs = 100;
    c.checkpoint_every = 50;
    c.inference_region = 16;
  } else {
    throw std::invalid_argument("unknown preset: " + preset_name);
  }
  return c;
}

// --------------------------------------------------------------------------
// Training entry point

TrainOutcome run_training(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const Dataset data = load_dataset(config.data_dir, config.normalize);
  if (data.train.empty() || data.val.empty()) {
    throw std::invalid_argument("training needs nonempty train and val splits");
  }
  if (data.num_classes != config.network.num_classes) {
    throw std::invalid_argument("dataset class count does not match the network");
  }
  std::filesystem::create_directories(out_dir);

  // Manifest first; it is immutable once training starts.
  json manifest;
  manifest["version"] = kToolkitVersion;
  manifest["config"] = config_to_json(config);
  manifest["augment_jitter"] = "per-axis";
  json hashes;
  std::vector<std::filesystem::path> inputs;
  for (const auto& entry : std::filesystem::directory_iterator(config.data_dir)) {
    if (entry.is_regular_file()) inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  for (const auto& p : inputs) hashes[p.filename().string()] = hash_file(p);
  manifest["inputs"] = std::move(hashes);
  const std::string manifest_text = manifest.dump(2) + "\n";
  {
    std::ofstream f(out_dir / "manifest.json");
    if (!f) throw IoError("cannot write manifest under " + out_dir.string());
    f << manifest_text;
  }

  RunContext ctx{config, data, hex64(fnv1a64(manifest_text))};
  return config.schedule.kind == ScheduleKind::AutoLR ? train_autolr(ctx, out_dir)
                                                      : train_single(ctx, out_dir);
}

// --------------------------------------------------------------------------
// Evaluation

LabelMap keep_largest_components(const LabelMap& labels) {
  const Dims& d = labels.dims();
  std::vector<std::uint8_t> out(labels.data().begin(), labels.data().end());
  for (int c = 1; c < labels.num_classes(); ++c) {
    std::vector<std::uint8_t> bin(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) bin[i] = out[i] == c ? 1 : 0;
    const LabelMap kept =
        largest_component(LabelMap(d, labels.spacing(), 2, std::move(bin)));
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] == c && kept[std::int64_t(i)] == 0) out[i] = 0;
    }
  }
  return LabelMap(d, labels.spacing(), labels.num_classes(), std::move(out));
}

std::vector<EvalRow> evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                         const std::filesystem::path& data_dir,
                                         const std::string& split_name, bool postprocess,
                                         int inference_region,
                                         const NormalizeConfig& normalize_cfg) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(data_dir, normalize_cfg);
  const auto scans = data.split(split_name);
  if (scans.empty()) throw std::invalid_argument("split '" + split_name + "' is empty");
  if (data.num_classes != ckpt.net.spec().num_classes) {
    throw std::invalid_argument("checkpoint class count does not match the dataset");
  }

  std::vector<EvalRow> rows;
  std::vector<double> totals(std::size_t(data.num_classes - 1), 0.0);
  for (std::size_t i = 0; i < scans.size(); ++i) {
    Prediction pred = predict_volume(ckpt.net, scans[i].volume, inference_region);
    if (postprocess) pred.labels = keep_largest_components(pred.labels);
    EvalRow row;
    row.scan = "scan_" + std::to_string(i);
    double sum = 0.0;
    for (int c = 1; c < data.num_classes; ++c) {
      const double s = dice(pred.labels, scans[i].labels, c);
      row.dice_per_class.push_back(s);
      totals[std::size_t(c - 1)] += s;
      sum += s;
    }
    row.mean = sum / double(data.num_classes - 1);
    rows.push_back(std::move(row));
  }

  EvalRow mean_row;
  mean_row.scan = "mean";
  double sum = 0.0;
  for (double t : totals) {
    const double avg = t / double(scans.size());
    mean_row.dice_per_class.push_back(avg);
    sum += avg;
  }
  mean_row.mean = sum / double(data.num_classes - 1);
  rows.push_back(std::move(mean_row));
  return rows;
}

}  // namespace btseg
