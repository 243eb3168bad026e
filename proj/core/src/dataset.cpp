#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "btseg/experiment.hpp"
#include "btseg/grid_io.hpp"
#include "btseg/hash.hpp"

namespace btseg {

namespace {

using nlohmann::json;

std::string stem_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

json phantom_to_json(const PhantomConfig& p) {
  return json{{"dims", {p.dims.nx, p.dims.ny, p.dims.nz}},
              {"spacing", {p.spacing.x, p.spacing.y, p.spacing.z}},
              {"classes", p.num_classes},
              {"foreground_fraction", p.foreground_fraction_target},
              {"blobs_per_class", p.blobs_per_class},
              {"distractors", p.distractor_count},
              {"intensity_means", p.intensity_means},
              {"noise_sigma", p.noise_sigma}};
}

std::vector<std::string> read_list(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open split list: " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

void SplitConfig::validate() const {
  if (train < 0 || val < 0 || test < 0) {
    throw std::invalid_argument("split fractions must be >= 0");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
}

std::array<int, 3> SplitConfig::counts(int n) const {
  validate();
  const int n_train = int(std::lround(train * n));
  const int n_val = int(std::lround(val * n));
  const int n_test = n - n_train - n_val;
  const auto check = [](double frac, int count, const char* name) {
    if (frac > 0.0 && count < 1) {
      throw std::invalid_argument(std::string("split leaves no volumes for ") + name);
    }
    if (count < 0) throw std::invalid_argument("split counts are infeasible");
  };
  check(train, n_train, "train");
  check(val, n_val, "val");
  check(test, n_test, "test");
  return {n_train, n_val, n_test};
}

void generate_dataset(const ExperimentConfig& config, const std::filesystem::path& dir) {
  config.phantom.validate();
  const auto counts = config.split.counts(config.num_volumes);
  std::filesystem::create_directories(dir);

  json ds{{"num_volumes", config.num_volumes},
          {"num_classes", config.phantom.num_classes},
          {"seed", config.seed},
          {"phantom", phantom_to_json(config.phantom)}};

  std::vector<std::string> stems;
  for (int i = 0; i < config.num_volumes; ++i) {
    PhantomConfig p = config.phantom;
    p.seed = RngStream::derive(config.seed, 0xDA7A, std::uint64_t(i)).raw();
    const auto [volume, labels] = generate_phantom(p);
    const std::string stem = stem_name(i);
    save_volume(dir / ("vol_" + stem + ".btvol"), volume);
    save_labels(dir / ("lab_" + stem + ".btvol"), labels);

    json sidecar{{"stem", stem},
                 {"seed", p.seed},
                 {"phantom", phantom_to_json(p)},
                 {"augment_jitter", "per-axis"}};
    std::ofstream sf(dir / ("vol_" + stem + ".json"));
    sf << sidecar.dump(2) << "\n";
    stems.push_back(stem);
  }

  const auto write_list = [&](const char* name, int begin, int end) {
    std::ofstream f(dir / name);
    json arr = json::array();
    for (int i = begin; i < end; ++i) {
      f << stems[std::size_t(i)] << "\n";
      arr.push_back(stems[std::size_t(i)]);
    }
    return arr;
  };
  json splits;
  splits["train"] = write_list("train.txt", 0, counts[0]);
  splits["val"] = write_list("val.txt", counts[0], counts[0] + counts[1]);
  splits["test"] = write_list("test.txt", counts[0] + counts[1], config.num_volumes);
  ds["splits"] = std::move(splits);

  std::ofstream f(dir / "dataset.json");
  if (!f) throw IoError("cannot write dataset.json under " + dir.string());
  f << ds.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir, const NormalizeConfig& normalize_cfg) {
  std::ifstream mf(dir / "dataset.json");
  if (!mf) throw IoError("no dataset at " + dir.string() + " (missing dataset.json)");
  json ds;
  mf >> ds;

  Dataset out;
  out.num_classes = ds.at("num_classes").get<int>();
  const auto load_split = [&](const char* name, std::vector<TrainingImage>& images) {
    for (const std::string& stem : read_list(dir / name)) {
      Volume v = load_volume(dir / ("vol_" + stem + ".btvol"));
      LabelMap l = load_labels(dir / ("lab_" + stem + ".btvol"), out.num_classes);
      images.push_back(TrainingImage{normalize(v, normalize_cfg), std::move(l)});
    }
  };
  load_split("train.txt", out.train);
  load_split("val.txt", out.val);
  load_split("test.txt", out.test);
  return out;
}

std::span<const TrainingImage> Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split: " + name);
}

}  // namespace btseg
