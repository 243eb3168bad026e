#include "btseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "btseg/grid_io.hpp"

namespace btseg {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'B', 'T', 'C', 'K', 'P', 'T', '0', '1'};

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3:
      return "conv";
    case LayerKind::ResidualStandard:
      return "res";
    case LayerKind::ResidualBottleneck:
      return "bottleneck";
  }
  return "conv";
}

LayerKind kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::Conv3;
  if (s == "res") return LayerKind::ResidualStandard;
  if (s == "bottleneck") return LayerKind::ResidualBottleneck;
  throw std::invalid_argument("unknown layer kind: " + s);
}

json pathway_to_json(const PathwaySpec& p) {
  json arr = json::array();
  for (const LayerSpec& ls : p.layers) {
    json l{{"kind", kind_name(ls.kind)}, {"features", ls.features}};
    if (ls.kind == LayerKind::ResidualBottleneck) l["mid"] = ls.bottleneck;
    arr.push_back(std::move(l));
  }
  return arr;
}

PathwaySpec pathway_from_json(const json& arr) {
  PathwaySpec p;
  for (const json& l : arr) {
    LayerSpec ls;
    ls.kind = kind_from_name(l.at("kind").get<std::string>());
    ls.features = l.at("features").get<int>();
    if (ls.kind == LayerKind::ResidualBottleneck) ls.bottleneck = l.at("mid").get<int>();
    p.layers.push_back(ls);
  }
  return p;
}

}  // namespace

std::string network_spec_to_json(const NetworkSpec& spec) {
  json j{{"native", pathway_to_json(spec.native)},
         {"low", pathway_to_json(spec.low)},
         {"hidden", spec.hidden},
         {"dropout", spec.dropout},
         {"classes", spec.num_classes},
         {"output_region", spec.output_region}};
  return j.dump();
}

NetworkSpec network_spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  NetworkSpec spec;
  spec.native = pathway_from_json(j.at("native"));
  spec.low = pathway_from_json(j.at("low"));
  spec.hidden = j.at("hidden").get<std::vector<int>>();
  spec.dropout = j.at("dropout").get<double>();
  spec.num_classes = j.at("classes").get<int>();
  spec.output_region = j.at("output_region").get<int>();
  spec.validate();
  return spec;
}

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     std::span<const float> velocity) {
  if (!velocity.empty() && velocity.size() != net.param_count()) {
    throw std::invalid_argument("velocity length does not match the network");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  const std::string spec = network_spec_to_json(net.spec());
  const std::uint32_t len = std::uint32_t(spec.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(spec.data(), std::streamsize(spec.size()));
  const std::uint64_t nw = net.param_count();
  f.write(reinterpret_cast<const char*>(&nw), 8);
  f.write(reinterpret_cast<const char*>(net.weights().data()), std::streamsize(nw * 4));
  const std::uint64_t nv = velocity.size();
  f.write(reinterpret_cast<const char*>(&nv), 8);
  f.write(reinterpret_cast<const char*>(velocity.data()), std::streamsize(nv * 4));
  if (!f) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a BTCKPT01 file: " + path.string());
  }
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  std::string spec_text(len, '\0');
  f.read(spec_text.data(), std::streamsize(len));
  std::uint64_t nw = 0;
  f.read(reinterpret_cast<char*>(&nw), 8);
  std::vector<float> weights(nw);
  f.read(reinterpret_cast<char*>(weights.data()), std::streamsize(nw * 4));
  std::uint64_t nv = 0;
  f.read(reinterpret_cast<char*>(&nv), 8);
  std::vector<float> velocity(nv);
  f.read(reinterpret_cast<char*>(velocity.data()), std::streamsize(nv * 4));
  if (!f) throw IoError("truncated checkpoint: " + path.string());
  NetworkSpec spec = network_spec_from_json(spec_text);
  return Checkpoint{Network<float>(std::move(spec), std::move(weights)), std::move(velocity)};
}

}  // namespace btseg
