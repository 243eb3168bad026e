#pragma once

#include <filesystem>
#include <string>

#include "btseg/net.hpp"

namespace btseg {

// Checkpoint format: 8-byte magic "BTCKPT01", little-endian u32 spec length,
// the network spec as JSON text, u64 weight count, f32 weights, u64 velocity
// count (0 when absent), f32 velocity. Save -> load -> save is bit-exact.

struct Checkpoint {
  Network<float> net;
  std::vector<float> velocity;  // optimizer momentum; empty when not saved
};

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     std::span<const float> velocity = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const std::string& text);

}  // namespace btseg
