#pragma once

// "MMCK1" checkpoints: the experiment config text, the network seed, and every
// parameter in declaration order. Layout in docs/file-formats.md.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmtm/network.hpp"

namespace mmtm {

struct Checkpoint {
  std::string config_echo;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> parameters;
};

std::vector<std::uint8_t> encode_checkpoint(const FusionNetwork& net, std::string_view config_echo,
                                            std::uint64_t seed);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const FusionNetwork& net, std::string_view config_echo, std::uint64_t seed,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies stored values into a network built from the same config.
// Throws ConfigError on any name or shape mismatch.
void load_parameters(FusionNetwork& net, const Checkpoint& checkpoint);

}  // namespace mmtm
