#include "mmtm/checkpoint.hpp"

#include "mmtm/binary_io.hpp"
#include "mmtm/errors.hpp"

namespace mmtm {

namespace {
constexpr std::string_view kMagic = "MMCK1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const FusionNetwork& net, std::string_view config_echo,
                                            std::uint64_t seed) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.str(config_echo);
  w.u64(seed);
  const auto params = net.parameters();
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.u64(p.tensor->rank());
    for (auto e : p.tensor->shape()) w.u64(e);
    w.f64s(p.tensor->data());
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw ParseError("not a checkpoint file (bad magic)", 0);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kVersion) + ")");
  }
  Checkpoint c;
  c.config_echo = r.str();
  c.seed = r.u64();
  const std::size_t count_at = r.offset();
  const std::uint64_t count = r.u64();
  if (count > (1u << 20)) throw ParseError("implausible parameter count " + std::to_string(count), count_at);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(4096);
    const std::size_t rank_at = r.offset();
    const std::uint64_t rank = r.u64();
    if (rank == 0 || rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), rank_at);
    Shape shape;
    for (std::uint64_t k = 0; k < rank; ++k) {
      const std::size_t at = r.offset();
      const std::uint64_t e = r.u64();
      if (e == 0 || e > (1u << 24)) throw ParseError("implausible extent " + std::to_string(e), at);
      shape.push_back(e);
    }
    if (shape_volume(shape) * 8 > r.remaining()) {
      throw ParseError("parameter '" + name + "' extends past the end of the file", r.offset());
    }
    Tensor t(shape);
    r.f64s(t.data());
    c.parameters.emplace_back(std::move(name), std::move(t));
  }
  r.expect_end();
  return c;
}

void save_checkpoint(const FusionNetwork& net, std::string_view config_echo, std::uint64_t seed,
                     const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(net, config_echo, seed));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void load_parameters(FusionNetwork& net, const Checkpoint& checkpoint) {
  auto params = net.parameters();
  if (params.size() != checkpoint.parameters.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(checkpoint.parameters.size()) +
                      " parameter tensors, network has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, value] = checkpoint.parameters[i];
    if (name != params[i].name || value.shape() != params[i].tensor->shape()) {
      throw ConfigError("checkpoint parameter " + std::to_string(i) + " is " + name + " " +
                        shape_to_string(value.shape()) + ", network expects " + params[i].name + " " +
                        shape_to_string(params[i].tensor->shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = checkpoint.parameters[i].second;
}

}  // namespace mmtm
