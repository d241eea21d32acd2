#include "mmtm/synthdata.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "mmtm/binary_io.hpp"
#include "mmtm/errors.hpp"
#include "mmtm/random.hpp"

namespace mmtm {

std::string_view mode_name(CrossModalMode mode) {
  switch (mode) {
    case CrossModalMode::Independent: return "independent";
    case CrossModalMode::Complementary: return "complementary";
    case CrossModalMode::Xor: return "xor";
  }
  return "?";
}

CrossModalMode parse_mode(std::string_view name) {
  for (auto m : {CrossModalMode::Independent, CrossModalMode::Complementary, CrossModalMode::Xor})
    if (mode_name(m) == name) return m;
  throw ConfigError("unknown cross-modal mode '" + std::string(name) +
                    "'; valid modes: independent, complementary, xor");
}

namespace {

bool is_power_of_two(std::size_t n) { return n && (n & (n - 1)) == 0; }

std::size_t log2_exact(std::size_t n) {
  std::size_t b = 0;
  while ((std::size_t{1} << b) < n) ++b;
  return b;
}

// Templates a modality needs for the given mode.
std::size_t template_count(const SyntheticTaskSpec& spec) {
  switch (spec.mode) {
    case CrossModalMode::Independent: return spec.num_classes;
    case CrossModalMode::Complementary: return spec.num_classes / 2 + 1;
    case CrossModalMode::Xor: return log2_exact(spec.num_classes);
  }
  return 0;
}

// Smooth random field for [H,W,C] shapes (low spatial frequencies), white
// noise otherwise.
Tensor raw_template(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(shape);
  if (shape.size() == 3) {
    const std::size_t H = shape[0], W = shape[1], C = shape[2];
    constexpr int kMaxFreq = 2;
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (std::size_t c = 0; c < C; ++c) {
      for (int fy = 0; fy <= kMaxFreq; ++fy) {
        for (int fx = 0; fx <= kMaxFreq; ++fx) {
          if (fx == 0 && fy == 0) continue;
          const double amp = normal(rng), ph = phase(rng);
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
              t[(y * W + x) * C + c] += amp * std::cos(2.0 * std::numbers::pi *
                                                           (fy * static_cast<double>(y) / H +
                                                            fx * static_cast<double>(x) / W) +
                                                       ph);
        }
      }
    }
  } else {
    for (auto& v : t.data()) v = normal(rng);
  }
  return t;
}

// Gram-Schmidt, then rescale each template to unit RMS per element.
std::vector<Tensor> make_templates(const Shape& shape, std::size_t count, Rng& rng) {
  std::vector<Tensor> out;
  const double n = static_cast<double>(shape_volume(shape));
  while (out.size() < count) {
    Tensor t = raw_template(shape, rng);
    for (const auto& u : out) {
      double dot = 0.0, uu = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        dot += t[i] * u[i];
        uu += u[i] * u[i];
      }
      for (std::size_t i = 0; i < t.size(); ++i) t[i] -= dot / uu * u[i];
    }
    double ss = 0.0;
    for (double v : t.data()) ss += v * v;
    if (ss < 1e-9 * n) continue;
    const double k = std::sqrt(n / ss);
    for (auto& v : t.data()) v *= k;
    out.push_back(std::move(t));
  }
  return out;
}

Tensor noise(const Shape& shape, double sigma, Rng& rng) {
  if (sigma == 0.0) return Tensor(shape, 0.0);
  return random_normal(shape, 0.0, sigma, rng);
}

void add_scaled(Tensor& dst, const Tensor& src, double k) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  const std::size_t k = modality_shapes.size();
  if (k == 0) throw ConfigError("task has no modalities");
  for (std::size_t m = 0; m < k; ++m) {
    if (modality_shapes[m].empty() || shape_volume(modality_shapes[m]) == 0) {
      throw ConfigError("modality " + std::to_string(m) + " has an empty shape");
    }
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (!(corruption_prob >= 0.0 && corruption_prob <= 1.0)) throw ConfigError("corruption_prob must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (train_size == 0 || val_size == 0 || test_size == 0) throw ConfigError("split sizes must be at least 1");
  if (mode == CrossModalMode::Xor) {
    if (k < 2) throw ConfigError("xor mode needs at least 2 modalities");
    if (!is_power_of_two(num_classes)) throw ConfigError("xor mode needs a power-of-two num_classes");
  }
  if (mode == CrossModalMode::Complementary) {
    if (k < 2) throw ConfigError("complementary mode needs at least 2 modalities");
    if (num_classes % 2) throw ConfigError("complementary mode needs an even num_classes");
  }
  for (std::size_t m = 0; m < k; ++m) {
    if (shape_volume(modality_shapes[m]) < template_count(*this)) {
      throw ConfigError("modality " + std::to_string(m) + " is too small for " + std::to_string(num_classes) +
                        " classes");
    }
  }
}

Dataset generate(const SyntheticTaskSpec& spec) {
  spec.validate();
  const std::size_t K = spec.modality_shapes.size();
  const std::size_t C = spec.num_classes;
  const double a = spec.signal_amplitude;

  Rng template_rng(derive_seed(spec.seed, 7));
  std::vector<std::vector<Tensor>> templates;
  for (const auto& shape : spec.modality_shapes) templates.push_back(make_templates(shape, template_count(spec), template_rng));

  Rng rng(derive_seed(spec.seed, 11));
  std::uniform_int_distribution<std::size_t> pick_label(0, C - 1);
  std::uniform_int_distribution<std::size_t> pick_modality(0, K - 1);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution corrupt(spec.corruption_prob);

  auto make_sample = [&]() {
    Sample s;
    s.label = pick_label(rng);
    s.corrupted.assign(K, false);
    s.inputs.reserve(K);
    for (std::size_t m = 0; m < K; ++m) s.inputs.push_back(noise(spec.modality_shapes[m], spec.noise_sigma, rng));

    // Modalities that may be corrupted; the rest keep their signal.
    std::vector<bool> protect(K, false);
    switch (spec.mode) {
      case CrossModalMode::Independent: {
        for (std::size_t m = 0; m < K; ++m) add_scaled(s.inputs[m], templates[m][s.label], a);
        protect[pick_modality(rng)] = true;
        break;
      }
      case CrossModalMode::Complementary: {
        const std::size_t carrier = pick_modality(rng);
        const double polarity = coin(rng) ? 1.0 : -1.0;
        const std::size_t half = C / 2;
        const double sign = s.label < half ? 1.0 : -1.0;
        for (std::size_t m = 0; m < K; ++m) {
          if (m == carrier) {
            add_scaled(s.inputs[m], templates[m][s.label % half], a * polarity * sign);
          } else {
            add_scaled(s.inputs[m], templates[m][half], a * polarity);
          }
        }
        protect[carrier] = true;
        break;
      }
      case CrossModalMode::Xor: {
        const std::size_t bits = log2_exact(C);
        std::size_t acc = 0;
        for (std::size_t m = 0; m < K; ++m) {
          const std::size_t code = m + 1 < K ? pick_label(rng) : (acc ^ s.label);
          acc ^= code;
          for (std::size_t b = 0; b < bits; ++b)
            add_scaled(s.inputs[m], templates[m][b], ((code >> b) & 1) ? a : -a);
        }
        protect[pick_modality(rng)] = true;
        break;
      }
    }
    for (std::size_t m = 0; m < K; ++m) {
      const bool hit = corrupt(rng);
      if (hit && !protect[m]) {
        s.inputs[m] = noise(spec.modality_shapes[m], spec.noise_sigma, rng);
        s.corrupted[m] = true;
      }
    }
    return s;
  };

  Dataset d;
  d.spec = spec;
  for (std::size_t i = 0; i < spec.train_size; ++i) d.train.push_back(make_sample());
  for (std::size_t i = 0; i < spec.val_size; ++i) d.val.push_back(make_sample());
  for (std::size_t i = 0; i < spec.test_size; ++i) d.test.push_back(make_sample());
  return d;
}

SyntheticTaskSpec aligned_variant(SyntheticTaskSpec spec) {
  for (auto& s : spec.modality_shapes) s = spec.modality_shapes.front();
  return spec;
}

// ---- MMFZ1 container -----------------------------------------------------

namespace {

constexpr std::string_view kMagic = "MMFZ1";
constexpr std::uint32_t kVersion = 1;

void write_spec(ByteWriter& w, const SyntheticTaskSpec& spec) {
  w.u64(spec.num_classes);
  w.u8(static_cast<std::uint8_t>(spec.mode));
  w.f64(spec.corruption_prob);
  w.f64(spec.noise_sigma);
  w.f64(spec.signal_amplitude);
  w.u64(spec.train_size);
  w.u64(spec.val_size);
  w.u64(spec.test_size);
  w.u64(spec.seed);
  w.u64(spec.modality_shapes.size());
  for (const auto& shape : spec.modality_shapes) {
    w.u64(shape.size());
    for (auto e : shape) w.u64(e);
  }
}

SyntheticTaskSpec read_spec(ByteReader& r) {
  SyntheticTaskSpec spec;
  spec.num_classes = r.u64();
  const std::size_t mode_at = r.offset();
  const std::uint8_t mode = r.u8();
  if (mode > 2) throw ParseError("unknown mode tag " + std::to_string(mode), mode_at);
  spec.mode = static_cast<CrossModalMode>(mode);
  spec.corruption_prob = r.f64();
  spec.noise_sigma = r.f64();
  spec.signal_amplitude = r.f64();
  spec.train_size = r.u64();
  spec.val_size = r.u64();
  spec.test_size = r.u64();
  spec.seed = r.u64();
  const std::size_t k_at = r.offset();
  const std::uint64_t k = r.u64();
  if (k == 0 || k > 64) throw ParseError("implausible modality count " + std::to_string(k), k_at);
  spec.modality_shapes.clear();
  for (std::uint64_t m = 0; m < k; ++m) {
    const std::size_t rank_at = r.offset();
    const std::uint64_t rank = r.u64();
    if (rank == 0 || rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), rank_at);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const std::size_t at = r.offset();
      const std::uint64_t e = r.u64();
      if (e == 0 || e > (1u << 20)) throw ParseError("implausible extent " + std::to_string(e), at);
      shape.push_back(e);
    }
    spec.modality_shapes.push_back(std::move(shape));
  }
  return spec;
}

void write_split(ByteWriter& w, const std::vector<Sample>& split) {
  w.u64(split.size());
  for (const auto& s : split) {
    w.u64(s.label);
    for (bool c : s.corrupted) w.u8(c ? 1 : 0);
    for (const auto& t : s.inputs) w.f64s(t.data());
  }
}

std::vector<Sample> read_split(ByteReader& r, const SyntheticTaskSpec& spec, std::size_t expected, const char* name) {
  const std::size_t at = r.offset();
  const std::uint64_t n = r.u64();
  if (n != expected) {
    throw ParseError(std::string(name) + " split holds " + std::to_string(n) + " samples, header says " +
                         std::to_string(expected),
                     at);
  }
  const std::size_t K = spec.modality_shapes.size();
  std::vector<Sample> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Sample s;
    const std::size_t label_at = r.offset();
    s.label = r.u64();
    if (s.label >= spec.num_classes) throw ParseError("label out of range", label_at);
    for (std::size_t m = 0; m < K; ++m) {
      const std::size_t flag_at = r.offset();
      const std::uint8_t f = r.u8();
      if (f > 1) throw ParseError("corruption flag must be 0 or 1", flag_at);
      s.corrupted.push_back(f == 1);
    }
    for (const auto& shape : spec.modality_shapes) {
      Tensor t(shape);
      r.f64s(t.data());
      s.inputs.push_back(std::move(t));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  write_spec(w, dataset.spec);
  write_split(w, dataset.train);
  write_split(w, dataset.val);
  write_split(w, dataset.test);
  return w.buffer();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.bytes(kMagic.size()) != kMagic) throw ParseError("not a dataset file (bad magic)", 0);
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw VersionError("dataset format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kVersion) + ")");
  }
  Dataset d;
  d.spec = read_spec(r);
  d.train = read_split(r, d.spec, d.spec.train_size, "train");
  d.val = read_split(r, d.spec, d.spec.val_size, "val");
  d.test = read_split(r, d.spec, d.spec.test_size, "test");
  r.expect_end();
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace mmtm
