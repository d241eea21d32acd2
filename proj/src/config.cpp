#include "mmtm/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mmtm/errors.hpp"

namespace mmtm {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// '#' comments are not INI syntax for the property-tree parser; strip them.
std::string strip_hash_comments(std::string_view text) {
  std::ostringstream out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (!t.empty() && t[0] == '#') continue;
    out << line << '\n';
  }
  return out.str();
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> get(const std::string& key) {
    seen_.insert(key);
    if (auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'))) return trim(*v);
    return std::nullopt;
  }

  void read(const std::string& key, std::string& out) {
    if (auto v = get(key)) out = *v;
  }

  void read(const std::string& key, double& out) {
    if (auto v = get(key)) out = to_double(key, *v);
  }

  void read(const std::string& key, std::size_t& out) {
    if (auto v = get(key)) out = to_size(key, *v);
  }

  void read(const std::string& key, bool& out) {
    if (auto v = get(key)) out = to_bool(key, *v);
  }

  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (auto v = get(key)) {
      out.clear();
      for (const auto& p : split(*v, ',')) out.push_back(to_size(key, p));
    }
  }

  void read(const std::string& key, std::vector<bool>& out) {
    if (auto v = get(key)) {
      out.clear();
      for (const auto& p : split(*v, ',')) out.push_back(to_bool(key, p));
    }
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw ConfigError("config key '" + section + "' appears outside any section");
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (!seen_.count(full)) throw ConfigError("unknown config key '" + full + "'");
      }
    }
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
  }

  static std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
    }
    return out;
  }

  static bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
  }

 private:
  const pt::ptree& tree_;
  std::set<std::string> seen_;
};

Shape parse_shape(const std::string& key, const std::string& text) {
  Shape shape;
  for (const auto& p : split(text, 'x')) shape.push_back(Reader::to_size(key, p));
  if (shape.empty()) throw ConfigError("config key '" + key + "': empty shape");
  return shape;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::string_view init_name(MmtmInit init) {
  switch (init) {
    case MmtmInit::FanIn: return "fan_in";
    case MmtmInit::ZeroHeads: return "zero_heads";
    case MmtmInit::FullyRandom: return "random";
  }
  return "?";
}

MmtmInit parse_init(const std::string& v) {
  for (auto i : {MmtmInit::FanIn, MmtmInit::ZeroHeads, MmtmInit::FullyRandom})
    if (init_name(i) == v) return i;
  throw ConfigError("fusion.init must be fan_in, zero_heads or random, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, bool>) {
      out += xs[i] ? "1" : "0";
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(strip_hash_comments(text));
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || o.find('.') > eq) {
      throw UsageError("override '" + o + "' is not of the form section.key=value");
    }
    tree.put(pt::ptree::path_type(trim(o.substr(0, eq)), '.'), trim(o.substr(eq + 1)));
  }

  ExperimentConfig c;
  Reader r(tree);

  // [task]
  auto& t = c.task;
  r.read("task.num_classes", t.num_classes);
  if (auto v = r.get("task.shapes")) {
    t.modality_shapes.clear();
    for (const auto& s : split(*v, ',')) t.modality_shapes.push_back(parse_shape("task.shapes", s));
  }
  if (auto v = r.get("task.mode")) t.mode = parse_mode(*v);
  r.read("task.corruption_prob", t.corruption_prob);
  r.read("task.noise_sigma", t.noise_sigma);
  r.read("task.signal_amplitude", t.signal_amplitude);
  r.read("task.train_size", t.train_size);
  r.read("task.val_size", t.val_size);
  r.read("task.test_size", t.test_size);
  if (auto v = r.get("task.seed")) t.seed = Reader::to_u64("task.seed", *v);
  if (auto v = r.get("task.data"); v && !v->empty()) c.data_path = *v;

  // [streams]
  r.read("streams.conv_channels", c.conv_channels);
  r.read("streams.conv_pool", c.conv_pool);
  r.read("streams.kernel", c.kernel);
  r.read("streams.dense_units", c.dense_units);
  if (auto v = r.get("streams.use"); v && *v != "all") {
    c.use_modalities.clear();
    for (const auto& p : split(*v, ',')) c.use_modalities.push_back(Reader::to_size("streams.use", p));
  }
  if (auto v = r.get("streams.head")) {
    if (*v == "late") c.head = HeadPolicy::Late;
    else if (*v == "joint") c.head = HeadPolicy::Joint;
    else throw ConfigError("streams.head must be late or joint, got '" + *v + "'");
  }
  if (auto v = r.get("streams.late_mode")) {
    if (*v == "logits") c.late_mode = LateMode::Logits;
    else if (*v == "probabilities") c.late_mode = LateMode::Probabilities;
    else throw ConfigError("streams.late_mode must be logits or probabilities, got '" + *v + "'");
  }

  // [fusion]
  if (auto v = r.get("fusion.variant")) c.variant = parse_fusion_kind(*v);
  r.read("fusion.points", c.points);
  r.read("fusion.bottleneck", c.bottleneck);
  r.read("fusion.gate_mask", c.gate_mask);
  r.read("fusion.relu_on_joint", c.relu_on_joint);
  if (auto v = r.get("fusion.init")) c.init = parse_init(*v);

  // [training]
  auto& tr = c.training;
  r.read("training.momentum", tr.momentum);
  r.read("training.base_lr", tr.base_lr);
  r.read("training.lr_drop_factor", tr.lr_drop_factor);
  r.read("training.patience", tr.patience);
  r.read("training.min_delta", tr.min_delta);
  r.read("training.min_lr", tr.min_lr);
  r.read("training.batch_size", tr.batch_size);
  r.read("training.max_epochs", tr.max_epochs);
  r.read("training.weight_decay", tr.weight_decay);
  r.read("training.excitation_decay", tr.excitation_decay);
  if (auto v = r.get("training.seed")) tr.seed = Reader::to_u64("training.seed", *v);

  // [ablate] / [sweep]
  if (auto v = r.get("ablate.variants")) {
    c.ablate_variants.clear();
    for (const auto& p : split(*v, ',')) c.ablate_variants.push_back(parse_fusion_kind(p));
  }
  if (auto v = r.get("ablate.seeds")) {
    c.seeds.clear();
    for (const auto& p : split(*v, ',')) c.seeds.push_back(Reader::to_u64("ablate.seeds", p));
  }
  r.read("sweep.max_points", c.sweep_max_points);

  r.reject_unknown();
  if (c.conv_pool.size() != c.conv_channels.size()) {
    throw ConfigError("streams.conv_pool needs one entry per conv block");
  }
  t.validate();
  tr.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), overrides);
}

std::string to_text(const ExperimentConfig& c) {
  std::ostringstream o;
  const auto& t = c.task;
  o << "[task]\n";
  o << "num_classes = " << t.num_classes << "\n";
  o << "shapes = ";
  for (std::size_t i = 0; i < t.modality_shapes.size(); ++i) o << (i ? ", " : "") << shape_text(t.modality_shapes[i]);
  o << "\nmode = " << mode_name(t.mode) << "\n";
  o << "corruption_prob = " << num(t.corruption_prob) << "\n";
  o << "noise_sigma = " << num(t.noise_sigma) << "\n";
  o << "signal_amplitude = " << num(t.signal_amplitude) << "\n";
  o << "train_size = " << t.train_size << "\nval_size = " << t.val_size << "\ntest_size = " << t.test_size << "\n";
  o << "seed = " << t.seed << "\n";
  if (c.data_path) o << "data = " << c.data_path->string() << "\n";

  o << "\n[streams]\n";
  o << "conv_channels = " << join(c.conv_channels) << "\n";
  o << "conv_pool = " << join(c.conv_pool) << "\n";
  o << "kernel = " << c.kernel << "\n";
  o << "dense_units = " << join(c.dense_units) << "\n";
  o << "use = " << (c.use_modalities.empty() ? std::string("all") : join(c.use_modalities)) << "\n";
  o << "head = " << (c.head == HeadPolicy::Late ? "late" : "joint") << "\n";
  o << "late_mode = " << (c.late_mode == LateMode::Logits ? "logits" : "probabilities") << "\n";

  o << "\n[fusion]\n";
  o << "variant = " << fusion_kind_name(c.variant) << "\n";
  o << "points = " << c.points << "\n";
  o << "bottleneck = " << c.bottleneck << "\n";
  if (!c.gate_mask.empty()) o << "gate_mask = " << join(c.gate_mask) << "\n";
  o << "relu_on_joint = " << (c.relu_on_joint ? "true" : "false") << "\n";
  o << "init = " << init_name(c.init) << "\n";

  const auto& tr = c.training;
  o << "\n[training]\n";
  o << "momentum = " << num(tr.momentum) << "\n";
  o << "base_lr = " << num(tr.base_lr) << "\n";
  o << "lr_drop_factor = " << num(tr.lr_drop_factor) << "\n";
  o << "patience = " << tr.patience << "\n";
  o << "min_delta = " << num(tr.min_delta) << "\n";
  o << "min_lr = " << num(tr.min_lr) << "\n";
  o << "batch_size = " << tr.batch_size << "\n";
  o << "max_epochs = " << tr.max_epochs << "\n";
  o << "weight_decay = " << num(tr.weight_decay) << "\n";
  o << "excitation_decay = " << num(tr.excitation_decay) << "\n";
  o << "seed = " << tr.seed << "\n";

  o << "\n[ablate]\nvariants = ";
  for (std::size_t i = 0; i < c.ablate_variants.size(); ++i) o << (i ? "," : "") << fusion_kind_name(c.ablate_variants[i]);
  o << "\nseeds = " << join(c.seeds) << "\n";
  o << "\n[sweep]\nmax_points = " << c.sweep_max_points << "\n";
  return o.str();
}

std::string example_config() {
  return "# mmtm experiment configuration (all keys optional; defaults shown)\n" + to_text(ExperimentConfig{});
}

NetworkConfig network_config(const ExperimentConfig& c, const std::vector<Shape>& shapes, FusionKind variant,
                             std::size_t points) {
  NetworkConfig n;
  std::vector<std::size_t> use = c.use_modalities;
  if (use.empty())
    for (std::size_t m = 0; m < shapes.size(); ++m) use.push_back(m);
  for (auto m : use) {
    if (m >= shapes.size()) {
      throw ConfigError("streams.use references modality " + std::to_string(m) + " but the task has " +
                        std::to_string(shapes.size()));
    }
    StreamSpec spec{"m" + std::to_string(m), shapes[m], {}, c.task.num_classes};
    if (shapes[m].size() == 3) {
      for (std::size_t b = 0; b < c.conv_channels.size(); ++b)
        spec.blocks.push_back({BlockKind::Conv, c.conv_channels[b], c.kernel, c.conv_pool[b]});
    } else {
      for (auto u : c.dense_units) spec.blocks.push_back({BlockKind::Dense, u});
    }
    n.streams.push_back(std::move(spec));
  }
  n.stream_modality = use;
  n.variant = variant;
  n.head = c.head;
  n.late_mode = c.late_mode;
  n.bottleneck = c.bottleneck;
  n.gate_mask = c.gate_mask;
  n.relu_on_joint = c.relu_on_joint;
  n.init = c.init;
  n.excitation_decay = c.training.excitation_decay;
  if (uses_fusion_points(variant)) n.plan = suffix_plan(n.streams, points);
  return n;
}

NetworkConfig network_config(const ExperimentConfig& c, const std::vector<Shape>& shapes) {
  return network_config(c, shapes, c.variant, c.points);
}

TrainConfig train_config(const ExperimentConfig& c) { return c.training; }

}  // namespace mmtm
