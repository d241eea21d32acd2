// Python bindings: configs, datasets, networks, training, costs, gradcheck.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmtm/checkpoint.hpp"
#include "mmtm/config.hpp"
#include "mmtm/costs.hpp"
#include "mmtm/errors.hpp"
#include "mmtm/experiments.hpp"
#include "mmtm/gradcheck.hpp"
#include "mmtm/random.hpp"

namespace py = pybind11;
using namespace mmtm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& xs) {
  std::vector<Tensor> out;
  for (const auto& x : xs) out.push_back(to_tensor(x));
  return out;
}

std::vector<Array> to_arrays(const std::vector<Tensor>& ts) {
  std::vector<Array> out;
  for (const auto& t : ts) out.push_back(to_array(t));
  return out;
}

const std::vector<Sample>& split_of(const Dataset& d, const std::string& name) {
  if (name == "train") return d.train;
  if (name == "val") return d.val;
  if (name == "test") return d.test;
  throw UsageError("unknown split '" + name + "'; valid splits: train, val, test");
}

py::dict run_dict(const RunRecord& r) {
  py::list epochs;
  for (const auto& e : r.epochs) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["lr"] = e.lr;
    d["train_loss"] = e.train_loss;
    d["train_acc"] = e.train_accuracy;
    d["val_loss"] = e.val_loss;
    d["val_acc"] = e.val_accuracy;
    epochs.append(d);
  }
  py::dict out;
  out["epochs"] = epochs;
  out["best_epoch"] = r.best_epoch;
  out["test_loss"] = r.test_loss;
  out["test_acc"] = r.test_accuracy;
  out["seed"] = r.seed;
  out["config"] = r.config_echo;
  return out;
}

struct Mmtm {
  MmtmConfig config;
  MmtmState state;

  std::pair<std::vector<Array>, std::vector<Array>> forward(const std::vector<Array>& features) const {
    Tape tape;
    std::vector<Var> in;
    for (const auto& f : features) in.push_back(tape.constant(to_tensor(f)));
    const MmtmResult r = mmtm_forward(in, config, bind(tape, state, Binding::Frozen));
    std::vector<Tensor> outs, exc;
    for (const auto& v : r.outputs) outs.push_back(v.value());
    for (const auto& v : r.excitations) exc.push_back(v.value());
    return {to_arrays(outs), to_arrays(exc)};
  }
};

MmtmInit parse_init(const std::string& s) {
  if (s == "fan_in") return MmtmInit::FanIn;
  if (s == "zero_heads") return MmtmInit::ZeroHeads;
  if (s == "random") return MmtmInit::FullyRandom;
  throw UsageError("init must be fan_in, zero_heads or random, got '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal transfer module: fusion networks on synthetic tasks";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<VersionError>(m, "VersionError", base.ptr());

  // ---- config ----
  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def("to_text", [](const ExperimentConfig& c) { return to_text(c); })
      .def_property_readonly("variant", [](const ExperimentConfig& c) { return std::string(fusion_kind_name(c.variant)); })
      .def_readwrite("points", &ExperimentConfig::points)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_property_readonly("modality_shapes", [](const ExperimentConfig& c) { return c.task.modality_shapes; })
      .def("__repr__", [](const ExperimentConfig& c) { return "<Config variant=" + std::string(fusion_kind_name(c.variant)) + ">"; });
  m.def("parse_config", [](const std::string& text, const std::vector<std::string>& overrides) {
    return parse_config(text, overrides);
  }, py::arg("text"), py::arg("overrides") = std::vector<std::string>{});
  m.def("load_config", [](const std::filesystem::path& p, const std::vector<std::string>& overrides) {
    return load_config(p, overrides);
  }, py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
  m.def("fusion_variants", [] {
    std::vector<std::string> out;
    for (auto k : all_fusion_kinds()) out.emplace_back(fusion_kind_name(k));
    return out;
  });

  // ---- data ----
  py::class_<Dataset>(m, "Dataset")
      .def("size", [](const Dataset& d, const std::string& split) { return split_of(d, split).size(); },
           py::arg("split"))
      .def("sample", [](const Dataset& d, const std::string& split, std::size_t i) {
        const auto& s = split_of(d, split);
        if (i >= s.size()) throw py::index_error("sample index out of range");
        return py::make_tuple(to_arrays(s[i].inputs), s[i].label, s[i].corrupted);
      }, py::arg("split"), py::arg("index"))
      .def("labels", [](const Dataset& d, const std::string& split) {
        std::vector<std::size_t> out;
        for (const auto& s : split_of(d, split)) out.push_back(s.label);
        return out;
      }, py::arg("split"))
      .def_property_readonly("num_classes", [](const Dataset& d) { return d.spec.num_classes; })
      .def_property_readonly("modality_shapes", [](const Dataset& d) { return d.spec.modality_shapes; })
      .def_property_readonly("mode", [](const Dataset& d) { return std::string(mode_name(d.spec.mode)); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });
  m.def("generate", [](const ExperimentConfig& c) { return generate(c.task); }, py::arg("config"));
  m.def("generate_aligned", [](const ExperimentConfig& c) { return generate(aligned_variant(c.task)); },
        py::arg("config"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("encode_dataset", [](const Dataset& d) {
    const auto b = encode_dataset(d);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("decode_dataset", [](const py::bytes& b) {
    const std::string s = b;
    return decode_dataset(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  });

  // ---- the module on its own ----
  py::class_<Mmtm>(m, "Mmtm")
      .def(py::init([](std::vector<std::size_t> channels, std::uint64_t seed, const std::string& init,
                       std::size_t bottleneck) {
             MmtmConfig cfg;
             cfg.channel_counts = std::move(channels);
             cfg.bottleneck = bottleneck;
             cfg.validate();
             Rng rng(seed);
             return Mmtm{cfg, init_mmtm_state(cfg, rng, parse_init(init))};
           }),
           py::arg("channels"), py::arg("seed") = 0, py::arg("init") = "fan_in", py::arg("bottleneck") = 0)
      .def("forward", &Mmtm::forward, py::arg("features"),
           "Returns (gated features, excitations); features are channels-last arrays.")
      .def_property_readonly("bottleneck", [](const Mmtm& x) { return x.config.bottleneck_size(); })
      .def_property_readonly("parameter_count", [](const Mmtm& x) { return mmtm_parameter_count(x.config); });
  m.def("mmtm_parameter_count", [](std::vector<std::size_t> channels) {
    MmtmConfig cfg;
    cfg.channel_counts = std::move(channels);
    return mmtm_parameter_count(cfg);
  }, py::arg("channels"));

  // ---- networks ----
  py::class_<FusionNetwork>(m, "Network")
      .def(py::init([](const ExperimentConfig& c, std::vector<Shape> shapes, std::uint64_t seed) {
             if (shapes.empty()) shapes = c.task.modality_shapes;
             return FusionNetwork::build(network_config(c, shapes), seed);
           }),
           py::arg("config"), py::arg("shapes") = std::vector<Shape>{}, py::arg("seed") = 0)
      .def("logits", [](const FusionNetwork& n, const std::vector<Array>& inputs) {
        return to_array(n.logits(to_tensors(inputs)));
      }, py::arg("inputs"))
      .def("evaluate", [](const FusionNetwork& n, const Dataset& d, const std::string& split) {
        const Evaluation e = evaluate(n, split_of(d, split));
        return py::make_tuple(e.loss, e.accuracy);
      }, py::arg("dataset"), py::arg("split") = "test")
      .def("train", [](FusionNetwork& n, const Dataset& d, const ExperimentConfig& c) {
        RunRecord r;
        {
          py::gil_scoped_release release;
          r = train(n, d, train_config(c));
        }
        return run_dict(r);
      }, py::arg("dataset"), py::arg("config"))
      .def("parameters", [](const FusionNetwork& n) {
        std::vector<std::pair<std::string, Array>> out;
        for (const auto& p : n.parameters()) out.emplace_back(p.name, to_array(*p.tensor));
        return out;
      })
      .def_property_readonly("parameter_count", &FusionNetwork::parameter_count)
      .def("cost_csv", [](const FusionNetwork& n) { return report(n).to_csv(); })
      .def("save", [](const FusionNetwork& n, const std::filesystem::path& p, const ExperimentConfig& c,
                      std::uint64_t seed) { save_checkpoint(n, to_text(c), seed, p); },
           py::arg("path"), py::arg("config"), py::arg("seed"))
      .def_static("load", [](const std::filesystem::path& p, std::vector<Shape> shapes) {
        const Checkpoint ck = load_checkpoint(p);
        const ExperimentConfig c = parse_config(ck.config_echo);
        if (shapes.empty()) shapes = c.task.modality_shapes;
        FusionNetwork n = FusionNetwork::build(network_config(c, shapes), ck.seed);
        load_parameters(n, ck);
        return n;
      }, py::arg("path"), py::arg("shapes") = std::vector<Shape>{});

  // ---- experiments ----
  m.def("run_experiment", [](const Dataset& d, const ExperimentConfig& c, const std::string& variant,
                             std::size_t points, std::uint64_t seed) {
    RunResult r;
    {
      py::gil_scoped_release release;
      r = run_experiment(d, c, parse_fusion_kind(variant), points, seed);
    }
    py::dict out = run_dict(r.record);
    out["params"] = r.params;
    out["macs"] = r.macs;
    return out;
  }, py::arg("dataset"), py::arg("config"), py::arg("variant"), py::arg("points"), py::arg("seed"));

  m.def("gradcheck", [](std::uint64_t seed) {
    py::list out;
    for (const auto& r : gradcheck_all(seed)) {
      py::dict d;
      d["variant"] = r.variant;
      d["scalars"] = r.parameters;
      d["max_rel_error"] = r.max_error;
      d["worst"] = r.worst_parameter;
      d["passed"] = r.passed();
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 7);
}
