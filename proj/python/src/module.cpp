// Copyright 2026 The cvpb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Python bindings: tensors cross as float32 numpy arrays, configs as JSON
// text, records and reports through the same files the CLI writes.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <string>
#include <vector>

#include "cvpb/cli.hpp"
#include "cvpb/config.hpp"
#include "cvpb/container.hpp"
#include "cvpb/corruption.hpp"
#include "cvpb/data.hpp"
#include "cvpb/harness.hpp"
#include "cvpb/metrics.hpp"
#include "cvpb/prompts.hpp"
#include "cvpb/report.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

cvpb::Tensor to_tensor(const Array& a) {
  cvpb::Shape shape(a.shape(), a.shape() + a.ndim());
  return cvpb::Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const cvpb::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.ptr(), t.ptr() + t.numel(), out.mutable_data());
  return out;
}

py::tuple dataset_tuple(const cvpb::Dataset& d) {
  return py::make_tuple(to_array(d.images), py::array_t<int>(static_cast<py::ssize_t>(d.labels.size()), d.labels.data()));
}

py::dict summary_dict(const cvpb::Summary& s) {
  py::dict methods;
  for (const auto& [name, m] : s.by_method) {
    py::dict d;
    d["avg_accuracy"] = m.avg_accuracy;
    d["avg_error"] = m.avg_error;
    d["cells"] = m.cells;
    d["per_kind"] = m.per_kind;
    d["diff"] = m.diff ? py::object(py::float_(*m.diff)) : py::object(py::none());
    methods[py::str(name)] = d;
  }
  py::dict out;
  out["methods"] = methods;
  out["complete"] = s.complete;
  out["baseline"] = s.baseline;
  return out;
}

cvpb::ErrorTable error_table(const std::map<std::string, std::map<int, double>>& cells) {
  cvpb::ErrorTable t;
  for (const auto& [kind, row] : cells)
    for (const auto& [sev, rate] : row) t.set(kind, sev, rate);
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Test-time adaptation with convolutional visual prompts";

  py::register_exception<cvpb::IntegrityError>(m, "IntegrityError");
  py::register_exception<cvpb::FormatError>(m, "FormatError");
  py::register_exception<cvpb::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<cvpb::ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("corruption_kinds", [] {
    std::vector<std::string> out;
    for (auto k : cvpb::kImplementedKinds) out.emplace_back(cvpb::corruption_name(k));
    return out;
  });
  m.def(
      "corrupt",
      [](const Array& images, const std::string& kind, int severity, std::uint64_t seed) {
        return to_array(cvpb::corrupt(to_tensor(images), {cvpb::parse_corruption(kind), severity, seed}));
      },
      py::arg("images"), py::arg("kind"), py::arg("severity"), py::arg("seed") = 0,
      "Corrupts an NCHW float batch in [0, 1].");

  m.def(
      "synth_shapes",
      [](int count, int num_classes, std::uint64_t seed, float variability, float background_noise) {
        cvpb::ShapesParams p;
        p.count = count;
        p.num_classes = num_classes;
        p.variability = variability;
        p.background_noise = background_noise;
        return dataset_tuple(cvpb::synth_shapes(p, seed));
      },
      py::arg("count"), py::arg("num_classes") = 4, py::arg("seed") = 0, py::arg("variability") = 1.0f,
      py::arg("background_noise") = 0.04f, "Returns (images [N,3,32,32], labels [N]).");
  m.def(
      "load_cifar10", [](const std::filesystem::path& dir, bool train) { return dataset_tuple(cvpb::load_cifar10(dir, train)); },
      py::arg("dir"), py::arg("train") = false);
  m.def(
      "parse_cifar10",
      [](const py::bytes& raw) {
        const std::string s = raw;
        return dataset_tuple(cvpb::parse_cifar10(
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
      },
      py::arg("raw"));

  m.def(
      "apply_cvp",
      [](const Array& images, const Array& kernel, float lambda) {
        cvpb::CvpParams p;
        p.kernel = to_tensor(kernel);
        p.lambda = lambda;
        return to_array(cvpb::apply_cvp(to_tensor(images), p));
      },
      py::arg("images"), py::arg("kernel"), py::arg("lam"));
  m.def("sharpness_kernel", [](int k) { return to_array(cvpb::sharpness_kernel(k)); }, py::arg("k") = 3);

  m.def("ssim", [](const Array& x, const Array& y) { return cvpb::ssim(to_tensor(x), to_tensor(y)); });
  m.def(
      "swd",
      [](const Array& a, const Array& b, int n_proj, double p, std::uint64_t seed) {
        const auto r = cvpb::swd(to_tensor(a), to_tensor(b), n_proj, p, seed);
        return py::make_tuple(r.mean, r.std);
      },
      py::arg("a"), py::arg("b"), py::arg("n_proj") = 128, py::arg("p") = 2.0, py::arg("seed") = 0,
      "Returns (mean, std) over projections.");
  m.def("mce", [](const std::map<std::string, std::map<int, double>>& model,
                  const std::map<std::string, std::map<int, double>>& reference) {
    return cvpb::mce(error_table(model), error_table(reference));
  });
  m.def("reversal_residual",
        [](const Array& clean, const Array& adapted) { return cvpb::reversal_residual(to_tensor(clean), to_tensor(adapted)); });

  m.def("default_config", [] { return cvpb::config_to_json(cvpb::ExperimentConfig::defaults()); },
        "Default experiment config as JSON text.");
  m.def(
      "normalize_config", [](const std::string& text) { return cvpb::config_to_json(cvpb::config_from_json(text)); },
      "Parses, validates and re-serializes a config.");
  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::filesystem::path& out_dir) {
        const cvpb::ExperimentConfig cfg = cvpb::config_from_json(config_json);
        cvpb::ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = cvpb::run_experiment(cfg, nullptr, out_dir);
        }
        py::dict d = summary_dict(res.summary);
        d["clean_accuracy"] = res.clean_accuracy;
        d["out_dir"] = res.out_dir;
        return d;
      },
      py::arg("config_json"), py::arg("out_dir"));
  m.def(
      "summarize", [](const std::filesystem::path& records) { return summary_dict(cvpb::aggregate(cvpb::read_records(records))); },
      py::arg("records"), "Aggregates a records.ldjson file.");
  m.def(
      "emit_report",
      [](const std::filesystem::path& records, const std::string& layout, const std::filesystem::path& dir) {
        const cvpb::Layout l = cvpb::parse_layout(layout);
        const cvpb::Report r = l == cvpb::Layout::kFig5
                                   ? cvpb::emit_fig5(cvpb::read_reversal_records(records), dir)
                                   : cvpb::emit_report(cvpb::read_records(records), l, dir);
        return py::make_tuple(r.markdown, r.warnings);
      },
      py::arg("records"), py::arg("layout"), py::arg("dir"), "Returns (markdown, warnings).");

  m.def(
      "load_container",
      [](const std::filesystem::path& path) {
        const cvpb::Container c = cvpb::load_container(path);
        py::dict tensors;
        for (const auto& [name, t] : c.tensors) tensors[py::str(name)] = to_array(t);
        return py::make_tuple(c.metadata, tensors);
      },
      py::arg("path"), "Returns (metadata, {name: array}).");
  m.def(
      "save_container",
      [](const std::filesystem::path& path, const std::map<std::string, std::string>& metadata,
         const std::vector<std::pair<std::string, Array>>& tensors) {
        cvpb::Container c;
        c.metadata = metadata;
        for (const auto& [name, a] : tensors) c.tensors.emplace_back(name, to_tensor(a));
        cvpb::save_container(path, c);
      },
      py::arg("path"), py::arg("metadata"), py::arg("tensors"));

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "cvpb");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cvpb::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line; returns (exit_code, stdout, stderr).");
}
