/* Copyright 2026 The vidattn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "vidattn/attention.hpp"
#include "vidattn/errors.hpp"
#include "vidattn/harness/commands.hpp"
#include "vidattn/harness/config.hpp"
#include "vidattn/model.hpp"
#include "vidattn/projector.hpp"
#include "vidattn/rope.hpp"

namespace py = pybind11;
using namespace vidattn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

PositionalStrategy strategy_arg(const std::string& name) {
  const auto s = parse_strategy(name);
  if (!s) throw ArgumentError("unknown strategy '" + name + "'");
  return *s;
}

ChainingMode mode_arg(const std::string& name) {
  const auto m = parse_mode(name);
  if (!m) throw ArgumentError("unknown mode '" + name + "'");
  return *m;
}

py::dict trace_dict(const AttentionTrace& trace) {
  py::dict d;
  d["weights"] = to_array(trace.weights);
  d["logits"] = to_array(trace.logits);
  d["logits_plain"] = to_array(trace.logits_plain);
  d["logits_rotated"] = to_array(trace.logits_rotated);
  return d;
}

harness::RunConfig config_arg(const std::string& text) { return harness::parse_config_text(text); }

// Model state built from a config, kept alive on the Python side.
struct Model {
  harness::RunConfig config;
  harness::Setup setup;

  explicit Model(const std::string& text)
      : config(config_arg(text)), setup(harness::build_setup(config)) {}

  MixedSequence sequence(const std::optional<Array>& visual, const std::vector<std::size_t>& prompt) const {
    return assemble(visual ? to_tensor(*visual) : Tensor(), prompt);
  }
};

}  // namespace

PYBIND11_MODULE(_vidattn, m) {
  m.doc() = "Mixed visual/text attention with pluggable rotary strategies";
  py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("strategies", [] {
    std::vector<std::string> names;
    for (PositionalStrategy s : kAllStrategies) names.emplace_back(strategy_name(s));
    return names;
  });

  py::class_<RotaryTable>(m, "RotaryTable")
      .def(py::init<std::size_t, std::size_t, double>(), py::arg("head_dim"),
           py::arg("max_positions"), py::arg("base") = 10000.0)
      .def_property_readonly("head_dim", &RotaryTable::head_dim)
      .def_property_readonly("max_positions", &RotaryTable::max_positions)
      .def("angle", &RotaryTable::angle, py::arg("pos"), py::arg("pair"));

  m.def(
      "apply_rotary",
      [](const RotaryTable& table, const Array& x, const std::vector<std::size_t>& positions) {
        return to_array(apply_rotary(table, to_tensor(x), positions));
      },
      py::arg("table"), py::arg("x"), py::arg("positions"));

  py::class_<AttentionParams>(m, "AttentionParams")
      .def_static(
          "random",
          [](std::uint64_t seed, std::size_t heads, std::size_t head_dim, double scale) {
            SeededRng rng(seed);
            return AttentionParams::random(rng, heads, head_dim, scale);
          },
          py::arg("seed"), py::arg("heads"), py::arg("head_dim"), py::arg("scale") = 0.5)
      .def_readonly("heads", &AttentionParams::heads)
      .def_readonly("head_dim", &AttentionParams::head_dim)
      .def_property_readonly("wq", [](const AttentionParams& p) { return to_array(p.wq); })
      .def_property_readonly("wk", [](const AttentionParams& p) { return to_array(p.wk); })
      .def_property_readonly("wv", [](const AttentionParams& p) { return to_array(p.wv); })
      .def_property_readonly("wo", [](const AttentionParams& p) { return to_array(p.wo); });

  m.def(
      "attention_forward",
      [](const AttentionParams& params, const RotaryTable& table, const Array& x,
         const std::vector<bool>& visual, const std::vector<std::size_t>& positions,
         const std::string& strategy) {
        const AttentionResult r = attention_forward(params, table, to_tensor(x), ModalityMask(visual),
                                                    positions, strategy_arg(strategy));
        return py::make_tuple(to_array(r.output), trace_dict(r.trace));
      },
      py::arg("params"), py::arg("table"), py::arg("x"), py::arg("visual"), py::arg("positions"),
      py::arg("strategy"));

  m.def(
      "merge_logits",
      [](const Array& plain, const Array& rotated, const std::vector<bool>& visual) {
        return to_array(merge_logits(to_tensor(plain), to_tensor(rotated), ModalityMask(visual)));
      },
      py::arg("plain"), py::arg("rotated"), py::arg("visual"));

  m.def(
      "subsample_tokens",
      [](const Array& tokens, std::size_t stride, const std::string& mode) {
        return to_array(subsample_tokens(to_tensor(tokens), stride, mode_arg(mode)));
      },
      py::arg("tokens"), py::arg("stride"), py::arg("mode") = "independent");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("config_text") = "")
      .def_property_readonly("config_text", [](const Model& self) { return self.config.to_text(); })
      .def_property_readonly("vocab", [](const Model& self) { return self.config.decoder.vocab; })
      .def(
          "project_video",
          [](const Model& self, const Array& features, const std::string& mode) {
            return to_array(project_video(self.setup.projector, VideoFeatures(to_tensor(features)),
                                          mode_arg(mode)));
          },
          py::arg("features"), py::arg("mode") = "independent")
      .def(
          "sample_video",
          [](const Model& self, std::uint64_t seed) {
            const Episode ep = sample_episode(self.setup.spec, seed, 0);
            return py::make_tuple(to_array(ep.video.tensor()), ep.label);
          },
          py::arg("seed"))
      .def(
          "forward",
          [](const Model& self, const std::optional<Array>& visual,
             const std::vector<std::size_t>& prompt, const std::string& strategy) {
            const DecoderOutput out =
                decoder_forward_traced(self.setup.decoder, self.sequence(visual, prompt), strategy_arg(strategy));
            py::list layers;
            for (const AttentionTrace& t : out.layers) layers.append(trace_dict(t));
            return py::make_tuple(to_array(out.logits), layers);
          },
          py::arg("visual"), py::arg("prompt"), py::arg("strategy") = "edvt")
      .def(
          "greedy_decode",
          [](const Model& self, const std::optional<Array>& visual,
             const std::vector<std::size_t>& prompt, std::size_t max_new, std::size_t stop_id,
             const std::string& strategy) {
            return greedy_decode(self.setup.decoder, self.sequence(visual, prompt), max_new, stop_id,
                                 strategy_arg(strategy));
          },
          py::arg("visual"), py::arg("prompt"), py::arg("max_new"), py::arg("stop_id"),
          py::arg("strategy") = "edvt");

  m.def(
      "sweep",
      [](const std::vector<std::size_t>& lengths, const std::vector<std::string>& strategies,
         const std::string& config_text) {
        const harness::RunConfig config = config_arg(config_text);
        std::vector<PositionalStrategy> parsed;
        for (const std::string& s : strategies) parsed.push_back(strategy_arg(s));
        const harness::SweepResult r = harness::run_sweep(config, lengths, parsed);
        py::list rows;
        for (const harness::SweepRow& row : r.rows) {
          py::dict d;
          d["strategy"] = std::string(strategy_name(row.strategy));
          d["distractors"] = row.distractors;
          d["head"] = row.head;
          d["visual_mass"] = row.visual_mass;
          d["max_dev"] = row.max_dev;
          d["logits"] = row.logits;
          rows.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["failures"] = r.failures;
        out["csv"] = r.csv;
        return out;
      },
      py::arg("lengths"), py::arg("strategies"), py::arg("config_text") = "");
}
