// Copyright 2026 The sbsetm Authors.
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


#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sbsetm/corpus.hpp"
#include "sbsetm/eval.hpp"
#include "sbsetm/gaussot.hpp"
#include "sbsetm/kl.hpp"
#include "sbsetm/pipeline.hpp"
#include "sbsetm/sbetm.hpp"
#include "sbsetm/trace.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

py::dict assignment_dict(const sbsetm::TopicAssignment& a) {
  py::list matches;
  for (const auto& m : a.matches) matches.append(py::make_tuple(m.src, m.dst, m.w));
  py::dict d;
  d["matches"] = matches;
  d["new"] = a.new_topics;
  d["threshold"] = a.threshold;
  return d;
}

sbsetm::TopicAssignment assignment_from(const py::dict& d) {
  sbsetm::TopicAssignment a;
  for (auto item : d["matches"]) {
    auto t = item.cast<py::tuple>();
    a.matches.push_back({t[0].cast<int>(), t[1].cast<int>(), t[2].cast<double>()});
  }
  a.new_topics = d["new"].cast<std::vector<int>>();
  return a;
}

py::object parse_json(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

std::string dump_json(const py::object& obj) {
  return py::module_::import("json").attr("dumps")(obj).cast<std::string>();
}

}  // namespace

PYBIND11_MODULE(_sbsetm, m) {
  m.doc() = "Online stick-breaking embedded topic model";
  m.attr("__version__") = SBSETM_VERSION;

  py::register_exception<sbsetm::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<sbsetm::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<sbsetm::InputError>(m, "InputError", PyExc_OSError);

  m.def("tokenize", [](const std::string& text) { return sbsetm::Normalizer()(text); },
        py::arg("text"));

  m.def("stick_break", py::overload_cast<const sbsetm::Matrix&>(&sbsetm::stick_break),
        py::arg("nu"));
  m.def("sample_kumaraswamy",
        py::overload_cast<double, double, double, double>(&sbsetm::sample_kumaraswamy),
        py::arg("a"), py::arg("b"), py::arg("u"), py::arg("delta_u") = 1e-6);
  m.def("kumaraswamy_mean", &sbsetm::kumaraswamy_mean, py::arg("a"), py::arg("b"));
  m.def(
      "kl_kumaraswamy_beta",
      [](double a, double b, double a0, double b0, const std::string& method, int terms) {
        return sbsetm::kl_kumaraswamy_beta(a, b, a0, b0, sbsetm::parse_kl_method(method), terms);
      },
      py::arg("a"), py::arg("b"), py::arg("a0") = 0.5, py::arg("b0") = 0.5,
      py::arg("method") = "quadrature", py::arg("taylor_terms") = 10);
  m.def("topic_word_matrix", &sbsetm::topic_word_matrix, py::arg("rho"), py::arg("alpha"));

  m.def("w2_gaussian", [](const sbsetm::Matrix& x, const sbsetm::Matrix& y) {
    return sbsetm::w2_gaussian(sbsetm::fit_low_rank_gaussian(x), sbsetm::fit_low_rank_gaussian(y));
  }, py::arg("alpha_t"), py::arg("alpha_prev"));
  m.def("cot_merge", [](const sbsetm::Matrix& x, const sbsetm::Matrix& y) {
    return sbsetm::cot_merge(x, y).embeddings;
  }, py::arg("alpha_t"), py::arg("alpha_prev"));

  m.def("cosine_cost", &sbsetm::cosine_cost, py::arg("a"), py::arg("b"));
  m.def(
      "uot_mm",
      [](const sbsetm::Matrix& c, const sbsetm::Vector& a, const sbsetm::Vector& b, double r,
         int max_iter, double tol) {
        sbsetm::UotOptions o;
        o.r = r;
        o.max_iter = max_iter;
        o.tol = tol;
        const auto plan = sbsetm::uot_mm(c, a, b, o);
        py::dict d;
        d["P"] = plan.P;
        d["iterations"] = plan.iterations;
        d["converged"] = plan.converged;
        return d;
      },
      py::arg("cost"), py::arg("a"), py::arg("b"), py::arg("r") = 0.09, py::arg("max_iter") = 1000,
      py::arg("tol") = 1e-9);
  m.def("match_threshold", &sbsetm::match_threshold, py::arg("alpha_t"), py::arg("alpha_prev"),
        py::arg("epsilon") = 0.01, py::arg("ridge") = 1e-6);
  m.def(
      "trace_step",
      [](const sbsetm::Matrix& x, const sbsetm::Matrix& y, double epsilon) {
        sbsetm::TraceOptions o;
        o.epsilon = epsilon;
        return assignment_dict(sbsetm::trace_step(x, y, o));
      },
      py::arg("alpha_t"), py::arg("alpha_prev"), py::arg("epsilon") = 0.01);
  m.def(
      "epsilon_neighbor_match",
      [](const sbsetm::Matrix& x, const sbsetm::Matrix& y, double epsilon) {
        return assignment_dict(sbsetm::epsilon_neighbor_match(x, y, epsilon));
      },
      py::arg("alpha_t"), py::arg("alpha_prev"), py::arg("epsilon") = 0.01);
  m.def(
      "dot_merge",
      [](const sbsetm::Matrix& x, const sbsetm::Matrix& y, const py::dict& a) {
        return sbsetm::dot_merge(x, y, assignment_from(a));
      },
      py::arg("alpha_t"), py::arg("alpha_prev"), py::arg("assignment"));

  m.def("topic_diversity", &sbsetm::topic_diversity, py::arg("topics"));
  m.def(
      "topic_coherence",
      [](const sbsetm::TopicWords& topics, const std::vector<std::vector<std::string>>& docs,
         const std::string& mode, int top_n) {
        return sbsetm::topic_coherence(topics, docs, sbsetm::parse_coherence_mode(mode), top_n);
      },
      py::arg("topics"), py::arg("ref_docs"), py::arg("mode") = "npmi", py::arg("top_n") = 10);
  m.def("harmonic_mean", &sbsetm::harmonic_mean, py::arg("tc"), py::arg("td"));
  m.def(
      "dispersion_delta",
      [](const std::vector<double>& k_preds, double k_real) {
        const auto d = sbsetm::dispersion_delta(k_preds, k_real);
        return py::make_tuple(d.errors, d.delta);
      },
      py::arg("k_preds"), py::arg("k_real"));
  m.def("p_metric", &sbsetm::p_metric, py::arg("delta"), py::arg("h"));
  m.def(
      "pca_project",
      [](const sbsetm::Matrix& x, int dims) { return sbsetm::pca_project(x, dims).coords; },
      py::arg("embeddings"), py::arg("dims") = 2);

  m.def(
      "simulate",
      [](const py::dict& config, const fs::path& out_dir) {
        return sbsetm::cmd_simulate(sbsetm::run_config_from_json(
                                        nlohmann::json::parse(dump_json(config))),
                                    out_dir);
      },
      py::arg("config"), py::arg("out_dir"));
  m.def(
      "run",
      [](const py::dict& config) {
        const auto c = sbsetm::run_config_from_json(nlohmann::json::parse(dump_json(config)));
        sbsetm::RunOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = sbsetm::cmd_run(c);
        }
        return parse_json(outcome.manifest.dump());
      },
      py::arg("config"));
  m.def(
      "evaluate",
      [](const std::vector<fs::path>& manifests, std::optional<fs::path> k_real) {
        return parse_json(sbsetm::to_json(sbsetm::cmd_eval(manifests, k_real)).dump());
      },
      py::arg("manifests"), py::arg("k_real") = std::nullopt);
  m.def("export", &sbsetm::cmd_export, py::arg("manifest"), py::arg("what"),
        py::arg("out_dir"));
}
