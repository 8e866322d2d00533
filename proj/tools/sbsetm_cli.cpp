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


// Command-line entry point: simulate, run, eval and export.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sbsetm/checkpoint.hpp"
#include "sbsetm/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> k_init;
  std::optional<std::string> merge;
  std::optional<std::string> trace;
  std::optional<std::string> out;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--k-init", o.k_init, "Topic truncation level K");
  cmd->add_option("--merge", o.merge, "Merge strategy")->check(CLI::IsMember({"cot", "dot"}));
  cmd->add_option("--trace", o.trace, "Tracing variant")
      ->check(CLI::IsMember({"algorithm2", "epsilon"}));
  cmd->add_option("--out", o.out, "Output directory");
}

sbsetm::RunConfig resolve_config(const Overrides& o) {
  sbsetm::RunConfig c = o.config.empty() ? sbsetm::RunConfig{} : sbsetm::load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.k_init) c.k_init = *o.k_init;
  if (o.merge) c.merge = sbsetm::parse_merge_strategy(*o.merge);
  if (o.trace) c.trace = sbsetm::parse_trace_variant(*o.trace);
  if (o.out) c.out = *o.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online stick-breaking embedded topic model"};
  app.set_version_flag("--version", std::string(SBSETM_VERSION));
  app.require_subcommand(1);

  Overrides sim_o;
  auto* sim = app.add_subcommand("simulate", "Write a synthetic stream and its ground truth");
  add_run_flags(sim, sim_o);

  Overrides run_o;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Train, merge and trace over a stream");
  add_run_flags(run, run_o);
  run->add_flag("--quiet", quiet, "Suppress progress output");

  std::vector<std::string> manifests;
  std::string k_real;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Compute the metric report for one or more runs");
  eval->add_option("manifests", manifests, "Run manifests")->required();
  eval->add_option("--k-real", k_real, "JSON file with per-step ground-truth topic counts");
  eval->add_option("--out", eval_out, "Report path (default: standard output)");

  std::string export_manifest;
  std::string what;
  std::string export_out = ".";
  auto* exp = app.add_subcommand("export", "Write topics, pca, freq or matrix artifacts");
  exp->add_option("manifest", export_manifest, "Run manifest")->required();
  exp->add_option("what", what, "topics | pca | freq | matrix")->required();
  exp->add_option("--out", export_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      const auto config = resolve_config(sim_o);
      const fs::path out = sim_o.out ? fs::path(*sim_o.out) : fs::path(config.out) / "stream";
      const int steps = sbsetm::cmd_simulate(config, out);
      std::cout << "wrote " << steps << " timesteps to " << out.string() << "\n";
    } else if (*run) {
      const auto config = resolve_config(run_o);
      sbsetm::RunOptions options;
      if (!quiet) options.progress = &std::cerr;
      const auto outcome = sbsetm::cmd_run(config, options);
      std::cout << (fs::path(config.out) / "manifest.json").string() << "\n";
      (void)outcome;
    } else if (*eval) {
      std::vector<fs::path> paths(manifests.begin(), manifests.end());
      std::optional<fs::path> truth;
      if (!k_real.empty()) truth = k_real;
      const auto report = sbsetm::cmd_eval(paths, truth);
      const std::string text = sbsetm::to_json(report).dump(2) + "\n";
      if (eval_out.empty()) {
        std::cout << text;
      } else {
        sbsetm::write_file_atomic(eval_out, text);
      }
    } else if (*exp) {
      for (const auto& p : sbsetm::cmd_export(export_manifest, what, export_out)) {
        std::cout << p.string() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sbsetm::exit_code_for(e);
  }
  return 0;
}
