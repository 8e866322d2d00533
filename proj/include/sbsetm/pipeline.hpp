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


// The online pipeline behind the command-line tool: run configuration,
// synthetic stream simulation, per-timestep training with merging and
// tracing, evaluation and export.

#ifndef SBSETM_PIPELINE_HPP_
#define SBSETM_PIPELINE_HPP_

#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbsetm/corpus.hpp"
#include "sbsetm/eval.hpp"
#include "sbsetm/gaussot.hpp"
#include "sbsetm/sbetm.hpp"
#include "sbsetm/trace.hpp"
#include "sbsetm/train.hpp"

namespace sbsetm {

enum class MergeStrategy { kCot, kDot };
enum class TraceVariant { kAlgorithm2, kEpsilon };

MergeStrategy parse_merge_strategy(const std::string& s);
TraceVariant parse_trace_variant(const std::string& s);
std::string to_string(MergeStrategy m);
std::string to_string(TraceVariant v);

nlohmann::json to_json(const SyntheticSchedule& s);
SyntheticSchedule synthetic_schedule_from_json(const nlohmann::json& j);

struct RunConfig {
  // Stream source: a directory written by `simulate`, a JSON-lines corpus,
  // or (when empty) the synthetic schedule below, simulated into the run
  // directory.
  std::string stream;
  SyntheticSchedule synthetic = default_schedule();
  std::string embeddings;  // optional "token v1 ... vL" file
  std::uint64_t embedding_seed = 0;
  std::string stopwords;   // optional word list replacing the built-in one
  std::string lemmas;      // optional "token lemma" map
  StreamOptions stream_options;

  int k_init = 15;
  MergeStrategy merge = MergeStrategy::kCot;
  TraceVariant trace = TraceVariant::kAlgorithm2;
  TraceOptions trace_options;
  DimRule dim_rule;
  ActivityRule activity;
  ModelConfig model;  // V and K are set per timestep
  TrainConfig train;  // seed is derived per timestep
  CoherenceMode tc_mode = CoherenceMode::kNpmi;
  std::uint64_t seed = 0;
  std::string out = "run";

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Hash of everything that affects results; the output directory is left out.
std::string config_hash(const RunConfig& c);

// Writes step_NNN.jsonl files, ground_truth.json and schedule.json. Returns
// the number of timesteps.
int cmd_simulate(const RunConfig& config, const std::filesystem::path& out_dir);

// Reads a stream directory or a JSON-lines corpus into per-timestep batches.
std::vector<StreamBatch> load_stream(const std::filesystem::path& path,
                                     const RunConfig& config);

struct RunOptions {
  std::ostream* progress = nullptr;
  int stop_after = -1;  // stop once this timestep is complete (testing aid)
};

struct RunOutcome {
  nlohmann::json manifest;
  int resumed_steps = 0;
  int trained_steps = 0;
  bool complete = false;
};

// Trains every timestep in order, merging and tracing from the second one
// on. Completed timesteps found in the output directory are loaded instead
// of recomputed. Writes manifest.json on completion.
RunOutcome cmd_run(const RunConfig& config, const RunOptions& options = {});

// Per-run TC/TD/H and K_pred series plus, with ground truth and at least two
// runs, the dispersion and combined score. Without an explicit k_real file
// the stream's ground_truth.json is used when present.
MetricReport cmd_eval(std::span<const std::filesystem::path> manifests,
                      const std::optional<std::filesystem::path>& k_real = std::nullopt);

// what: topics | pca | freq | matrix. Returns the written files.
std::vector<std::filesystem::path> cmd_export(const std::filesystem::path& manifest,
                                              const std::string& what,
                                              const std::filesystem::path& out_dir);

// 2 for configuration errors, 3 for numeric failures, 4 for missing or
// malformed input, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace sbsetm

#endif  // SBSETM_PIPELINE_HPP_
