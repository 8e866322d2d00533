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


#include "sbsetm/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "sbsetm/checkpoint.hpp"

namespace sbsetm {

namespace fs = std::filesystem;
using nlohmann::json;

MergeStrategy parse_merge_strategy(const std::string& s) {
  if (s == "cot") return MergeStrategy::kCot;
  if (s == "dot") return MergeStrategy::kDot;
  throw ConfigError("unknown merge strategy '" + s + "' (expected cot or dot)");
}

TraceVariant parse_trace_variant(const std::string& s) {
  if (s == "algorithm2") return TraceVariant::kAlgorithm2;
  if (s == "epsilon") return TraceVariant::kEpsilon;
  throw ConfigError("unknown trace variant '" + s + "' (expected algorithm2 or epsilon)");
}

std::string to_string(MergeStrategy m) { return m == MergeStrategy::kCot ? "cot" : "dot"; }

std::string to_string(TraceVariant v) {
  return v == TraceVariant::kAlgorithm2 ? "algorithm2" : "epsilon";
}

// --- configuration ---------------------------------------------------------

json to_json(const SyntheticSchedule& s) {
  return {{"active_sets", s.active_sets},   {"docs_per_step", s.docs_per_step},
          {"doc_length", s.doc_length},     {"seed", s.seed},
          {"vocab_size", s.vocab_size},     {"num_topics", s.num_topics},
          {"zipf_exponent", s.zipf_exponent}};
}

SyntheticSchedule synthetic_schedule_from_json(const json& j) {
  SyntheticSchedule s = default_schedule();
  if (!j.is_object()) throw ConfigError("synthetic schedule must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "active_sets") s.active_sets = value.get<std::vector<std::vector<int>>>();
      else if (key == "docs_per_step") s.docs_per_step = value.get<int>();
      else if (key == "doc_length") s.doc_length = value.get<int>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "vocab_size") s.vocab_size = value.get<int>();
      else if (key == "num_topics") s.num_topics = value.get<int>();
      else if (key == "zipf_exponent") s.zipf_exponent = value.get<double>();
      else throw ConfigError("synthetic schedule: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic schedule: ") + e.what());
  }
  return s;
}

namespace {

void validate_schedule(const SyntheticSchedule& s) {
  if (s.active_sets.empty()) throw ConfigError("synthetic schedule has no steps");
  if (s.docs_per_step < 1) throw ConfigError("docs_per_step must be >= 1");
  if (s.doc_length < 1) throw ConfigError("doc_length must be >= 1");
  if (s.num_topics < 1) throw ConfigError("num_topics must be >= 1");
  if (s.vocab_size < s.num_topics) throw ConfigError("vocab_size must be >= num_topics");
  if (!(s.zipf_exponent >= 0.0)) throw ConfigError("zipf_exponent must be >= 0");
  for (std::size_t t = 0; t < s.active_sets.size(); ++t) {
    if (s.active_sets[t].empty()) {
      throw ConfigError("empty active topic set at step " + std::to_string(t));
    }
    for (int k : s.active_sets[t]) {
      if (k < 0 || k >= s.num_topics) {
        throw ConfigError("active topic " + std::to_string(k) + " out of range");
      }
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  if (stream.empty()) validate_schedule(synthetic);
  if (k_init < 2) throw ConfigError("k_init must be >= 2");
  if (!(trace_options.epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!(trace_options.ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
  if (!(trace_options.uot.r > 0.0)) throw ConfigError("relaxation must be positive");
  if (trace_options.uot.max_iter < 1) throw ConfigError("uot max_iter must be >= 1");
  if (!(trace_options.uot.tol > 0.0)) throw ConfigError("uot tol must be positive");
  if (stream_options.min_count < 1) throw ConfigError("min_count must be >= 1");
  if (!(stream_options.max_doc_frac > 0.0 && stream_options.max_doc_frac <= 1.0)) {
    throw ConfigError("max_doc_frac must be in (0, 1]");
  }
  if (stream_options.batch_size < 0) throw ConfigError("batch_size must be >= 0");
  ModelConfig m = model;
  m.V = std::max(m.V, 1);
  m.K = k_init;
  m.validate();
  train.validate();
  if (out.empty()) throw ConfigError("output directory must be set");
  for (const auto* p : {&stream, &embeddings, &stopwords, &lemmas}) {
    if (!p->empty() && !fs::exists(*p)) throw InputError("path does not exist: " + *p);
  }
}

json to_json(const RunConfig& c) {
  json model = to_json(c.model);
  model.erase("V");
  model.erase("K");
  json train = to_json(c.train);
  train.erase("seed");
  return {{"stream", c.stream},
          {"synthetic", to_json(c.synthetic)},
          {"embeddings", c.embeddings},
          {"embedding_seed", c.embedding_seed},
          {"stopwords", c.stopwords},
          {"lemmas", c.lemmas},
          {"min_count", c.stream_options.min_count},
          {"max_doc_frac", c.stream_options.max_doc_frac},
          {"batch_size", c.stream_options.batch_size},
          {"k_init", c.k_init},
          {"merge", to_string(c.merge)},
          {"trace", to_string(c.trace)},
          {"epsilon", c.trace_options.epsilon},
          {"ridge", c.trace_options.ridge},
          {"relaxation", c.trace_options.uot.r},
          {"uot_max_iter", c.trace_options.uot.max_iter},
          {"uot_tol", c.trace_options.uot.tol},
          {"dim_rule", to_json(c.dim_rule)},
          {"activity", to_json(c.activity)},
          {"model", model},
          {"train", train},
          {"tc_mode", to_string(c.tc_mode)},
          {"seed", c.seed},
          {"out", c.out}};
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stream") c.stream = value.get<std::string>();
      else if (key == "synthetic") c.synthetic = synthetic_schedule_from_json(value);
      else if (key == "embeddings") c.embeddings = value.get<std::string>();
      else if (key == "embedding_seed") c.embedding_seed = value.get<std::uint64_t>();
      else if (key == "stopwords") c.stopwords = value.get<std::string>();
      else if (key == "lemmas") c.lemmas = value.get<std::string>();
      else if (key == "min_count") c.stream_options.min_count = value.get<int>();
      else if (key == "max_doc_frac") c.stream_options.max_doc_frac = value.get<double>();
      else if (key == "batch_size") c.stream_options.batch_size = value.get<int>();
      else if (key == "k_init") c.k_init = value.get<int>();
      else if (key == "merge") c.merge = parse_merge_strategy(value.get<std::string>());
      else if (key == "trace") c.trace = parse_trace_variant(value.get<std::string>());
      else if (key == "epsilon") c.trace_options.epsilon = value.get<double>();
      else if (key == "ridge") c.trace_options.ridge = value.get<double>();
      else if (key == "relaxation") c.trace_options.uot.r = value.get<double>();
      else if (key == "uot_max_iter") c.trace_options.uot.max_iter = value.get<int>();
      else if (key == "uot_tol") c.trace_options.uot.tol = value.get<double>();
      else if (key == "dim_rule") c.dim_rule = dim_rule_from_json(value);
      else if (key == "activity") c.activity = activity_rule_from_json(value);
      else if (key == "model") c.model = model_config_from_json(value, c.model);
      else if (key == "train") c.train = train_config_from_json(value, c.train);
      else if (key == "tc_mode") c.tc_mode = parse_coherence_mode(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "out") c.out = value.get<std::string>();
      else throw ConfigError("run config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out");
  return hex64(fnv1a64(j.dump()));
}

// --- streams ---------------------------------------------------------------

namespace {

std::string step_name(int t) {
  std::ostringstream os;
  os << "t" << std::setw(3) << std::setfill('0') << t;
  return os.str();
}

std::string step_file(int t) {
  std::ostringstream os;
  os << "step_" << std::setw(3) << std::setfill('0') << t << ".jsonl";
  return os.str();
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("file not found: " + path.string());
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

Normalizer make_normalizer(const RunConfig& c) {
  StopwordSet stop = c.stopwords.empty() ? default_english_stopwords() : read_word_list(c.stopwords);
  LemmaMap lemmas = c.lemmas.empty() ? LemmaMap{} : read_lemma_map(c.lemmas);
  return Normalizer(std::move(stop), std::move(lemmas));
}

std::vector<fs::path> stream_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("step_", 0) == 0 && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("stream directory has no step files: " + dir.string());
  return files;
}

std::string stream_hash(const fs::path& path) {
  if (!fs::is_directory(path)) return file_hash(path);
  std::uint64_t h = fnv1a64("");
  for (const auto& f : stream_files(path)) h = fnv1a64(read_file(f), h);
  return hex64(h);
}

}  // namespace

int cmd_simulate(const RunConfig& config, const fs::path& out_dir) {
  validate_schedule(config.synthetic);
  const auto& s = config.synthetic;
  const auto tokens = synthetic_tokens(s.vocab_size);
  const Matrix dists = block_topic_word_dists(s.num_topics, s.vocab_size, s.zipf_exponent);
  const auto sim = generate_synthetic_documents(s, dists, tokens);
  fs::create_directories(out_dir);
  const int T = static_cast<int>(s.active_sets.size());
  std::vector<std::vector<RawDocument>> per_step(static_cast<std::size_t>(T));
  for (const auto& d : sim.documents) per_step[static_cast<std::size_t>(d.timestep)].push_back(d);
  for (int t = 0; t < T; ++t) {
    const fs::path tmp = out_dir / (step_file(t) + ".tmp");
    write_jsonl_corpus(tmp, per_step[static_cast<std::size_t>(t)]);
    fs::rename(tmp, out_dir / step_file(t));
  }
  write_json(out_dir / "ground_truth.json", {{"k_real", sim.truth.k_real},
                                             {"active_sets", sim.truth.active_sets},
                                             {"doc_topics", sim.truth.doc_topics}});
  write_json(out_dir / "schedule.json", to_json(s));
  return T;
}

std::vector<StreamBatch> load_stream(const fs::path& path, const RunConfig& config) {
  if (!fs::exists(path)) throw InputError("stream not found: " + path.string());
  const Normalizer normalizer = make_normalizer(config);
  if (!fs::is_directory(path)) {
    const auto docs = read_jsonl_corpus(path);
    return make_stream(docs, normalizer, config.stream_options);
  }
  std::vector<StreamBatch> out;
  int t = 0;
  for (const auto& f : stream_files(path)) {
    auto docs = read_jsonl_corpus(f);
    for (auto& d : docs) d.timestep = t;
    out.push_back(make_batch(t, docs, normalizer, config.stream_options.min_count,
                             config.stream_options.max_doc_frac));
    ++t;
  }
  return out;
}

// --- run -------------------------------------------------------------------

namespace {

struct StepState {
  ModelParams params;
  std::vector<int> active;
};

Matrix select_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

EmbeddingTable make_embedding_table(const RunConfig& c, const std::vector<StreamBatch>& batches) {
  if (c.embeddings.empty()) return EmbeddingTable(c.model.L, c.embedding_seed);
  std::unordered_set<std::string> keep;
  for (const auto& b : batches) keep.insert(b.vocabulary.tokens.begin(), b.vocabulary.tokens.end());
  return EmbeddingTable::load(c.embeddings, c.model.L, c.embedding_seed, &keep);
}

// Resolves where the stream lives and, for synthetic runs, simulates it
// into the run directory. The returned string is what the manifest records.
std::pair<fs::path, std::string> prepare_stream(const RunConfig& c, const fs::path& run_dir) {
  if (!c.stream.empty()) {
    const auto p = fs::absolute(c.stream);
    return {p, p.string()};
  }
  const fs::path dir = run_dir / "stream";
  const fs::path marker = dir / "schedule.json";
  if (!fs::exists(marker) || read_json(marker) != to_json(c.synthetic)) cmd_simulate(c, dir);
  return {dir, "stream"};
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

void log_progress(std::ostream* os, const std::string& msg) {
  if (os) *os << msg << std::endl;
}

}  // namespace

RunOutcome cmd_run(const RunConfig& config, const RunOptions& options) {
  config.validate();
  const fs::path run_dir(config.out);
  fs::create_directories(run_dir / "steps");
  const std::string chash = config_hash(config);
  write_json(run_dir / "config.json", to_json(config));

  const auto [stream_path, stream_ref] = prepare_stream(config, run_dir);
  const auto batches = load_stream(stream_path, config);
  const EmbeddingTable table = make_embedding_table(config, batches);
  const int T = static_cast<int>(batches.size());

  RunOutcome outcome;
  json steps = json::array();
  TopicRegistry registry;
  std::optional<StepState> prev;

  for (int t = 0; t < T; ++t) {
    const fs::path dir = run_dir / "steps" / step_name(t);
    const fs::path rel = fs::path("steps") / step_name(t);
    const fs::path done = dir / "step.json";
    json step_info;
    if (fs::exists(done) && read_json(done).value("config_hash", "") == chash) {
      step_info = read_json(done);
      auto ck = load_checkpoint(dir / "checkpoint.bin");
      registry = TopicRegistry::from_json(read_json(dir / "registry.json"));
      prev = StepState{std::move(ck.params), step_info.at("active").get<std::vector<int>>()};
      ++outcome.resumed_steps;
      log_progress(options.progress, "t=" + std::to_string(t) + " resumed");
    } else {
      fs::create_directories(dir);
      const auto& batch = batches[static_cast<std::size_t>(t)];
      ModelConfig mc = config.model;
      mc.V = batch.vocabulary.size();
      mc.K = config.k_init;
      const std::uint64_t seed_t = derive_seed(config.seed, "step" + std::to_string(t));
      ModelParams init;
      if (!prev) {
        auto emb = embed_vocabulary(table, batch.vocabulary.tokens);
        init = init_params(mc, std::move(emb.rho), batch.vocabulary.tokens, seed_t);
      } else {
        init = warm_start(prev->params, mc, batch.vocabulary.tokens, table, seed_t);
      }
      TrainConfig tc = config.train;
      tc.seed = seed_t;
      std::ofstream train_log(dir / "train_log.jsonl");
      TrainResult result;
      try {
        result = train_timestep(batch, init, mc, tc, &train_log);
      } catch (const DivergenceError& e) {
        json failed = {{"format", "sbsetm-run"},
                       {"status", "diverged"},
                       {"failed_step", t},
                       {"epoch", e.epoch()},
                       {"message", e.what()},
                       {"last_checkpoint",
                        steps.empty() ? json(nullptr) : steps.back().at("checkpoint")}};
        write_json(run_dir / "manifest.json", failed);
        throw;
      }
      ModelParams params = std::move(result.params);
      const Matrix thetas = infer_thetas(batch.documents, params, mc);
      const auto act = active_topics(thetas, config.activity);
      const auto argmax = argmax_rows(thetas);
      std::map<int, int> counts;
      for (int k : argmax) ++counts[k];

      TopicAssignment assignment;
      std::vector<int> prev_active;
      if (!prev) {
        assignment = all_new(act.k_pred);
      } else {
        prev_active = prev->active;
        if (config.merge == MergeStrategy::kCot) {
          params.alpha =
              cot_merge(params.alpha, prev->params.alpha, config.dim_rule, t, t - 1).embeddings;
        }
        const Matrix a_t = select_rows(params.alpha, act.active);
        const Matrix a_prev = select_rows(prev->params.alpha, prev_active);
        assignment = config.trace == TraceVariant::kAlgorithm2
                         ? trace_step(a_t, a_prev, config.trace_options)
                         : epsilon_neighbor_match(a_t, a_prev, config.trace_options.epsilon);
        if (config.merge == MergeStrategy::kDot) {
          for (const auto& m : assignment.matches) {
            params.alpha.row(act.active[static_cast<std::size_t>(m.src)]) =
                0.5 * (a_t.row(m.src) + a_prev.row(m.dst));
          }
        }
      }
      registry.update(assignment, t, act.active, prev_active, counts);
      params = round_to_float32(params);

      save_checkpoint(dir / "checkpoint.bin", params, mc, {{"t", t}, {"config_hash", chash}});
      write_json(dir / "assignment.json", to_json(assignment, t));
      write_json(dir / "registry.json", registry.to_json());
      std::vector<std::string> doc_ids;
      for (const auto& d : batch.documents) doc_ids.push_back(d.id);
      step_info = {{"t", t},
                   {"config_hash", chash},
                   {"k_pred", act.k_pred},
                   {"active", act.active},
                   {"dropped", batch.dropped},
                   {"doc_ids", doc_ids},
                   {"argmax", argmax}};
      write_json(done, step_info);
      prev = StepState{std::move(params), act.active};
      ++outcome.trained_steps;
      log_progress(options.progress, "t=" + std::to_string(t) + " k_pred=" +
                                         std::to_string(act.k_pred) + " new=" +
                                         std::to_string(assignment.new_topics.size()) + " (" +
                                         std::to_string(result.seconds) + " s)");
    }
    steps.push_back({{"t", t},
                     {"k_pred", step_info.at("k_pred")},
                     {"checkpoint", (rel / "checkpoint.bin").generic_string()},
                     {"checkpoint_hash", file_hash(dir / "checkpoint.bin")},
                     {"assignment", (rel / "assignment.json").generic_string()},
                     {"assignment_hash", file_hash(dir / "assignment.json")},
                     {"step", (rel / "step.json").generic_string()},
                     {"step_hash", file_hash(done)}});
    if (options.stop_after >= 0 && t >= options.stop_after && t + 1 < T) {
      outcome.manifest = {{"format", "sbsetm-run"}, {"status", "incomplete"}, {"steps", steps}};
      return outcome;
    }
  }

  write_json(run_dir / "registry.json", registry.to_json());
  json manifest = {{"format", "sbsetm-run"},
                   {"version", 1},
                   {"status", "complete"},
                   {"code_version", SBSETM_VERSION},
                   {"config", "config.json"},
                   {"config_hash", chash},
                   {"stream", {{"path", stream_ref}, {"hash", stream_hash(stream_path)}}},
                   {"steps", steps},
                   {"registry", "registry.json"},
                   {"registry_hash", file_hash(run_dir / "registry.json")}};
  write_json(run_dir / "manifest.json", manifest);
  const fs::path manifest_path = run_dir / "manifest.json";
  const auto report = cmd_eval(std::span<const fs::path>(&manifest_path, 1));
  write_json(run_dir / "metrics.json", to_json(report));
  manifest["metrics"] = "metrics.json";
  manifest["metrics_hash"] = file_hash(run_dir / "metrics.json");
  write_json(manifest_path, manifest);
  outcome.manifest = std::move(manifest);
  outcome.complete = true;
  return outcome;
}

// --- eval and export -------------------------------------------------------

namespace {

struct LoadedRun {
  fs::path dir;
  json manifest;
  RunConfig config;
  std::vector<StreamBatch> batches;
  TopicRegistry registry;
  std::vector<json> steps;  // step.json contents
};

LoadedRun load_run(const fs::path& manifest_path) {
  LoadedRun r;
  r.dir = manifest_path.parent_path();
  r.manifest = read_json(manifest_path);
  if (r.manifest.value("status", "") != "complete") {
    throw InputError("run is not complete: " + manifest_path.string());
  }
  r.config = run_config_from_json(read_json(resolve(r.dir, r.manifest.at("config"))));
  r.batches = load_stream(resolve(r.dir, r.manifest.at("stream").at("path")), r.config);
  r.registry = TopicRegistry::from_json(read_json(resolve(r.dir, r.manifest.at("registry"))));
  for (const auto& s : r.manifest.at("steps")) {
    r.steps.push_back(read_json(resolve(r.dir, s.at("step"))));
  }
  if (r.steps.size() != r.batches.size()) {
    throw InputError("run and stream disagree on the number of timesteps");
  }
  return r;
}

ModelParams load_step_params(const LoadedRun& r, std::size_t t) {
  return load_checkpoint(resolve(r.dir, r.manifest.at("steps")[t].at("checkpoint"))).params;
}

std::vector<std::vector<std::string>> doc_tokens(const StreamBatch& b) {
  std::vector<std::vector<std::string>> out;
  for (const auto& d : b.documents) {
    std::vector<std::string> toks;
    for (const auto& [id, c] : d.counts) toks.push_back(b.vocabulary.tokens[static_cast<std::size_t>(id)]);
    out.push_back(std::move(toks));
  }
  return out;
}

RunMetrics run_metrics(const LoadedRun& r) {
  RunMetrics m;
  m.name = "k" + std::to_string(r.config.k_init) + "-seed" + std::to_string(r.config.seed) +
           "-" + to_string(r.config.merge);
  m.k_init = r.config.k_init;
  double tc_sum = 0.0;
  double td_sum = 0.0;
  int tc_n = 0;
  int td_n = 0;
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    m.k_pred.push_back(r.steps[t].at("k_pred").get<int>());
    const auto active = r.steps[t].at("active").get<std::vector<int>>();
    const auto params = load_step_params(r, t);
    const Matrix beta = topic_word_matrix(params.rho, params.alpha);
    const int V = static_cast<int>(beta.rows());
    TopicWords td_words;
    TopicWords tc_words;
    for (int k : active) {
      td_words.push_back(top_words(beta, k, params.vocab, std::min(25, V)));
      tc_words.push_back(top_words(beta, k, params.vocab, std::min(10, V)));
    }
    if (!td_words.empty()) {
      td_sum += topic_diversity(td_words);
      ++td_n;
    }
    try {
      tc_sum += topic_coherence(tc_words, doc_tokens(r.batches[t]), r.config.tc_mode);
      ++tc_n;
    } catch (const InputError&) {
    }
  }
  m.mean_k_pred = std::accumulate(m.k_pred.begin(), m.k_pred.end(), 0.0) /
                  static_cast<double>(std::max<std::size_t>(m.k_pred.size(), 1));
  if (tc_n > 0) m.tc = tc_sum / tc_n;
  if (td_n > 0) m.td = td_sum / td_n;
  if (m.tc && m.td && *m.tc > 0.0 && *m.td > 0.0) m.h = harmonic_mean(*m.tc, *m.td);
  return m;
}

}  // namespace

MetricReport cmd_eval(std::span<const fs::path> manifests,
                      const std::optional<fs::path>& k_real) {
  if (manifests.empty()) throw ConfigError("eval: no manifests given");
  MetricReport report;
  std::optional<fs::path> truth = k_real;
  for (const auto& path : manifests) {
    const auto run = load_run(path);
    report.tc_mode = run.config.tc_mode;
    report.runs.push_back(run_metrics(run));
    if (!truth) {
      const fs::path gt = resolve(run.dir, run.manifest.at("stream").at("path")) / "ground_truth.json";
      if (fs::exists(gt)) truth = gt;
    }
  }
  if (truth) {
    const json j = read_json(*truth);
    try {
      report.k_real = (j.is_array() ? j : j.at("k_real")).get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw InputError("k_real file " + truth->string() + ": " + e.what());
    }
    for (const auto& r : report.runs) {
      if (r.k_pred.size() != report.k_real.size()) {
        throw InputError("k_real length does not match the number of timesteps");
      }
    }
  }
  finalize_report(report);
  return report;
}

std::vector<fs::path> cmd_export(const fs::path& manifest, const std::string& what,
                                 const fs::path& out_dir) {
  static const std::set<std::string> kTargets = {"topics", "pca", "freq", "matrix"};
  if (!kTargets.count(what)) {
    throw ConfigError("unknown export target '" + what + "' (expected topics, pca, freq or matrix)");
  }
  const auto run = load_run(manifest);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  const std::size_t T = run.steps.size();

  auto argmax_of = [&](std::size_t t) { return run.steps[t].at("argmax").get<std::vector<int>>(); };

  if (what == "topics") {
    json out = json::array();
    for (std::size_t t = 0; t < T; ++t) {
      const auto params = load_step_params(run, t);
      const Matrix beta = topic_word_matrix(params.rho, params.alpha);
      json topics = json::array();
      for (int k : run.steps[t].at("active").get<std::vector<int>>()) {
        topics.push_back({{"local", k},
                          {"global", run.registry.global_id(static_cast<int>(t), k)},
                          {"words", top_words(beta, k, params.vocab,
                                              std::min<int>(10, static_cast<int>(beta.rows())))}});
      }
      out.push_back({{"t", t}, {"topics", topics}});
    }
    written.push_back(out_dir / "topics.json");
    write_json(written.back(), out);
  } else if (what == "pca") {
    std::vector<PcaPoint> points;
    std::vector<Vector> rows;
    for (std::size_t t = 0; t < T; ++t) {
      const auto params = load_step_params(run, t);
      for (int k : run.steps[t].at("active").get<std::vector<int>>()) {
        points.push_back({run.registry.global_id(static_cast<int>(t), k), static_cast<int>(t)});
        rows.push_back(params.alpha.row(k).transpose());
      }
    }
    Matrix X(static_cast<Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Index>(i)) = rows[i].transpose();
    const auto proj = pca_project(X, 2);
    std::ostringstream os;
    write_pca_csv(os, points, proj.coords);
    written.push_back(out_dir / "pca.csv");
    write_file_atomic(written.back(), os.str());
  } else if (what == "freq") {
    std::vector<std::vector<int>> argmax;
    for (std::size_t t = 0; t < T; ++t) argmax.push_back(argmax_of(t));
    const Matrix series = topic_frequency_series(run.registry, argmax);
    std::ostringstream os;
    write_frequency_csv(os, run.registry, series);
    written.push_back(out_dir / "freq.csv");
    write_file_atomic(written.back(), os.str());
  } else {
    std::vector<std::optional<std::string>> labels;
    std::vector<int> gids;
    for (std::size_t t = 0; t < T; ++t) {
      const auto argmax = argmax_of(t);
      const auto& docs = run.batches[t].documents;
      for (std::size_t d = 0; d < docs.size(); ++d) {
        if (!docs[d].label) throw InputError("matrix export needs a labeled corpus");
        const int g = run.registry.global_id(static_cast<int>(t), argmax[d]);
        if (g < 0) continue;
        labels.push_back(docs[d].label);
        gids.push_back(g);
      }
    }
    const auto m = topic_term_count_matrix(labels, gids);
    std::ostringstream os;
    write_matrix_csv(os, m);
    written.push_back(out_dir / "matrix.csv");
    write_file_atomic(written.back(), os.str());
  }
  return written;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const InputError*>(&e)) return 4;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 4;
  if (dynamic_cast<const json::exception*>(&e)) return 2;
  return 1;
}

}  // namespace sbsetm
