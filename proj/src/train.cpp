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


#include "sbsetm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_map>

namespace sbsetm {

void TrainConfig::validate() const {
  if (!(lr_max > 0)) throw ConfigError("train: lr_max must be positive");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be nonnegative");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (!(warmup_frac > 0 && warmup_frac < 1)) {
    throw ConfigError("train: warmup_frac must be in (0, 1)");
  }
  if (samples < 1) throw ConfigError("train: samples must be >= 1");
  if (step_size < 1) throw ConfigError("train: step_size must be >= 1");
  if (!(step_gamma > 0 && step_gamma <= 1)) throw ConfigError("train: step_gamma must be in (0, 1]");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("train: Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("train: adam_eps must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr_max", c.lr_max},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"warmup_frac", c.warmup_frac},
          {"samples", c.samples},
          {"seed", c.seed},
          {"schedule", c.schedule == Schedule::kStep ? "step" : "one_cycle"},
          {"step_size", c.step_size},
          {"step_gamma", c.step_gamma},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr_max") c.lr_max = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "warmup_frac") c.warmup_frac = value.get<double>();
      else if (key == "samples") c.samples = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "schedule") {
        const auto s = value.get<std::string>();
        if (s == "one_cycle") c.schedule = Schedule::kOneCycle;
        else if (s == "step") c.schedule = Schedule::kStep;
        else throw ConfigError("train: unknown schedule '" + s + "'");
      } else if (key == "step_size") c.step_size = value.get<int>();
      else if (key == "step_gamma") c.step_gamma = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"lr", e.lr},     {"loss", e.loss},      {"rec", e.rec},
          {"kl_g", e.kl_g},   {"kl_s", e.kl_s}, {"seconds", e.seconds}};
}

GradientResult gradients(const ModelParams& params, const ModelConfig& config,
                         const BowBatch& batch, const NoiseDraws& noise, Mode mode) {
  GradientResult r;
  r.grads = params.zeros_like();
  r.elbo = evaluate_batch(params, config, batch, noise, mode, &r.grads);
  for (const auto& t : std::as_const(r.grads).tensors()) {
    for (Index i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t.data[i])) throw NumericError("non-finite gradient in " + t.name);
    }
  }
  return r;
}

GradientResult gradients(const ModelParams& params, const ModelConfig& config,
                         const BowBatch& batch, int samples, Mode mode, Rng& rng) {
  const auto noise = draw_noise(config, batch.size(), samples, mode, rng);
  return gradients(params, config, batch, noise, mode);
}

OptState make_opt_state(const ModelParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, OptState& state, double lr,
               double weight_decay, double beta1, double beta2, double eps) {
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (p.size() != g.size() || p.size() != m.size()) {
    throw ConfigError("adam_step: parameter and gradient layouts differ");
  }
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t].role != Role::kTrainable) continue;
    if (p[t].size() != g[t].size() || p[t].size() != m[t].size()) {
      throw ConfigError("adam_step: shape mismatch in " + p[t].name);
    }
    for (Index i = 0; i < p[t].size(); ++i) {
      const double gi = g[t].data[i];
      m[t].data[i] = beta1 * m[t].data[i] + (1.0 - beta1) * gi;
      v[t].data[i] = beta2 * v[t].data[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m[t].data[i] / c1;
      const double vhat = v[t].data[i] / c2;
      p[t].data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[t].data[i]);
    }
  }
}

double one_cycle_lr(long step, long total_steps, double lr_max, double warmup_frac) {
  const double lo = lr_max / 25.0;
  const double floor = lr_max / 1e4;
  const double warm = warmup_frac * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warm) return lo + (lr_max - lo) * s / warm;
  const double span = static_cast<double>(total_steps) - warm;
  const double p = span > 0 ? std::min(1.0, (s - warm) / span) : 1.0;
  return floor + (lr_max - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

double step_lr(long step, double lr_max, int step_size, double gamma) {
  return lr_max * std::pow(gamma, static_cast<double>(step / step_size));
}

double scheduled_lr(const TrainConfig& c, long step, long total_steps) {
  return c.schedule == Schedule::kStep ? step_lr(step, c.lr_max, c.step_size, c.step_gamma)
                                       : one_cycle_lr(step, total_steps, c.lr_max, c.warmup_frac);
}

TrainResult train_timestep(std::span<const Document> docs, const ModelParams& init,
                           const ModelConfig& mc, const TrainConfig& tc, std::ostream* log) {
  using Clock = std::chrono::steady_clock;
  mc.validate();
  tc.validate();
  check_shapes(init, mc);
  const auto start = Clock::now();
  TrainResult result;
  result.params = init;
  if (tc.epochs == 0 || docs.empty()) return result;

  const std::size_t n = docs.size();
  const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
  const long per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total = per_epoch * tc.epochs;
  Rng rng(derive_seed(tc.seed, "train"));
  OptState opt = make_opt_state(init);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  ModelParams& p = result.params;
  ModelParams last_good = p;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog e;
    e.epoch = epoch;
    e.lr = scheduled_lr(tc, opt.step, total);
    for (std::size_t lo = 0; lo < n; lo += bs) {
      const std::size_t hi = std::min(n, lo + bs);
      std::vector<const Document*> chunk;
      for (std::size_t i = lo; i < hi; ++i) chunk.push_back(&docs[order[i]]);
      const auto batch = make_bow_batch(std::span<const Document* const>(chunk), mc.V);
      GradientResult g;
      try {
        g = gradients(p, mc, batch, tc.samples, Mode::kTrain, rng);
      } catch (const NumericError& err) {
        throw DivergenceError(std::string("training diverged at epoch ") +
                                  std::to_string(epoch) + ": " + err.what(),
                              std::move(last_good), epoch);
      }
      const double lr = scheduled_lr(tc, opt.step, total);
      adam_step(p, g.grads, opt, lr, tc.weight_decay, tc.beta1, tc.beta2, tc.adam_eps);
      update_running_stats(p, mc, g.elbo.bn_stats);
      const double w = static_cast<double>(hi - lo) / static_cast<double>(n);
      e.loss += w * g.elbo.components.loss;
      e.rec += w * g.elbo.components.rec;
      e.kl_g += w * g.elbo.components.kl_g;
      e.kl_s += w * g.elbo.components.kl_s;
    }
    e.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
    result.log.push_back(e);
    if (log) *log << to_json(e).dump() << '\n';
    last_good = p;
  }
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

TrainResult train_timestep(const StreamBatch& batch, const ModelParams& init,
                           const ModelConfig& model_config, const TrainConfig& config,
                           std::ostream* log) {
  return train_timestep(std::span<const Document>(batch.documents), init, model_config, config,
                        log);
}

namespace {

void copy_overlap(const ConstTensorRef& src, TensorRef& dst) {
  const Index rows = std::min(src.rows, dst.rows);
  const Index cols = std::min(src.cols, dst.cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) dst.data[i + j * dst.rows] = src.data[i + j * src.rows];
  }
}

}  // namespace

ModelParams warm_start(const ModelParams& prev, const ModelConfig& new_config,
                       const std::vector<std::string>& new_vocab, const EmbeddingTable& table,
                       std::uint64_t seed) {
  new_config.validate();
  if (prev.L() != new_config.L || table.dim() != new_config.L) {
    throw ConfigError("warm_start: embedding dimension L differs");
  }
  const bool same_vocab = new_vocab == prev.vocab && prev.V() == new_config.V;
  if (!same_vocab && static_cast<int>(new_vocab.size()) != new_config.V) {
    throw ConfigError("warm_start: vocabulary size differs from V");
  }
  Matrix rho;
  if (same_vocab) {
    rho = prev.rho;
  } else {
    rho.resize(new_config.V, new_config.L);
    for (int v = 0; v < new_config.V; ++v) rho.row(v) = table.row(new_vocab[v]).transpose();
  }
  ModelParams out = init_params(new_config, std::move(rho), new_vocab, seed);

  const auto src = prev.tensors();
  auto dst = out.tensors();
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < src.size(); ++i) by_name[src[i].name] = i;
  for (auto& d : dst) {
    if (d.name == "rho") continue;
    auto it = by_name.find(d.name);
    if (it == by_name.end()) continue;
    const auto& s = src[it->second];
    if (d.name == "enc.in.weight" && !same_vocab) {
      std::unordered_map<std::string, Index> prev_col;
      for (std::size_t v = 0; v < prev.vocab.size(); ++v) {
        prev_col[prev.vocab[v]] = static_cast<Index>(v);
      }
      const Index rows = std::min(s.rows, d.rows);
      for (Index j = 0; j < d.cols; ++j) {
        auto pc = prev_col.find(new_vocab[static_cast<std::size_t>(j)]);
        if (pc == prev_col.end()) continue;
        for (Index i = 0; i < rows; ++i) {
          d.data[i + j * d.rows] = s.data[i + pc->second * s.rows];
        }
      }
      continue;
    }
    copy_overlap(s, d);
  }
  for (Index k = prev.K() - 1; k < out.stick_a_b.size(); ++k) out.stick_a_b(k) += 0.5;
  return out;
}

ModelParams warm_start(const ModelParams& prev, const ModelConfig& new_config,
                       std::uint64_t seed) {
  if (new_config.V != prev.V()) {
    throw ConfigError("warm_start: vocabulary changed; an embedding table is required");
  }
  EmbeddingTable table(prev.L(), seed);
  return warm_start(prev, new_config, prev.vocab, table, seed);
}

}  // namespace sbsetm
