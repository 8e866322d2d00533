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


// Gradients, Adam, learning-rate schedules, the per-timestep training loop
// and warm starting between timesteps.

#ifndef SBSETM_TRAIN_HPP_
#define SBSETM_TRAIN_HPP_

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbsetm/corpus.hpp"
#include "sbsetm/sbetm.hpp"

namespace sbsetm {

enum class Schedule { kOneCycle, kStep };

struct TrainConfig {
  double lr_max = 0.01;
  double weight_decay = 0.006;
  int batch_size = 256;
  int epochs = 300;
  double warmup_frac = 0.1;
  int samples = 1;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::kOneCycle;
  int step_size = 5000;
  double step_gamma = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Gradients of the loss for one minibatch. Throws NumericError naming the
// first tensor with a non-finite entry.
struct GradientResult {
  ModelParams grads;
  ElboResult elbo;
};

GradientResult gradients(const ModelParams& params, const ModelConfig& config,
                         const BowBatch& batch, const NoiseDraws& noise, Mode mode);

GradientResult gradients(const ModelParams& params, const ModelConfig& config,
                         const BowBatch& batch, int samples, Mode mode, Rng& rng);

struct OptState {
  ModelParams m;
  ModelParams v;
  long step = 0;
};

OptState make_opt_state(const ModelParams& params);

// Bias-corrected Adam update with decoupled weight decay on trainable
// tensors. Fixed tensors and buffers are left alone.
void adam_step(ModelParams& params, const ModelParams& grads, OptState& state, double lr,
               double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Linear ramp from lr_max/25 to lr_max over warmup_frac * total_steps, then
// cosine decay to lr_max/1e4.
double one_cycle_lr(long step, long total_steps, double lr_max, double warmup_frac);

double step_lr(long step, double lr_max, int step_size, double gamma);

double scheduled_lr(const TrainConfig& config, long step, long total_steps);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double rec = 0.0;
  double kl_g = 0.0;
  double kl_s = 0.0;
  double seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  double seconds = 0.0;
};

// Raised when the loss becomes non-finite. Carries the parameters at the end
// of the last completed epoch.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, ModelParams last_good, int epoch)
      : NumericError(what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const ModelParams& last_good() const { return last_good_; }
  int epoch() const { return epoch_; }

 private:
  ModelParams last_good_;
  int epoch_;
};

// Runs `config.epochs` passes over the batch. When `log` is given one JSON
// line per epoch is written to it.
TrainResult train_timestep(std::span<const Document> docs, const ModelParams& init,
                           const ModelConfig& model_config, const TrainConfig& config,
                           std::ostream* log = nullptr);

TrainResult train_timestep(const StreamBatch& batch, const ModelParams& init,
                           const ModelConfig& model_config, const TrainConfig& config,
                           std::ostream* log = nullptr);

// Initializes a model for `new_config` from `prev`. Tensors are copied on
// their overlap; the input projection is remapped column-by-token when the
// vocabulary changes; everything else gets Glorot-uniform values. Stick-a
// bias entries for topics beyond the previous K are raised by 0.5. rho is
// rebuilt from `table` when the vocabulary changes.
ModelParams warm_start(const ModelParams& prev, const ModelConfig& new_config,
                       const std::vector<std::string>& new_vocab, const EmbeddingTable& table,
                       std::uint64_t seed);

// Same vocabulary as `prev`.
ModelParams warm_start(const ModelParams& prev, const ModelConfig& new_config,
                       std::uint64_t seed);

}  // namespace sbsetm

#endif  // SBSETM_TRAIN_HPP_
