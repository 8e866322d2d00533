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

// Stick-breaking embedded topic model for a single timestep.
//
// Batched quantities are stored column-per-document: an H x B matrix holds
// the hidden state of B documents.

#ifndef SBSETM_SBETM_HPP_
#define SBSETM_SBETM_HPP_

#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "json.hpp"
#include "sbsetm/common.hpp"
#include "sbsetm/corpus.hpp"
#include "sbsetm/kl.hpp"

namespace sbsetm {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct ModelConfig {
  int V = 0;
  int K = 15;
  int L = 300;
  int H = 64;
  int num_blocks = 1;
  double a0 = 0.5;
  double b0 = 0.5;
  double omega_r = 1.0;
  double omega_g = 1.0;
  double omega_s = 0.05;
  double dropout = 0.1;
  KlMethod kl_method = KlMethod::kQuadrature;
  int taylor_terms = 10;
  double delta_u = 1e-6;
  double eps_sp = 1e-4;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

enum class Role { kFixed, kTrainable, kBuffer };

struct TensorRef {
  std::string name;
  double* data;
  Index rows;
  Index cols;
  Role role;
  Index size() const { return rows * cols; }
};

struct ConstTensorRef {
  std::string name;
  const double* data;
  Index rows;
  Index cols;
  Role role;
  Index size() const { return rows * cols; }
};

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
};

// Linear layer followed by batch normalization.
struct LinearBn {
  Matrix w;
  Vector b;
  BatchNorm bn;
};

struct ModelParams {
  Matrix rho;    // V x L, fixed
  Matrix alpha;  // K x L
  Matrix enc_w;  // H x V
  Vector enc_b;
  std::vector<LinearBn> blocks;  // residual blocks, H x H
  LinearBn mu_head;              // H x H
  LinearBn logvar_head;          // H x H
  Matrix stick_a_w;              // (K-1) x H
  Vector stick_a_b;
  Matrix stick_b_w;
  Vector stick_b_b;
  std::vector<std::string> vocab;  // token per row of rho

  int V() const { return static_cast<int>(rho.rows()); }
  int K() const { return static_cast<int>(alpha.rows()); }
  int L() const { return static_cast<int>(alpha.cols()); }
  int H() const { return static_cast<int>(enc_w.rows()); }

  // Every tensor in a fixed order. Matrices are column-major.
  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;

  // Same shapes, all entries zero. Used as a gradient container.
  ModelParams zeros_like() const;
};

// All tensors zero-filled with the shapes implied by `config`; batch-norm
// scales and running variances are one.
ModelParams zero_params(const ModelConfig& config);

// Glorot-uniform weights, zero biases, identity batch norm.
ModelParams init_params(const ModelConfig& config, Matrix rho,
                        std::vector<std::string> vocab, std::uint64_t seed);

void check_shapes(const ModelParams& params, const ModelConfig& config);

// --- batched documents -----------------------------------------------------

struct BowBatch {
  SparseMatrix counts;  // V x B raw counts
  SparseMatrix freqs;   // V x B, columns sum to 1
  Index size() const { return counts.cols(); }
};

BowBatch make_bow_batch(std::span<const Document> docs, int V);
BowBatch make_bow_batch(std::span<const Document* const> docs, int V);

// --- primitive operations --------------------------------------------------

enum class Mode {
  kTrain,     // batch statistics, dropout on
  kEval,      // running statistics, dropout off
  kFrozenBn,  // running statistics, dropout as supplied by the noise draws
};

struct GaussianPosterior {
  Matrix mu;      // H x B
  Matrix logvar;  // H x B
};

// Masks hold 0 or 1/(1-rate); empty means no dropout.
struct NoiseDraws {
  std::vector<Matrix> dropout_masks;  // one per block, H x B
  std::vector<Matrix> eps;            // one per sample, H x B
  std::vector<Matrix> u;              // one per sample, (K-1) x B
  int samples() const { return static_cast<int>(eps.size()); }
};

NoiseDraws draw_noise(const ModelConfig& config, Index batch, int samples, Mode mode,
                      Rng& rng);

GaussianPosterior encode(const SparseMatrix& freqs, const ModelParams& params,
                         const ModelConfig& config, Mode mode,
                         const std::vector<Matrix>& dropout_masks = {});

// Single document; a batch of one always uses running statistics.
GaussianPosterior encode(const Vector& w_norm, const ModelParams& params,
                         const ModelConfig& config, Mode mode, Rng& rng);

Matrix reparameterize(const GaussianPosterior& post, const Matrix& noise);

struct StickShapes {
  Matrix a;  // (K-1) x B
  Matrix b;
};

StickShapes stick_params(const Matrix& z, const ModelParams& params,
                         const ModelConfig& config);

double sample_kumaraswamy(double a, double b, double u, double delta_u = 1e-6);
Matrix sample_kumaraswamy(const Matrix& a, const Matrix& b, const Matrix& u,
                          double delta_u = 1e-6);

// nu: (K-1) x B -> theta: K x B. A vector argument is treated as one column.
Matrix stick_break(const Matrix& nu);
Vector stick_break(const Vector& nu);

// V x K, columns are softmax over the vocabulary of rho * alpha_k.
Matrix topic_word_matrix(const Matrix& rho, const Matrix& alpha);

double reconstruct_loglik(const Document& doc, const Vector& theta, const Matrix& beta);

// Per-document log-likelihoods of a batch, length B.
Vector reconstruct_loglik(const SparseMatrix& counts, const Matrix& theta,
                          const Matrix& beta);

double kl_gaussian_std(const Vector& mu, const Vector& logvar);

// --- objective -------------------------------------------------------------

struct ElboComponents {
  double loss = 0.0;
  double rec = 0.0;   // mean per document
  double kl_g = 0.0;  // mean per document
  double kl_s = 0.0;  // mean per document
};

// Batch-normalization statistics observed in a training-mode pass, in the
// order blocks..., mu head, logvar head.
struct BnBatchStats {
  std::vector<Vector> mean;
  std::vector<Vector> var_unbiased;
};

struct ElboResult {
  ElboComponents components;
  BnBatchStats bn_stats;
};

// loss = mean over documents of -w_R rec + w_G kl_g + w_S kl_s, with rec and
// kl_s averaged over the supplied samples. When `grads` is non-null it must
// have the shapes of `params`; gradients of the loss are added to it.
ElboResult evaluate_batch(const ModelParams& params, const ModelConfig& config,
                          const BowBatch& batch, const NoiseDraws& noise, Mode mode,
                          ModelParams* grads = nullptr);

ElboComponents elbo(std::span<const Document> docs, const ModelParams& params,
                    const ModelConfig& config, Rng& rng, int samples = 1,
                    Mode mode = Mode::kTrain);

// Applies the observed batch statistics to the running averages.
void update_running_stats(ModelParams& params, const ModelConfig& config,
                          const BnBatchStats& stats);

// --- inference -------------------------------------------------------------

// Eval-mode encoder, z = mu, nu at the Kumaraswamy mean.
Vector infer_theta(const Document& doc, const ModelParams& params,
                   const ModelConfig& config);

// D x K, one row per document.
Matrix infer_thetas(std::span<const Document> docs, const ModelParams& params,
                    const ModelConfig& config);

struct ActivityRule {
  enum class Kind { kArgmaxSupport, kMass };
  Kind kind = Kind::kArgmaxSupport;
  int n_min = 1;
  double tau = 0.05;
};

ActivityRule activity_rule_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ActivityRule& rule);

struct ActiveTopics {
  int k_pred = 0;
  std::vector<int> active;  // ascending topic indices
};

// thetas: D x K.
ActiveTopics active_topics(const Matrix& thetas, const ActivityRule& rule = {});

// Row-wise argmax, ties to the lowest index.
std::vector<int> argmax_rows(const Matrix& thetas);

}  // namespace sbsetm

#endif  // SBSETM_SBETM_HPP_
