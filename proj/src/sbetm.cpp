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

#include "sbsetm/sbetm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sbsetm {

namespace {

constexpr double kMixFloor = 1e-12;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix softplus(const Matrix& x) { return x.unaryExpr([](double v) { return softplus(v); }); }
Matrix sigmoid(const Matrix& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

template <class P, class F>
void visit_tensors(P& p, F&& f) {
  f("rho", p.rho, Role::kFixed);
  f("alpha", p.alpha, Role::kTrainable);
  f("enc.in.weight", p.enc_w, Role::kTrainable);
  f("enc.in.bias", p.enc_b, Role::kTrainable);
  auto visit_lbn = [&](const std::string& prefix, auto& l) {
    f(prefix + ".weight", l.w, Role::kTrainable);
    f(prefix + ".bias", l.b, Role::kTrainable);
    f(prefix + ".bn.weight", l.bn.gamma, Role::kTrainable);
    f(prefix + ".bn.bias", l.bn.beta, Role::kTrainable);
    f(prefix + ".bn.running_mean", l.bn.running_mean, Role::kBuffer);
    f(prefix + ".bn.running_var", l.bn.running_var, Role::kBuffer);
  };
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    visit_lbn("enc.block" + std::to_string(i), p.blocks[i]);
  }
  visit_lbn("enc.mu", p.mu_head);
  visit_lbn("enc.logvar", p.logvar_head);
  f("stick.a.weight", p.stick_a_w, Role::kTrainable);
  f("stick.a.bias", p.stick_a_b, Role::kTrainable);
  f("stick.b.weight", p.stick_b_w, Role::kTrainable);
  f("stick.b.bias", p.stick_b_b, Role::kTrainable);
}

struct BnCache {
  Matrix xhat;
  Vector inv_sd;
  bool batch = false;
};

Matrix bn_forward(const Matrix& p, const BatchNorm& bn, double eps, bool use_batch,
                  BnCache& cache, BnBatchStats* stats) {
  const Index n = p.cols();
  Vector mean;
  Vector var;
  if (use_batch) {
    mean = p.rowwise().mean();
    var = (p.colwise() - mean).array().square().rowwise().sum().matrix() / static_cast<double>(n);
    if (stats) {
      stats->mean.push_back(mean);
      stats->var_unbiased.push_back(var * (static_cast<double>(n) / (n - 1)));
    }
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }
  cache.batch = use_batch;
  cache.inv_sd = (var.array() + eps).rsqrt().matrix();
  cache.xhat = ((p.colwise() - mean).array().colwise() * cache.inv_sd.array()).matrix();
  return ((cache.xhat.array().colwise() * bn.gamma.array()).colwise() + bn.beta.array())
      .matrix();
}

Matrix bn_backward(const Matrix& dy, const BatchNorm& bn, const BnCache& cache,
                   BatchNorm* grad) {
  if (grad) {
    grad->gamma += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
    grad->beta += dy.rowwise().sum();
  }
  Matrix dxhat = (dy.array().colwise() * bn.gamma.array()).matrix();
  if (!cache.batch) {
    return (dxhat.array().colwise() * cache.inv_sd.array()).matrix();
  }
  const Vector m1 = dxhat.rowwise().mean();
  const Vector m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean().matrix();
  Matrix out = dxhat.colwise() - m1;
  out.array() -= cache.xhat.array().colwise() * m2.array();
  out.array().colwise() *= cache.inv_sd.array();
  return out;
}

struct EncoderCache {
  Matrix a0;                    // input pre-activation
  std::vector<Matrix> h;        // h[i] feeds block i; h.back() feeds the heads
  std::vector<Matrix> y;        // block batch-norm outputs
  std::vector<BnCache> block_bn;
  BnCache mu_bn;
  BnCache lv_bn;
  const std::vector<Matrix>* masks = nullptr;  // null when dropout is off
};

GaussianPosterior encode_forward(const SparseMatrix& freqs, const ModelParams& p,
                                 const ModelConfig& c, Mode mode,
                                 const std::vector<Matrix>& masks, EncoderCache& cache,
                                 BnBatchStats* stats) {
  const Index n = freqs.cols();
  const bool use_batch = mode == Mode::kTrain && n >= 2;
  const bool use_masks = mode != Mode::kEval && !masks.empty();
  if (use_masks && masks.size() != p.blocks.size()) {
    throw ConfigError("dropout masks do not match the number of blocks");
  }
  cache.a0 = (p.enc_w * freqs).colwise() + p.enc_b;
  cache.h.assign(1, softplus(cache.a0));
  cache.y.clear();
  cache.block_bn.assign(p.blocks.size(), {});
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& blk = p.blocks[i];
    Matrix pre = (blk.w * cache.h.back()).colwise() + blk.b;
    cache.y.push_back(bn_forward(pre, blk.bn, c.bn_eps, use_batch, cache.block_bn[i], stats));
    Matrix branch = softplus(cache.y.back());
    if (use_masks) branch.array() *= masks[i].array();
    cache.masks = use_masks ? &masks : nullptr;
    cache.h.push_back(cache.h.back() + branch);
  }
  const Matrix& hf = cache.h.back();
  GaussianPosterior post;
  post.mu = bn_forward((p.mu_head.w * hf).colwise() + p.mu_head.b, p.mu_head.bn, c.bn_eps,
                       use_batch, cache.mu_bn, stats);
  post.logvar = bn_forward((p.logvar_head.w * hf).colwise() + p.logvar_head.b,
                           p.logvar_head.bn, c.bn_eps, use_batch, cache.lv_bn, stats);
  if (!post.mu.allFinite() || !post.logvar.allFinite()) {
    throw NumericError("encoder produced non-finite values");
  }
  return post;
}

void encode_backward(const SparseMatrix& freqs, const ModelParams& p, const EncoderCache& cache,
                     const Matrix& dmu, const Matrix& dlv, ModelParams& g) {
  const Matrix& hf = cache.h.back();
  Matrix dpre = bn_backward(dmu, p.mu_head.bn, cache.mu_bn, &g.mu_head.bn);
  g.mu_head.w += dpre * hf.transpose();
  g.mu_head.b += dpre.rowwise().sum();
  Matrix dh = p.mu_head.w.transpose() * dpre;
  dpre = bn_backward(dlv, p.logvar_head.bn, cache.lv_bn, &g.logvar_head.bn);
  g.logvar_head.w += dpre * hf.transpose();
  g.logvar_head.b += dpre.rowwise().sum();
  dh += p.logvar_head.w.transpose() * dpre;

  for (std::size_t ii = p.blocks.size(); ii-- > 0;) {
    const auto& blk = p.blocks[ii];
    const Matrix& hin = cache.h[ii];
    Matrix dy = (dh.array() * sigmoid(cache.y[ii]).array()).matrix();
    if (cache.masks) dy.array() *= (*cache.masks)[ii].array();
    Matrix dp = bn_backward(dy, blk.bn, cache.block_bn[ii], &g.blocks[ii].bn);
    g.blocks[ii].w += dp * hin.transpose();
    g.blocks[ii].b += dp.rowwise().sum();
    dh += blk.w.transpose() * dp;
  }
  Matrix da0 = (dh.array() * sigmoid(cache.a0).array()).matrix();
  g.enc_w += da0 * freqs.transpose();
  g.enc_b += da0.rowwise().sum();
}

double clamp_u(double u, double delta_u) { return std::clamp(u, delta_u, 1.0 - delta_u); }

}  // namespace

// --- config ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (V < 1) throw ConfigError("model: V must be >= 1");
  if (K < 2) throw ConfigError("model: K must be >= 2");
  if (L < 1) throw ConfigError("model: L must be >= 1");
  if (H < 1) throw ConfigError("model: H must be >= 1");
  if (num_blocks < 0) throw ConfigError("model: num_blocks must be >= 0");
  if (!(a0 > 0) || !(b0 > 0)) throw ConfigError("model: a0 and b0 must be positive");
  if (omega_r < 0 || omega_g < 0 || omega_s < 0) {
    throw ConfigError("model: loss weights must be nonnegative");
  }
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("model: dropout must be in [0, 1)");
  if (!(delta_u > 0 && delta_u < 0.5)) throw ConfigError("model: delta_u must be in (0, 0.5)");
  if (!(eps_sp > 0)) throw ConfigError("model: eps_sp must be positive");
  if (taylor_terms < 1) throw ConfigError("model: taylor_terms must be >= 1");
  if (!(bn_eps > 0)) throw ConfigError("model: bn_eps must be positive");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) {
    throw ConfigError("model: bn_momentum must be in (0, 1]");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"V", c.V},
          {"K", c.K},
          {"L", c.L},
          {"H", c.H},
          {"num_blocks", c.num_blocks},
          {"a0", c.a0},
          {"b0", c.b0},
          {"omega_r", c.omega_r},
          {"omega_g", c.omega_g},
          {"omega_s", c.omega_s},
          {"dropout", c.dropout},
          {"kl_method", to_string(c.kl_method)},
          {"taylor_terms", c.taylor_terms},
          {"delta_u", c.delta_u},
          {"eps_sp", c.eps_sp},
          {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "V") c.V = value.get<int>();
      else if (key == "K") c.K = value.get<int>();
      else if (key == "L") c.L = value.get<int>();
      else if (key == "H") c.H = value.get<int>();
      else if (key == "num_blocks") c.num_blocks = value.get<int>();
      else if (key == "a0") c.a0 = value.get<double>();
      else if (key == "b0") c.b0 = value.get<double>();
      else if (key == "omega_r") c.omega_r = value.get<double>();
      else if (key == "omega_g") c.omega_g = value.get<double>();
      else if (key == "omega_s") c.omega_s = value.get<double>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "kl_method") c.kl_method = parse_kl_method(value.get<std::string>());
      else if (key == "taylor_terms") c.taylor_terms = value.get<int>();
      else if (key == "delta_u") c.delta_u = value.get<double>();
      else if (key == "eps_sp") c.eps_sp = value.get<double>();
      else if (key == "bn_eps") c.bn_eps = value.get<double>();
      else if (key == "bn_momentum") c.bn_momentum = value.get<double>();
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// --- parameters ------------------------------------------------------------

std::vector<TensorRef> ModelParams::tensors() {
  std::vector<TensorRef> out;
  visit_tensors(*this, [&](const std::string& name, auto& t, Role role) {
    out.push_back({name, t.data(), t.rows(), t.cols(), role});
  });
  return out;
}

std::vector<ConstTensorRef> ModelParams::tensors() const {
  std::vector<ConstTensorRef> out;
  visit_tensors(*this, [&](const std::string& name, const auto& t, Role role) {
    out.push_back({name, t.data(), t.rows(), t.cols(), role});
  });
  return out;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  visit_tensors(z, [](const std::string&, auto& t, Role) { t.setZero(); });
  return z;
}

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const int K = config.K;
  const int H = config.H;
  ModelParams p;
  p.rho = Matrix::Zero(config.V, config.L);
  p.alpha = Matrix::Zero(K, config.L);
  p.enc_w = Matrix::Zero(H, config.V);
  p.enc_b = Vector::Zero(H);
  auto make_lbn = [&] {
    LinearBn l;
    l.w = Matrix::Zero(H, H);
    l.b = Vector::Zero(H);
    l.bn.gamma = Vector::Ones(H);
    l.bn.beta = Vector::Zero(H);
    l.bn.running_mean = Vector::Zero(H);
    l.bn.running_var = Vector::Ones(H);
    return l;
  };
  for (int i = 0; i < config.num_blocks; ++i) p.blocks.push_back(make_lbn());
  p.mu_head = make_lbn();
  p.logvar_head = make_lbn();
  p.stick_a_w = Matrix::Zero(K - 1, H);
  p.stick_a_b = Vector::Zero(K - 1);
  p.stick_b_w = Matrix::Zero(K - 1, H);
  p.stick_b_b = Vector::Zero(K - 1);
  return p;
}

ModelParams init_params(const ModelConfig& config, Matrix rho, std::vector<std::string> vocab,
                        std::uint64_t seed) {
  config.validate();
  if (rho.rows() != config.V || rho.cols() != config.L) {
    throw ConfigError("init_params: rho must be V x L");
  }
  if (!vocab.empty() && static_cast<int>(vocab.size()) != config.V) {
    throw ConfigError("init_params: vocabulary size differs from V");
  }
  ModelParams p = zero_params(config);
  p.rho = std::move(rho);
  p.vocab = std::move(vocab);

  Rng rng(derive_seed(seed, "init"));
  visit_tensors(p, [&](const std::string& name, auto& t, Role role) {
    if (role != Role::kTrainable || t.cols() == 1) return;
    if (name.find(".bn.") != std::string::npos) return;
    const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index j = 0; j < t.cols(); ++j) {
      for (Index i = 0; i < t.rows(); ++i) t(i, j) = dist(rng);
    }
  });
  return p;
}

void check_shapes(const ModelParams& p, const ModelConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError("shape mismatch: " + what); };
  if (p.rho.rows() != c.V || p.rho.cols() != c.L) fail("rho");
  if (p.alpha.rows() != c.K || p.alpha.cols() != c.L) fail("alpha");
  if (p.enc_w.rows() != c.H || p.enc_w.cols() != c.V || p.enc_b.size() != c.H) fail("enc.in");
  if (static_cast<int>(p.blocks.size()) != c.num_blocks) fail("number of blocks");
  auto check_lbn = [&](const LinearBn& l, const std::string& name) {
    if (l.w.rows() != c.H || l.w.cols() != c.H || l.b.size() != c.H ||
        l.bn.gamma.size() != c.H || l.bn.beta.size() != c.H ||
        l.bn.running_mean.size() != c.H || l.bn.running_var.size() != c.H) {
      fail(name);
    }
  };
  for (const auto& b : p.blocks) check_lbn(b, "enc.block");
  check_lbn(p.mu_head, "enc.mu");
  check_lbn(p.logvar_head, "enc.logvar");
  if (p.stick_a_w.rows() != c.K - 1 || p.stick_a_w.cols() != c.H ||
      p.stick_a_b.size() != c.K - 1 || p.stick_b_w.rows() != c.K - 1 ||
      p.stick_b_w.cols() != c.H || p.stick_b_b.size() != c.K - 1) {
    fail("stick heads");
  }
  if (!p.vocab.empty() && static_cast<int>(p.vocab.size()) != c.V) fail("vocabulary");
}

// --- batches ---------------------------------------------------------------

BowBatch make_bow_batch(std::span<const Document* const> docs, int V) {
  std::vector<Eigen::Triplet<double>> counts;
  std::vector<Eigen::Triplet<double>> freqs;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const double total = docs[d]->total();
    if (total <= 0) throw InputError("document '" + docs[d]->id + "' is empty");
    for (const auto& [id, c] : docs[d]->counts) {
      if (id < 0 || id >= V) {
        throw InputError("document '" + docs[d]->id + "' has token id outside the vocabulary");
      }
      counts.emplace_back(id, static_cast<int>(d), c);
      freqs.emplace_back(id, static_cast<int>(d), c / total);
    }
  }
  BowBatch b;
  b.counts.resize(V, static_cast<Index>(docs.size()));
  b.freqs.resize(V, static_cast<Index>(docs.size()));
  b.counts.setFromTriplets(counts.begin(), counts.end());
  b.freqs.setFromTriplets(freqs.begin(), freqs.end());
  b.counts.makeCompressed();
  b.freqs.makeCompressed();
  return b;
}

BowBatch make_bow_batch(std::span<const Document> docs, int V) {
  std::vector<const Document*> ptrs;
  ptrs.reserve(docs.size());
  for (const auto& d : docs) ptrs.push_back(&d);
  return make_bow_batch(std::span<const Document* const>(ptrs), V);
}

// --- primitives ------------------------------------------------------------

NoiseDraws draw_noise(const ModelConfig& c, Index batch, int samples, Mode mode, Rng& rng) {
  if (samples < 1) throw ConfigError("number of Monte Carlo samples must be >= 1");
  NoiseDraws n;
  if (mode != Mode::kEval && c.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - c.dropout);
    const double scale = 1.0 / (1.0 - c.dropout);
    for (int i = 0; i < c.num_blocks; ++i) {
      Matrix m(c.H, batch);
      for (Index k = 0; k < m.size(); ++k) m(k) = keep(rng) ? scale : 0.0;
      n.dropout_masks.push_back(std::move(m));
    }
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (int s = 0; s < samples; ++s) {
    Matrix e(c.H, batch);
    for (Index k = 0; k < e.size(); ++k) e(k) = normal(rng);
    Matrix u(c.K - 1, batch);
    for (Index k = 0; k < u.size(); ++k) u(k) = uniform(rng);
    n.eps.push_back(std::move(e));
    n.u.push_back(std::move(u));
  }
  return n;
}

GaussianPosterior encode(const SparseMatrix& freqs, const ModelParams& params,
                         const ModelConfig& config, Mode mode,
                         const std::vector<Matrix>& dropout_masks) {
  EncoderCache cache;
  return encode_forward(freqs, params, config, mode, dropout_masks, cache, nullptr);
}

GaussianPosterior encode(const Vector& w_norm, const ModelParams& params,
                         const ModelConfig& config, Mode mode, Rng& rng) {
  SparseMatrix x = w_norm.sparseView();
  std::vector<Matrix> masks;
  if (mode != Mode::kEval) masks = draw_noise(config, 1, 1, mode, rng).dropout_masks;
  return encode(x, params, config, mode, masks);
}

Matrix reparameterize(const GaussianPosterior& post, const Matrix& noise) {
  return (post.mu.array() + (0.5 * post.logvar.array()).exp() * noise.array()).matrix();
}

StickShapes stick_params(const Matrix& z, const ModelParams& p, const ModelConfig& c) {
  StickShapes s;
  s.a = (softplus((p.stick_a_w * z).colwise() + p.stick_a_b).array() + c.eps_sp).matrix();
  s.b = (softplus((p.stick_b_w * z).colwise() + p.stick_b_b).array() + c.eps_sp).matrix();
  return s;
}

double sample_kumaraswamy(double a, double b, double u, double delta_u) {
  const double lw = std::log1p(-clamp_u(u, delta_u)) / b;
  return std::exp(std::log(-std::expm1(lw)) / a);
}

Matrix sample_kumaraswamy(const Matrix& a, const Matrix& b, const Matrix& u, double delta_u) {
  Matrix nu(a.rows(), a.cols());
  for (Index k = 0; k < a.size(); ++k) nu(k) = sample_kumaraswamy(a(k), b(k), u(k), delta_u);
  return nu;
}

Matrix stick_break(const Matrix& nu) {
  const Index K = nu.rows() + 1;
  Matrix theta(K, nu.cols());
  for (Index d = 0; d < nu.cols(); ++d) {
    double rem = 1.0;
    for (Index k = 0; k + 1 < K; ++k) {
      theta(k, d) = nu(k, d) * rem;
      rem *= 1.0 - nu(k, d);
    }
    theta(K - 1, d) = rem;
  }
  return theta;
}

Vector stick_break(const Vector& nu) { return stick_break(Matrix(nu)).col(0); }

Matrix topic_word_matrix(const Matrix& rho, const Matrix& alpha) {
  if (rho.cols() != alpha.cols()) throw ConfigError("topic_word_matrix: L mismatch");
  Matrix beta = rho * alpha.transpose();
  for (Index k = 0; k < beta.cols(); ++k) {
    auto col = beta.col(k);
    col.array() = (col.array() - col.maxCoeff()).exp();
    col /= col.sum();
  }
  return beta;
}

double reconstruct_loglik(const Document& doc, const Vector& theta, const Matrix& beta) {
  double ll = 0.0;
  for (const auto& [v, c] : doc.counts) {
    ll += c * std::log(std::max(beta.row(v).dot(theta), kMixFloor));
  }
  return ll;
}

Vector reconstruct_loglik(const SparseMatrix& counts, const Matrix& theta, const Matrix& beta) {
  const Matrix beta_t = beta.transpose();
  Vector ll = Vector::Zero(counts.cols());
  for (Index d = 0; d < counts.outerSize(); ++d) {
    for (SparseMatrix::InnerIterator it(counts, d); it; ++it) {
      const double mix = beta_t.col(it.row()).dot(theta.col(d));
      ll(d) += it.value() * std::log(std::max(mix, kMixFloor));
    }
  }
  return ll;
}

double kl_gaussian_std(const Vector& mu, const Vector& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

// --- objective -------------------------------------------------------------

ElboResult evaluate_batch(const ModelParams& p, const ModelConfig& c, const BowBatch& batch,
                          const NoiseDraws& noise, Mode mode, ModelParams* g) {
  const Index B = batch.size();
  const int S = noise.samples();
  if (B < 1) throw InputError("evaluate_batch: empty batch");
  if (S < 1) throw ConfigError("evaluate_batch: no Monte Carlo samples supplied");
  if (batch.counts.rows() != p.V()) throw ConfigError("evaluate_batch: V mismatch");

  ElboResult result;
  EncoderCache cache;
  const auto post = encode_forward(batch.freqs, p, c, mode, noise.dropout_masks, cache,
                                   &result.bn_stats);
  const Matrix beta = topic_word_matrix(p.rho, p.alpha);
  const Matrix beta_t = beta.transpose();
  const Matrix sd = (0.5 * post.logvar.array()).exp().matrix();
  const double inv = 1.0 / (static_cast<double>(S) * static_cast<double>(B));
  const int K = p.K();

  double rec_sum = 0.0;
  double kls_sum = 0.0;
  Matrix dmu;
  Matrix dlv;
  Matrix dbeta;
  if (g) {
    dmu = Matrix::Zero(post.mu.rows(), B);
    dlv = Matrix::Zero(post.mu.rows(), B);
    dbeta = Matrix::Zero(beta.rows(), beta.cols());
  }

  for (int s = 0; s < S; ++s) {
    const Matrix& eps = noise.eps[static_cast<std::size_t>(s)];
    const Matrix& u = noise.u[static_cast<std::size_t>(s)];
    const Matrix z = (post.mu.array() + sd.array() * eps.array()).matrix();
    const Matrix pa = (p.stick_a_w * z).colwise() + p.stick_a_b;
    const Matrix pb = (p.stick_b_w * z).colwise() + p.stick_b_b;
    const Matrix a = (softplus(pa).array() + c.eps_sp).matrix();
    const Matrix b = (softplus(pb).array() + c.eps_sp).matrix();
    const Matrix nu = sample_kumaraswamy(a, b, u, c.delta_u);
    const Matrix theta = stick_break(nu);

    SparseMatrix dmix;
    if (g) dmix = batch.counts;
    for (Index d = 0; d < B; ++d) {
      for (SparseMatrix::InnerIterator it(batch.counts, d); it; ++it) {
        const double mix = beta_t.col(it.row()).dot(theta.col(d));
        rec_sum += it.value() * std::log(std::max(mix, kMixFloor));
      }
      if (g) {
        for (SparseMatrix::InnerIterator it(dmix, d); it; ++it) {
          const double mix = beta_t.col(it.row()).dot(theta.col(d));
          it.valueRef() = mix > kMixFloor ? -c.omega_r * inv * it.value() / mix : 0.0;
        }
      }
    }

    Matrix kl_a;
    Matrix kl_b;
    if (g) {
      kl_a.resize(K - 1, B);
      kl_b.resize(K - 1, B);
    }
    for (Index k = 0; k < a.size(); ++k) {
      const auto kl = kl_kumaraswamy_beta_grad(a(k), b(k), c.a0, c.b0, c.kl_method,
                                               c.taylor_terms);
      kls_sum += kl.value;
      if (g) {
        kl_a(k) = kl.d_a;
        kl_b(k) = kl.d_b;
      }
    }
    if (!g) continue;

    dbeta += dmix * theta.transpose();
    const Matrix dtheta = beta_t * dmix;

    // Stick-breaking backward: d nu_j = R_j (dtheta_j - S_j).
    Matrix dnu(K - 1, B);
    for (Index d = 0; d < B; ++d) {
      double rem = 1.0;
      std::vector<double> R(static_cast<std::size_t>(K - 1));
      for (Index k = 0; k + 1 < K; ++k) {
        R[static_cast<std::size_t>(k)] = rem;
        rem *= 1.0 - nu(k, d);
      }
      double tail = dtheta(K - 1, d);
      for (Index j = K - 2; j >= 0; --j) {
        dnu(j, d) = R[static_cast<std::size_t>(j)] * (dtheta(j, d) - tail);
        if (j > 0) tail = dtheta(j, d) * nu(j, d) + (1.0 - nu(j, d)) * tail;
      }
    }

    // Kumaraswamy pathwise derivatives.
    Matrix da(K - 1, B);
    Matrix db(K - 1, B);
    for (Index k = 0; k < a.size(); ++k) {
      const double uc = clamp_u(u(k), c.delta_u);
      const double log1mu = std::log1p(-uc);
      const double w = std::exp(log1mu / b(k));
      const double q = -std::expm1(log1mu / b(k));
      double dnu_da = 0.0;
      double dnu_db = 0.0;
      if (q > 0.0 && nu(k) > 0.0) {
        dnu_da = -nu(k) * std::log(q) / (a(k) * a(k));
        dnu_db = nu(k) / (a(k) * q) * w * log1mu / (b(k) * b(k));
      }
      da(k) = dnu(k) * dnu_da + c.omega_s * inv * kl_a(k);
      db(k) = dnu(k) * dnu_db + c.omega_s * inv * kl_b(k);
    }
    const Matrix dpa = (da.array() * sigmoid(pa).array()).matrix();
    const Matrix dpb = (db.array() * sigmoid(pb).array()).matrix();
    g->stick_a_w += dpa * z.transpose();
    g->stick_a_b += dpa.rowwise().sum();
    g->stick_b_w += dpb * z.transpose();
    g->stick_b_b += dpb.rowwise().sum();
    const Matrix dz = p.stick_a_w.transpose() * dpa + p.stick_b_w.transpose() * dpb;
    dmu += dz;
    dlv.array() += dz.array() * eps.array() * sd.array() * 0.5;
  }

  double klg_sum = 0.0;
  for (Index d = 0; d < B; ++d) klg_sum += kl_gaussian_std(post.mu.col(d), post.logvar.col(d));

  auto& comp = result.components;
  comp.rec = rec_sum / (static_cast<double>(S) * B);
  comp.kl_s = kls_sum / (static_cast<double>(S) * B);
  comp.kl_g = klg_sum / static_cast<double>(B);
  comp.loss = -c.omega_r * comp.rec + c.omega_g * comp.kl_g + c.omega_s * comp.kl_s;
  if (!std::isfinite(comp.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss (rec=" << comp.rec << ", kl_g=" << comp.kl_g
        << ", kl_s=" << comp.kl_s << ")";
    throw NumericError(msg.str());
  }
  if (!g) return result;

  const double wg = c.omega_g / static_cast<double>(B);
  dmu += wg * post.mu;
  dlv.array() += wg * 0.5 * (post.logvar.array().exp() - 1.0);
  encode_backward(batch.freqs, p, cache, dmu, dlv, *g);

  // Column softmax backward, then G = rho alpha^T.
  Matrix dgate = dbeta;
  for (Index k = 0; k < beta.cols(); ++k) {
    const double dot = beta.col(k).dot(dbeta.col(k));
    dgate.col(k) = (beta.col(k).array() * (dbeta.col(k).array() - dot)).matrix();
  }
  g->alpha += dgate.transpose() * p.rho;
  return result;
}

ElboComponents elbo(std::span<const Document> docs, const ModelParams& params,
                    const ModelConfig& config, Rng& rng, int samples, Mode mode) {
  const auto batch = make_bow_batch(docs, params.V());
  const auto noise = draw_noise(config, batch.size(), samples, mode, rng);
  return evaluate_batch(params, config, batch, noise, mode).components;
}

void update_running_stats(ModelParams& p, const ModelConfig& c, const BnBatchStats& stats) {
  if (stats.mean.empty()) return;
  std::vector<BatchNorm*> bns;
  for (auto& b : p.blocks) bns.push_back(&b.bn);
  bns.push_back(&p.mu_head.bn);
  bns.push_back(&p.logvar_head.bn);
  if (stats.mean.size() != bns.size()) throw ConfigError("batch-norm statistics mismatch");
  const double m = c.bn_momentum;
  for (std::size_t i = 0; i < bns.size(); ++i) {
    bns[i]->running_mean = (1.0 - m) * bns[i]->running_mean + m * stats.mean[i];
    bns[i]->running_var = (1.0 - m) * bns[i]->running_var + m * stats.var_unbiased[i];
  }
}

// --- inference -------------------------------------------------------------

Matrix infer_thetas(std::span<const Document> docs, const ModelParams& params,
                    const ModelConfig& config) {
  if (docs.empty()) return Matrix(0, params.K());
  const auto batch = make_bow_batch(docs, params.V());
  const auto post = encode(batch.freqs, params, config, Mode::kEval);
  const auto shapes = stick_params(post.mu, params, config);
  Matrix nu(shapes.a.rows(), shapes.a.cols());
  for (Index k = 0; k < nu.size(); ++k) nu(k) = kumaraswamy_mean(shapes.a(k), shapes.b(k));
  return stick_break(nu).transpose();
}

Vector infer_theta(const Document& doc, const ModelParams& params, const ModelConfig& config) {
  return infer_thetas(std::span<const Document>(&doc, 1), params, config).row(0).transpose();
}

std::vector<int> argmax_rows(const Matrix& thetas) {
  std::vector<int> out(static_cast<std::size_t>(thetas.rows()));
  for (Index d = 0; d < thetas.rows(); ++d) {
    Index best = 0;
    for (Index k = 1; k < thetas.cols(); ++k) {
      if (thetas(d, k) > thetas(d, best)) best = k;
    }
    out[static_cast<std::size_t>(d)] = static_cast<int>(best);
  }
  return out;
}

ActiveTopics active_topics(const Matrix& thetas, const ActivityRule& rule) {
  ActiveTopics out;
  const Index K = thetas.cols();
  if (rule.kind == ActivityRule::Kind::kArgmaxSupport) {
    std::vector<int> support(static_cast<std::size_t>(K), 0);
    for (int k : argmax_rows(thetas)) ++support[static_cast<std::size_t>(k)];
    for (Index k = 0; k < K; ++k) {
      if (support[static_cast<std::size_t>(k)] >= rule.n_min) out.active.push_back(static_cast<int>(k));
    }
  } else {
    if (thetas.rows() > 0) {
      const Vector mean = thetas.colwise().mean();
      for (Index k = 0; k < K; ++k) {
        if (mean(k) >= rule.tau) out.active.push_back(static_cast<int>(k));
      }
    }
  }
  out.k_pred = static_cast<int>(out.active.size());
  return out;
}

ActivityRule activity_rule_from_json(const nlohmann::json& j) {
  ActivityRule r;
  if (j.is_null()) return r;
  if (!j.is_object()) throw ConfigError("activity rule must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "rule") {
        const auto name = value.get<std::string>();
        if (name == "argmax-support") r.kind = ActivityRule::Kind::kArgmaxSupport;
        else if (name == "mass") r.kind = ActivityRule::Kind::kMass;
        else throw ConfigError("unknown activity rule '" + name + "'");
      } else if (key == "n_min") {
        r.n_min = value.get<int>();
      } else if (key == "tau") {
        r.tau = value.get<double>();
      } else {
        throw ConfigError("activity config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("activity config: ") + e.what());
  }
  if (r.n_min < 1) throw ConfigError("activity: n_min must be >= 1");
  if (!(r.tau >= 0.0 && r.tau <= 1.0)) throw ConfigError("activity: tau must be in [0, 1]");
  return r;
}

nlohmann::json to_json(const ActivityRule& r) {
  return {{"rule", r.kind == ActivityRule::Kind::kMass ? "mass" : "argmax-support"},
          {"n_min", r.n_min},
          {"tau", r.tau}};
}

}  // namespace sbsetm
