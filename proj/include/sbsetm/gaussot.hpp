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


// Low-rank Gaussian models of embedding clouds and the closed-form optimal
// transport between them.
//
// A LowRankGaussian has covariance U diag(lambda) U^T + sigma2 (I - U U^T):
// d leading directions plus an isotropic remainder. Nothing here forms an
// L x L matrix.

#ifndef SBSETM_GAUSSOT_HPP_
#define SBSETM_GAUSSOT_HPP_

#include "json.hpp"
#include "sbsetm/common.hpp"

namespace sbsetm {

struct DimRule {
  enum class Kind { kTraceFraction, kFixed };
  Kind kind = Kind::kTraceFraction;
  double trace_frac = 0.9;
  int fixed_d = 1;
  int cap = -1;  // negative: K - 2
  double sigma2_floor = 1e-8;
};

DimRule dim_rule_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DimRule& r);

struct LowRankGaussian {
  Vector m;       // L
  Matrix U;       // L x d, orthonormal columns
  Vector lambda;  // d, descending, each > sigma2
  double sigma2 = 0.0;

  int d() const { return static_cast<int>(lambda.size()); }
  int L() const { return static_cast<int>(m.size()); }
  double trace() const;
  Matrix dense_covariance() const;  // for testing at small L
};

// points: K x L, one embedding per row.
LowRankGaussian fit_low_rank_gaussian(const Matrix& points, const DimRule& rule = {});

// Sigma^power x, for any real power (the merge uses +1/2 and -1/2).
Vector sqrt_apply(const LowRankGaussian& g, const Vector& x, double power);

// M = (S_t^{1/2} S_prev S_t^{1/2})^{1/2}, exact on the span Q of both
// principal subspaces and equal to sigma_t * sigma_prev on its complement.
struct MiddleSqrt {
  Matrix Q;    // L x r, orthonormal
  Matrix M_r;  // r x r
  double scalar = 0.0;

  Vector apply(const Vector& x) const;
  double trace(int L) const { return M_r.trace() + (L - Q.cols()) * scalar; }
};

MiddleSqrt middle_sqrt(const LowRankGaussian& g_t, const LowRankGaussian& g_prev);

// T(x) = m_prev + A (x - m_t) with A = S_t^{-1/2} M S_t^{-1/2}.
struct MongeMap {
  Vector m_src;
  Vector m_dst;
  Matrix Q;    // L x r
  Matrix A_r;  // r x r, symmetric
  double scalar = 0.0;

  Vector apply(const Vector& x) const;
  Vector linear(const Vector& v) const;  // A v
  Matrix apply_rows(const Matrix& X) const;
};

MongeMap make_monge_map(const LowRankGaussian& g_t, const LowRankGaussian& g_prev);
Vector monge_map(const LowRankGaussian& g_t, const LowRankGaussian& g_prev, const Vector& x);

double w2_gaussian(const LowRankGaussian& g_t, const LowRankGaussian& g_prev);

struct TransportedSet {
  Matrix embeddings;  // K_t x L
  int source_t = -1;
  int target_t = -1;
};

// Transports every row of alpha_t into the space of alpha_prev.
TransportedSet cot_merge(const Matrix& alpha_t, const Matrix& alpha_prev,
                         const DimRule& rule = {}, int source_t = -1, int target_t = -1);

// Square root of a symmetric positive semidefinite matrix.
Matrix sqrtm_psd(const Matrix& a);

}  // namespace sbsetm

#endif  // SBSETM_GAUSSOT_HPP_
