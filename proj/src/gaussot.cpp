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


#include "sbsetm/gaussot.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace sbsetm {

namespace {

constexpr double kBasisTol = 1e-10;

// Orthonormal basis of the column span of [A B], dropping directions whose
// singular value falls below kBasisTol.
Matrix combined_basis(const Matrix& a, const Matrix& b) {
  const Index L = std::max(a.rows(), b.rows());
  Matrix stacked(L, a.cols() + b.cols());
  stacked << a, b;
  if (stacked.cols() == 0) return Matrix(L, 0);
  Eigen::JacobiSVD<Matrix> svd(stacked, Eigen::ComputeThinU);
  const Vector& s = svd.singularValues();
  Index r = 0;
  while (r < s.size() && s(r) > kBasisTol) ++r;
  return svd.matrixU().leftCols(r);
}

// Q^T Sigma Q for a basis Q whose span contains the principal subspace.
Matrix restrict_cov(const LowRankGaussian& g, const Matrix& Q) {
  const Matrix P = Q.transpose() * g.U;  // r x d
  Matrix out = P * (g.lambda.array() - g.sigma2).matrix().asDiagonal() * P.transpose();
  out.diagonal().array() += g.sigma2;
  return out;
}

Matrix power_psd(const Matrix& a, double power) {
  if (a.size() == 0) return a;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  for (Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 0 ? std::pow(ev(i), power) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_same_dim(const LowRankGaussian& a, const LowRankGaussian& b) {
  if (a.L() != b.L()) throw ConfigError("Gaussian models live in different dimensions");
}

}  // namespace

DimRule dim_rule_from_json(const nlohmann::json& j) {
  DimRule r;
  if (j.is_null()) return r;
  if (!j.is_object()) throw ConfigError("dim rule must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "rule") {
        const auto s = value.get<std::string>();
        if (s == "trace") r.kind = DimRule::Kind::kTraceFraction;
        else if (s == "fixed") r.kind = DimRule::Kind::kFixed;
        else throw ConfigError("unknown dim rule '" + s + "'");
      } else if (key == "trace_frac") r.trace_frac = value.get<double>();
      else if (key == "fixed_d") r.fixed_d = value.get<int>();
      else if (key == "cap") r.cap = value.get<int>();
      else if (key == "sigma2_floor") r.sigma2_floor = value.get<double>();
      else throw ConfigError("dim rule: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dim rule: ") + e.what());
  }
  if (!(r.trace_frac > 0 && r.trace_frac <= 1)) throw ConfigError("trace_frac must be in (0, 1]");
  if (r.fixed_d < 0) throw ConfigError("fixed_d must be >= 0");
  if (!(r.sigma2_floor > 0)) throw ConfigError("sigma2_floor must be positive");
  return r;
}

nlohmann::json to_json(const DimRule& r) {
  return {{"rule", r.kind == DimRule::Kind::kFixed ? "fixed" : "trace"},
          {"trace_frac", r.trace_frac},
          {"fixed_d", r.fixed_d},
          {"cap", r.cap},
          {"sigma2_floor", r.sigma2_floor}};
}

double LowRankGaussian::trace() const {
  return lambda.sum() + (L() - d()) * sigma2;
}

Matrix LowRankGaussian::dense_covariance() const {
  Matrix c = U * (lambda.array() - sigma2).matrix().asDiagonal() * U.transpose();
  c.diagonal().array() += sigma2;
  return c;
}

LowRankGaussian fit_low_rank_gaussian(const Matrix& points, const DimRule& rule) {
  const Index K = points.rows();
  const Index L = points.cols();
  if (K < 2) throw ConfigError("fit_low_rank_gaussian: need at least two points");
  LowRankGaussian g;
  g.m = points.colwise().mean().transpose();
  const Matrix X = points.rowwise() - g.m.transpose();
  const Matrix gram = X * X.transpose() / static_cast<double>(K - 1);
  const double total = gram.trace();
  if (!(total > 0.0) || !std::isfinite(total)) {
    if (!std::isfinite(total)) throw NumericError("fit_low_rank_gaussian: non-finite points");
    g.U.resize(L, 0);
    g.lambda.resize(0);
    g.sigma2 = rule.sigma2_floor;
    return g;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const Vector ev = es.eigenvalues().reverse();
  const Matrix evec = es.eigenvectors().rowwise().reverse();
  Index rank = 0;
  while (rank < ev.size() && ev(rank) > 1e-12 * total) ++rank;
  rank = std::min<Index>(rank, L - 1);

  Index d = 0;
  if (rule.kind == DimRule::Kind::kFixed) {
    d = std::min<Index>(rule.fixed_d, rank);
  } else {
    const Index cap = std::min<Index>(rule.cap < 0 ? K - 2 : rule.cap, rank);
    double acc = 0.0;
    while (d < cap && acc < rule.trace_frac * total) acc += ev(d++);
  }
  auto residual = [&](Index keep) {
    const double kept = ev.head(keep).sum();
    return std::max((total - kept) / static_cast<double>(L - keep), rule.sigma2_floor);
  };
  g.sigma2 = residual(d);
  while (d > 0 && ev(d - 1) <= g.sigma2) g.sigma2 = residual(--d);

  g.lambda = ev.head(d);
  g.U.resize(L, d);
  for (Index i = 0; i < d; ++i) {
    g.U.col(i) = X.transpose() * evec.col(i) / std::sqrt(static_cast<double>(K - 1) * ev(i));
  }
  return g;
}

Vector sqrt_apply(const LowRankGaussian& g, const Vector& x, double power) {
  const double s = std::pow(g.sigma2, power);
  Vector out = s * x;
  if (g.d() > 0) {
    const Vector coef = g.U.transpose() * x;
    Vector scale(g.d());
    for (int i = 0; i < g.d(); ++i) scale(i) = std::pow(g.lambda(i), power) - s;
    out += g.U * scale.cwiseProduct(coef);
  }
  return out;
}

Vector MiddleSqrt::apply(const Vector& x) const {
  const Vector c = Q.transpose() * x;
  return Q * (M_r * c) + scalar * (x - Q * c);
}

MiddleSqrt middle_sqrt(const LowRankGaussian& g_t, const LowRankGaussian& g_prev) {
  check_same_dim(g_t, g_prev);
  MiddleSqrt out;
  out.Q = combined_basis(g_t.U, g_prev.U);
  out.scalar = std::sqrt(g_t.sigma2 * g_prev.sigma2);
  const Matrix st = power_psd(restrict_cov(g_t, out.Q), 0.5);
  out.M_r = power_psd(st * restrict_cov(g_prev, out.Q) * st, 0.5);
  return out;
}

Vector MongeMap::linear(const Vector& v) const {
  const Vector c = Q.transpose() * v;
  return Q * (A_r * c) + scalar * (v - Q * c);
}

Vector MongeMap::apply(const Vector& x) const { return m_dst + linear(x - m_src); }

Matrix MongeMap::apply_rows(const Matrix& X) const {
  const Matrix centered = X.rowwise() - m_src.transpose();
  const Matrix c = centered * Q;  // n x r
  Matrix out = scalar * centered + c * (A_r - scalar * Matrix::Identity(A_r.rows(), A_r.cols())) *
                                       Q.transpose();
  out.rowwise() += m_dst.transpose();
  return out;
}

MongeMap make_monge_map(const LowRankGaussian& g_t, const LowRankGaussian& g_prev) {
  check_same_dim(g_t, g_prev);
  MongeMap map;
  map.m_src = g_t.m;
  map.m_dst = g_prev.m;
  map.Q = combined_basis(g_t.U, g_prev.U);
  const Matrix ct = restrict_cov(g_t, map.Q);
  const Matrix st = power_psd(ct, 0.5);
  const Matrix st_inv = power_psd(ct, -0.5);
  const Matrix m_r = power_psd(st * restrict_cov(g_prev, map.Q) * st, 0.5);
  map.A_r = st_inv * m_r * st_inv;
  map.A_r = 0.5 * (map.A_r + map.A_r.transpose());
  map.scalar = std::sqrt(g_prev.sigma2 / g_t.sigma2);
  return map;
}

Vector monge_map(const LowRankGaussian& g_t, const LowRankGaussian& g_prev, const Vector& x) {
  return make_monge_map(g_t, g_prev).apply(x);
}

double w2_gaussian(const LowRankGaussian& g_t, const LowRankGaussian& g_prev) {
  const auto m = middle_sqrt(g_t, g_prev);
  const double w2 = (g_t.m - g_prev.m).squaredNorm() + g_t.trace() + g_prev.trace() -
                    2.0 * m.trace(g_t.L());
  return std::max(w2, 0.0);
}

TransportedSet cot_merge(const Matrix& alpha_t, const Matrix& alpha_prev, const DimRule& rule,
                         int source_t, int target_t) {
  if (alpha_t.rows() < 2 || alpha_prev.rows() < 2) {
    throw ConfigError("cot_merge: both embedding sets need at least two rows");
  }
  if (alpha_t.cols() != alpha_prev.cols()) throw ConfigError("cot_merge: L mismatch");
  const auto g_t = fit_low_rank_gaussian(alpha_t, rule);
  const auto g_prev = fit_low_rank_gaussian(alpha_prev, rule);
  TransportedSet out;
  out.embeddings = make_monge_map(g_t, g_prev).apply_rows(alpha_t);
  out.source_t = source_t;
  out.target_t = target_t;
  return out;
}

Matrix sqrtm_psd(const Matrix& a) { return power_psd(a, 0.5); }

}  // namespace sbsetm
