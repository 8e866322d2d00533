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

#include "sbsetm/kl.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace sbsetm {

namespace {

struct Node {
  double x;   // abscissa in (0, 1)
  double xc;  // 1 - x, computed without cancellation
  double w;
};

// Tanh-sinh rule on [0, 1], step 1/8, tau in [-4, 4].
const std::vector<Node>& tanh_sinh_nodes() {
  static const std::vector<Node> nodes = [] {
    constexpr double kStep = 0.125;
    constexpr int kHalf = 32;
    std::vector<Node> out;
    for (int k = -kHalf; k <= kHalf; ++k) {
      const double tau = k * kStep;
      const double s = 0.5 * std::numbers::pi * std::sinh(tau);
      const double ch = std::cosh(s);
      const double x = s < 0 ? 0.5 * std::exp(s) / ch : 0.5 * (1.0 + std::tanh(s));
      const double xc = s > 0 ? 0.5 * std::exp(-s) / ch : 0.5 * (1.0 - std::tanh(s));
      const double w = kStep * 0.25 * std::numbers::pi * std::cosh(tau) / (ch * ch);
      if (x <= 0.0 || xc <= 0.0 || w == 0.0) continue;
      out.push_back({x, xc, w});
    }
    return out;
  }();
  return nodes;
}

// f(t) = log(1 - (1 - t^{1/b})^{1/a}) and its partials, with t given through
// both t and 1 - t.
struct Integrand {
  double f, f_a, f_b;
};

Integrand log1m_integrand(double t, double tc, double a, double b) {
  const double logt = t < 0.5 ? std::log(t) : std::log1p(-tc);
  const double s = std::exp(logt / b);
  if (s < 1e-12) {
    // 1 - (1 - s)^{1/a} ~ s / a.
    return {logt / b - std::log(a), -1.0 / a, -logt / (b * b)};
  }
  const double g = -std::expm1(logt / b);
  if (g <= 0.0) return {0.0, 0.0, 0.0};
  const double lg = s < 0.5 ? std::log1p(-s) : std::log(g);
  const double big_g = std::exp(lg / a);
  const double one_minus = -std::expm1(lg / a);
  const double f = std::log(one_minus);
  const double f_a = big_g * lg / (a * a * one_minus);
  // g^{1/a-1} s (-log t) / b^2 in log space; it underflows harmlessly near t=1.
  double f_b = 0.0;
  if (logt < 0.0) {
    const double log_mag = (1.0 / a - 1.0) * lg + std::log(s) + std::log(-logt) -
                           2.0 * std::log(b);
    f_b = std::exp(log_mag) / (a * one_minus);
  }
  return {f, f_a, f_b};
}

KlValue log1m_quadrature(double a, double b) {
  KlValue e;
  for (const auto& n : tanh_sinh_nodes()) {
    const auto v = log1m_integrand(n.x, n.xc, a, b);
    e.value += n.w * v.f;
    e.d_a += n.w * v.f_a;
    e.d_b += n.w * v.f_b;
  }
  return e;
}

KlValue log1m_series(double a, double b, int terms) {
  using boost::math::digamma;
  KlValue e;
  const double psi_b = digamma(b);
  for (int m = 1; m <= terms; ++m) {
    const double x = m / a;
    const double beta = std::exp(log_beta(x, b));
    const double denom = m + a * b;
    const double t = b / denom * beta;
    const double psi_xb = digamma(x + b);
    const double t_a = -b * b / (denom * denom) * beta +
                       t * (-m / (a * a)) * (digamma(x) - psi_xb);
    const double t_b = m / (denom * denom) * beta + t * (psi_b - psi_xb);
    e.value -= t;
    e.d_a -= t_a;
    e.d_b -= t_b;
  }
  return e;
}

}  // namespace

KlMethod parse_kl_method(const std::string& name) {
  if (name == "quadrature") return KlMethod::kQuadrature;
  if (name == "series") return KlMethod::kSeries;
  throw ConfigError("unknown kl_method '" + name + "' (expected quadrature|series)");
}

std::string to_string(KlMethod method) {
  return method == KlMethod::kSeries ? "series" : "quadrature";
}

double log_beta(double x, double y) {
  return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y);
}

double kumaraswamy_mean(double a, double b) {
  return std::exp(std::log(b) + log_beta(1.0 + 1.0 / a, b));
}

KlValue kumaraswamy_log1m_mean(double a, double b, KlMethod method, int taylor_terms) {
  if (!(a > 0.0) || !(b > 0.0)) throw NumericError("Kumaraswamy shapes must be positive");
  return method == KlMethod::kSeries ? log1m_series(a, b, taylor_terms)
                                     : log1m_quadrature(a, b);
}

KlValue kl_kumaraswamy_beta_grad(double a, double b, double a0, double b0,
                                 KlMethod method, int taylor_terms) {
  using boost::math::digamma;
  using boost::math::trigamma;
  if (!(a > 0.0) || !(b > 0.0) || !(a0 > 0.0) || !(b0 > 0.0)) {
    throw NumericError("KL(Kumaraswamy || Beta): shapes must be positive, got a=" +
                       std::to_string(a) + " b=" + std::to_string(b));
  }
  constexpr double kEuler = std::numbers::egamma;
  const double psi_b = digamma(b);
  const double inner = -kEuler - psi_b - 1.0 / b;
  const auto e = kumaraswamy_log1m_mean(a, b, method, taylor_terms);

  KlValue kl;
  kl.value = (1.0 - a0 / a) * inner + std::log(a * b) + log_beta(a0, b0) -
             (b - 1.0) / b - (b0 - 1.0) * e.value;
  kl.d_a = a0 / (a * a) * inner + 1.0 / a - (b0 - 1.0) * e.d_a;
  kl.d_b = (1.0 - a0 / a) * (-trigamma(b) + 1.0 / (b * b)) + 1.0 / b - 1.0 / (b * b) -
           (b0 - 1.0) * e.d_b;
  if (!std::isfinite(kl.value) || !std::isfinite(kl.d_a) || !std::isfinite(kl.d_b)) {
    throw NumericError("KL(Kumaraswamy || Beta) is not finite at a=" + std::to_string(a) +
                       " b=" + std::to_string(b));
  }
  return kl;
}

double kl_kumaraswamy_beta(const Vector& a, const Vector& b, double a0, double b0,
                           KlMethod method, int taylor_terms) {
  if (a.size() != b.size()) throw ConfigError("KL: shape vectors differ in length");
  double total = 0.0;
  for (Index k = 0; k < a.size(); ++k) {
    total += kl_kumaraswamy_beta(a(k), b(k), a0, b0, method, taylor_terms);
  }
  return total;
}

}  // namespace sbsetm
