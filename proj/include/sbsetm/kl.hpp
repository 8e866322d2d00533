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

// KL(Kumaraswamy(a, b) || Beta(a0, b0)) and related scalar helpers.

#ifndef SBSETM_KL_HPP_
#define SBSETM_KL_HPP_

#include <string>

#include "sbsetm/common.hpp"

namespace sbsetm {

// How E[log(1 - nu)] under Kumaraswamy(a, b) is evaluated. kSeries is the
// truncated Beta-function series; kQuadrature integrates the inverse-CDF form
// with a fixed tanh-sinh rule and is accurate to roughly 1e-12.
enum class KlMethod { kQuadrature, kSeries };

KlMethod parse_kl_method(const std::string& name);
std::string to_string(KlMethod method);

struct KlValue {
  double value = 0.0;
  double d_a = 0.0;
  double d_b = 0.0;
};

// Value and partial derivatives in (a, b). Throws NumericError on non-finite
// intermediates.
KlValue kl_kumaraswamy_beta_grad(double a, double b, double a0, double b0,
                                 KlMethod method = KlMethod::kQuadrature,
                                 int taylor_terms = 10);

inline double kl_kumaraswamy_beta(double a, double b, double a0, double b0,
                                  KlMethod method = KlMethod::kQuadrature,
                                  int taylor_terms = 10) {
  return kl_kumaraswamy_beta_grad(a, b, a0, b0, method, taylor_terms).value;
}

// Summed over sticks.
double kl_kumaraswamy_beta(const Vector& a, const Vector& b, double a0, double b0,
                           KlMethod method = KlMethod::kQuadrature,
                           int taylor_terms = 10);

// E[log(1 - nu)] for nu ~ Kumaraswamy(a, b), with derivatives.
KlValue kumaraswamy_log1m_mean(double a, double b,
                               KlMethod method = KlMethod::kQuadrature,
                               int taylor_terms = 10);

// E[nu] = b * B(1 + 1/a, b), evaluated through log-gamma.
double kumaraswamy_mean(double a, double b);

double log_beta(double x, double y);

}  // namespace sbsetm

#endif  // SBSETM_KL_HPP_
