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


// Topic correspondence across timesteps.

#ifndef SBSETM_TRACE_HPP_
#define SBSETM_TRACE_HPP_

#include <map>
#include <vector>

#include "json.hpp"
#include "sbsetm/common.hpp"

namespace sbsetm {

// C_ij = 1 - cos(A_i, B_j). Throws on zero rows.
Matrix cosine_cost(const Matrix& A, const Matrix& B);

struct UotOptions {
  double r = 0.09;
  int max_iter = 1000;
  double tol = 1e-9;
  bool record_objective = false;
};

struct TransportPlan {
  Matrix P;
  Vector a;
  Vector b;
  double r = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // per iterate, when recorded
};

// <C, P> + r KL(P 1 || a) + r KL(P^T 1 || b) with generalized KL.
double uot_objective(const Matrix& C, const Matrix& P, const Vector& a, const Vector& b,
                     double r);

// Generalized KL(x || y) = sum x log(x / y) - x + y.
double generalized_kl(const Vector& x, const Vector& y);

// Multiplicative majorization-minimization from P = a b^T. Each step is
// P <- sqrt(a b^T) exp(-C / 2r) P / sqrt(rowsum colsum^T).
TransportPlan uot_mm(const Matrix& C, const Vector& a, const Vector& b,
                     const UotOptions& options = {});

// T = sqrt(lambda_max(cov([alpha_prev; alpha_t]) + ridge I)) * epsilon.
double match_threshold(const Matrix& alpha_t, const Matrix& alpha_prev, double epsilon = 0.01,
                       double ridge = 1e-6);

struct Match {
  int src = 0;
  int dst = 0;
  double w = 0.0;
};

struct TopicAssignment {
  std::vector<Match> matches;   // ordered by src
  std::vector<int> new_topics;  // ascending
  double threshold = 0.0;
};

nlohmann::json to_json(const TopicAssignment& a, int t);

struct TraceOptions {
  double epsilon = 0.01;
  double ridge = 1e-6;
  UotOptions uot;
};

// Transport-based matching at threshold. Indices refer to rows of the inputs.
TopicAssignment trace_step(const Matrix& alpha_t, const Matrix& alpha_prev,
                           const TraceOptions& options = {});

// Greedy matching on squared Euclidean distance, closest pairs first; each
// target is used at most once.
TopicAssignment epsilon_neighbor_match(const Matrix& alpha_t, const Matrix& alpha_prev,
                                       double epsilon);

// One row per match (mean of the pair, in match order), then unmatched
// targets, then new sources.
Matrix dot_merge(const Matrix& alpha_t, const Matrix& alpha_prev,
                 const TopicAssignment& assignment);

// Every source is new; used for the first timestep.
TopicAssignment all_new(int num_sources);

struct GlobalTopic {
  int id = 0;
  int birth = 0;
  std::vector<double> freq_series;  // documents per timestep
};

class TopicRegistry {
 public:
  // `locals` lists the local topic index of each assignment source; the
  // targets are looked up among the previous step's local indices.
  // doc_argmax_counts maps local topic -> number of documents.
  void update(const TopicAssignment& assignment, int t, const std::vector<int>& locals,
              const std::vector<int>& prev_locals, const std::map<int, int>& doc_argmax_counts);

  int num_steps() const { return static_cast<int>(steps_.size()); }
  const std::vector<GlobalTopic>& topics() const { return topics_; }
  // local topic -> global id at step t.
  const std::map<int, int>& local_to_global(int t) const;
  int global_id(int t, int local) const;

  nlohmann::json to_json() const;
  static TopicRegistry from_json(const nlohmann::json& j);

 private:
  std::vector<GlobalTopic> topics_;
  std::vector<std::map<int, int>> steps_;
};

// Convenience form: sources are rows 0..n-1 and targets are the previous
// step's rows in the same numbering.
TopicRegistry update_registry(TopicRegistry reg, const TopicAssignment& assignment, int t,
                              const std::map<int, int>& doc_argmax_counts);

}  // namespace sbsetm

#endif  // SBSETM_TRACE_HPP_
