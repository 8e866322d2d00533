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


#include "sbsetm/trace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include <Eigen/Eigenvalues>

namespace sbsetm {

Matrix cosine_cost(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.cols()) throw ConfigError("cosine_cost: dimension mismatch");
  const Vector na = A.rowwise().norm();
  const Vector nb = B.rowwise().norm();
  if ((na.array() <= 0.0).any() || (nb.array() <= 0.0).any()) {
    throw NumericError("cosine_cost: zero-norm embedding row");
  }
  Matrix C = A * B.transpose();
  for (Index i = 0; i < C.rows(); ++i) {
    for (Index j = 0; j < C.cols(); ++j) {
      C(i, j) = 1.0 - std::clamp(C(i, j) / (na(i) * nb(j)), -1.0, 1.0);
    }
  }
  return C;
}

double generalized_kl(const Vector& x, const Vector& y) {
  double kl = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    if (x(i) > 0.0) kl += x(i) * std::log(x(i) / y(i));
    kl += y(i) - x(i);
  }
  return kl;
}

double uot_objective(const Matrix& C, const Matrix& P, const Vector& a, const Vector& b,
                     double r) {
  return (C.array() * P.array()).sum() + r * generalized_kl(P.rowwise().sum(), a) +
         r * generalized_kl(P.colwise().sum().transpose(), b);
}

TransportPlan uot_mm(const Matrix& C, const Vector& a, const Vector& b,
                     const UotOptions& options) {
  if (C.rows() != a.size() || C.cols() != b.size()) {
    throw ConfigError("uot_mm: cost shape does not match the marginals");
  }
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any()) {
    throw ConfigError("uot_mm: marginals must be positive");
  }
  if ((C.array() < 0.0).any() || !C.allFinite()) {
    throw ConfigError("uot_mm: cost must be finite and nonnegative");
  }
  if (!(options.r > 0.0)) throw ConfigError("uot_mm: relaxation must be positive");
  TransportPlan plan;
  plan.a = a;
  plan.b = b;
  plan.r = options.r;
  Matrix kernel(C.rows(), C.cols());
  for (Index i = 0; i < C.rows(); ++i) {
    for (Index j = 0; j < C.cols(); ++j) {
      kernel(i, j) = std::sqrt(a(i) * b(j)) * std::exp(-C(i, j) / (2.0 * options.r));
    }
  }
  Matrix P = a * b.transpose();
  if (options.record_objective) plan.objective.push_back(uot_objective(C, P, a, b, options.r));
  for (int it = 0; it < options.max_iter; ++it) {
    const Vector rows = P.rowwise().sum();
    const Vector cols = P.colwise().sum().transpose();
    Matrix next(P.rows(), P.cols());
    for (Index i = 0; i < P.rows(); ++i) {
      for (Index j = 0; j < P.cols(); ++j) {
        const double denom = std::sqrt(rows(i) * cols(j));
        next(i, j) = denom > 0.0 ? kernel(i, j) * P(i, j) / denom : 0.0;
      }
    }
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    plan.iterations = it + 1;
    if (options.record_objective) plan.objective.push_back(uot_objective(C, P, a, b, options.r));
    if (change < options.tol) {
      plan.converged = true;
      break;
    }
  }
  plan.P = std::move(P);
  return plan;
}

double match_threshold(const Matrix& alpha_t, const Matrix& alpha_prev, double epsilon,
                       double ridge) {
  if (alpha_t.cols() != alpha_prev.cols()) throw ConfigError("match_threshold: L mismatch");
  const Index n = alpha_t.rows() + alpha_prev.rows();
  if (n < 2) throw ConfigError("match_threshold: need at least two embeddings");
  Matrix X(n, alpha_t.cols());
  X << alpha_prev, alpha_t;
  const Matrix centered = X.rowwise() - X.colwise().mean();
  // Nonzero spectrum of the covariance via the n x n Gram matrix.
  const Matrix gram = centered * centered.transpose() / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const double lambda = std::max(es.eigenvalues().maxCoeff(), 0.0) + ridge;
  return std::sqrt(lambda) * epsilon;
}

nlohmann::json to_json(const TopicAssignment& a, int t) {
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& m : a.matches) matches.push_back({{"src", m.src}, {"dst", m.dst}, {"w", m.w}});
  return {{"t", t}, {"matches", matches}, {"new", a.new_topics}, {"threshold", a.threshold}};
}

TopicAssignment trace_step(const Matrix& alpha_t, const Matrix& alpha_prev,
                           const TraceOptions& options) {
  if (alpha_t.rows() < 1 || alpha_prev.rows() < 1) {
    throw ConfigError("trace_step: both embedding sets must be nonempty");
  }
  TopicAssignment out;
  out.threshold = match_threshold(alpha_t, alpha_prev, options.epsilon, options.ridge);
  const Vector a = Vector::Constant(alpha_t.rows(), 1.0 / static_cast<double>(alpha_t.rows()));
  const Vector b =
      Vector::Constant(alpha_prev.rows(), 1.0 / static_cast<double>(alpha_prev.rows()));
  const auto plan = uot_mm(cosine_cost(alpha_t, alpha_prev), a, b, options.uot);
  for (Index i = 0; i < plan.P.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < plan.P.cols(); ++j) {
      if (plan.P(i, j) > plan.P(i, best)) best = j;
    }
    const double w = plan.P(i, best);
    if (w >= out.threshold) {
      out.matches.push_back({static_cast<int>(i), static_cast<int>(best), w});
    } else {
      out.new_topics.push_back(static_cast<int>(i));
    }
  }
  return out;
}

TopicAssignment epsilon_neighbor_match(const Matrix& alpha_t, const Matrix& alpha_prev,
                                       double epsilon) {
  if (alpha_t.cols() != alpha_prev.cols()) throw ConfigError("epsilon_neighbor_match: L mismatch");
  std::vector<std::tuple<double, int, int>> pairs;
  for (Index i = 0; i < alpha_t.rows(); ++i) {
    for (Index j = 0; j < alpha_prev.rows(); ++j) {
      const double d = (alpha_t.row(i) - alpha_prev.row(j)).squaredNorm();
      if (d <= epsilon) pairs.emplace_back(d, static_cast<int>(i), static_cast<int>(j));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> src_used(static_cast<std::size_t>(alpha_t.rows()), false);
  std::vector<bool> dst_used(static_cast<std::size_t>(alpha_prev.rows()), false);
  TopicAssignment out;
  out.threshold = epsilon;
  for (const auto& [d, i, j] : pairs) {
    if (src_used[static_cast<std::size_t>(i)] || dst_used[static_cast<std::size_t>(j)]) continue;
    src_used[static_cast<std::size_t>(i)] = true;
    dst_used[static_cast<std::size_t>(j)] = true;
    out.matches.push_back({i, j, d});
  }
  std::sort(out.matches.begin(), out.matches.end(),
            [](const Match& x, const Match& y) { return x.src < y.src; });
  for (Index i = 0; i < alpha_t.rows(); ++i) {
    if (!src_used[static_cast<std::size_t>(i)]) out.new_topics.push_back(static_cast<int>(i));
  }
  return out;
}

Matrix dot_merge(const Matrix& alpha_t, const Matrix& alpha_prev,
                 const TopicAssignment& assignment) {
  if (alpha_t.cols() != alpha_prev.cols()) throw ConfigError("dot_merge: L mismatch");
  std::vector<bool> target_used(static_cast<std::size_t>(alpha_prev.rows()), false);
  for (const auto& m : assignment.matches) {
    if (m.src < 0 || m.src >= alpha_t.rows() || m.dst < 0 || m.dst >= alpha_prev.rows()) {
      throw ConfigError("dot_merge: assignment index out of range");
    }
    target_used[static_cast<std::size_t>(m.dst)] = true;
  }
  const Index unmatched = std::count(target_used.begin(), target_used.end(), false);
  Matrix out(static_cast<Index>(assignment.matches.size()) + unmatched +
                 static_cast<Index>(assignment.new_topics.size()),
             alpha_t.cols());
  Index row = 0;
  for (const auto& m : assignment.matches) {
    out.row(row++) = 0.5 * (alpha_t.row(m.src) + alpha_prev.row(m.dst));
  }
  for (Index j = 0; j < alpha_prev.rows(); ++j) {
    if (!target_used[static_cast<std::size_t>(j)]) out.row(row++) = alpha_prev.row(j);
  }
  for (int i : assignment.new_topics) {
    if (i < 0 || i >= alpha_t.rows()) throw ConfigError("dot_merge: new topic out of range");
    out.row(row++) = alpha_t.row(i);
  }
  return out;
}

TopicAssignment all_new(int num_sources) {
  TopicAssignment a;
  a.new_topics.resize(static_cast<std::size_t>(num_sources));
  std::iota(a.new_topics.begin(), a.new_topics.end(), 0);
  return a;
}

// --- registry --------------------------------------------------------------

void TopicRegistry::update(const TopicAssignment& assignment, int t,
                           const std::vector<int>& locals, const std::vector<int>& prev_locals,
                           const std::map<int, int>& doc_argmax_counts) {
  if (t != num_steps()) {
    throw ConfigError("registry: expected timestep " + std::to_string(num_steps()) + ", got " +
                      std::to_string(t));
  }
  const std::size_t n_sources = assignment.matches.size() + assignment.new_topics.size();
  if (n_sources != locals.size()) {
    throw ConfigError("registry: assignment does not cover the listed local topics");
  }
  std::vector<int> seen(locals.size(), 0);
  std::map<int, int> map;
  for (const auto& m : assignment.matches) {
    if (m.src < 0 || static_cast<std::size_t>(m.src) >= locals.size()) {
      throw ConfigError("registry: source index out of range");
    }
    if (t == 0 || m.dst < 0 || static_cast<std::size_t>(m.dst) >= prev_locals.size()) {
      throw ConfigError("registry: match target does not exist at the previous step");
    }
    const auto& prev = steps_[static_cast<std::size_t>(t - 1)];
    auto it = prev.find(prev_locals[static_cast<std::size_t>(m.dst)]);
    if (it == prev.end()) throw ConfigError("registry: match target has no global id");
    ++seen[static_cast<std::size_t>(m.src)];
    map[locals[static_cast<std::size_t>(m.src)]] = it->second;
  }
  for (int s : assignment.new_topics) {
    if (s < 0 || static_cast<std::size_t>(s) >= locals.size()) {
      throw ConfigError("registry: source index out of range");
    }
    ++seen[static_cast<std::size_t>(s)];
    GlobalTopic g;
    g.id = static_cast<int>(topics_.size());
    g.birth = t;
    g.freq_series.assign(static_cast<std::size_t>(t), 0.0);
    topics_.push_back(std::move(g));
    map[locals[static_cast<std::size_t>(s)]] = topics_.back().id;
  }
  if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
    throw ConfigError("registry: every source topic must be classified exactly once");
  }
  for (auto& g : topics_) g.freq_series.resize(static_cast<std::size_t>(t + 1), 0.0);
  for (const auto& [local, count] : doc_argmax_counts) {
    if (count < 0) throw ConfigError("registry: negative document count");
    auto it = map.find(local);
    if (it != map.end()) topics_[static_cast<std::size_t>(it->second)].freq_series.back() += count;
  }
  steps_.push_back(std::move(map));
}

const std::map<int, int>& TopicRegistry::local_to_global(int t) const {
  if (t < 0 || t >= num_steps()) throw ConfigError("registry: no such timestep");
  return steps_[static_cast<std::size_t>(t)];
}

int TopicRegistry::global_id(int t, int local) const {
  const auto& m = local_to_global(t);
  auto it = m.find(local);
  return it == m.end() ? -1 : it->second;
}

nlohmann::json TopicRegistry::to_json() const {
  nlohmann::json topics = nlohmann::json::array();
  for (const auto& g : topics_) {
    topics.push_back({{"id", g.id}, {"birth", g.birth}, {"freq_series", g.freq_series}});
  }
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < steps_.size(); ++t) {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& [local, gid] : steps_[t]) m.push_back({{"local", local}, {"global", gid}});
    steps.push_back({{"t", t}, {"local_to_global", m}});
  }
  return {{"global_topics", topics}, {"steps", steps}};
}

TopicRegistry TopicRegistry::from_json(const nlohmann::json& j) {
  TopicRegistry r;
  try {
    for (const auto& g : j.at("global_topics")) {
      GlobalTopic topic;
      topic.id = g.at("id").get<int>();
      topic.birth = g.at("birth").get<int>();
      topic.freq_series = g.at("freq_series").get<std::vector<double>>();
      if (topic.id != static_cast<int>(r.topics_.size())) {
        throw InputError("registry: global ids must be contiguous");
      }
      r.topics_.push_back(std::move(topic));
    }
    for (const auto& s : j.at("steps")) {
      std::map<int, int> m;
      for (const auto& e : s.at("local_to_global")) {
        m[e.at("local").get<int>()] = e.at("global").get<int>();
      }
      r.steps_.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("registry: ") + e.what());
  }
  return r;
}

TopicRegistry update_registry(TopicRegistry reg, const TopicAssignment& assignment, int t,
                              const std::map<int, int>& doc_argmax_counts) {
  std::vector<int> locals(assignment.matches.size() + assignment.new_topics.size());
  std::iota(locals.begin(), locals.end(), 0);
  std::vector<int> prev_locals;
  if (t > 0) {
    const auto& prev = reg.local_to_global(t - 1);
    const int top = prev.empty() ? 0 : prev.rbegin()->first + 1;
    prev_locals.resize(static_cast<std::size_t>(top));
    std::iota(prev_locals.begin(), prev_locals.end(), 0);
  }
  reg.update(assignment, t, locals, prev_locals, doc_argmax_counts);
  return reg;
}

}  // namespace sbsetm
