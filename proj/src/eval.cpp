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


#include "sbsetm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <unordered_set>

#include <Eigen/Eigenvalues>

namespace sbsetm {

std::vector<int> top_word_ids(const Matrix& beta, int k, int n) {
  if (k < 0 || k >= beta.cols()) throw ConfigError("top_words: topic index out of range");
  if (n < 1 || n > beta.rows()) throw ConfigError("top_words: n must be in [1, V]");
  std::vector<int> ids(static_cast<std::size_t>(beta.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  auto greater = [&](int x, int y) {
    const double bx = beta(x, k);
    const double by = beta(y, k);
    return bx != by ? bx > by : x < y;
  };
  std::partial_sort(ids.begin(), ids.begin() + n, ids.end(), greater);
  ids.resize(static_cast<std::size_t>(n));
  return ids;
}

std::vector<std::string> top_words(const Matrix& beta, int k,
                                   std::span<const std::string> vocab, int n) {
  if (static_cast<Index>(vocab.size()) != beta.rows()) {
    throw ConfigError("top_words: vocabulary size does not match beta");
  }
  std::vector<std::string> out;
  for (int id : top_word_ids(beta, k, n)) out.push_back(vocab[static_cast<std::size_t>(id)]);
  return out;
}

double topic_diversity(const TopicWords& topics) {
  if (topics.empty()) throw ConfigError("topic_diversity: no topics");
  const std::size_t n = topics.front().size();
  if (n == 0) throw ConfigError("topic_diversity: empty word list");
  std::unordered_set<std::string> distinct;
  for (const auto& t : topics) {
    if (t.size() != n) throw ConfigError("topic_diversity: word lists differ in length");
    distinct.insert(t.begin(), t.end());
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(n * topics.size());
}

CoherenceMode parse_coherence_mode(const std::string& s) {
  if (s == "npmi") return CoherenceMode::kNpmi;
  if (s == "umass") return CoherenceMode::kUmass;
  throw ConfigError("unknown coherence mode '" + s + "'");
}

std::string to_string(CoherenceMode m) { return m == CoherenceMode::kNpmi ? "npmi" : "umass"; }

CooccurrenceIndex::CooccurrenceIndex(std::span<const std::vector<std::string>> docs)
    : num_docs_(static_cast<int>(docs.size())) {
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const std::set<std::string> uniq(docs[d].begin(), docs[d].end());
    for (const auto& w : uniq) postings_[w].push_back(static_cast<int>(d));
  }
}

int CooccurrenceIndex::count(const std::string& w) const {
  auto it = postings_.find(w);
  return it == postings_.end() ? 0 : static_cast<int>(it->second.size());
}

int CooccurrenceIndex::count(const std::string& a, const std::string& b) const {
  auto ia = postings_.find(a);
  auto ib = postings_.find(b);
  if (ia == postings_.end() || ib == postings_.end()) return 0;
  const auto& x = ia->second;
  const auto& y = ib->second;
  int n = 0;
  for (std::size_t i = 0, j = 0; i < x.size() && j < y.size();) {
    if (x[i] < y[j]) {
      ++i;
    } else if (y[j] < x[i]) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

double npmi_pair(int n_i, int n_j, int n_ij, int num_docs, double eps) {
  const double D = static_cast<double>(num_docs);
  const double p_i = n_i / D;
  const double p_j = n_j / D;
  const double p_ij = n_ij / D;
  // Both words in every document: perfect association.
  if (n_ij == num_docs) return 1.0;
  return std::log((p_ij + eps) / (p_i * p_j)) / -std::log(p_ij + eps);
}

double topic_coherence(const TopicWords& topics, const CooccurrenceIndex& index,
                       CoherenceMode mode, int top_n, double eps) {
  if (index.num_docs() == 0) throw ConfigError("topic_coherence: empty reference corpus");
  if (top_n < 2) throw ConfigError("topic_coherence: need at least two words per topic");
  double total = 0.0;
  int scored_topics = 0;
  for (const auto& topic : topics) {
    const std::size_t n = std::min(topic.size(), static_cast<std::size_t>(top_n));
    double sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 1; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        const int c_i = index.count(topic[i]);
        const int c_j = index.count(topic[j]);
        if (c_i == 0 || c_j == 0) continue;
        const int c_ij = index.count(topic[i], topic[j]);
        if (mode == CoherenceMode::kNpmi) {
          sum += npmi_pair(c_i, c_j, c_ij, index.num_docs(), eps);
        } else {
          sum += std::log((c_ij + 1.0) / c_j);
        }
        ++pairs;
      }
    }
    if (pairs == 0) continue;
    total += sum / pairs;
    ++scored_topics;
  }
  if (scored_topics == 0) {
    throw InputError("topic_coherence: no word pair occurs in the reference corpus");
  }
  return total / scored_topics;
}

double topic_coherence(const TopicWords& topics,
                       std::span<const std::vector<std::string>> ref_docs, CoherenceMode mode,
                       int top_n, double eps) {
  return topic_coherence(topics, CooccurrenceIndex(ref_docs), mode, top_n, eps);
}

double harmonic_mean(double tc, double td) {
  if (!(tc > 0.0) || !(td > 0.0)) throw ConfigError("harmonic_mean: inputs must be positive");
  return 2.0 * tc * td / (tc + td);
}

Dispersion dispersion_delta(std::span<const double> k_preds, double k_real) {
  if (k_preds.size() < 2) throw ConfigError("dispersion_delta: need at least two runs");
  Dispersion out;
  for (double k : k_preds) out.errors.push_back(std::abs(k - k_real));
  const auto [lo, hi] = std::minmax_element(out.errors.begin(), out.errors.end());
  out.delta = *hi - *lo;
  return out;
}

double p_metric(double delta, double h) {
  if (!(delta >= 0.0)) throw ConfigError("p_metric: delta must be nonnegative");
  return delta * (1.0 - h);
}

Matrix topic_frequency_series(const TopicRegistry& registry,
                              const std::vector<std::vector<int>>& doc_argmax) {
  if (static_cast<int>(doc_argmax.size()) > registry.num_steps()) {
    throw ConfigError("topic_frequency_series: more timesteps than the registry holds");
  }
  const Index G = static_cast<Index>(registry.topics().size());
  Matrix out = Matrix::Zero(G, static_cast<Index>(doc_argmax.size()));
  for (std::size_t t = 0; t < doc_argmax.size(); ++t) {
    const auto& map = registry.local_to_global(static_cast<int>(t));
    int mapped = 0;
    for (int local : doc_argmax[t]) {
      auto it = map.find(local);
      if (it == map.end()) continue;
      out(it->second, static_cast<Index>(t)) += 1.0;
      ++mapped;
    }
    if (mapped > 0) out.col(static_cast<Index>(t)) /= static_cast<double>(mapped);
  }
  return out;
}

TopicTermMatrix topic_term_count_matrix(std::span<const std::optional<std::string>> labels,
                                        std::span<const int> global_ids) {
  if (labels.size() != global_ids.size()) {
    throw ConfigError("topic_term_count_matrix: labels and topic ids differ in length");
  }
  if (labels.empty()) throw InputError("topic_term_count_matrix: no documents");
  std::set<int> topic_set;
  std::set<std::string> cat_set;
  for (std::size_t d = 0; d < labels.size(); ++d) {
    if (!labels[d]) throw InputError("topic_term_count_matrix: corpus has unlabeled documents");
    cat_set.insert(*labels[d]);
    topic_set.insert(global_ids[d]);
  }
  TopicTermMatrix m;
  m.topics.assign(topic_set.begin(), topic_set.end());
  m.categories.assign(cat_set.begin(), cat_set.end());
  m.counts = Matrix::Zero(static_cast<Index>(m.topics.size()),
                          static_cast<Index>(m.categories.size()));
  for (std::size_t d = 0; d < labels.size(); ++d) {
    const auto r = std::lower_bound(m.topics.begin(), m.topics.end(), global_ids[d]) -
                   m.topics.begin();
    const auto c = std::lower_bound(m.categories.begin(), m.categories.end(), *labels[d]) -
                   m.categories.begin();
    m.counts(r, c) += 1.0;
  }
  m.scaled = m.counts;
  for (Index c = 0; c < m.scaled.cols(); ++c) m.scaled.col(c) /= m.counts.col(c).sum();
  return m;
}

PcaProjection pca_project(const Matrix& embeddings, int dims) {
  const Index n = embeddings.rows();
  if (n < 3) throw ConfigError("pca_project: need at least three points");
  if (dims < 1 || dims > std::min<Index>(n - 1, embeddings.cols())) {
    throw ConfigError("pca_project: invalid number of dimensions");
  }
  const Matrix X = embeddings.rowwise() - embeddings.colwise().mean();
  const Matrix gram = X * X.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  PcaProjection out;
  out.coords.resize(n, dims);
  out.explained_variance.resize(dims);
  out.total_variance = gram.trace() / static_cast<double>(n - 1);
  for (int c = 0; c < dims; ++c) {
    const Index idx = n - 1 - c;
    const double lambda = std::max(es.eigenvalues()(idx), 0.0);
    Vector u = es.eigenvectors().col(idx);
    Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u(arg) < 0.0) u = -u;
    out.coords.col(c) = u * std::sqrt(lambda);
    out.explained_variance(c) = lambda / static_cast<double>(n - 1);
  }
  return out;
}

// --- reports ---------------------------------------------------------------

void finalize_report(MetricReport& report) {
  report.mean_k_real.reset();
  report.h.reset();
  report.delta.reset();
  report.p.reset();
  report.errors.clear();
  if (!report.k_real.empty()) {
    report.mean_k_real = std::accumulate(report.k_real.begin(), report.k_real.end(), 0.0) /
                         static_cast<double>(report.k_real.size());
  }
  std::vector<double> hs;
  for (const auto& r : report.runs) {
    if (r.h) hs.push_back(*r.h);
  }
  if (!hs.empty() && hs.size() == report.runs.size()) {
    report.h = std::accumulate(hs.begin(), hs.end(), 0.0) / static_cast<double>(hs.size());
  }
  if (report.mean_k_real && report.runs.size() >= 2) {
    std::vector<double> k_preds;
    for (const auto& r : report.runs) k_preds.push_back(r.mean_k_pred);
    const auto d = dispersion_delta(k_preds, *report.mean_k_real);
    report.errors = d.errors;
    report.delta = d.delta;
    if (report.h) report.p = p_metric(d.delta, *report.h);
  }
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"name", r.name},
                    {"k_init", r.k_init},
                    {"tc", opt(r.tc)},
                    {"td", opt(r.td)},
                    {"h", opt(r.h)},
                    {"k_pred", r.k_pred},
                    {"mean_k_pred", r.mean_k_pred}});
  }
  nlohmann::json j = {{"tc_mode", to_string(report.tc_mode)},
                      {"runs", runs},
                      {"k_real", report.k_real.empty() ? nlohmann::json(nullptr)
                                                       : nlohmann::json(report.k_real)},
                      {"mean_k_real", opt(report.mean_k_real)},
                      {"h", opt(report.h)},
                      {"errors", report.delta ? nlohmann::json(report.errors)
                                              : nlohmann::json(nullptr)},
                      {"delta", opt(report.delta)},
                      {"p", opt(report.p)}};
  return j;
}

void write_frequency_csv(std::ostream& os, const TopicRegistry& registry, const Matrix& series) {
  os << "id,birth";
  for (Index t = 0; t < series.cols(); ++t) os << ",t" << t;
  os << '\n' << std::setprecision(12);
  for (const auto& g : registry.topics()) {
    os << g.id << ',' << g.birth;
    for (Index t = 0; t < series.cols(); ++t) os << ',' << series(g.id, t);
    os << '\n';
  }
}

void write_matrix_csv(std::ostream& os, const TopicTermMatrix& m) {
  os << "topic";
  for (const auto& c : m.categories) os << ',' << c;
  os << '\n' << std::setprecision(12);
  for (std::size_t r = 0; r < m.topics.size(); ++r) {
    os << m.topics[r];
    for (Index c = 0; c < m.scaled.cols(); ++c) os << ',' << m.scaled(static_cast<Index>(r), c);
    os << '\n';
  }
}

void write_pca_csv(std::ostream& os, std::span<const PcaPoint> points, const Matrix& coords) {
  if (static_cast<Index>(points.size()) != coords.rows() || coords.cols() < 2) {
    throw ConfigError("write_pca_csv: points and coordinates do not match");
  }
  os << "id,t,x,y\n" << std::setprecision(12);
  for (std::size_t i = 0; i < points.size(); ++i) {
    os << points[i].id << ',' << points[i].t << ',' << coords(static_cast<Index>(i), 0) << ','
       << coords(static_cast<Index>(i), 1) << '\n';
  }
}

}  // namespace sbsetm
