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


// Topic-quality metrics and export helpers: top words, diversity, coherence,
// harmonic mean, dispersion, the combined score, frequency series, the
// topic-term count matrix and PCA projections.

#ifndef SBSETM_EVAL_HPP_
#define SBSETM_EVAL_HPP_

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sbsetm/common.hpp"
#include "sbsetm/trace.hpp"

namespace sbsetm {

using TopicWords = std::vector<std::vector<std::string>>;

// Indices of the n largest entries of column k of beta, ties by index.
std::vector<int> top_word_ids(const Matrix& beta, int k, int n = 10);

std::vector<std::string> top_words(const Matrix& beta, int k,
                                   std::span<const std::string> vocab, int n = 10);

// Distinct tokens over the total number of listed tokens. Every list must
// have the same length.
double topic_diversity(const TopicWords& topics);

enum class CoherenceMode { kNpmi, kUmass };

CoherenceMode parse_coherence_mode(const std::string& s);
std::string to_string(CoherenceMode m);

// Document-level co-occurrence statistics over a reference corpus.
class CooccurrenceIndex {
 public:
  explicit CooccurrenceIndex(std::span<const std::vector<std::string>> docs);

  int num_docs() const { return num_docs_; }
  int count(const std::string& w) const;
  int count(const std::string& a, const std::string& b) const;

 private:
  int num_docs_ = 0;
  std::map<std::string, std::vector<int>> postings_;  // sorted document ids
};

// NPMI: mean over topics of the mean pairwise NPMI of the first `top_n`
// words, smoothed with eps. UMass: mean over topics of the mean of
// log((D(w_i, w_j) + 1) / D(w_j)) over pairs where w_j ranks above w_i.
// Pairs with a word absent from the corpus are skipped; throws when every
// pair is skipped.
double topic_coherence(const TopicWords& topics, const CooccurrenceIndex& index,
                       CoherenceMode mode = CoherenceMode::kNpmi, int top_n = 10,
                       double eps = 1e-12);

double topic_coherence(const TopicWords& topics,
                       std::span<const std::vector<std::string>> ref_docs,
                       CoherenceMode mode = CoherenceMode::kNpmi, int top_n = 10,
                       double eps = 1e-12);

double npmi_pair(int n_i, int n_j, int n_ij, int num_docs, double eps = 1e-12);

double harmonic_mean(double tc, double td);

struct Dispersion {
  std::vector<double> errors;
  double delta = 0.0;
};

Dispersion dispersion_delta(std::span<const double> k_preds, double k_real);

double p_metric(double delta, double h);

// Rows: global ids. Columns: timesteps. Entry (g, t) is the fraction of
// documents at t whose argmax topic maps to g; documents whose topic has no
// global id are left out of the denominator.
Matrix topic_frequency_series(const TopicRegistry& registry,
                              const std::vector<std::vector<int>>& doc_argmax);

struct TopicTermMatrix {
  std::vector<int> topics;             // global ids, ascending
  std::vector<std::string> categories; // labels, lexicographic
  Matrix counts;
  Matrix scaled;  // each column divided by its total
};

TopicTermMatrix topic_term_count_matrix(
    std::span<const std::optional<std::string>> labels, std::span<const int> global_ids);

struct PcaProjection {
  Matrix coords;               // n x dims
  Vector explained_variance;   // dims
  double total_variance = 0.0;
};

// Centered projection on the leading eigenvectors, computed from the n x n
// Gram matrix. Each component's sign makes its largest-magnitude coordinate
// positive.
PcaProjection pca_project(const Matrix& embeddings, int dims = 2);

// --- reports ---------------------------------------------------------------

struct RunMetrics {
  std::string name;
  int k_init = 0;
  std::optional<double> tc;
  std::optional<double> td;
  std::optional<double> h;
  std::vector<int> k_pred;  // per timestep
  double mean_k_pred = 0.0;
};

struct MetricReport {
  std::vector<RunMetrics> runs;
  std::vector<int> k_real;  // per timestep, empty when unknown
  std::optional<double> mean_k_real;
  std::optional<double> h;  // arithmetic mean over runs
  std::vector<double> errors;
  std::optional<double> delta;
  std::optional<double> p;
  CoherenceMode tc_mode = CoherenceMode::kNpmi;
};

// Fills the aggregate fields from the per-run entries.
void finalize_report(MetricReport& report);

nlohmann::json to_json(const MetricReport& report);

void write_frequency_csv(std::ostream& os, const TopicRegistry& registry,
                         const Matrix& series);
void write_matrix_csv(std::ostream& os, const TopicTermMatrix& m);

struct PcaPoint {
  int id = 0;
  int t = 0;
};

void write_pca_csv(std::ostream& os, std::span<const PcaPoint> points, const Matrix& coords);

}  // namespace sbsetm

#endif  // SBSETM_EVAL_HPP_
