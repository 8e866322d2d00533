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

// Corpus handling: text normalization, per-timestep vocabularies,
// bag-of-words encoding, stream batching, word embeddings and the synthetic
// stream generator.

#ifndef SBSETM_CORPUS_HPP_
#define SBSETM_CORPUS_HPP_

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sbsetm/common.hpp"

namespace sbsetm {

using TokenList = std::vector<std::string>;
using StopwordSet = std::unordered_set<std::string>;
using LemmaMap = std::unordered_map<std::string, std::string>;

// One line of the JSON-lines corpus format.
struct RawDocument {
  std::string id;
  std::string text;
  int timestep = 0;
  std::optional<std::string> label;
};

struct Vocabulary {
  std::vector<std::string> tokens;             // id -> token, lexicographic
  std::unordered_map<std::string, int> index;  // token -> id
  std::vector<int> doc_freq;                   // id -> #documents containing it

  int size() const { return static_cast<int>(tokens.size()); }
  std::optional<int> find(std::string_view token) const;
};

struct Document {
  std::string id;
  int timestep = 0;
  // (token id, count) pairs sorted by token id, counts > 0.
  std::vector<std::pair<int, int>> counts;
  std::optional<std::string> label;

  int total() const;
};

struct StreamBatch {
  int t = 0;
  std::vector<Document> documents;
  Vocabulary vocabulary;
  int dropped = 0;  // documents with no in-vocabulary token
};

// Lowercases, turns apostrophes into spaces, deletes ASCII punctuation and
// splits on whitespace. Keeps ASCII-alphabetic tokens longer than two
// characters that are not stopwords.
TokenList tokenize_normalize(std::string_view raw, const StopwordSet& stopwords);

// Tokenizer with an optional lemma map (token -> lemma) applied before the
// token filters run.
class Normalizer {
 public:
  Normalizer();
  explicit Normalizer(StopwordSet stopwords, LemmaMap lemmas = {});

  TokenList operator()(std::string_view raw) const;

  const StopwordSet& stopwords() const { return stopwords_; }

 private:
  StopwordSet stopwords_;
  LemmaMap lemmas_;
};

const StopwordSet& default_english_stopwords();

// Pruning keeps tokens with corpus frequency >= min_count that appear in at
// most max_doc_frac of the documents. Throws InputError when nothing is left.
Vocabulary build_vocabulary(std::span<const TokenList> docs, int min_count = 2,
                            double max_doc_frac = 0.7);

// Counts in-vocabulary tokens. Throws InputError when none of them is known.
Document to_bow(std::span<const std::string> tokens, const Vocabulary& vocab,
                std::string id = {}, int timestep = 0,
                std::optional<std::string> label = std::nullopt);

struct StreamOptions {
  int batch_size = 0;  // > 0 slices the ordered corpus, ignoring timesteps
  int min_count = 2;
  double max_doc_frac = 0.7;
};

// One StreamBatch per timestep, each with its own vocabulary.
std::vector<StreamBatch> make_stream(std::span<const RawDocument> docs,
                                     const Normalizer& normalizer,
                                     const StreamOptions& options = {});

// Single-batch helper used by make_stream and the pipeline.
StreamBatch make_batch(int t, std::span<const RawDocument> docs,
                       const Normalizer& normalizer, int min_count = 2,
                       double max_doc_frac = 0.7);

// --- synthetic streams -----------------------------------------------------

struct SyntheticSchedule {
  std::vector<std::vector<int>> active_sets;  // per-step active topic ids
  int docs_per_step = 200;
  int doc_length = 60;
  std::uint64_t seed = 0;
  int vocab_size = 300;
  int num_topics = 5;
  double zipf_exponent = 1.0;
};

// Five topics; {0,1,2} for steps 0-6, topic 1 replaced by topic 3 at step 7,
// topic 4 joins at step 10. Eleven steps in total.
SyntheticSchedule default_schedule();

struct SyntheticGroundTruth {
  std::vector<int> k_real;                     // per step
  std::vector<std::vector<int>> active_sets;   // per step
  std::vector<std::vector<int>> doc_topics;    // per step, per document
};

struct SyntheticDocuments {
  std::vector<RawDocument> documents;  // ordered by timestep
  SyntheticGroundTruth truth;
};

// Alphabetic token names for synthetic vocabularies ("wa..." style).
std::vector<std::string> synthetic_tokens(int vocab_size);

// Disjoint-block topics: topic k owns a contiguous block of the vocabulary
// with Zipf-shaped weights. Rows are probability vectors.
Matrix block_topic_word_dists(int num_topics, int vocab_size,
                              double zipf_exponent = 1.0);

// Each document picks a topic uniformly from the step's active set and draws
// doc_length tokens i.i.d. from that topic's row.
SyntheticDocuments generate_synthetic_documents(
    const SyntheticSchedule& schedule, const Matrix& topic_word_dists,
    std::span<const std::string> tokens);

struct SyntheticStream {
  std::vector<StreamBatch> batches;
  SyntheticGroundTruth truth;
};

SyntheticStream generate_synthetic_stream(const SyntheticSchedule& schedule,
                                          const Matrix& topic_word_dists,
                                          std::span<const std::string> tokens,
                                          const Normalizer& normalizer = {});

// --- word embeddings -------------------------------------------------------

// Token -> vector table. Tokens missing from the source file get a
// deterministic N(0, 1/L) row seeded from (seed, token), so the same token
// maps to the same vector at every timestep.
class EmbeddingTable {
 public:
  EmbeddingTable(int dim, std::uint64_t seed);

  // Parses "token v1 ... vL" lines. When `keep` is given only those tokens
  // are stored.
  static EmbeddingTable load(const std::filesystem::path& path, int dim,
                             std::uint64_t seed,
                             const std::unordered_set<std::string>* keep = nullptr);

  int dim() const { return dim_; }
  bool contains(const std::string& token) const;
  Vector row(const std::string& token) const;
  void insert(std::string token, Vector row);

 private:
  int dim_;
  std::uint64_t seed_;
  std::unordered_map<std::string, Vector> rows_;
};

struct WordEmbeddings {
  Matrix rho;  // V x L
  int dim = 0;
  double coverage = 0.0;
};

WordEmbeddings embed_vocabulary(const EmbeddingTable& table,
                                std::span<const std::string> tokens);

WordEmbeddings load_word_embeddings(const std::filesystem::path& path,
                                    const Vocabulary& vocab, int dim,
                                    std::uint64_t seed = 0);

// --- file formats ----------------------------------------------------------

std::vector<RawDocument> read_jsonl_corpus(const std::filesystem::path& path);
void write_jsonl_corpus(const std::filesystem::path& path,
                        std::span<const RawDocument> docs);
StopwordSet read_word_list(const std::filesystem::path& path);
LemmaMap read_lemma_map(const std::filesystem::path& path);

}  // namespace sbsetm

#endif  // SBSETM_CORPUS_HPP_
