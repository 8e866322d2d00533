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

#include "sbsetm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace sbsetm {

namespace {

constexpr const char* kEnglishStopwords =
    "i me my myself we our ours ourselves you your yours yourself "
    "yourselves he him his himself she her hers herself it its itself they "
    "them their theirs themselves what which who whom this that these "
    "those am is are was were be been being have has had having do does "
    "did doing a an the and but if or because as until while of at by for "
    "with about against between into through during before after above "
    "below to from up down in out on off over under again further then "
    "once here there when where why how all any both each few more most "
    "other some such no nor not only own same so than too very s t can "
    "will just don should now d ll m o re ve y ain aren couldn didn doesn "
    "hadn hasn haven isn ma mightn mustn needn shan shouldn wasn weren won "
    "wouldn";

bool is_alpha_token(std::string_view tok) {
  return std::all_of(tok.begin(), tok.end(), [](unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  });
}

// Splits normalized text; the token filters run afterwards.
std::vector<std::string> split_normalized(std::string_view raw) {
  std::string text;
  text.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(raw[i]);
    // U+2019 RIGHT SINGLE QUOTATION MARK (E2 80 99) counts as an apostrophe.
    if (c == 0xE2 && i + 2 < raw.size() &&
        static_cast<unsigned char>(raw[i + 1]) == 0x80 &&
        static_cast<unsigned char>(raw[i + 2]) == 0x99) {
      text.push_back(' ');
      i += 2;
      continue;
    }
    if (c == '\'') {
      text.push_back(' ');
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else if (c < 0x80 && std::isspace(c)) {
      text.push_back(' ');
    } else {
      text.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

bool keep_token(const std::string& tok, const StopwordSet& stopwords) {
  return tok.size() > 2 && is_alpha_token(tok) && !stopwords.contains(tok);
}

}  // namespace

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = kDigits[v & 0xF];
    v >>= 4;
  }
  return s;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index.find(std::string(token));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

int Document::total() const {
  int n = 0;
  for (const auto& [id, c] : counts) n += c;
  return n;
}

TokenList tokenize_normalize(std::string_view raw, const StopwordSet& stopwords) {
  TokenList out;
  for (auto& tok : split_normalized(raw)) {
    if (keep_token(tok, stopwords)) out.push_back(std::move(tok));
  }
  return out;
}

Normalizer::Normalizer() : stopwords_(default_english_stopwords()) {}

Normalizer::Normalizer(StopwordSet stopwords, LemmaMap lemmas)
    : stopwords_(std::move(stopwords)), lemmas_(std::move(lemmas)) {}

TokenList Normalizer::operator()(std::string_view raw) const {
  TokenList out;
  for (auto& tok : split_normalized(raw)) {
    if (!lemmas_.empty()) {
      auto it = lemmas_.find(tok);
      if (it != lemmas_.end()) tok = it->second;
    }
    if (keep_token(tok, stopwords_)) out.push_back(std::move(tok));
  }
  return out;
}

const StopwordSet& default_english_stopwords() {
  static const StopwordSet words = [] {
    StopwordSet s;
    std::istringstream in(kEnglishStopwords);
    std::string w;
    while (in >> w) s.insert(w);
    return s;
  }();
  return words;
}

Vocabulary build_vocabulary(std::span<const TokenList> docs, int min_count,
                            double max_doc_frac) {
  if (docs.empty()) throw InputError("build_vocabulary: no documents");
  // std::map keeps the lexicographic order used for ids.
  std::map<std::string, std::pair<long, int>> stats;  // token -> (freq, df)
  for (const auto& doc : docs) {
    std::unordered_set<std::string_view> seen;
    for (const auto& tok : doc) {
      auto& s = stats[tok];
      s.first += 1;
      if (seen.insert(tok).second) s.second += 1;
    }
  }
  const double n_docs = static_cast<double>(docs.size());
  Vocabulary vocab;
  for (const auto& [tok, s] : stats) {
    if (s.first < min_count) continue;
    if (static_cast<double>(s.second) / n_docs > max_doc_frac) continue;
    vocab.index.emplace(tok, vocab.size());
    vocab.tokens.push_back(tok);
    vocab.doc_freq.push_back(s.second);
  }
  if (vocab.tokens.empty()) {
    throw InputError("build_vocabulary: pruning removed every token");
  }
  return vocab;
}

Document to_bow(std::span<const std::string> tokens, const Vocabulary& vocab,
                std::string id, int timestep, std::optional<std::string> label) {
  std::map<int, int> tally;
  for (const auto& tok : tokens) {
    auto it = vocab.index.find(tok);
    if (it != vocab.index.end()) ++tally[it->second];
  }
  if (tally.empty()) {
    throw InputError("to_bow: document '" + id + "' has no in-vocabulary token");
  }
  Document doc;
  doc.id = std::move(id);
  doc.timestep = timestep;
  doc.label = std::move(label);
  doc.counts.assign(tally.begin(), tally.end());
  return doc;
}

StreamBatch make_batch(int t, std::span<const RawDocument> docs,
                       const Normalizer& normalizer, int min_count,
                       double max_doc_frac) {
  if (docs.empty()) {
    throw InputError("timestep " + std::to_string(t) + " has no documents");
  }
  std::vector<TokenList> tokenized;
  tokenized.reserve(docs.size());
  for (const auto& d : docs) tokenized.push_back(normalizer(d.text));

  StreamBatch batch;
  batch.t = t;
  batch.vocabulary = build_vocabulary(tokenized, min_count, max_doc_frac);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    try {
      batch.documents.push_back(
          to_bow(tokenized[i], batch.vocabulary, docs[i].id, t, docs[i].label));
    } catch (const InputError&) {
      ++batch.dropped;
    }
  }
  if (batch.documents.empty()) {
    throw InputError("timestep " + std::to_string(t) +
                     " has no document with in-vocabulary tokens");
  }
  return batch;
}

std::vector<StreamBatch> make_stream(std::span<const RawDocument> docs,
                                     const Normalizer& normalizer,
                                     const StreamOptions& options) {
  if (docs.empty()) throw InputError("make_stream: empty corpus");
  std::vector<std::vector<RawDocument>> groups;
  if (options.batch_size > 0) {
    for (std::size_t i = 0; i < docs.size(); ++i) {
      std::size_t t = i / static_cast<std::size_t>(options.batch_size);
      if (groups.size() <= t) groups.resize(t + 1);
      RawDocument d = docs[i];
      d.timestep = static_cast<int>(t);
      groups[t].push_back(std::move(d));
    }
  } else {
    for (const auto& d : docs) {
      if (d.timestep < 0) throw InputError("negative timestep in document " + d.id);
      if (groups.size() <= static_cast<std::size_t>(d.timestep)) {
        groups.resize(static_cast<std::size_t>(d.timestep) + 1);
      }
      groups[static_cast<std::size_t>(d.timestep)].push_back(d);
    }
  }
  std::vector<StreamBatch> out;
  out.reserve(groups.size());
  for (std::size_t t = 0; t < groups.size(); ++t) {
    out.push_back(make_batch(static_cast<int>(t), groups[t], normalizer,
                             options.min_count, options.max_doc_frac));
  }
  return out;
}

// --- synthetic -------------------------------------------------------------

SyntheticSchedule default_schedule() {
  SyntheticSchedule s;
  for (int t = 0; t < 11; ++t) {
    if (t < 7) {
      s.active_sets.push_back({0, 1, 2});
    } else if (t < 10) {
      s.active_sets.push_back({0, 2, 3});
    } else {
      s.active_sets.push_back({0, 2, 3, 4});
    }
  }
  return s;
}

std::vector<std::string> synthetic_tokens(int vocab_size) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(vocab_size));
  for (int i = 0; i < vocab_size; ++i) {
    std::string s = "w";
    int v = i;
    std::string letters(4, 'a');
    for (int p = 3; p >= 0; --p) {
      letters[static_cast<std::size_t>(p)] = static_cast<char>('a' + v % 26);
      v /= 26;
    }
    out.push_back(s + letters);
  }
  return out;
}

Matrix block_topic_word_dists(int num_topics, int vocab_size, double zipf_exponent) {
  if (num_topics < 1 || vocab_size < num_topics) {
    throw ConfigError("block_topic_word_dists: need vocab_size >= num_topics >= 1");
  }
  Matrix dists = Matrix::Zero(num_topics, vocab_size);
  const int block = vocab_size / num_topics;
  for (int k = 0; k < num_topics; ++k) {
    for (int r = 0; r < block; ++r) {
      dists(k, k * block + r) = 1.0 / std::pow(r + 1.0, zipf_exponent);
    }
    dists.row(k) /= dists.row(k).sum();
  }
  return dists;
}

SyntheticDocuments generate_synthetic_documents(const SyntheticSchedule& schedule,
                                                const Matrix& topic_word_dists,
                                                std::span<const std::string> tokens) {
  if (schedule.active_sets.empty()) throw ConfigError("synthetic schedule has no steps");
  if (schedule.docs_per_step < 1) throw ConfigError("docs_per_step must be >= 1");
  if (schedule.doc_length < 1) throw ConfigError("doc_length must be >= 1");
  if (static_cast<Index>(tokens.size()) != topic_word_dists.cols()) {
    throw ConfigError("token list does not match topic-word matrix width");
  }
  for (Index k = 0; k < topic_word_dists.rows(); ++k) {
    if (std::abs(topic_word_dists.row(k).sum() - 1.0) > 1e-9 ||
        topic_word_dists.row(k).minCoeff() < 0.0) {
      throw ConfigError("topic-word row " + std::to_string(k) + " is not a distribution");
    }
  }
  Rng rng(schedule.seed);
  SyntheticDocuments out;
  std::vector<std::discrete_distribution<int>> word_dists;
  for (Index k = 0; k < topic_word_dists.rows(); ++k) {
    std::vector<double> w(static_cast<std::size_t>(topic_word_dists.cols()));
    for (Index v = 0; v < topic_word_dists.cols(); ++v) {
      w[static_cast<std::size_t>(v)] = topic_word_dists(k, v);
    }
    word_dists.emplace_back(w.begin(), w.end());
  }
  for (std::size_t t = 0; t < schedule.active_sets.size(); ++t) {
    const auto& active = schedule.active_sets[t];
    if (active.empty()) {
      throw ConfigError("empty active topic set at step " + std::to_string(t));
    }
    for (int k : active) {
      if (k < 0 || k >= topic_word_dists.rows()) {
        throw ConfigError("active topic " + std::to_string(k) + " out of range");
      }
    }
    out.truth.active_sets.push_back(active);
    out.truth.k_real.push_back(static_cast<int>(active.size()));
    std::vector<int> labels;
    std::uniform_int_distribution<std::size_t> pick(0, active.size() - 1);
    for (int d = 0; d < schedule.docs_per_step; ++d) {
      int topic = active[pick(rng)];
      labels.push_back(topic);
      std::string text;
      for (int n = 0; n < schedule.doc_length; ++n) {
        if (n) text.push_back(' ');
        text += tokens[static_cast<std::size_t>(word_dists[static_cast<std::size_t>(topic)](rng))];
      }
      RawDocument doc;
      doc.id = "t" + std::to_string(t) + "_d" + std::to_string(d);
      doc.text = std::move(text);
      doc.timestep = static_cast<int>(t);
      doc.label = "topic" + std::to_string(topic);
      out.documents.push_back(std::move(doc));
    }
    out.truth.doc_topics.push_back(std::move(labels));
  }
  return out;
}

SyntheticStream generate_synthetic_stream(const SyntheticSchedule& schedule,
                                          const Matrix& topic_word_dists,
                                          std::span<const std::string> tokens,
                                          const Normalizer& normalizer) {
  auto docs = generate_synthetic_documents(schedule, topic_word_dists, tokens);
  SyntheticStream out;
  out.batches = make_stream(docs.documents, normalizer);
  out.truth = std::move(docs.truth);
  return out;
}

// --- embeddings ------------------------------------------------------------

EmbeddingTable::EmbeddingTable(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path, int dim,
                                    std::uint64_t seed,
                                    const std::unordered_set<std::string>* keep) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embedding file " + path.string());
  EmbeddingTable table(dim, seed);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    std::string field;
    while (ls >> field) {
      char* end = nullptr;
      double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        throw InputError(path.string() + ":" + std::to_string(lineno) +
                         ": malformed value '" + field + "'");
      }
      values.push_back(v);
    }
    if (static_cast<int>(values.size()) != dim) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(dim) + " values, found " +
                       std::to_string(values.size()));
    }
    if (keep && !keep->contains(token)) continue;
    table.rows_[token] = Eigen::Map<Vector>(values.data(), dim);
  }
  return table;
}

bool EmbeddingTable::contains(const std::string& token) const {
  return rows_.contains(token);
}

Vector EmbeddingTable::row(const std::string& token) const {
  if (auto it = rows_.find(token); it != rows_.end()) return it->second;
  Rng rng(derive_seed(seed_, token));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
  Vector v(dim_);
  for (int i = 0; i < dim_; ++i) v(i) = normal(rng);
  return v;
}

void EmbeddingTable::insert(std::string token, Vector row) {
  if (row.size() != dim_) throw ConfigError("embedding row has wrong dimension");
  rows_[std::move(token)] = std::move(row);
}

WordEmbeddings embed_vocabulary(const EmbeddingTable& table,
                                std::span<const std::string> tokens) {
  WordEmbeddings out;
  out.dim = table.dim();
  out.rho.resize(static_cast<Index>(tokens.size()), table.dim());
  int found = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (table.contains(tokens[i])) ++found;
    out.rho.row(static_cast<Index>(i)) = table.row(tokens[i]).transpose();
  }
  out.coverage = tokens.empty() ? 0.0 : static_cast<double>(found) / tokens.size();
  return out;
}

WordEmbeddings load_word_embeddings(const std::filesystem::path& path,
                                    const Vocabulary& vocab, int dim,
                                    std::uint64_t seed) {
  std::unordered_set<std::string> keep(vocab.tokens.begin(), vocab.tokens.end());
  auto table = EmbeddingTable::load(path, dim, seed, &keep);
  return embed_vocabulary(table, vocab.tokens);
}

// --- file formats ----------------------------------------------------------

std::vector<RawDocument> read_jsonl_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus " + path.string());
  std::vector<RawDocument> docs;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("text") || !j["text"].is_string()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": missing \"text\"");
    }
    RawDocument d;
    d.text = j["text"].get<std::string>();
    if (j.contains("id")) {
      d.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      d.id = std::to_string(docs.size());
    }
    d.timestep = j.value("timestep", 0);
    if (j.contains("label") && !j["label"].is_null()) {
      d.label = j["label"].is_string() ? j["label"].get<std::string>() : j["label"].dump();
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

void write_jsonl_corpus(const std::filesystem::path& path,
                        std::span<const RawDocument> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["text"] = d.text;
    j["timestep"] = d.timestep;
    if (d.label) j["label"] = *d.label;
    out << j.dump() << '\n';
  }
}

StopwordSet read_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open word list " + path.string());
  StopwordSet out;
  std::string w;
  while (in >> w) out.insert(w);
  return out;
}

LemmaMap read_lemma_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open lemma map " + path.string());
  LemmaMap out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok, lemma;
    if (!(ls >> tok)) continue;
    if (!(ls >> lemma)) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected 'token lemma'");
    }
    out[tok] = lemma;
  }
  return out;
}

}  // namespace sbsetm
