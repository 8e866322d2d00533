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


#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sbsetm/corpus.hpp"
#include "test_util.hpp"

using namespace sbsetm;
using sbsetm::testing::scratch_dir;

namespace {

// Straightforward character-by-character normalizer used as an oracle.
TokenList reference_normalize(const std::string& raw, const StopwordSet& stop) {
  std::string s;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw.compare(i, 3, "\xE2\x80\x99") == 0) {
      s += ' ';
      i += 2;
      continue;
    }
    const unsigned char c = static_cast<unsigned char>(raw[i]);
    if (c == '\'') s += ' ';
    else if (c < 128 && std::ispunct(c)) continue;
    else if (c < 128) s += static_cast<char>(std::tolower(c));
    else s += static_cast<char>(c);
  }
  TokenList out;
  std::string cur;
  auto flush = [&] {
    bool alpha = !cur.empty();
    for (char ch : cur) alpha = alpha && ch >= 'a' && ch <= 'z';
    if (alpha && cur.size() > 2 && !stop.count(cur)) out.push_back(cur);
    cur.clear();
  };
  for (char ch : s) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' || ch == '\f') flush();
    else cur += ch;
  }
  flush();
  return out;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces = {
      "a", "b", "e", "x", "q", "A", "Z", "M", " ", " ", " ", " ", "\t", "\n", "'", "!",
      ".", ",", "-", "(", ")", "?", "\"", "3", "7", "\xE2\x80\x99", "\xC3\xA9", "the", "The",
      "and", "car", "RED", "engine", "don't", "it's"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> len(0, 80);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) s += pieces[pick(rng)];
  return s;
}

std::vector<TokenList> random_token_docs(int n, Rng& rng) {
  static const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps",
                                                 "zeta", "eta", "theta", "iota", "kappa",
                                                 "lambda", "mu", "nuu", "xii", "omicron"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(1, 12);
  std::vector<TokenList> docs(static_cast<std::size_t>(n));
  for (auto& d : docs) {
    const int k = len(rng);
    for (int i = 0; i < k; ++i) d.push_back(words[pick(rng) % (1 + pick(rng))]);
  }
  return docs;
}

}  // namespace

TEST_CASE("tokenize_normalize applies the token rules") {
  CHECK(tokenize_normalize("The car's RED engine!!", {"the"}) ==
        TokenList{"car", "red", "engine"});
  CHECK(tokenize_normalize("a b!!", {}).empty());
  CHECK(tokenize_normalize("", {}).empty());
  CHECK(tokenize_normalize("rock\xE2\x80\x99n roll", {}) == TokenList{"rock", "roll"});
  CHECK(tokenize_normalize("caf\xC3\xA9 abc123 well-known", {}) == TokenList{"wellknown"});
}

TEST_CASE("tokenize_normalize agrees with a reference normalizer on 1000 documents") {
  Rng rng(11);
  const StopwordSet stop = {"the", "and"};
  for (int i = 0; i < 1000; ++i) {
    const auto text = random_text(rng);
    REQUIRE(tokenize_normalize(text, stop) == reference_normalize(text, stop));
  }
}

TEST_CASE("Normalizer maps lemmas before filtering") {
  Normalizer n(StopwordSet{"run"}, LemmaMap{{"running", "run"}, {"cars", "car"}});
  CHECK(n("Running cars") == TokenList{"car"});
}

TEST_CASE("bundled stopword file matches the built-in list") {
  const auto file = read_word_list(std::filesystem::path(SBSETM_DATA_DIR) / "stopwords_en.txt");
  CHECK(file == default_english_stopwords());
}

TEST_CASE("build_vocabulary prunes by frequency and document fraction") {
  std::vector<TokenList> docs;
  for (int i = 0; i < 10; ++i) docs.push_back({"the", "car", "car", i < 3 ? "red" : "blue"});
  docs[0].push_back("once");
  const auto v = build_vocabulary(docs);
  CHECK_FALSE(v.find("the"));
  CHECK_FALSE(v.find("car"));
  CHECK_FALSE(v.find("once"));
  CHECK(v.find("red"));
  CHECK(v.find("blue"));  // 7 of 10 documents is not above the limit
  CHECK(v.size() == 2);
  CHECK_THROWS_AS(build_vocabulary(std::vector<TokenList>{{"solo"}}), InputError);
  CHECK_THROWS_AS(build_vocabulary(std::vector<TokenList>{}), InputError);
}

TEST_CASE("build_vocabulary keeps exactly the tokens a brute-force filter keeps") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto docs = random_token_docs(50, rng);
    std::map<std::string, int> freq;
    std::map<std::string, int> df;
    for (const auto& d : docs) {
      for (const auto& w : d) ++freq[w];
      for (const auto& w : std::set<std::string>(d.begin(), d.end())) ++df[w];
    }
    std::vector<std::string> expected;
    for (const auto& [w, f] : freq) {
      if (f >= 2 && df[w] <= 0.7 * 50) expected.push_back(w);
    }
    if (expected.empty()) continue;
    const auto v = build_vocabulary(docs);
    CHECK(v.tokens == expected);
    for (int id = 0; id < v.size(); ++id) {
      CHECK(v.index.at(v.tokens[static_cast<std::size_t>(id)]) == id);
      CHECK(v.doc_freq[static_cast<std::size_t>(id)] == df[v.tokens[static_cast<std::size_t>(id)]]);
    }
    // Idempotence: rebuilding from the kept tokens changes nothing.
    std::vector<TokenList> kept;
    for (const auto& d : docs) {
      TokenList k;
      for (const auto& w : d) {
        if (v.find(w)) k.push_back(w);
      }
      kept.push_back(k);
    }
    CHECK(build_vocabulary(kept).tokens == v.tokens);
  }
}

TEST_CASE("to_bow counts in-vocabulary tokens") {
  std::vector<TokenList> docs = {{"car", "red"}, {"car", "red"}, {"blue"}, {"blue"}, {"x"}};
  const auto v = build_vocabulary(docs, 2, 1.0);
  const auto d = to_bow(TokenList{"car", "car", "red", "zzz"}, v, "doc", 3, "lbl");
  CHECK(d.counts == std::vector<std::pair<int, int>>{{*v.find("car"), 2}, {*v.find("red"), 1}});
  CHECK(d.total() == 3);
  CHECK(d.timestep == 3);
  CHECK(d.label == "lbl");
  CHECK_THROWS_AS(to_bow(TokenList{"zzz", "yyy"}, v), InputError);
}

TEST_CASE("to_bow equals a brute-force tally") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto docs = random_token_docs(50, rng);
    const auto v = build_vocabulary(docs, 1, 1.0);
    for (const auto& doc : docs) {
      std::map<int, int> tally;
      int in_vocab = 0;
      for (const auto& w : doc) {
        if (auto id = v.find(w)) {
          ++tally[*id];
          ++in_vocab;
        }
      }
      const auto d = to_bow(doc, v);
      CHECK(d.counts == std::vector<std::pair<int, int>>(tally.begin(), tally.end()));
      CHECK(d.total() == in_vocab);
    }
  }
}

TEST_CASE("make_stream slices an ordered corpus into batches") {
  SyntheticSchedule s;
  s.active_sets.assign(11, {0, 1, 2});
  s.docs_per_step = 500;
  s.doc_length = 30;
  s.seed = 3;
  const auto tokens = synthetic_tokens(s.vocab_size);
  const auto sim = generate_synthetic_documents(s, block_topic_word_dists(5, 300), tokens);
  StreamOptions opt;
  opt.batch_size = 500;
  const auto batches = make_stream(sim.documents, Normalizer(), opt);
  REQUIRE(batches.size() == 11);
  std::multiset<std::string> ids_in;
  std::multiset<std::string> ids_out;
  for (const auto& d : sim.documents) ids_in.insert(d.id);
  for (std::size_t t = 0; t < batches.size(); ++t) {
    CHECK(batches[t].documents.size() + batches[t].dropped == 500);
    CHECK(batches[t].t == static_cast<int>(t));
    for (const auto& d : batches[t].documents) {
      CHECK(d.timestep == static_cast<int>(t));
      ids_out.insert(d.id);
    }
  }
  CHECK(ids_in == ids_out);
}

TEST_CASE("make_stream handles a single document and preserves labels") {
  std::vector<RawDocument> one = {{"d0", "engine engine motor", 0, "cars"}};
  StreamOptions opt;
  opt.batch_size = 1;
  opt.min_count = 1;
  opt.max_doc_frac = 1.0;
  const auto b = make_stream(one, Normalizer(), opt);
  REQUIRE(b.size() == 1);
  CHECK(b[0].documents.size() == 1);

  std::vector<RawDocument> docs;
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 6; ++i) {
      docs.push_back({"t" + std::to_string(t) + "_" + std::to_string(i),
                      i % 2 ? "engine motor wheel" : "planet orbit rocket", t,
                      std::string(i % 2 ? "cars" : "space")});
    }
  }
  opt = {};
  opt.max_doc_frac = 1.0;
  const auto batches = make_stream(docs, Normalizer(), opt);
  REQUIRE(batches.size() == 3);
  for (const auto& batch : batches) {
    std::multiset<std::string> labels;
    for (const auto& d : batch.documents) labels.insert(*d.label);
    CHECK(labels == std::multiset<std::string>{"cars", "cars", "cars", "space", "space", "space"});
  }
}

TEST_CASE("make_stream rejects an empty timestep") {
  std::vector<RawDocument> docs = {{"a", "engine motor engine motor", 0, {}},
                                   {"b", "engine motor engine motor", 2, {}}};
  StreamOptions opt;
  opt.max_doc_frac = 1.0;
  CHECK_THROWS_AS(make_stream(docs, Normalizer(), opt), InputError);
}

TEST_CASE("synthetic generator follows the default schedule") {
  const auto s = default_schedule();
  const auto tokens = synthetic_tokens(s.vocab_size);
  const auto sim = generate_synthetic_documents(s, block_topic_word_dists(5, 300), tokens);
  CHECK(sim.truth.k_real == std::vector<int>{3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 4});
  CHECK(sim.documents.size() == 11 * 200);
  for (std::size_t t = 0; t < 11; ++t) {
    const std::set<int> allowed(s.active_sets[t].begin(), s.active_sets[t].end());
    for (int k : sim.truth.doc_topics[t]) CHECK(allowed.count(k));
  }
  CHECK(s.active_sets[6] == std::vector<int>{0, 1, 2});
  CHECK(s.active_sets[7] == std::vector<int>{0, 2, 3});
  CHECK(s.active_sets[10] == std::vector<int>{0, 2, 3, 4});
}

TEST_CASE("synthetic generator edge cases and determinism") {
  SyntheticSchedule s;
  s.active_sets = {{0}};
  s.docs_per_step = 20;
  const auto tokens = synthetic_tokens(300);
  const Matrix dists = block_topic_word_dists(1, 300);
  const auto sim = generate_synthetic_documents(s, dists, tokens);
  for (const auto& d : sim.documents) CHECK(d.label == "topic0");

  const auto a = generate_synthetic_documents(default_schedule(), block_topic_word_dists(5, 300), tokens);
  const auto b = generate_synthetic_documents(default_schedule(), block_topic_word_dists(5, 300), tokens);
  REQUIRE(a.documents.size() == b.documents.size());
  for (std::size_t i = 0; i < a.documents.size(); ++i) {
    CHECK(a.documents[i].text == b.documents[i].text);
  }
  s.active_sets = {{0}, {}};
  CHECK_THROWS_AS(generate_synthetic_documents(s, dists, tokens), ConfigError);
  s.active_sets = {{0}};
  s.docs_per_step = 0;
  CHECK_THROWS_AS(generate_synthetic_documents(s, dists, tokens), ConfigError);
}

TEST_CASE("synthetic word frequencies converge to the topic distributions") {
  SyntheticSchedule s;
  s.active_sets = {{2}};
  s.docs_per_step = 1000;
  s.doc_length = 100;
  s.seed = 17;
  const auto tokens = synthetic_tokens(300);
  const Matrix dists = block_topic_word_dists(5, 300);
  const auto sim = generate_synthetic_documents(s, dists, tokens);
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < tokens.size(); ++i) index[tokens[i]] = static_cast<int>(i);
  Vector freq = Vector::Zero(300);
  double total = 0.0;
  for (const auto& d : sim.documents) {
    std::istringstream in(d.text);
    std::string w;
    while (in >> w) {
      freq(index.at(w)) += 1.0;
      total += 1.0;
    }
  }
  CHECK(total == doctest::Approx(1e5));
  CHECK((freq / total - dists.row(2).transpose()).lpNorm<1>() < 0.05);
}

TEST_CASE("synthetic tokens survive normalization") {
  const auto tokens = synthetic_tokens(300);
  CHECK(std::set<std::string>(tokens.begin(), tokens.end()).size() == 300);
  for (const auto& t : tokens) CHECK(Normalizer()(t) == TokenList{t});
}

TEST_CASE("word embeddings: coverage and fallback rows") {
  const auto dir = scratch_dir("embeddings");
  std::vector<TokenList> docs = {{"alpha", "beta"}, {"alpha", "beta"}, {"gamma", "delta"},
                                 {"gamma", "delta"}};
  const auto vocab = build_vocabulary(docs, 2, 1.0);
  const int L = 3;
  {
    std::ofstream f(dir / "full.txt");
    for (const auto& t : vocab.tokens) f << t << " 1.5 -2 0.25\n";
  }
  {
    std::ofstream f(dir / "half.txt");
    f << "alpha 0.1 0.2 0.3\n\nbeta -1e-3 4 5\nunused 9 9 9\n";
  }
  { std::ofstream f(dir / "empty.txt"); }
  {
    std::ofstream f(dir / "bad.txt");
    f << "alpha 1 2 3\nbeta 1 x 3\n";
  }
  {
    std::ofstream f(dir / "short.txt");
    f << "alpha 1 2\n";
  }
  const auto full = load_word_embeddings(dir / "full.txt", vocab, L);
  CHECK(full.coverage == 1.0);
  CHECK(full.rho(0, 0) == 1.5);
  const auto half = load_word_embeddings(dir / "half.txt", vocab, L);
  CHECK(half.coverage == 0.5);
  CHECK(half.rho.row(*vocab.find("alpha")) == Eigen::RowVector3d(0.1, 0.2, 0.3));
  CHECK(half.rho.row(*vocab.find("beta")) == Eigen::RowVector3d(-1e-3, 4, 5));
  const auto empty = load_word_embeddings(dir / "empty.txt", vocab, L);
  CHECK(empty.coverage == 0.0);
  CHECK(empty.rho.rows() == 4);
  // Fallback rows depend only on (seed, token).
  CHECK(empty.rho.row(*vocab.find("gamma")) == half.rho.row(*vocab.find("gamma")));
  try {
    load_word_embeddings(dir / "bad.txt", vocab, L);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(load_word_embeddings(dir / "short.txt", vocab, L), InputError);
  CHECK_THROWS_AS(load_word_embeddings(dir / "missing.txt", vocab, L), InputError);
}

TEST_CASE("fallback embedding rows have variance 1/L") {
  const int L = 50;
  EmbeddingTable table(L, 1);
  double sum = 0.0;
  double sq = 0.0;
  const auto tokens = synthetic_tokens(2000);
  for (const auto& t : tokens) {
    const Vector r = table.row(t);
    sum += r.sum();
    sq += r.squaredNorm();
  }
  const double n = 2000.0 * L;
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sq / n == doctest::Approx(1.0 / L).epsilon(0.03));
}

TEST_CASE("JSON-lines corpus round trip") {
  const auto dir = scratch_dir("jsonl");
  std::vector<RawDocument> docs = {{"a", "hello world", 0, "x"}, {"b", "more \"text\"\n", 1, {}}};
  write_jsonl_corpus(dir / "c.jsonl", docs);
  const auto back = read_jsonl_corpus(dir / "c.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].label == "x");
  CHECK(back[1].text == "more \"text\"\n");
  CHECK(back[1].timestep == 1);
  CHECK_FALSE(back[1].label);
  {
    std::ofstream f(dir / "bad.jsonl");
    f << "{\"text\": \"ok\"}\n{not json\n";
  }
  CHECK_THROWS_AS(read_jsonl_corpus(dir / "bad.jsonl"), InputError);
}
