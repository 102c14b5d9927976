// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/corpus.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "alter/errors.hpp"
#include "alter/tokenizer.hpp"

using namespace alter;

namespace {

Corpus default_corpus() {
  CorpusSpec spec;
  spec.seed = 7;
  return generate(spec);
}

std::string temp_path(const char* name) {
  return std::string("corpus_test_") + name + ".jsonl";
}

}  // namespace

TEST_CASE("default corpus has the expected record counts") {
  Corpus c = default_corpus();
  // 3 subdomains x 20 entities x 3 phrasings, plus 40 retain entities x 3.
  CHECK(c.train.size() == 180 + 120);
  CHECK(c.holdout.size() == 40);
  int forget = 0, retain = 0;
  for (const auto& r : c.train) (r.forget ? forget : retain)++;
  CHECK(forget == 180);
  CHECK(retain == 120);
  for (const auto& r : c.holdout) CHECK_FALSE(r.forget);
}

TEST_CASE("generation is deterministic in the seed") {
  Corpus a = default_corpus();
  Corpus b = default_corpus();
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].id == b.train[i].id);
    CHECK(a.train[i].question == b.train[i].question);
    CHECK(a.train[i].answer == b.train[i].answer);
  }
  CorpusSpec other;
  other.seed = 8;
  Corpus c = generate(other);
  bool any_diff = false;
  for (size_t i = 0; i < a.train.size(); ++i) {
    any_diff |= (a.train[i].answer != c.train[i].answer);
  }
  CHECK(any_diff);  // connective draws depend on the seed
}

TEST_CASE("every answer opens and closes with a shared connective") {
  Corpus c = default_corpus();
  std::set<std::string> connectives_seen;
  for (const auto& r : c.train) {
    auto words = Tokenizer::split_words(r.answer);
    REQUIRE(words.size() >= 3);
    CHECK(is_connective(words.front()));
    CHECK(is_connective(words.back()));
    connectives_seen.insert(words.front());
    connectives_seen.insert(words.back());
    // interior carries the content: exactly one entity and one attribute
    int content = 0;
    for (size_t i = 1; i + 1 < words.size(); ++i) {
      CHECK_FALSE(is_connective(words[i]));
      if (!is_frame_word(words[i])) content++;
    }
    CHECK(content == 2);
  }
  // the pool is shared across all subdomains and large enough to keep
  // connective positions high-entropy
  CHECK(connectives_seen.size() == 20);
}

TEST_CASE("questions never leak connectives and frames never collide") {
  Corpus c = default_corpus();
  for (const auto& r : c.train) {
    auto words = Tokenizer::split_words(r.question);
    size_t frame_or_content = 0;
    for (size_t i = 2; i < words.size(); ++i) {
      CHECK_FALSE(is_connective(words[i]));
      frame_or_content++;
    }
    CHECK(frame_or_content >= 3);
    // the two question openers are connectives by design
    CHECK(is_connective(words[0]));
    CHECK(is_connective(words[1]));
  }
  CHECK_FALSE(is_frame_word("indeed"));
  CHECK_FALSE(is_connective("lair"));
  CHECK(is_frame_word("lair"));
  CHECK(is_connective("indeed"));
}

TEST_CASE("subdomains use disjoint entity and attribute words") {
  Corpus c = default_corpus();
  std::vector<std::set<std::string>> content_by_domain(4);
  for (const auto& r : c.train) {
    for (const auto& w : Tokenizer::split_words(r.answer)) {
      if (!is_connective(w) && !is_frame_word(w)) {
        content_by_domain[r.subdomain].insert(w);
      }
    }
  }
  for (int a = 0; a <= 3; ++a) {
    CHECK_FALSE(content_by_domain[a].empty());
    for (int b = a + 1; b <= 3; ++b) {
      for (const auto& w : content_by_domain[a]) {
        CHECK(content_by_domain[b].count(w) == 0);
      }
    }
  }
}

TEST_CASE("holdout rephrases retain facts with unseen pairings") {
  Corpus c = default_corpus();
  std::set<std::string> train_questions;
  for (const auto& r : c.train) train_questions.insert(r.question);
  for (const auto& r : c.holdout) {
    CHECK(r.subdomain == 0);
    CHECK(train_questions.count(r.question) == 0);
  }
}

TEST_CASE("vocabulary size lands on the designed budget") {
  Corpus c = default_corpus();
  Tokenizer tk = Tokenizer::build(all_texts(c));
  CHECK(tk.vocab_size() == 256);
  CHECK(all_texts(c).size() == 2 * (c.train.size() + c.holdout.size()));
}

TEST_CASE("jsonl round trip preserves every field") {
  Corpus c = default_corpus();
  const std::string path = temp_path("roundtrip");
  save_jsonl(c.train, path);
  auto back = load_jsonl(path);
  REQUIRE(back.size() == c.train.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == c.train[i].id);
    CHECK(back[i].subdomain == c.train[i].subdomain);
    CHECK(back[i].question == c.train[i].question);
    CHECK(back[i].answer == c.train[i].answer);
    CHECK(back[i].forget == c.train[i].forget);
  }
  std::remove(path.c_str());
}

TEST_CASE("jsonl loader rejects malformed lines with a line number") {
  const std::string path = temp_path("bad");
  auto write_and_expect_throw = [&](const std::string& line) {
    std::ofstream out(path);
    out << line << "\n";
    out.close();
    CHECK_THROWS_AS(load_jsonl(path), ContractError);
  };
  write_and_expect_throw("not json at all");
  write_and_expect_throw(R"({"id":"x","subdomain":"retain","question":"q"})");
  write_and_expect_throw(
      R"({"id":"x","subdomain":"retain","question":"q","answer":"a","split":"forget"})");
  write_and_expect_throw(
      R"({"id":"x","subdomain":1,"question":"q","answer":"a","split":"retain"})");
  write_and_expect_throw(
      R"({"id":"x","subdomain":"retain","question":"q","answer":"a","split":"retain","extra":1})");
  try {
    std::ofstream out(path);
    out << R"({"id":"ok","subdomain":"retain","question":"q","answer":"a","split":"retain"})"
        << "\n";
    out << "broken\n";
    out.close();
    load_jsonl(path);
    CHECK(false);
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("loading a missing file is an io error") {
  CHECK_THROWS_AS(load_jsonl("no_such_dir/none.jsonl"), IoError);
}

TEST_CASE("encoding marks question answer content and train positions") {
  Corpus c = default_corpus();
  Tokenizer tk = Tokenizer::build(all_texts(c));
  const QaRecord& r = c.train.front();
  EncodedRecord e = encode_record(tk, r);

  auto q = tk.encode(r.question);
  auto a = tk.encode(r.answer);
  REQUIRE(e.inputs.size() == q.size() + a.size() + 1);
  REQUIRE(e.targets.size() == e.inputs.size());
  CHECK(e.inputs.front() == Tokenizer::kBos);
  CHECK(e.targets.back() == Tokenizer::kEos);
  for (size_t i = 0; i < e.targets.size(); ++i) {
    CHECK(e.targets[i] == (i + 1 < e.inputs.size()
                               ? e.inputs[i + 1]
                               : static_cast<int>(Tokenizer::kEos)));
  }

  size_t n_answer = 0, n_content = 0, n_train = 0;
  for (size_t i = 0; i < e.targets.size(); ++i) {
    n_answer += e.target_is_answer[i];
    n_content += e.target_is_content[i];
    n_train += e.target_in_train[i];
    if (e.target_is_content[i]) CHECK(e.target_is_answer[i]);
    if (e.target_is_answer[i]) CHECK(e.target_in_train[i]);
  }
  CHECK(n_answer == a.size());
  CHECK(n_train == a.size() + 1);  // answer plus the eos
  CHECK(n_content == 2);           // one entity, one attribute
  // question-side targets never enter the train mask
  for (size_t i = 0; i + 1 < q.size(); ++i) CHECK_FALSE(e.target_in_train[i]);

  auto all = encode_all(tk, c.train);
  CHECK(all.size() == c.train.size());
  CHECK(all.front().id == c.train.front().id);
  CHECK(all.front().forget == c.train.front().forget);
}

TEST_CASE("generator rejects unsupported shapes") {
  CorpusSpec bad;
  bad.n_subdomains = 4;
  CHECK_THROWS_AS(generate(bad), ContractError);
  bad.n_subdomains = 0;
  CHECK_THROWS_AS(generate(bad), ContractError);
}
