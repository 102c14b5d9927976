// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/entropy.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <vector>

#include "alter/corpus.hpp"
#include "alter/errors.hpp"
#include "alter/model.hpp"
#include "alter/numkit.hpp"
#include "alter/rng.hpp"
#include "alter/tokenizer.hpp"

using namespace alter;
using numkit::Tensor;

namespace {

std::vector<double> random_dist(Rng& rng, int n) {
  std::vector<double> p(n);
  double s = 0;
  for (double& v : p) {
    v = 0.05 + rng.next_double();
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("shannon entropy reproduces hand computed values") {
  std::array<double, 3> p{0.5, 0.25, 0.25};
  CHECK(std::abs(shannon_entropy(p) - 1.03972) < 1e-5);
  CHECK(std::abs(shannon_entropy(p) - 1.0397207708399179) < 1e-12);
  std::array<double, 4> u{0.25, 0.25, 0.25, 0.25};
  CHECK(std::abs(shannon_entropy(u) - std::log(4.0)) < 1e-12);
  std::array<double, 3> q{0.7, 0.2, 0.1};
  CHECK(std::abs(shannon_entropy(q) - 0.80181855254333723) < 1e-12);
  std::array<double, 3> onehot{1.0, 0.0, 0.0};
  CHECK(shannon_entropy(onehot) == 0.0);
}

TEST_CASE("tsallis entropy reproduces hand computed values") {
  std::array<double, 4> u{0.25, 0.25, 0.25, 0.25};
  CHECK(std::abs(tsallis_entropy(u, 2.0) - 0.75) < 1e-12);
  CHECK(std::abs(tsallis_entropy(u, 0.5) - 2.0) < 1e-12);
  std::array<double, 3> p{0.7, 0.2, 0.1};
  CHECK(std::abs(tsallis_entropy(p, 2.0) - 0.46) < 1e-12);
  CHECK(std::abs(tsallis_entropy(p, 0.5) - 1.2002027761017429) < 1e-12);
  std::array<double, 3> onehot{0.0, 1.0, 0.0};
  CHECK(tsallis_entropy(onehot, 0.5) == 0.0);
  CHECK(tsallis_entropy(onehot, 2.0) == 0.0);
}

TEST_CASE("tsallis entropy approaches shannon as q approaches one") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_dist(rng, 8);
    CHECK(tsallis_entropy(p, 1.0 + 5e-9) == shannon_entropy(p));
    CHECK(std::abs(tsallis_entropy(p, 1.0 + 1e-4) - shannon_entropy(p)) < 1e-3);
    CHECK(std::abs(tsallis_entropy(p, 1.0 - 1e-4) - shannon_entropy(p)) < 1e-3);
  }
}

TEST_CASE("tsallis entropy is nonnegative and nonincreasing in q") {
  Rng rng(12);
  const double qs[] = {0.3, 0.5, 0.9, 1.0 + 1e-9, 1.5, 2.0, 3.0};
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_dist(rng, 6);
    double prev = 1e18;
    for (double q : qs) {
      double s = tsallis_entropy(p, q);
      CHECK(s >= 0.0);
      CHECK(s <= prev + 1e-12);
      prev = s;
    }
  }
}

TEST_CASE("shannon entropy never exceeds the uniform bound") {
  Rng rng(13);
  for (int n : {2, 5, 33}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto p = random_dist(rng, n);
      CHECK(shannon_entropy(p) <= std::log(static_cast<double>(n)) + 1e-12);
    }
  }
}

TEST_CASE("entropy inputs are validated") {
  std::array<double, 2> not_normalized{0.6, 0.6};
  CHECK_THROWS_AS(shannon_entropy(not_normalized), ContractError);
  std::array<double, 2> negative{1.2, -0.2};
  CHECK_THROWS_AS(shannon_entropy(negative), ContractError);
  std::array<double, 2> ok{0.5, 0.5};
  CHECK_THROWS_AS(tsallis_entropy(ok, 0.0), ContractError);
  CHECK_THROWS_AS(tsallis_entropy(ok, -1.0), ContractError);
}

TEST_CASE("differentiable tsallis matches the scalar definition on rows") {
  Rng rng(14);
  std::vector<double> z(5 * 9);
  for (double& v : z) v = rng.next_gauss() * 2.0;
  Tensor logits = Tensor::from_data(5, 9, z);
  for (double q : {0.5, 2.0}) {
    Tensor s = tsallis_rows(logits, q);
    REQUIRE(s.rows() == 5);
    REQUIRE(s.cols() == 1);
    Tensor p = numkit::softmax_rows(logits);
    for (int r = 0; r < 5; ++r) {
      std::vector<double> row(p.data().begin() + r * 9,
                              p.data().begin() + (r + 1) * 9);
      CHECK(std::abs(s.at(r, 0) - tsallis_entropy(row, q)) < 1e-10);
    }
  }
}

TEST_CASE("differentiable tsallis has correct first derivatives") {
  Rng rng(15);
  std::vector<double> z(3 * 7);
  for (double& v : z) v = rng.next_gauss();
  std::vector<Tensor> params{Tensor::from_data(3, 7, z, true)};
  for (double q : {0.5, 2.0}) {
    auto loss = [q](std::span<const Tensor> ps) {
      return numkit::sum_all(tsallis_rows(ps[0], q));
    };
    CHECK(numkit::finite_diff_check(loss, params, 1e-5) < 1e-6);
  }
}

TEST_CASE("corpus profiling classifies one position per target") {
  CorpusSpec spec;
  spec.seed = 21;
  spec.n_subdomains = 1;
  spec.entities_per_subdomain = 3;
  spec.retain_entities = 3;
  Corpus corpus = generate(spec);
  Tokenizer tk = Tokenizer::build(all_texts(corpus));
  ModelConfig cfg;
  cfg.vocab = tk.vocab_size();
  BaseModel model(cfg, 99);
  auto recs = encode_all(tk, corpus.train);
  EntropyConfig ecfg;
  auto profiles = profile_corpus(model, recs, ecfg);

  size_t expected = 0;
  for (const auto& r : recs) expected += r.targets.size();
  REQUIRE(profiles.size() == expected);

  int64_t t = 0;
  size_t idx = 0;
  for (size_t ri = 0; ri < recs.size(); ++ri) {
    for (size_t pos = 0; pos < recs[ri].targets.size(); ++pos, ++idx) {
      const TokenProfile& tp = profiles[idx];
      CHECK(tp.t == t++);
      CHECK(tp.token_id == recs[ri].targets[pos]);
      CHECK(tp.record_index == static_cast<int>(ri));
      CHECK(tp.record_pos == static_cast<int>(pos));
      CHECK(tp.high == (tp.shannon > ecfg.shannon_threshold));
      CHECK(tp.shannon >= 0.0);
      CHECK(tp.sq_a >= 0.0);
      CHECK(tp.sq_b >= 0.0);
      CHECK(tp.sq_b <= tp.sq_a + 1e-12);  // entropy falls as q grows
    }
  }
  // an untrained model is near uniform over 256 tokens: everything is High
  size_t high = 0;
  for (const auto& tp : profiles) high += tp.high;
  CHECK(high == profiles.size());
}

TEST_CASE("profiles survive a save and load round trip bit for bit") {
  CorpusSpec spec;
  spec.seed = 22;
  spec.n_subdomains = 1;
  spec.entities_per_subdomain = 2;
  spec.retain_entities = 2;
  Corpus corpus = generate(spec);
  Tokenizer tk = Tokenizer::build(all_texts(corpus));
  ModelConfig cfg;
  cfg.vocab = tk.vocab_size();
  BaseModel model(cfg, 5);
  auto recs = encode_all(tk, corpus.train);
  EntropyConfig ecfg;
  auto profiles = profile_corpus(model, recs, ecfg);

  const std::string path = "entropy_test_profiles.jsonl";
  save_profiles(profiles, ecfg, path);
  auto back = load_profiles(path, ecfg, recs);
  REQUIRE(back.size() == profiles.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].t == profiles[i].t);
    CHECK(back[i].token_id == profiles[i].token_id);
    CHECK(back[i].shannon == profiles[i].shannon);
    CHECK(back[i].sq_a == profiles[i].sq_a);
    CHECK(back[i].sq_b == profiles[i].sq_b);
    CHECK(back[i].high == profiles[i].high);
    CHECK(back[i].record_index == profiles[i].record_index);
    CHECK(back[i].record_pos == profiles[i].record_pos);
  }
  // provenance reconstruction is validated against the corpus
  auto fewer = std::span<const EncodedRecord>(recs).subspan(0, recs.size() - 1);
  CHECK_THROWS_AS(load_profiles(path, ecfg, fewer), ContractError);
  std::remove(path.c_str());
}

TEST_CASE("conservation is perfect when nothing changes") {
  CorpusSpec spec;
  spec.seed = 23;
  spec.n_subdomains = 1;
  spec.entities_per_subdomain = 2;
  spec.retain_entities = 2;
  Corpus corpus = generate(spec);
  Tokenizer tk = Tokenizer::build(all_texts(corpus));
  ModelConfig cfg;
  cfg.vocab = tk.vocab_size();
  BaseModel model(cfg, 6);
  auto recs = encode_all(tk, corpus.train);
  EntropyConfig ecfg;
  auto profiles = profile_corpus(model, recs, ecfg);
  auto same = [&](std::span<const int> ids) { return model.forward_logits(ids); };
  ConservationStats s = conservation_stats(profiles, recs, same, ecfg);
  CHECK(s.high_retained == 1.0);
  CHECK(s.low_retained == 1.0);
}
