// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/adapters.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "alter/errors.hpp"
#include "alter/model.hpp"
#include "alter/numkit.hpp"
#include "alter/rng.hpp"

using namespace alter;
using numkit::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_blocks = 1;
  cfg.mlp_width = 16;
  cfg.ctx_len = 8;
  cfg.vocab = 8;
  return cfg;
}

Tensor random_centroid(Rng& rng, int d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.next_gauss();
  return Tensor::from_data(d, 1, std::move(v));
}

AsymAdapterSet tiny_set(const BaseModel& model, int n_experts, uint64_t seed,
                        double eps = 1e-3, int rank = 2) {
  Rng rng(seed);
  std::vector<Tensor> cents;
  for (int i = 0; i < n_experts; ++i) cents.push_back(random_centroid(rng, 8));
  Tensor retain_c = random_centroid(rng, 8);
  return init_adapters(model, "blocks.0.attn.wo", rank, cents, retain_c, eps,
                       seed, EntropyConfig{});
}

// fills every adapter tensor with larger random values so compositions have
// visible effects
void randomize(AsymAdapterSet& set, uint64_t seed) {
  Rng rng(seed);
  auto fill = [&](Tensor& t, double scale) {
    double* d = t.mutable_data();
    for (size_t i = 0; i < t.size(); ++i) d[i] = rng.next_gauss() * scale;
  };
  fill(set.a, 0.3);
  fill(set.b_r, 0.3);
  for (auto& b : set.b_f) fill(b, 0.3);
  for (auto& w : set.omega) fill(w, 1.0);
  fill(set.gate.w_g, 1.0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("shared matrix init is reproducible with fan-in variance") {
  Tensor a1 = init_shared_a(8, 256, 5);
  Tensor a2 = init_shared_a(8, 256, 5);
  CHECK(a1.same_bits(a2));
  CHECK_FALSE(a1.same_bits(init_shared_a(8, 256, 6)));
  CHECK(a1.rows() == 8);
  CHECK(a1.cols() == 256);

  double mean = 0;
  for (double v : a1.data()) mean += v;
  mean /= a1.size();
  double var = 0;
  for (double v : a1.data()) var += (v - mean) * (v - mean);
  var /= a1.size();
  const double target = 2.0 / 256.0;
  CHECK(var > 0.8 * target);
  CHECK(var < 1.2 * target);

  Tensor single = init_shared_a(1, 1, 7);
  CHECK(single.size() == 1);
}

TEST_CASE("expert init is a scaled unit rank one matrix") {
  Tensor c = Tensor::from_data(3, 1, {5.0, 0.0, 0.0});
  Tensor b = init_expert_b(c, 2, 1e-3);
  CHECK(b.rows() == 3);
  CHECK(b.cols() == 2);
  CHECK(b.at(0, 0) == 1e-3);
  CHECK(b.at(1, 0) == 0.0);
  CHECK(b.at(2, 0) == 0.0);
  CHECK(b.at(0, 1) == 0.0);
  CHECK(b.at(1, 1) == 0.0);
  CHECK(b.at(2, 1) == 0.0);

  // Frobenius norm equals eps exactly for any nonzero centroid
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor rc = random_centroid(rng, 17);
    Tensor rb = init_expert_b(rc, 4, 1e-3);
    double fro = 0;
    for (double v : rb.data()) fro += v * v;
    CHECK(std::abs(std::sqrt(fro) - 1e-3) < 1e-12);
  }

  // eps of zero and a zero centroid both give the zero matrix
  Tensor z1 = init_expert_b(c, 2, 0.0);
  for (double v : z1.data()) CHECK(v == 0.0);
  Tensor z2 = init_expert_b(Tensor::zeros(3, 1), 2, 1e-3);
  for (double v : z2.data()) CHECK(v == 0.0);
}

TEST_CASE("gate reproduces hand computed values") {
  GateNet g;
  g.w_g = Tensor::from_data(2, 1, {1.0, 0.0});
  const double route = 1.2;

  // at the threshold the sharp branch applies: softmax([120, 0])
  auto low = gate_weights(g, 1.2, route);
  CHECK(std::abs(low[0] - 1.0) < 1e-12);
  CHECK(low[1] < 1e-12);

  // above it the soft branch applies: softmax([2, 0])
  auto high = gate_weights(g, 1.6, route);
  CHECK(std::abs(high[0] - 0.88080) < 1e-5);
  CHECK(std::abs(high[1] - 0.11920) < 1e-5);

  // equal gate weights give uniform routing at any signal
  GateNet eq;
  eq.w_g = Tensor::from_data(3, 1, {0.7, 0.7, 0.7});
  for (double s : {0.0, 0.5, 1.3, 4.0}) {
    auto w = gate_weights(eq, s, route);
    for (double v : w) CHECK(std::abs(v - 1.0 / 3.0) < 1e-12);
  }
}

TEST_CASE("gate outputs are a probability vector") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    GateNet g;
    std::vector<double> w(3);
    for (double& v : w) v = rng.next_gauss();
    g.w_g = Tensor::from_data(3, 1, w);
    double s = rng.next_double() * 3.0;
    auto out = gate_weights(g, s, 1.2);
    double sum = 0;
    for (double v : out) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("sharp branch is one hot when the maximum has margin") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    GateNet g;
    std::vector<double> w(4);
    for (double& v : w) v = rng.next_double();
    int star = static_cast<int>(rng.next_below(4));
    w[star] += 2.5;  // unique maximum with a clear margin
    g.w_g = Tensor::from_data(4, 1, w);
    double s = 0.1 + rng.next_double();
    auto out = gate_weights(g, std::min(s, 1.2), 1.2);
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(out[i] - (i == star ? 1.0 : 0.0)) < 1e-9);
    }
  }
}

TEST_CASE("differentiable gate rows match the scalar gate") {
  GateNet g;
  g.w_g = Tensor::from_data(3, 1, {0.4, 1.1, -0.2}, true);
  const double route = 1.2;
  std::vector<double> sq{0.3, 1.9, 1.2, 2.4};
  std::vector<double> scaled(sq.size());
  for (size_t i = 0; i < sq.size(); ++i) {
    scaled[i] = sq[i] / (sq[i] > route ? g.tau_high : g.tau_low);
  }
  Tensor rows = gate_rows(g, Tensor::from_data(4, 1, scaled));
  for (size_t t = 0; t < sq.size(); ++t) {
    auto expect = gate_weights(g, sq[t], route);
    for (int d = 0; d < 3; ++d) {
      CHECK(std::abs(rows.at(static_cast<int>(t), d) - expect[d]) < 1e-12);
    }
  }
  // and it is differentiable with respect to the gate weights; distinct
  // weights keep the loss sensitive (each row of the gate sums to one), and
  // moderate scales keep the softmax away from saturation
  std::vector<Tensor> params{g.w_g};
  Tensor probe = Tensor::from_data(4, 1, {1.5, 2.0, 2.75, 3.25});
  Tensor weigh = Tensor::from_data(
      4, 3, {0.3, -0.7, 1.1, 0.9, 0.2, -0.4, -1.3, 0.6, 0.5, 0.8, -0.1, 1.7});
  auto loss = [&](std::span<const Tensor>) {
    return numkit::sum_all(numkit::mul(gate_rows(g, probe), weigh));
  };
  CHECK(numkit::finite_diff_check(loss, params, 1e-5) < 1e-6);
}

TEST_CASE("adapter initialization matches the projection's shape") {
  BaseModel m(tiny_config(), 30);
  AsymAdapterSet set = tiny_set(m, 3, 31);
  CHECK(set.rank == 2);
  CHECK(set.n_experts() == 3);
  CHECK(set.a.rows() == 2);
  CHECK(set.a.cols() == 8);
  CHECK(set.b_r.rows() == 8);
  CHECK(set.b_r.cols() == 2);
  for (const auto& w : set.omega) CHECK(w.item() == 1.0);
  for (double v : set.gate.w_g.data()) CHECK(v == 1.0);
  CHECK(set.trainable_param_count() ==
        2 * 8 + 8 * 2 + 3 * (8 * 2) + 3 + 3);

  Tensor short_centroid = Tensor::zeros(4, 1);
  std::vector<Tensor> cents{short_centroid, short_centroid, short_centroid};
  CHECK_THROWS_AS(init_adapters(m, "blocks.0.attn.wo", 2, cents, short_centroid,
                                1e-3, 31, EntropyConfig{}),
                  ContractError);
  CHECK_THROWS_AS(init_adapters(m, "blocks.9.attn.wo", 2, cents, short_centroid,
                                1e-3, 31, EntropyConfig{}),
                  ContractError);
}

TEST_CASE("training composition reduces correctly in special cases") {
  BaseModel m(tiny_config(), 32);
  std::vector<int> ids{1, 3, 5, 7};
  Tensor base = m.forward_logits(ids);

  // all expert matrices zero: the hook adds exactly nothing
  AsymAdapterSet zero_set = tiny_set(m, 2, 33, 0.0);
  AdapterHook hook = train_hook(zero_set);
  Tensor same = m.forward_logits(ids, &hook);
  CHECK(max_abs_diff(same, base) == 0.0);

  // omegas zero: only the retention expert contributes
  AsymAdapterSet no_omega = tiny_set(m, 2, 34);
  randomize(no_omega, 35);
  const std::vector<double> zero{0.0};
  for (auto& w : no_omega.omega) w.set_data(zero);
  AdapterHook h2 = train_hook(no_omega);
  Tensor got = m.forward_logits(ids, &h2);

  AsymAdapterSet only_br = no_omega;
  for (auto& b : only_br.b_f) b = Tensor::zeros(8, 2);
  for (auto& w : only_br.omega) w = Tensor::from_data(1, 1, {1.0});
  AdapterHook h3 = train_hook(only_br);
  Tensor expect = m.forward_logits(ids, &h3);
  CHECK(max_abs_diff(got, expect) < 1e-15);

  // one expert with omega one and no retention term equals plain low rank
  AsymAdapterSet single = tiny_set(m, 1, 36);
  randomize(single, 37);
  single.b_r = Tensor::zeros(8, 2);
  single.omega[0] = Tensor::from_data(1, 1, {1.0});
  Tensor x = Tensor::from_data(4, 8, std::vector<double>(32, 0.25));
  Tensor delta = train_delta(x, single.a, single.b_r, single.b_f, single.omega);
  Tensor manual = numkit::matmul(numkit::matmul(x, numkit::transpose(single.a)),
                                 numkit::transpose(single.b_f[0]));
  CHECK(max_abs_diff(delta, manual) < 1e-15);
}

TEST_CASE("zeroing one expert changes only that expert's term") {
  BaseModel m(tiny_config(), 38);
  AsymAdapterSet set = tiny_set(m, 3, 39);
  randomize(set, 40);
  Tensor x = Tensor::from_data(5, 8, [] {
    Rng rng(41);
    std::vector<double> v(40);
    for (double& w : v) w = rng.next_gauss();
    return v;
  }());

  Tensor full = train_delta(x, set.a, set.b_r, set.b_f, set.omega);
  AsymAdapterSet without = set;
  without.b_f[1] = Tensor::zeros(8, 2);
  Tensor partial =
      train_delta(x, without.a, without.b_r, without.b_f, without.omega);
  Tensor term = numkit::mul(
      numkit::broadcast_all(set.omega[1], 5, 8),
      numkit::matmul(numkit::matmul(x, numkit::transpose(set.a)),
                     numkit::transpose(set.b_f[1])));
  Tensor rebuilt = numkit::add(partial, term);
  CHECK(max_abs_diff(full, rebuilt) < 1e-12);
}

TEST_CASE("merged weights equal the unmerged training forward") {
  ModelConfig cfg = tiny_config();
  BaseModel m(cfg, 42);
  AsymAdapterSet set = tiny_set(m, 3, 43);
  randomize(set, 44);
  AdapterHook hook = train_hook(set);

  // merge the delta into a copy of the base weights
  numkit::NoGradGuard ng;
  Tensor delta_w = set.compose_delta_w();
  CHECK(delta_w.rows() == 8);
  CHECK(delta_w.cols() == 8);
  auto params = m.named_params();
  for (auto& [name, t] : params) {
    if (name == "blocks.0.attn.wo") {
      t = numkit::add(t, delta_w);
    }
  }
  BaseModel merged(cfg, params);

  Rng rng(45);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids;
    int len = 1 + static_cast<int>(rng.next_below(7));
    for (int i = 0; i < len; ++i) {
      ids.push_back(static_cast<int>(rng.next_below(8)));
    }
    Tensor unmerged = m.forward_logits(ids, &hook);
    Tensor via_merge = merged.forward_logits(ids);
    CHECK(max_abs_diff(unmerged, via_merge) < 1e-10);
  }
}

TEST_CASE("delta rank never exceeds the adapter rank") {
  BaseModel m(tiny_config(), 46);
  AsymAdapterSet set = tiny_set(m, 3, 47);
  randomize(set, 48);
  numkit::NoGradGuard ng;
  Tensor dw = set.compose_delta_w();
  const int r = set.rank;

  // every row of the delta must lie in the span of A's rows: solve the
  // normal equations against A and check the residual
  const int k = set.a.cols();
  std::vector<std::vector<double>> gram(r, std::vector<double>(r + 1, 0.0));
  auto arow = [&](int i, int j) { return set.a.at(i, j); };
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      double s = 0;
      for (int c = 0; c < k; ++c) s += arow(i, c) * arow(j, c);
      gram[i][j] = s;
    }
  }
  for (int row = 0; row < dw.rows(); ++row) {
    auto sys = gram;
    for (int i = 0; i < r; ++i) {
      double s = 0;
      for (int c = 0; c < k; ++c) s += arow(i, c) * dw.at(row, c);
      sys[i][r] = s;
    }
    // gaussian elimination with partial pivoting
    for (int col = 0; col < r; ++col) {
      int piv = col;
      for (int i = col + 1; i < r; ++i) {
        if (std::abs(sys[i][col]) > std::abs(sys[piv][col])) piv = i;
      }
      std::swap(sys[col], sys[piv]);
      REQUIRE(std::abs(sys[col][col]) > 1e-12);
      for (int i = col + 1; i < r; ++i) {
        double f = sys[i][col] / sys[col][col];
        for (int j = col; j <= r; ++j) sys[i][j] -= f * sys[col][j];
      }
    }
    std::vector<double> coef(r);
    for (int i = r - 1; i >= 0; --i) {
      double s = sys[i][r];
      for (int j = i + 1; j < r; ++j) s -= sys[i][j] * coef[j];
      coef[i] = s / sys[i][i];
    }
    for (int c = 0; c < k; ++c) {
      double rec = 0;
      for (int i = 0; i < r; ++i) rec += coef[i] * arow(i, c);
      CHECK(std::abs(rec - dw.at(row, c)) < 1e-10);
    }
  }
}

TEST_CASE("inference composition routes by entropy") {
  BaseModel m(tiny_config(), 49);
  std::vector<int> ids{1, 2, 3};
  Tensor base = m.forward_logits(ids);

  // all zero experts leave both branches at the base output
  AsymAdapterSet zeros = tiny_set(m, 3, 50, 0.0);
  AdapterHook z = infer_hook(zeros, {0.3, 1.9, 0.9});
  CHECK(max_abs_diff(m.forward_logits(ids, &z), base) == 0.0);

  // single expert: high branch blends retention and the expert with full
  // gate weight; low branch uses the expert alone
  AsymAdapterSet one = tiny_set(m, 1, 51);
  randomize(one, 52);
  numkit::NoGradGuard ng;
  Tensor x = Tensor::from_data(2, 8, [] {
    Rng rng(53);
    std::vector<double> v(16);
    for (double& w : v) w = rng.next_gauss();
    return v;
  }());
  AdapterHook ih = infer_hook(one, {2.0, 0.5});  // row 0 high, row 1 low
  Tensor delta = ih("blocks.0.attn.wo", x);
  Tensor xa = numkit::matmul(x, numkit::transpose(one.a));
  Tensor er = numkit::matmul(xa, numkit::transpose(one.b_r));
  Tensor ef = numkit::matmul(xa, numkit::transpose(one.b_f[0]));
  for (int c = 0; c < 8; ++c) {
    CHECK(std::abs(delta.at(0, c) - (er.at(0, c) + ef.at(0, c))) < 1e-12);
    CHECK(std::abs(delta.at(1, c) - ef.at(1, c)) < 1e-12);
  }
}

TEST_CASE("top three selection drops exactly the weakest expert of four") {
  BaseModel m(tiny_config(), 54);
  Rng rng(55);
  std::vector<Tensor> cents;
  for (int i = 0; i < 4; ++i) cents.push_back(random_centroid(rng, 8));
  AsymAdapterSet set = init_adapters(m, "blocks.0.attn.wo", 2, cents,
                                     random_centroid(rng, 8), 1e-3, 56,
                                     EntropyConfig{});
  randomize(set, 57);
  // make expert 2 the clear loser at the high branch
  const std::vector<double> skewed{1.0, 0.8, -3.0, 0.6};
  set.gate.w_g.set_data(skewed);

  numkit::NoGradGuard ng;
  Tensor x = Tensor::from_data(1, 8, std::vector<double>(8, 0.5));
  const double sq = 2.0;  // high branch
  AdapterHook ih = infer_hook(set, {sq});
  Tensor delta = ih("blocks.0.attn.wo", x);

  auto g = gate_weights(set.gate, sq, set.entropy.route_threshold);
  Tensor xa = numkit::matmul(x, numkit::transpose(set.a));
  Tensor expect = numkit::matmul(xa, numkit::transpose(set.b_r));
  for (int d = 0; d < 4; ++d) {
    if (d == 2) continue;  // dropped by top-3
    expect = numkit::add(
        expect, numkit::smul(numkit::matmul(xa, numkit::transpose(set.b_f[d])),
                             g[d]));
  }
  CHECK(max_abs_diff(delta, expect) < 1e-12);

  // equal weights: the drop is the highest index, lowest-index ties kept
  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  set.gate.w_g.set_data(flat);
  AdapterHook ih2 = infer_hook(set, {sq});
  Tensor d2 = ih2("blocks.0.attn.wo", x);
  auto g2 = gate_weights(set.gate, sq, set.entropy.route_threshold);
  Tensor e2 = numkit::matmul(xa, numkit::transpose(set.b_r));
  for (int d = 0; d < 3; ++d) {
    e2 = numkit::add(
        e2, numkit::smul(numkit::matmul(xa, numkit::transpose(set.b_f[d])),
                         g2[d]));
  }
  CHECK(max_abs_diff(d2, e2) < 1e-12);
}

TEST_CASE("isolation detaches every group except the chosen one") {
  BaseModel m(tiny_config(), 58);
  AsymAdapterSet set = tiny_set(m, 3, 59);
  randomize(set, 60);

  AsymAdapterSet ihl = set.isolate(AsymAdapterSet::Live::kExpert, 1);
  CHECK_FALSE(ihl.a.requires_grad());
  CHECK_FALSE(ihl.b_r.requires_grad());
  CHECK_FALSE(ihl.b_f[0].requires_grad());
  CHECK(ihl.b_f[1].requires_grad());
  CHECK_FALSE(ihl.b_f[2].requires_grad());
  CHECK(ihl.omega[1].requires_grad());
  CHECK_FALSE(ihl.omega[0].requires_grad());
  CHECK_FALSE(ihl.gate.w_g.requires_grad());
  // detached copies still carry the same values
  CHECK(max_abs_diff(ihl.a, set.a) == 0.0);

  AsymAdapterSet ret = set.isolate(AsymAdapterSet::Live::kBr);
  CHECK(ret.b_r.requires_grad());
  CHECK_FALSE(ret.a.requires_grad());
  CHECK_FALSE(ret.b_f[1].requires_grad());

  AsymAdapterSet shared = set.isolate(AsymAdapterSet::Live::kA);
  CHECK(shared.a.requires_grad());
  CHECK_FALSE(shared.b_r.requires_grad());

  CHECK_THROWS_AS(set.isolate(AsymAdapterSet::Live::kExpert, 5), ContractError);

  // gradients through an isolated composition reach only the live group
  Tensor x = Tensor::from_data(2, 8, std::vector<double>(16, 0.3));
  Tensor loss =
      numkit::sum_all(train_delta(x, ihl.a, ihl.b_r, ihl.b_f, ihl.omega));
  std::vector<Tensor> wrt{set.a, set.b_r, set.b_f[0], set.b_f[1], set.omega[1]};
  auto gm = numkit::grad(loss, wrt);
  CHECK(numkit::grad_of(gm, set.a).same_bits(
      Tensor::zeros(set.a.rows(), set.a.cols())));
  CHECK(numkit::grad_of(gm, set.b_r)
            .same_bits(Tensor::zeros(set.b_r.rows(), set.b_r.cols())));
  CHECK(numkit::grad_of(gm, set.b_f[0])
            .same_bits(Tensor::zeros(8, 2)));
  CHECK_FALSE(numkit::grad_of(gm, set.b_f[1]).same_bits(Tensor::zeros(8, 2)));
  CHECK_FALSE(
      numkit::grad_of(gm, set.omega[1]).same_bits(Tensor::zeros(1, 1)));
}

TEST_CASE("adapters survive a checkpoint round trip byte for byte") {
  BaseModel m(tiny_config(), 61);
  AsymAdapterSet set = tiny_set(m, 3, 62);
  randomize(set, 63);
  const std::string path = "adapters_test.ckpt";
  save_adapters(set, path);
  AsymAdapterSet back = load_adapters(path);
  CHECK(back.injection_point == set.injection_point);
  CHECK(back.rank == set.rank);
  CHECK(back.n_experts() == 3);
  CHECK(back.a.same_bits(set.a));
  CHECK(back.b_r.same_bits(set.b_r));
  for (int d = 0; d < 3; ++d) {
    CHECK(back.b_f[d].same_bits(set.b_f[d]));
    CHECK(back.omega[d].same_bits(set.omega[d]));
  }
  CHECK(back.gate.w_g.same_bits(set.gate.w_g));
  CHECK(back.entropy.q_a == set.entropy.q_a);
  CHECK(back.entropy.route_threshold == set.entropy.route_threshold);

  const std::string path2 = "adapters_test_2.ckpt";
  save_adapters(back, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // the optional merged-delta section loads back fine and is ignored
  save_adapters(set, path, true);
  AsymAdapterSet with_delta = load_adapters(path);
  CHECK(with_delta.a.same_bits(set.a));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}
