// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <utility>

#include "alter/checkpoint.hpp"
#include "alter/errors.hpp"
#include "alter/rng.hpp"

namespace alter {

using numkit::Tensor;

std::vector<double> gate_weights(const GateNet& gate, double sq_value,
                                 double route_threshold) {
  if (!gate.w_g.defined() || gate.w_g.cols() != 1) {
    throw ContractError("gate: w_g must be an n_experts x 1 vector");
  }
  if (sq_value < 0.0) throw ContractError("gate: entropy signal must be >= 0");
  const int n = gate.w_g.rows();
  const double tau = sq_value > route_threshold ? gate.tau_high : gate.tau_low;
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) z[i] = gate.w_g.at(i, 0) * sq_value / tau;
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

Tensor gate_rows(const GateNet& gate, const Tensor& sq_over_tau) {
  if (sq_over_tau.cols() != 1) {
    throw ShapeError("gate_rows: sq_over_tau must be a column vector");
  }
  return numkit::softmax_rows(
      numkit::matmul(sq_over_tau, numkit::transpose(gate.w_g)));
}

size_t AsymAdapterSet::trainable_param_count() const {
  size_t n = a.size() + b_r.size() + gate.w_g.size();
  for (const auto& b : b_f) n += b.size();
  for (const auto& w : omega) n += w.size();
  return n;
}

void AsymAdapterSet::set_trainable(bool on) {
  a.set_requires_grad(on);
  b_r.set_requires_grad(on);
  for (auto& b : b_f) b.set_requires_grad(on);
  for (auto& w : omega) w.set_requires_grad(on);
  gate.w_g.set_requires_grad(on);
}

AsymAdapterSet AsymAdapterSet::isolate(Live which, int expert) const {
  if (which == Live::kExpert &&
      (expert < 0 || expert >= n_experts())) {
    throw ContractError("isolate: expert index out of range");
  }
  AsymAdapterSet out = *this;
  if (which != Live::kA) out.a = a.detached();
  if (which != Live::kBr) out.b_r = b_r.detached();
  for (int d = 0; d < n_experts(); ++d) {
    if (which == Live::kExpert && d == expert) continue;
    out.b_f[d] = b_f[d].detached();
    out.omega[d] = omega[d].detached();
  }
  out.gate.w_g = gate.w_g.detached();
  return out;
}

Tensor AsymAdapterSet::composed_b() const {
  Tensor c = b_r;
  for (int d = 0; d < n_experts(); ++d) {
    c = numkit::add(
        c, numkit::mul(numkit::broadcast_all(omega[d], b_f[d].rows(),
                                             b_f[d].cols()),
                       b_f[d]));
  }
  return c;
}

Tensor AsymAdapterSet::compose_delta_w() const {
  return numkit::matmul(composed_b(), a);
}

Tensor init_shared_a(int rank, int k_in, uint64_t seed) {
  if (rank < 1 || k_in < 1) throw ContractError("init_shared_a: rank and k must be >= 1");
  Rng rng(seed_for(seed, "adapters.a"));
  const double sigma = std::sqrt(2.0 / k_in);
  std::vector<double> v(static_cast<size_t>(rank) * k_in);
  for (double& x : v) x = rng.next_gauss() * sigma;
  return Tensor::from_data(rank, k_in, std::move(v), true);
}

Tensor init_expert_b(const Tensor& centroid, int rank, double eps) {
  if (!centroid.defined() || centroid.cols() != 1) {
    throw ContractError("init_expert_b: centroid must be a column vector");
  }
  if (rank < 1) throw ContractError("init_expert_b: rank must be >= 1");
  if (eps < 0.0) throw ContractError("init_expert_b: eps must be >= 0");
  const int d = centroid.rows();
  double norm = 0;
  for (double v : centroid.data()) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<double> b(static_cast<size_t>(d) * rank, 0.0);
  if (norm == 0.0) {
    std::cerr << "init_expert_b: zero centroid, expert starts at zero\n";
  } else {
    for (int i = 0; i < d; ++i) {
      b[static_cast<size_t>(i) * rank] = eps * centroid.at(i, 0) / norm;
    }
  }
  return Tensor::from_data(d, rank, std::move(b), true);
}

AsymAdapterSet init_adapters(const BaseModel& model,
                             const std::string& injection_point, int rank,
                             std::span<const Tensor> forget_centroids,
                             const Tensor& retain_centroid, double eps,
                             uint64_t seed, const EntropyConfig& entropy) {
  if (forget_centroids.empty()) {
    throw ContractError("init_adapters: need at least one forgetting expert");
  }
  const Tensor& w0 = model.param(injection_point);  // throws on bad name
  const int d_out = w0.rows();
  const int k_in = w0.cols();

  AsymAdapterSet set;
  set.injection_point = injection_point;
  set.rank = rank;
  set.entropy = entropy;
  set.a = init_shared_a(rank, k_in, seed);
  auto check_dim = [&](const Tensor& c) {
    if (c.rows() != d_out || c.cols() != 1) {
      throw ContractError(
          "init_adapters: centroid length does not match the projection's "
          "output dimension");
    }
  };
  check_dim(retain_centroid);
  set.b_r = init_expert_b(retain_centroid, rank, eps);
  for (const Tensor& c : forget_centroids) {
    check_dim(c);
    set.b_f.push_back(init_expert_b(c, rank, eps));
    set.omega.push_back(Tensor::from_data(1, 1, {1.0}, true));
  }
  const int n = set.n_experts();
  set.gate.w_g = Tensor::from_data(n, 1, std::vector<double>(n, 1.0), true);
  return set;
}

Tensor train_delta(const Tensor& x_in, const Tensor& a, const Tensor& b_r,
                   std::span<const Tensor> b_f, std::span<const Tensor> omega) {
  if (b_f.size() != omega.size()) {
    throw ContractError("train_delta: one omega per expert required");
  }
  Tensor xa = numkit::matmul(x_in, numkit::transpose(a));  // T x rank
  Tensor delta = numkit::matmul(xa, numkit::transpose(b_r));
  for (size_t d = 0; d < b_f.size(); ++d) {
    Tensor e = numkit::matmul(xa, numkit::transpose(b_f[d]));
    delta = numkit::add(
        delta,
        numkit::mul(numkit::broadcast_all(omega[d], e.rows(), e.cols()), e));
  }
  return delta;
}

AdapterHook train_hook(const AsymAdapterSet& set) {
  AsymAdapterSet s = set;  // tensor handles are cheap shared copies
  return [s](std::string_view point, const Tensor& x) -> Tensor {
    if (point != s.injection_point) return Tensor();
    return train_delta(x, s.a, s.b_r, s.b_f, s.omega);
  };
}

AdapterHook infer_hook(const AsymAdapterSet& set,
                       std::vector<double> sq_per_row) {
  AsymAdapterSet s = set;
  return [s, sq = std::move(sq_per_row)](std::string_view point,
                                         const Tensor& x) -> Tensor {
    if (point != s.injection_point) return Tensor();
    if (static_cast<size_t>(x.rows()) != sq.size()) {
      throw ContractError("infer_hook: one entropy value per row required");
    }
    const int t_len = x.rows();
    const int n = s.n_experts();
    const int top_k = std::min(3, n);

    // per-row mixing coefficients for the retention expert and each expert
    std::vector<double> coef_r(t_len, 0.0);
    std::vector<std::vector<double>> coef(n, std::vector<double>(t_len, 0.0));
    for (int t = 0; t < t_len; ++t) {
      auto g = gate_weights(s.gate, sq[t], s.entropy.route_threshold);
      if (sq[t] > s.entropy.route_threshold) {
        coef_r[t] = 1.0;
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int i, int j) { return g[i] > g[j]; });
        for (int r = 0; r < top_k; ++r) coef[idx[r]][t] = g[idx[r]];
      } else {
        int best = 0;
        for (int d = 1; d < n; ++d) {
          if (g[d] > g[best]) best = d;
        }
        coef[best][t] = 1.0;
      }
    }

    Tensor xa = numkit::matmul(x, numkit::transpose(s.a));
    const int d_out = s.b_r.rows();
    Tensor delta = numkit::mul(
        numkit::broadcast_cols(Tensor::from_data(t_len, 1, coef_r), d_out),
        numkit::matmul(xa, numkit::transpose(s.b_r)));
    for (int d = 0; d < n; ++d) {
      bool any = false;
      for (double c : coef[d]) any |= (c != 0.0);
      if (!any) continue;
      Tensor e = numkit::matmul(xa, numkit::transpose(s.b_f[d]));
      delta = numkit::add(
          delta,
          numkit::mul(numkit::broadcast_cols(
                          Tensor::from_data(t_len, 1, coef[d]), d_out),
                      e));
    }
    return delta;
  };
}

void save_adapters(const AsymAdapterSet& set, const std::string& path,
                   bool include_delta_w) {
  Checkpoint ckpt;
  ckpt.tensors.emplace_back("a", set.a);
  ckpt.tensors.emplace_back("b_r", set.b_r);
  for (int d = 0; d < set.n_experts(); ++d) {
    ckpt.tensors.emplace_back("b_f." + std::to_string(d), set.b_f[d]);
  }
  for (int d = 0; d < set.n_experts(); ++d) {
    ckpt.tensors.emplace_back("omega." + std::to_string(d), set.omega[d]);
  }
  ckpt.tensors.emplace_back("gate.w_g", set.gate.w_g);
  if (include_delta_w) {
    numkit::NoGradGuard ng;
    ckpt.tensors.emplace_back("delta_w", set.compose_delta_w());
  }
  ckpt.meta = nlohmann::json{
      {"kind", "adapters"},
      {"injection_point", set.injection_point},
      {"rank", set.rank},
      {"n_experts", set.n_experts()},
      {"tau_high", set.gate.tau_high},
      {"tau_low", set.gate.tau_low},
      {"entropy",
       {{"q_a", set.entropy.q_a},
        {"q_b", set.entropy.q_b},
        {"shannon_threshold", set.entropy.shannon_threshold},
        {"route_threshold", set.entropy.route_threshold}}}};
  save_checkpoint(ckpt, path);
}

AsymAdapterSet load_adapters(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "adapters") {
    throw ContractError("checkpoint '" + path + "' does not hold adapters");
  }
  AsymAdapterSet set;
  try {
    set.injection_point = ckpt.meta.at("injection_point").get<std::string>();
    set.rank = ckpt.meta.at("rank").get<int>();
    set.gate.tau_high = ckpt.meta.at("tau_high").get<double>();
    set.gate.tau_low = ckpt.meta.at("tau_low").get<double>();
    const auto& e = ckpt.meta.at("entropy");
    set.entropy.q_a = e.at("q_a").get<double>();
    set.entropy.q_b = e.at("q_b").get<double>();
    set.entropy.shannon_threshold = e.at("shannon_threshold").get<double>();
    set.entropy.route_threshold = e.at("route_threshold").get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw ContractError("checkpoint '" + path +
                        "': bad adapter metadata: " + ex.what());
  }
  const int n = ckpt.meta.value("n_experts", 0);
  if (n < 1) throw ContractError("checkpoint '" + path + "': no experts");

  auto take = [&](const std::string& name) -> Tensor {
    for (auto& [tn, t] : ckpt.tensors) {
      if (tn == name) {
        Tensor leaf = t.clone_leaf();
        leaf.set_requires_grad(true);
        return leaf;
      }
    }
    throw ContractError("checkpoint '" + path + "': missing tensor '" + name +
                        "'");
  };
  set.a = take("a");
  set.b_r = take("b_r");
  for (int d = 0; d < n; ++d) set.b_f.push_back(take("b_f." + std::to_string(d)));
  for (int d = 0; d < n; ++d) {
    set.omega.push_back(take("omega." + std::to_string(d)));
  }
  set.gate.w_g = take("gate.w_g");
  if (set.a.rows() != set.rank || set.b_r.cols() != set.rank ||
      set.gate.w_g.rows() != n || set.gate.w_g.cols() != 1) {
    throw ContractError("checkpoint '" + path + "': adapter shapes disagree");
  }
  for (const auto& b : set.b_f) {
    if (b.cols() != set.rank || b.rows() != set.b_r.rows()) {
      throw ContractError("checkpoint '" + path + "': expert shape disagrees");
    }
  }
  for (const auto& w : set.omega) {
    if (w.rows() != 1 || w.cols() != 1) {
      throw ContractError("checkpoint '" + path + "': omega must be scalar");
    }
  }
  return set;
}

}  // namespace alter
