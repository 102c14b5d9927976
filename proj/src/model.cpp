// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "alter/errors.hpp"
#include "alter/rng.hpp"

namespace alter {

using numkit::Tensor;

namespace {

void check_config(const ModelConfig& cfg) {
  if (cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.n_blocks <= 0 ||
      cfg.mlp_width <= 0 || cfg.ctx_len <= 0 || cfg.norm_eps <= 0.0) {
    throw ContractError("model config fields must be positive");
  }
  if (cfg.d_model % cfg.n_heads != 0) {
    throw ContractError("d_model must be divisible by n_heads");
  }
  if (cfg.vocab <= Tokenizer::kUnk) {
    throw ContractError("vocab must cover the reserved special tokens");
  }
}

struct ShapeSpec {
  std::string name;
  int rows;
  int cols;
  bool is_gain;  // norm gains start at 1, everything else at gauss*0.02
};

std::vector<ShapeSpec> expected_shapes(const ModelConfig& cfg) {
  std::vector<ShapeSpec> out;
  out.push_back({"embed.tok", cfg.vocab, cfg.d_model, false});
  out.push_back({"embed.pos", cfg.ctx_len, cfg.d_model, false});
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    out.push_back({p + "norm1.g", 1, cfg.d_model, true});
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      out.push_back({p + "attn." + w, cfg.d_model, cfg.d_model, false});
    }
    out.push_back({p + "norm2.g", 1, cfg.d_model, true});
    out.push_back({p + "mlp.up", cfg.mlp_width, cfg.d_model, false});
    out.push_back({p + "mlp.down", cfg.d_model, cfg.mlp_width, false});
  }
  out.push_back({"final_norm.g", 1, cfg.d_model, true});
  out.push_back({"unembed", cfg.vocab, cfg.d_model, false});
  return out;
}

Tensor causal_mask(int t) {
  std::vector<double> m(static_cast<size_t>(t) * t, 0.0);
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) {
      m[static_cast<size_t>(i) * t + j] = -1e9;
    }
  }
  return Tensor::from_data(t, t, std::move(m));
}

std::vector<int> iota(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Runs fn(i) for i in [0, n) across `jobs` threads. Work is assigned by
// stride so the mapping from index to thread is deterministic; results must
// be written into index-addressed slots by the caller.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::vector<std::string> injection_point_names(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back(p + "attn." + w);
    out.push_back(p + "mlp.up");
    out.push_back(p + "mlp.down");
  }
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) {
    throw ShapeError("rmsnorm gain must be 1 x cols(x)");
  }
  const int n = x.cols();
  Tensor ms = numkit::smul(numkit::rowsum(numkit::mul(x, x)), 1.0 / n);
  Tensor inv = numkit::pow_const(numkit::add_const(ms, eps), -0.5);
  Tensor normed = numkit::mul(x, numkit::broadcast_cols(inv, n));
  return numkit::mul(normed, numkit::broadcast_rows(gain, x.rows()));
}

Tensor gelu(const Tensor& x) {
  Tensor x3 = numkit::mul(numkit::mul(x, x), x);
  Tensor inner =
      numkit::smul(numkit::add(x, numkit::smul(x3, 0.044715)), 0.7978845608028654);
  Tensor t = numkit::add_const(numkit::tanh_t(inner), 1.0);
  return numkit::smul(numkit::mul(x, t), 0.5);
}

BaseModel::BaseModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  check_config(cfg_);
  for (const ShapeSpec& s : expected_shapes(cfg_)) {
    std::vector<double> v(static_cast<size_t>(s.rows) * s.cols);
    if (s.is_gain) {
      std::fill(v.begin(), v.end(), 1.0);
    } else {
      Rng rng(seed_for(seed, s.name));
      for (double& x : v) x = rng.next_gauss() * 0.02;
    }
    params_.emplace_back(s.name,
                         Tensor::from_data(s.rows, s.cols, std::move(v), true));
  }
}

BaseModel::BaseModel(ModelConfig cfg,
                     std::vector<std::pair<std::string, Tensor>> params)
    : cfg_(cfg) {
  check_config(cfg_);
  const auto expected = expected_shapes(cfg_);
  if (params.size() != expected.size()) {
    throw ContractError("model restore: expected " +
                        std::to_string(expected.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  params_.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const ShapeSpec& s = expected[i];
    if (name != s.name) {
      throw ContractError("model restore: parameter " + std::to_string(i) +
                          " should be '" + s.name + "', got '" + name + "'");
    }
    if (!t.defined() || t.rows() != s.rows || t.cols() != s.cols) {
      throw ShapeError("model restore: '" + name + "' has the wrong shape");
    }
    Tensor leaf = t.clone_leaf();
    leaf.set_requires_grad(true);
    params_.emplace_back(name, std::move(leaf));
  }
}

const Tensor& BaseModel::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ContractError("unknown model parameter '" + name + "'");
}

size_t BaseModel::param_count() const {
  size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void BaseModel::set_trainable(bool on) {
  for (auto& [name, t] : params_) t.set_requires_grad(on);
}

BaseModel::States BaseModel::forward_states(std::span<const int> ids,
                                            const AdapterHook* hook,
                                            WoTap* tap) const {
  if (ids.empty()) throw ContractError("forward: empty token sequence");
  if (static_cast<int>(ids.size()) > cfg_.ctx_len) {
    throw ContractError("forward: sequence longer than the context window");
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab) {
      throw ContractError("forward: token id out of vocabulary range");
    }
  }
  const int t_len = static_cast<int>(ids.size());
  const int d = cfg_.d_model;
  const int hd = d / cfg_.n_heads;

  auto proj = [&](const Tensor& in, const std::string& point) {
    Tensor y = numkit::matmul(in, numkit::transpose(param(point)));
    if (hook) {
      Tensor delta = (*hook)(point, in);
      if (delta.defined()) y = numkit::add(y, delta);
    }
    return y;
  };

  std::vector<int> idv(ids.begin(), ids.end());
  Tensor x = numkit::add(numkit::row_select(param("embed.tok"), idv),
                         numkit::row_select(param("embed.pos"), iota(t_len)));
  Tensor mask = causal_mask(t_len);

  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    Tensor n1 = rmsnorm(x, param(p + "norm1.g"), cfg_.norm_eps);
    Tensor q = proj(n1, p + "attn.wq");
    Tensor k = proj(n1, p + "attn.wk");
    Tensor v = proj(n1, p + "attn.wv");

    Tensor concat;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Tensor qh = numkit::slice_cols(q, h * hd, hd);
      Tensor kh = numkit::slice_cols(k, h * hd, hd);
      Tensor vh = numkit::slice_cols(v, h * hd, hd);
      Tensor scores = numkit::smul(numkit::matmul(qh, numkit::transpose(kh)),
                                   1.0 / std::sqrt(static_cast<double>(hd)));
      Tensor att = numkit::softmax_rows(numkit::add(scores, mask));
      Tensor oh = numkit::pad_cols(numkit::matmul(att, vh), h * hd, d);
      concat = (h == 0) ? oh : numkit::add(concat, oh);
    }

    const std::string wo_point = p + "attn.wo";
    Tensor base_out = numkit::matmul(concat, numkit::transpose(param(wo_point)));
    Tensor attn_out = base_out;
    if (hook) {
      Tensor delta = (*hook)(wo_point, concat);
      if (delta.defined()) attn_out = numkit::add(base_out, delta);
    }
    if (tap && b == cfg_.n_blocks - 1) {
      tap->attn_concat = concat;
      tap->base_out = base_out;
      tap->resid_in = x;
    }
    x = numkit::add(x, attn_out);

    Tensor n2 = rmsnorm(x, param(p + "norm2.g"), cfg_.norm_eps);
    Tensor up = proj(n2, p + "mlp.up");
    Tensor down = proj(gelu(up), p + "mlp.down");
    x = numkit::add(x, down);
  }

  States out;
  out.hidden = rmsnorm(x, param("final_norm.g"), cfg_.norm_eps);
  out.logits = numkit::matmul(out.hidden, numkit::transpose(param("unembed")));
  return out;
}

Tensor BaseModel::forward_logits(std::span<const int> ids,
                                 const AdapterHook* hook) const {
  return forward_states(ids, hook).logits;
}

double content_accuracy(const BaseModel& model,
                        std::span<const EncodedRecord> records,
                        const AdapterHook* hook, int jobs) {
  if (records.empty()) throw ContractError("content_accuracy: no records");
  const int n = static_cast<int>(records.size());
  std::vector<uint8_t> ok(n, 0);
  parallel_for(n, jobs, [&](int i) {
    numkit::NoGradGuard ng;
    const EncodedRecord& r = records[i];
    bool any_content = false;
    for (uint8_t m : r.target_is_content) any_content |= (m != 0);
    if (!any_content) return;  // counts as a miss
    Tensor logits = model.forward_logits(r.inputs, hook);
    const int cols = logits.cols();
    std::span<const double> z = logits.data();
    bool all = true;
    for (size_t t = 0; t < r.targets.size() && all; ++t) {
      if (!r.target_is_content[t]) continue;
      const double* row = z.data() + t * cols;
      int best = 0;
      for (int c = 1; c < cols; ++c) {
        if (row[c] > row[best]) best = c;
      }
      all = (best == r.targets[t]);
    }
    ok[i] = all ? 1 : 0;
  });
  double hits = 0;
  for (uint8_t v : ok) hits += v;
  return hits / n;
}

std::vector<double> answer_nll(const BaseModel& model,
                               std::span<const EncodedRecord> records,
                               const AdapterHook* hook, int jobs) {
  if (records.empty()) throw ContractError("answer_nll: no records");
  const int n = static_cast<int>(records.size());
  std::vector<double> out(n, 0.0);
  parallel_for(n, jobs, [&](int i) {
    numkit::NoGradGuard ng;
    const EncodedRecord& r = records[i];
    Tensor logits = model.forward_logits(r.inputs, hook);
    out[i] = numkit::cross_entropy(logits, r.targets, r.target_is_answer).item();
  });
  return out;
}

BaseTrainStats train_base(BaseModel& model,
                          std::span<const EncodedRecord> records, int epochs,
                          double lr, uint64_t seed, double gate) {
  if (records.empty()) throw ContractError("train_base: no records");
  if (epochs < 0) throw ContractError("train_base: negative epoch count");
  if (lr <= 0.0) throw ContractError("train_base: learning rate must be positive");

  auto& params = model.named_params();
  std::vector<Tensor> wrt;
  wrt.reserve(params.size());
  for (auto& [name, t] : params) wrt.push_back(t);

  struct AdamSlot {
    std::vector<double> m, v;
  };
  std::vector<AdamSlot> slots(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    slots[i].m.assign(params[i].second.size(), 0.0);
    slots[i].v.assign(params[i].second.size(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long step = 0;

  BaseTrainStats stats;
  bool have_acc = false;
  std::vector<int> order(records.size());
  std::iota(order.begin(), order.end(), 0);

  for (int e = 0; e < epochs; ++e) {
    Rng epoch_rng(seed_for(seed, "order.epoch" + std::to_string(e)));
    epoch_rng.shuffle(order);
    for (int idx : order) {
      const EncodedRecord& r = records[idx];
      ++step;
      std::vector<std::vector<double>> gvals(params.size());
      try {
        Tensor loss = numkit::cross_entropy(model.forward_logits(r.inputs),
                                            r.targets, r.target_in_train);
        numkit::GradMap gm = numkit::grad(loss, wrt);
        for (size_t i = 0; i < params.size(); ++i) {
          Tensor g = numkit::grad_of(gm, params[i].second);
          gvals[i].assign(g.data().begin(), g.data().end());
        }
      } catch (const NumericError& err) {
        throw TrainingError("base training diverged at step " +
                            std::to_string(step) + ": " + err.what());
      }
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].second.mutable_data();
        AdamSlot& s = slots[i];
        const std::vector<double>& g = gvals[i];
        for (size_t j = 0; j < g.size(); ++j) {
          s.m[j] = kBeta1 * s.m[j] + (1.0 - kBeta1) * g[j];
          s.v[j] = kBeta2 * s.v[j] + (1.0 - kBeta2) * g[j] * g[j];
          p[j] -= lr * (s.m[j] / bc1) / (std::sqrt(s.v[j] / bc2) + kEps);
        }
      }
    }
    stats.epochs_run = e + 1;
    stats.content_accuracy = content_accuracy(model, records);
    have_acc = true;
    if (stats.content_accuracy >= gate) break;
  }
  if (!have_acc && epochs == 0) {
    stats.content_accuracy = content_accuracy(model, records);
  }
  return stats;
}

}  // namespace alter
