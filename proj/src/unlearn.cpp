// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <unordered_set>
#include <utility>

#include "alter/errors.hpp"
#include "json.hpp"

namespace alter {

namespace fs = std::filesystem;
using numkit::Tensor;

namespace {

// Frobenius norm of every freshly seeded expert matrix.
constexpr double kExpertEps = 1e-3;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string last_wo_name(const ModelConfig& cfg) {
  return "blocks." + std::to_string(cfg.n_blocks - 1) + ".attn.wo";
}

void check_record_index(std::span<const EncodedRecord> records, int idx,
                        const char* who) {
  if (idx < 0 || static_cast<size_t>(idx) >= records.size()) {
    throw ContractError(std::string(who) + ": record index " +
                        std::to_string(idx) + " out of range");
  }
}

}  // namespace

void validate_config(const TrainConfig& cfg) {
  if (cfg.beta < 0 || cfg.gamma < 0 || cfg.lambda < 0) {
    throw ContractError("TrainConfig: beta, gamma and lambda must be >= 0");
  }
  if (!(cfg.eta_a > 0) || !(cfg.eta_b > 0)) {
    throw ContractError("TrainConfig: learning rates must be positive");
  }
  if (cfg.batch < 1) throw ContractError("TrainConfig: batch must be >= 1");
  if (cfg.epochs < 0) throw ContractError("TrainConfig: epochs must be >= 0");
  if (cfg.rank < 1) throw ContractError("TrainConfig: rank must be >= 1");
  if (cfg.structural_cap < 1) {
    throw ContractError("TrainConfig: structural_cap must be >= 1");
  }
  if (cfg.injection_point.empty()) {
    throw ContractError("TrainConfig: injection_point must be named");
  }
  if (!(cfg.entropy.q_a > 0) || !(cfg.entropy.q_b > 0)) {
    throw ContractError("TrainConfig: entropy deformations must be positive");
  }
  if (cfg.entropy.shannon_threshold < 0 || cfg.entropy.route_threshold < 0) {
    throw ContractError("TrainConfig: entropy thresholds must be >= 0");
  }
}

UnlearnTask build_task(std::span<const EncodedRecord> records,
                       int n_subdomains, int rounds) {
  if (n_subdomains < 1) {
    throw ContractError("build_task: need at least one subdomain");
  }
  if (rounds < 1) throw ContractError("build_task: need at least one round");
  UnlearnTask task;
  task.forget.resize(static_cast<size_t>(n_subdomains));
  for (size_t i = 0; i < records.size(); ++i) {
    const EncodedRecord& r = records[i];
    if (r.forget) {
      // Forget labels are 1-based (0 marks retention); experts are 0-based.
      if (r.subdomain < 1 || r.subdomain > n_subdomains) {
        throw ContractError("build_task: record " + r.id +
                            " has no usable subdomain label");
      }
      task.forget[static_cast<size_t>(r.subdomain - 1)].push_back(
          static_cast<int>(i));
    } else {
      task.retain.push_back(static_cast<int>(i));
    }
  }
  // Contiguous subdomain groups, earlier rounds taking the remainder.
  const int r = std::min(rounds, n_subdomains);
  const int base = n_subdomains / r;
  const int extra = n_subdomains % r;
  int next = 0;
  for (int k = 0; k < r; ++k) {
    std::vector<int> group;
    const int take = base + (k < extra ? 1 : 0);
    for (int j = 0; j < take; ++j) group.push_back(next++);
    task.rounds.push_back(std::move(group));
  }
  validate_task(task, records);
  return task;
}

void validate_task(const UnlearnTask& task,
                   std::span<const EncodedRecord> records) {
  if (task.forget.empty()) {
    throw ContractError("UnlearnTask: no forget subdomains");
  }
  if (task.retain.empty()) {
    throw ContractError("UnlearnTask: empty retain set");
  }
  if (task.rounds.empty()) {
    throw ContractError("UnlearnTask: no rounds");
  }
  std::unordered_set<int> seen;
  std::unordered_set<std::string> ids;
  auto visit = [&](int idx, const char* who) {
    check_record_index(records, idx, who);
    if (!seen.insert(idx).second) {
      throw ContractError(std::string(who) + ": record index " +
                          std::to_string(idx) + " listed twice");
    }
    if (!ids.insert(records[static_cast<size_t>(idx)].id).second) {
      throw ContractError(std::string(who) + ": duplicate record id " +
                          records[static_cast<size_t>(idx)].id);
    }
  };
  for (size_t d = 0; d < task.forget.size(); ++d) {
    if (task.forget[d].empty()) {
      throw ContractError("UnlearnTask: subdomain " + std::to_string(d) +
                          " has no records");
    }
    for (int idx : task.forget[d]) {
      visit(idx, "UnlearnTask.forget");
      const EncodedRecord& rec = records[static_cast<size_t>(idx)];
      if (!rec.forget || rec.subdomain != static_cast<int>(d) + 1) {
        throw ContractError("UnlearnTask: record " + rec.id +
                            " does not belong to subdomain " +
                            std::to_string(d));
      }
    }
  }
  for (int idx : task.retain) {
    visit(idx, "UnlearnTask.retain");
    if (records[static_cast<size_t>(idx)].forget) {
      throw ContractError("UnlearnTask: forget record " +
                          records[static_cast<size_t>(idx)].id +
                          " listed as retain");
    }
  }
  std::unordered_set<int> used;
  for (const auto& round : task.rounds) {
    if (round.empty()) {
      throw ContractError("UnlearnTask: empty round");
    }
    for (int d : round) {
      if (d < 0 || static_cast<size_t>(d) >= task.forget.size()) {
        throw ContractError("UnlearnTask: round names unknown subdomain " +
                            std::to_string(d));
      }
      if (!used.insert(d).second) {
        throw ContractError("UnlearnTask: subdomain " + std::to_string(d) +
                            " unlocked twice");
      }
    }
  }
}

ProfileIndex::ProfileIndex(const std::vector<TokenProfile>& profiles,
                           std::span<const EncodedRecord> records)
    : profiles_(&profiles) {
  offset_.reserve(records.size() + 1);
  offset_.push_back(0);
  for (const EncodedRecord& r : records) {
    offset_.push_back(offset_.back() + r.targets.size());
  }
  if (profiles.size() != offset_.back()) {
    throw ContractError("ProfileIndex: " + std::to_string(profiles.size()) +
                        " profiles for " + std::to_string(offset_.back()) +
                        " target positions");
  }
  for (size_t r = 0; r < records.size(); ++r) {
    for (size_t t = 0; t + offset_[r] < offset_[r + 1]; ++t) {
      const TokenProfile& p = profiles[offset_[r] + t];
      if (p.record_index != static_cast<int>(r) ||
          p.record_pos != static_cast<int>(t)) {
        throw ContractError("ProfileIndex: profiles out of record order");
      }
    }
  }
}

const TokenProfile& ProfileIndex::at(int record, int pos) const {
  const size_t r = static_cast<size_t>(record);
  if (record < 0 || r + 1 >= offset_.size()) {
    throw ContractError("ProfileIndex: record out of range");
  }
  const size_t t = static_cast<size_t>(pos);
  if (pos < 0 || offset_[r] + t >= offset_[r + 1]) {
    throw ContractError("ProfileIndex: position out of range");
  }
  return (*profiles_)[offset_[r] + t];
}

Tensor loss_ihl(const Tensor& logits, const std::vector<int>& targets,
                const std::vector<uint8_t>& mask) {
  if (static_cast<size_t>(logits.rows()) != targets.size() ||
      targets.size() != mask.size()) {
    throw ShapeError("loss_ihl: logits rows, targets and mask disagree");
  }
  std::vector<int> rows;
  std::vector<int> row_targets;
  for (size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    rows.push_back(static_cast<int>(t));
    row_targets.push_back(targets[t]);
  }
  if (rows.empty()) throw ContractError("loss_ihl: empty selection");
  const Tensor p = numkit::softmax_rows(numkit::row_select(logits, rows));
  const Tensor p_y = numkit::gather_cols(p, row_targets);
  const Tensor p_top = numkit::rowmax_excluding(p, row_targets);
  const Tensor per = numkit::add_const(numkit::sub(p_y, p_top), 1.0);
  return numkit::smul(numkit::sum_all(per), 1.0 / double(rows.size()));
}

Tensor loss_retain(const Tensor& logits, const std::vector<int>& targets,
                   const std::vector<uint8_t>& mask) {
  return numkit::cross_entropy(logits, targets, mask);
}

Tensor loss_baseline_graddiff(const Tensor& logits_f,
                              const std::vector<int>& targets_f,
                              const std::vector<uint8_t>& mask_f,
                              const Tensor& logits_r,
                              const std::vector<int>& targets_r,
                              const std::vector<uint8_t>& mask_r, double beta,
                              double gamma) {
  const Tensor ce_f = numkit::cross_entropy(logits_f, targets_f, mask_f);
  const Tensor ce_r = numkit::cross_entropy(logits_r, targets_r, mask_r);
  return numkit::add(numkit::smul(ce_f, -beta), numkit::smul(ce_r, gamma));
}

namespace {

// Constant-parameter copies of the expert side, shared by the structural
// paths so only A stays live.
struct FrozenExperts {
  Tensor b_r;
  std::vector<Tensor> b_f;
  std::vector<Tensor> omega;

  explicit FrozenExperts(const AsymAdapterSet& set)
      : b_r(set.b_r.detached()) {
    for (const Tensor& b : set.b_f) b_f.push_back(b.detached());
    for (const Tensor& w : set.omega) omega.push_back(w.detached());
  }
};

// Entropy of one rebuilt position behind the last attention projection.
// tap rows are constants; only `a_cand` carries gradient.
Tensor tail_entropy(const BaseModel& m, const FrozenExperts& fx,
                    const Tensor& x_row, const Tensor& base_row,
                    const Tensor& resid_row, const Tensor& a_cand, double q) {
  const ModelConfig& cfg = m.config();
  const std::string blk = "blocks." + std::to_string(cfg.n_blocks - 1);
  const Tensor delta =
      train_delta(x_row, a_cand, fx.b_r, fx.b_f, fx.omega);
  const Tensor h = numkit::add(numkit::add(resid_row, base_row), delta);
  const Tensor n2 = rmsnorm(h, m.param(blk + ".norm2.g"), cfg.norm_eps);
  const Tensor up = numkit::matmul(n2, numkit::transpose(m.param(blk + ".mlp.up")));
  const Tensor down =
      numkit::matmul(gelu(up), numkit::transpose(m.param(blk + ".mlp.down")));
  const Tensor z = rmsnorm(numkit::add(h, down), m.param("final_norm.g"),
                           cfg.norm_eps);
  const Tensor logits_row =
      numkit::matmul(z, numkit::transpose(m.param("unembed")));
  return tsallis_rows(logits_row, q);
}

}  // namespace

std::pair<double, Tensor> loss_structural(
    const BaseModel& m, const AsymAdapterSet& set,
    std::span<const EncodedRecord> records,
    std::span<const std::pair<int, int>> positions, double q, bool fast_path) {
  const int rows = set.a.rows(), cols = set.a.cols();
  if (positions.empty()) {
    std::cerr << "loss_structural: empty high-entropy batch, penalty is 0\n";
    return {0.0, Tensor::zeros(rows, cols)};
  }
  const bool fast = fast_path && set.injection_point == last_wo_name(m.config());
  const FrozenExperts fx(set);

  // Group by record so each record's forward runs once.
  std::map<int, std::vector<int>> by_record;
  for (const auto& [rec, t] : positions) {
    check_record_index(records, rec, "loss_structural");
    const auto& targets = records[static_cast<size_t>(rec)].targets;
    if (t < 0 || static_cast<size_t>(t) >= targets.size()) {
      throw ContractError("loss_structural: position out of range");
    }
    by_record[rec].push_back(t);
  }

  double value_sum = 0.0;
  std::vector<double> grad_sum(static_cast<size_t>(rows) * cols, 0.0);
  size_t count = 0;
  for (const auto& [rec, ts] : by_record) {
    const EncodedRecord& r = records[static_cast<size_t>(rec)];
    if (fast) {
      WoTap tap;
      {
        numkit::NoGradGuard ng;
        (void)m.forward_states(r.inputs, nullptr, &tap);
      }
      for (int t : ts) {
        const Tensor x_row = numkit::row_select(tap.attn_concat, {t});
        const Tensor base_row = numkit::row_select(tap.base_out, {t});
        const Tensor resid_row = numkit::row_select(tap.resid_in, {t});
        auto fn = [&](const Tensor& a_cand) {
          return tail_entropy(m, fx, x_row, base_row, resid_row, a_cand, q);
        };
        const auto [v, g] = numkit::grad_norm_grad(fn, set.a);
        value_sum += v;
        const auto gd = g.data();
        for (size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += gd[i];
        ++count;
      }
    } else {
      for (int t : ts) {
        auto fn = [&](const Tensor& a_cand) {
          const AdapterHook hook = [&](std::string_view point,
                                       const Tensor& x) {
            if (point != set.injection_point) return Tensor();
            return train_delta(x, a_cand, fx.b_r, fx.b_f, fx.omega);
          };
          const Tensor logits = m.forward_logits(r.inputs, &hook);
          return tsallis_rows(numkit::row_select(logits, {t}), q);
        };
        const auto [v, g] = numkit::grad_norm_grad(fn, set.a);
        value_sum += v;
        const auto gd = g.data();
        for (size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += gd[i];
        ++count;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : grad_sum) v *= inv;
  Tensor grad;
  {
    numkit::NoGradGuard ng;
    grad = Tensor::from_data(rows, cols, std::move(grad_sum));
  }
  return {value_sum * inv, grad};
}

namespace {

// Per-row entropy-over-temperature column driving the gate during stage
// one; profiles are a static property of the base model.
Tensor gate_signal(const ProfileIndex& prof, int rec, size_t n_rows,
                   const EntropyConfig& ecfg, const GateNet& gate) {
  std::vector<double> col(n_rows);
  for (size_t t = 0; t < n_rows; ++t) {
    const double s = prof.at(rec, static_cast<int>(t)).sq_a;
    const double tau =
        s > ecfg.route_threshold ? gate.tau_high : gate.tau_low;
    col[t] = s / tau;
  }
  return Tensor::from_data(static_cast<int>(n_rows), 1, std::move(col));
}

// Stage-one forward composition: live A, frozen experts, and (optionally)
// the live gate blended per row.
AdapterHook stage1_hook(const AsymAdapterSet& set, const FrozenExperts& fx,
                        const ProfileIndex& prof, int rec, size_t n_rows,
                        bool train_gate) {
  if (!train_gate) {
    return [&set, &fx](std::string_view point, const Tensor& x) {
      if (point != set.injection_point) return Tensor();
      return train_delta(x, set.a, fx.b_r, fx.b_f, fx.omega);
    };
  }
  Tensor signal = gate_signal(prof, rec, n_rows, set.entropy, set.gate);
  return [&set, &fx, signal](std::string_view point, const Tensor& x) {
    if (point != set.injection_point) return Tensor();
    const Tensor xa = numkit::matmul(x, numkit::transpose(set.a));
    Tensor delta = numkit::matmul(xa, numkit::transpose(fx.b_r));
    const Tensor g = gate_rows(set.gate, signal);
    const int t_rows = x.rows();
    const int d_out = delta.cols();
    for (size_t d = 0; d < fx.b_f.size(); ++d) {
      const Tensor coef = numkit::broadcast_cols(
          numkit::slice_cols(g, static_cast<int>(d), 1), d_out);
      const Tensor scaled = numkit::mul(
          numkit::broadcast_all(fx.omega[d], t_rows, d_out),
          numkit::matmul(xa, numkit::transpose(fx.b_f[d])));
      delta = numkit::add(delta, numkit::mul(coef, scaled));
    }
    return delta;
  };
}

// Mean cross-entropy over the high-entropy positions of the given records
// under `hook_for`; count is the number of contributing rows.
std::pair<Tensor, size_t> high_ce(
    const BaseModel& m, std::span<const EncodedRecord> records,
    std::span<const int> idx, const ProfileIndex& prof,
    const std::function<AdapterHook(int rec, size_t n_rows)>& hook_for) {
  Tensor acc;
  size_t total = 0;
  for (int i : idx) {
    const EncodedRecord& r = records[static_cast<size_t>(i)];
    std::vector<uint8_t> mask(r.targets.size(), 0);
    size_t n = 0;
    for (size_t t = 0; t < r.targets.size(); ++t) {
      if (prof.at(i, static_cast<int>(t)).high) {
        mask[t] = 1;
        ++n;
      }
    }
    if (n == 0) continue;
    const AdapterHook hook = hook_for(i, r.targets.size());
    const Tensor logits = m.forward_logits(r.inputs, &hook);
    const Tensor ce = numkit::cross_entropy(logits, r.targets, mask);
    const Tensor weighted = numkit::smul(ce, static_cast<double>(n));
    acc = (total == 0) ? weighted : numkit::add(acc, weighted);
    total += n;
  }
  if (total == 0) {
    throw ContractError("stage1: no high-entropy positions in batch");
  }
  return {numkit::smul(acc, 1.0 / static_cast<double>(total)), total};
}

}  // namespace

void AdamPool::step(numkit::Tensor& param, const numkit::Tensor& grad,
                    double lr) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ShapeError("optimizer step: parameter and gradient shapes differ");
  }
  Slot& s = slots_[static_cast<const void*>(param.data().data())];
  const auto g = grad.data();
  if (s.m.empty()) {
    s.m.assign(g.size(), 0.0);
    s.v.assign(g.size(), 0.0);
  }
  ++s.t;
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  const double bc1 = 1.0 - std::pow(kB1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(kB2, static_cast<double>(s.t));
  double* p = param.mutable_data();
  for (size_t j = 0; j < g.size(); ++j) {
    s.m[j] = kB1 * s.m[j] + (1.0 - kB1) * g[j];
    s.v[j] = kB2 * s.v[j] + (1.0 - kB2) * g[j] * g[j];
    p[j] -= lr * (s.m[j] / bc1) / (std::sqrt(s.v[j] / bc2) + kEps);
  }
}

StageStats stage1(const BaseModel& m, AsymAdapterSet& set,
                  std::span<const EncodedRecord> records,
                  std::span<const int> train_idx, const ProfileIndex& prof,
                  const TrainConfig& cfg, bool train_gate) {
  validate_config(cfg);
  if (train_idx.empty()) throw ContractError("stage1: no training records");
  for (int i : train_idx) check_record_index(records, i, "stage1");

  const FrozenExperts fx(set);
  auto hook_for = [&](int rec, size_t n_rows) {
    return stage1_hook(set, fx, prof, rec, n_rows, train_gate);
  };
  auto measure = [&]() {
    numkit::NoGradGuard ng;
    const auto [ce, n] = high_ce(m, records, train_idx, prof, hook_for);
    (void)n;
    return std::exp(ce.item());
  };

  StageStats stats;
  stats.high_ppl_start = measure();
  if (cfg.epochs == 0) {
    stats.high_ppl_end = stats.high_ppl_start;
    return stats;
  }

  std::vector<Tensor> wrt{set.a};
  if (train_gate) wrt.push_back(set.gate.w_g);
  AdamPool opt;
  // records without a single high position contribute nothing here
  std::vector<int> order;
  for (int i : train_idx) {
    const EncodedRecord& r = records[static_cast<size_t>(i)];
    for (size_t t = 0; t < r.targets.size(); ++t) {
      if (prof.at(i, static_cast<int>(t)).high) {
        order.push_back(i);
        break;
      }
    }
  }
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(seed_for(cfg.seed, "stage1.order." + std::to_string(epoch)));
    rng.shuffle(order);
    for (size_t at = 0; at < order.size(); at += cfg.batch) {
      const size_t end = std::min(order.size(), at + cfg.batch);
      std::span<const int> chunk(order.data() + at, end - at);
      const auto [loss, n] = high_ce(m, records, chunk, prof, hook_for);
      (void)n;
      const double val = loss.item();
      if (!std::isfinite(val)) {
        throw TrainingError("stage1: loss diverged at step " +
                            std::to_string(stats.steps));
      }
      const numkit::GradMap grads = numkit::grad(loss, wrt);
      opt.step(set.a, numkit::grad_of(grads, set.a), cfg.eta_a);
      if (train_gate) {
        opt.step(set.gate.w_g, numkit::grad_of(grads, set.gate.w_g),
                 cfg.eta_b);
      }
      ++stats.steps;
    }
  }
  stats.high_ppl_end = measure();
  return stats;
}

namespace {

// Weighted mean of a per-record masked loss over several records; returns
// the scaled term and the row count (0 rows -> empty tensor).
template <typename LossFn>
std::pair<Tensor, size_t> masked_term(
    const BaseModel& m, std::span<const EncodedRecord> records,
    const std::vector<int>& idx, const ProfileIndex& prof,
    const AdapterHook& hook, double weight, const LossFn& loss_fn) {
  Tensor acc;
  size_t total = 0;
  for (int i : idx) {
    const EncodedRecord& r = records[static_cast<size_t>(i)];
    std::vector<uint8_t> mask(r.targets.size(), 0);
    size_t n = 0;
    for (size_t t = 0; t < r.targets.size(); ++t) {
      if (r.target_is_answer[t] && !prof.at(i, static_cast<int>(t)).high) {
        mask[t] = 1;
        ++n;
      }
    }
    if (n == 0) continue;
    const Tensor logits = m.forward_logits(r.inputs, &hook);
    const Tensor term = loss_fn(logits, r.targets, mask);
    const Tensor weighted = numkit::smul(term, static_cast<double>(n));
    acc = (total == 0) ? weighted : numkit::add(acc, weighted);
    total += n;
  }
  if (total == 0) return {Tensor(), 0};
  return {numkit::smul(acc, weight / static_cast<double>(total)), total};
}

}  // namespace

StepStats stage2_step(const BaseModel& m, AsymAdapterSet& set, AdamPool& opt,
                      std::span<const int> batch,
                      std::span<const EncodedRecord> records,
                      const ProfileIndex& prof, const TrainConfig& cfg,
                      Rng& sample_rng) {
  validate_config(cfg);
  if (batch.empty()) throw ContractError("stage2_step: empty batch");

  std::map<int, std::vector<int>> forget_by_expert;
  std::vector<int> retain_idx;
  std::vector<std::pair<int, int>> highs;
  for (int i : batch) {
    check_record_index(records, i, "stage2_step");
    const EncodedRecord& r = records[static_cast<size_t>(i)];
    if (r.forget) {
      // Labels are 1-based; expert d serves subdomain d + 1.
      if (r.subdomain < 1 ||
          (set.n_experts() > 1 && r.subdomain > set.n_experts())) {
        throw ContractError("stage2_step: record " + r.id +
                            " carries no usable subdomain label");
      }
      const int expert = set.n_experts() == 1 ? 0 : r.subdomain - 1;
      forget_by_expert[expert].push_back(i);
    } else {
      retain_idx.push_back(i);
    }
    for (size_t t = 0; t < r.targets.size(); ++t) {
      if (prof.at(i, static_cast<int>(t)).high) {
        highs.emplace_back(i, static_cast<int>(t));
      }
    }
  }
  if (highs.size() > static_cast<size_t>(cfg.structural_cap)) {
    sample_rng.shuffle(highs);
    highs.resize(static_cast<size_t>(cfg.structural_cap));
    std::sort(highs.begin(), highs.end());
  }

  StepStats stats;

  // Forgetting term: each subdomain's inverted hinge feeds its own expert.
  for (const auto& [expert, idx] : forget_by_expert) {
    const AsymAdapterSet iso =
        set.isolate(AsymAdapterSet::Live::kExpert, expert);
    const AdapterHook hook = train_hook(iso);
    const auto [term, n] = masked_term(
        m, records, idx, prof, hook, cfg.beta,
        [](const Tensor& lg, const std::vector<int>& tg,
           const std::vector<uint8_t>& mk) { return loss_ihl(lg, tg, mk); });
    if (n == 0) continue;
    const double val = term.item();
    if (!std::isfinite(val)) {
      throw TrainingError("stage2_step: forgetting term diverged");
    }
    std::vector<Tensor> wrt{set.b_f[static_cast<size_t>(expert)],
                            set.omega[static_cast<size_t>(expert)]};
    const numkit::GradMap grads = numkit::grad(term, wrt);
    opt.step(set.b_f[static_cast<size_t>(expert)],
             numkit::grad_of(grads, wrt[0]), cfg.eta_b);
    opt.step(set.omega[static_cast<size_t>(expert)],
             numkit::grad_of(grads, wrt[1]), cfg.eta_b);
    stats.ihl += val;
    stats.ihl_rows += static_cast<int>(n);
  }

  // Retention term: low-entropy retain answers feed the retention expert.
  if (!retain_idx.empty()) {
    const AsymAdapterSet iso = set.isolate(AsymAdapterSet::Live::kBr);
    const AdapterHook hook = train_hook(iso);
    const auto [term, n] = masked_term(
        m, records, retain_idx, prof, hook, cfg.gamma,
        [](const Tensor& lg, const std::vector<int>& tg,
           const std::vector<uint8_t>& mk) { return loss_retain(lg, tg, mk); });
    if (n > 0) {
      const double val = term.item();
      if (!std::isfinite(val)) {
        throw TrainingError("stage2_step: retention term diverged");
      }
      std::vector<Tensor> wrt{set.b_r};
      const numkit::GradMap grads = numkit::grad(term, wrt);
      opt.step(set.b_r, numkit::grad_of(grads, set.b_r), cfg.eta_b);
      stats.retain += val;
      stats.retain_rows += static_cast<int>(n);
    }
  }

  // Structural term: high-entropy sensitivity flows into the shared A.
  if (cfg.lambda > 0 && !highs.empty()) {
    const auto [value, grad] =
        loss_structural(m, set, records, highs, cfg.entropy.q_a, true);
    if (!std::isfinite(value)) {
      throw TrainingError("stage2_step: structural term diverged");
    }
    // lambda scales the step, not the gradient: the moment normalization
    // would otherwise absorb any constant factor on the only term that
    // touches A here.
    opt.step(set.a, grad, cfg.eta_a * cfg.lambda);
    stats.structural = cfg.lambda * value;
    stats.structural_rows = static_cast<int>(highs.size());
  }
  return stats;
}

namespace {

nlohmann::json config_json(const TrainConfig& cfg, bool single_lora,
                           int n_experts) {
  nlohmann::json j;
  j["beta"] = cfg.beta;
  j["gamma"] = cfg.gamma;
  j["lambda"] = cfg.lambda;
  j["eta_a"] = cfg.eta_a;
  j["eta_b"] = cfg.eta_b;
  j["batch"] = cfg.batch;
  j["epochs"] = cfg.epochs;
  j["rank"] = cfg.rank;
  j["seed"] = cfg.seed;
  j["injection_point"] = cfg.injection_point;
  j["structural_cap"] = cfg.structural_cap;
  j["entropy"] = {{"q_a", cfg.entropy.q_a},
                  {"q_b", cfg.entropy.q_b},
                  {"shannon_threshold", cfg.entropy.shannon_threshold},
                  {"route_threshold", cfg.entropy.route_threshold}};
  j["single_lora"] = single_lora;
  j["n_experts"] = n_experts;
  return j;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << body;
  if (!out) throw IoError("short write to " + path);
}

void write_timings(const std::string& path,
                   const std::vector<RoundTiming>& timings) {
  std::string body = "round,stage1_s,stage2_s,eval_s\n";
  char buf[128];
  for (const RoundTiming& t : timings) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", t.round,
                  t.stage1_s, t.stage2_s, t.eval_s);
    body += buf;
  }
  write_file(path, body);
}

std::vector<QaRecord> gather_raw(std::span<const QaRecord> raw,
                                 const std::vector<int>& idx) {
  std::vector<QaRecord> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(raw[static_cast<size_t>(i)]);
  return out;
}

}  // namespace

UnlearnRun run_unlearn(const BaseModel& m, const Tokenizer& tk,
                       std::span<const QaRecord> raw_records,
                       std::span<const EncodedRecord> records,
                       const std::vector<TokenProfile>& profiles,
                       const UnlearnTask& task, const TrainConfig& cfg,
                       const Evaluator* evaluator, const std::string& run_dir,
                       bool single_lora) {
  validate_config(cfg);
  validate_task(task, records);
  if (raw_records.size() != records.size()) {
    throw ContractError("run_unlearn: raw and encoded corpora disagree");
  }
  const ProfileIndex prof(profiles, records);

  // Seed one expert per subdomain (or one shared expert) from the mean
  // hidden state of its low-entropy answer tokens.
  std::vector<Tensor> centroids;
  if (single_lora) {
    std::vector<int> all;
    for (const auto& d : task.forget) all.insert(all.end(), d.begin(), d.end());
    centroids.push_back(subdomain_centroid(m, tk, gather_raw(raw_records, all),
                                           cfg.entropy.shannon_threshold));
  } else {
    for (const auto& d : task.forget) {
      centroids.push_back(subdomain_centroid(m, tk, gather_raw(raw_records, d),
                                             cfg.entropy.shannon_threshold));
    }
  }
  const Tensor retain_centroid = subdomain_centroid(
      m, tk, gather_raw(raw_records, task.retain),
      cfg.entropy.shannon_threshold);

  UnlearnRun run{
      init_adapters(m, cfg.injection_point, cfg.rank, centroids,
                    retain_centroid, kExpertEps,
                    seed_for(cfg.seed, "adapters.init"), cfg.entropy),
      {},
      {}};

  if (!run_dir.empty()) {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    write_file(run_dir + "/config.json",
               config_json(cfg, single_lora, run.adapters.n_experts()).dump(2) +
                   "\n");
  }

  std::vector<int> train_idx;
  for (const auto& d : task.forget) {
    train_idx.insert(train_idx.end(), d.begin(), d.end());
  }
  train_idx.insert(train_idx.end(), task.retain.begin(), task.retain.end());

  const auto t0 = std::chrono::steady_clock::now();
  (void)stage1(m, run.adapters, records, train_idx, prof, cfg, !single_lora);
  const double stage1_s = seconds_since(t0);
  double train_clock = stage1_s;

  std::vector<int> active_forget;
  for (size_t k = 0; k < task.rounds.size(); ++k) {
    for (int d : task.rounds[k]) {
      const auto& add = task.forget[static_cast<size_t>(d)];
      active_forget.insert(active_forget.end(), add.begin(), add.end());
    }
    const auto tr = std::chrono::steady_clock::now();
    Rng srng(seed_for(cfg.seed, "round." + std::to_string(k) + ".structural"));
    AdamPool opt;  // fresh moments per round
    std::vector<int> order(active_forget);
    order.insert(order.end(), task.retain.begin(), task.retain.end());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      Rng rng(seed_for(cfg.seed, "round." + std::to_string(k) + ".order." +
                                     std::to_string(epoch)));
      rng.shuffle(order);
      for (size_t at = 0; at < order.size();
           at += static_cast<size_t>(cfg.batch)) {
        const size_t end =
            std::min(order.size(), at + static_cast<size_t>(cfg.batch));
        std::span<const int> chunk(order.data() + at, end - at);
        (void)stage2_step(m, run.adapters, opt, chunk, records, prof, cfg,
                          srng);
      }
    }
    const double stage2_s = seconds_since(tr);
    train_clock += stage2_s;

    RoundTiming timing;
    timing.round = static_cast<int>(k) + 1;
    timing.stage1_s = (k == 0) ? stage1_s : 0.0;
    timing.stage2_s = stage2_s;

    const std::string round_dir =
        run_dir.empty() ? std::string()
                        : run_dir + "/round_" + std::to_string(k + 1);
    if (!run_dir.empty()) {
      std::error_code ec;
      fs::create_directories(round_dir, ec);
      save_adapters(run.adapters, round_dir + "/adapters.ckpt");
    }
    if (evaluator) {
      const auto te = std::chrono::steady_clock::now();
      const AdapterHook hook = train_hook(run.adapters);
      const EvalReport rep = evaluator->run(
          m, &hook, static_cast<int>(k) + 1, active_forget, train_clock);
      timing.eval_s = seconds_since(te);
      run.reports.push_back(rep);
      if (!run_dir.empty()) emit_report(rep, round_dir, run_dir);
    }
    run.timings.push_back(timing);
    if (!run_dir.empty()) write_timings(run_dir + "/timings.csv", run.timings);
  }
  return run;
}

BaselineRun run_baseline(BaseModel& m, std::span<const EncodedRecord> records,
                         const UnlearnTask& task, const TrainConfig& cfg,
                         const Evaluator* evaluator,
                         const std::string& run_dir) {
  validate_config(cfg);
  validate_task(task, records);

  if (!run_dir.empty()) {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    write_file(run_dir + "/config.json",
               config_json(cfg, false, 0).dump(2) + "\n");
  }

  // Answer-span cross-entropy on both sides; no entropy machinery.
  auto record_ce = [&](int idx) {
    const EncodedRecord& r = records[static_cast<size_t>(idx)];
    const Tensor logits = m.forward_logits(r.inputs);
    size_t n = 0;
    for (uint8_t f : r.target_is_answer) n += f ? 1 : 0;
    return std::make_pair(
        numkit::smul(numkit::cross_entropy(logits, r.targets,
                                           r.target_is_answer),
                     static_cast<double>(n)),
        n);
  };
  auto side_ce = [&](std::span<const int> idx) {
    Tensor acc;
    size_t total = 0;
    for (int i : idx) {
      auto [t, n] = record_ce(i);
      if (n == 0) continue;
      acc = (total == 0) ? t : numkit::add(acc, t);
      total += n;
    }
    if (total == 0) {
      throw ContractError("run_baseline: batch has no answer tokens");
    }
    return numkit::smul(acc, 1.0 / static_cast<double>(total));
  };

  std::vector<Tensor> params;
  for (auto& [name, t] : m.named_params()) params.push_back(t);

  BaselineRun run;
  AdamPool opt;  // one trajectory across rounds
  const auto t0 = std::chrono::steady_clock::now();
  double train_clock = 0.0;
  std::vector<int> active_forget;
  bool halted = false;
  for (size_t k = 0; k < task.rounds.size(); ++k) {
    for (int d : task.rounds[k]) {
      const auto& add = task.forget[static_cast<size_t>(d)];
      active_forget.insert(active_forget.end(), add.begin(), add.end());
    }
    const auto tr = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < cfg.epochs && !halted; ++epoch) {
      const std::string tag =
          "baseline.round." + std::to_string(k) + ".epoch." +
          std::to_string(epoch);
      std::vector<int> forder(active_forget);
      Rng(seed_for(cfg.seed, tag + ".forget")).shuffle(forder);
      std::vector<int> rorder(task.retain);
      Rng(seed_for(cfg.seed, tag + ".retain")).shuffle(rorder);
      size_t rpos = 0;
      for (size_t at = 0; at < forder.size() && !halted;
           at += static_cast<size_t>(cfg.batch)) {
        const size_t end =
            std::min(forder.size(), at + static_cast<size_t>(cfg.batch));
        std::vector<int> rbatch;
        for (int j = 0; j < cfg.batch; ++j) {
          rbatch.push_back(rorder[rpos]);
          rpos = (rpos + 1) % rorder.size();
        }
        // Ascending the forget loss can blow the weights up; every numeric
        // op throws on non-finite values, so a diverged step surfaces here.
        // Halt the round on the last finite parameters.
        try {
          const Tensor ce_f =
              side_ce(std::span<const int>(forder.data() + at, end - at));
          const Tensor ce_r = side_ce(rbatch);
          const Tensor loss = numkit::add(numkit::smul(ce_f, -cfg.beta),
                                          numkit::smul(ce_r, cfg.gamma));
          if (!std::isfinite(loss.item())) {
            std::cerr << "run_baseline: loss went non-finite, halting round "
                      << (k + 1) << "\n";
            halted = true;
            break;
          }
          const numkit::GradMap grads = numkit::grad(loss, params);
          std::vector<Tensor> gs;
          gs.reserve(params.size());
          for (const Tensor& p : params) {
            gs.push_back(numkit::grad_of(grads, p));
          }
          std::vector<Tensor> snap;
          snap.reserve(params.size());
          for (const Tensor& p : params) snap.push_back(p.clone_leaf());
          for (size_t p = 0; p < params.size(); ++p) {
            opt.step(params[p], gs[p], cfg.eta_b);
          }
          bool finite = true;
          for (const Tensor& p : params) {
            for (double v : p.data()) {
              if (!std::isfinite(v)) {
                finite = false;
                break;
              }
            }
            if (!finite) break;
          }
          if (!finite) {
            for (size_t p = 0; p < params.size(); ++p) {
              params[p].set_data(snap[p].data());
            }
            std::cerr << "run_baseline: step overflowed, halting round "
                      << (k + 1) << "\n";
            halted = true;
            break;
          }
        } catch (const NumericError&) {
          std::cerr << "run_baseline: non-finite step, halting round "
                    << (k + 1) << "\n";
          halted = true;
          break;
        }
      }
    }
    const double stage2_s = seconds_since(tr);
    train_clock += stage2_s;

    RoundTiming timing;
    timing.round = static_cast<int>(k) + 1;
    timing.stage2_s = stage2_s;
    const std::string round_dir =
        run_dir.empty() ? std::string()
                        : run_dir + "/round_" + std::to_string(k + 1);
    if (evaluator) {
      const auto te = std::chrono::steady_clock::now();
      try {
        const EvalReport rep = evaluator->run(
            m, nullptr, static_cast<int>(k) + 1, active_forget, train_clock);
        run.reports.push_back(rep);
        if (!run_dir.empty()) emit_report(rep, round_dir, run_dir);
      } catch (const NumericError&) {
        std::cerr << "run_baseline: diverged weights defeat evaluation of"
                     " round " << (k + 1) << "\n";
      }
      timing.eval_s = seconds_since(te);
    }
    run.timings.push_back(timing);
    if (!run_dir.empty()) write_timings(run_dir + "/timings.csv", run.timings);
  }
  (void)t0;
  return run;
}

}  // namespace alter
