// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Unlearning losses (inverted hinge, retention, structural invariance, and
// the gradient-difference baseline), strict per-group gradient isolation,
// the two-stage adapter pipeline, and sequential rounds over an expanding
// forget set.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "alter/adapters.hpp"
#include "alter/corpus.hpp"
#include "alter/entropy.hpp"
#include "alter/evalkit.hpp"
#include "alter/model.hpp"
#include "alter/numkit.hpp"
#include "alter/rng.hpp"

namespace alter {

struct TrainConfig {
  double beta = 1.0;     // forgetting-term weight
  double gamma = 1.0;    // retention-term weight
  double lambda = 0.01;  // structural-invariance weight
  double eta_a = 1e-5;   // learning rate of the shared A matrix
  double eta_b = 1e-3;   // learning rate of B experts, omega and the gate
  int batch = 4;
  int epochs = 3;  // used by stage one and by each sequential round
  int rank = 8;
  EntropyConfig entropy{};
  uint64_t seed = 0;
  // Plumbing outside the method definition proper.
  std::string injection_point = "blocks.1.attn.wo";
  int structural_cap = 16;  // high-entropy positions sampled per step
};

// beta, gamma, lambda >= 0; learning rates > 0; batch/rank >= 1;
// epochs >= 0; structural_cap >= 1; injection point non-empty.
void validate_config(const TrainConfig& cfg);

// Index view over one fixed corpus: which records to forget (grouped by
// subdomain), which to retain, and which subdomains each sequential round
// adds. Forget and retain sets are disjoint by construction of the ids.
struct UnlearnTask {
  std::vector<std::vector<int>> forget;  // [expert] -> records of subdomain expert+1
  std::vector<int> retain;
  std::vector<std::vector<int>> rounds;  // [round] -> subdomains added
};

// Partitions `records` by their labels into an n-round task that unlocks
// one subdomain per round (round count capped at the subdomain count).
UnlearnTask build_task(std::span<const EncodedRecord> records,
                       int n_subdomains, int rounds);

// Index ranges, label consistency, id disjointness, round validity.
void validate_task(const UnlearnTask& task,
                   std::span<const EncodedRecord> records);

// Position-addressed view of a flat profile list. Profiles must cover every
// target position of every record, in record order.
class ProfileIndex {
 public:
  ProfileIndex(const std::vector<TokenProfile>& profiles,
               std::span<const EncodedRecord> records);
  const TokenProfile& at(int record, int pos) const;
  size_t size() const { return profiles_->size(); }

 private:
  const std::vector<TokenProfile>* profiles_;
  std::vector<size_t> offset_;
};

// Inverted hinge loss: mean over unmasked rows of
//   1 + p(target) - max over non-target tokens of p,
// with p the softmax of the logits row. Pushing the target down and the
// runner-up token up both lower it; range [0, 2]. Ties in the max follow
// the lowest index. An all-zero mask is a contract error.
numkit::Tensor loss_ihl(const numkit::Tensor& logits,
                        const std::vector<int>& targets,
                        const std::vector<uint8_t>& mask);

// Retention term: plain masked cross-entropy, delegated unchanged.
numkit::Tensor loss_retain(const numkit::Tensor& logits,
                           const std::vector<int>& targets,
                           const std::vector<uint8_t>& mask);

// Structural-invariance penalty at the given (record, position) pairs:
//   mean of || d S_q(position) / d A ||^2,
// where S_q is the deformed entropy of the adapted model's next-token
// distribution and A is the shared adapter matrix; every other parameter
// is held constant. Returns the penalty value and its gradient with
// respect to A (computed by differentiating through the inner backward
// pass). The fast path rebuilds only the forward tail behind the last
// attention projection and requires the set to inject there; the generic
// path re-runs the whole model per position. An empty batch returns a zero
// value and gradient with a warning on stderr.
std::pair<double, numkit::Tensor> loss_structural(
    const BaseModel& m, const AsymAdapterSet& set,
    std::span<const EncodedRecord> records,
    std::span<const std::pair<int, int>> positions, double q,
    bool fast_path = true);

// Gradient-difference baseline: beta * (-cross_entropy on the forget rows)
// + gamma * (cross_entropy on the retain rows).
numkit::Tensor loss_baseline_graddiff(const numkit::Tensor& logits_f,
                                      const std::vector<int>& targets_f,
                                      const std::vector<uint8_t>& mask_f,
                                      const numkit::Tensor& logits_r,
                                      const std::vector<int>& targets_r,
                                      const std::vector<uint8_t>& mask_r,
                                      double beta, double gamma);

struct StageStats {
  int steps = 0;
  double high_ppl_start = 0.0;  // perplexity on high-entropy positions
  double high_ppl_end = 0.0;
};

// Stage one: descends masked cross-entropy restricted to high-entropy
// positions of the given records, updating only the shared A matrix (Adam
// at eta_a) and, when train_gate is set, the gate weights (Adam at eta_b);
// the gate sits in the forward composition so it receives gradients. Every
// B matrix and omega stays bit-identical. epochs == 0 leaves the set
// untouched and only measures perplexity.
StageStats stage1(const BaseModel& m, AsymAdapterSet& set,
                  std::span<const EncodedRecord> records,
                  std::span<const int> train_idx, const ProfileIndex& prof,
                  const TrainConfig& cfg, bool train_gate = true);

struct StepStats {
  int ihl_rows = 0;
  int retain_rows = 0;
  int structural_rows = 0;
  double ihl = 0.0;        // weighted term values as stepped
  double retain = 0.0;
  double structural = 0.0;
};

// Adam with state held per parameter tensor. A tensor's moments advance
// only when that tensor is stepped, so parameters outside a step's
// recipient group keep their bits. Step magnitudes are bounded by the
// learning rate regardless of raw gradient scale, which is what lets the
// pinned rates move adapters from their tiny initialization within the
// epoch budget.
class AdamPool {
 public:
  void step(numkit::Tensor& param, const numkit::Tensor& grad, double lr);

 private:
  struct Slot {
    std::vector<double> m, v;
    long t = 0;
  };
  std::unordered_map<const void*, Slot> slots_;
};

// One isolated optimization step over a mixed batch of record indices:
//   - each forget subdomain's low-entropy answer rows drive the inverted
//     hinge term into that subdomain's expert and omega only (eta_b);
//   - retain records' low-entropy answer rows drive the retention term
//     into the retention expert only (eta_b);
//   - sampled high-entropy positions drive the structural penalty into the
//     shared A only (eta_a scaled by lambda).
// Updates are Adam steps drawn from `opt`, which carries the moments
// between calls. Parameter groups outside a term's recipients are
// bit-identical after the step, as is the base model. Forget records with
// no subdomain label are a contract error. sample_rng draws the
// structural subsample.
StepStats stage2_step(const BaseModel& m, AsymAdapterSet& set, AdamPool& opt,
                      std::span<const int> batch,
                      std::span<const EncodedRecord> records,
                      const ProfileIndex& prof, const TrainConfig& cfg,
                      Rng& sample_rng);

struct RoundTiming {
  int round = 0;
  double stage1_s = 0.0;  // nonzero only on the first round
  double stage2_s = 0.0;
  double eval_s = 0.0;
};

struct UnlearnRun {
  AsymAdapterSet adapters;
  std::vector<EvalReport> reports;
  std::vector<RoundTiming> timings;
};

// The full pipeline: seeds the adapter set from subdomain centroids, runs
// stage one once, then per round unlocks the task's next subdomains and
// runs `epochs` of stage-two steps over the active forget set plus the
// retain set, evaluating after each round. Deterministic for a fixed seed
// up to wall-clock fields. single_lora collapses every forget subdomain
// into one expert and skips gate training. When run_dir is non-empty the
// run writes config.json, round_<k>/adapters.ckpt, round_<k>/report.json,
// metrics.csv, plot data and timings.csv beneath it. `evaluator` may be
// null to skip scoring (reports then stay empty).
UnlearnRun run_unlearn(const BaseModel& m, const Tokenizer& tk,
                       std::span<const QaRecord> raw_records,
                       std::span<const EncodedRecord> records,
                       const std::vector<TokenProfile>& profiles,
                       const UnlearnTask& task, const TrainConfig& cfg,
                       const Evaluator* evaluator, const std::string& run_dir,
                       bool single_lora = false);

struct BaselineRun {
  std::vector<EvalReport> reports;
  std::vector<RoundTiming> timings;
};

// Gradient-difference baseline over the same rounds: full-model Adam (at
// eta_b) ascending cross-entropy on forget answers while descending it on
// retain answers, one retain batch paired with each forget batch. Training
// halts for the round if a step would go non-finite, keeping the last
// finite parameters. The model is trained in place; pass a copy.
BaselineRun run_baseline(BaseModel& m,
                         std::span<const EncodedRecord> records,
                         const UnlearnTask& task, const TrainConfig& cfg,
                         const Evaluator* evaluator,
                         const std::string& run_dir);

}  // namespace alter
