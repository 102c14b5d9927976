// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forget-quality statistics (two-sample KS), utility and fluency metrics,
// entropy-conservation reporting, and per-round report files.

#include <string>
#include <utility>
#include <vector>

#include "alter/corpus.hpp"
#include "alter/entropy.hpp"
#include "alter/model.hpp"

namespace alter {

// One evaluation round, serialized field-for-field into report.json and as
// one row of metrics.csv.
struct EvalReport {
  int round = 0;
  double forget_ks_stat = 0.0;
  double forget_ks_p = 1.0;
  double forget_acc = 0.0;
  double retain_acc = 0.0;
  double utility_holdout_acc = 0.0;
  double high_retained = 1.0;
  double low_retained = 1.0;
  double fluency_ppl = 0.0;
  double wall_clock_s = 0.0;
};

// Two-sample Kolmogorov-Smirnov test. D is the exact supremum distance
// between the two empirical CDFs (tie-safe). The p-value comes from the
// asymptotic Kolmogorov distribution evaluated at sqrt(ne) * D with
// effective sample size ne = na*nb/(na+nb); the series is summed to 100
// terms and is good to about 1e-6. D == 0 maps to p == 1 exactly.
// Empty samples are a contract error. Symmetric in its arguments.
std::pair<double, double> ks_two_sample(std::vector<double> a,
                                        std::vector<double> b);

// Survival function of the Kolmogorov distribution, P(K > t). Exposed for
// direct inspection; ks_two_sample uses it.
double kolmogorov_sf(double t);

// KS test between the per-example mean answer-token NLL distributions of
// the unlearned model (base + adapter hook) and a retain-only retrained
// model on the forget set. Higher p means the unlearned model is harder to
// distinguish from one that never saw the data.
std::pair<double, double> forget_quality(
    const BaseModel& unlearned, const AdapterHook* hook,
    const BaseModel& retain_model,
    std::span<const EncodedRecord> forget_set, int jobs = 1);

// Exact-match accuracy on answer spans: a record counts 1 when every
// content position is predicted exactly under greedy (argmax) decoding
// with teacher forcing. Pure function of the inputs; batch-order free.
double utility_accuracy(const BaseModel& m,
                        const AdapterHook* hook,
                        std::span<const EncodedRecord> qa_set,
                        int jobs = 1);

// exp(mean answer-token NLL) over a structural holdout; lower reads as
// more fluent. A uniform-logit model scores exactly the vocabulary size.
double fluency_proxy(const BaseModel& m, const AdapterHook* hook,
                     std::span<const EncodedRecord> holdout,
                     int jobs = 1);

// Everything needed to score one adapter state against the fixed corpus.
// `records` / `profiles` are the profiled training corpus; the index lists
// select evaluation subsets from it.
struct Evaluator {
  const BaseModel* base = nullptr;
  const BaseModel* retain_model = nullptr;
  const std::vector<EncodedRecord>* records = nullptr;
  const std::vector<TokenProfile>* profiles = nullptr;
  std::vector<int> retain_idx;                    // retain training records
  std::vector<EncodedRecord> holdout;     // unseen-phrasing QA
  std::vector<EncodedRecord> fluency_set; // connective-rich holdout
  EntropyConfig entropy;
  int jobs = 1;

  // Scores `m` with `hook` (null for a plain model) on the active forget
  // subset; wall_clock_s is copied through to the report.
  EvalReport run(const BaseModel& m, const AdapterHook* hook,
                 int round, std::span<const int> active_forget_idx,
                 double wall_clock_s) const;
};

// Writes round_dir/report.json, appends one row to run_root/metrics.csv
// (creating it with its header when absent), and refreshes the plot-data
// files under run_root: plot_round_utility.csv (round vs utility) and
// plot_time_forget.csv (cumulative wall-clock vs forget p). Directories
// are created as needed; I/O failures surface as IoError.
void emit_report(const EvalReport& r, const std::string& round_dir,
                 const std::string& run_root);

// report.json round trip.
EvalReport load_report(const std::string& path);

}  // namespace alter
