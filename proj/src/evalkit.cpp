// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "alter/errors.hpp"
#include "json.hpp"

namespace alter {

namespace fs = std::filesystem;
using nlohmann::json;

double kolmogorov_sf(double t) {
  if (!(t == t)) throw NumericError("kolmogorov_sf: t is NaN");
  if (t < 1e-9) return 1.0;
  constexpr int kMaxTerms = 100;
  constexpr double kTol = 1e-12;
  double p;
  if (t < 1.18) {
    // Theta-function form of the CDF; converges fast for small t.
    const double f = M_PI * M_PI / (8.0 * t * t);
    double cdf = 0.0;
    for (int k = 1; k <= kMaxTerms; ++k) {
      const double odd = 2.0 * k - 1.0;
      const double term = std::exp(-odd * odd * f);
      cdf += term;
      if (term < kTol) break;
    }
    cdf *= std::sqrt(2.0 * M_PI) / t;
    p = 1.0 - cdf;
  } else {
    // Alternating tail series; converges fast for large t.
    double sum = 0.0;
    for (int k = 1; k <= kMaxTerms; ++k) {
      const double term = std::exp(-2.0 * k * k * t * t);
      sum += (k % 2 == 1) ? term : -term;
      if (term < kTol) break;
    }
    p = 2.0 * sum;
  }
  return std::clamp(p, 0.0, 1.0);
}

std::pair<double, double> ks_two_sample(std::vector<double> a,
                                        std::vector<double> b) {
  if (a.empty() || b.empty()) {
    throw ContractError("ks_two_sample: both samples must be non-empty");
  }
  for (double v : a) {
    if (!(v == v)) throw NumericError("ks_two_sample: NaN in first sample");
  }
  for (double v : b) {
    if (!(v == v)) throw NumericError("ks_two_sample: NaN in second sample");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const size_t na = a.size(), nb = b.size();
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < na && j < nb) {
    const double x = std::min(a[i], b[j]);
    while (i < na && a[i] == x) ++i;
    while (j < nb && b[j] == x) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(na);
    const double fb = static_cast<double>(j) / static_cast<double>(nb);
    d = std::max(d, std::abs(fa - fb));
  }
  if (d == 0.0) return {0.0, 1.0};
  const double ne =
      static_cast<double>(na) * static_cast<double>(nb) / (double(na) + nb);
  return {d, kolmogorov_sf(std::sqrt(ne) * d)};
}

std::pair<double, double> forget_quality(
    const BaseModel& unlearned, const AdapterHook* hook,
    const BaseModel& retain_model,
    std::span<const EncodedRecord> forget_set, int jobs) {
  const std::vector<double> nll_u =
      answer_nll(unlearned, forget_set, hook, jobs);
  const std::vector<double> nll_r =
      answer_nll(retain_model, forget_set, nullptr, jobs);
  return ks_two_sample(nll_u, nll_r);
}

double utility_accuracy(const BaseModel& m,
                        const AdapterHook* hook,
                        std::span<const EncodedRecord> qa_set,
                        int jobs) {
  if (qa_set.empty()) return 0.0;
  return content_accuracy(m, qa_set, hook, jobs);
}

double fluency_proxy(const BaseModel& m, const AdapterHook* hook,
                     std::span<const EncodedRecord> holdout,
                     int jobs) {
  if (holdout.empty()) return 0.0;
  const std::vector<double> per_record =
      answer_nll(m, holdout, hook, jobs);
  double total = 0.0;
  double tokens = 0.0;
  for (size_t r = 0; r < holdout.size(); ++r) {
    double n = 0.0;
    for (uint8_t f : holdout[r].target_is_answer) n += f ? 1.0 : 0.0;
    total += per_record[r] * n;
    tokens += n;
  }
  if (tokens == 0.0) return 0.0;
  return std::exp(total / tokens);
}

EvalReport Evaluator::run(const BaseModel& m,
                          const AdapterHook* hook, int round,
                          std::span<const int> active_forget_idx,
                          double wall_clock_s) const {
  if (!base || !retain_model || !records || !profiles) {
    throw ContractError("Evaluator: base, retain_model, records and profiles must all be set");
  }
  auto gather = [&](std::span<const int> idx) {
    std::vector<EncodedRecord> out;
    out.reserve(idx.size());
    for (int i : idx) {
      if (i < 0 || static_cast<size_t>(i) >= records->size()) {
        throw ContractError("Evaluator: record index out of range");
      }
      out.push_back((*records)[static_cast<size_t>(i)]);
    }
    return out;
  };
  const std::vector<EncodedRecord> forget = gather(active_forget_idx);
  const std::vector<EncodedRecord> retain = gather(retain_idx);

  EvalReport rep;
  rep.round = round;
  rep.wall_clock_s = wall_clock_s;
  std::tie(rep.forget_ks_stat, rep.forget_ks_p) =
      forget_quality(m, hook, *retain_model, forget, jobs);
  rep.forget_acc = utility_accuracy(m, hook, forget, jobs);
  rep.retain_acc = utility_accuracy(m, hook, retain, jobs);
  rep.utility_holdout_acc = utility_accuracy(m, hook, holdout, jobs);
  rep.fluency_ppl = fluency_proxy(m, hook, fluency_set, jobs);
  const ForwardLogitsFn fwd = [&](std::span<const int> ids) {
    return m.forward_logits(ids, hook);
  };
  const ConservationStats cons =
      conservation_stats(*profiles, *records, fwd, entropy);
  rep.high_retained = cons.high_retained;
  rep.low_retained = cons.low_retained;
  return rep;
}

namespace {

json report_to_json(const EvalReport& r) {
  json j;
  j["round"] = r.round;
  j["forget_ks_stat"] = r.forget_ks_stat;
  j["forget_ks_p"] = r.forget_ks_p;
  j["forget_acc"] = r.forget_acc;
  j["retain_acc"] = r.retain_acc;
  j["utility_holdout_acc"] = r.utility_holdout_acc;
  j["high_retained"] = r.high_retained;
  j["low_retained"] = r.low_retained;
  j["fluency_ppl"] = r.fluency_ppl;
  j["wall_clock_s"] = r.wall_clock_s;
  return j;
}

constexpr const char* kMetricsHeader =
    "round,forget_ks_stat,forget_ks_p,forget_acc,retain_acc,"
    "utility_holdout_acc,high_retained,low_retained,fluency_ppl,wall_clock_s";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// All metrics.csv rows parsed back as raw doubles, one vector per row.
std::vector<std::vector<double>> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != 10) {
      throw IoError(path + ": malformed row: " + line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << body;
  if (!out) throw IoError("short write to " + path);
}

}  // namespace

void emit_report(const EvalReport& r, const std::string& round_dir,
                 const std::string& run_root) {
  std::error_code ec;
  fs::create_directories(round_dir, ec);
  fs::create_directories(run_root, ec);

  write_text(round_dir + "/report.json", report_to_json(r).dump(2) + "\n");

  const std::string csv_path = run_root + "/metrics.csv";
  const bool fresh = !fs::exists(csv_path);
  {
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw IoError("cannot write " + csv_path);
    if (fresh) csv << kMetricsHeader << "\n";
    csv << r.round << ',' << fmt(r.forget_ks_stat) << ','
        << fmt(r.forget_ks_p) << ',' << fmt(r.forget_acc) << ','
        << fmt(r.retain_acc) << ',' << fmt(r.utility_holdout_acc) << ','
        << fmt(r.high_retained) << ',' << fmt(r.low_retained) << ','
        << fmt(r.fluency_ppl) << ',' << fmt(r.wall_clock_s) << "\n";
    if (!csv) throw IoError("short write to " + csv_path);
  }

  // Plot data mirrors the sequential-utility and time-vs-forgetting views;
  // rebuilt from the csv so repeated emits stay consistent.
  const auto rows = read_metrics(csv_path);
  std::string util = "round,retain_acc,utility_holdout_acc\n";
  std::string timep = "time_s,forget_ks_p\n";
  for (const auto& row : rows) {
    util += fmt(row[0]) + "," + fmt(row[4]) + "," + fmt(row[5]) + "\n";
    timep += fmt(row[9]) + "," + fmt(row[2]) + "\n";
  }
  write_text(run_root + "/plot_round_utility.csv", util);
  write_text(run_root + "/plot_time_forget.csv", timep);
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ContractError(path + ": invalid report json: " + e.what());
  }
  EvalReport r;
  try {
    r.round = j.at("round").get<int>();
    r.forget_ks_stat = j.at("forget_ks_stat").get<double>();
    r.forget_ks_p = j.at("forget_ks_p").get<double>();
    r.forget_acc = j.at("forget_acc").get<double>();
    r.retain_acc = j.at("retain_acc").get<double>();
    r.utility_holdout_acc = j.at("utility_holdout_acc").get<double>();
    r.high_retained = j.at("high_retained").get<double>();
    r.low_retained = j.at("low_retained").get<double>();
    r.fluency_ppl = j.at("fluency_ppl").get<double>();
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
  } catch (const json::exception& e) {
    throw ContractError(path + ": missing report field: " + e.what());
  }
  return r;
}

}  // namespace alter
