// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/entropy.hpp"

#include <cmath>
#include <fstream>

#include "alter/errors.hpp"
#include "alter/model.hpp"
#include "json.hpp"

namespace alter {

namespace {

using nlohmann::json;

void check_distribution(std::span<const double> p) {
  if (p.empty()) throw ContractError("entropy: empty distribution");
  double s = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw ContractError("entropy: probabilities must be finite and >= 0");
    }
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw ContractError("entropy: distribution does not sum to 1");
  }
}

std::vector<double> prob_row(const numkit::Tensor& probs, int row) {
  std::vector<double> p(static_cast<size_t>(probs.cols()));
  for (int j = 0; j < probs.cols(); ++j) {
    p[static_cast<size_t>(j)] = probs.at(row, j);
  }
  return p;
}

}  // namespace

double shannon_entropy(std::span<const double> p) {
  check_distribution(p);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

double tsallis_entropy(std::span<const double> p, double q) {
  if (q <= 0.0) throw ContractError("tsallis: q must be positive");
  if (std::abs(q - 1.0) <= 1e-8) return shannon_entropy(p);
  check_distribution(p);
  double s = 0.0;
  for (double v : p) {
    if (v > 0.0) s += std::pow(v, q);
  }
  return std::max((1.0 - s) / (q - 1.0), 0.0);
}

numkit::Tensor tsallis_rows(const numkit::Tensor& logits, double q) {
  using namespace numkit;
  if (q <= 0.0) throw ContractError("tsallis: q must be positive");
  if (std::abs(q - 1.0) <= 1e-8) {
    // Shannon limit: -sum p log p with p log p = exp(logp) * logp
    Tensor logp = log_softmax_rows(logits);
    return smul(rowsum(mul(exp_t(logp), logp)), -1.0);
  }
  Tensor logp = log_softmax_rows(logits);
  Tensor pq = exp_t(smul(logp, q));
  return smul(add_const(smul(rowsum(pq), -1.0), 1.0), 1.0 / (q - 1.0));
}

std::vector<TokenProfile> profile_corpus(const BaseModel& model,
                                         std::span<const EncodedRecord> records,
                                         const EntropyConfig& cfg) {
  if (model.config().vocab <= 0) {
    throw ContractError("profile_corpus: model has no vocabulary");
  }
  numkit::NoGradGuard guard;
  std::vector<TokenProfile> out;
  int64_t global_t = 0;
  for (size_t ri = 0; ri < records.size(); ++ri) {
    const auto& rec = records[ri];
    for (int id : rec.inputs) {
      if (id < 0 || id >= model.config().vocab) {
        throw ContractError("profile_corpus: token id outside model vocabulary");
      }
    }
    numkit::Tensor logits = model.forward_logits(rec.inputs, nullptr);
    numkit::Tensor probs = numkit::softmax_rows(logits);
    for (size_t t = 0; t < rec.targets.size(); ++t) {
      std::vector<double> p = prob_row(probs, static_cast<int>(t));
      TokenProfile tp;
      tp.t = global_t++;
      tp.token_id = rec.targets[t];
      tp.shannon = shannon_entropy(p);
      tp.sq_a = tsallis_entropy(p, cfg.q_a);
      tp.sq_b = tsallis_entropy(p, cfg.q_b);
      tp.high = tp.shannon > cfg.shannon_threshold;
      tp.record_index = static_cast<int>(ri);
      tp.record_pos = static_cast<int>(t);
      out.push_back(tp);
    }
  }
  return out;
}

namespace {

std::string q_key(double q) {
  json v = q;
  return v.dump();
}

}  // namespace

void save_profiles(const std::vector<TokenProfile>& profiles,
                   const EntropyConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& tp : profiles) {
    json j;
    j["t"] = tp.t;
    j["token_id"] = tp.token_id;
    j["H"] = tp.shannon;
    j["Sq"] = json::object();
    j["Sq"][q_key(cfg.q_a)] = tp.sq_a;
    j["Sq"][q_key(cfg.q_b)] = tp.sq_b;
    j["class"] = tp.high ? "High" : "Low";
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

std::vector<TokenProfile> load_profiles(const std::string& path,
                                        const EntropyConfig& cfg,
                                        std::span<const EncodedRecord> records) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<TokenProfile> out;
  std::string line;
  int lineno = 0;
  // Profiles are written in corpus order, so provenance is reconstructed by
  // walking the records' target positions alongside the file.
  size_t ri = 0, pos = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ContractError(where + ": malformed json: " + e.what());
    }
    try {
      TokenProfile tp;
      tp.t = j.at("t").get<int64_t>();
      tp.token_id = j.at("token_id").get<int>();
      tp.shannon = j.at("H").get<double>();
      tp.sq_a = j.at("Sq").at(q_key(cfg.q_a)).get<double>();
      tp.sq_b = j.at("Sq").at(q_key(cfg.q_b)).get<double>();
      const std::string cls = j.at("class").get<std::string>();
      if (cls != "High" && cls != "Low") {
        throw ContractError(where + ": class must be High|Low");
      }
      tp.high = cls == "High";
      while (ri < records.size() && pos >= records[ri].targets.size()) {
        ++ri;
        pos = 0;
      }
      if (ri >= records.size()) {
        throw ContractError(where + ": more profiles than corpus positions");
      }
      if (records[ri].targets[pos] != tp.token_id) {
        throw ContractError(where + ": profile does not match corpus token");
      }
      tp.record_index = static_cast<int>(ri);
      tp.record_pos = static_cast<int>(pos);
      ++pos;
      out.push_back(tp);
    } catch (const json::exception& e) {
      throw ContractError(where + ": bad profile field: " + e.what());
    }
  }
  while (ri < records.size() && pos >= records[ri].targets.size()) {
    ++ri;
    pos = 0;
  }
  if (ri < records.size()) {
    throw ContractError(path + ": fewer profiles than corpus positions");
  }
  return out;
}

ConservationStats conservation_stats(const std::vector<TokenProfile>& before,
                                     std::span<const EncodedRecord> records,
                                     const ForwardLogitsFn& adapted_forward,
                                     const EntropyConfig& cfg) {
  numkit::NoGradGuard guard;
  // one adapted forward per record, then re-score each profiled position
  std::vector<numkit::Tensor> probs(records.size());
  std::vector<uint8_t> computed(records.size(), 0);
  size_t high_total = 0, high_kept = 0, low_total = 0, low_kept = 0;
  for (const auto& tp : before) {
    if (tp.record_index < 0 ||
        static_cast<size_t>(tp.record_index) >= records.size()) {
      throw ContractError("conservation_stats: profile points outside corpus");
    }
    const size_t ri = static_cast<size_t>(tp.record_index);
    if (!computed[ri]) {
      probs[ri] =
          numkit::softmax_rows(adapted_forward(records[ri].inputs));
      computed[ri] = 1;
    }
    std::vector<double> p = prob_row(probs[ri], tp.record_pos);
    const bool high_now = shannon_entropy(p) > cfg.shannon_threshold;
    if (tp.high) {
      ++high_total;
      if (high_now) ++high_kept;
    } else {
      ++low_total;
      if (!high_now) ++low_kept;
    }
  }
  ConservationStats s;
  s.high_retained =
      high_total == 0 ? 1.0
                      : static_cast<double>(high_kept) /
                            static_cast<double>(high_total);
  s.low_retained = low_total == 0 ? 1.0
                                  : static_cast<double>(low_kept) /
                                        static_cast<double>(low_total);
  return s;
}

}  // namespace alter
