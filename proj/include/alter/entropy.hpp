// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alter/corpus.hpp"
#include "alter/numkit.hpp"

namespace alter {

class BaseModel;

struct EntropyConfig {
  double q_a = 0.5;                // deformation on the shared-matrix path
  double q_b = 2.0;                // deformation on the expert paths
  double shannon_threshold = 2.0;  // nats; above this a token is High
  double route_threshold = 1.2;    // S_q units for the inference gate
};

// Both entropies take an explicit probability row (sums to 1 within 1e-9,
// entries non-negative) and use natural logarithms. 0·log 0 counts as 0.
double shannon_entropy(std::span<const double> p);
// (1 - sum p^q) / (q - 1); falls back to Shannon when |q-1| <= 1e-8.
double tsallis_entropy(std::span<const double> p, double q);

// Differentiable Tsallis entropy of each logits row, computed as
// p^q = exp(q · log_softmax) so empty probabilities never reach 0^(q-1).
// Returns an m x 1 tensor; safe to differentiate twice.
numkit::Tensor tsallis_rows(const numkit::Tensor& logits, double q);

struct TokenProfile {
  int64_t t = 0;       // global position index across the corpus
  int token_id = 0;    // the token being predicted at this position
  double shannon = 0;  // nats
  double sq_a = 0;     // Tsallis at q_a
  double sq_b = 0;     // Tsallis at q_b
  bool high = false;
  // provenance for joining against records during training
  int record_index = -1;
  int record_pos = -1;  // target index within the record
};

// One profile per target position of every record, from the frozen base
// model's output distributions.
std::vector<TokenProfile> profile_corpus(const BaseModel& model,
                                         std::span<const EncodedRecord> records,
                                         const EntropyConfig& cfg);

void save_profiles(const std::vector<TokenProfile>& profiles,
                   const EntropyConfig& cfg, const std::string& path);
// Reattaches record provenance by position order, validating token ids.
std::vector<TokenProfile> load_profiles(const std::string& path,
                                        const EntropyConfig& cfg,
                                        std::span<const EncodedRecord> records);

struct ConservationStats {
  double high_retained = 0;  // High tokens still above the threshold
  double low_retained = 0;   // Low tokens still below it
};

// Re-scores every profiled position under an adapted forward pass and
// reports how many stayed on their side of the Shannon threshold.
using ForwardLogitsFn =
    std::function<numkit::Tensor(std::span<const int> inputs)>;
ConservationStats conservation_stats(const std::vector<TokenProfile>& before,
                                     std::span<const EncodedRecord> records,
                                     const ForwardLogitsFn& adapted_forward,
                                     const EntropyConfig& cfg);

}  // namespace alter
