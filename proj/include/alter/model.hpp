// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alter/corpus.hpp"
#include "alter/numkit.hpp"
#include "alter/tokenizer.hpp"

namespace alter {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_blocks = 2;
  int mlp_width = 256;
  int ctx_len = 64;
  int vocab = 256;
  double norm_eps = 1e-6;
};

// Every linear projection is a named injection point; a hook may return a
// tensor to add to that projection's output (the low-rank delta), or an
// empty tensor to leave it alone. The hook receives the projection's input.
using AdapterHook =
    std::function<numkit::Tensor(std::string_view point, const numkit::Tensor& x)>;

// Names: blocks.<i>.attn.{wq,wk,wv,wo}, blocks.<i>.mlp.{up,down}
std::vector<std::string> injection_point_names(const ModelConfig& cfg);

// Pieces captured around the last block's attention output projection,
// enough to rebuild the rest of the forward pass for one position without
// re-running the whole model.
struct WoTap {
  numkit::Tensor attn_concat;  // T x d, input to the projection
  numkit::Tensor base_out;     // T x d, projection output before any delta
  numkit::Tensor resid_in;     // T x d, residual stream entering the add
};

class BaseModel {
 public:
  BaseModel(ModelConfig cfg, uint64_t seed);
  BaseModel(ModelConfig cfg,
            std::vector<std::pair<std::string, numkit::Tensor>> params);

  const ModelConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, numkit::Tensor>>& named_params() {
    return params_;
  }
  const std::vector<std::pair<std::string, numkit::Tensor>>& named_params()
      const {
    return params_;
  }
  const numkit::Tensor& param(const std::string& name) const;
  size_t param_count() const;

  void set_trainable(bool on);

  struct States {
    numkit::Tensor hidden;  // T x d, after the final norm
    numkit::Tensor logits;  // T x V
  };
  States forward_states(std::span<const int> ids, const AdapterHook* hook,
                        WoTap* tap = nullptr) const;
  numkit::Tensor forward_logits(std::span<const int> ids,
                                const AdapterHook* hook = nullptr) const;

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, numkit::Tensor>> params_;
};

// Tanh-approximated gaussian error linear unit, recorded for autodiff.
numkit::Tensor gelu(const numkit::Tensor& x);
numkit::Tensor rmsnorm(const numkit::Tensor& x, const numkit::Tensor& gain,
                       double eps);

struct BaseTrainStats {
  int epochs_run = 0;
  double content_accuracy = 0.0;
};

// Adam over all model parameters, one record per step, loss on answer+eos
// positions. Stops early once teacher-forced content accuracy over the
// training set reaches `gate`. Throws TrainingError with the step index if
// the loss goes non-finite.
BaseTrainStats train_base(BaseModel& model,
                          std::span<const EncodedRecord> records, int epochs,
                          double lr, uint64_t seed, double gate = 0.90);

// Fraction of records whose every content position is predicted exactly
// (argmax, teacher forcing). Records without content positions count 0.
// jobs > 1 evaluates records in parallel with deterministic aggregation.
double content_accuracy(const BaseModel& model,
                        std::span<const EncodedRecord> records,
                        const AdapterHook* hook = nullptr, int jobs = 1);

// Per-record mean negative log-likelihood over answer tokens.
std::vector<double> answer_nll(const BaseModel& model,
                               std::span<const EncodedRecord> records,
                               const AdapterHook* hook = nullptr,
                               int jobs = 1);

}  // namespace alter
