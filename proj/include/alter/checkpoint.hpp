// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "alter/model.hpp"
#include "alter/numkit.hpp"
#include "alter/tokenizer.hpp"

namespace alter {

// Container format: a little-endian u32 header length, a JSON header naming
// the tensors in order with their shapes plus a free-form meta object, then
// the tensor payloads as raw little-endian float64 in header order.
// Serialization is fully deterministic, so save-load-save is byte identical.
struct Checkpoint {
  std::vector<std::pair<std::string, numkit::Tensor>> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Base model bundle: parameters plus the tokenizer table, config and seed
// needed to rebuild an identical model.
void save_model(const BaseModel& model, const Tokenizer& tk, uint64_t seed,
                const std::string& path);

struct LoadedModel {
  BaseModel model;
  Tokenizer tokenizer;
  uint64_t seed = 0;
};
LoadedModel load_model(const std::string& path);

}  // namespace alter
