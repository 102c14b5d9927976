// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alter/numkit.hpp"
#include "alter/tokenizer.hpp"

namespace alter {

class BaseModel;

// One synthetic QA fact. Forget records carry subdomain 1..N, retention
// records carry 0 (serialized as "retain").
struct QaRecord {
  std::string id;
  int subdomain = 0;  // 0 == retain
  std::string question;
  std::string answer;
  bool forget = false;
};

struct CorpusSpec {
  int n_subdomains = 3;
  int entities_per_subdomain = 20;
  int retain_entities = 40;
  int holdout_per_entity = 1;  // extra unseen-frame retain records
  uint64_t seed = 0;
};

struct Corpus {
  std::vector<QaRecord> train;
  std::vector<QaRecord> holdout;
};

// Deterministic generator. Every answer frame carries two connective tokens
// drawn from a pool shared across all subdomains, plus exactly one entity
// token and one attribute token unique to their subdomain. Questions are
// phrased three ways per entity (one forward, two reverse lookups) so the
// connective choice stays unpredictable even once the facts are memorized.
Corpus generate(const CorpusSpec& spec);

// Token-class helpers for the generator's fixed vocabulary.
bool is_connective(const std::string& token);
bool is_frame_word(const std::string& token);

void save_jsonl(const std::vector<QaRecord>& records, const std::string& path);
std::vector<QaRecord> load_jsonl(const std::string& path);

// All question+answer texts, for vocabulary construction.
std::vector<std::string> all_texts(const Corpus& corpus);

/// A record prepared for next-token training: inputs[t] predicts targets[t].
struct EncodedRecord {
  std::string id;
  int subdomain = 0;
  bool forget = false;
  std::vector<int> inputs;               // bos q a
  std::vector<int> targets;              // q a eos
  std::vector<uint8_t> target_is_answer;   // answer tokens proper
  std::vector<uint8_t> target_is_content;  // entity/attribute tokens only
  std::vector<uint8_t> target_in_train;    // answer tokens plus the eos
};

EncodedRecord encode_record(const Tokenizer& tk, const QaRecord& r);
std::vector<EncodedRecord> encode_all(const Tokenizer& tk,
                                      std::span<const QaRecord> records);

// Mean final-layer hidden state over low-entropy answer positions of the
// given records; the seed direction for one expert's B matrix.
numkit::Tensor subdomain_centroid(const BaseModel& model, const Tokenizer& tk,
                                  std::span<const QaRecord> records,
                                  double shannon_threshold);

}  // namespace alter
