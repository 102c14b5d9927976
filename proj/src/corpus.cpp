// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "alter/entropy.hpp"
#include "alter/errors.hpp"
#include "alter/model.hpp"
#include "alter/rng.hpp"
#include "json.hpp"

namespace alter {

namespace {

using nlohmann::json;

// Shared connective pool. Answer frames draw from it at random, so these
// stay unpredictable even once every fact is memorized; that is what keeps
// them on the high-entropy side of the split.
const std::vector<std::string>& connectives() {
  static const std::vector<std::string> kPool = {
      "indeed",    "notably",  "clearly",      "truly",    "surely",
      "plainly",   "frankly",  "kindly",       "briefly",  "thus",
      "hence",     "therefore", "accordingly", "moreover", "further",
      "likewise",  "meanwhile", "besides",     "anyway",   "still"};
  return kPool;
}

const std::set<std::string>& frame_words() {
  static const std::set<std::string> kFrames = {
      "state", "the",   "of",  "holds", "which", "bearer", "has",
      "whose", "is",    "marks", "sigil", "tonic", "lair",  "hue"};
  return kFrames;
}

constexpr int kMaxSubdomains = 3;

const std::vector<std::vector<std::string>>& entity_prefixes() {
  static const std::vector<std::vector<std::string>> kP = {
      {"vor", "kel", "mar", "tis", "zab", "nor"},
      {"bel", "dun", "fen", "gor", "pil", "sav"},
      {"hul", "jat", "kib", "lum", "ryn", "dov"},
      {"ned", "oru", "pem", "qui", "rav", "sul", "tam", "wex", "bly", "cro"}};
  return kP;
}

const std::vector<std::vector<std::string>>& attr_prefixes() {
  static const std::vector<std::vector<std::string>> kP = {
      {"ash", "bri", "cor", "dol", "gref", "yul"},
      {"erl", "fos", "gim", "hax", "vit", "zem"},
      {"ilk", "jor", "kren", "lod", "mub", "pax"},
      {"mox", "nir", "olm", "pra", "qel", "rud", "sev", "tol", "ung", "wis"}};
  return kP;
}

const std::vector<std::string> kEntitySuffixes = {"ael", "ith", "orn", "esk",
                                                  "uva"};
const std::vector<std::string> kAttrSuffixes = {"ium", "arn", "eth", "osk",
                                                "yle"};
const std::vector<std::string> kKinds = {"hue", "sigil", "tonic", "lair"};

// group: 0 = retain, 1..N = forget subdomains
std::string make_word(const std::vector<std::vector<std::string>>& prefixes,
                      const std::vector<std::string>& suffixes, int group,
                      int index) {
  const auto& pool =
      prefixes[group == 0 ? prefixes.size() - 1 : static_cast<size_t>(group - 1)];
  const size_t cap = pool.size() * suffixes.size();
  if (static_cast<size_t>(index) >= cap) {
    throw ContractError("corpus: entity pool exhausted for group " +
                        std::to_string(group));
  }
  return pool[index / suffixes.size()] + suffixes[index % suffixes.size()];
}

const std::string& kind_of(int group) {
  return kKinds[static_cast<size_t>(group)];
}

struct Draw {
  std::string c1, c2, c3, c4;
};

Draw draw_connectives(Rng& rng) {
  const auto& pool = connectives();
  auto pick = [&] { return pool[rng.next_below(pool.size())]; };
  return {pick(), pick(), pick(), pick()};
}

QaRecord make_record(int group, int tmpl, const Draw& c,
                     const std::string& entity, const std::string& attr,
                     const std::string& id) {
  const std::string& kind = kind_of(group);
  QaRecord r;
  r.id = id;
  r.subdomain = group;
  r.forget = group != 0;
  switch (tmpl) {
    case 0:
      r.question = c.c1 + " " + c.c2 + " state the " + kind + " of " + entity;
      r.answer = c.c3 + " " + entity + " holds " + attr + " " + c.c4;
      break;
    case 1:
      r.question =
          c.c1 + " " + c.c2 + " which bearer has the " + kind + " " + attr;
      r.answer = c.c3 + " " + attr + " marks " + entity + " " + c.c4;
      break;
    default:
      r.question = c.c1 + " " + c.c2 + " whose " + kind + " is " + attr;
      r.answer = c.c3 + " the " + kind + " of " + entity + " is " + attr +
                 " " + c.c4;
      break;
  }
  return r;
}

void check_vocabulary(const CorpusSpec& spec) {
  std::set<std::string> content;
  size_t expected = 0;
  auto insert_group = [&](int group, int count) {
    for (int i = 0; i < count; ++i) {
      content.insert(make_word(entity_prefixes(), kEntitySuffixes, group, i));
      content.insert(make_word(attr_prefixes(), kAttrSuffixes, group, i));
      expected += 2;
    }
  };
  for (int d = 1; d <= spec.n_subdomains; ++d) {
    insert_group(d, spec.entities_per_subdomain);
  }
  insert_group(0, spec.retain_entities);
  if (content.size() != expected) {
    throw ContractError("corpus: vocabulary collision among generated words");
  }
  for (const auto& w : content) {
    if (is_connective(w) || is_frame_word(w)) {
      throw ContractError("corpus: generated word collides with frame: " + w);
    }
  }
}

}  // namespace

bool is_connective(const std::string& token) {
  const auto& pool = connectives();
  return std::find(pool.begin(), pool.end(), token) != pool.end();
}

bool is_frame_word(const std::string& token) {
  return frame_words().count(token) > 0;
}

Corpus generate(const CorpusSpec& spec) {
  if (spec.n_subdomains < 1 || spec.n_subdomains > kMaxSubdomains) {
    throw ContractError("corpus: n_subdomains must be 1..3");
  }
  if (spec.entities_per_subdomain < 1 || spec.retain_entities < 1) {
    throw ContractError("corpus: entity counts must be positive");
  }
  check_vocabulary(spec);

  Rng rng(seed_for(spec.seed, "corpus"));
  Corpus out;
  for (int d = 1; d <= spec.n_subdomains; ++d) {
    for (int i = 0; i < spec.entities_per_subdomain; ++i) {
      const std::string e = make_word(entity_prefixes(), kEntitySuffixes, d, i);
      const std::string a = make_word(attr_prefixes(), kAttrSuffixes, d, i);
      for (int t = 0; t < 3; ++t) {
        const std::string id = "f" + std::to_string(d) + "-" +
                               std::to_string(i) + "-" + std::to_string(t);
        out.train.push_back(
            make_record(d, t, draw_connectives(rng), e, a, id));
      }
    }
  }
  for (int i = 0; i < spec.retain_entities; ++i) {
    const std::string e = make_word(entity_prefixes(), kEntitySuffixes, 0, i);
    const std::string a = make_word(attr_prefixes(), kAttrSuffixes, 0, i);
    for (int t = 0; t < 3; ++t) {
      const std::string id = "r-" + std::to_string(i) + "-" + std::to_string(t);
      out.train.push_back(
          make_record(0, t, draw_connectives(rng), e, a, id));
    }
  }
  for (int i = 0; i < spec.retain_entities; ++i) {
    const std::string e = make_word(entity_prefixes(), kEntitySuffixes, 0, i);
    const std::string a = make_word(attr_prefixes(), kAttrSuffixes, 0, i);
    for (int h = 0; h < spec.holdout_per_entity; ++h) {
      const std::string id = "h-" + std::to_string(i) + "-" + std::to_string(h);
      out.holdout.push_back(
          make_record(0, (i + h) % 3, draw_connectives(rng), e, a, id));
    }
  }
  return out;
}

void save_jsonl(const std::vector<QaRecord>& records, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    if (r.subdomain == 0) {
      j["subdomain"] = "retain";
    } else {
      j["subdomain"] = r.subdomain;
    }
    j["question"] = r.question;
    j["answer"] = r.answer;
    j["split"] = r.forget ? "forget" : "retain";
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

std::vector<QaRecord> load_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<QaRecord> out;
  std::string line;
  int lineno = 0;
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
    if (!j.is_object()) throw ContractError(where + ": record must be an object");
    for (const char* field : {"id", "subdomain", "question", "answer", "split"}) {
      if (!j.contains(field)) {
        throw ContractError(where + ": missing field \"" + field + "\"");
      }
    }
    if (j.size() != 5) {
      throw ContractError(where + ": unexpected extra fields");
    }
    QaRecord r;
    try {
      r.id = j["id"].get<std::string>();
      r.question = j["question"].get<std::string>();
      r.answer = j["answer"].get<std::string>();
      const std::string split = j["split"].get<std::string>();
      if (split != "forget" && split != "retain") {
        throw ContractError(where + ": split must be forget|retain");
      }
      r.forget = split == "forget";
      if (j["subdomain"].is_string()) {
        if (j["subdomain"].get<std::string>() != "retain") {
          throw ContractError(where + ": non-retain subdomain must be numeric");
        }
        r.subdomain = 0;
      } else if (j["subdomain"].is_number_integer()) {
        r.subdomain = j["subdomain"].get<int>();
        if (r.subdomain < 1) {
          throw ContractError(where + ": numeric subdomain must be >= 1");
        }
      } else {
        throw ContractError(where + ": bad subdomain type");
      }
    } catch (const json::exception& e) {
      throw ContractError(where + ": bad field type: " + e.what());
    }
    if (r.forget != (r.subdomain != 0)) {
      throw ContractError(where + ": split and subdomain disagree");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> all_texts(const Corpus& corpus) {
  std::vector<std::string> texts;
  for (const auto* set : {&corpus.train, &corpus.holdout}) {
    for (const auto& r : *set) {
      texts.push_back(r.question);
      texts.push_back(r.answer);
    }
  }
  return texts;
}

EncodedRecord encode_record(const Tokenizer& tk, const QaRecord& r) {
  const std::vector<int> q = tk.encode(r.question);
  const std::vector<int> a = tk.encode(r.answer);
  if (q.empty() || a.empty()) {
    throw ContractError("record " + r.id + ": empty question or answer");
  }
  std::vector<int> seq;
  seq.reserve(q.size() + a.size() + 2);
  seq.push_back(Tokenizer::kBos);
  seq.insert(seq.end(), q.begin(), q.end());
  seq.insert(seq.end(), a.begin(), a.end());
  seq.push_back(Tokenizer::kEos);

  EncodedRecord e;
  e.id = r.id;
  e.subdomain = r.subdomain;
  e.forget = r.forget;
  const size_t n = seq.size();
  e.inputs.assign(seq.begin(), seq.end() - 1);
  e.targets.assign(seq.begin() + 1, seq.end());
  const size_t answer_begin = 1 + q.size();  // token index of first answer word
  e.target_is_answer.assign(n - 1, 0);
  e.target_is_content.assign(n - 1, 0);
  e.target_in_train.assign(n - 1, 0);
  for (size_t t = 0; t < n - 1; ++t) {
    const size_t tok_idx = t + 1;
    const bool in_answer =
        tok_idx >= answer_begin && tok_idx < answer_begin + a.size();
    e.target_is_answer[t] = in_answer ? 1 : 0;
    e.target_in_train[t] = (in_answer || seq[tok_idx] == Tokenizer::kEos) ? 1 : 0;
    if (in_answer) {
      const std::string& w = tk.token_of(seq[tok_idx]);
      e.target_is_content[t] =
          (!is_connective(w) && !is_frame_word(w)) ? 1 : 0;
    }
  }
  return e;
}

std::vector<EncodedRecord> encode_all(const Tokenizer& tk,
                                      std::span<const QaRecord> records) {
  std::vector<EncodedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_record(tk, r));
  return out;
}

numkit::Tensor subdomain_centroid(const BaseModel& model, const Tokenizer& tk,
                                  std::span<const QaRecord> records,
                                  double shannon_threshold) {
  using numkit::Tensor;
  if (records.empty()) {
    throw ContractError("subdomain_centroid: empty record set");
  }
  numkit::NoGradGuard guard;
  const int d = model.config().d_model;
  std::vector<double> acc(static_cast<size_t>(d), 0.0);
  size_t count = 0;
  for (const auto& r : records) {
    EncodedRecord e = encode_record(tk, r);
    BaseModel::States st = model.forward_states(e.inputs, nullptr);
    Tensor probs = numkit::softmax_rows(st.logits);
    for (size_t t = 0; t < e.targets.size(); ++t) {
      if (!e.target_is_answer[t]) continue;
      std::vector<double> row(static_cast<size_t>(probs.cols()));
      for (int j = 0; j < probs.cols(); ++j) {
        row[static_cast<size_t>(j)] = probs.at(static_cast<int>(t), j);
      }
      if (shannon_entropy(row) > shannon_threshold) continue;
      for (int j = 0; j < d; ++j) {
        acc[static_cast<size_t>(j)] += st.hidden.at(static_cast<int>(t), j);
      }
      ++count;
    }
  }
  if (count == 0) {
    throw ContractError("subdomain_centroid: no low-entropy answer positions");
  }
  for (auto& v : acc) v /= static_cast<double>(count);
  return Tensor::from_data(d, 1, std::move(acc));
}

}  // namespace alter
