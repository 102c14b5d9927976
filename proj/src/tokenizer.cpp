// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "alter/errors.hpp"

namespace alter {

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      if (!word.empty()) {
        out.push_back(word);
        word.clear();
      }
    } else if (std::isalnum(ch) || ch == '_') {
      word.push_back(static_cast<char>(ch));
    } else {
      if (!word.empty()) {
        out.push_back(word);
        word.clear();
      }
      out.push_back(std::string(1, static_cast<char>(ch)));
    }
  }
  if (!word.empty()) out.push_back(word);
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts,
                           int pad_multiple) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) words.insert(std::move(w));
  }
  std::vector<std::string> table = {"<pad>", "<bos>", "<eos>", "<unk>"};
  table.insert(table.end(), words.begin(), words.end());
  if (pad_multiple > 1) {
    int filler = 0;
    while (table.size() % static_cast<size_t>(pad_multiple) != 0) {
      table.push_back("<reserved" + std::to_string(filler++) + ">");
    }
  }
  return from_tokens(std::move(table));
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> table) {
  if (table.size() < 4 || table[0] != "<pad>" || table[1] != "<bos>" ||
      table[2] != "<eos>" || table[3] != "<unk>") {
    throw ContractError("tokenizer table must start with the special tokens");
  }
  Tokenizer tk;
  tk.table_ = std::move(table);
  for (size_t i = 0; i < tk.table_.size(); ++i) {
    auto [it, fresh] = tk.index_.emplace(tk.table_[i], static_cast<int>(i));
    if (!fresh) throw ContractError("duplicate token in vocabulary: " + tk.table_[i]);
  }
  return tk;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id_of(w));
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += token_of(id);
  }
  return out;
}

int Tokenizer::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::token_of(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw ContractError("token id out of range: " + std::to_string(id));
  }
  return table_[static_cast<size_t>(id)];
}

}  // namespace alter
