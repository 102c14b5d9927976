// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace alter {

// Word-level tokenizer. Alphanumeric runs are words, any other non-space
// character is its own token, whitespace separates. Out-of-vocabulary text
// maps to unk. decode joins with single spaces and skips pad/bos/eos, so
// encode-then-decode is the identity on canonical (space-separated,
// in-vocabulary) text.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  // Builds a vocabulary from the unique words of `texts`, sorted for
  // determinism, then pads the table up to a multiple of `pad_multiple`
  // with reserved filler tokens.
  static Tokenizer build(const std::vector<std::string>& texts,
                         int pad_multiple = 64);

  // Reconstructs a tokenizer from an already-ordered token table
  // (checkpoint restore path).
  static Tokenizer from_tokens(std::vector<std::string> table);

  static std::vector<std::string> split_words(const std::string& text);

  std::vector<int> encode(const std::string& text) const;
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(table_.size()); }
  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  const std::vector<std::string>& table() const { return table_; }

 private:
  std::vector<std::string> table_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace alter
