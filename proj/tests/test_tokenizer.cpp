// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/tokenizer.hpp"

#include <doctest.h>

#include "alter/errors.hpp"

using alter::ContractError;
using alter::Tokenizer;

TEST_CASE("special token ids occupy the reserved slots") {
  Tokenizer tk = Tokenizer::build({"b a"}, 1);
  CHECK(tk.token_of(Tokenizer::kPad) == "<pad>");
  CHECK(tk.token_of(Tokenizer::kBos) == "<bos>");
  CHECK(tk.token_of(Tokenizer::kEos) == "<eos>");
  CHECK(tk.token_of(Tokenizer::kUnk) == "<unk>");
  CHECK(tk.id_of("a") == 4);  // sorted after specials
  CHECK(tk.id_of("b") == 5);
}

TEST_CASE("vocabulary is padded to the requested multiple") {
  Tokenizer tk = Tokenizer::build({"x y z"}, 64);
  CHECK(tk.vocab_size() == 64);
  CHECK(tk.token_of(63).substr(0, 9) == "<reserved");
  Tokenizer exact = Tokenizer::build({"x y z w"}, 8);  // 4 specials + 4 words
  CHECK(exact.vocab_size() == 8);
}

TEST_CASE("split_words separates punctuation and collapses whitespace") {
  auto w = Tokenizer::split_words("the lair  of vorael, truly?");
  std::vector<std::string> expect{"the", "lair", "of", "vorael", ",", "truly", "?"};
  CHECK(w == expect);
  CHECK(Tokenizer::split_words("").empty());
  CHECK(Tokenizer::split_words("   ").empty());
}

TEST_CASE("encode then decode is identity on canonical text") {
  Tokenizer tk = Tokenizer::build({"the hue of vorael is ashium"}, 1);
  const std::string text = "the hue of ashium is vorael";
  CHECK(tk.decode(tk.encode(text)) == text);
}

TEST_CASE("out of vocabulary words map to unk") {
  Tokenizer tk = Tokenizer::build({"known words"}, 1);
  auto ids = tk.encode("known mystery");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == tk.id_of("known"));
  CHECK(ids[1] == Tokenizer::kUnk);
  CHECK(tk.id_of("absent") == Tokenizer::kUnk);
}

TEST_CASE("decode skips pad bos and eos") {
  Tokenizer tk = Tokenizer::build({"alpha beta"}, 1);
  std::vector<int> ids{Tokenizer::kBos, tk.id_of("alpha"), Tokenizer::kPad,
                       tk.id_of("beta"), Tokenizer::kEos};
  CHECK(tk.decode(ids) == "alpha beta");
}

TEST_CASE("token table round trips through from_tokens") {
  Tokenizer tk = Tokenizer::build({"gamma delta epsilon"}, 16);
  Tokenizer back = Tokenizer::from_tokens(tk.table());
  CHECK(back.table() == tk.table());
  CHECK(back.encode("delta gamma") == tk.encode("delta gamma"));
}

TEST_CASE("from_tokens rejects malformed tables") {
  CHECK_THROWS_AS(Tokenizer::from_tokens({"<pad>", "<bos>"}), ContractError);
  CHECK_THROWS_AS(
      Tokenizer::from_tokens({"<bos>", "<pad>", "<eos>", "<unk>", "a"}),
      ContractError);
  CHECK_THROWS_AS(
      Tokenizer::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "a", "a"}),
      ContractError);
}

TEST_CASE("token_of rejects out of range ids") {
  Tokenizer tk = Tokenizer::build({"solo"}, 1);
  CHECK_THROWS_AS(tk.token_of(-1), ContractError);
  CHECK_THROWS_AS(tk.token_of(tk.vocab_size()), ContractError);
}

TEST_CASE("build is deterministic regardless of text order") {
  Tokenizer a = Tokenizer::build({"one two", "three"}, 4);
  Tokenizer b = Tokenizer::build({"three", "two one"}, 4);
  CHECK(a.table() == b.table());
}
