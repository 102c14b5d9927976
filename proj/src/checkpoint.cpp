// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "alter/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format requires a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "checkpoint format requires IEEE-754 binary64");

namespace alter {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "ALTR1";

json config_to_json(const ModelConfig& cfg) {
  return json{{"d_model", cfg.d_model},   {"n_heads", cfg.n_heads},
              {"n_blocks", cfg.n_blocks}, {"mlp_width", cfg.mlp_width},
              {"ctx_len", cfg.ctx_len},   {"vocab", cfg.vocab},
              {"norm_eps", cfg.norm_eps}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_blocks = j.at("n_blocks").get<int>();
    cfg.mlp_width = j.at("mlp_width").get<int>();
    cfg.ctx_len = j.at("ctx_len").get<int>();
    cfg.vocab = j.at("vocab").get<int>();
    cfg.norm_eps = j.at("norm_eps").get<double>();
  } catch (const json::exception& e) {
    throw ContractError(std::string("checkpoint: bad model config: ") + e.what());
  }
  return cfg;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    if (!t.defined()) {
      throw ContractError("checkpoint: tensor '" + name + "' is undefined");
    }
    tensors.push_back(json{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  }
  json header{{"magic", kMagic},
              {"dtype", "f64"},
              {"tensors", std::move(tensors)},
              {"meta", ckpt.meta}};
  const std::string head = header.dump();
  if (head.size() > std::numeric_limits<uint32_t>::max()) {
    throw ContractError("checkpoint: header too large");
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const uint32_t head_len = static_cast<uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    std::span<const double> d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  out.flush();
  if (!out) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  uint32_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  if (!in || in.gcount() != sizeof(head_len)) {
    throw ContractError("checkpoint '" + path + "': truncated header length");
  }
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in || in.gcount() != static_cast<std::streamsize>(head_len)) {
    throw ContractError("checkpoint '" + path + "': truncated header");
  }
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    throw ContractError("checkpoint '" + path + "': header is not valid JSON");
  }
  if (header.value("magic", "") != kMagic) {
    throw ContractError("checkpoint '" + path + "': bad magic");
  }
  if (header.value("dtype", "") != "f64") {
    throw ContractError("checkpoint '" + path + "': unsupported dtype");
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw ContractError("checkpoint '" + path + "': missing tensor index");
  }

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", json::object());
  for (const json& e : header["tensors"]) {
    std::string name;
    int rows = 0, cols = 0;
    try {
      name = e.at("name").get<std::string>();
      rows = e.at("rows").get<int>();
      cols = e.at("cols").get<int>();
    } catch (const json::exception& ex) {
      throw ContractError("checkpoint '" + path +
                          "': bad tensor entry: " + ex.what());
    }
    if (rows <= 0 || cols <= 0) {
      throw ContractError("checkpoint '" + path + "': tensor '" + name +
                          "' has non-positive shape");
    }
    std::vector<double> data(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in ||
        in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double))) {
      throw ContractError("checkpoint '" + path + "': truncated payload for '" +
                          name + "'");
    }
    ckpt.tensors.emplace_back(
        name, numkit::Tensor::from_data(rows, cols, std::move(data)));
  }
  in.peek();
  if (!in.eof()) {
    throw ContractError("checkpoint '" + path + "': trailing bytes after payload");
  }
  return ckpt;
}

void save_model(const BaseModel& model, const Tokenizer& tk, uint64_t seed,
                const std::string& path) {
  if (tk.vocab_size() != model.config().vocab) {
    throw ContractError("save_model: tokenizer size disagrees with model vocab");
  }
  Checkpoint ckpt;
  ckpt.tensors = model.named_params();
  ckpt.meta = json{{"kind", "base_model"},
                   {"config", config_to_json(model.config())},
                   {"seed", seed},
                   {"tokenizer", tk.table()}};
  save_checkpoint(ckpt, path);
}

LoadedModel load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "base_model") {
    throw ContractError("checkpoint '" + path + "' does not hold a base model");
  }
  if (!ckpt.meta.contains("config") || !ckpt.meta.contains("tokenizer")) {
    throw ContractError("checkpoint '" + path + "': missing config or tokenizer");
  }
  ModelConfig cfg = config_from_json(ckpt.meta["config"]);
  std::vector<std::string> table;
  try {
    table = ckpt.meta["tokenizer"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ContractError("checkpoint '" + path +
                        "': bad tokenizer table: " + e.what());
  }
  uint64_t seed = ckpt.meta.value("seed", uint64_t{0});
  return LoadedModel{BaseModel(cfg, std::move(ckpt.tensors)),
                     Tokenizer::from_tokens(std::move(table)), seed};
}

}  // namespace alter
