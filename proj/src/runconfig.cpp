// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <type_traits>
#include <string>

#include "alter/errors.hpp"
#include "alter/rng.hpp"

namespace alter {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) {
    throw ContractError("config: " + where + " must be a JSON object");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw ContractError("config: unknown key \"" + where + key + "\"");
    }
  }
}

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  // the library would coerce booleans to numbers; reject that here
  bool ok;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_arithmetic_v<T>) {
    ok = v.is_number();
  } else {
    ok = v.is_string();
  }
  if (!ok) throw ContractError("config: bad value for \"" + where + key + "\"");
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ContractError("config: bad value for \"" + where + key + "\"");
  }
}

void merge_corpus(CorpusSpec& c, const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"n_subdomains", "entities_per_subdomain", "retain_entities",
                  "holdout_per_entity", "seed"},
                 where + ".");
  take(j, "n_subdomains", c.n_subdomains, where + ".");
  take(j, "entities_per_subdomain", c.entities_per_subdomain, where + ".");
  take(j, "retain_entities", c.retain_entities, where + ".");
  take(j, "holdout_per_entity", c.holdout_per_entity, where + ".");
  take(j, "seed", c.seed, where + ".");  // overwritten by finalize
}

void merge_model(ModelConfig& m, const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"d_model", "n_heads", "n_blocks", "mlp_width", "ctx_len",
                  "vocab", "norm_eps"},
                 where + ".");
  take(j, "d_model", m.d_model, where + ".");
  take(j, "n_heads", m.n_heads, where + ".");
  take(j, "n_blocks", m.n_blocks, where + ".");
  take(j, "mlp_width", m.mlp_width, where + ".");
  take(j, "ctx_len", m.ctx_len, where + ".");
  take(j, "vocab", m.vocab, where + ".");
  take(j, "norm_eps", m.norm_eps, where + ".");
}

void merge_base(BaseFitConfig& b, const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j, {"epochs", "lr", "gate"}, where + ".");
  take(j, "epochs", b.epochs, where + ".");
  take(j, "lr", b.lr, where + ".");
  take(j, "gate", b.gate, where + ".");
}

void merge_entropy(EntropyConfig& e, const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(
      j, {"q_a", "q_b", "shannon_threshold", "route_threshold"}, where + ".");
  take(j, "q_a", e.q_a, where + ".");
  take(j, "q_b", e.q_b, where + ".");
  take(j, "shannon_threshold", e.shannon_threshold, where + ".");
  take(j, "route_threshold", e.route_threshold, where + ".");
}

void merge_train(TrainConfig& t, const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"beta", "gamma", "lambda", "eta_a", "eta_b", "batch",
                  "epochs", "rank", "entropy", "seed", "injection_point",
                  "structural_cap"},
                 where + ".");
  take(j, "beta", t.beta, where + ".");
  take(j, "gamma", t.gamma, where + ".");
  take(j, "lambda", t.lambda, where + ".");
  take(j, "eta_a", t.eta_a, where + ".");
  take(j, "eta_b", t.eta_b, where + ".");
  take(j, "batch", t.batch, where + ".");
  take(j, "epochs", t.epochs, where + ".");
  take(j, "rank", t.rank, where + ".");
  take(j, "seed", t.seed, where + ".");  // overwritten by finalize
  take(j, "injection_point", t.injection_point, where + ".");
  take(j, "structural_cap", t.structural_cap, where + ".");
  if (j.contains("entropy")) merge_entropy(t.entropy, j.at("entropy"), where + ".entropy");
}

void merge_paths(RunPaths& p, const json& j, const std::string& where) {
  require_object(j, where);
  reject_unknown(j,
                 {"work_dir", "corpus_dir", "base_model", "retain_model",
                  "profiles", "run_dir"},
                 where + ".");
  take(j, "work_dir", p.work_dir, where + ".");
  take(j, "corpus_dir", p.corpus_dir, where + ".");
  take(j, "base_model", p.base_model, where + ".");
  take(j, "retain_model", p.retain_model, where + ".");
  take(j, "profiles", p.profiles, where + ".");
  take(j, "run_dir", p.run_dir, where + ".");
}

}  // namespace

void merge_runconfig(RunConfig& cfg, const nlohmann::json& doc) {
  require_object(doc, "document");
  reject_unknown(doc,
                 {"seed", "rounds", "jobs", "single_lora", "corpus", "model",
                  "base", "train", "paths"},
                 "");
  take(doc, "seed", cfg.seed, "");
  take(doc, "rounds", cfg.rounds, "");
  take(doc, "jobs", cfg.jobs, "");
  take(doc, "single_lora", cfg.single_lora, "");
  if (doc.contains("corpus")) merge_corpus(cfg.corpus, doc.at("corpus"), "corpus");
  if (doc.contains("model")) merge_model(cfg.model, doc.at("model"), "model");
  if (doc.contains("base")) merge_base(cfg.base, doc.at("base"), "base");
  if (doc.contains("train")) merge_train(cfg.train, doc.at("train"), "train");
  if (doc.contains("paths")) merge_paths(cfg.paths, doc.at("paths"), "paths");
}

RunConfig load_runconfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("config: " + path + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  merge_runconfig(cfg, doc);
  return cfg;
}

void finalize_runconfig(RunConfig& cfg) {
  if (cfg.rounds < 1) throw ContractError("config: rounds must be >= 1");
  if (cfg.jobs < 1) throw ContractError("config: jobs must be >= 1");
  cfg.corpus.seed = seed_for(cfg.seed, "corpus");
  cfg.train.seed = seed_for(cfg.seed, "train");
  if (cfg.corpus.n_subdomains < 1 || cfg.corpus.entities_per_subdomain < 1 ||
      cfg.corpus.retain_entities < 1 || cfg.corpus.holdout_per_entity < 0) {
    throw ContractError("config: corpus sizes out of range");
  }
  // vocab 0 means "derive from the tokenizer" and is resolved at training
  if (cfg.model.d_model < 1 || cfg.model.n_heads < 1 ||
      cfg.model.n_blocks < 1 || cfg.model.mlp_width < 1 ||
      cfg.model.ctx_len < 2 ||
      (cfg.model.vocab != 0 && cfg.model.vocab < 5)) {
    throw ContractError("config: model architecture out of range");
  }
  if (cfg.model.d_model % cfg.model.n_heads != 0) {
    throw ContractError("config: d_model must divide evenly into heads");
  }
  if (cfg.base.epochs < 0 || cfg.base.lr <= 0 || cfg.base.gate < 0) {
    throw ContractError("config: base training knobs out of range");
  }
  validate_config(cfg.train);
}

nlohmann::json runconfig_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["rounds"] = cfg.rounds;
  j["jobs"] = cfg.jobs;
  j["single_lora"] = cfg.single_lora;
  j["corpus"] = {{"n_subdomains", cfg.corpus.n_subdomains},
                 {"entities_per_subdomain", cfg.corpus.entities_per_subdomain},
                 {"retain_entities", cfg.corpus.retain_entities},
                 {"holdout_per_entity", cfg.corpus.holdout_per_entity},
                 {"seed", cfg.corpus.seed}};
  j["model"] = {{"d_model", cfg.model.d_model},
                {"n_heads", cfg.model.n_heads},
                {"n_blocks", cfg.model.n_blocks},
                {"mlp_width", cfg.model.mlp_width},
                {"ctx_len", cfg.model.ctx_len},
                {"vocab", cfg.model.vocab},
                {"norm_eps", cfg.model.norm_eps}};
  j["base"] = {{"epochs", cfg.base.epochs},
               {"lr", cfg.base.lr},
               {"gate", cfg.base.gate}};
  j["train"] = {{"beta", cfg.train.beta},
                {"gamma", cfg.train.gamma},
                {"lambda", cfg.train.lambda},
                {"eta_a", cfg.train.eta_a},
                {"eta_b", cfg.train.eta_b},
                {"batch", cfg.train.batch},
                {"epochs", cfg.train.epochs},
                {"rank", cfg.train.rank},
                {"seed", cfg.train.seed},
                {"injection_point", cfg.train.injection_point},
                {"structural_cap", cfg.train.structural_cap},
                {"entropy",
                 {{"q_a", cfg.train.entropy.q_a},
                  {"q_b", cfg.train.entropy.q_b},
                  {"shannon_threshold", cfg.train.entropy.shannon_threshold},
                  {"route_threshold", cfg.train.entropy.route_threshold}}}};
  j["paths"] = {{"work_dir", cfg.paths.work_dir},
                {"corpus_dir", cfg.paths.corpus_dir},
                {"base_model", cfg.paths.base_model},
                {"retain_model", cfg.paths.retain_model},
                {"profiles", cfg.paths.profiles},
                {"run_dir", cfg.paths.run_dir}};
  return j;
}

void resolve_paths(RunConfig& cfg, bool baseline) {
  RunPaths& p = cfg.paths;
  if (p.work_dir.empty()) {
    const char* env = std::getenv("ALTER_RUN_DIR");
    p.work_dir = (env && *env) ? env : ".";
  }
  if (p.corpus_dir.empty()) p.corpus_dir = p.work_dir + "/corpus";
  if (p.base_model.empty()) p.base_model = p.work_dir + "/base_model.ckpt";
  if (p.retain_model.empty()) {
    p.retain_model = p.work_dir + "/retain_model.ckpt";
  }
  if (p.profiles.empty()) p.profiles = p.work_dir + "/profiles.ckpt";
  if (p.run_dir.empty()) {
    p.run_dir = p.work_dir + (baseline ? "/runs/baseline" : "/runs/alter");
  }
}

}  // namespace alter
