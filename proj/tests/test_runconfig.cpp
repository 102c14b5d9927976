// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#include "alter/runconfig.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "alter/errors.hpp"
#include "alter/rng.hpp"

using namespace alter;

namespace {

// expects fn to throw ContractError whose message contains needle
void throws_with(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
    FAIL("expected ContractError containing \"", needle, "\"");
  } catch (const ContractError& e) {
    CAPTURE(e.what());
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

std::string write_tmp(const std::string& name, const std::string& text) {
  const std::string path =
      (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << text;
  return path;
}

}  // namespace

TEST_CASE("defaults carry the pinned hyperparameters") {
  const RunConfig cfg;
  CHECK(cfg.seed == 0);
  CHECK(cfg.rounds == 1);
  CHECK(cfg.jobs == 1);
  CHECK(!cfg.single_lora);
  CHECK(cfg.train.beta == 1.0);
  CHECK(cfg.train.gamma == 1.0);
  CHECK(cfg.train.lambda == 0.01);
  CHECK(cfg.train.eta_a == 1e-5);
  CHECK(cfg.train.eta_b == 1e-3);
  CHECK(cfg.train.batch == 4);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.rank == 8);
  CHECK(cfg.train.entropy.q_a == 0.5);
  CHECK(cfg.train.entropy.q_b == 2.0);
  CHECK(cfg.train.entropy.shannon_threshold == 2.0);
  CHECK(cfg.train.entropy.route_threshold == 1.2);
  CHECK(cfg.base.epochs == 60);
  CHECK(cfg.base.gate == 0.90);
}

TEST_CASE("merge overlays only the mentioned keys") {
  RunConfig cfg;
  merge_runconfig(cfg, nlohmann::json{{"seed", 42},
                                      {"rounds", 3},
                                      {"train", {{"beta", 0.5}}},
                                      {"model", {{"d_model", 128}}}});
  CHECK(cfg.seed == 42);
  CHECK(cfg.rounds == 3);
  CHECK(cfg.train.beta == 0.5);
  CHECK(cfg.train.gamma == 1.0);  // untouched
  CHECK(cfg.model.d_model == 128);
  CHECK(cfg.model.n_heads == RunConfig{}.model.n_heads);
}

TEST_CASE("unknown keys are rejected by name at every level") {
  RunConfig cfg;
  throws_with([&] { merge_runconfig(cfg, {{"sneed", 1}}); }, "sneed");
  throws_with([&] { merge_runconfig(cfg, {{"corpus", {{"entities", 2}}}}); },
              "corpus.entities");
  throws_with([&] { merge_runconfig(cfg, {{"model", {{"depth", 2}}}}); },
              "model.depth");
  throws_with([&] { merge_runconfig(cfg, {{"base", {{"momentum", 0.9}}}}); },
              "base.momentum");
  throws_with([&] { merge_runconfig(cfg, {{"train", {{"alpha", 1.0}}}}); },
              "train.alpha");
  throws_with(
      [&] {
        merge_runconfig(cfg, {{"train", {{"entropy", {{"q_c", 3.0}}}}}});
      },
      "train.entropy.q_c");
  throws_with([&] { merge_runconfig(cfg, {{"paths", {{"out", "x"}}}}); },
              "paths.out");
}

TEST_CASE("wrongly typed values are named") {
  RunConfig cfg;
  throws_with([&] { merge_runconfig(cfg, {{"rounds", "three"}}); }, "rounds");
  throws_with([&] { merge_runconfig(cfg, {{"train", {{"beta", "big"}}}}); },
              "train.beta");
  throws_with([&] { merge_runconfig(cfg, {{"model", {{"vocab", true}}}}); },
              "model.vocab");
  throws_with([&] { merge_runconfig(cfg, nlohmann::json::array({1, 2})); },
              "object");
  throws_with([&] { merge_runconfig(cfg, {{"corpus", 7}}); }, "object");
}

TEST_CASE("file loading distinguishes missing from malformed") {
  CHECK_THROWS_AS(load_runconfig("/nonexistent/cfg.json"), IoError);
  const std::string bad = write_tmp("alter_bad_cfg.json", "{not json");
  CHECK_THROWS_AS(load_runconfig(bad), ContractError);
  const std::string good =
      write_tmp("alter_good_cfg.json", R"({"seed": 9, "rounds": 2})");
  const RunConfig cfg = load_runconfig(good);
  CHECK(cfg.seed == 9);
  CHECK(cfg.rounds == 2);
  std::filesystem::remove(bad);
  std::filesystem::remove(good);
}

TEST_CASE("finalize derives stage seeds from the master seed") {
  RunConfig a;
  a.seed = 7;
  finalize_runconfig(a);
  CHECK(a.corpus.seed == seed_for(7, "corpus"));
  CHECK(a.train.seed == seed_for(7, "train"));
  CHECK(a.corpus.seed != a.train.seed);

  RunConfig b;
  b.seed = 7;
  b.corpus.seed = 999;  // stale value from a config file
  b.train.seed = 999;
  finalize_runconfig(b);
  CHECK(b.corpus.seed == a.corpus.seed);
  CHECK(b.train.seed == a.train.seed);

  RunConfig c;
  c.seed = 8;
  finalize_runconfig(c);
  CHECK(c.corpus.seed != a.corpus.seed);
}

TEST_CASE("finalize validates every section") {
  auto broken = [](const std::function<void(RunConfig&)>& mutate) {
    RunConfig cfg;
    mutate(cfg);
    return [cfg]() mutable { finalize_runconfig(cfg); };
  };
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.rounds = 0; })(), ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.jobs = 0; })(), ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.corpus.n_subdomains = 0; })(),
                  ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.model.d_model = 30; })(),
                  ContractError);  // 30 % 4 heads != 0
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.model.vocab = 4; })(),
                  ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.model.ctx_len = 1; })(),
                  ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.base.lr = 0.0; })(),
                  ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.train.rank = 0; })(),
                  ContractError);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.train.batch = 0; })(),
                  ContractError);
}

TEST_CASE("the echo reloads to an identical echo") {
  RunConfig cfg;
  cfg.seed = 31;
  cfg.rounds = 3;
  cfg.jobs = 2;
  cfg.single_lora = true;
  cfg.corpus.n_subdomains = 4;
  cfg.corpus.entities_per_subdomain = 5;
  cfg.model.d_model = 48;
  cfg.model.n_heads = 4;
  cfg.base.epochs = 7;
  cfg.train.beta = 0.25;
  cfg.train.entropy.q_b = 3.0;
  cfg.paths.work_dir = "/tmp/altertest";
  finalize_runconfig(cfg);
  resolve_paths(cfg, false);

  const nlohmann::json echo = runconfig_json(cfg);
  RunConfig back;
  merge_runconfig(back, echo);
  finalize_runconfig(back);
  CHECK(runconfig_json(back).dump() == echo.dump());
  CHECK(back.train.seed == cfg.train.seed);
  CHECK(back.paths.run_dir == cfg.paths.run_dir);
}

TEST_CASE("path resolution fills only the empty fields") {
  RunConfig cfg;
  cfg.paths.work_dir = "/w";
  cfg.paths.profiles = "/elsewhere/p.ckpt";
  resolve_paths(cfg, false);
  CHECK(cfg.paths.corpus_dir == "/w/corpus");
  CHECK(cfg.paths.base_model == "/w/base_model.ckpt");
  CHECK(cfg.paths.retain_model == "/w/retain_model.ckpt");
  CHECK(cfg.paths.profiles == "/elsewhere/p.ckpt");
  CHECK(cfg.paths.run_dir == "/w/runs/alter");

  RunConfig bl;
  bl.paths.work_dir = "/w";
  resolve_paths(bl, true);
  CHECK(bl.paths.run_dir == "/w/runs/baseline");

  RunConfig pinned;
  pinned.paths.work_dir = "/w";
  pinned.paths.run_dir = "/my/run";
  resolve_paths(pinned, true);
  CHECK(pinned.paths.run_dir == "/my/run");
}

TEST_CASE("work_dir falls back to the environment, then the cwd") {
  ::setenv("ALTER_RUN_DIR", "/envroot", 1);
  RunConfig cfg;
  resolve_paths(cfg, false);
  CHECK(cfg.paths.work_dir == "/envroot");
  CHECK(cfg.paths.corpus_dir == "/envroot/corpus");

  ::unsetenv("ALTER_RUN_DIR");
  RunConfig cwd;
  resolve_paths(cwd, false);
  CHECK(cwd.paths.work_dir == ".");
}
