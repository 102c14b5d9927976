// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Resolved configuration for one pipeline run: corpus shape, model
// architecture, training knobs and artifact paths, loadable from one JSON
// document and echoed verbatim into every run directory.

#include <cstdint>
#include <string>

#include "json.hpp"

#include "alter/corpus.hpp"
#include "alter/model.hpp"
#include "alter/unlearn.hpp"

namespace alter {

// Base-model optimization knobs (the memorization run, not unlearning).
struct BaseFitConfig {
  int epochs = 60;
  double lr = 3e-3;
  double gate = 0.90;  // teacher-forced content accuracy that stops training
};

// Artifact locations. Empty fields are filled from work_dir by
// resolve_paths; the run directory default depends on the subcommand.
struct RunPaths {
  std::string work_dir;
  std::string corpus_dir;
  std::string base_model;
  std::string retain_model;
  std::string profiles;
  std::string run_dir;
};

struct RunConfig {
  uint64_t seed = 0;  // master seed; stage seeds derive from it
  int rounds = 1;
  int jobs = 1;
  bool single_lora = false;
  CorpusSpec corpus;
  ModelConfig model;
  BaseFitConfig base;
  TrainConfig train;
  RunPaths paths;
};

// Overlays a JSON document onto `cfg`. Unknown keys at any level are a
// contract error naming the key. Values must match their field's type.
void merge_runconfig(RunConfig& cfg, const nlohmann::json& doc);

// Reads and overlays one JSON file. Missing file is an I/O error.
RunConfig load_runconfig(const std::string& path);

// Derives the per-stage seeds from the master seed and validates every
// section. Call after all overrides are applied.
void finalize_runconfig(RunConfig& cfg);

// Full echo, loadable by merge_runconfig and stable across dump cycles.
nlohmann::json runconfig_json(const RunConfig& cfg);

// Fills empty path fields from work_dir. `baseline` picks the default run
// directory name. work_dir falls back to ALTER_RUN_DIR, then ".".
void resolve_paths(RunConfig& cfg, bool baseline);

}  // namespace alter
