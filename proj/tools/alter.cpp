// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
//
// Command line front end. Subcommands compose into the full pipeline:
//   corpus-gen -> train-base (twice, once --retain-only) -> profile
//   -> unlearn | unlearn-baseline -> eval -> report
// Exit codes: 0 success, 1 contract violation, 2 I/O failure.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "json.hpp"

#include "alter/adapters.hpp"
#include "alter/checkpoint.hpp"
#include "alter/corpus.hpp"
#include "alter/errors.hpp"
#include "alter/evalkit.hpp"
#include "alter/rng.hpp"
#include "alter/runconfig.hpp"
#include "alter/unlearn.hpp"

namespace {

using namespace alter;
namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::string work_dir;
  std::string run_dir;
  std::optional<uint64_t> seed;
  std::optional<int> rounds;
  std::optional<int> jobs;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> lambda;
  std::optional<int> rank;
  std::optional<double> q_a;
  std::optional<double> q_b;
  bool single_lora = false;
  bool retain_only = false;
};

// defaults, then the config file, then explicit flags
RunConfig resolve(const Flags& fl, bool baseline) {
  RunConfig cfg;
  if (!fl.config.empty()) cfg = load_runconfig(fl.config);
  if (!fl.work_dir.empty()) cfg.paths.work_dir = fl.work_dir;
  if (!fl.run_dir.empty()) cfg.paths.run_dir = fl.run_dir;
  if (fl.seed) cfg.seed = *fl.seed;
  if (fl.rounds) cfg.rounds = *fl.rounds;
  if (fl.jobs) cfg.jobs = *fl.jobs;
  if (fl.beta) cfg.train.beta = *fl.beta;
  if (fl.gamma) cfg.train.gamma = *fl.gamma;
  if (fl.lambda) cfg.train.lambda = *fl.lambda;
  if (fl.rank) cfg.train.rank = *fl.rank;
  if (fl.q_a) cfg.train.entropy.q_a = *fl.q_a;
  if (fl.q_b) cfg.train.entropy.q_b = *fl.q_b;
  if (fl.single_lora) cfg.single_lora = true;
  finalize_runconfig(cfg);
  resolve_paths(cfg, baseline);
  return cfg;
}

Corpus load_corpus(const RunConfig& cfg) {
  Corpus c;
  c.train = load_jsonl(cfg.paths.corpus_dir + "/train.jsonl");
  c.holdout = load_jsonl(cfg.paths.corpus_dir + "/holdout.jsonl");
  return c;
}

void check_vocab(RunConfig& cfg, const Tokenizer& tk) {
  if (cfg.model.vocab == 0) {
    cfg.model.vocab = tk.vocab_size();
    return;
  }
  if (cfg.model.vocab != tk.vocab_size()) {
    throw ContractError(
        "config: model vocab " + std::to_string(cfg.model.vocab) +
        " does not match the tokenizer's " + std::to_string(tk.vocab_size()) +
        " (set model.vocab to 0 to derive it)");
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

int cmd_corpus_gen(const Flags& fl) {
  RunConfig cfg = resolve(fl, false);
  const Corpus c = generate(cfg.corpus);
  std::error_code ec;
  fs::create_directories(cfg.paths.corpus_dir, ec);
  save_jsonl(c.train, cfg.paths.corpus_dir + "/train.jsonl");
  save_jsonl(c.holdout, cfg.paths.corpus_dir + "/holdout.jsonl");
  write_text(cfg.paths.corpus_dir + "/spec.json",
             runconfig_json(cfg)["corpus"].dump(2) + "\n");
  std::cout << "wrote " << c.train.size() << " train and " << c.holdout.size()
            << " holdout records to " << cfg.paths.corpus_dir << "\n";
  return 0;
}

int cmd_train_base(const Flags& fl) {
  RunConfig cfg = resolve(fl, false);
  const Corpus c = load_corpus(cfg);
  const Tokenizer tk = Tokenizer::build(all_texts(c));
  check_vocab(cfg, tk);
  std::vector<EncodedRecord> recs = encode_all(tk, c.train);
  if (fl.retain_only) {
    std::erase_if(recs, [](const EncodedRecord& r) { return r.forget; });
    if (recs.empty()) throw ContractError("train-base: no retain records");
  }
  const char* tag = fl.retain_only ? "model.retain" : "model.base";
  const uint64_t model_seed = seed_for(cfg.seed, tag);
  BaseModel m(cfg.model, model_seed);
  const BaseTrainStats stats =
      train_base(m, recs, cfg.base.epochs, cfg.base.lr,
                 seed_for(cfg.seed, std::string(tag) + ".fit"), cfg.base.gate);
  const std::string& path =
      fl.retain_only ? cfg.paths.retain_model : cfg.paths.base_model;
  save_model(m, tk, model_seed, path);
  std::cout << "trained " << stats.epochs_run << " epochs on " << recs.size()
            << " records, content accuracy " << stats.content_accuracy
            << ", saved " << path << "\n";
  return 0;
}

int cmd_profile(const Flags& fl) {
  RunConfig cfg = resolve(fl, false);
  const LoadedModel lm = load_model(cfg.paths.base_model);
  const Corpus c = load_corpus(cfg);
  const std::vector<EncodedRecord> recs = encode_all(lm.tokenizer, c.train);
  const std::vector<TokenProfile> profs =
      profile_corpus(lm.model, recs, cfg.train.entropy);
  save_profiles(profs, cfg.train.entropy, cfg.paths.profiles);
  size_t high = 0;
  for (const auto& p : profs) high += p.high ? 1 : 0;
  std::cout << "profiled " << profs.size() << " positions (" << high
            << " high, " << (profs.size() - high) << " low), saved "
            << cfg.paths.profiles << "\n";
  return 0;
}

Evaluator make_evaluator(const RunConfig& cfg, const LoadedModel& lm,
                         const LoadedModel& rm, const Corpus& c,
                         const std::vector<EncodedRecord>& recs,
                         const std::vector<TokenProfile>& profs,
                         const UnlearnTask& task) {
  Evaluator ev;
  ev.base = &lm.model;
  ev.retain_model = &rm.model;
  ev.records = &recs;
  ev.profiles = &profs;
  ev.retain_idx = task.retain;
  ev.holdout = encode_all(lm.tokenizer, c.holdout);
  ev.fluency_set = ev.holdout;
  ev.entropy = cfg.train.entropy;
  ev.jobs = cfg.jobs;
  return ev;
}

void print_final(const std::vector<EvalReport>& reports,
                 const std::string& run_dir) {
  if (!reports.empty()) {
    const EvalReport& r = reports.back();
    std::cout << "round " << r.round << ": forget_acc " << r.forget_acc
              << ", retain_acc " << r.retain_acc << ", ks_p " << r.forget_ks_p
              << ", high_retained " << r.high_retained << ", low_retained "
              << r.low_retained << "\n";
  }
  std::cout << "run directory: " << run_dir << "\n";
}

int cmd_unlearn(const Flags& fl, bool baseline) {
  RunConfig cfg = resolve(fl, baseline);
  LoadedModel lm = load_model(cfg.paths.base_model);
  const LoadedModel rm = load_model(cfg.paths.retain_model);
  const Corpus c = load_corpus(cfg);
  const std::vector<EncodedRecord> recs = encode_all(lm.tokenizer, c.train);
  const UnlearnTask task =
      build_task(recs, cfg.corpus.n_subdomains, cfg.rounds);

  std::error_code ec;
  fs::create_directories(cfg.paths.run_dir, ec);
  write_text(cfg.paths.run_dir + "/runconfig.json",
             runconfig_json(cfg).dump(2) + "\n");

  // both runs score conservation, so profiles are needed either way
  const std::vector<TokenProfile> profs =
      load_profiles(cfg.paths.profiles, cfg.train.entropy, recs);
  const Evaluator ev = make_evaluator(cfg, lm, rm, c, recs, profs, task);

  if (baseline) {
    const BaselineRun run = run_baseline(lm.model, recs, task, cfg.train, &ev,
                                         cfg.paths.run_dir);
    print_final(run.reports, cfg.paths.run_dir);
    return 0;
  }
  const UnlearnRun run =
      run_unlearn(lm.model, lm.tokenizer, c.train, recs, profs, task,
                  cfg.train, &ev, cfg.paths.run_dir, cfg.single_lora);
  print_final(run.reports, cfg.paths.run_dir);
  return 0;
}

int cmd_eval(const std::string& run_dir, int round, int jobs) {
  RunConfig cfg;
  {
    std::ifstream in(run_dir + "/runconfig.json");
    if (!in) throw IoError("cannot open " + run_dir + "/runconfig.json");
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ContractError("eval: bad runconfig.json: " + std::string(e.what()));
    }
    merge_runconfig(cfg, doc);
  }
  if (jobs > 0) cfg.jobs = jobs;
  finalize_runconfig(cfg);
  resolve_paths(cfg, false);

  if (round < 0) {
    for (int k = 1;; ++k) {
      if (!fs::exists(run_dir + "/round_" + std::to_string(k) +
                      "/adapters.ckpt")) {
        round = k - 1;
        break;
      }
    }
    if (round == 0) {
      throw ContractError("eval: " + run_dir +
                          " holds no adapter checkpoints (baseline runs keep "
                          "their scores in metrics.csv)");
    }
  }
  const std::string round_dir = run_dir + "/round_" + std::to_string(round);

  LoadedModel lm = load_model(cfg.paths.base_model);
  const LoadedModel rm = load_model(cfg.paths.retain_model);
  const Corpus c = load_corpus(cfg);
  const std::vector<EncodedRecord> recs = encode_all(lm.tokenizer, c.train);
  const std::vector<TokenProfile> profs =
      load_profiles(cfg.paths.profiles, cfg.train.entropy, recs);
  const UnlearnTask task =
      build_task(recs, cfg.corpus.n_subdomains, cfg.rounds);
  if (static_cast<size_t>(round) > task.rounds.size()) {
    throw ContractError("eval: round " + std::to_string(round) +
                        " exceeds the task's " +
                        std::to_string(task.rounds.size()));
  }
  std::vector<int> active;
  for (int k = 0; k < round; ++k) {
    for (int d : task.rounds[static_cast<size_t>(k)]) {
      const auto& add = task.forget[static_cast<size_t>(d)];
      active.insert(active.end(), add.begin(), add.end());
    }
  }

  const AsymAdapterSet adapters = load_adapters(round_dir + "/adapters.ckpt");
  const AdapterHook hook = train_hook(adapters);
  const Evaluator ev = make_evaluator(cfg, lm, rm, c, recs, profs, task);

  double wall = 0.0;
  if (fs::exists(round_dir + "/report.json")) {
    wall = load_report(round_dir + "/report.json").wall_clock_s;
  }
  const EvalReport rep = ev.run(lm.model, &hook, round, active, wall);

  nlohmann::json j;
  j["round"] = rep.round;
  j["forget_ks_stat"] = rep.forget_ks_stat;
  j["forget_ks_p"] = rep.forget_ks_p;
  j["forget_acc"] = rep.forget_acc;
  j["retain_acc"] = rep.retain_acc;
  j["utility_holdout_acc"] = rep.utility_holdout_acc;
  j["high_retained"] = rep.high_retained;
  j["low_retained"] = rep.low_retained;
  j["fluency_ppl"] = rep.fluency_ppl;
  j["wall_clock_s"] = rep.wall_clock_s;
  std::cout << j.dump(2) << "\n";
  return 0;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_report(const std::vector<std::string>& runs) {
  for (const std::string& dir : runs) {
    const auto rows = read_csv(dir + "/metrics.csv");
    std::cout << "== " << dir << "\n";
    const size_t first = rows.size() > 6 ? rows.size() - 5 : 1;
    auto print_row = [&](const std::vector<std::string>& row) {
      std::cout << "  ";
      for (size_t c = 0; c < row.size(); ++c) {
        std::cout << (c ? "," : "") << row[c];
      }
      std::cout << "\n";
    };
    print_row(rows.at(0));
    for (size_t i = first; i < rows.size(); ++i) print_row(rows[i]);
    std::cout << "  plots: " << dir << "/plot_round_utility.csv, " << dir
              << "/plot_time_forget.csv\n";
  }
  if (runs.size() > 1) {
    // quality/time trade-off across runs, final round each
    std::cout << "== trade-off (final round)\n";
    std::cout << "  run,wall_clock_s,forget_ks_p,forget_acc,retain_acc\n";
    for (const std::string& dir : runs) {
      const auto rows = read_csv(dir + "/metrics.csv");
      if (rows.size() < 2) continue;
      const auto& r = rows.back();
      // metrics.csv columns: round, ks_stat, ks_p, forget, retain, ..., wall
      std::cout << "  " << dir << "," << r.at(9) << "," << r.at(2) << ","
                << r.at(3) << "," << r.at(4) << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asymmetric adapter unlearning pipeline"};
  app.require_subcommand(1);

  Flags fl;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", fl.config, "JSON config file");
    sub->add_option("--work-dir", fl.work_dir,
                    "artifact root (default $ALTER_RUN_DIR or .)");
    sub->add_option("--seed", fl.seed, "master seed");
    sub->add_option("--jobs", fl.jobs, "evaluation worker count");
  };

  CLI::App* gen = app.add_subcommand("corpus-gen", "write the QA corpus");
  add_common(gen);

  CLI::App* tb = app.add_subcommand("train-base", "fit a base model");
  add_common(tb);
  tb->add_flag("--retain-only", fl.retain_only,
               "train only on retention records (the reference model)");

  CLI::App* prof = app.add_subcommand("profile", "score token entropies");
  add_common(prof);

  CLI::App* un = app.add_subcommand("unlearn", "two-stage adapter unlearning");
  add_common(un);
  un->add_option("--rounds", fl.rounds, "sequential unlearning rounds");
  un->add_option("--beta", fl.beta, "forgetting weight");
  un->add_option("--gamma", fl.gamma, "retention weight");
  un->add_option("--lambda", fl.lambda, "structural weight");
  un->add_option("--rank", fl.rank, "adapter rank");
  un->add_option("--q-a", fl.q_a, "entropy deformation of the shared matrix");
  un->add_option("--q-b", fl.q_b, "entropy deformation of the experts");
  un->add_flag("--single-lora", fl.single_lora, "one expert for all subdomains");
  un->add_option("--run-dir", fl.run_dir, "output directory");

  CLI::App* ub = app.add_subcommand("unlearn-baseline",
                                    "gradient-difference baseline");
  add_common(ub);
  ub->add_option("--rounds", fl.rounds, "sequential unlearning rounds");
  ub->add_option("--beta", fl.beta, "forgetting weight");
  ub->add_option("--gamma", fl.gamma, "retention weight");
  ub->add_option("--run-dir", fl.run_dir, "output directory");

  std::string eval_run;
  int eval_round = -1;
  int eval_jobs = 0;
  CLI::App* ev = app.add_subcommand("eval", "re-score a finished run");
  ev->add_option("--run", eval_run, "run directory")->required();
  ev->add_option("--round", eval_round, "round number (default: last)");
  ev->add_option("--jobs", eval_jobs, "evaluation worker count");

  std::vector<std::string> report_runs;
  CLI::App* rep = app.add_subcommand("report", "print run metrics");
  rep->add_option("--run", report_runs, "run directory (repeatable)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_corpus_gen(fl);
    if (app.got_subcommand(tb)) return cmd_train_base(fl);
    if (app.got_subcommand(prof)) return cmd_profile(fl);
    if (app.got_subcommand(un)) return cmd_unlearn(fl, false);
    if (app.got_subcommand(ub)) return cmd_unlearn(fl, true);
    if (app.got_subcommand(ev)) return cmd_eval(eval_run, eval_round, eval_jobs);
    if (app.got_subcommand(rep)) return cmd_report(report_runs);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
