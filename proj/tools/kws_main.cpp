// kws_main.cpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#include <CLI11.hpp>
#include <cstdio>

#include "kws/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<int> num_seeds;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (key=value sections)");
  cmd->add_option("--out-dir", args.out_dir, "output directory (overrides the config)");
  cmd->add_option("--set", args.overrides, "override a config field, e.g. training.lr=0.002")
      ->take_all();
  cmd->add_option("--seed", args.seed, "global seed (overrides the config)");
  cmd->add_option("--num-seeds", args.num_seeds, "number of seeds (seed, seed+1, ...)");
}

kws::ExperimentConfig resolve(const CommonArgs& args) {
  kws::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = kws::load_config_file(args.config_path);
  for (const std::string& ov : args.overrides) kws::apply_override(cfg, ov);
  if (args.seed) cfg.seed = *args.seed;
  if (args.num_seeds) cfg.num_seeds = *args.num_seeds;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

// Single-seed stage runner operating on one run directory.
kws::exp::Workspace stage_workspace(const kws::ExperimentConfig& cfg) {
  if (cfg.num_seeds != 1)
    throw kws::ConfigError("stage commands run one seed; use pipeline for multi-seed runs");
  return kws::exp::Workspace(cfg, cfg.out_dir, cfg.seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale wakeword detection with pseudo-labeled training under "
               "distribution shift"};
  app.require_subcommand(1);

  CommonArgs args;
  std::vector<int64_t> sizes_arg;

  CLI::App* gen = app.add_subcommand("gen", "generate the synthetic corpus");
  CLI::App* teach = app.add_subcommand("train-teacher", "train the annotation model");
  CLI::App* label = app.add_subcommand("label", "calibrate thresholds and pseudo-label the pool");
  CLI::App* train = app.add_subcommand("train", "train the baseline and SSL students");
  CLI::App* evalc = app.add_subcommand("eval", "evaluate students against the baseline OP");
  CLI::App* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
  CLI::App* absize = app.add_subcommand("ablate-size", "pseudo-only training size sweep");
  CLI::App* absub =
      app.add_subcommand("ablate-subsampling", "pseudo-only training with/without subsampling");
  CLI::App* abeh = app.add_subcommand("ablate-easy-hard", "DET curves on easy/hard eval splits");
  CLI::App* report = app.add_subcommand("report", "recompute the report from DET files");
  for (CLI::App* cmd : {gen, teach, label, train, evalc, pipeline, absize, absub, abeh, report})
    add_common(cmd, args);
  absize->add_option("--sizes", sizes_arg, "pseudo-data sizes to sweep")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    kws::ExperimentConfig cfg = resolve(args);
    if (gen->parsed()) {
      auto ws = stage_workspace(cfg);
      kws::exp::run_gen(ws);
    } else if (teach->parsed()) {
      auto ws = stage_workspace(cfg);
      kws::exp::run_train_teacher(ws);
    } else if (label->parsed()) {
      auto ws = stage_workspace(cfg);
      kws::exp::run_label(ws);
    } else if (train->parsed()) {
      auto ws = stage_workspace(cfg);
      kws::exp::run_train(ws);
    } else if (evalc->parsed()) {
      auto ws = stage_workspace(cfg);
      kws::exp::run_eval(ws);
      kws::exp::write_checksums(ws.dir());
    } else if (pipeline->parsed()) {
      kws::exp::run_pipeline(cfg, cfg.out_dir);
    } else if (absize->parsed()) {
      std::vector<int64_t> sizes = sizes_arg.empty() ? cfg.ablation_sizes : sizes_arg;
      kws::exp::run_ablate_size_all(cfg, cfg.out_dir, sizes);
    } else if (absub->parsed()) {
      kws::exp::run_ablate_subsampling_all(cfg, cfg.out_dir);
    } else if (abeh->parsed()) {
      kws::exp::run_ablate_easy_hard_all(cfg, cfg.out_dir);
    } else if (report->parsed()) {
      kws::exp::run_report(kws::exp::seed_dir(cfg.out_dir, cfg, 0));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
