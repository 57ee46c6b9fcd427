// kws/experiment.hpp

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
//
// Experiment harness: corpus generation, teacher training, threshold
// calibration, pool labeling, baseline/SSL student training, evaluation
// against the baseline operating point, and the three ablations.

#ifndef KWS_EXPERIMENT_HPP_
#define KWS_EXPERIMENT_HPP_

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kws/config.hpp"
#include "kws/eval.hpp"
#include "kws/ssl.hpp"

namespace kws::exp {

// Per-run working state for one seed. Stage functions memoize corpus access,
// windowed datasets and checkpoints here; everything they persist lands
// under run_dir so stages can also execute as separate processes.
class Workspace {
 public:
  Workspace(const ExperimentConfig& cfg, std::string run_dir, uint64_t run_seed);

  const ExperimentConfig& cfg() const { return cfg_; }
  const std::string& dir() const { return dir_; }
  uint64_t run_seed() const { return run_seed_; }

  const synth::CorpusReader& corpus();  // throws PipelineError if gen has not run
  ssl::Dataset& windows(synth::Split split, feats::ModelKind kind);
  nn::Network<float>& teacher();
  nn::Network<float>& baseline();
  nn::Network<float>& student();
  ssl::Thresholds thresholds();  // from thresholds.cfg

  // Frees memoized windows of one split (the pool is ~1 GB at desk scale).
  void release_windows(synth::Split split);

  void set_teacher(nn::Network<float> net);
  void set_baseline(nn::Network<float> net);
  void set_student(nn::Network<float> net);
  void set_thresholds(const ssl::Thresholds& th);

 private:
  void materialize_split(synth::Split split, feats::ModelKind kind);

  ExperimentConfig cfg_;
  std::string dir_;
  uint64_t run_seed_;
  std::optional<synth::CorpusReader> corpus_;
  std::map<std::pair<int, int>, ssl::Dataset> windows_;
  std::optional<nn::Network<float>> teacher_, baseline_, student_;
  std::optional<ssl::Thresholds> thresholds_;
};

// Pipeline stages. Each persists its artifacts under ws.dir().
void run_gen(Workspace& ws);
void run_train_teacher(Workspace& ws);
void run_label(Workspace& ws);
void run_train(Workspace& ws);

struct EvalReport {
  std::optional<double> rel_fdr_shift;     // percent
  std::optional<double> rel_fdr_no_shift;  // percent
};
EvalReport run_eval(Workspace& ws);

// All stages for every seed (seed, seed+1, ...); per-seed directories when
// num_seeds > 1, plus an aggregate report. Returns mean improvements.
EvalReport run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir);

struct SizeRow {
  int64_t size = 0;
  std::optional<double> rel_fdr_shift, rel_fdr_no_shift;
};
std::vector<SizeRow> run_ablate_size(Workspace& ws, const std::vector<int64_t>& sizes);

struct SubsamplingRow {
  bool subsampled = false;
  double pseudo_pos_fraction = 0.0;
  std::optional<double> rel_fdr_shift, rel_fdr_no_shift;
};
std::vector<SubsamplingRow> run_ablate_subsampling(Workspace& ws);

struct EasyHardCell {
  std::string name;  // easy_shift, easy_noshift, hard_shift, hard_noshift
  bool skipped = false;
  std::optional<double> rel_fdr;
  std::string det_path;
};
std::vector<EasyHardCell> run_ablate_easy_hard(Workspace& ws);

// Multi-seed ablation drivers (reuse per-seed pipeline artifacts).
void run_ablate_size_all(const ExperimentConfig& cfg, const std::string& out_dir,
                         const std::vector<int64_t>& sizes);
void run_ablate_subsampling_all(const ExperimentConfig& cfg, const std::string& out_dir);
void run_ablate_easy_hard_all(const ExperimentConfig& cfg, const std::string& out_dir);

// Recomputes report.tsv from the persisted DET files alone.
void run_report(const std::string& run_dir);

// FNV-1a checksum manifest of every artifact under the directory.
void write_checksums(const std::string& dir);

std::string seed_dir(const std::string& out_dir, const ExperimentConfig& cfg, int seed_index);

// Mean LFBE shift-measurability check (source vs shifted pools).
double mean_lfbe_distance(const synth::CorpusReader& corpus, int64_t max_per_side);

}  // namespace kws::exp

#endif  // KWS_EXPERIMENT_HPP_
