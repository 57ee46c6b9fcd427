// kws/config.hpp

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

#ifndef KWS_CONFIG_HPP_
#define KWS_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kws/features.hpp"
#include "kws/synth.hpp"

namespace kws {

// Full experiment description. Serialized as a line-based key=value file
// with [section] headers; a persisted snapshot re-runs bit-identically.
struct ExperimentConfig {
  // [experiment]
  uint64_t seed = 1;
  int num_seeds = 1;
  std::string out_dir = "out";

  // [corpus]
  int64_t train_count = 4000;
  double train_pos_fraction = 0.5;
  int64_t pool_count = 20000;
  double pool_pos_fraction = 0.72;
  int64_t heldout_count = 2000;
  double heldout_pos_fraction = 0.5;
  int64_t eval_count = 2000;
  double eval_pos_fraction = 0.5;
  double clip_seconds = synth::kDefaultClipSeconds;
  double snr_spread_db = 16.0;
  double shift_margin = 1.0;  // required mean-LFBE L2 distance source vs shifted

  // [source] and [shift]
  ShiftParams source_params{-4.0, 0.0, 0.0, 0.0, 0};
  ShiftParams shift_params{18.0, 0.10, -1.0, 0.06, 0};

  // [teacher]
  double teacher_width_scale = 0.125;
  double teacher_dropout = 0.2;
  int64_t teacher_updates = 2000;

  // [student]
  feats::ModelKind student_kind = feats::ModelKind::CnnDetector;
  double student_width_scale = 0.125;
  double student_dropout = 0.2;
  int64_t student_updates = 1500;

  // [training]
  int batch_size = 32;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double labeled_weight = 0.8;  // lambda

  // [calibration]
  double target_fpr = 0.02;
  double target_frr = 0.02;
  double op_frr = 0.05;  // held-out FRR anchoring the baseline operating point

  // [smoothing]
  double ema_alpha = 0.2;
  int wma_window = 10;
  double detect_threshold = 0.5;
  int64_t refractory_frames = 80;

  // [ablation]
  std::vector<int64_t> ablation_sizes = {250, 2000, 8000};

  // [eval] easy/hard band; negative means "use the calibrated thresholds".
  double hard_band_lo = -1.0;
  double hard_band_hi = -1.0;

  // [thresholds] echoed into the snapshot after calibration; informational.
  std::optional<double> calibrated_accept, calibrated_reject, calibrated_keep;

  synth::CorpusSpec corpus_spec(uint64_t run_seed) const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Applies one "section.key=value" override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

}  // namespace kws

#endif  // KWS_CONFIG_HPP_
