// kws/ssl.hpp

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
// Semi-supervised core: threshold calibration on held-out scores, pseudo-
// label generation with accept/reject thresholds and positive-class
// subsampling, and mixed-supervision student training.

#ifndef KWS_SSL_HPP_
#define KWS_SSL_HPP_

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kws/models.hpp"

namespace kws::ssl {

using feats::MatrixRMf;

struct Thresholds {
  double accept = 1.0;        // scores >= accept become positives (subject to keep)
  double reject = 0.0;        // scores <= reject become negatives
  double positive_keep = 1.0; // probability of keeping an accepted positive
  void validate() const;
};

enum class PseudoDecision : uint8_t { Wakeword, NotWakeword, Discard };
std::string to_string(PseudoDecision d);

// Smallest threshold whose held-out FPR does not exceed target_fpr;
// candidates are the observed scores plus 1. Picking the smallest feasible
// threshold retains the most data.
double calibrate_accept(const std::vector<double>& scores, const std::vector<Label>& labels,
                        double target_fpr);

// Largest threshold whose held-out FRR does not exceed target_frr;
// candidates are the observed scores plus 0. Clamped to accept_threshold
// (sets *clamped when that happens).
double calibrate_reject(const std::vector<double>& scores, const std::vector<Label>& labels,
                        double target_frr, double accept_threshold, bool* clamped = nullptr);

// Solves p*theta / (p*theta + 1 - p) = q for the keep probability theta,
// clamped to (0, 1]; already-balanced or positive-poor pools keep everything.
double derive_positive_keep(double labeled_pos_frac, double pool_pos_frac);

// One pseudo-labeling decision. u is the per-example subsampling draw.
// Branch order matters: a high-score example dropped by subsampling is
// discarded, not relabeled negative.
PseudoDecision pseudo_label(double score, const Thresholds& th, double u);

struct Example {
  int64_t clip_id = 0;
  MatrixRMf window;  // frames x dims for the dataset's window_kind
  std::optional<Label> label;
  double score = std::numeric_limits<double>::quiet_NaN();
  double u = std::numeric_limits<double>::quiet_NaN();
  std::optional<Label> hidden_truth;  // audit channel; never read by training
};

struct Dataset {
  LabelSource source = LabelSource::Unlabeled;
  Domain distribution = Domain::Source;
  feats::ModelKind window_kind = feats::ModelKind::CnnDetector;
  std::vector<Example> examples;

  double positive_fraction() const;  // over labeled examples
  void validate() const;             // label presence must match source
};

// Flattens every example window into one row per example.
nn::Mat<float> stack_windows(const Dataset& ds);

struct LabelCounts {
  int64_t accepted_pos = 0;
  int64_t accepted_neg = 0;
  int64_t discarded = 0;          // score strictly between the thresholds
  int64_t subsample_dropped = 0;  // accept-worthy but dropped by u > keep
  int64_t total() const { return accepted_pos + accepted_neg + discarded + subsample_dropped; }
};

struct PoolDecision {
  int64_t clip_id = 0;
  double score = 0.0;
  double u = 0.0;
  PseudoDecision decision = PseudoDecision::Discard;
};

// Pure decision pass over (clip_id, score) pairs; u is a hash of
// (seed, clip_id), so the output is invariant to input order.
std::vector<PoolDecision> decide_pool(const std::vector<std::pair<int64_t, double>>& scored,
                                      const Thresholds& th, uint64_t seed,
                                      LabelCounts* counts = nullptr);

// Scores the unlabeled pool with the frozen teacher, applies pseudo_label
// per example, and returns the kept examples with their pseudo-labels.
// Throws PipelineError when nothing survives.
Dataset label_pool(nn::Network<float>& teacher, const Dataset& pool, const Thresholds& th,
                   uint64_t seed, LabelCounts* counts = nullptr,
                   std::vector<PoolDecision>* decisions = nullptr);

struct TrainConfig {
  double labeled_weight = 0.7;  // human examples weigh lambda, pseudo 1-lambda
  int batch_size = 32;
  int64_t total_updates = 1500;
  nn::AdamConfig adam;
  uint64_t rng_seed = 0;
};

// Deterministic two-stream batcher: each source is round-robined over
// independently shuffled epochs and contributes slots proportionally to its
// size; lambda enters through per-example weights renormalized to mean 1.
class MixedBatcher {
 public:
  MixedBatcher(const Dataset* labeled, const Dataset* pseudo, const TrainConfig& cfg);

  struct Slot {
    bool from_labeled = true;
    size_t index = 0;
  };
  void next_batch(std::vector<Slot>& slots, Eigen::VectorXf& weights);

 private:
  struct Stream {
    std::vector<size_t> order;
    size_t pos = 0;
    Rng rng{0};
    size_t next();
  };
  const Dataset* labeled_;
  const Dataset* pseudo_;
  double lambda_;
  int batch_size_;
  double ratio_labeled_;
  double acc_ = 0.0;
  Stream labeled_stream_, pseudo_stream_;
};

// Mixed-supervision training; the loss trace is appended in place so a
// divergence abort still leaves it populated. Pass pseudo = nullptr (or an
// empty dataset) with lambda = 1 for the supervised baseline.
nn::Network<float> train_student(const Dataset* labeled, const Dataset* pseudo,
                                 const models::ArchSpec& arch, const TrainConfig& cfg,
                                 std::vector<double>& loss_trace);

}  // namespace kws::ssl

#endif  // KWS_SSL_HPP_
