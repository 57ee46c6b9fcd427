// ssl.cpp

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

#include "kws/ssl.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace kws::ssl {

namespace {
constexpr uint64_t kTagSubsampleU = 0x5542;
constexpr uint64_t kTagModelInit = 0x4D49;
constexpr uint64_t kTagLabeledStream = 0x4C53;
constexpr uint64_t kTagPseudoStream = 0x5053;
}  // namespace

void Thresholds::validate() const {
  if (accept < 0.0 || accept > 1.0 || reject < 0.0 || reject > 1.0)
    throw ConfigError("thresholds must lie in [0, 1]");
  if (reject > accept) throw ConfigError("reject threshold exceeds accept threshold");
  if (positive_keep < 0.0 || positive_keep > 1.0)
    throw ConfigError("positive_keep must lie in [0, 1]");
}

std::string to_string(PseudoDecision d) {
  switch (d) {
    case PseudoDecision::Wakeword: return "Wakeword";
    case PseudoDecision::NotWakeword: return "NotWakeword";
    default: return "Discard";
  }
}

namespace {

void check_scored_input(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw CalibrationError("scores and labels must be non-empty and equally sized");
}

std::vector<double> class_scores(const std::vector<double>& scores,
                                 const std::vector<Label>& labels, Label which) {
  std::vector<double> out;
  for (size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == which) out.push_back(scores[i]);
  std::sort(out.begin(), out.end());
  return out;
}

// Count of sorted values >= t.
int64_t count_ge(const std::vector<double>& sorted, double t) {
  return int64_t(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
}
// Count of sorted values <= t.
int64_t count_le(const std::vector<double>& sorted, double t) {
  return int64_t(std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
}

}  // namespace

double calibrate_accept(const std::vector<double>& scores, const std::vector<Label>& labels,
                        double target_fpr) {
  check_scored_input(scores, labels);
  if (!(target_fpr > 0.0) || target_fpr > 1.0)
    throw CalibrationError("target_fpr must lie in (0, 1]");
  std::vector<double> negatives = class_scores(scores, labels, Label::NotWakeword);
  if (negatives.empty()) throw CalibrationError("held-out set contains no negatives");

  std::vector<double> candidates(scores);
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  for (double t : candidates) {
    double fpr = double(count_ge(negatives, t)) / double(negatives.size());
    if (fpr <= target_fpr) return t;
  }
  throw CalibrationError("no threshold in [0, 1] meets the FPR target (negatives scoring 1.0)");
}

double calibrate_reject(const std::vector<double>& scores, const std::vector<Label>& labels,
                        double target_frr, double accept_threshold, bool* clamped) {
  check_scored_input(scores, labels);
  if (target_frr < 0.0 || target_frr >= 1.0)
    throw CalibrationError("target_frr must lie in [0, 1)");
  std::vector<double> positives = class_scores(scores, labels, Label::Wakeword);
  if (positives.empty()) throw CalibrationError("held-out set contains no positives");

  std::vector<double> candidates(scores);
  candidates.push_back(0.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  if (clamped) *clamped = false;
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
    double frr = double(count_le(positives, *it)) / double(positives.size());
    if (frr <= target_frr) {
      if (*it > accept_threshold) {
        if (clamped) *clamped = true;
        std::fprintf(stderr,
                     "warning: reject threshold %.6g clamped to accept threshold %.6g\n", *it,
                     accept_threshold);
        return accept_threshold;
      }
      return *it;
    }
  }
  throw CalibrationError("no threshold in [0, 1] meets the FRR target (positives scoring 0.0)");
}

double derive_positive_keep(double labeled_pos_frac, double pool_pos_frac) {
  if (!(pool_pos_frac > 0.0) || pool_pos_frac >= 1.0)
    throw DerivationError("pool positive fraction must lie in (0, 1); got " +
                          std::to_string(pool_pos_frac));
  if (!(labeled_pos_frac > 0.0) || labeled_pos_frac >= 1.0)
    throw DerivationError("labeled positive fraction must lie in (0, 1); got " +
                          std::to_string(labeled_pos_frac));
  if (pool_pos_frac <= labeled_pos_frac) {
    if (pool_pos_frac < labeled_pos_frac)
      std::fprintf(stderr,
                   "warning: pool is no richer in positives (%.4f) than the target (%.4f); "
                   "keeping everything\n",
                   pool_pos_frac, labeled_pos_frac);
    return 1.0;
  }
  double theta = labeled_pos_frac * (1.0 - pool_pos_frac) /
                 (pool_pos_frac * (1.0 - labeled_pos_frac));
  return std::clamp(theta, std::numeric_limits<double>::min(), 1.0);
}

PseudoDecision pseudo_label(double score, const Thresholds& th, double u) {
  if (score >= th.accept && u <= th.positive_keep) return PseudoDecision::Wakeword;
  if (score <= th.reject) return PseudoDecision::NotWakeword;
  return PseudoDecision::Discard;
}

double Dataset::positive_fraction() const {
  int64_t labeled = 0, positive = 0;
  for (const Example& e : examples) {
    if (!e.label) continue;
    ++labeled;
    if (*e.label == Label::Wakeword) ++positive;
  }
  return labeled == 0 ? 0.0 : double(positive) / double(labeled);
}

void Dataset::validate() const {
  for (const Example& e : examples) {
    if (source == LabelSource::Unlabeled && e.label)
      throw ContractError("unlabeled dataset carries a label");
    if (source != LabelSource::Unlabeled && !e.label)
      throw ContractError("labeled dataset misses a label");
  }
}

nn::Mat<float> stack_windows(const Dataset& ds) {
  if (ds.examples.empty()) return nn::Mat<float>(0, 0);
  Eigen::Index dim = ds.examples.front().window.size();
  nn::Mat<float> rows(Eigen::Index(ds.examples.size()), dim);
  for (size_t i = 0; i < ds.examples.size(); ++i) {
    const MatrixRMf& w = ds.examples[i].window;
    if (w.size() != dim) throw ContractError("inconsistent window shapes in dataset");
    rows.row(Eigen::Index(i)) = Eigen::Map<const Eigen::RowVectorXf>(w.data(), dim);
  }
  return rows;
}

std::vector<PoolDecision> decide_pool(const std::vector<std::pair<int64_t, double>>& scored,
                                      const Thresholds& th, uint64_t seed, LabelCounts* counts) {
  th.validate();
  std::vector<PoolDecision> out;
  out.reserve(scored.size());
  LabelCounts local;
  for (const auto& [clip_id, score] : scored) {
    PoolDecision d;
    d.clip_id = clip_id;
    d.score = score;
    d.u = hash_uniform(mix64(seed, kTagSubsampleU), uint64_t(clip_id));
    d.decision = pseudo_label(score, th, d.u);
    switch (d.decision) {
      case PseudoDecision::Wakeword: ++local.accepted_pos; break;
      case PseudoDecision::NotWakeword: ++local.accepted_neg; break;
      case PseudoDecision::Discard:
        if (score >= th.accept)
          ++local.subsample_dropped;
        else
          ++local.discarded;
        break;
    }
    out.push_back(d);
  }
  if (counts) *counts = local;
  return out;
}

Dataset label_pool(nn::Network<float>& teacher, const Dataset& pool, const Thresholds& th,
                   uint64_t seed, LabelCounts* counts, std::vector<PoolDecision>* decisions) {
  th.validate();
  if (pool.source != LabelSource::Unlabeled)
    throw ContractError("label_pool expects an unlabeled pool");
  if (pool.distribution != Domain::Shifted)
    throw ContractError("label_pool expects the shifted-distribution pool");

  nn::Mat<float> rows = stack_windows(pool);
  std::vector<double> scores =
      pool.examples.empty() ? std::vector<double>{} : models::score_windows(teacher, rows);
  std::vector<std::pair<int64_t, double>> scored(pool.examples.size());
  for (size_t i = 0; i < pool.examples.size(); ++i)
    scored[i] = {pool.examples[i].clip_id, scores[i]};

  LabelCounts local;
  std::vector<PoolDecision> dec = decide_pool(scored, th, seed, &local);

  Dataset out;
  out.source = LabelSource::Pseudo;
  out.distribution = pool.distribution;
  out.window_kind = pool.window_kind;
  for (size_t i = 0; i < dec.size(); ++i) {
    if (dec[i].decision == PseudoDecision::Discard) continue;
    Example e = pool.examples[i];
    e.label = dec[i].decision == PseudoDecision::Wakeword ? Label::Wakeword : Label::NotWakeword;
    e.score = dec[i].score;
    e.u = dec[i].u;
    out.examples.push_back(std::move(e));
  }
  if (counts) *counts = local;
  if (decisions) *decisions = std::move(dec);
  if (out.examples.empty() && !pool.examples.empty()) {
    char msg[256];
    std::snprintf(msg, sizeof msg,
                  "pseudo-labeling kept nothing: accept=%.6g reject=%.6g keep=%.6g "
                  "(accepted+ %lld, accepted- %lld, discarded %lld, subsample-dropped %lld)",
                  th.accept, th.reject, th.positive_keep, (long long)local.accepted_pos,
                  (long long)local.accepted_neg, (long long)local.discarded,
                  (long long)local.subsample_dropped);
    throw PipelineError(msg);
  }
  return out;
}

size_t MixedBatcher::Stream::next() {
  if (pos == order.size()) {
    rng.shuffle(order);
    pos = 0;
  }
  return order[pos++];
}

MixedBatcher::MixedBatcher(const Dataset* labeled, const Dataset* pseudo, const TrainConfig& cfg)
    : labeled_(labeled), pseudo_(pseudo), lambda_(cfg.labeled_weight),
      batch_size_(cfg.batch_size) {
  if (lambda_ < 0.0 || lambda_ > 1.0) throw ConfigError("labeled_weight must lie in [0, 1]");
  if (batch_size_ < 1) throw ConfigError("batch_size must be positive");
  size_t nl = labeled_ ? labeled_->examples.size() : 0;
  size_t np = pseudo_ ? pseudo_->examples.size() : 0;
  if (nl == 0 && np == 0) throw ConfigError("no training data");
  if (nl == 0 && lambda_ != 0.0)
    throw ConfigError("labeled data empty: requires labeled_weight = 0");
  if (np == 0 && lambda_ != 1.0)
    throw ConfigError("pseudo data empty: requires labeled_weight = 1");
  ratio_labeled_ = double(nl) / double(nl + np);
  labeled_stream_.order.resize(nl);
  std::iota(labeled_stream_.order.begin(), labeled_stream_.order.end(), size_t(0));
  labeled_stream_.pos = nl;
  labeled_stream_.rng = Rng(mix64(cfg.rng_seed, kTagLabeledStream));
  pseudo_stream_.order.resize(np);
  std::iota(pseudo_stream_.order.begin(), pseudo_stream_.order.end(), size_t(0));
  pseudo_stream_.pos = np;
  pseudo_stream_.rng = Rng(mix64(cfg.rng_seed, kTagPseudoStream));
}

void MixedBatcher::next_batch(std::vector<Slot>& slots, Eigen::VectorXf& weights) {
  slots.resize(size_t(batch_size_));
  weights.resize(batch_size_);
  for (int i = 0; i < batch_size_; ++i) {
    acc_ += ratio_labeled_;
    bool from_labeled = acc_ >= 1.0 - 1e-12;
    if (from_labeled) acc_ -= 1.0;
    Slot& s = slots[size_t(i)];
    s.from_labeled = from_labeled;
    s.index = from_labeled ? labeled_stream_.next() : pseudo_stream_.next();
    weights[i] = float(from_labeled ? lambda_ : 1.0 - lambda_);
  }
  float wsum = weights.sum();
  if (wsum > 0.0f) weights *= float(batch_size_) / wsum;
}

nn::Network<float> train_student(const Dataset* labeled, const Dataset* pseudo,
                                 const models::ArchSpec& arch, const TrainConfig& cfg,
                                 std::vector<double>& loss_trace) {
  if (labeled) labeled->validate();
  if (pseudo) pseudo->validate();
  nn::Network<float> net = models::build<float>(arch, mix64(cfg.rng_seed, kTagModelInit));
  nn::Adam<float> adam(net, cfg.adam);
  MixedBatcher batcher(labeled && !labeled->examples.empty() ? labeled : nullptr,
                       pseudo && !pseudo->examples.empty() ? pseudo : nullptr, cfg);

  const Eigen::Index dim = net.input_size();
  nn::Mat<float> batch(cfg.batch_size, dim);
  std::vector<Label> labels(size_t(cfg.batch_size));
  std::vector<MixedBatcher::Slot> slots;
  Eigen::VectorXf weights;
  for (int64_t step = 0; step < cfg.total_updates; ++step) {
    batcher.next_batch(slots, weights);
    for (int i = 0; i < cfg.batch_size; ++i) {
      const Dataset* src = slots[size_t(i)].from_labeled ? labeled : pseudo;
      const Example& e = src->examples[slots[size_t(i)].index];
      if (e.window.size() != dim)
        throw ContractError("example window does not match the architecture input");
      batch.row(i) = Eigen::Map<const Eigen::RowVectorXf>(e.window.data(), dim);
      labels[size_t(i)] = *e.label;
    }
    double loss = net.train_step(batch, labels, weights, adam);
    loss_trace.push_back(loss);
  }
  return net;
}

}  // namespace kws::ssl
