// kws/eval.hpp

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
// Detection metrics, DET curves with baseline-OP normalization, posterior
// smoothing, streaming detection and easy/hard evaluation splits.

#ifndef KWS_EVAL_HPP_
#define KWS_EVAL_HPP_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kws/audio.hpp"
#include "kws/features.hpp"
#include "kws/nn.hpp"

namespace kws::eval {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Predict Wakeword iff score >= threshold.
ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<Label>& labels,
                          double threshold);

// Rates with undefined markers where a denominator is zero.
struct Rates {
  std::optional<double> frr, fdr, fpr, for_rate, precision;
};
Rates rates(const ConfusionCounts& c);

struct DetPoint {
  double threshold = 0.0;
  double frr = 0.0;
  double fdr = 0.0;
};

struct DetCurve {
  std::vector<DetPoint> points;  // sorted by threshold ascending; frr non-decreasing
  std::optional<std::pair<double, double>> op;  // (frr, fdr) anchor, when set
  int64_t dropped_undefined = 0;  // thresholds whose FDR was undefined
};

// One point per candidate threshold (sorted unique scores plus 0 and 1+eps);
// thresholds with undefined FDR are dropped and counted.
DetCurve det_curve(const std::vector<double>& scores, const std::vector<Label>& labels);

// FDR at the given FRR on the curve's achievable envelope (per-FRR minimum
// FDR), linearly interpolated between knots; exact at knots. Throws
// MetricError outside the curve's FRR range.
double fdr_at_frr(const DetCurve& curve, double target_frr);

// 100 * (fdr_base - fdr_at_frr(candidate, frr_base)) / fdr_base; the
// undefined marker propagates when fdr_base is zero.
std::optional<double> relative_fdr_improvement(const DetCurve& candidate,
                                               std::pair<double, double> baseline_op);

// Divides FRR by op.frr and FDR by op.fdr; the op maps to (1, 1).
DetCurve normalize_det(const DetCurve& curve, std::pair<double, double> baseline_op);

// The curve's achievable (frr, fdr) at a decision threshold: the FRR reached
// at that threshold paired with the envelope FDR at that FRR.
std::pair<double, double> operating_point(const DetCurve& curve, double threshold);

// Decision threshold whose FRR is closest to the target (ties toward the
// smaller threshold); candidates are the observed scores plus {0, 1}.
double threshold_for_frr(const std::vector<double>& scores, const std::vector<Label>& labels,
                         double target_frr);

// Posterior smoothing.
std::vector<double> smooth_ema(const std::vector<double>& seq, double alpha);
std::vector<double> smooth_wma(const std::vector<double>& seq, int window);

struct Smoothing {
  enum class Method : uint8_t { Ema, Wma } method = Method::Ema;
  double alpha = 0.2;
  int window = 10;
};
std::vector<double> smooth(const std::vector<double>& seq, const Smoothing& s);

// Slides the model context one frame at a time, smooths the wakeword
// posterior, and reports the center frame of each upward threshold crossing;
// crossings within refractory_frames of the last emission are suppressed.
std::vector<int64_t> streaming_detect(nn::Network<float>& model, const AudioClip& clip,
                                      feats::ModelKind kind, const Smoothing& smoothing,
                                      double threshold, int64_t refractory_frames);

// Partition of example indices by teacher score: hard examples lie inside
// [lo, hi], easy outside. The partition is total.
std::pair<std::vector<size_t>, std::vector<size_t>> split_easy_hard(
    const std::vector<double>& teacher_scores, double lo, double hi);

// DET file: tab-separated threshold/frr/fdr columns, with normalized frr/fdr
// appended when an operating point is supplied; op recorded as metadata.
void write_det_file(const std::string& path, const DetCurve& curve,
                    std::optional<std::pair<double, double>> baseline_op);
struct DetFile {
  DetCurve curve;  // raw columns
  std::optional<std::pair<double, double>> baseline_op;
};
DetFile read_det_file(const std::string& path);

// Standalone SVG plot of normalized DET curves (axes in baseline-OP units).
struct SvgCurve {
  std::string name;
  std::vector<std::pair<double, double>> xy;  // (frr_norm, fdr_norm)
  bool dotted = false;
};
std::string render_det_svg(const std::string& title, const std::vector<SvgCurve>& curves);

}  // namespace kws::eval

#endif  // KWS_EVAL_HPP_
