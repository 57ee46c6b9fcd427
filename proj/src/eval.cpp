// eval.cpp

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

#include "kws/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "kws/models.hpp"

namespace kws::eval {

namespace {
constexpr double kAboveOne = 1.0 + 1e-9;

void check_scored(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw MetricError("scores and labels must be non-empty and equally sized");
}
}  // namespace

ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<Label>& labels,
                          double threshold) {
  check_scored(scores, labels);
  ConfusionCounts c;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool predicted = scores[i] >= threshold;
    bool actual = labels[i] == Label::Wakeword;
    if (predicted && actual) ++c.tp;
    else if (predicted && !actual) ++c.fp;
    else if (!predicted && actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Rates rates(const ConfusionCounts& c) {
  Rates r;
  if (c.tp + c.fn > 0) r.frr = double(c.fn) / double(c.tp + c.fn);
  if (c.tp + c.fp > 0) {
    r.fdr = double(c.fp) / double(c.tp + c.fp);
    r.precision = double(c.tp) / double(c.tp + c.fp);
  }
  if (c.fp + c.tn > 0) r.fpr = double(c.fp) / double(c.fp + c.tn);
  if (c.fn + c.tn > 0) r.for_rate = double(c.fn) / double(c.fn + c.tn);
  return r;
}

DetCurve det_curve(const std::vector<double>& scores, const std::vector<Label>& labels) {
  check_scored(scores, labels);
  std::vector<double> pos, neg;
  for (size_t i = 0; i < scores.size(); ++i)
    (labels[i] == Label::Wakeword ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty())
    throw MetricError("DET curve needs both classes present");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> thresholds(scores);
  thresholds.push_back(0.0);
  thresholds.push_back(kAboveOne);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  DetCurve curve;
  for (double t : thresholds) {
    int64_t tp = int64_t(pos.end() - std::lower_bound(pos.begin(), pos.end(), t));
    int64_t fp = int64_t(neg.end() - std::lower_bound(neg.begin(), neg.end(), t));
    int64_t fn = int64_t(pos.size()) - tp;
    if (tp + fp == 0) {
      ++curve.dropped_undefined;
      continue;
    }
    DetPoint p;
    p.threshold = t;
    p.frr = double(fn) / double(pos.size());
    p.fdr = double(fp) / double(tp + fp);
    curve.points.push_back(p);
  }
  return curve;
}

namespace {

// Achievable envelope: per distinct FRR the minimum FDR, sorted by FRR.
std::vector<std::pair<double, double>> envelope(const DetCurve& curve) {
  if (curve.points.empty()) throw MetricError("empty DET curve");
  std::vector<std::pair<double, double>> env;
  for (const DetPoint& p : curve.points) {
    if (!env.empty() && env.back().first == p.frr)
      env.back().second = std::min(env.back().second, p.fdr);
    else
      env.emplace_back(p.frr, p.fdr);
  }
  return env;
}

}  // namespace

double fdr_at_frr(const DetCurve& curve, double target_frr) {
  std::vector<std::pair<double, double>> env = envelope(curve);
  if (target_frr < env.front().first || target_frr > env.back().first) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "target FRR %.6g outside the curve's range [%.6g, %.6g]; refusing to "
                  "extrapolate",
                  target_frr, env.front().first, env.back().first);
    throw MetricError(msg);
  }
  for (size_t i = 0; i < env.size(); ++i) {
    if (env[i].first == target_frr) return env[i].second;
    if (env[i].first > target_frr) {
      const auto& [f0, d0] = env[i - 1];
      const auto& [f1, d1] = env[i];
      double t = (target_frr - f0) / (f1 - f0);
      return d0 + t * (d1 - d0);
    }
  }
  return env.back().second;
}

std::optional<double> relative_fdr_improvement(const DetCurve& candidate,
                                               std::pair<double, double> baseline_op) {
  if (baseline_op.second == 0.0) return std::nullopt;
  double fdr = fdr_at_frr(candidate, baseline_op.first);
  return 100.0 * (baseline_op.second - fdr) / baseline_op.second;
}

DetCurve normalize_det(const DetCurve& curve, std::pair<double, double> baseline_op) {
  if (!(baseline_op.first > 0.0) || !(baseline_op.second > 0.0))
    throw MetricError("operating point rates must be positive for normalization");
  DetCurve out = curve;
  for (DetPoint& p : out.points) {
    p.frr /= baseline_op.first;
    p.fdr /= baseline_op.second;
  }
  out.op = {1.0, 1.0};
  return out;
}

std::pair<double, double> operating_point(const DetCurve& curve, double threshold) {
  // Counts are step functions of the threshold, so the reached FRR is that
  // of the first curve point at or above it.
  const DetPoint* hit = nullptr;
  for (const DetPoint& p : curve.points)
    if (p.threshold >= threshold) {
      hit = &p;
      break;
    }
  if (!hit)
    throw MetricError("threshold rejects everything: no operating point on the curve");
  return {hit->frr, fdr_at_frr(curve, hit->frr)};
}

double threshold_for_frr(const std::vector<double>& scores, const std::vector<Label>& labels,
                         double target_frr) {
  check_scored(scores, labels);
  std::vector<double> pos;
  for (size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == Label::Wakeword) pos.push_back(scores[i]);
  if (pos.empty()) throw MetricError("no positives to anchor an FRR target");
  std::sort(pos.begin(), pos.end());

  std::vector<double> candidates(scores);
  candidates.push_back(0.0);
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  double best_t = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    int64_t fn = int64_t(std::lower_bound(pos.begin(), pos.end(), t) - pos.begin());
    double frr = double(fn) / double(pos.size());
    double gap = std::fabs(frr - target_frr);
    if (gap < best_gap) {
      best_gap = gap;
      best_t = t;
    }
  }
  return best_t;
}

std::vector<double> smooth_ema(const std::vector<double>& seq, double alpha) {
  if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("EMA alpha must lie in (0, 1]");
  std::vector<double> out(seq.size());
  for (size_t i = 0; i < seq.size(); ++i)
    out[i] = i == 0 ? seq[0] : alpha * seq[i] + (1.0 - alpha) * out[i - 1];
  return out;
}

std::vector<double> smooth_wma(const std::vector<double>& seq, int window) {
  if (window < 1) throw ConfigError("WMA window must be at least 1");
  std::vector<double> out(seq.size());
  double acc = 0.0;
  for (size_t i = 0; i < seq.size(); ++i) {
    acc += seq[i];
    if (i >= size_t(window)) acc -= seq[i - size_t(window)];
    out[i] = acc / double(std::min<size_t>(i + 1, size_t(window)));
  }
  return out;
}

std::vector<double> smooth(const std::vector<double>& seq, const Smoothing& s) {
  return s.method == Smoothing::Method::Ema ? smooth_ema(seq, s.alpha)
                                            : smooth_wma(seq, s.window);
}

std::vector<int64_t> streaming_detect(nn::Network<float>& model, const AudioClip& clip,
                                      feats::ModelKind kind, const Smoothing& smoothing,
                                      double threshold, int64_t refractory_frames) {
  feats::MatrixXd features = feats::lfbe_of_signal(clip.samples, feats::feature_dims(kind));
  const int ctx = feats::context_frames(kind);
  const int64_t frames = features.rows();
  if (frames < ctx) throw ContractError("clip too short for one model context window");

  const int64_t positions = frames - ctx + 1;
  feats::WindowShape shape = feats::model_input_shape(kind);
  nn::Mat<float> rows(positions, Eigen::Index(shape.frames) * shape.dims);
  for (int64_t t = 0; t < positions; ++t) {
    feats::MatrixXd win = feats::window_for_model(features, kind, t + ctx / 2);
    for (int r = 0; r < shape.frames; ++r)
      for (int c = 0; c < shape.dims; ++c)
        rows(t, Eigen::Index(r) * shape.dims + c) = float(win(r, c));
  }
  std::vector<double> posteriors = models::score_windows(model, rows);
  std::vector<double> smoothed = smooth(posteriors, smoothing);

  std::vector<int64_t> detections;
  int64_t last = -1;
  for (int64_t t = 0; t < positions; ++t) {
    bool above = smoothed[size_t(t)] >= threshold;
    bool rising = above && (t == 0 || smoothed[size_t(t - 1)] < threshold);
    if (!rising) continue;
    int64_t frame = t + ctx / 2;
    if (last >= 0 && frame - last < refractory_frames) continue;
    detections.push_back(frame);
    last = frame;
  }
  return detections;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_easy_hard(
    const std::vector<double>& teacher_scores, double lo, double hi) {
  if (!(lo < hi) || lo < 0.0 || hi > 1.0)
    throw ConfigError("easy/hard band requires 0 <= lo < hi <= 1");
  std::vector<size_t> easy, hard;
  for (size_t i = 0; i < teacher_scores.size(); ++i)
    (teacher_scores[i] >= lo && teacher_scores[i] <= hi ? hard : easy).push_back(i);
  if (easy.empty() || hard.empty())
    std::fprintf(stderr, "warning: easy/hard split produced an empty partition (band [%g, %g])\n",
                 lo, hi);
  return {easy, hard};
}

void write_det_file(const std::string& path, const DetCurve& curve,
                    std::optional<std::pair<double, double>> baseline_op) {
  std::ostringstream out;
  char buf[256];
  if (baseline_op) {
    std::snprintf(buf, sizeof buf, "# op_frr %.17g\n# op_fdr %.17g\n", baseline_op->first,
                  baseline_op->second);
    out << buf;
  }
  out << "# threshold\tfrr\tfdr";
  if (baseline_op) out << "\tfrr_norm\tfdr_norm";
  out << '\n';
  for (const DetPoint& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\t%.17g", p.threshold, p.frr, p.fdr);
    out << buf;
    if (baseline_op) {
      std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g", p.frr / baseline_op->first,
                    p.fdr / baseline_op->second);
      out << buf;
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

DetFile read_det_file(const std::string& path) {
  std::istringstream in(read_text_file(path));
  DetFile out;
  double op_frr = 0.0, op_fdr = 0.0;
  bool have_frr = false, have_fdr = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# op_frr ", 0) == 0) {
        op_frr = std::stod(line.substr(9));
        have_frr = true;
      } else if (line.rfind("# op_fdr ", 0) == 0) {
        op_fdr = std::stod(line.substr(9));
        have_fdr = true;
      }
      continue;
    }
    std::istringstream ls(line);
    DetPoint p;
    ls >> p.threshold >> p.frr >> p.fdr;
    if (!ls) throw IoError("malformed DET line in " + path);
    out.curve.points.push_back(p);
  }
  if (have_frr && have_fdr) out.baseline_op = {op_frr, op_fdr};
  return out;
}

std::string render_det_svg(const std::string& title, const std::vector<SvgCurve>& curves) {
  const double w = 640, h = 480, ml = 70, mr = 20, mt = 40, mb = 55;
  double max_axis = 2.0;
  for (const SvgCurve& c : curves)
    for (auto [x, y] : c.xy) {
      if (std::isfinite(x)) max_axis = std::max(max_axis, std::min(x, 3.0));
      if (std::isfinite(y)) max_axis = std::max(max_axis, std::min(y, 3.0));
    }
  auto px = [&](double v) { return ml + (w - ml - mr) * v / max_axis; };
  auto py = [&](double v) { return h - mb - (h - mt - mb) * v / max_axis; };

  std::ostringstream s;
  char buf[512];
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << int(w) << "\" height=\"" << int(h)
    << "\" viewBox=\"0 0 " << int(w) << " " << int(h) << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
                "text-anchor=\"middle\">%s</text>\n",
                ml + (w - ml - mr) / 2, title.c_str());
  s << buf;
  for (double g = 0.0; g <= max_axis + 1e-9; g += 0.5) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n",
                  px(g), py(0.0), px(g), py(max_axis));
    s << buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n",
                  px(0.0), py(g), px(max_axis), py(g));
    s << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">%.1f</text>\n",
                  px(g), h - mb + 16, g);
    s << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  ml - 6, py(g) + 4, g);
    s << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"13\" "
                "text-anchor=\"middle\">FRR / baseline OP</text>\n",
                ml + (w - ml - mr) / 2, h - 12.0);
  s << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"16\" y=\"%g\" font-family=\"sans-serif\" font-size=\"13\" "
                "text-anchor=\"middle\" transform=\"rotate(-90 16 %g)\">FDR / baseline "
                "OP</text>\n",
                mt + (h - mt - mb) / 2, mt + (h - mt - mb) / 2);
  s << buf;
  // Baseline operating point marker at (1, 1).
  std::snprintf(buf, sizeof buf,
                "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"none\" stroke=\"#333333\"/>\n",
                px(1.0), py(1.0));
  s << buf;

  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};
  int ci = 0;
  double legend_y = mt + 8;
  for (const SvgCurve& c : curves) {
    const char* color = colors[ci % 4];
    std::ostringstream pts;
    for (auto [x, y] : c.xy) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      double cx = std::min(x, max_axis), cy = std::min(y, max_axis);
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(cx), py(cy));
      pts << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" stroke-width=\"1.8\"%s/>\n",
                  pts.str().c_str(), color,
                  c.dotted ? " stroke-dasharray=\"2 3\"" : "");
    s << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"12\" "
                  "fill=\"%s\">%s</text>\n",
                  w - mr - 170.0, legend_y, color, c.name.c_str());
    s << buf;
    legend_y += 16;
    ++ci;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace kws::eval
