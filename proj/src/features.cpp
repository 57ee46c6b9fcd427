// features.cpp

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

#include "kws/features.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <fstream>
#include <sstream>

#include "kws/common.hpp"

namespace kws::feats {

int64_t num_frames(int64_t n_samples) {
  if (n_samples < kWinSamples) return 0;
  return (n_samples - kWinSamples) / kHopSamples + 1;
}

namespace {

const VectorXd& hann_window() {
  static const VectorXd w = [] {
    VectorXd v(kWinSamples);
    for (int i = 0; i < kWinSamples; ++i)
      v[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(kWinSamples));
    return v;
  }();
  return w;
}

}  // namespace

MatrixXd frame_signal(std::span<const double> samples) {
  int64_t frames = num_frames(int64_t(samples.size()));
  if (frames == 0)
    throw ContractError("signal too short for one 25 ms analysis window");
  MatrixXd out(frames, kWinSamples);
  const VectorXd& hann = hann_window();
  for (int64_t t = 0; t < frames; ++t)
    for (int i = 0; i < kWinSamples; ++i)
      out(t, i) = samples[size_t(t * kHopSamples + i)] * hann[i];
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelBank::MelBank(int n_mels) : n_mels_(n_mels) {
  if (n_mels < 1) throw ConfigError("n_mels must be positive");
  double mel_lo = hz_to_mel(0.0);
  double mel_hi = hz_to_mel(double(kSampleRate) / 2.0);
  std::vector<double> edges_hz(size_t(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges_hz[size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(n_mels + 1));
  const double bin_hz = double(kSampleRate) / double(kFftSize);
  for (int b = 0; b < n_mels; ++b) {
    double lo = edges_hz[size_t(b)], mid = edges_hz[size_t(b) + 1], hi = edges_hz[size_t(b) + 2];
    centers_hz_.push_back(mid);
    int first = -1;
    std::vector<double> w;
    for (int k = 0; k < kSpectrumBins; ++k) {
      double f = double(k) * bin_hz;
      double v = 0.0;
      if (f > lo && f < mid)
        v = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        v = (hi - f) / (hi - mid);
      if (v > 0.0) {
        if (first < 0) first = k;
        w.push_back(v);
      } else if (first >= 0) {
        break;  // triangles are contiguous in bins
      }
    }
    first_bin_.push_back(first < 0 ? 0 : first);
    weights_.push_back(std::move(w));
  }
}

VectorXd MelBank::apply(const VectorXd& power) const {
  VectorXd out(n_mels_);
  for (int b = 0; b < n_mels_; ++b) {
    const std::vector<double>& w = weights_[size_t(b)];
    double acc = 0.0;
    int k0 = first_bin_[size_t(b)];
    for (size_t j = 0; j < w.size(); ++j) acc += w[j] * power[k0 + int(j)];
    out[b] = acc;
  }
  return out;
}

MatrixXd power_spectrum(const MatrixXd& frames) {
  MatrixXd out(frames.rows(), kSpectrumBins);
  // One plan per thread; planning dominates per-call cost otherwise.
  static thread_local Eigen::FFT<double> fft;
  static thread_local std::vector<double> buf(kFftSize, 0.0);
  static thread_local std::vector<std::complex<double>> spec(kFftSize);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    for (int i = 0; i < kWinSamples; ++i) buf[size_t(i)] = frames(t, i);
    std::fill(buf.begin() + kWinSamples, buf.end(), 0.0);
    fft.fwd(spec, buf);
    for (int k = 0; k < kSpectrumBins; ++k) out(t, k) = std::norm(spec[size_t(k)]);
  }
  return out;
}

MatrixXd lfbe_from_power(const MatrixXd& power, int n_mels) {
  if (n_mels != 20 && n_mels != 64)
    throw ConfigError("LFBE dimensionality must be 20 or 64, got " + std::to_string(n_mels));
  static const MelBank bank20(20);
  static const MelBank bank64(64);
  const MelBank& bank = n_mels == 20 ? bank20 : bank64;
  MatrixXd out(power.rows(), n_mels);
  for (Eigen::Index t = 0; t < power.rows(); ++t) {
    VectorXd e = bank.apply(power.row(t).transpose());
    for (int b = 0; b < n_mels; ++b) out(t, b) = std::log(std::max(e[b], kEnergyFloor));
  }
  return out;
}

MatrixXd lfbe(const MatrixXd& frames, int n_mels) {
  return lfbe_from_power(power_spectrum(frames), n_mels);
}

MatrixXd lfbe_of_signal(std::span<const double> samples, int n_mels) {
  return lfbe(frame_signal(samples), n_mels);
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::CnnDetector: return "cnn";
    case ModelKind::FcnDetector: return "fcn";
    default: return "annotator";
  }
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cnn") return ModelKind::CnnDetector;
  if (s == "fcn") return ModelKind::FcnDetector;
  if (s == "annotator") return ModelKind::Annotator;
  throw ConfigError("unknown model kind: " + s);
}

int context_frames(ModelKind k) {
  switch (k) {
    case ModelKind::CnnDetector: return 100;
    case ModelKind::FcnDetector: return 81;
    default: return 195;
  }
}

int feature_dims(ModelKind k) { return k == ModelKind::FcnDetector ? 20 : 64; }

WindowShape model_input_shape(ModelKind k) {
  if (k == ModelKind::FcnDetector) return {27, 20};
  return {context_frames(k), 64};
}

int64_t frame_of_sample(int64_t sample_index) {
  // Frame t's window is centered at t*160 + 200.
  int64_t t = int64_t(std::llround((double(sample_index) - 200.0) / double(kHopSamples)));
  return std::max<int64_t>(t, 0);
}

MatrixXd window_for_model(const MatrixXd& clip_lfbe, ModelKind kind,
                          std::optional<int64_t> center_frame) {
  int ctx = context_frames(kind);
  int dims = feature_dims(kind);
  if (clip_lfbe.cols() != dims)
    throw ContractError("feature dimensionality " + std::to_string(clip_lfbe.cols()) +
                        " does not match architecture (" + std::to_string(dims) + ")");
  int64_t frames = clip_lfbe.rows();
  if (frames < 1) throw ContractError("empty feature matrix");
  int64_t c = center_frame ? *center_frame : frames / 2;
  int64_t lead = ctx / 2;
  MatrixXd win(ctx, dims);
  for (int r = 0; r < ctx; ++r) {
    int64_t src = std::clamp<int64_t>(c - lead + r, 0, frames - 1);
    win.row(r) = clip_lfbe.row(src);
  }
  if (kind != ModelKind::FcnDetector) return win;
  // Keep frames 0, 3, ..., 78.
  MatrixXd ds(27, dims);
  for (int r = 0; r < 27; ++r) ds.row(r) = win.row(3 * r);
  return ds;
}

MatrixXd window_for_example(const MatrixXd& clip_lfbe, ModelKind kind,
                            std::optional<Label> label,
                            std::optional<int64_t> wake_center_frame) {
  if (label && *label == Label::Wakeword && !wake_center_frame)
    throw ContractError("positive example without a wake center");
  std::optional<int64_t> center;
  if (label && *label == Label::Wakeword) center = wake_center_frame;
  return window_for_model(clip_lfbe, kind, center);
}

void save_feature_cache(const std::string& path, const std::vector<FeatureWindow>& windows) {
  std::ostringstream header;
  header << "KWSFEAT 1\ncount " << windows.size() << '\n';
  for (const FeatureWindow& w : windows) {
    header << "meta " << w.clip_id << ' ' << w.values.rows() << ' ' << w.values.cols() << ' '
           << w.frame_shift_ms << ' ' << w.first_frame_time_ms << ' '
           << (w.label ? kws::to_string(*w.label) : std::string("-")) << ' '
           << kws::to_string(w.source) << '\n';
  }
  header << "data\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  std::string h = header.str();
  out.write(h.data(), std::streamsize(h.size()));
  std::vector<uint8_t> buf;
  for (const FeatureWindow& w : windows) {
    buf.clear();
    buf.reserve(size_t(w.values.size()) * 4);
    for (Eigen::Index r = 0; r < w.values.rows(); ++r)
      for (Eigen::Index c = 0; c < w.values.cols(); ++c) append_le_f32(buf, w.values(r, c));
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<FeatureWindow> load_feature_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "KWSFEAT 1")
    throw IoError("bad feature cache magic in " + path);
  if (!std::getline(in, line) || line.rfind("count ", 0) != 0)
    throw IoError("missing count in " + path);
  size_t count = std::stoull(line.substr(6));
  std::vector<FeatureWindow> windows(count);
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line) || line.rfind("meta ", 0) != 0)
      throw IoError("missing meta line in " + path);
    std::istringstream ls(line.substr(5));
    int64_t clip_id, rows, cols;
    double shift_ms, first_ms;
    std::string label, source;
    ls >> clip_id >> rows >> cols >> shift_ms >> first_ms >> label >> source;
    if (!ls) throw IoError("malformed meta line in " + path);
    FeatureWindow& w = windows[i];
    w.clip_id = clip_id;
    w.values.resize(rows, cols);
    w.frame_shift_ms = shift_ms;
    w.first_frame_time_ms = first_ms;
    if (label != "-") w.label = label_from_string(label);
    w.source = label_source_from_string(source);
  }
  if (!std::getline(in, line) || line != "data") throw IoError("missing data marker in " + path);
  for (FeatureWindow& w : windows) {
    std::vector<uint8_t> buf(size_t(w.values.size()) * 4);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!in) throw IoError("short read in " + path);
    const uint8_t* p = buf.data();
    for (Eigen::Index r = 0; r < w.values.rows(); ++r)
      for (Eigen::Index c = 0; c < w.values.cols(); ++c, p += 4)
        w.values(r, c) = read_le_f32(p);
  }
  return windows;
}

}  // namespace kws::feats
