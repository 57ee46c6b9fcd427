// kws/features.hpp

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

#ifndef KWS_FEATURES_HPP_
#define KWS_FEATURES_HPP_

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kws/audio.hpp"

namespace kws::feats {

// Front-end conventions: 25 ms Hann window, 10 ms hop, 512-point FFT,
// HTK mel scale over 0..8000 Hz with unit-peak triangles, natural-log
// energies floored at kEnergyFloor.
constexpr int kWinSamples = 400;
constexpr int kHopSamples = 160;
constexpr int kFftSize = 512;
constexpr int kSpectrumBins = kFftSize / 2 + 1;
constexpr double kEnergyFloor = 1e-10;
constexpr double kFrameShiftMs = 10.0;

using Eigen::MatrixXd;
using Eigen::VectorXd;
using MatrixRMf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int64_t num_frames(int64_t n_samples);

// Frame t covers samples [t*160, t*160+400); a trailing partial window is
// dropped. Hann-windowed rows. Throws ContractError when no full frame fits.
MatrixXd frame_signal(std::span<const double> samples);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Sparse triangular filterbank.
class MelBank {
 public:
  explicit MelBank(int n_mels);
  int n_mels() const { return n_mels_; }
  double center_hz(int band) const { return centers_hz_[size_t(band)]; }
  // Linear band energies of a power spectrum (kSpectrumBins values).
  VectorXd apply(const VectorXd& power) const;

 private:
  int n_mels_;
  std::vector<double> centers_hz_;
  std::vector<int> first_bin_;
  std::vector<std::vector<double>> weights_;
};

// Power spectra of windowed frames, frames x kSpectrumBins.
MatrixXd power_spectrum(const MatrixXd& frames);

// Log mel filterbank energies. n_mels must be 20 or 64.
MatrixXd lfbe(const MatrixXd& frames, int n_mels);
MatrixXd lfbe_from_power(const MatrixXd& power, int n_mels);
MatrixXd lfbe_of_signal(std::span<const double> samples, int n_mels);

enum class ModelKind : uint8_t { CnnDetector, FcnDetector, Annotator };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// Pre-downsample context length and feature dimensionality per architecture.
int context_frames(ModelKind k);  // 100 / 81 / 195
int feature_dims(ModelKind k);    // 64 / 20 / 64
// Model-input shape after the FCN's keep-every-3rd downsampling.
struct WindowShape {
  int frames;
  int dims;
};
WindowShape model_input_shape(ModelKind k);  // 100x64 / 27x20 / 195x64

// Frame whose center (t*160 + 200) is nearest the given sample index.
int64_t frame_of_sample(int64_t sample_index);

// Extracts the architecture's context window from full-clip LFBE features,
// centered on center_frame (clip midpoint when absent), edge-replicating
// when the clip is too short. FCN windows keep frames 0,3,...,78.
MatrixXd window_for_model(const MatrixXd& clip_lfbe, ModelKind kind,
                          std::optional<int64_t> center_frame);

// Label-aware wrapper: positives must carry a wake center.
MatrixXd window_for_example(const MatrixXd& clip_lfbe, ModelKind kind,
                            std::optional<Label> label,
                            std::optional<int64_t> wake_center_frame);

struct FeatureWindow {
  MatrixRMf values;  // frames x dims (post-downsample)
  double frame_shift_ms = kFrameShiftMs;
  double first_frame_time_ms = 0.0;
  std::optional<Label> label;
  LabelSource source = LabelSource::Unlabeled;
  int64_t clip_id = 0;
};

// Feature cache file: text header (count + one meta line per window holding
// dims, frames, frame shift, label, source, clip id) followed by row-major
// little-endian float32 data.
void save_feature_cache(const std::string& path, const std::vector<FeatureWindow>& windows);
std::vector<FeatureWindow> load_feature_cache(const std::string& path);

}  // namespace kws::feats

#endif  // KWS_FEATURES_HPP_
