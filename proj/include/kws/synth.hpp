// kws/synth.hpp

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

#ifndef KWS_SYNTH_HPP_
#define KWS_SYNTH_HPP_

#include <array>
#include <string>
#include <vector>

#include "kws/audio.hpp"

namespace kws::synth {

// The wakeword stand-in: a fixed 0.6 s three-segment chirp sequence.
constexpr double kTemplateSeconds = 0.6;
constexpr double kDefaultClipSeconds = 2.2;
constexpr double kNoiseRms = 0.03;  // nominal background level of base clips
constexpr int kReverbTaps = 400;    // exponential channel kernel support

// Unit-peak template waveform (9600 samples at 16 kHz).
const std::vector<double>& wakeword_template();

// Amplitude applied to the unit template so that its RMS sits snr_db above
// the nominal background RMS.
double template_gain_for_snr(double snr_db);

// The exact background used by synth_positive / synth_negative for this
// clip; exposed so tests can isolate the embedded component by subtraction.
std::vector<double> positive_background(int64_t clip_id, const ShiftParams& params,
                                        int64_t n_samples);
std::vector<double> negative_background(int64_t clip_id, const ShiftParams& params,
                                        int64_t n_samples);

// Confusable distractors: the template's tone sequence with perturbed
// frequencies and timing. A perturbation indistinguishable from the real
// template is rejected.
struct DistractorParams {
  std::array<double, 3> freq_mult = {1.0, 1.0, 1.0};
  double time_stretch = 1.0;
};
void validate_distractor(const DistractorParams& p);  // throws ConfigError if degenerate
std::vector<double> distractor_waveform(const DistractorParams& p);

AudioClip synth_positive(int64_t clip_id, const ShiftParams& params,
                         double clip_seconds = kDefaultClipSeconds);
AudioClip synth_negative(int64_t clip_id, const ShiftParams& params,
                         double clip_seconds = kDefaultClipSeconds);

// Channel shift: truncated exponential-decay reverb, tilted re-noise at the
// requested SNR (relative to the reverbed signal RMS), gain, final clip to
// [-1, 1]. Label and wake_center are preserved.
AudioClip apply_shift(const AudioClip& clip, const ShiftParams& params);

enum class Split : uint8_t { TrainLabeled, PoolUnlabeled, Heldout, EvalSource, EvalShifted };
constexpr std::array<Split, 5> kAllSplits = {Split::TrainLabeled, Split::PoolUnlabeled,
                                             Split::Heldout, Split::EvalSource,
                                             Split::EvalShifted};
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitSpec {
  int64_t count = 0;
  double positive_fraction = 0.5;
  int64_t id_start = 0;
};

struct CorpusSpec {
  SplitSpec train_labeled, pool_unlabeled, heldout, eval_source, eval_shifted;
  ShiftParams source_params;
  ShiftParams shift_params;
  double clip_seconds = kDefaultClipSeconds;
  double snr_spread_db = 6.0;  // per-clip uniform jitter around the base SNR
  const SplitSpec& split(Split s) const;
};

// One manifest row. Pool records hide ground truth from the training path;
// the truth is kept on a separate audit channel for oracle tests only.
struct ClipRecord {
  int64_t clip_id = 0;
  Split split = Split::TrainLabeled;
  std::optional<Label> label;
  Domain domain = Domain::Source;
  std::optional<int64_t> wake_center;
  uint64_t byte_offset = 0;
  int64_t n_samples = 0;
  std::optional<Label> audit_label;
  std::optional<int64_t> audit_wake_center;
};

// Deterministic, lazily materialized corpus: records are fixed up front and
// every clip is a pure function of (spec, clip_id).
class Corpus {
 public:
  static Corpus build(const CorpusSpec& spec);  // validates id-range disjointness

  const CorpusSpec& spec() const { return spec_; }
  const std::vector<ClipRecord>& records() const { return records_; }
  std::vector<const ClipRecord*> split_records(Split s) const;
  AudioClip materialize(const ClipRecord& rec) const;

 private:
  CorpusSpec spec_;
  std::vector<ClipRecord> records_;
};

// On-disk corpus: manifest.tsv (tab-separated, one record per clip) +
// samples.f32 (flat little-endian float32 blob) + audit.tsv (pool truth).
void save_corpus(const Corpus& corpus, const std::string& dir);

class CorpusReader {
 public:
  explicit CorpusReader(const std::string& dir);  // loads manifest + audit
  const std::vector<ClipRecord>& records() const { return records_; }
  std::vector<const ClipRecord*> split_records(Split s) const;
  AudioClip load_clip(const ClipRecord& rec) const;

 private:
  std::string dir_;
  std::vector<ClipRecord> records_;
};

}  // namespace kws::synth

#endif  // KWS_SYNTH_HPP_
