// synth.cpp

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

#include "kws/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kws/rng.hpp"

namespace kws::synth {

namespace {

// Stream tags keep the per-clip hash/RNG streams of different generation
// stages disjoint.
constexpr uint64_t kTagPositiveNoise = 0x11;
constexpr uint64_t kTagNegativeNoise = 0x22;
constexpr uint64_t kTagShiftNoise = 0x33;
constexpr uint64_t kTagWakeCenter = 0x44;
constexpr uint64_t kTagVariant = 0x55;
constexpr uint64_t kTagDistractor = 0x66;
constexpr uint64_t kTagSnrJitter = 0x77;

constexpr int kTemplateSamples = int(kTemplateSeconds * kSampleRate);  // 9600
constexpr double kMinPerturb = 0.005;  // below this a distractor is degenerate

// Template tone plan: per segment (f_start, f_end) over 0.2 s.
constexpr double kSegSeconds = 0.2;
constexpr double kSegFreqs[3][2] = {{600.0, 1000.0}, {1400.0, 1400.0}, {1600.0, 900.0}};
constexpr double kEdgeRampSeconds = 0.010;

// Chirp segment with raised-cosine edge ramps; appends to out.
void append_chirp(std::vector<double>& out, double f0, double f1, double seconds) {
  int n = int(std::llround(seconds * kSampleRate));
  int ramp = int(kEdgeRampSeconds * kSampleRate);
  for (int i = 0; i < n; ++i) {
    double t = double(i) / kSampleRate;
    double phase = 2.0 * M_PI * (f0 * t + 0.5 * (f1 - f0) / seconds * t * t);
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(M_PI * double(i) / ramp);
    if (n - 1 - i < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * double(n - 1 - i) / ramp));
    out.push_back(env * std::sin(phase));
  }
}

std::vector<double> tone_sequence(const std::array<double, 3>& mult, double stretch) {
  std::vector<double> out;
  out.reserve(size_t(3 * kSegSeconds * stretch * kSampleRate) + 16);
  for (int s = 0; s < 3; ++s)
    append_chirp(out, kSegFreqs[s][0] * mult[s], kSegFreqs[s][1] * mult[s],
                 kSegSeconds * stretch);
  // Unit peak.
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0)
    for (double& v : out) v /= peak;
  return out;
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / double(x.size()));
}

// Gaussian noise shaped by a one-pole tilt filter, rescaled to target_rms.
std::vector<double> tilted_noise(Rng& rng, int64_t n, double tilt, double target_rms) {
  std::vector<double> y(static_cast<size_t>(n));
  double prev = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    prev = rng.gaussian() + tilt * prev;
    y[size_t(i)] = prev;
  }
  double r = rms(y);
  if (r > 0.0) {
    double g = target_rms / r;
    for (double& v : y) v *= g;
  }
  return y;
}

void clip_to_unit(std::vector<double>& x) {
  for (double& v : x) v = std::clamp(v, -1.0, 1.0);
}

// Bursts sit near the clip midpoint with a small jitter, so midpoint windows
// (the only choice for unlabeled clips) stay within the detectors' pooling
// tolerance of the center-aligned training windows.
int64_t draw_wake_center(int64_t clip_id, const ShiftParams& params, int64_t n) {
  double jitter = 2.0 * hash_uniform(params.rng_seed, mix64(uint64_t(clip_id), kTagWakeCenter)) - 1.0;
  return n / 2 + int64_t(std::llround(jitter * 0.006 * double(n)));
}

void check_duration(double clip_seconds) {
  if (clip_seconds < kTemplateSeconds + 0.5)
    throw ConfigError("clip_seconds must be at least template duration + 0.5 s, got " +
                      std::to_string(clip_seconds));
}

void embed(std::vector<double>& samples, const std::vector<double>& burst, int64_t center) {
  int64_t start = center - int64_t(burst.size()) / 2;
  if (start < 0 || start + int64_t(burst.size()) > int64_t(samples.size()))
    throw ContractError("embedded burst does not fit inside the clip");
  for (size_t i = 0; i < burst.size(); ++i) samples[size_t(start) + i] += burst[i];
}

}  // namespace

const std::vector<double>& wakeword_template() {
  static const std::vector<double> tmpl = tone_sequence({1.0, 1.0, 1.0}, 1.0);
  return tmpl;
}

double template_gain_for_snr(double snr_db) {
  static const double unit_rms = rms(wakeword_template());
  return kNoiseRms * db_to_amplitude(snr_db) / unit_rms;
}

std::vector<double> positive_background(int64_t clip_id, const ShiftParams& params,
                                        int64_t n_samples) {
  Rng rng(mix64(params.rng_seed, mix64(uint64_t(clip_id), kTagPositiveNoise)));
  return tilted_noise(rng, n_samples, params.noise_tilt, kNoiseRms);
}

std::vector<double> negative_background(int64_t clip_id, const ShiftParams& params,
                                        int64_t n_samples) {
  Rng rng(mix64(params.rng_seed, mix64(uint64_t(clip_id), kTagNegativeNoise)));
  return tilted_noise(rng, n_samples, params.noise_tilt, kNoiseRms);
}

void validate_distractor(const DistractorParams& p) {
  double dev = std::fabs(p.time_stretch - 1.0);
  for (double m : p.freq_mult) dev = std::max(dev, std::fabs(m - 1.0));
  if (dev < kMinPerturb)
    throw ConfigError("degenerate distractor: perturbation below " +
                      std::to_string(kMinPerturb) + ", would equal the wakeword template");
}

std::vector<double> distractor_waveform(const DistractorParams& p) {
  validate_distractor(p);
  return tone_sequence(p.freq_mult, p.time_stretch);
}

AudioClip synth_positive(int64_t clip_id, const ShiftParams& params, double clip_seconds) {
  check_duration(clip_seconds);
  int64_t n = int64_t(std::llround(clip_seconds * kSampleRate));
  AudioClip clip;
  clip.clip_id = clip_id;
  clip.label = Label::Wakeword;
  clip.domain = Domain::Source;
  clip.samples = positive_background(clip_id, params, n);
  int64_t center = draw_wake_center(clip_id, params, n);
  std::vector<double> burst = wakeword_template();
  double gain = template_gain_for_snr(params.snr_db);
  for (double& v : burst) v *= gain;
  embed(clip.samples, burst, center);
  clip_to_unit(clip.samples);
  clip.wake_center = center;
  return clip;
}

AudioClip synth_negative(int64_t clip_id, const ShiftParams& params, double clip_seconds) {
  check_duration(clip_seconds);
  int64_t n = int64_t(std::llround(clip_seconds * kSampleRate));
  AudioClip clip;
  clip.clip_id = clip_id;
  clip.label = Label::NotWakeword;
  clip.domain = Domain::Source;
  clip.samples = negative_background(clip_id, params, n);

  // 35% pure noise, 65% confusable distractor.
  bool pure_noise = hash_uniform(params.rng_seed, mix64(uint64_t(clip_id), kTagVariant)) < 0.35;
  if (!pure_noise) {
    Rng rng(mix64(params.rng_seed, mix64(uint64_t(clip_id), kTagDistractor)));
    DistractorParams dp;
    for (double& m : dp.freq_mult) {
      double mag = 0.008 * std::pow(0.30 / 0.008, rng.uniform());  // log-uniform in [0.008, 0.30]
      m = rng.uniform() < 0.5 ? 1.0 - mag : 1.0 + mag;
    }
    double smag = 0.03 * std::pow(0.40 / 0.03, rng.uniform());
    dp.time_stretch = rng.uniform() < 0.5 ? 1.0 - smag : 1.0 + smag;
    std::vector<double> burst = distractor_waveform(dp);
    double gain = kNoiseRms * db_to_amplitude(params.snr_db) / std::max(rms(burst), 1e-12);
    for (double& v : burst) v *= gain;
    embed(clip.samples, burst, draw_wake_center(clip_id, params, n));
  }
  clip_to_unit(clip.samples);
  return clip;
}

AudioClip apply_shift(const AudioClip& clip, const ShiftParams& params) {
  if (clip.domain != Domain::Source)
    throw ContractError("apply_shift expects a Source-domain clip");
  if (params.channel_decay < 0.0 || params.channel_decay >= 1.0)
    throw ConfigError("channel_decay must lie in [0, 1), got " +
                      std::to_string(params.channel_decay));

  AudioClip out = clip;
  out.domain = Domain::Shifted;
  std::vector<double>& y = out.samples;
  int64_t n = int64_t(y.size());

  // Convolution with k[j] = (1-d) d^j, j <= kReverbTaps, via the exact
  // recursion y[i] = d y[i-1] + (1-d) x[i] - (1-d) d^(T+1) x[i-T-1].
  double d = params.channel_decay;
  if (d > 0.0) {
    const std::vector<double>& x = clip.samples;
    double tail = std::pow(d, double(kReverbTaps + 1));
    double prev = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double v = d * prev + (1.0 - d) * x[size_t(i)];
      if (i > kReverbTaps) v -= (1.0 - d) * tail * x[size_t(i - kReverbTaps - 1)];
      y[size_t(i)] = v;
      prev = v;
    }
  }

  if (std::isfinite(params.snr_db)) {
    double noise_rms = rms(y) / db_to_amplitude(params.snr_db);
    Rng rng(mix64(params.rng_seed, mix64(uint64_t(clip.clip_id), kTagShiftNoise)));
    std::vector<double> noise = tilted_noise(rng, n, params.noise_tilt, noise_rms);
    for (int64_t i = 0; i < n; ++i) y[size_t(i)] += noise[size_t(i)];
  }

  double gain = db_to_amplitude(params.gain_db);
  if (gain != 1.0)
    for (double& v : y) v *= gain;
  clip_to_unit(y);
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::TrainLabeled: return "train_labeled";
    case Split::PoolUnlabeled: return "pool_unlabeled";
    case Split::Heldout: return "heldout";
    case Split::EvalSource: return "eval_source";
    default: return "eval_shifted";
  }
}

Split split_from_string(const std::string& s) {
  for (Split sp : kAllSplits)
    if (to_string(sp) == s) return sp;
  throw IoError("unknown split: " + s);
}

const SplitSpec& CorpusSpec::split(Split s) const {
  switch (s) {
    case Split::TrainLabeled: return train_labeled;
    case Split::PoolUnlabeled: return pool_unlabeled;
    case Split::Heldout: return heldout;
    case Split::EvalSource: return eval_source;
    default: return eval_shifted;
  }
}

namespace {

bool split_is_shifted(Split s) {
  return s == Split::PoolUnlabeled || s == Split::EvalShifted;
}

// Deterministic interleave: clip i is positive iff the running positive
// quota crosses an integer. n=1000 at fraction 0.5 gives exactly 500.
bool interleaved_positive(int64_t i, double fraction) {
  return std::floor(double(i + 1) * fraction) > std::floor(double(i) * fraction);
}

ShiftParams jittered(const ShiftParams& base, double spread_db, int64_t clip_id, uint64_t tag) {
  ShiftParams p = base;
  if (spread_db > 0.0 && std::isfinite(p.snr_db))
    p.snr_db += spread_db * (2.0 * hash_uniform(base.rng_seed, mix64(uint64_t(clip_id), tag)) - 1.0);
  return p;
}

}  // namespace

Corpus Corpus::build(const CorpusSpec& spec) {
  check_duration(spec.clip_seconds);
  // Id ranges must be pairwise disjoint.
  std::vector<std::pair<int64_t, int64_t>> ranges;
  for (Split s : kAllSplits) {
    const SplitSpec& ss = spec.split(s);
    if (ss.count < 0) throw ConfigError("negative split count");
    if (ss.count > 0) ranges.emplace_back(ss.id_start, ss.id_start + ss.count);
  }
  std::sort(ranges.begin(), ranges.end());
  for (size_t i = 1; i < ranges.size(); ++i)
    if (ranges[i].first < ranges[i - 1].second)
      throw ConfigError("overlapping clip_id ranges between splits");

  Corpus corpus;
  corpus.spec_ = spec;
  int64_t n_samples = int64_t(std::llround(spec.clip_seconds * kSampleRate));
  uint64_t offset = 0;
  for (Split s : kAllSplits) {
    const SplitSpec& ss = spec.split(s);
    for (int64_t i = 0; i < ss.count; ++i) {
      ClipRecord rec;
      rec.clip_id = ss.id_start + i;
      rec.split = s;
      rec.domain = split_is_shifted(s) ? Domain::Shifted : Domain::Source;
      rec.n_samples = n_samples;
      rec.byte_offset = offset;
      offset += uint64_t(n_samples) * 4;
      bool positive = interleaved_positive(i, ss.positive_fraction);
      Label truth = positive ? Label::Wakeword : Label::NotWakeword;
      std::optional<int64_t> center;
      if (positive)
        center = draw_wake_center(rec.clip_id, spec.source_params, n_samples);
      if (s == Split::PoolUnlabeled) {
        rec.audit_label = truth;
        rec.audit_wake_center = center;
      } else {
        rec.label = truth;
        rec.wake_center = center;
      }
      corpus.records_.push_back(rec);
    }
  }
  return corpus;
}

std::vector<const ClipRecord*> Corpus::split_records(Split s) const {
  std::vector<const ClipRecord*> out;
  for (const ClipRecord& r : records_)
    if (r.split == s) out.push_back(&r);
  return out;
}

AudioClip Corpus::materialize(const ClipRecord& rec) const {
  ShiftParams src = jittered(spec_.source_params, spec_.snr_spread_db, rec.clip_id, kTagSnrJitter);
  Label truth = rec.label ? *rec.label : *rec.audit_label;
  AudioClip clip = truth == Label::Wakeword
                       ? synth_positive(rec.clip_id, src, spec_.clip_seconds)
                       : synth_negative(rec.clip_id, src, spec_.clip_seconds);
  if (rec.domain == Domain::Shifted) {
    ShiftParams sh = jittered(spec_.shift_params, spec_.snr_spread_db, rec.clip_id,
                              kTagSnrJitter + 1);
    clip = apply_shift(clip, sh);
  }
  if (rec.split == Split::PoolUnlabeled) {
    clip.label.reset();  // truth stays on the audit channel
  }
  return clip;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir + "/samples.f32", std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + dir + "/samples.f32");
  std::ostringstream manifest, audit;
  manifest << "# clip_id\tsplit\tlabel\tdomain\twake_center\tbyte_offset\n";
  audit << "# clip_id\tlabel\twake_center\n";
  std::vector<uint8_t> buf;
  for (const ClipRecord& rec : corpus.records()) {
    AudioClip clip = corpus.materialize(rec);
    buf.clear();
    buf.reserve(clip.samples.size() * 4);
    for (double v : clip.samples) append_le_f32(buf, float(v));
    blob.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    manifest << rec.clip_id << '\t' << to_string(rec.split) << '\t'
             << (rec.label ? kws::to_string(*rec.label) : std::string("-")) << '\t'
             << kws::to_string(rec.domain) << '\t';
    if (rec.wake_center)
      manifest << *rec.wake_center;
    else
      manifest << '-';
    manifest << '\t' << rec.byte_offset << '\n';
    if (rec.split == Split::PoolUnlabeled) {
      audit << rec.clip_id << '\t' << kws::to_string(*rec.audit_label) << '\t';
      if (rec.audit_wake_center)
        audit << *rec.audit_wake_center;
      else
        audit << '-';
      audit << '\n';
    }
  }
  if (!blob) throw IoError("write failed: " + dir + "/samples.f32");
  blob.close();
  write_text_file(dir + "/manifest.tsv", manifest.str());
  write_text_file(dir + "/audit.tsv", audit.str());
}

CorpusReader::CorpusReader(const std::string& dir) : dir_(dir) {
  std::istringstream in(read_text_file(dir + "/manifest.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, split, label, domain, center, offset;
    if (!(std::getline(ls, id, '\t') && std::getline(ls, split, '\t') &&
          std::getline(ls, label, '\t') && std::getline(ls, domain, '\t') &&
          std::getline(ls, center, '\t') && std::getline(ls, offset, '\t')))
      throw IoError("malformed manifest line: " + line);
    ClipRecord rec;
    rec.clip_id = std::stoll(id);
    rec.split = split_from_string(split);
    if (label != "-") rec.label = label_from_string(label);
    rec.domain = domain_from_string(domain);
    if (center != "-") rec.wake_center = std::stoll(center);
    rec.byte_offset = std::stoull(offset);
    records_.push_back(rec);
  }
  // Lengths are implied by consecutive offsets; the last record runs to EOF.
  uint64_t file_size = std::filesystem::file_size(dir + "/samples.f32");
  for (size_t i = 0; i < records_.size(); ++i) {
    uint64_t end = (i + 1 < records_.size()) ? records_[i + 1].byte_offset : file_size;
    records_[i].n_samples = int64_t((end - records_[i].byte_offset) / 4);
  }
  // Audit channel.
  std::istringstream ain(read_text_file(dir + "/audit.tsv"));
  std::vector<std::pair<int64_t, std::pair<Label, std::optional<int64_t>>>> audit;
  while (std::getline(ain, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, label, center;
    if (!(std::getline(ls, id, '\t') && std::getline(ls, label, '\t') &&
          std::getline(ls, center, '\t')))
      throw IoError("malformed audit line: " + line);
    std::optional<int64_t> wc;
    if (center != "-") wc = std::stoll(center);
    audit.emplace_back(std::stoll(id), std::make_pair(label_from_string(label), wc));
  }
  size_t a = 0;
  for (ClipRecord& rec : records_) {
    if (rec.split != Split::PoolUnlabeled) continue;
    if (a >= audit.size() || audit[a].first != rec.clip_id)
      throw IoError("audit.tsv does not match manifest pool records");
    rec.audit_label = audit[a].second.first;
    rec.audit_wake_center = audit[a].second.second;
    ++a;
  }
}

std::vector<const ClipRecord*> CorpusReader::split_records(Split s) const {
  std::vector<const ClipRecord*> out;
  for (const ClipRecord& r : records_)
    if (r.split == s) out.push_back(&r);
  return out;
}

AudioClip CorpusReader::load_clip(const ClipRecord& rec) const {
  std::ifstream blob(dir_ + "/samples.f32", std::ios::binary);
  if (!blob) throw IoError("cannot open " + dir_ + "/samples.f32");
  blob.seekg(std::streamoff(rec.byte_offset));
  std::vector<uint8_t> bytes(size_t(rec.n_samples) * 4);
  blob.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!blob) throw IoError("short read in samples.f32");
  AudioClip clip;
  clip.clip_id = rec.clip_id;
  clip.label = rec.label;
  clip.domain = rec.domain;
  clip.wake_center = rec.wake_center;
  clip.samples.resize(size_t(rec.n_samples));
  for (int64_t i = 0; i < rec.n_samples; ++i)
    clip.samples[size_t(i)] = double(read_le_f32(bytes.data() + i * 4));
  return clip;
}

}  // namespace kws::synth
