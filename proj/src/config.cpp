// config.cpp

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

#include "kws/config.hpp"

#include <cstdio>
#include <functional>
#include <sstream>

namespace kws {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_sizes(const std::vector<int64_t>& sizes) {
  std::string out;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(sizes[i]);
  }
  return out;
}

std::vector<int64_t> parse_sizes(const std::string& s) {
  std::vector<int64_t> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

struct Field {
  std::string key;  // "section.name"
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define KWS_FIELD_NUM(section, name, member, parse_fn, fmt_fn)                       \
  Field{section "." name,                                                           \
        [](const ExperimentConfig& c) { return std::string(fmt_fn(c.member)); },     \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_fn(v); }}

uint64_t to_u64(const std::string& v) { return uint64_t(std::stoull(v)); }
int64_t to_i64(const std::string& v) { return std::stoll(v); }
int to_int(const std::string& v) { return std::stoi(v); }
double to_dbl(const std::string& v) { return std::stod(v); }
std::string u64s(uint64_t v) { return std::to_string(v); }
std::string i64s(int64_t v) { return std::to_string(v); }
std::string ints(int v) { return std::to_string(v); }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      KWS_FIELD_NUM("experiment", "seed", seed, to_u64, u64s),
      KWS_FIELD_NUM("experiment", "num_seeds", num_seeds, to_int, ints),
      Field{"experiment.out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
            [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
      KWS_FIELD_NUM("corpus", "train_count", train_count, to_i64, i64s),
      KWS_FIELD_NUM("corpus", "train_pos_fraction", train_pos_fraction, to_dbl, fmt_double),
      KWS_FIELD_NUM("corpus", "pool_count", pool_count, to_i64, i64s),
      KWS_FIELD_NUM("corpus", "pool_pos_fraction", pool_pos_fraction, to_dbl, fmt_double),
      KWS_FIELD_NUM("corpus", "heldout_count", heldout_count, to_i64, i64s),
      KWS_FIELD_NUM("corpus", "heldout_pos_fraction", heldout_pos_fraction, to_dbl, fmt_double),
      KWS_FIELD_NUM("corpus", "eval_count", eval_count, to_i64, i64s),
      KWS_FIELD_NUM("corpus", "eval_pos_fraction", eval_pos_fraction, to_dbl, fmt_double),
      KWS_FIELD_NUM("corpus", "clip_seconds", clip_seconds, to_dbl, fmt_double),
      KWS_FIELD_NUM("corpus", "snr_spread_db", snr_spread_db, to_dbl, fmt_double),
      KWS_FIELD_NUM("corpus", "shift_margin", shift_margin, to_dbl, fmt_double),
      KWS_FIELD_NUM("source", "snr_db", source_params.snr_db, to_dbl, fmt_double),
      KWS_FIELD_NUM("source", "channel_decay", source_params.channel_decay, to_dbl, fmt_double),
      KWS_FIELD_NUM("source", "gain_db", source_params.gain_db, to_dbl, fmt_double),
      KWS_FIELD_NUM("source", "noise_tilt", source_params.noise_tilt, to_dbl, fmt_double),
      KWS_FIELD_NUM("shift", "snr_db", shift_params.snr_db, to_dbl, fmt_double),
      KWS_FIELD_NUM("shift", "channel_decay", shift_params.channel_decay, to_dbl, fmt_double),
      KWS_FIELD_NUM("shift", "gain_db", shift_params.gain_db, to_dbl, fmt_double),
      KWS_FIELD_NUM("shift", "noise_tilt", shift_params.noise_tilt, to_dbl, fmt_double),
      KWS_FIELD_NUM("teacher", "width_scale", teacher_width_scale, to_dbl, fmt_double),
      KWS_FIELD_NUM("teacher", "dropout", teacher_dropout, to_dbl, fmt_double),
      KWS_FIELD_NUM("teacher", "updates", teacher_updates, to_i64, i64s),
      Field{"student.kind",
            [](const ExperimentConfig& c) { return feats::to_string(c.student_kind); },
            [](ExperimentConfig& c, const std::string& v) {
              c.student_kind = feats::model_kind_from_string(v);
              if (c.student_kind == feats::ModelKind::Annotator)
                throw ConfigError("student kind must be cnn or fcn");
            }},
      KWS_FIELD_NUM("student", "width_scale", student_width_scale, to_dbl, fmt_double),
      KWS_FIELD_NUM("student", "dropout", student_dropout, to_dbl, fmt_double),
      KWS_FIELD_NUM("student", "updates", student_updates, to_i64, i64s),
      KWS_FIELD_NUM("training", "batch_size", batch_size, to_int, ints),
      KWS_FIELD_NUM("training", "lr", lr, to_dbl, fmt_double),
      KWS_FIELD_NUM("training", "beta1", adam_beta1, to_dbl, fmt_double),
      KWS_FIELD_NUM("training", "beta2", adam_beta2, to_dbl, fmt_double),
      KWS_FIELD_NUM("training", "eps", adam_eps, to_dbl, fmt_double),
      KWS_FIELD_NUM("training", "labeled_weight", labeled_weight, to_dbl, fmt_double),
      KWS_FIELD_NUM("calibration", "target_fpr", target_fpr, to_dbl, fmt_double),
      KWS_FIELD_NUM("calibration", "target_frr", target_frr, to_dbl, fmt_double),
      KWS_FIELD_NUM("calibration", "op_frr", op_frr, to_dbl, fmt_double),
      KWS_FIELD_NUM("smoothing", "ema_alpha", ema_alpha, to_dbl, fmt_double),
      KWS_FIELD_NUM("smoothing", "wma_window", wma_window, to_int, ints),
      KWS_FIELD_NUM("smoothing", "detect_threshold", detect_threshold, to_dbl, fmt_double),
      KWS_FIELD_NUM("smoothing", "refractory_frames", refractory_frames, to_i64, i64s),
      Field{"ablation.sizes",
            [](const ExperimentConfig& c) { return fmt_sizes(c.ablation_sizes); },
            [](ExperimentConfig& c, const std::string& v) { c.ablation_sizes = parse_sizes(v); }},
      KWS_FIELD_NUM("eval", "hard_band_lo", hard_band_lo, to_dbl, fmt_double),
      KWS_FIELD_NUM("eval", "hard_band_hi", hard_band_hi, to_dbl, fmt_double),
  };
  return f;
}

#undef KWS_FIELD_NUM

void set_field(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  // Calibrated thresholds are snapshot echoes, accepted but informational.
  if (key == "thresholds.accept") { cfg.calibrated_accept = std::stod(value); return; }
  if (key == "thresholds.reject") { cfg.calibrated_reject = std::stod(value); return; }
  if (key == "thresholds.positive_keep") { cfg.calibrated_keep = std::stod(value); return; }
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("config key outside any [section]: " + key);
    set_field(cfg, section + "." + key, value);
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    size_t dot = f.key.find('.');
    std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  if (cfg.calibrated_accept && cfg.calibrated_reject && cfg.calibrated_keep) {
    out << "\n[thresholds]\n";
    out << "accept = " << fmt_double(*cfg.calibrated_accept) << '\n';
    out << "reject = " << fmt_double(*cfg.calibrated_reject) << '\n';
    out << "positive_keep = " << fmt_double(*cfg.calibrated_keep) << '\n';
  }
  return out.str();
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be section.key=value, got: " + assignment);
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  if (key.find('.') == std::string::npos)
    throw ConfigError("override key must be section.key, got: " + key);
  set_field(cfg, key, value);
}

synth::CorpusSpec ExperimentConfig::corpus_spec(uint64_t run_seed) const {
  synth::CorpusSpec spec;
  spec.clip_seconds = clip_seconds;
  spec.snr_spread_db = snr_spread_db;
  spec.source_params = source_params;
  spec.source_params.rng_seed = run_seed;
  spec.shift_params = shift_params;
  spec.shift_params.rng_seed = run_seed;
  int64_t next = 0;
  auto assign = [&next](synth::SplitSpec& ss, int64_t count, double frac) {
    ss.count = count;
    ss.positive_fraction = frac;
    ss.id_start = next;
    next += count;
  };
  assign(spec.train_labeled, train_count, train_pos_fraction);
  assign(spec.pool_unlabeled, pool_count, pool_pos_fraction);
  assign(spec.heldout, heldout_count, heldout_pos_fraction);
  assign(spec.eval_source, eval_count, eval_pos_fraction);
  assign(spec.eval_shifted, eval_count, eval_pos_fraction);
  return spec;
}

}  // namespace kws
