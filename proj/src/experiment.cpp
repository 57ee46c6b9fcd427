// experiment.cpp

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

#include "kws/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace kws::exp {

namespace {

constexpr uint64_t kSeedTeacher = 0x7E;
constexpr uint64_t kSeedBaseline = 0xBA;
constexpr uint64_t kSeedStudent = 0x57;
constexpr uint64_t kSeedAblateSize = 0xA5;
constexpr uint64_t kSeedAblateSub = 0xAB;
constexpr uint64_t kSeedLabelU = 0x9C;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, const char* format = "%.4f") {
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, format, *v);
  return buf;
}

models::ArchSpec teacher_arch(const ExperimentConfig& cfg) {
  models::ArchSpec a;
  a.kind = feats::ModelKind::Annotator;
  a.width_scale = cfg.teacher_width_scale;
  a.dropout_rate = cfg.teacher_dropout;
  return a;
}

models::ArchSpec student_arch(const ExperimentConfig& cfg) {
  models::ArchSpec a;
  a.kind = cfg.student_kind;
  a.width_scale = cfg.student_width_scale;
  a.dropout_rate = cfg.student_dropout;
  return a;
}

ssl::TrainConfig make_train_config(const ExperimentConfig& cfg, int64_t updates, double lambda,
                                   uint64_t seed) {
  ssl::TrainConfig tc;
  tc.labeled_weight = lambda;
  tc.batch_size = cfg.batch_size;
  tc.total_updates = updates;
  tc.adam.lr = cfg.lr;
  tc.adam.beta1 = cfg.adam_beta1;
  tc.adam.beta2 = cfg.adam_beta2;
  tc.adam.eps = cfg.adam_eps;
  tc.rng_seed = seed;
  return tc;
}

void save_loss_trace(const std::string& path, const std::vector<double>& trace) {
  std::ostringstream out;
  out << "# step\tloss\n";
  for (size_t i = 0; i < trace.size(); ++i) out << i << '\t' << fmt(trace[i]) << '\n';
  write_text_file(path, out.str());
}

std::vector<double> dataset_scores(nn::Network<float>& net, const ssl::Dataset& ds) {
  return models::score_windows(net, ssl::stack_windows(ds));
}

std::vector<Label> dataset_labels(const ssl::Dataset& ds) {
  std::vector<Label> out;
  out.reserve(ds.examples.size());
  for (const ssl::Example& e : ds.examples) {
    if (!e.label) throw ContractError("dataset example without label in evaluation path");
    out.push_back(*e.label);
  }
  return out;
}

struct PoolDecisionRecord {
  int64_t clip_id;
  double score, u;
  ssl::PseudoDecision decision;
};

void save_pseudo_report(const std::string& path, const std::vector<ssl::PoolDecision>& dec) {
  std::ostringstream out;
  out << "# clip_id\tscore\tu\tdecision\n";
  for (const ssl::PoolDecision& d : dec)
    out << d.clip_id << '\t' << fmt(d.score) << '\t' << fmt(d.u) << '\t'
        << ssl::to_string(d.decision) << '\n';
  write_text_file(path, out.str());
}

std::vector<PoolDecisionRecord> load_pseudo_report(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<PoolDecisionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, score, u, decision;
    if (!(std::getline(ls, id, '\t') && std::getline(ls, score, '\t') &&
          std::getline(ls, u, '\t') && std::getline(ls, decision, '\t')))
      throw IoError("malformed pseudo report line: " + line);
    PoolDecisionRecord r;
    r.clip_id = std::stoll(id);
    r.score = std::stod(score);
    r.u = std::stod(u);
    if (decision == "Wakeword") r.decision = ssl::PseudoDecision::Wakeword;
    else if (decision == "NotWakeword") r.decision = ssl::PseudoDecision::NotWakeword;
    else r.decision = ssl::PseudoDecision::Discard;
    out.push_back(r);
  }
  return out;
}

// Kept examples of the pool re-labeled per decisions, in pool order.
ssl::Dataset pseudo_dataset_from_decisions(const ssl::Dataset& pool_windows,
                                           const std::vector<PoolDecisionRecord>& decisions) {
  std::map<int64_t, const PoolDecisionRecord*> by_id;
  for (const PoolDecisionRecord& d : decisions) by_id[d.clip_id] = &d;
  ssl::Dataset out;
  out.source = LabelSource::Pseudo;
  out.distribution = pool_windows.distribution;
  out.window_kind = pool_windows.window_kind;
  for (const ssl::Example& e : pool_windows.examples) {
    auto it = by_id.find(e.clip_id);
    if (it == by_id.end()) throw PipelineError("pool clip missing from pseudo report");
    const PoolDecisionRecord& d = *it->second;
    if (d.decision == ssl::PseudoDecision::Discard) continue;
    ssl::Example kept = e;
    kept.label = d.decision == ssl::PseudoDecision::Wakeword ? Label::Wakeword
                                                             : Label::NotWakeword;
    kept.score = d.score;
    kept.u = d.u;
    out.examples.push_back(std::move(kept));
  }
  return out;
}

void write_snapshot(const ExperimentConfig& cfg, const std::string& dir) {
  write_text_file(dir + "/config.snapshot.cfg", serialize_config(cfg));
}

}  // namespace

// ---------------------------------------------------------------------------
// Workspace
// ---------------------------------------------------------------------------

Workspace::Workspace(const ExperimentConfig& cfg, std::string run_dir, uint64_t run_seed)
    : cfg_(cfg), dir_(std::move(run_dir)), run_seed_(run_seed) {
  fs::create_directories(dir_);
}

const synth::CorpusReader& Workspace::corpus() {
  if (!corpus_) {
    if (!fs::exists(dir_ + "/corpus/manifest.tsv"))
      throw PipelineError("no corpus under " + dir_ + "; run the gen stage first");
    corpus_.emplace(dir_ + "/corpus");
  }
  return *corpus_;
}

void Workspace::materialize_split(synth::Split split, feats::ModelKind kind) {
  const synth::CorpusReader& corpus = this->corpus();
  // Pool windows are never cached on disk: they are the largest set and the
  // cache would sit next to the audit channel they must not expose.
  const bool cacheable = split != synth::Split::PoolUnlabeled;
  const std::string cache_path = dir_ + "/cache/" + synth::to_string(split) + "." +
                                 feats::to_string(kind) + ".feats";
  auto key = std::make_pair(int(split), int(kind));

  ssl::Dataset ds;
  ds.source = split == synth::Split::PoolUnlabeled ? LabelSource::Unlabeled : LabelSource::Human;
  ds.distribution =
      (split == synth::Split::PoolUnlabeled || split == synth::Split::EvalShifted)
          ? Domain::Shifted
          : Domain::Source;
  ds.window_kind = kind;

  if (cacheable && fs::exists(cache_path)) {
    std::vector<feats::FeatureWindow> cached = feats::load_feature_cache(cache_path);
    for (feats::FeatureWindow& w : cached) {
      ssl::Example e;
      e.clip_id = w.clip_id;
      e.window = std::move(w.values);
      e.label = w.label;
      ds.examples.push_back(std::move(e));
    }
    windows_.emplace(key, std::move(ds));
    return;
  }

  const int dims = feats::feature_dims(kind);
  for (const synth::ClipRecord* rec : corpus.split_records(split)) {
    AudioClip clip = corpus.load_clip(*rec);
    feats::MatrixXd mel = feats::lfbe_of_signal(clip.samples, dims);
    std::optional<int64_t> center;
    if (rec->label && *rec->label == Label::Wakeword && rec->wake_center)
      center = feats::frame_of_sample(*rec->wake_center);
    feats::MatrixXd win = feats::window_for_example(mel, kind, rec->label, center);
    ssl::Example e;
    e.clip_id = rec->clip_id;
    e.window = win.cast<float>();
    e.label = rec->label;
    e.hidden_truth = rec->audit_label;
    ds.examples.push_back(std::move(e));
  }

  if (cacheable) {
    fs::create_directories(dir_ + "/cache");
    std::vector<feats::FeatureWindow> out;
    out.reserve(ds.examples.size());
    for (const ssl::Example& e : ds.examples) {
      feats::FeatureWindow w;
      w.clip_id = e.clip_id;
      w.values = e.window;
      w.label = e.label;
      w.source = ds.source;
      out.push_back(std::move(w));
    }
    feats::save_feature_cache(cache_path, out);
  }
  windows_.emplace(key, std::move(ds));
}

ssl::Dataset& Workspace::windows(synth::Split split, feats::ModelKind kind) {
  auto key = std::make_pair(int(split), int(kind));
  auto it = windows_.find(key);
  if (it == windows_.end()) {
    materialize_split(split, kind);
    it = windows_.find(key);
    if (it == windows_.end()) throw PipelineError("window materialization failed");
  }
  return it->second;
}

void Workspace::release_windows(synth::Split split) {
  for (auto it = windows_.begin(); it != windows_.end();)
    it = it->first.first == int(split) ? windows_.erase(it) : std::next(it);
}

nn::Network<float>& Workspace::teacher() {
  if (!teacher_) {
    std::string path = dir_ + "/teacher.ckpt";
    if (!fs::exists(path))
      throw PipelineError("no teacher checkpoint under " + dir_ + "; run train-teacher first");
    teacher_ = nn::Network<float>::load(path);
  }
  return *teacher_;
}

nn::Network<float>& Workspace::baseline() {
  if (!baseline_) {
    std::string path = dir_ + "/baseline.ckpt";
    if (!fs::exists(path))
      throw PipelineError("no baseline checkpoint under " + dir_ + "; run the train stage first");
    baseline_ = nn::Network<float>::load(path);
  }
  return *baseline_;
}

nn::Network<float>& Workspace::student() {
  if (!student_) {
    std::string path = dir_ + "/student.ckpt";
    if (!fs::exists(path))
      throw PipelineError("no student checkpoint under " + dir_ + "; run the train stage first");
    student_ = nn::Network<float>::load(path);
  }
  return *student_;
}

ssl::Thresholds Workspace::thresholds() {
  if (!thresholds_) {
    std::string path = dir_ + "/thresholds.cfg";
    if (!fs::exists(path))
      throw PipelineError("no thresholds under " + dir_ + "; run the label stage first");
    ssl::Thresholds th;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("accept = ", 0) == 0) th.accept = std::stod(line.substr(9));
      if (line.rfind("reject = ", 0) == 0) th.reject = std::stod(line.substr(9));
      if (line.rfind("positive_keep = ", 0) == 0) th.positive_keep = std::stod(line.substr(16));
    }
    th.validate();
    thresholds_ = th;
  }
  return *thresholds_;
}

void Workspace::set_teacher(nn::Network<float> net) { teacher_ = std::move(net); }
void Workspace::set_baseline(nn::Network<float> net) { baseline_ = std::move(net); }
void Workspace::set_student(nn::Network<float> net) { student_ = std::move(net); }
void Workspace::set_thresholds(const ssl::Thresholds& th) { thresholds_ = th; }

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

double mean_lfbe_distance(const synth::CorpusReader& corpus, int64_t max_per_side) {
  auto mean_of = [&](synth::Split split) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(64);
    int64_t frames = 0, used = 0;
    for (const synth::ClipRecord* rec : corpus.split_records(split)) {
      if (used++ >= max_per_side) break;
      AudioClip clip = corpus.load_clip(*rec);
      feats::MatrixXd mel = feats::lfbe_of_signal(clip.samples, 64);
      acc += mel.colwise().sum().transpose();
      frames += mel.rows();
    }
    if (frames == 0) throw PipelineError("empty split in shift-measurability check");
    return Eigen::VectorXd(acc / double(frames));
  };
  Eigen::VectorXd src = mean_of(synth::Split::TrainLabeled);
  Eigen::VectorXd shifted = mean_of(synth::Split::PoolUnlabeled);
  return (src - shifted).norm();
}

void run_gen(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  write_snapshot(cfg, ws.dir());
  std::string corpus_dir = ws.dir() + "/corpus";
  if (fs::exists(corpus_dir + "/manifest.tsv")) {
    std::fprintf(stderr, "gen: corpus already present under %s, reusing\n", corpus_dir.c_str());
    return;
  }
  synth::CorpusSpec spec = cfg.corpus_spec(ws.run_seed());
  synth::Corpus corpus = synth::Corpus::build(spec);
  save_corpus(corpus, corpus_dir);
  fs::remove_all(ws.dir() + "/cache");

  synth::CorpusReader reader(corpus_dir);
  std::ostringstream stats;
  stats << "# split\tcount\tpositive_fraction\n";
  for (synth::Split s : synth::kAllSplits) {
    auto recs = reader.split_records(s);
    int64_t pos = 0;
    for (const synth::ClipRecord* r : recs) {
      std::optional<Label> l = r->label ? r->label : r->audit_label;
      if (l && *l == Label::Wakeword) ++pos;
    }
    stats << synth::to_string(s) << '\t' << recs.size() << '\t'
          << (recs.empty() ? 0.0 : double(pos) / double(recs.size())) << '\n';
  }
  if (cfg.pool_count > 0 && cfg.train_count > 0) {
    double dist = mean_lfbe_distance(reader, 200);
    bool pass = dist >= cfg.shift_margin;
    stats << "# mean_lfbe_distance " << fmt(dist) << " margin " << fmt(cfg.shift_margin) << ' '
          << (pass ? "PASS" : "FAIL") << '\n';
    std::printf("shift measurability: mean-LFBE distance %.4f vs margin %.4f -> %s\n", dist,
                cfg.shift_margin, pass ? "PASS" : "FAIL");
  }
  write_text_file(ws.dir() + "/corpus_stats.txt", stats.str());
}

void run_train_teacher(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  ssl::Dataset& labeled = ws.windows(synth::Split::TrainLabeled, feats::ModelKind::Annotator);
  ssl::TrainConfig tc =
      make_train_config(cfg, cfg.teacher_updates, 1.0, mix64(ws.run_seed(), kSeedTeacher));
  std::vector<double> trace;
  nn::Network<float> teacher = ssl::train_student(&labeled, nullptr, teacher_arch(cfg), tc, trace);
  teacher.save(ws.dir() + "/teacher.ckpt");
  save_loss_trace(ws.dir() + "/teacher_loss.tsv", trace);
  ws.set_teacher(std::move(teacher));
}

void run_label(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  nn::Network<float>& teacher = ws.teacher();

  ssl::Dataset& heldout = ws.windows(synth::Split::Heldout, feats::ModelKind::Annotator);
  std::vector<double> heldout_scores = dataset_scores(teacher, heldout);
  std::vector<Label> heldout_labels = dataset_labels(heldout);
  double accept = ssl::calibrate_accept(heldout_scores, heldout_labels, cfg.target_fpr);
  bool clamped = false;
  double reject =
      ssl::calibrate_reject(heldout_scores, heldout_labels, cfg.target_frr, accept, &clamped);

  // Labeled positive fraction straight from the manifest.
  auto train_recs = ws.corpus().split_records(synth::Split::TrainLabeled);
  int64_t pos = 0;
  for (const synth::ClipRecord* r : train_recs)
    if (r->label && *r->label == Label::Wakeword) ++pos;
  double labeled_pos_frac = double(pos) / double(train_recs.size());

  ssl::Dataset& pool = ws.windows(synth::Split::PoolUnlabeled, feats::ModelKind::Annotator);
  const bool pool_empty = pool.examples.empty();
  std::vector<double> pool_scores = pool_empty ? std::vector<double>{} : dataset_scores(teacher, pool);
  std::vector<std::pair<int64_t, double>> scored(pool.examples.size());
  for (size_t i = 0; i < pool.examples.size(); ++i)
    scored[i] = {pool.examples[i].clip_id, pool_scores[i]};

  uint64_t useed = mix64(ws.run_seed(), kSeedLabelU);
  ssl::Thresholds pre{accept, reject, 1.0};
  ssl::LabelCounts pre_counts;
  ssl::decide_pool(scored, pre, useed, &pre_counts);
  if (!pool_empty && pre_counts.accepted_pos + pre_counts.accepted_neg == 0)
    throw PipelineError("thresholds accepted nothing from the pool");
  double pool_pos_frac =
      pool_empty ? 0.0
                 : double(pre_counts.accepted_pos) /
                       double(pre_counts.accepted_pos + pre_counts.accepted_neg);
  double keep = 1.0;
  if (pool_pos_frac > 0.0 && pool_pos_frac < 1.0)
    keep = ssl::derive_positive_keep(labeled_pos_frac, pool_pos_frac);

  ssl::Thresholds th{accept, reject, keep};
  ssl::LabelCounts counts;
  std::vector<ssl::PoolDecision> decisions = ssl::decide_pool(scored, th, useed, &counts);
  if (!pool_empty && counts.accepted_pos + counts.accepted_neg == 0)
    throw PipelineError("pseudo-labeling kept nothing after subsampling");

  std::ostringstream thfile;
  thfile << "[thresholds]\naccept = " << fmt(th.accept) << "\nreject = " << fmt(th.reject)
         << "\npositive_keep = " << fmt(th.positive_keep) << '\n';
  write_text_file(ws.dir() + "/thresholds.cfg", thfile.str());
  ExperimentConfig snap = cfg;
  snap.calibrated_accept = th.accept;
  snap.calibrated_reject = th.reject;
  snap.calibrated_keep = th.positive_keep;
  write_snapshot(snap, ws.dir());

  save_pseudo_report(ws.dir() + "/pseudo_report.tsv", decisions);

  // Audit-channel diagnostics (oracle only; not used by training).
  int64_t truth_pos = 0, truth_neg = 0, fp_at_accept = 0, fn_at_reject = 0;
  int64_t pseudo_pos_correct = 0, pseudo_pos_total = 0, pseudo_neg_correct = 0,
          pseudo_neg_total = 0;
  for (size_t i = 0; i < pool.examples.size(); ++i) {
    const std::optional<Label>& truth = pool.examples[i].hidden_truth;
    if (!truth) continue;
    bool is_pos = *truth == Label::Wakeword;
    (is_pos ? truth_pos : truth_neg)++;
    if (!is_pos && pool_scores[i] >= th.accept) ++fp_at_accept;
    if (is_pos && pool_scores[i] <= th.reject) ++fn_at_reject;
    if (decisions[i].decision == ssl::PseudoDecision::Wakeword) {
      ++pseudo_pos_total;
      if (is_pos) ++pseudo_pos_correct;
    } else if (decisions[i].decision == ssl::PseudoDecision::NotWakeword) {
      ++pseudo_neg_total;
      if (!is_pos) ++pseudo_neg_correct;
    }
  }
  // Held-out score spread diagnostics.
  std::vector<double> hpos, hneg;
  for (size_t i = 0; i < heldout_scores.size(); ++i)
    (heldout_labels[i] == Label::Wakeword ? hpos : hneg).push_back(heldout_scores[i]);
  std::sort(hpos.begin(), hpos.end());
  std::sort(hneg.begin(), hneg.end());
  auto quant = [](const std::vector<double>& v, double q) {
    return v.empty() ? 0.0 : v[size_t(q * double(v.size() - 1))];
  };

  std::ostringstream sum;
  sum << "pool size: " << pool.examples.size() << '\n'
      << "heldout positive score quantiles (10/50/90): " << fmt(quant(hpos, 0.1)) << ' '
      << fmt(quant(hpos, 0.5)) << ' ' << fmt(quant(hpos, 0.9)) << '\n'
      << "heldout negative score quantiles (10/50/90): " << fmt(quant(hneg, 0.1)) << ' '
      << fmt(quant(hneg, 0.5)) << ' ' << fmt(quant(hneg, 0.9)) << '\n'
      << "accept threshold: " << fmt(th.accept) << (clamped ? " (reject clamped)" : "") << '\n'
      << "reject threshold: " << fmt(th.reject) << '\n'
      << "labeled positive fraction: " << fmt(labeled_pos_frac) << '\n'
      << "accepted positive fraction before subsampling: " << fmt(pool_pos_frac) << '\n'
      << "positive keep probability: " << fmt(th.positive_keep) << '\n'
      << "accepted positives: " << counts.accepted_pos << '\n'
      << "accepted negatives: " << counts.accepted_neg << '\n'
      << "discarded (between thresholds): " << counts.discarded << '\n'
      << "subsample-dropped: " << counts.subsample_dropped << '\n';
  double kept = double(counts.accepted_pos + counts.accepted_neg);
  sum << "pseudo positive fraction: " << fmt(counts.accepted_pos / std::max(kept, 1.0)) << '\n';
  if (truth_pos > 0 && truth_neg > 0) {
    sum << "audit: teacher pool FPR at accept: " << fmt(double(fp_at_accept) / double(truth_neg))
        << '\n'
        << "audit: teacher pool FRR at reject: " << fmt(double(fn_at_reject) / double(truth_pos))
        << '\n';
    if (pseudo_pos_total > 0)
      sum << "audit: pseudo-positive precision: "
          << fmt(double(pseudo_pos_correct) / double(pseudo_pos_total)) << '\n';
    if (pseudo_neg_total > 0)
      sum << "audit: pseudo-negative precision: "
          << fmt(double(pseudo_neg_correct) / double(pseudo_neg_total)) << '\n';
  }
  write_text_file(ws.dir() + "/pseudo_summary.txt", sum.str());
  std::printf("label: accepted %lld+ / %lld-, discarded %lld, subsample-dropped %lld, keep %.4f\n",
              (long long)counts.accepted_pos, (long long)counts.accepted_neg,
              (long long)counts.discarded, (long long)counts.subsample_dropped,
              th.positive_keep);
  ws.set_thresholds(th);
  ws.release_windows(synth::Split::PoolUnlabeled);
}

void run_train(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  ssl::Dataset& labeled = ws.windows(synth::Split::TrainLabeled, cfg.student_kind);
  ssl::Dataset& pool = ws.windows(synth::Split::PoolUnlabeled, cfg.student_kind);
  std::vector<PoolDecisionRecord> decisions =
      load_pseudo_report(ws.dir() + "/pseudo_report.tsv");
  ssl::Dataset pseudo = pseudo_dataset_from_decisions(pool, decisions);

  models::ArchSpec arch = student_arch(cfg);
  {
    ssl::TrainConfig tc = make_train_config(cfg, cfg.student_updates, 1.0,
                                            mix64(ws.run_seed(), kSeedBaseline));
    std::vector<double> trace;
    nn::Network<float> baseline = ssl::train_student(&labeled, nullptr, arch, tc, trace);
    baseline.save(ws.dir() + "/baseline.ckpt");
    save_loss_trace(ws.dir() + "/baseline_loss.tsv", trace);
    ws.set_baseline(std::move(baseline));
  }
  if (pseudo.examples.empty() && cfg.labeled_weight == 1.0) {
    // Degenerate mix: no pseudo data and full weight on labeled examples is
    // exactly the supervised baseline.
    std::fprintf(stderr, "train: empty pseudo data with labeled_weight 1; "
                         "student collapses to the baseline\n");
    fs::copy_file(ws.dir() + "/baseline.ckpt", ws.dir() + "/student.ckpt",
                  fs::copy_options::overwrite_existing);
    fs::copy_file(ws.dir() + "/baseline_loss.tsv", ws.dir() + "/student_loss.tsv",
                  fs::copy_options::overwrite_existing);
    ws.set_student(nn::Network<float>::load(ws.dir() + "/student.ckpt"));
    return;
  }
  {
    ssl::TrainConfig tc = make_train_config(cfg, cfg.student_updates, cfg.labeled_weight,
                                            mix64(ws.run_seed(), kSeedStudent));
    std::vector<double> trace;
    nn::Network<float> student = ssl::train_student(
        &labeled, pseudo.examples.empty() ? nullptr : &pseudo, arch, tc, trace);
    student.save(ws.dir() + "/student.ckpt");
    save_loss_trace(ws.dir() + "/student_loss.tsv", trace);
    ws.set_student(std::move(student));
  }
}

namespace {

struct EvalSide {
  std::vector<Label> labels;
  std::vector<double> baseline_scores;
  eval::DetCurve baseline_curve;
  std::pair<double, double> op;
};

struct EvalContext {
  double op_threshold = 0.5;
  EvalSide shifted, source;
};

EvalContext make_eval_context(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  nn::Network<float>& baseline = ws.baseline();
  ssl::Dataset& heldout = ws.windows(synth::Split::Heldout, cfg.student_kind);
  std::vector<double> hs = dataset_scores(baseline, heldout);
  std::vector<Label> hl = dataset_labels(heldout);
  EvalContext ctx;
  ctx.op_threshold = eval::threshold_for_frr(hs, hl, cfg.op_frr);
  auto build_side = [&](synth::Split split, EvalSide& side) {
    ssl::Dataset& ds = ws.windows(split, cfg.student_kind);
    side.labels = dataset_labels(ds);
    side.baseline_scores = dataset_scores(baseline, ds);
    side.baseline_curve = eval::det_curve(side.baseline_scores, side.labels);
    side.op = eval::operating_point(side.baseline_curve, ctx.op_threshold);
  };
  build_side(synth::Split::EvalShifted, ctx.shifted);
  build_side(synth::Split::EvalSource, ctx.source);
  return ctx;
}

std::optional<double> eval_model_on_side(Workspace& ws, nn::Network<float>& model,
                                         synth::Split split, const EvalSide& side,
                                         const std::string& det_path) {
  std::vector<double> scores =
      dataset_scores(model, ws.windows(split, ws.cfg().student_kind));
  eval::DetCurve curve = eval::det_curve(scores, side.labels);
  if (!det_path.empty()) eval::write_det_file(det_path, curve, side.op);
  return eval::relative_fdr_improvement(curve, side.op);
}

std::vector<std::pair<double, double>> normalized_xy(const eval::DetCurve& curve,
                                                     std::pair<double, double> op) {
  std::vector<std::pair<double, double>> xy;
  for (const eval::DetPoint& p : curve.points)
    xy.emplace_back(p.frr / op.first, p.fdr / op.second);
  return xy;
}

}  // namespace

EvalReport run_eval(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  fs::create_directories(ws.dir() + "/det");
  EvalContext ctx = make_eval_context(ws);
  nn::Network<float>& baseline = ws.baseline();
  nn::Network<float>& student = ws.student();

  EvalReport report;
  struct Cond {
    const char* name;
    synth::Split split;
    EvalSide* side;
    std::optional<double>* out;
  } conds[2] = {
      {"shift", synth::Split::EvalShifted, &ctx.shifted, &report.rel_fdr_shift},
      {"no_shift", synth::Split::EvalSource, &ctx.source, &report.rel_fdr_no_shift},
  };
  for (Cond& c : conds) {
    std::string base_path = ws.dir() + "/det/baseline_" + c.name + ".det.tsv";
    eval::write_det_file(base_path, c.side->baseline_curve, c.side->op);
    std::string stu_path = ws.dir() + "/det/student_" + c.name + ".det.tsv";
    std::vector<double> scores = dataset_scores(student, ws.windows(c.split, cfg.student_kind));
    eval::DetCurve stu_curve = eval::det_curve(scores, c.side->labels);
    eval::write_det_file(stu_path, stu_curve, c.side->op);
    *c.out = eval::relative_fdr_improvement(stu_curve, c.side->op);

    std::vector<eval::SvgCurve> svg;
    svg.push_back({"baseline", normalized_xy(c.side->baseline_curve, c.side->op), false});
    svg.push_back({"ssl student", normalized_xy(stu_curve, c.side->op), true});
    write_text_file(ws.dir() + "/det/pair_" + c.name + ".svg",
                    eval::render_det_svg(std::string("eval ") + c.name, svg));
  }

  std::ostringstream tsv;
  tsv << "condition\trel_fdr_imp_pct\n";
  tsv << "shift\t" << fmt_opt(report.rel_fdr_shift) << '\n';
  tsv << "no_shift\t" << fmt_opt(report.rel_fdr_no_shift) << '\n';
  write_text_file(ws.dir() + "/report.tsv", tsv.str());

  std::ostringstream txt;
  txt << "relative FDR improvement at the baseline operating point\n"
      << "  shift:    " << fmt_opt(report.rel_fdr_shift) << " %\n"
      << "  no shift: " << fmt_opt(report.rel_fdr_no_shift) << " %\n"
      << "baseline OP threshold (held-out FRR target " << cfg.op_frr
      << "): " << fmt(ctx.op_threshold) << '\n'
      << "baseline OP shift: frr " << fmt(ctx.shifted.op.first) << ", fdr "
      << fmt(ctx.shifted.op.second) << '\n'
      << "baseline OP no shift: frr " << fmt(ctx.source.op.first) << ", fdr "
      << fmt(ctx.source.op.second) << '\n';
  write_text_file(ws.dir() + "/report.txt", txt.str());
  std::printf("eval: rel FDR improvement shift %s%%, no shift %s%%\n",
              fmt_opt(report.rel_fdr_shift).c_str(), fmt_opt(report.rel_fdr_no_shift).c_str());
  return report;
}

std::string seed_dir(const std::string& out_dir, const ExperimentConfig& cfg, int seed_index) {
  if (cfg.num_seeds <= 1) return out_dir;
  char buf[32];
  std::snprintf(buf, sizeof buf, "/seed_%03d", seed_index);
  return out_dir + buf;
}

namespace {

template <class F>
void run_stage(const char* name, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    throw PipelineError(std::string("stage ") + name + " failed: " + e.what());
  }
}

}  // namespace

EvalReport run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_snapshot(cfg, out_dir);
  std::vector<EvalReport> reports;
  for (int i = 0; i < cfg.num_seeds; ++i) {
    ExperimentConfig seed_cfg = cfg;
    seed_cfg.seed = cfg.seed + uint64_t(i);
    seed_cfg.num_seeds = 1;
    Workspace ws(seed_cfg, seed_dir(out_dir, cfg, i), seed_cfg.seed);
    std::printf("== pipeline seed %" PRIu64 " -> %s\n", seed_cfg.seed, ws.dir().c_str());
    run_stage("gen", [&] { run_gen(ws); });
    run_stage("train-teacher", [&] { run_train_teacher(ws); });
    run_stage("label", [&] { run_label(ws); });
    run_stage("train", [&] { run_train(ws); });
    EvalReport r;
    run_stage("eval", [&] { r = run_eval(ws); });
    reports.push_back(r);
    write_checksums(ws.dir());
  }

  EvalReport mean;
  if (!reports.empty()) {
    double s = 0, n = 0, s2 = 0, n2 = 0;
    for (const EvalReport& r : reports) {
      if (r.rel_fdr_shift) { s += *r.rel_fdr_shift; n += 1; }
      if (r.rel_fdr_no_shift) { s2 += *r.rel_fdr_no_shift; n2 += 1; }
    }
    if (n > 0) mean.rel_fdr_shift = s / n;
    if (n2 > 0) mean.rel_fdr_no_shift = s2 / n2;
  }
  if (cfg.num_seeds > 1) {
    std::ostringstream agg;
    agg << "condition\tmean_rel_fdr_imp_pct";
    for (int i = 0; i < cfg.num_seeds; ++i) agg << "\tseed" << i;
    agg << '\n';
    agg << "shift\t" << fmt_opt(mean.rel_fdr_shift);
    for (const EvalReport& r : reports) agg << '\t' << fmt_opt(r.rel_fdr_shift);
    agg << '\n';
    agg << "no_shift\t" << fmt_opt(mean.rel_fdr_no_shift);
    for (const EvalReport& r : reports) agg << '\t' << fmt_opt(r.rel_fdr_no_shift);
    agg << '\n';
    write_text_file(out_dir + "/aggregate_report.tsv", agg.str());
    write_checksums(out_dir);
  }
  return mean;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::vector<SizeRow> run_ablate_size(Workspace& ws, const std::vector<int64_t>& sizes) {
  const ExperimentConfig& cfg = ws.cfg();
  ssl::Dataset& pool = ws.windows(synth::Split::PoolUnlabeled, cfg.student_kind);
  std::vector<PoolDecisionRecord> decisions =
      load_pseudo_report(ws.dir() + "/pseudo_report.tsv");
  ssl::Dataset pseudo = pseudo_dataset_from_decisions(pool, decisions);
  EvalContext ctx = make_eval_context(ws);
  models::ArchSpec arch = student_arch(cfg);

  std::vector<SizeRow> rows;
  for (size_t si = 0; si < sizes.size(); ++si) {
    int64_t size = sizes[si];
    if (size <= 0 || size > int64_t(pseudo.examples.size()))
      throw ConfigError("ablation size " + std::to_string(size) +
                        " exceeds the pseudo-labeled pool (" +
                        std::to_string(pseudo.examples.size()) + ")");
    ssl::Dataset subset;
    subset.source = LabelSource::Pseudo;
    subset.distribution = pseudo.distribution;
    subset.window_kind = pseudo.window_kind;
    subset.examples.assign(pseudo.examples.begin(), pseudo.examples.begin() + size);

    ssl::TrainConfig tc = make_train_config(cfg, cfg.student_updates, 0.0,
                                            mix64(ws.run_seed(), kSeedAblateSize + si));
    std::vector<double> trace;
    nn::Network<float> model = ssl::train_student(nullptr, &subset, arch, tc, trace);
    SizeRow row;
    row.size = size;
    row.rel_fdr_shift = eval_model_on_side(ws, model, synth::Split::EvalShifted, ctx.shifted, "");
    row.rel_fdr_no_shift =
        eval_model_on_side(ws, model, synth::Split::EvalSource, ctx.source, "");
    std::printf("ablate-size %lld: shift %s%%, no shift %s%%\n", (long long)size,
                fmt_opt(row.rel_fdr_shift).c_str(), fmt_opt(row.rel_fdr_no_shift).c_str());
    rows.push_back(row);
  }

  std::ostringstream out;
  out << "size\trel_fdr_imp_shift_pct\trel_fdr_imp_no_shift_pct\n";
  for (const SizeRow& r : rows)
    out << r.size << '\t' << fmt_opt(r.rel_fdr_shift) << '\t' << fmt_opt(r.rel_fdr_no_shift)
        << '\n';
  write_text_file(ws.dir() + "/ablate_size.tsv", out.str());
  return rows;
}

std::vector<SubsamplingRow> run_ablate_subsampling(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  ssl::Dataset& pool = ws.windows(synth::Split::PoolUnlabeled, cfg.student_kind);
  std::vector<PoolDecisionRecord> report = load_pseudo_report(ws.dir() + "/pseudo_report.tsv");
  ssl::Thresholds derived = ws.thresholds();
  EvalContext ctx = make_eval_context(ws);
  models::ArchSpec arch = student_arch(cfg);

  // Re-decide from the persisted scores and u draws.
  auto decide_with = [&](double keep) {
    std::vector<PoolDecisionRecord> out = report;
    ssl::Thresholds th = derived;
    th.positive_keep = keep;
    for (PoolDecisionRecord& r : out)
      r.decision = ssl::pseudo_label(r.score, th, r.u);
    return out;
  };

  std::vector<SubsamplingRow> rows;
  const double keeps[2] = {1.0, derived.positive_keep};
  for (int i = 0; i < 2; ++i) {
    ssl::Dataset pseudo = pseudo_dataset_from_decisions(pool, decide_with(keeps[i]));
    SubsamplingRow row;
    row.subsampled = i == 1;
    row.pseudo_pos_fraction = pseudo.positive_fraction();
    ssl::TrainConfig tc = make_train_config(cfg, cfg.student_updates, 0.0,
                                            mix64(ws.run_seed(), kSeedAblateSub + uint64_t(i)));
    std::vector<double> trace;
    nn::Network<float> model = ssl::train_student(nullptr, &pseudo, arch, tc, trace);
    row.rel_fdr_shift = eval_model_on_side(ws, model, synth::Split::EvalShifted, ctx.shifted, "");
    row.rel_fdr_no_shift =
        eval_model_on_side(ws, model, synth::Split::EvalSource, ctx.source, "");
    std::printf("ablate-subsampling %c: shift %s%%, no shift %s%% (pos frac %.4f)\n",
                row.subsampled ? '+' : '-', fmt_opt(row.rel_fdr_shift).c_str(),
                fmt_opt(row.rel_fdr_no_shift).c_str(), row.pseudo_pos_fraction);
    rows.push_back(row);
  }

  std::ostringstream out;
  out << "subsampling\tpseudo_pos_fraction\trel_fdr_imp_shift_pct\trel_fdr_imp_no_shift_pct\n";
  for (const SubsamplingRow& r : rows)
    out << (r.subsampled ? "+" : "-") << '\t' << fmt(r.pseudo_pos_fraction) << '\t'
        << fmt_opt(r.rel_fdr_shift) << '\t' << fmt_opt(r.rel_fdr_no_shift) << '\n';
  write_text_file(ws.dir() + "/ablate_subsampling.tsv", out.str());
  return rows;
}

std::vector<EasyHardCell> run_ablate_easy_hard(Workspace& ws) {
  const ExperimentConfig& cfg = ws.cfg();
  nn::Network<float>& teacher = ws.teacher();
  nn::Network<float>& baseline = ws.baseline();
  nn::Network<float>& student = ws.student();
  ssl::Thresholds th = ws.thresholds();
  double lo = cfg.hard_band_lo >= 0.0 ? cfg.hard_band_lo : th.reject;
  double hi = cfg.hard_band_hi >= 0.0 ? cfg.hard_band_hi : th.accept;
  EvalContext ctx = make_eval_context(ws);
  fs::create_directories(ws.dir() + "/det");

  std::vector<EasyHardCell> cells;
  struct Cond {
    const char* name;
    synth::Split split;
  } conds[2] = {{"shift", synth::Split::EvalShifted}, {"noshift", synth::Split::EvalSource}};
  for (const Cond& c : conds) {
    ssl::Dataset& annot = ws.windows(c.split, feats::ModelKind::Annotator);
    std::vector<double> teacher_scores = dataset_scores(teacher, annot);
    auto [easy_idx, hard_idx] = eval::split_easy_hard(teacher_scores, lo, hi);

    ssl::Dataset& ds = ws.windows(c.split, cfg.student_kind);
    std::vector<Label> labels = dataset_labels(ds);
    std::vector<double> base_scores = dataset_scores(baseline, ds);
    std::vector<double> stu_scores = dataset_scores(student, ds);

    struct Part {
      const char* name;
      const std::vector<size_t>* idx;
    } parts[2] = {{"easy", &easy_idx}, {"hard", &hard_idx}};
    for (const Part& part : parts) {
      EasyHardCell cell;
      cell.name = std::string(part.name) + "_" + c.name;
      std::vector<double> bs, ss;
      std::vector<Label> ls;
      for (size_t i : *part.idx) {
        bs.push_back(base_scores[i]);
        ss.push_back(stu_scores[i]);
        ls.push_back(labels[i]);
      }
      bool has_pos = std::count(ls.begin(), ls.end(), Label::Wakeword) > 0;
      bool has_neg = int64_t(ls.size()) - std::count(ls.begin(), ls.end(), Label::Wakeword) > 0;
      if (ls.empty() || !has_pos || !has_neg) {
        std::fprintf(stderr, "warning: easy/hard cell %s skipped (degenerate partition)\n",
                     cell.name.c_str());
        cell.skipped = true;
        cells.push_back(cell);
        continue;
      }
      eval::DetCurve base_curve = eval::det_curve(bs, ls);
      eval::DetCurve stu_curve = eval::det_curve(ss, ls);
      std::pair<double, double> op;
      try {
        op = eval::operating_point(base_curve, ctx.op_threshold);
        cell.rel_fdr = eval::relative_fdr_improvement(stu_curve, op);
      } catch (const MetricError& e) {
        std::fprintf(stderr, "warning: easy/hard cell %s skipped (%s)\n", cell.name.c_str(),
                     e.what());
        cell.skipped = true;
        cells.push_back(cell);
        continue;
      }
      cell.det_path = ws.dir() + "/det/easyhard_" + cell.name + ".det.tsv";
      eval::write_det_file(cell.det_path, stu_curve, op);
      std::vector<eval::SvgCurve> svg;
      svg.push_back({"baseline", normalized_xy(base_curve, op), false});
      svg.push_back({"ssl student", normalized_xy(stu_curve, op), true});
      write_text_file(ws.dir() + "/det/easyhard_" + cell.name + ".svg",
                      eval::render_det_svg("easy/hard " + cell.name, svg));
      cells.push_back(cell);
    }
  }

  std::ostringstream out;
  out << "cell\trel_fdr_imp_pct\tdet_file\n";
  for (const EasyHardCell& cell : cells)
    out << cell.name << '\t' << (cell.skipped ? "skipped" : fmt_opt(cell.rel_fdr)) << '\t'
        << (cell.det_path.empty() ? "-" : fs::path(cell.det_path).filename().string()) << '\n';
  write_text_file(ws.dir() + "/easy_hard.tsv", out.str());
  return cells;
}

namespace {

template <class RowT, class RunFn, class HeaderFn, class RowFn>
void run_multi_seed_ablation(const ExperimentConfig& cfg, const std::string& out_dir,
                             const std::string& aggregate_name, RunFn&& run, HeaderFn&& header,
                             RowFn&& row_fn) {
  std::vector<std::vector<RowT>> per_seed;
  for (int i = 0; i < cfg.num_seeds; ++i) {
    ExperimentConfig seed_cfg = cfg;
    seed_cfg.seed = cfg.seed + uint64_t(i);
    seed_cfg.num_seeds = 1;
    Workspace ws(seed_cfg, seed_dir(out_dir, cfg, i), seed_cfg.seed);
    per_seed.push_back(run(ws));
  }
  if (cfg.num_seeds > 1) {
    std::ostringstream agg;
    agg << header() << '\n';
    for (size_t r = 0; r < per_seed[0].size(); ++r) {
      agg << row_fn(per_seed, r) << '\n';
    }
    write_text_file(out_dir + "/" + aggregate_name, agg.str());
  }
}

std::string mean_opt(const std::vector<std::optional<double>>& vs) {
  double s = 0;
  int n = 0;
  for (const auto& v : vs)
    if (v) {
      s += *v;
      ++n;
    }
  if (n == 0) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", s / n);
  return buf;
}

}  // namespace

void run_ablate_size_all(const ExperimentConfig& cfg, const std::string& out_dir,
                         const std::vector<int64_t>& sizes) {
  run_multi_seed_ablation<SizeRow>(
      cfg, out_dir, "ablate_size_aggregate.tsv",
      [&](Workspace& ws) { return run_ablate_size(ws, sizes); },
      [] { return std::string("size\tmean_rel_fdr_imp_shift_pct\tmean_rel_fdr_imp_no_shift_pct"); },
      [](const std::vector<std::vector<SizeRow>>& per_seed, size_t r) {
        std::vector<std::optional<double>> sh, ns;
        for (const auto& rows : per_seed) {
          sh.push_back(rows[r].rel_fdr_shift);
          ns.push_back(rows[r].rel_fdr_no_shift);
        }
        return std::to_string(per_seed[0][r].size) + "\t" + mean_opt(sh) + "\t" + mean_opt(ns);
      });
}

void run_ablate_subsampling_all(const ExperimentConfig& cfg, const std::string& out_dir) {
  run_multi_seed_ablation<SubsamplingRow>(
      cfg, out_dir, "ablate_subsampling_aggregate.tsv",
      [&](Workspace& ws) { return run_ablate_subsampling(ws); },
      [] {
        return std::string(
            "subsampling\tmean_rel_fdr_imp_shift_pct\tmean_rel_fdr_imp_no_shift_pct");
      },
      [](const std::vector<std::vector<SubsamplingRow>>& per_seed, size_t r) {
        std::vector<std::optional<double>> sh, ns;
        for (const auto& rows : per_seed) {
          sh.push_back(rows[r].rel_fdr_shift);
          ns.push_back(rows[r].rel_fdr_no_shift);
        }
        return std::string(per_seed[0][r].subsampled ? "+" : "-") + "\t" + mean_opt(sh) + "\t" +
               mean_opt(ns);
      });
}

void run_ablate_easy_hard_all(const ExperimentConfig& cfg, const std::string& out_dir) {
  run_multi_seed_ablation<EasyHardCell>(
      cfg, out_dir, "easy_hard_aggregate.tsv",
      [&](Workspace& ws) { return run_ablate_easy_hard(ws); },
      [] { return std::string("cell\tmean_rel_fdr_imp_pct"); },
      [](const std::vector<std::vector<EasyHardCell>>& per_seed, size_t r) {
        std::vector<std::optional<double>> vs;
        for (const auto& rows : per_seed)
          if (!rows[r].skipped) vs.push_back(rows[r].rel_fdr);
        return per_seed[0][r].name + "\t" + mean_opt(vs);
      });
}

void run_report(const std::string& run_dir) {
  EvalReport report;
  struct Cond {
    const char* name;
    std::optional<double>* out;
  } conds[2] = {{"shift", &report.rel_fdr_shift}, {"no_shift", &report.rel_fdr_no_shift}};
  for (Cond& c : conds) {
    eval::DetFile stu = eval::read_det_file(run_dir + "/det/student_" + std::string(c.name) +
                                            ".det.tsv");
    if (!stu.baseline_op) throw PipelineError("student DET file misses the baseline OP");
    *c.out = eval::relative_fdr_improvement(stu.curve, *stu.baseline_op);
  }
  std::ostringstream tsv;
  tsv << "condition\trel_fdr_imp_pct\n";
  tsv << "shift\t" << fmt_opt(report.rel_fdr_shift) << '\n';
  tsv << "no_shift\t" << fmt_opt(report.rel_fdr_no_shift) << '\n';
  write_text_file(run_dir + "/report.tsv", tsv.str());
  std::printf("report: shift %s%%, no shift %s%%\n", fmt_opt(report.rel_fdr_shift).c_str(),
              fmt_opt(report.rel_fdr_no_shift).c_str());
}

void write_checksums(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), dir).string();
    if (fs::path(rel).filename() == "checksums.tsv") continue;
    paths.push_back(rel);
  }
  std::sort(paths.begin(), paths.end());
  std::ostringstream out;
  out << "# path\tfnv1a64\n";
  char buf[32];
  for (const std::string& rel : paths) {
    uint64_t h = fnv1a64_file(dir + "/" + rel);
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    out << rel << '\t' << buf << '\n';
  }
  write_text_file(dir + "/checksums.tsv", out.str());
}

}  // namespace kws::exp
