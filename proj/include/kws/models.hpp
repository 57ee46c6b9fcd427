// kws/models.hpp

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

#ifndef KWS_MODELS_HPP_
#define KWS_MODELS_HPP_

#include <algorithm>
#include <cmath>

#include "kws/features.hpp"
#include "kws/nn.hpp"

namespace kws::models {

using feats::ModelKind;

// Concrete architectures at an adjustable width. At width_scale = 1 the
// trainable-parameter counts land within +/-20% of 2M (CNN detector),
// 250K (FCN detector) and 4M (annotator).
struct ArchSpec {
  ModelKind kind = ModelKind::CnnDetector;
  double width_scale = 1.0;   // in (0, 1]
  double dropout_rate = 0.3;

  int context_frames() const { return feats::context_frames(kind); }
  int feature_dims() const { return feats::feature_dims(kind); }
  feats::WindowShape input_shape() const { return feats::model_input_shape(kind); }
};

namespace detail {

// Channel ladder and dense widths at width_scale = 1.
constexpr int kConvChannels[5] = {32, 64, 96, 128, 128};
constexpr int kDenseWidths[2] = {768, 512};
constexpr int kFcnWidths[4] = {256, 256, 192, 64};

inline int scaled(int base, double s, int floor_units) {
  return std::max(floor_units, int(std::lround(double(base) * s)));
}

}  // namespace detail

template <class S>
nn::Network<S> build(const ArchSpec& spec, uint64_t seed) {
  if (!(spec.width_scale > 0.0) || spec.width_scale > 1.0)
    throw ConfigError("width_scale must lie in (0, 1]");
  nn::Network<S> net;
  const double s = spec.width_scale;
  if (spec.kind == ModelKind::FcnDetector) {
    net.add_flatten();
    for (int w : detail::kFcnWidths) {
      net.add_dense(detail::scaled(w, s, 2));
      net.add_batchnorm();
      net.add_relu();
      net.add_dropout(spec.dropout_rate);
    }
    net.add_dense(2);
    net.add_softmax2();
    feats::WindowShape in = spec.input_shape();
    net.build({1, in.frames, in.dims}, seed);
    return net;
  }
  // CNN detector and annotator share the topology; only the input context
  // differs (100 vs 195 frames).
  for (int i = 0; i < 5; ++i) {
    net.add_conv2d(detail::scaled(detail::kConvChannels[i], s, 1), 3, 3, 1);
    net.add_batchnorm();
    net.add_relu();
    if (i < 3) net.add_maxpool(2);
    net.add_dropout(spec.dropout_rate);
  }
  net.add_flatten();
  for (int w : detail::kDenseWidths) {
    net.add_dense(detail::scaled(w, s, 2));
    net.add_batchnorm();
    net.add_relu();
    net.add_dropout(spec.dropout_rate);
  }
  net.add_dense(2);
  net.add_softmax2();
  feats::WindowShape in = spec.input_shape();
  net.build({1, in.frames, in.dims}, seed);
  return net;
}

// Wakeword-class posterior of one windowed example from a frozen model.
template <class S>
double annotate(nn::Network<S>& teacher, const Eigen::Ref<const nn::Mat<S>>& window_row) {
  if (window_row.rows() != 1 || window_row.cols() != teacher.input_size())
    throw ContractError("annotate expects one flattened window matching the model input");
  nn::Mat<S> probs = teacher.forward(window_row, nn::Mode::Infer);
  return double(probs(0, nn::one_hot_index(Label::Wakeword)));
}

// Scores a stack of flattened windows (one per row). Work is done in
// fixed-size chunks so per-example results do not depend on how many
// examples are scored together; a short tail is padded and discarded.
template <class S>
std::vector<double> score_windows(nn::Network<S>& model, const nn::Mat<S>& rows,
                                  Eigen::Index chunk = 64) {
  std::vector<double> scores(size_t(rows.rows()));
  const int wake = nn::one_hot_index(Label::Wakeword);
  nn::Mat<S> buf(chunk, rows.cols());
  for (Eigen::Index start = 0; start < rows.rows(); start += chunk) {
    Eigen::Index n = std::min(chunk, rows.rows() - start);
    buf.topRows(n) = rows.middleRows(start, n);
    for (Eigen::Index i = n; i < chunk; ++i) buf.row(i) = rows.row(start);
    nn::Mat<S> probs = model.forward(buf, nn::Mode::Infer);
    for (Eigen::Index i = 0; i < n; ++i) scores[size_t(start + i)] = double(probs(i, wake));
  }
  return scores;
}

}  // namespace kws::models

#endif  // KWS_MODELS_HPP_
