// kws/nn.hpp

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
// Minimal trainable network engine: dense and 2-D convolutional layers,
// batch normalization, dropout, max pooling, softmax/cross-entropy and Adam.
// Templated on the scalar type; training runs in float, gradient checking
// in double. Single-threaded and bitwise deterministic for a fixed seed.

#ifndef KWS_NN_HPP_
#define KWS_NN_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "kws/common.hpp"
#include "kws/rng.hpp"

namespace kws::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Mode : uint8_t { Train, Infer };

struct TensorShape {
  Eigen::Index c = 1, h = 1, w = 1;
  Eigen::Index size() const { return c * h * w; }
  bool operator==(const TensorShape&) const = default;
};

// A batch: one example per row, channel-major (CHW) flattening.
template <class S>
struct Tensor {
  TensorShape shape;
  Mat<S> data;
  Eigen::Index batch() const { return data.rows(); }
};

inline int one_hot_index(Label l) { return l == Label::Wakeword ? 0 : 1; }

struct LayerSpec {
  enum class Kind : uint8_t { Dense, Conv2D, BatchNorm, Dropout, ReLU, MaxPool2D, Flatten, Softmax2 };
  Kind kind = Kind::Dense;
  int units = 0;                              // dense
  int out_ch = 0, kh = 0, kw = 0, stride = 1; // conv
  int pool = 2;                               // maxpool
  double rate = 0.0;                          // dropout
  // Resolved at build time:
  int in_dim = 0;   // dense fan-in
  int in_ch = 0;    // conv fan-in channels
  int bn_dim = 0;   // batchnorm features/channels
};

// Closed-form trainable-parameter count from a resolved layer list.
inline int64_t param_count(const std::vector<LayerSpec>& specs) {
  int64_t n = 0;
  for (const LayerSpec& s : specs) {
    switch (s.kind) {
      case LayerSpec::Kind::Dense: n += int64_t(s.in_dim) * s.units + s.units; break;
      case LayerSpec::Kind::Conv2D:
        n += int64_t(s.out_ch) * s.in_ch * s.kh * s.kw + s.out_ch;
        break;
      case LayerSpec::Kind::BatchNorm: n += 2 * int64_t(s.bn_dim); break;
      default: break;
    }
  }
  return n;
}

template <class S>
struct ParamRef {
  S* value = nullptr;
  S* grad = nullptr;
  Eigen::Index n = 0;
};

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerSpec spec() const = 0;
  // Resolves output shape, sizes parameters. Called once at build.
  virtual TensorShape resolve(TensorShape in) = 0;
  virtual void init_params(Rng&) {}
  virtual Mat<S> forward(const Mat<S>& x, Mode mode, bool cache, Rng& rng) = 0;
  virtual Mat<S> backward(const Mat<S>& dy) = 0;
  virtual void collect_params(std::vector<ParamRef<S>>& out) {}
  virtual void zero_grads() {}
  // Persistent state (trainables plus any running statistics), as f64.
  virtual void save_state(std::vector<uint8_t>& out) const {}
  virtual void load_state(const uint8_t*& p, const uint8_t* end) {}
  virtual int64_t state_count() const { return 0; }

 protected:
  static void append_mat(std::vector<uint8_t>& out, const Mat<S>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) append_le_f64(out, double(m(i, j)));
  }
  static void append_vec(std::vector<uint8_t>& out, const Vec<S>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) append_le_f64(out, double(v[i]));
  }
  static void read_mat(const uint8_t*& p, const uint8_t* end, Mat<S>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (p + 8 > end) throw IoError("checkpoint blob truncated");
        m(i, j) = S(read_le_f64(p));
        p += 8;
      }
  }
  static void read_vec(const uint8_t*& p, const uint8_t* end, Vec<S>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (p + 8 > end) throw IoError("checkpoint blob truncated");
      v[i] = S(read_le_f64(p));
      p += 8;
    }
  }
};

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <class S>
class DenseLayer : public Layer<S> {
 public:
  explicit DenseLayer(int units) { spec_.kind = LayerSpec::Kind::Dense; spec_.units = units; }

  LayerSpec spec() const override { return spec_; }

  TensorShape resolve(TensorShape in) override {
    spec_.in_dim = int(in.size());
    w_.resize(spec_.units, spec_.in_dim);
    b_.resize(spec_.units);
    dw_.resizeLike(w_);
    db_.resizeLike(b_);
    return {Eigen::Index(spec_.units), 1, 1};
  }

  void init_params(Rng& rng) override {
    double limit = std::sqrt(6.0 / double(spec_.in_dim));
    for (Eigen::Index i = 0; i < w_.rows(); ++i)
      for (Eigen::Index j = 0; j < w_.cols(); ++j) w_(i, j) = S(rng.uniform(-limit, limit));
    b_.setZero();
  }

  Mat<S> forward(const Mat<S>& x, Mode, bool cache, Rng&) override {
    if (cache) x_ = x;
    Mat<S> y = x * w_.transpose();
    y.rowwise() += b_.transpose();
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) override {
    dw_.noalias() += dy.transpose() * x_;
    db_ += dy.colwise().sum().transpose();
    return dy * w_;
  }

  void collect_params(std::vector<ParamRef<S>>& out) override {
    out.push_back({w_.data(), dw_.data(), w_.size()});
    out.push_back({b_.data(), db_.data(), b_.size()});
  }
  void zero_grads() override { dw_.setZero(); db_.setZero(); }
  void save_state(std::vector<uint8_t>& out) const override {
    this->append_mat(out, w_);
    this->append_vec(out, b_);
  }
  void load_state(const uint8_t*& p, const uint8_t* end) override {
    this->read_mat(p, end, w_);
    this->read_vec(p, end, b_);
  }
  int64_t state_count() const override { return w_.size() + b_.size(); }

 private:
  LayerSpec spec_;
  Mat<S> w_, dw_;
  Vec<S> b_, db_;
  Mat<S> x_;
};

// ---------------------------------------------------------------------------
// Conv2D (valid padding) via im2col + GEMM
// ---------------------------------------------------------------------------

template <class S>
class Conv2DLayer : public Layer<S> {
 public:
  Conv2DLayer(int out_ch, int kh, int kw, int stride) {
    spec_.kind = LayerSpec::Kind::Conv2D;
    spec_.out_ch = out_ch;
    spec_.kh = kh;
    spec_.kw = kw;
    spec_.stride = stride;
  }

  LayerSpec spec() const override { return spec_; }

  TensorShape resolve(TensorShape in) override {
    in_ = in;
    spec_.in_ch = int(in.c);
    oh_ = (in.h - spec_.kh) / spec_.stride + 1;
    ow_ = (in.w - spec_.kw) / spec_.stride + 1;
    if (oh_ < 1 || ow_ < 1)
      throw ConfigError("conv kernel larger than its input plane");
    w_.resize(spec_.out_ch, int64_t(spec_.in_ch) * spec_.kh * spec_.kw);
    b_.resize(spec_.out_ch);
    dw_.resizeLike(w_);
    db_.resizeLike(b_);
    return {Eigen::Index(spec_.out_ch), oh_, ow_};
  }

  void init_params(Rng& rng) override {
    double limit = std::sqrt(6.0 / double(spec_.in_ch * spec_.kh * spec_.kw));
    for (Eigen::Index i = 0; i < w_.rows(); ++i)
      for (Eigen::Index j = 0; j < w_.cols(); ++j) w_(i, j) = S(rng.uniform(-limit, limit));
    b_.setZero();
  }

  Mat<S> forward(const Mat<S>& x, Mode, bool cache, Rng&) override {
    const Eigen::Index batch = x.rows();
    im2col(x, cols_);
    Mat<S> y_mat = w_ * cols_;  // out_ch x (batch*oh*ow)
    y_mat.colwise() += b_;
    Mat<S> y(batch, Eigen::Index(spec_.out_ch) * oh_ * ow_);
    const Eigen::Index plane = oh_ * ow_;
    for (Eigen::Index bi = 0; bi < batch; ++bi)
      for (Eigen::Index o = 0; o < spec_.out_ch; ++o)
        y.row(bi).segment(o * plane, plane) = y_mat.row(o).segment(bi * plane, plane);
    if (cache) {
      batch_ = batch;
    } else {
      cols_.resize(0, 0);
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) override {
    const Eigen::Index batch = batch_;
    const Eigen::Index plane = oh_ * ow_;
    Mat<S> dy_mat(spec_.out_ch, batch * plane);
    for (Eigen::Index bi = 0; bi < batch; ++bi)
      for (Eigen::Index o = 0; o < spec_.out_ch; ++o)
        dy_mat.row(o).segment(bi * plane, plane) = dy.row(bi).segment(o * plane, plane);
    dw_.noalias() += dy_mat * cols_.transpose();
    db_ += dy_mat.rowwise().sum();
    Mat<S> dcols = w_.transpose() * dy_mat;
    return col2im(dcols, batch);
  }

  void collect_params(std::vector<ParamRef<S>>& out) override {
    out.push_back({w_.data(), dw_.data(), w_.size()});
    out.push_back({b_.data(), db_.data(), b_.size()});
  }
  void zero_grads() override { dw_.setZero(); db_.setZero(); }
  void save_state(std::vector<uint8_t>& out) const override {
    this->append_mat(out, w_);
    this->append_vec(out, b_);
  }
  void load_state(const uint8_t*& p, const uint8_t* end) override {
    this->read_mat(p, end, w_);
    this->read_vec(p, end, b_);
  }
  int64_t state_count() const override { return w_.size() + b_.size(); }

 private:
  void im2col(const Mat<S>& x, Mat<S>& cols) const {
    const Eigen::Index batch = x.rows();
    const Eigen::Index plane = oh_ * ow_;
    const Eigen::Index hw = in_.h * in_.w;
    cols.resize(Eigen::Index(spec_.in_ch) * spec_.kh * spec_.kw, batch * plane);
    for (Eigen::Index c = 0; c < spec_.in_ch; ++c)
      for (Eigen::Index i = 0; i < spec_.kh; ++i)
        for (Eigen::Index j = 0; j < spec_.kw; ++j) {
          S* row = cols.data() + ((c * spec_.kh + i) * spec_.kw + j) * cols.cols();
          for (Eigen::Index bi = 0; bi < batch; ++bi) {
            const S* xb = x.data() + bi * x.cols() + c * hw;
            S* dst = row + bi * plane;
            for (Eigen::Index oh = 0; oh < oh_; ++oh) {
              const S* src = xb + (oh * spec_.stride + i) * in_.w + j;
              for (Eigen::Index ow = 0; ow < ow_; ++ow)
                dst[oh * ow_ + ow] = src[ow * spec_.stride];
            }
          }
        }
  }

  Mat<S> col2im(const Mat<S>& dcols, Eigen::Index batch) const {
    const Eigen::Index plane = oh_ * ow_;
    const Eigen::Index hw = in_.h * in_.w;
    Mat<S> dx = Mat<S>::Zero(batch, in_.size());
    for (Eigen::Index c = 0; c < spec_.in_ch; ++c)
      for (Eigen::Index i = 0; i < spec_.kh; ++i)
        for (Eigen::Index j = 0; j < spec_.kw; ++j) {
          const S* row = dcols.data() + ((c * spec_.kh + i) * spec_.kw + j) * dcols.cols();
          for (Eigen::Index bi = 0; bi < batch; ++bi) {
            S* xb = dx.data() + bi * dx.cols() + c * hw;
            const S* src = row + bi * plane;
            for (Eigen::Index oh = 0; oh < oh_; ++oh) {
              S* dst = xb + (oh * spec_.stride + i) * in_.w + j;
              for (Eigen::Index ow = 0; ow < ow_; ++ow)
                dst[ow * spec_.stride] += src[oh * ow_ + ow];
            }
          }
        }
    return dx;
  }

  LayerSpec spec_;
  TensorShape in_;
  Eigen::Index oh_ = 0, ow_ = 0, batch_ = 0;
  Mat<S> w_, dw_;
  Vec<S> b_, db_;
  Mat<S> cols_;
};

// ---------------------------------------------------------------------------
// BatchNorm: per-feature after dense layers, per-channel after conv layers.
// ---------------------------------------------------------------------------

template <class S>
class BatchNormLayer : public Layer<S> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.99;

  BatchNormLayer() { spec_.kind = LayerSpec::Kind::BatchNorm; }

  LayerSpec spec() const override { return spec_; }

  TensorShape resolve(TensorShape in) override {
    in_ = in;
    spec_.bn_dim = int(in.c);
    group_ = in.h * in.w;  // elements per channel per example
    gamma_ = Vec<S>::Ones(in.c);
    beta_ = Vec<S>::Zero(in.c);
    dgamma_ = Vec<S>::Zero(in.c);
    dbeta_ = Vec<S>::Zero(in.c);
    running_mean_ = Vec<S>::Zero(in.c);
    running_var_ = Vec<S>::Ones(in.c);
    return in;
  }

  Mat<S> forward(const Mat<S>& x, Mode mode, bool cache, Rng&) override {
    const Eigen::Index batch = x.rows();
    const Eigen::Index nc = in_.c;
    Mat<S> y(batch, x.cols());
    if (mode == Mode::Train) {
      const double m = double(batch * group_);
      Vec<S> mean(nc), inv_std(nc);
      if (cache) xhat_.resize(batch, x.cols());
      for (Eigen::Index c = 0; c < nc; ++c) {
        double sum = 0.0, sq = 0.0;
        for (Eigen::Index bi = 0; bi < batch; ++bi) {
          const S* p = x.data() + bi * x.cols() + c * group_;
          for (Eigen::Index j = 0; j < group_; ++j) {
            sum += double(p[j]);
            sq += double(p[j]) * double(p[j]);
          }
        }
        double mu = sum / m;
        double var = sq / m - mu * mu;
        if (var < 0.0) var = 0.0;
        mean[c] = S(mu);
        inv_std[c] = S(1.0 / std::sqrt(var + kEps));
        running_mean_[c] = S(kMomentum * double(running_mean_[c]) + (1.0 - kMomentum) * mu);
        running_var_[c] = S(kMomentum * double(running_var_[c]) + (1.0 - kMomentum) * var);
        for (Eigen::Index bi = 0; bi < batch; ++bi) {
          const S* p = x.data() + bi * x.cols() + c * group_;
          S* q = y.data() + bi * y.cols() + c * group_;
          S* h = cache ? xhat_.data() + bi * xhat_.cols() + c * group_ : nullptr;
          for (Eigen::Index j = 0; j < group_; ++j) {
            S xh = (p[j] - mean[c]) * inv_std[c];
            if (h) h[j] = xh;
            q[j] = gamma_[c] * xh + beta_[c];
          }
        }
      }
      if (cache) inv_std_ = inv_std;
    } else {
      for (Eigen::Index c = 0; c < nc; ++c) {
        S scale = gamma_[c] / S(std::sqrt(double(running_var_[c]) + kEps));
        S shift = beta_[c] - scale * running_mean_[c];
        for (Eigen::Index bi = 0; bi < batch; ++bi) {
          const S* p = x.data() + bi * x.cols() + c * group_;
          S* q = y.data() + bi * y.cols() + c * group_;
          for (Eigen::Index j = 0; j < group_; ++j) q[j] = scale * p[j] + shift;
        }
      }
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) override {
    const Eigen::Index batch = dy.rows();
    const Eigen::Index nc = in_.c;
    const double m = double(batch * group_);
    Mat<S> dx(batch, dy.cols());
    for (Eigen::Index c = 0; c < nc; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (Eigen::Index bi = 0; bi < batch; ++bi) {
        const S* d = dy.data() + bi * dy.cols() + c * group_;
        const S* h = xhat_.data() + bi * xhat_.cols() + c * group_;
        for (Eigen::Index j = 0; j < group_; ++j) {
          sum_dy += double(d[j]);
          sum_dy_xhat += double(d[j]) * double(h[j]);
        }
      }
      dbeta_[c] += S(sum_dy);
      dgamma_[c] += S(sum_dy_xhat);
      const double k = double(gamma_[c]) * double(inv_std_[c]);
      const double mean_dy = sum_dy / m;
      const double mean_dy_xhat = sum_dy_xhat / m;
      for (Eigen::Index bi = 0; bi < batch; ++bi) {
        const S* d = dy.data() + bi * dy.cols() + c * group_;
        const S* h = xhat_.data() + bi * xhat_.cols() + c * group_;
        S* o = dx.data() + bi * dx.cols() + c * group_;
        for (Eigen::Index j = 0; j < group_; ++j)
          o[j] = S(k * (double(d[j]) - mean_dy - double(h[j]) * mean_dy_xhat));
      }
    }
    return dx;
  }

  void collect_params(std::vector<ParamRef<S>>& out) override {
    out.push_back({gamma_.data(), dgamma_.data(), gamma_.size()});
    out.push_back({beta_.data(), dbeta_.data(), beta_.size()});
  }
  void zero_grads() override { dgamma_.setZero(); dbeta_.setZero(); }
  void save_state(std::vector<uint8_t>& out) const override {
    this->append_vec(out, gamma_);
    this->append_vec(out, beta_);
    this->append_vec(out, running_mean_);
    this->append_vec(out, running_var_);
  }
  void load_state(const uint8_t*& p, const uint8_t* end) override {
    this->read_vec(p, end, gamma_);
    this->read_vec(p, end, beta_);
    this->read_vec(p, end, running_mean_);
    this->read_vec(p, end, running_var_);
  }
  int64_t state_count() const override { return 4 * gamma_.size(); }

 private:
  LayerSpec spec_;
  TensorShape in_;
  Eigen::Index group_ = 1;
  Vec<S> gamma_, beta_, dgamma_, dbeta_;
  Vec<S> running_mean_, running_var_;
  Mat<S> xhat_;
  Vec<S> inv_std_;
};

// ---------------------------------------------------------------------------
// Dropout (inverted), ReLU, MaxPool, Flatten, Softmax2
// ---------------------------------------------------------------------------

template <class S>
class DropoutLayer : public Layer<S> {
 public:
  explicit DropoutLayer(double rate) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
    spec_.kind = LayerSpec::Kind::Dropout;
    spec_.rate = rate;
  }
  LayerSpec spec() const override { return spec_; }
  TensorShape resolve(TensorShape in) override { return in; }

  Mat<S> forward(const Mat<S>& x, Mode mode, bool cache, Rng& rng) override {
    if (mode == Mode::Infer || spec_.rate == 0.0) return x;
    const S keep = S(1.0 - spec_.rate);
    Mat<S> mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        mask(i, j) = S(rng.uniform()) < keep ? S(1) / keep : S(0);
    if (cache) mask_ = mask;
    return x.cwiseProduct(mask);
  }

  Mat<S> backward(const Mat<S>& dy) override { return dy.cwiseProduct(mask_); }

 private:
  LayerSpec spec_;
  Mat<S> mask_;
};

template <class S>
class ReLULayer : public Layer<S> {
 public:
  ReLULayer() { spec_.kind = LayerSpec::Kind::ReLU; }
  LayerSpec spec() const override { return spec_; }
  TensorShape resolve(TensorShape in) override { return in; }
  Mat<S> forward(const Mat<S>& x, Mode, bool cache, Rng&) override {
    Mat<S> y = x.cwiseMax(S(0));
    if (cache) positive_ = (x.array() > S(0)).template cast<S>().matrix();
    return y;
  }
  Mat<S> backward(const Mat<S>& dy) override { return dy.cwiseProduct(positive_); }

 private:
  LayerSpec spec_;
  Mat<S> positive_;
};

template <class S>
class MaxPool2DLayer : public Layer<S> {
 public:
  explicit MaxPool2DLayer(int size) {
    if (size < 1) throw ConfigError("pool size must be positive");
    spec_.kind = LayerSpec::Kind::MaxPool2D;
    spec_.pool = size;
  }
  LayerSpec spec() const override { return spec_; }

  TensorShape resolve(TensorShape in) override {
    in_ = in;
    oh_ = in.h / spec_.pool;
    ow_ = in.w / spec_.pool;
    if (oh_ < 1 || ow_ < 1) throw ConfigError("pool window larger than its input plane");
    return {in.c, oh_, ow_};
  }

  Mat<S> forward(const Mat<S>& x, Mode, bool cache, Rng&) override {
    const Eigen::Index batch = x.rows();
    const Eigen::Index hw_in = in_.h * in_.w;
    const Eigen::Index hw_out = oh_ * ow_;
    Mat<S> y(batch, in_.c * hw_out);
    if (cache) argmax_.resize(batch, in_.c * hw_out);
    const int p = spec_.pool;
    for (Eigen::Index bi = 0; bi < batch; ++bi)
      for (Eigen::Index c = 0; c < in_.c; ++c) {
        const S* src = x.data() + bi * x.cols() + c * hw_in;
        S* dst = y.data() + bi * y.cols() + c * hw_out;
        for (Eigen::Index oh = 0; oh < oh_; ++oh)
          for (Eigen::Index ow = 0; ow < ow_; ++ow) {
            Eigen::Index best = (oh * p) * in_.w + ow * p;
            S bv = src[best];
            for (int i = 0; i < p; ++i)
              for (int j = 0; j < p; ++j) {
                Eigen::Index idx = (oh * p + i) * in_.w + (ow * p + j);
                if (src[idx] > bv) {
                  bv = src[idx];
                  best = idx;
                }
              }
            dst[oh * ow_ + ow] = bv;
            if (cache) argmax_(bi, c * hw_out + oh * ow_ + ow) = int32_t(best);
          }
      }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) override {
    const Eigen::Index batch = dy.rows();
    const Eigen::Index hw_in = in_.h * in_.w;
    const Eigen::Index hw_out = oh_ * ow_;
    Mat<S> dx = Mat<S>::Zero(batch, in_.c * hw_in);
    for (Eigen::Index bi = 0; bi < batch; ++bi)
      for (Eigen::Index c = 0; c < in_.c; ++c) {
        S* out = dx.data() + bi * dx.cols() + c * hw_in;
        const S* d = dy.data() + bi * dy.cols() + c * hw_out;
        const int32_t* am = argmax_.data() + bi * argmax_.cols() + c * hw_out;
        for (Eigen::Index k = 0; k < hw_out; ++k) out[am[k]] += d[k];
      }
    return dx;
  }

 private:
  LayerSpec spec_;
  TensorShape in_;
  Eigen::Index oh_ = 0, ow_ = 0;
  Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
};

template <class S>
class FlattenLayer : public Layer<S> {
 public:
  FlattenLayer() { spec_.kind = LayerSpec::Kind::Flatten; }
  LayerSpec spec() const override { return spec_; }
  TensorShape resolve(TensorShape in) override { return {in.size(), 1, 1}; }
  Mat<S> forward(const Mat<S>& x, Mode, bool, Rng&) override { return x; }
  Mat<S> backward(const Mat<S>& dy) override { return dy; }

 private:
  LayerSpec spec_;
};

template <class S>
class Softmax2Layer : public Layer<S> {
 public:
  Softmax2Layer() { spec_.kind = LayerSpec::Kind::Softmax2; }
  LayerSpec spec() const override { return spec_; }
  TensorShape resolve(TensorShape in) override {
    if (in.size() != 2)
      throw ConfigError("softmax2 expects a 2-dimensional input, got " +
                        std::to_string(in.size()));
    return in;
  }
  Mat<S> forward(const Mat<S>& x, Mode, bool, Rng&) override {
    Mat<S> y(x.rows(), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S mx = std::max(x(i, 0), x(i, 1));
      S e0 = std::exp(x(i, 0) - mx), e1 = std::exp(x(i, 1) - mx);
      S z = e0 + e1;
      y(i, 0) = e0 / z;
      y(i, 1) = e1 / z;
    }
    return y;
  }
  // The loss gradient is fused with the softmax at the network level; this
  // layer sits at the loss boundary and is never backpropagated through.
  Mat<S> backward(const Mat<S>&) override {
    throw ContractError("softmax2 backward is fused into the loss");
  }

 private:
  LayerSpec spec_;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Network;

template <class S>
class Adam {
 public:
  Adam(Network<S>& net, AdamConfig cfg) : cfg_(cfg) {
    net.collect_params(params_);
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamRef<S>& p : params_) {
      m_.push_back(Vec<S>::Zero(p.n));
      v_.push_back(Vec<S>::Zero(p.n));
    }
  }

  void step() {
    ++t_;
    const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
    const S c1 = S(1.0 - std::pow(cfg_.beta1, double(t_)));
    const S c2 = S(1.0 - std::pow(cfg_.beta2, double(t_)));
    const S lr = S(cfg_.lr), eps = S(cfg_.eps);
    for (size_t i = 0; i < params_.size(); ++i) {
      Eigen::Map<Vec<S>> p(params_[i].value, params_[i].n);
      Eigen::Map<Vec<S>> g(params_[i].grad, params_[i].n);
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i].array() = b2 * v_[i].array() + (S(1) - b2) * g.array().square();
      p.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<ParamRef<S>> params_;
  std::vector<Vec<S>> m_, v_;
  int64_t t_ = 0;
};

template <class S>
class Network {
 public:
  Network() : rng_(0) {}

  // Builder interface; call build() after adding all layers.
  void add_dense(int units) { push(std::make_unique<DenseLayer<S>>(units)); }
  void add_conv2d(int out_ch, int kh, int kw, int stride = 1) {
    push(std::make_unique<Conv2DLayer<S>>(out_ch, kh, kw, stride));
  }
  void add_batchnorm() { push(std::make_unique<BatchNormLayer<S>>()); }
  void add_dropout(double rate) { push(std::make_unique<DropoutLayer<S>>(rate)); }
  void add_relu() { push(std::make_unique<ReLULayer<S>>()); }
  void add_maxpool(int size = 2) { push(std::make_unique<MaxPool2DLayer<S>>(size)); }
  void add_flatten() { push(std::make_unique<FlattenLayer<S>>()); }
  void add_softmax2() { push(std::make_unique<Softmax2Layer<S>>()); }

  void build(TensorShape input, uint64_t seed) {
    if (built_) throw ContractError("network already built");
    if (layers_.empty()) throw ConfigError("network has no layers");
    if (layers_.back()->spec().kind != LayerSpec::Kind::Softmax2)
      throw ConfigError("network must end in softmax2");
    input_ = input;
    rng_ = Rng(seed);
    TensorShape shape = input;
    for (auto& l : layers_) {
      shape = l->resolve(shape);
      l->init_params(rng_);
    }
    output_ = shape;
    built_ = true;
  }

  bool built() const { return built_; }
  TensorShape input_shape() const { return input_; }
  Eigen::Index input_size() const { return input_.size(); }

  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
  }

  int64_t num_params() {
    std::vector<ParamRef<S>> refs;
    collect_params(refs);
    int64_t n = 0;
    for (const ParamRef<S>& r : refs) n += r.n;
    return n;
  }

  void collect_params(std::vector<ParamRef<S>>& out) {
    check_built();
    for (auto& l : layers_) l->collect_params(out);
  }

  Rng& rng() { return rng_; }

  // Posteriors, batch x 2, rows summing to 1. Train mode caches activations
  // for a following backward pass; Infer disables dropout and uses running
  // batch-norm statistics.
  Mat<S> forward(const Mat<S>& x, Mode mode) {
    check_built();
    if (x.cols() != input_.size())
      throw ContractError("batch width " + std::to_string(x.cols()) +
                          " does not match network input " + std::to_string(input_.size()));
    Mat<S> cur = x;
    for (auto& l : layers_) {
      cur = l->forward(cur, mode, mode == Mode::Train, rng_);
#ifndef NDEBUG
      if (!cur.allFinite()) throw TrainingDivergedError("non-finite activation");
#endif
    }
    return cur;
  }

  // Weighted mean cross-entropy of already-computed posteriors.
  double loss_from_posteriors(const Mat<S>& probs, const std::vector<Label>& labels,
                              const Vec<S>& weights) const {
    double wsum = 0.0, acc = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      double w = double(weights[i]);
      wsum += w;
      if (w != 0.0) acc += w * -std::log(double(probs(i, one_hot_index(labels[size_t(i)]))));
    }
    return wsum == 0.0 ? 0.0 : acc / wsum;
  }

  // One optimizer step; returns the pre-update loss. A batch whose weights
  // sum to zero is a no-op.
  double train_step(const Mat<S>& x, const std::vector<Label>& labels, const Vec<S>& weights,
                    Adam<S>& adam) {
    check_built();
    if (int64_t(labels.size()) != x.rows() || weights.size() != x.rows())
      throw ContractError("batch, labels and weights disagree on size");
    for (Eigen::Index i = 0; i < weights.size(); ++i)
      if (weights[i] < S(0)) throw ContractError("negative example weight");
    S wsum = weights.sum();
    if (wsum == S(0)) return 0.0;

    Mat<S> probs = forward(x, Mode::Train);
    double loss = loss_from_posteriors(probs, labels, weights);
    if (!std::isfinite(loss))
      throw TrainingDivergedError("non-finite training loss (batch of " +
                                  std::to_string(x.rows()) + " examples, weight sum " +
                                  std::to_string(double(wsum)) + ")");

    // Fused softmax + cross-entropy gradient w.r.t. logits.
    Mat<S> dlogits = probs;
    for (Eigen::Index i = 0; i < dlogits.rows(); ++i) {
      dlogits(i, one_hot_index(labels[size_t(i)])) -= S(1);
      dlogits.row(i) *= weights[i] / wsum;
    }
    for (auto& l : layers_) l->zero_grads();
    Mat<S> d = dlogits;
    for (size_t li = layers_.size() - 1; li-- > 0;) d = layers_[li]->backward(d);
    adam.step();
    return loss;
  }

  // Forward + loss without any parameter update (used by grad_check).
  double loss_only(const Mat<S>& x, const std::vector<Label>& labels, const Vec<S>& weights) {
    Mat<S> probs = forward(x, Mode::Train);
    return loss_from_posteriors(probs, labels, weights);
  }

  // Checkpoint: text layer descriptor plus little-endian float64 blob of
  // trainables and running batch-norm statistics.
  void save(const std::string& path) const;
  static Network<S> load(const std::string& path);

 private:
  void push(std::unique_ptr<Layer<S>> l) {
    if (built_) throw ContractError("cannot add layers after build");
    layers_.push_back(std::move(l));
  }
  void check_built() const {
    if (!built_) throw ContractError("network not built");
  }

  std::vector<std::unique_ptr<Layer<S>>> layers_;
  TensorShape input_, output_;
  bool built_ = false;
  Rng rng_;

  template <class T>
  friend double grad_check(Network<T>&, const Mat<T>&, const std::vector<Label>&, double, int);
};

template <class S>
void Network<S>::save(const std::string& path) const {
  check_built();
  std::string desc;
  desc += "KWSNET 1\n";
  desc += "input " + std::to_string(input_.c) + " " + std::to_string(input_.h) + " " +
          std::to_string(input_.w) + "\n";
  int64_t state = 0;
  for (const auto& l : layers_) {
    LayerSpec s = l->spec();
    switch (s.kind) {
      case LayerSpec::Kind::Dense: desc += "layer dense " + std::to_string(s.units) + "\n"; break;
      case LayerSpec::Kind::Conv2D:
        desc += "layer conv2d " + std::to_string(s.out_ch) + " " + std::to_string(s.kh) + " " +
                std::to_string(s.kw) + " " + std::to_string(s.stride) + "\n";
        break;
      case LayerSpec::Kind::BatchNorm: desc += "layer batchnorm\n"; break;
      case LayerSpec::Kind::Dropout: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "layer dropout %.17g\n", s.rate);
        desc += buf;
        break;
      }
      case LayerSpec::Kind::ReLU: desc += "layer relu\n"; break;
      case LayerSpec::Kind::MaxPool2D: desc += "layer maxpool " + std::to_string(s.pool) + "\n"; break;
      case LayerSpec::Kind::Flatten: desc += "layer flatten\n"; break;
      case LayerSpec::Kind::Softmax2: desc += "layer softmax2\n"; break;
    }
    state += l->state_count();
  }
  desc += "state " + std::to_string(state) + "\n";
  desc += "DATA\n";
  std::vector<uint8_t> bytes(desc.begin(), desc.end());
  for (const auto& l : layers_) l->save_state(bytes);
  write_binary_file(path, bytes);
}

template <class S>
Network<S> Network<S>::load(const std::string& path) {
  std::vector<uint8_t> bytes = read_binary_file(path);
  // Split descriptor and blob at the DATA marker.
  const std::string marker = "DATA\n";
  std::string text(bytes.begin(), bytes.end());
  size_t pos = text.find(marker);
  if (pos == std::string::npos) throw IoError("missing DATA marker in " + path);
  std::string desc = text.substr(0, pos);
  const uint8_t* blob = bytes.data() + pos + marker.size();
  const uint8_t* end = bytes.data() + bytes.size();

  Network<S> net;
  TensorShape input;
  int64_t declared_state = -1;
  size_t line_start = 0;
  while (line_start < desc.size()) {
    size_t nl = desc.find('\n', line_start);
    std::string line = desc.substr(line_start, nl - line_start);
    line_start = nl + 1;
    if (line == "KWSNET 1" || line.empty()) continue;
    if (line.rfind("input ", 0) == 0) {
      std::sscanf(line.c_str(), "input %ld %ld %ld", &input.c, &input.h, &input.w);
    } else if (line.rfind("state ", 0) == 0) {
      declared_state = std::stoll(line.substr(6));
    } else if (line.rfind("layer ", 0) == 0) {
      std::string rest = line.substr(6);
      if (rest.rfind("dense ", 0) == 0) net.add_dense(std::stoi(rest.substr(6)));
      else if (rest.rfind("conv2d ", 0) == 0) {
        int oc, kh, kw, st;
        std::sscanf(rest.c_str(), "conv2d %d %d %d %d", &oc, &kh, &kw, &st);
        net.add_conv2d(oc, kh, kw, st);
      } else if (rest == "batchnorm") net.add_batchnorm();
      else if (rest.rfind("dropout ", 0) == 0) net.add_dropout(std::stod(rest.substr(8)));
      else if (rest == "relu") net.add_relu();
      else if (rest.rfind("maxpool ", 0) == 0) net.add_maxpool(std::stoi(rest.substr(8)));
      else if (rest == "flatten") net.add_flatten();
      else if (rest == "softmax2") net.add_softmax2();
      else throw IoError("unknown layer in checkpoint: " + rest);
    } else {
      throw IoError("unknown checkpoint line: " + line);
    }
  }
  net.build(input, 0);
  const uint8_t* p = blob;
  for (auto& l : net.layers_) l->load_state(p, end);
  if (declared_state >= 0 && p != blob + declared_state * 8)
    throw IoError("checkpoint state size mismatch in " + path);
  return net;
}

// Central finite differences over a random parameter subset against the
// analytic gradient; returns the maximum relative error. The RNG state is
// restored before every forward so stochastic layers see identical draws.
template <class S>
double grad_check(Network<S>& net, const Mat<S>& x, const std::vector<Label>& labels,
                  double eps = 1e-4, int max_checks = 400) {
  Vec<S> weights = Vec<S>::Ones(x.rows());
  Rng snapshot = net.rng_;

  // Analytic gradients.
  net.rng_ = snapshot;
  Mat<S> probs = net.forward(x, Mode::Train);
  double base = net.loss_from_posteriors(probs, labels, weights);
  if (!std::isfinite(base)) throw TrainingDivergedError("non-finite loss in grad_check");
  Mat<S> dlogits = probs;
  S wsum = weights.sum();
  for (Eigen::Index i = 0; i < dlogits.rows(); ++i) {
    dlogits(i, one_hot_index(labels[size_t(i)])) -= S(1);
    dlogits.row(i) *= weights[i] / wsum;
  }
  for (auto& l : net.layers_) l->zero_grads();
  Mat<S> d = dlogits;
  for (size_t li = net.layers_.size() - 1; li-- > 0;) d = net.layers_[li]->backward(d);

  std::vector<ParamRef<S>> refs;
  net.collect_params(refs);
  int64_t total = 0;
  for (const ParamRef<S>& r : refs) total += r.n;

  Rng pick(12345);
  double max_rel = 0.0;
  int checks = int(std::min<int64_t>(total, max_checks));
  for (int k = 0; k < checks; ++k) {
    int64_t flat = int64_t(pick.below(uint64_t(total)));
    S* value = nullptr;
    S* grad = nullptr;
    for (const ParamRef<S>& r : refs) {
      if (flat < r.n) {
        value = r.value + flat;
        grad = r.grad + flat;
        break;
      }
      flat -= r.n;
    }
    S saved = *value;
    *value = saved + S(eps);
    net.rng_ = snapshot;
    double lp = net.loss_only(x, labels, weights);
    *value = saved - S(eps);
    net.rng_ = snapshot;
    double lm = net.loss_only(x, labels, weights);
    *value = saved;
    double fd = (lp - lm) / (2.0 * eps);
    double an = double(*grad);
    double rel = std::fabs(an - fd) / std::max(0.01, std::fabs(an) + std::fabs(fd));
    max_rel = std::max(max_rel, rel);
  }
  net.rng_ = snapshot;
  return max_rel;
}

}  // namespace kws::nn

#endif  // KWS_NN_HPP_
