// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "skald/neural/tensor.hpp"
#include "skald/parallel.hpp"

namespace skald {

enum class LayerKind : uint8_t {
  dense = 0,
  relu = 1,
  batchnorm = 2,
  dropout = 3,
  conv2d = 4,
  maxpool = 5,
  gru = 6,
  bigru = 7,
  softmax = 8,
  flatten = 9,
};

const char *layer_kind_name(LayerKind kind);

/// One entry of a network description. Unused fields stay at their
/// defaults; validate() checks the used ones.
struct LayerDesc {
  LayerKind kind = LayerKind::dense;
  int units = 0;       // dense, gru, bigru
  double rate = 0.0;   // dropout
  int filters = 0;     // conv2d
  bool go_backward = false;      // gru scan direction
  bool return_sequences = false; // gru, bigru

  static LayerDesc dense(int units);
  static LayerDesc relu();
  static LayerDesc batchnorm();
  static LayerDesc dropout(double rate);
  static LayerDesc conv2d(int filters);
  static LayerDesc maxpool();
  static LayerDesc gru(int units, bool go_backward = false,
                       bool return_sequences = false);
  static LayerDesc bigru(int units, bool return_sequences = false);
  static LayerDesc softmax();
  static LayerDesc flatten();

  void validate() const;
};

/// Ordered layer list; the last layer must be softmax.
struct NetSpec {
  std::vector<LayerDesc> layers;
  void validate() const;
};

template <class T> struct NamedParam {
  std::string name;
  Tensor<T> *value = nullptr;
  Tensor<T> *grad = nullptr; // null for non-trainable state
  bool regularizable = false;
};

namespace detail {

template <class T> inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
void glorot_uniform(Tensor<T> &w, int fan_in, int fan_out, Rng &rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto &v : w.data)
    v = T(rng.uniform(-limit, limit));
}

template <class T> void he_normal(Tensor<T> &w, int fan_in, Rng &rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto &v : w.data)
    v = T(rng.normal(0.0, stddev));
}

} // namespace detail

/// Layers keep the cache of their latest forward call; one batch may be
/// in flight per layer at a time.
template <class T> class Layer {
public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;

  /// Wires the layer to its per-sample input shape (batch axis excluded)
  /// and allocates parameters; returns the per-sample output shape.
  virtual std::vector<int> wire(const std::vector<int> &in) = 0;
  virtual void init(Rng &) {}

  virtual Tensor<T> forward(const Tensor<T> &x, bool train, uint64_t seed) = 0;
  virtual Tensor<T> backward(const Tensor<T> &grad) = 0;

  virtual std::vector<NamedParam<T>> params() { return {}; }
  virtual std::vector<NamedParam<T>> state() { return {}; }

protected:
  void require_cache(bool have) const {
    if (!have)
      throw DataError(std::string(layer_kind_name(kind())) +
                      ": backward without a matching forward");
  }
  void require_grad_shape(const Tensor<T> &grad,
                          const std::vector<int> &expect) const {
    if (grad.shape != expect)
      throw DimensionError(std::string(layer_kind_name(kind())) +
                           ": gradient shape " + shape_string(grad.shape) +
                           " does not match cached output " +
                           shape_string(expect));
  }
};

template <class T> class DenseLayer final : public Layer<T> {
public:
  explicit DenseLayer(int units) : units_(units) {}
  LayerKind kind() const override { return LayerKind::dense; }
  void set_he_init(bool he) { he_ = he; }

  std::vector<int> wire(const std::vector<int> &in) override {
    if (in.size() != 1)
      throw DimensionError("dense: needs a flat input, got " +
                           shape_string(in));
    in_dim_ = in[0];
    w_ = Tensor<T>({in_dim_, units_});
    b_ = Tensor<T>({units_});
    gw_ = Tensor<T>({in_dim_, units_});
    gb_ = Tensor<T>({units_});
    return {units_};
  }

  void init(Rng &rng) override {
    if (he_)
      detail::he_normal(w_, in_dim_, rng);
    else
      detail::glorot_uniform(w_, in_dim_, units_, rng);
    b_.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    const int n = x.shape[0];
    x_ = x;
    Tensor<T> y({n, units_});
    mat_map(y, n, units_) = mat_map(x, n, in_dim_) * mat_map(w_, in_dim_, units_);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < units_; ++j)
        y(i, j) += b_.data[size_t(j)];
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    const int n = x_.shape[0];
    this->require_grad_shape(grad, {n, units_});
    mat_map(gw_, in_dim_, units_) =
        mat_map(x_, n, in_dim_).transpose() * mat_map(grad, n, units_);
    for (int j = 0; j < units_; ++j) {
      T s = 0;
      for (int i = 0; i < n; ++i)
        s += grad(i, j);
      gb_.data[size_t(j)] = s;
    }
    Tensor<T> dx({n, in_dim_});
    mat_map(dx, n, in_dim_) =
        mat_map(grad, n, units_) * mat_map(w_, in_dim_, units_).transpose();
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    return {{"dense.w", &w_, &gw_, true}, {"dense.b", &b_, &gb_, false}};
  }

private:
  int units_, in_dim_ = 0;
  bool he_ = false, has_cache_ = false;
  Tensor<T> w_, b_, gw_, gb_, x_;
};

template <class T> class ReluLayer final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::relu; }
  std::vector<int> wire(const std::vector<int> &in) override { return in; }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    Tensor<T> y = x;
    mask_.assign(x.data.size(), 0);
    for (size_t i = 0; i < y.data.size(); ++i) {
      if (y.data[i] > T(0))
        mask_[i] = 1;
      else
        y.data[i] = T(0);
    }
    out_shape_ = y.shape;
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, out_shape_);
    Tensor<T> dx = grad;
    for (size_t i = 0; i < dx.data.size(); ++i)
      if (!mask_[i])
        dx.data[i] = T(0);
    return dx;
  }

private:
  std::vector<uint8_t> mask_;
  std::vector<int> out_shape_;
  bool has_cache_ = false;
};

/// Per-feature batch normalization. Flat inputs normalize over the batch
/// axis; C×H×W inputs normalize per channel over batch and space. Train
/// mode uses batch statistics (population variance) and updates running
/// stats with momentum 0.9; infer mode uses the running stats.
template <class T> class BatchNormLayer final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::batchnorm; }

  std::vector<int> wire(const std::vector<int> &in) override {
    if (in.size() != 1 && in.size() != 3)
      throw DimensionError("batchnorm: needs a flat or C×H×W input, got " +
                           shape_string(in));
    in_shape_ = in;
    channels_ = in[0];
    spatial_ = in.size() == 3 ? in[1] * in[2] : 1;
    gamma_ = Tensor<T>({channels_});
    beta_ = Tensor<T>({channels_});
    ggamma_ = Tensor<T>({channels_});
    gbeta_ = Tensor<T>({channels_});
    run_mean_ = Tensor<T>({channels_});
    run_var_ = Tensor<T>({channels_});
    gamma_.fill(T(1));
    run_var_.fill(T(1));
    return in;
  }

  Tensor<T> forward(const Tensor<T> &x, bool train, uint64_t) override {
    const int n = x.shape[0];
    const int64_t count = int64_t(n) * spatial_;
    Tensor<T> y = x;
    if (train) {
      x_hat_ = x;
      inv_std_.assign(size_t(channels_), T(0));
      count_ = count;
      batch_n_ = n;
      for (int c = 0; c < channels_; ++c) {
        double mean = 0.0, var = 0.0;
        for_channel(x, c, [&](T v, int64_t) { mean += double(v); });
        mean /= double(count);
        for_channel(x, c, [&](T v, int64_t) {
          const double d = double(v) - mean;
          var += d * d;
        });
        var /= double(count);
        const T istd = T(1.0 / std::sqrt(var + kEps));
        inv_std_[size_t(c)] = istd;
        const T g = gamma_.data[size_t(c)], b = beta_.data[size_t(c)];
        for_channel_mut(x_hat_, c, [&](T &v, int64_t) {
          v = (v - T(mean)) * istd;
        });
        for_channel_mut(y, c, [&](T &v, int64_t idx) {
          v = g * x_hat_.data[size_t(idx)] + b;
        });
        run_mean_.data[size_t(c)] =
            T(kMomentum) * run_mean_.data[size_t(c)] + T(1 - kMomentum) * T(mean);
        run_var_.data[size_t(c)] =
            T(kMomentum) * run_var_.data[size_t(c)] + T(1 - kMomentum) * T(var);
      }
      has_cache_ = true;
    } else {
      has_cache_ = false;
      for (int c = 0; c < channels_; ++c) {
        const T istd =
            T(1.0 / std::sqrt(double(run_var_.data[size_t(c)]) + kEps));
        const T mean = run_mean_.data[size_t(c)];
        const T g = gamma_.data[size_t(c)], b = beta_.data[size_t(c)];
        for_channel_mut(y, c, [&](T &v, int64_t) {
          v = g * (v - mean) * istd + b;
        });
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, x_hat_.shape);
    Tensor<T> dx = grad;
    for (int c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for_channel(grad, c, [&](T v, int64_t idx) {
        sum_g += double(v);
        sum_gx += double(v) * double(x_hat_.data[size_t(idx)]);
      });
      ggamma_.data[size_t(c)] = T(sum_gx);
      gbeta_.data[size_t(c)] = T(sum_g);
      const double mg = sum_g / double(count_);
      const double mgx = sum_gx / double(count_);
      const T g = gamma_.data[size_t(c)], istd = inv_std_[size_t(c)];
      for_channel_mut(dx, c, [&](T &v, int64_t idx) {
        v = g * istd *
            (v - T(mg) - x_hat_.data[size_t(idx)] * T(mgx));
      });
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    return {{"bn.gamma", &gamma_, &ggamma_, false},
            {"bn.beta", &beta_, &gbeta_, false}};
  }
  std::vector<NamedParam<T>> state() override {
    return {{"bn.run_mean", &run_mean_, nullptr, false},
            {"bn.run_var", &run_var_, nullptr, false}};
  }

private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  template <class F> void for_channel(const Tensor<T> &t, int c, F f) const {
    const int n = t.shape[0];
    for (int i = 0; i < n; ++i) {
      const int64_t base = (int64_t(i) * channels_ + c) * spatial_;
      for (int s = 0; s < spatial_; ++s)
        f(t.data[size_t(base + s)], base + s);
    }
  }
  template <class F> void for_channel_mut(Tensor<T> &t, int c, F f) const {
    const int n = t.shape[0];
    for (int i = 0; i < n; ++i) {
      const int64_t base = (int64_t(i) * channels_ + c) * spatial_;
      for (int s = 0; s < spatial_; ++s)
        f(t.data[size_t(base + s)], base + s);
    }
  }

  std::vector<int> in_shape_;
  int channels_ = 0, spatial_ = 1, batch_n_ = 0;
  int64_t count_ = 0;
  bool has_cache_ = false;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_, run_mean_, run_var_, x_hat_;
  std::vector<T> inv_std_;
};

/// Inverted dropout: train-time masks scale kept entries by 1/(1-rate)
/// so inference is the identity.
template <class T> class DropoutLayer final : public Layer<T> {
public:
  explicit DropoutLayer(double rate) : rate_(rate) {}
  LayerKind kind() const override { return LayerKind::dropout; }
  std::vector<int> wire(const std::vector<int> &in) override { return in; }

  Tensor<T> forward(const Tensor<T> &x, bool train, uint64_t seed) override {
    Tensor<T> y = x;
    mask_.assign(x.data.size(), T(1));
    if (train && rate_ > 0.0) {
      Rng rng(seed);
      const T scale = T(1.0 / (1.0 - rate_));
      for (size_t i = 0; i < y.data.size(); ++i) {
        if (rng.uniform() < rate_) {
          mask_[i] = T(0);
          y.data[i] = T(0);
        } else {
          mask_[i] = scale;
          y.data[i] *= scale;
        }
      }
    }
    out_shape_ = y.shape;
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, out_shape_);
    Tensor<T> dx = grad;
    for (size_t i = 0; i < dx.data.size(); ++i)
      dx.data[i] *= mask_[i];
    return dx;
  }

private:
  double rate_;
  std::vector<T> mask_;
  std::vector<int> out_shape_;
  bool has_cache_ = false;
};

/// 3x3 convolution, stride 1, zero "same" padding. Filters are stored as
/// an F x (C*9) matrix applied to im2col patches.
template <class T> class Conv2dLayer final : public Layer<T> {
public:
  explicit Conv2dLayer(int filters) : filters_(filters) {}
  LayerKind kind() const override { return LayerKind::conv2d; }
  void set_he_init(bool he) { he_ = he; }

  std::vector<int> wire(const std::vector<int> &in) override {
    if (in.size() != 3)
      throw DimensionError("conv2d: needs a C×H×W input, got " +
                           shape_string(in));
    c_ = in[0];
    h_ = in[1];
    w_dim_ = in[2];
    w_ = Tensor<T>({filters_, c_ * 9});
    b_ = Tensor<T>({filters_});
    gw_ = Tensor<T>({filters_, c_ * 9});
    gb_ = Tensor<T>({filters_});
    return {filters_, h_, w_dim_};
  }

  void init(Rng &rng) override {
    if (he_)
      detail::he_normal(w_, c_ * 9, rng);
    else
      detail::glorot_uniform(w_, c_ * 9, filters_ * 9, rng);
    b_.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    const int n = x.shape[0];
    x_ = x;
    Tensor<T> y({n, filters_, h_, w_dim_});
    const int64_t in_stride = int64_t(c_) * h_ * w_dim_;
    const int64_t out_stride = int64_t(filters_) * h_ * w_dim_;
    parallel_for(size_t(n), [&](size_t i) {
      Tensor<T> col({c_ * 9, h_ * w_dim_});
      im2col(x.data.data() + int64_t(i) * in_stride, col);
      Eigen::Map<EigenRowMat<T>> out(y.data.data() + int64_t(i) * out_stride,
                                     filters_, h_ * w_dim_);
      out = mat_map(w_, filters_, c_ * 9) * mat_map(col, c_ * 9, h_ * w_dim_);
      for (int f = 0; f < filters_; ++f)
        out.row(f).array() += b_.data[size_t(f)];
    });
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    const int n = x_.shape[0];
    this->require_grad_shape(grad, {n, filters_, h_, w_dim_});
    Tensor<T> dx({n, c_, h_, w_dim_});
    const int64_t in_stride = int64_t(c_) * h_ * w_dim_;
    const int64_t out_stride = int64_t(filters_) * h_ * w_dim_;
    std::vector<Tensor<T>> dws{size_t(n)};
    std::vector<Tensor<T>> dbs{size_t(n)};
    parallel_for(size_t(n), [&](size_t i) {
      Tensor<T> col({c_ * 9, h_ * w_dim_});
      im2col(x_.data.data() + int64_t(i) * in_stride, col);
      Eigen::Map<const EigenRowMat<T>> g(
          grad.data.data() + int64_t(i) * out_stride, filters_, h_ * w_dim_);
      dws[i] = Tensor<T>({filters_, c_ * 9});
      mat_map(dws[i], filters_, c_ * 9) =
          g * mat_map(col, c_ * 9, h_ * w_dim_).transpose();
      dbs[i] = Tensor<T>({filters_});
      for (int f = 0; f < filters_; ++f)
        dbs[i].data[size_t(f)] = g.row(f).sum();
      Tensor<T> dcol({c_ * 9, h_ * w_dim_});
      mat_map(dcol, c_ * 9, h_ * w_dim_) =
          mat_map(w_, filters_, c_ * 9).transpose() * g;
      col2im(dcol, dx.data.data() + int64_t(i) * in_stride);
    });
    gw_.fill(T(0));
    gb_.fill(T(0));
    for (size_t i = 0; i < size_t(n); ++i) {
      for (size_t j = 0; j < gw_.data.size(); ++j)
        gw_.data[j] += dws[i].data[j];
      for (size_t j = 0; j < gb_.data.size(); ++j)
        gb_.data[j] += dbs[i].data[j];
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    return {{"conv.w", &w_, &gw_, true}, {"conv.b", &b_, &gb_, false}};
  }

private:
  void im2col(const T *in, Tensor<T> &col) const {
    for (int c = 0; c < c_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          T *row = col.data.data() +
                   int64_t(c * 9 + ky * 3 + kx) * h_ * w_dim_;
          for (int y = 0; y < h_; ++y) {
            const int sy = y + ky - 1;
            for (int x = 0; x < w_dim_; ++x) {
              const int sx = x + kx - 1;
              row[int64_t(y) * w_dim_ + x] =
                  (sy >= 0 && sy < h_ && sx >= 0 && sx < w_dim_)
                      ? in[(int64_t(c) * h_ + sy) * w_dim_ + sx]
                      : T(0);
            }
          }
        }
  }

  void col2im(const Tensor<T> &col, T *out) const {
    std::fill(out, out + int64_t(c_) * h_ * w_dim_, T(0));
    for (int c = 0; c < c_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const T *row = col.data.data() +
                         int64_t(c * 9 + ky * 3 + kx) * h_ * w_dim_;
          for (int y = 0; y < h_; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h_)
              continue;
            for (int x = 0; x < w_dim_; ++x) {
              const int sx = x + kx - 1;
              if (sx >= 0 && sx < w_dim_)
                out[(int64_t(c) * h_ + sy) * w_dim_ + sx] +=
                    row[int64_t(y) * w_dim_ + x];
            }
          }
        }
  }

  int filters_, c_ = 0, h_ = 0, w_dim_ = 0;
  bool he_ = false, has_cache_ = false;
  Tensor<T> w_, b_, gw_, gb_, x_;
};

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
/// Ties go to the first position in row-major window order.
template <class T> class MaxPoolLayer final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::maxpool; }

  std::vector<int> wire(const std::vector<int> &in) override {
    if (in.size() != 3)
      throw DimensionError("maxpool: needs a C×H×W input, got " +
                           shape_string(in));
    if (in[1] < 2 || in[2] < 2)
      throw DimensionError("maxpool: input " + shape_string(in) +
                           " is smaller than the 2×2 window");
    c_ = in[0];
    h_ = in[1];
    w_dim_ = in[2];
    oh_ = h_ / 2;
    ow_ = w_dim_ / 2;
    return {c_, oh_, ow_};
  }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    const int n = x.shape[0];
    in_n_ = n;
    Tensor<T> y({n, c_, oh_, ow_});
    argmax_.assign(y.data.size(), 0);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < c_; ++c) {
        const int64_t in_base = (int64_t(i) * c_ + c) * h_ * w_dim_;
        const int64_t out_base = (int64_t(i) * c_ + c) * oh_ * ow_;
        for (int oy = 0; oy < oh_; ++oy)
          for (int ox = 0; ox < ow_; ++ox) {
            int64_t best = in_base + int64_t(2 * oy) * w_dim_ + 2 * ox;
            T best_v = x.data[size_t(best)];
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int64_t idx =
                    in_base + int64_t(2 * oy + dy) * w_dim_ + 2 * ox + dx;
                if (x.data[size_t(idx)] > best_v) {
                  best_v = x.data[size_t(idx)];
                  best = idx;
                }
              }
            const int64_t out = out_base + int64_t(oy) * ow_ + ox;
            y.data[size_t(out)] = best_v;
            argmax_[size_t(out)] = best;
          }
      }
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, {in_n_, c_, oh_, ow_});
    Tensor<T> dx({in_n_, c_, h_, w_dim_});
    for (size_t i = 0; i < grad.data.size(); ++i)
      dx.data[size_t(argmax_[i])] += grad.data[i];
    return dx;
  }

private:
  int c_ = 0, h_ = 0, w_dim_ = 0, oh_ = 0, ow_ = 0, in_n_ = 0;
  std::vector<int64_t> argmax_;
  bool has_cache_ = false;
};

template <class T> struct GruParams {
  Tensor<T> wz, wr, wh; // [units, in_dim]
  Tensor<T> uz, ur, uh; // [units, units]
  Tensor<T> bz, br, bh; // [units]
};

/// One GRU step for a batch: update gate z, reset gate r, candidate hc,
/// h_out = (1-z)*h_prev + z*hc.
template <class T>
void gru_cell_forward(const GruParams<T> &p, const Tensor<T> &x,
                      const Tensor<T> &h_prev, Tensor<T> &z, Tensor<T> &r,
                      Tensor<T> &hc, Tensor<T> &h_out) {
  const int n = x.shape[0], d = x.shape[1], h = h_prev.shape[1];
  if (h_prev.shape[0] != n || p.wz.shape[1] != d || p.uz.shape[1] != h)
    throw DimensionError("gru cell: input/state dims do not match params");
  z = Tensor<T>({n, h});
  r = Tensor<T>({n, h});
  hc = Tensor<T>({n, h});
  h_out = Tensor<T>({n, h});
  auto xm = mat_map(x, n, d);
  auto hm = mat_map(h_prev, n, h);
  mat_map(z, n, h) = xm * mat_map(p.wz, h, d).transpose() +
                     hm * mat_map(p.uz, h, h).transpose();
  mat_map(r, n, h) = xm * mat_map(p.wr, h, d).transpose() +
                     hm * mat_map(p.ur, h, h).transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < h; ++j) {
      z(i, j) = detail::sigmoid(z(i, j) + p.bz.data[size_t(j)]);
      r(i, j) = detail::sigmoid(r(i, j) + p.br.data[size_t(j)]);
    }
  Tensor<T> rh({n, h});
  for (size_t i = 0; i < rh.data.size(); ++i)
    rh.data[i] = r.data[i] * h_prev.data[i];
  mat_map(hc, n, h) = xm * mat_map(p.wh, h, d).transpose() +
                      mat_map(rh, n, h) * mat_map(p.uh, h, h).transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < h; ++j)
      hc(i, j) = std::tanh(hc(i, j) + p.bh.data[size_t(j)]);
  for (size_t i = 0; i < h_out.data.size(); ++i)
    h_out.data[i] =
        (T(1) - z.data[i]) * h_prev.data[i] + z.data[i] * hc.data[i];
}

/// Backward of one GRU step. Accumulates parameter gradients into g and
/// returns dx plus the gradient flowing to the previous state.
template <class T>
void gru_cell_backward(const GruParams<T> &p, const Tensor<T> &x,
                       const Tensor<T> &h_prev, const Tensor<T> &z,
                       const Tensor<T> &r, const Tensor<T> &hc,
                       const Tensor<T> &dh, GruParams<T> &g, Tensor<T> &dx,
                       Tensor<T> &dh_prev) {
  const int n = x.shape[0], d = x.shape[1], h = z.shape[1];
  Tensor<T> dhc({n, h}), dz({n, h}), da_h({n, h}), da_z({n, h}), da_r({n, h});
  dh_prev = Tensor<T>({n, h});
  for (size_t i = 0; i < dhc.data.size(); ++i) {
    dhc.data[i] = dh.data[i] * z.data[i];
    dz.data[i] = dh.data[i] * (hc.data[i] - h_prev.data[i]);
    dh_prev.data[i] = dh.data[i] * (T(1) - z.data[i]);
    da_h.data[i] = dhc.data[i] * (T(1) - hc.data[i] * hc.data[i]);
    da_z.data[i] = dz.data[i] * z.data[i] * (T(1) - z.data[i]);
  }
  Tensor<T> rh({n, h});
  for (size_t i = 0; i < rh.data.size(); ++i)
    rh.data[i] = r.data[i] * h_prev.data[i];
  auto xm = mat_map(x, n, d);
  mat_map(g.wh, h, d) += mat_map(da_h, n, h).transpose() * xm;
  mat_map(g.uh, h, h) +=
      mat_map(da_h, n, h).transpose() * mat_map(rh, n, h);
  Tensor<T> drh({n, h});
  mat_map(drh, n, h) = mat_map(da_h, n, h) * mat_map(p.uh, h, h);
  for (size_t i = 0; i < drh.data.size(); ++i) {
    const T dr = drh.data[i] * h_prev.data[i];
    dh_prev.data[i] += drh.data[i] * r.data[i];
    da_r.data[i] = dr * r.data[i] * (T(1) - r.data[i]);
  }
  mat_map(g.wz, h, d) += mat_map(da_z, n, h).transpose() * xm;
  mat_map(g.uz, h, h) +=
      mat_map(da_z, n, h).transpose() * mat_map(h_prev, n, h);
  mat_map(g.wr, h, d) += mat_map(da_r, n, h).transpose() * xm;
  mat_map(g.ur, h, h) +=
      mat_map(da_r, n, h).transpose() * mat_map(h_prev, n, h);
  for (int j = 0; j < h; ++j) {
    T sz = 0, sr = 0, sh = 0;
    for (int i = 0; i < n; ++i) {
      sz += da_z(i, j);
      sr += da_r(i, j);
      sh += da_h(i, j);
    }
    g.bz.data[size_t(j)] += sz;
    g.br.data[size_t(j)] += sr;
    g.bh.data[size_t(j)] += sh;
  }
  mat_map(dh_prev, n, h) += mat_map(da_z, n, h) * mat_map(p.uz, h, h) +
                            mat_map(da_r, n, h) * mat_map(p.ur, h, h);
  dx = Tensor<T>({n, d});
  mat_map(dx, n, d) = mat_map(da_z, n, h) * mat_map(p.wz, h, d) +
                      mat_map(da_r, n, h) * mat_map(p.wr, h, d) +
                      mat_map(da_h, n, h) * mat_map(p.wh, h, d);
}

/// GRU over a [N, T, D] sequence, zero initial state. Output is the final
/// state [N, units] or the full state sequence [N, T, units] written at
/// the original time positions.
template <class T> class GruLayer final : public Layer<T> {
public:
  GruLayer(int units, bool go_backward, bool return_sequences)
      : units_(units), go_backward_(go_backward),
        return_sequences_(return_sequences) {}
  LayerKind kind() const override { return LayerKind::gru; }
  GruParams<T> &gru_params() { return p_; }
  bool scans_backward() const { return go_backward_; }

  std::vector<int> wire(const std::vector<int> &in) override {
    if (in.size() != 2)
      throw DimensionError("gru: needs a T×D sequence input, got " +
                           shape_string(in));
    steps_ = in[0];
    in_dim_ = in[1];
    auto alloc = [&](GruParams<T> &p) {
      p.wz = Tensor<T>({units_, in_dim_});
      p.wr = Tensor<T>({units_, in_dim_});
      p.wh = Tensor<T>({units_, in_dim_});
      p.uz = Tensor<T>({units_, units_});
      p.ur = Tensor<T>({units_, units_});
      p.uh = Tensor<T>({units_, units_});
      p.bz = Tensor<T>({units_});
      p.br = Tensor<T>({units_});
      p.bh = Tensor<T>({units_});
    };
    alloc(p_);
    alloc(g_);
    if (return_sequences_)
      return {steps_, units_};
    return {units_};
  }

  void init(Rng &rng) override {
    detail::glorot_uniform(p_.wz, in_dim_, units_, rng);
    detail::glorot_uniform(p_.wr, in_dim_, units_, rng);
    detail::glorot_uniform(p_.wh, in_dim_, units_, rng);
    detail::glorot_uniform(p_.uz, units_, units_, rng);
    detail::glorot_uniform(p_.ur, units_, units_, rng);
    detail::glorot_uniform(p_.uh, units_, units_, rng);
    p_.bz.fill(T(0));
    p_.br.fill(T(0));
    p_.bh.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    const int n = x.shape[0];
    x_ = x;
    z_.assign(size_t(steps_), Tensor<T>());
    r_.assign(size_t(steps_), Tensor<T>());
    hc_.assign(size_t(steps_), Tensor<T>());
    h_prev_.assign(size_t(steps_), Tensor<T>());
    Tensor<T> h({n, units_});
    Tensor<T> seq;
    if (return_sequences_)
      seq = Tensor<T>({n, steps_, units_});
    for (int s = 0; s < steps_; ++s) {
      const int t = go_backward_ ? steps_ - 1 - s : s;
      Tensor<T> xt = time_slice(x, n, t);
      h_prev_[size_t(s)] = h;
      Tensor<T> h_next;
      gru_cell_forward(p_, xt, h, z_[size_t(s)], r_[size_t(s)],
                       hc_[size_t(s)], h_next);
      h = std::move(h_next);
      if (return_sequences_)
        for (int i = 0; i < n; ++i)
          std::copy(h.data.begin() + int64_t(i) * units_,
                    h.data.begin() + int64_t(i + 1) * units_,
                    seq.data.begin() +
                        (int64_t(i) * steps_ + t) * units_);
    }
    has_cache_ = true;
    return return_sequences_ ? seq : h;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    const int n = x_.shape[0];
    if (return_sequences_)
      this->require_grad_shape(grad, {n, steps_, units_});
    else
      this->require_grad_shape(grad, {n, units_});
    zero_params(g_);
    Tensor<T> dx({n, steps_, in_dim_});
    Tensor<T> dh_next({n, units_});
    for (int s = steps_ - 1; s >= 0; --s) {
      const int t = go_backward_ ? steps_ - 1 - s : s;
      Tensor<T> dh = dh_next;
      if (return_sequences_) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < units_; ++j)
            dh(i, j) += grad.data[size_t(
                (int64_t(i) * steps_ + t) * units_ + j)];
      } else if (s == steps_ - 1) {
        for (size_t i = 0; i < dh.data.size(); ++i)
          dh.data[i] += grad.data[i];
      }
      Tensor<T> xt = time_slice(x_, n, t);
      Tensor<T> dxt, dh_prev;
      gru_cell_backward(p_, xt, h_prev_[size_t(s)], z_[size_t(s)],
                        r_[size_t(s)], hc_[size_t(s)], dh, g_, dxt, dh_prev);
      for (int i = 0; i < n; ++i)
        std::copy(dxt.data.begin() + int64_t(i) * in_dim_,
                  dxt.data.begin() + int64_t(i + 1) * in_dim_,
                  dx.data.begin() + (int64_t(i) * steps_ + t) * in_dim_);
      dh_next = std::move(dh_prev);
    }
    return dx;
  }

  std::vector<NamedParam<T>> params() override {
    return {{"gru.wz", &p_.wz, &g_.wz, true}, {"gru.wr", &p_.wr, &g_.wr, true},
            {"gru.wh", &p_.wh, &g_.wh, true}, {"gru.uz", &p_.uz, &g_.uz, true},
            {"gru.ur", &p_.ur, &g_.ur, true}, {"gru.uh", &p_.uh, &g_.uh, true},
            {"gru.bz", &p_.bz, &g_.bz, false},
            {"gru.br", &p_.br, &g_.br, false},
            {"gru.bh", &p_.bh, &g_.bh, false}};
  }

private:
  Tensor<T> time_slice(const Tensor<T> &x, int n, int t) const {
    Tensor<T> xt({n, in_dim_});
    for (int i = 0; i < n; ++i)
      std::copy(x.data.begin() + (int64_t(i) * steps_ + t) * in_dim_,
                x.data.begin() + (int64_t(i) * steps_ + t + 1) * in_dim_,
                xt.data.begin() + int64_t(i) * in_dim_);
    return xt;
  }

  static void zero_params(GruParams<T> &g) {
    g.wz.fill(T(0));
    g.wr.fill(T(0));
    g.wh.fill(T(0));
    g.uz.fill(T(0));
    g.ur.fill(T(0));
    g.uh.fill(T(0));
    g.bz.fill(T(0));
    g.br.fill(T(0));
    g.bh.fill(T(0));
  }

  int units_, steps_ = 0, in_dim_ = 0;
  bool go_backward_, return_sequences_, has_cache_ = false;
  GruParams<T> p_, g_;
  Tensor<T> x_;
  std::vector<Tensor<T>> z_, r_, hc_, h_prev_;
};

/// Forward and backward GRU over the same input, outputs concatenated
/// along the feature axis (forward half first).
template <class T> class BiGruLayer final : public Layer<T> {
public:
  BiGruLayer(int units, bool return_sequences)
      : units_(units), return_sequences_(return_sequences),
        fwd_(units, false, return_sequences),
        bwd_(units, true, return_sequences) {}
  LayerKind kind() const override { return LayerKind::bigru; }

  GruLayer<T> &forward_half() { return fwd_; }
  GruLayer<T> &backward_half() { return bwd_; }

  std::vector<int> wire(const std::vector<int> &in) override {
    fwd_.wire(in);
    bwd_.wire(in);
    steps_ = in[0];
    if (return_sequences_)
      return {steps_, 2 * units_};
    return {2 * units_};
  }

  void init(Rng &rng) override {
    fwd_.init(rng);
    bwd_.init(rng);
  }

  Tensor<T> forward(const Tensor<T> &x, bool train, uint64_t seed) override {
    Tensor<T> a = fwd_.forward(x, train, seed);
    Tensor<T> b = bwd_.forward(x, train, seed);
    const int n = x.shape[0];
    const int rows = return_sequences_ ? n * steps_ : n;
    Tensor<T> y(return_sequences_
                    ? std::vector<int>{n, steps_, 2 * units_}
                    : std::vector<int>{n, 2 * units_});
    for (int i = 0; i < rows; ++i) {
      std::copy(a.data.begin() + int64_t(i) * units_,
                a.data.begin() + int64_t(i + 1) * units_,
                y.data.begin() + int64_t(i) * 2 * units_);
      std::copy(b.data.begin() + int64_t(i) * units_,
                b.data.begin() + int64_t(i + 1) * units_,
                y.data.begin() + int64_t(i) * 2 * units_ + units_);
    }
    out_shape_ = y.shape;
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, out_shape_);
    const int rows = return_sequences_ ? out_shape_[0] * steps_ : out_shape_[0];
    Tensor<T> ga(return_sequences_
                     ? std::vector<int>{out_shape_[0], steps_, units_}
                     : std::vector<int>{out_shape_[0], units_});
    Tensor<T> gb = ga;
    for (int i = 0; i < rows; ++i) {
      std::copy(grad.data.begin() + int64_t(i) * 2 * units_,
                grad.data.begin() + int64_t(i) * 2 * units_ + units_,
                ga.data.begin() + int64_t(i) * units_);
      std::copy(grad.data.begin() + int64_t(i) * 2 * units_ + units_,
                grad.data.begin() + int64_t(i + 1) * 2 * units_,
                gb.data.begin() + int64_t(i) * units_);
    }
    Tensor<T> dxa = fwd_.backward(ga);
    Tensor<T> dxb = bwd_.backward(gb);
    for (size_t i = 0; i < dxa.data.size(); ++i)
      dxa.data[i] += dxb.data[i];
    return dxa;
  }

  std::vector<NamedParam<T>> params() override {
    std::vector<NamedParam<T>> out;
    for (auto &p : fwd_.params()) {
      p.name = "fwd_" + p.name;
      out.push_back(p);
    }
    for (auto &p : bwd_.params()) {
      p.name = "bwd_" + p.name;
      out.push_back(p);
    }
    return out;
  }

private:
  int units_, steps_ = 0;
  bool return_sequences_, has_cache_ = false;
  GruLayer<T> fwd_, bwd_;
  std::vector<int> out_shape_;
};

template <class T> class SoftmaxLayer final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::softmax; }

  std::vector<int> wire(const std::vector<int> &in) override {
    if (in.size() != 1)
      throw DimensionError("softmax: needs a flat input, got " +
                           shape_string(in));
    dim_ = in[0];
    return in;
  }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    const int n = x.shape[0];
    probs_ = x;
    for (int i = 0; i < n; ++i) {
      T mx = probs_(i, 0);
      for (int j = 1; j < dim_; ++j)
        mx = std::max(mx, probs_(i, j));
      T sum = 0;
      for (int j = 0; j < dim_; ++j) {
        probs_(i, j) = std::exp(probs_(i, j) - mx);
        sum += probs_(i, j);
      }
      for (int j = 0; j < dim_; ++j)
        probs_(i, j) /= sum;
    }
    has_cache_ = true;
    return probs_;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, probs_.shape);
    const int n = probs_.shape[0];
    Tensor<T> dx = grad;
    for (int i = 0; i < n; ++i) {
      T dot = 0;
      for (int j = 0; j < dim_; ++j)
        dot += grad(i, j) * probs_(i, j);
      for (int j = 0; j < dim_; ++j)
        dx(i, j) = probs_(i, j) * (grad(i, j) - dot);
    }
    return dx;
  }

private:
  int dim_ = 0;
  bool has_cache_ = false;
  Tensor<T> probs_;
};

template <class T> class FlattenLayer final : public Layer<T> {
public:
  LayerKind kind() const override { return LayerKind::flatten; }

  std::vector<int> wire(const std::vector<int> &in) override {
    in_shape_ = in;
    int64_t n = shape_numel(in);
    return {int(n)};
  }

  Tensor<T> forward(const Tensor<T> &x, bool, uint64_t) override {
    Tensor<T> y = x;
    y.reshape({x.shape[0], int(shape_numel(in_shape_))});
    batch_n_ = x.shape[0];
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T> &grad) override {
    this->require_cache(has_cache_);
    this->require_grad_shape(grad, {batch_n_, int(shape_numel(in_shape_))});
    Tensor<T> dx = grad;
    std::vector<int> s = in_shape_;
    s.insert(s.begin(), batch_n_);
    dx.reshape(s);
    return dx;
  }

private:
  std::vector<int> in_shape_;
  int batch_n_ = 0;
  bool has_cache_ = false;
};

/// Builds the concrete layer object for one descriptor.
template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerDesc &d) {
  d.validate();
  switch (d.kind) {
  case LayerKind::dense:
    return std::make_unique<DenseLayer<T>>(d.units);
  case LayerKind::relu:
    return std::make_unique<ReluLayer<T>>();
  case LayerKind::batchnorm:
    return std::make_unique<BatchNormLayer<T>>();
  case LayerKind::dropout:
    return std::make_unique<DropoutLayer<T>>(d.rate);
  case LayerKind::conv2d:
    return std::make_unique<Conv2dLayer<T>>(d.filters);
  case LayerKind::maxpool:
    return std::make_unique<MaxPoolLayer<T>>();
  case LayerKind::gru:
    return std::make_unique<GruLayer<T>>(d.units, d.go_backward,
                                         d.return_sequences);
  case LayerKind::bigru:
    return std::make_unique<BiGruLayer<T>>(d.units, d.return_sequences);
  case LayerKind::softmax:
    return std::make_unique<SoftmaxLayer<T>>();
  case LayerKind::flatten:
    return std::make_unique<FlattenLayer<T>>();
  }
  throw ConfigError("unknown layer kind");
}

} // namespace skald
