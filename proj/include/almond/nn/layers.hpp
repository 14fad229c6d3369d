#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "almond/nn/layer_spec.hpp"
#include "almond/nn/tensor.hpp"
#include "almond/rng.hpp"

namespace almond::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool learnable = true;
};

namespace detail {

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  return h;
}

inline void require_rank(const char* what, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeMismatch(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

template <typename T>
void he_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace detail

// ---- stateless kernels ------------------------------------------------------

// x: [N,H,W,C], w: [kh,kw,C,F], b: [F] -> [N,H',W',F]. Each output starts at
// the bias and accumulates taps in (i, j, c) order; zero taps and taps that
// fall in the zero padding are skipped, which leaves the sum unchanged.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const LayerSpec& spec) {
  detail::require_rank("conv2d input", x.shape(), 4);
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int kh = spec.kernel_h, kw = spec.kernel_w, F = spec.filters, s = spec.stride;
  if (w.shape() != Shape{kh, kw, C, F} || b.shape() != Shape{F}) {
    throw ShapeMismatch("conv2d weights " + shape_str(w.shape()) + " do not fit input channels " +
                        std::to_string(C) + " and " + std::to_string(F) + " filters");
  }
  const int Ho = conv_out_size(H, kh, s, spec.padding), Wo = conv_out_size(W, kw, s, spec.padding);
  if (Ho < 1 || Wo < 1) throw ShapeUnderflow("conv2d kernel larger than input");
  const int pt = spec.padding == Padding::same ? same_pad_before(H, kh, s) : 0;
  const int pl = spec.padding == Padding::same ? same_pad_before(W, kw, s) : 0;

  Tensor<T> out({N, Ho, Wo, F});
  const T* bias = b.data();
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        T* __restrict o = &out.at(n, oy, ox, 0);
        std::copy(bias, bias + F, o);
        for (int i = 0; i < kh; ++i) {
          const int iy = oy * s + i - pt;
          if (iy < 0 || iy >= H) continue;
          for (int j = 0; j < kw; ++j) {
            const int ix = ox * s + j - pl;
            if (ix < 0 || ix >= W) continue;
            const T* xp = &x.at(n, iy, ix, 0);
            const T* wp = w.data() + static_cast<std::size_t>((i * kw + j) * C) * F;
            for (int c = 0; c < C; ++c) {
              const T xv = xp[c];
              if (xv == T(0)) continue;
              const T* __restrict wr = wp + static_cast<std::size_t>(c) * F;
              for (int f = 0; f < F; ++f) o[f] += xv * wr[f];
            }
          }
        }
      }
    }
  }
  return out;
}

// Returns dL/dx; accumulates into dw and db.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out, const LayerSpec& spec,
                          Tensor<T>& dw, Tensor<T>& db) {
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int kh = spec.kernel_h, kw = spec.kernel_w, F = spec.filters, s = spec.stride;
  const int Ho = grad_out.dim(1), Wo = grad_out.dim(2);
  const int pt = spec.padding == Padding::same ? same_pad_before(H, kh, s) : 0;
  const int pl = spec.padding == Padding::same ? same_pad_before(W, kw, s) : 0;

  // [kh,kw,F,C] copy so the input-gradient loop runs contiguously over C.
  std::vector<T> wt(w.size());
  for (int t = 0; t < kh * kw; ++t) {
    for (int c = 0; c < C; ++c) {
      for (int f = 0; f < F; ++f) {
        wt[(static_cast<std::size_t>(t) * F + f) * C + c] = w[(static_cast<std::size_t>(t) * C + c) * F + f];
      }
    }
  }

  Tensor<T> dx(x.shape());
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const T* __restrict g = &grad_out.at(n, oy, ox, 0);
        for (int f = 0; f < F; ++f) db[f] += g[f];
        for (int i = 0; i < kh; ++i) {
          const int iy = oy * s + i - pt;
          if (iy < 0 || iy >= H) continue;
          for (int j = 0; j < kw; ++j) {
            const int ix = ox * s + j - pl;
            if (ix < 0 || ix >= W) continue;
            const std::size_t tap = static_cast<std::size_t>(i * kw + j);
            const T* xp = &x.at(n, iy, ix, 0);
            T* __restrict dxp = &dx.at(n, iy, ix, 0);
            T* dwp = dw.data() + tap * C * F;
            for (int c = 0; c < C; ++c) {
              const T xv = xp[c];
              if (xv == T(0)) continue;
              T* __restrict dwr = dwp + static_cast<std::size_t>(c) * F;
              for (int f = 0; f < F; ++f) dwr[f] += xv * g[f];
            }
            const T* wtp = wt.data() + tap * F * C;
            for (int f = 0; f < F; ++f) {
              const T gv = g[f];
              if (gv == T(0)) continue;
              const T* __restrict wr = wtp + static_cast<std::size_t>(f) * C;
              for (int c = 0; c < C; ++c) dxp[c] += gv * wr[c];
            }
          }
        }
      }
    }
  }
  return dx;
}

// x: [N,D], w: [D,U], b: [U]. out[n,u] = b[u] + sum_d x[n,d] w[d,u], d ascending.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank("dense input", x.shape(), 2);
  const int N = x.dim(0), D = x.dim(1);
  if (w.rank() != 2 || w.dim(0) != D || b.shape() != Shape{w.dim(1)}) {
    throw ShapeMismatch("dense weights " + shape_str(w.shape()) + " do not fit input width " + std::to_string(D));
  }
  const int U = w.dim(1);
  Tensor<T> out({N, U});
  for (int n = 0; n < N; ++n) {
    T* __restrict o = &out.at(n, 0);
    std::copy(b.data(), b.data() + U, o);
    for (int d = 0; d < D; ++d) {
      const T xv = x.at(n, d);
      const T* __restrict wr = w.data() + static_cast<std::size_t>(d) * U;
      for (int u = 0; u < U; ++u) o[u] += xv * wr[u];
    }
  }
  return out;
}

// Max over pool x pool windows (valid). argmax receives the flat input index
// of each winner; ties keep the first element in row-major window order.
template <typename T>
Tensor<T> maxpool2d_forward(const Tensor<T>& x, const LayerSpec& spec, std::vector<std::size_t>* argmax = nullptr) {
  detail::require_rank("maxpool input", x.shape(), 4);
  const int N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int p = spec.pool, s = spec.effective_pool_stride();
  if (H < p || W < p) throw ShapeUnderflow("maxpool window larger than input " + shape_str(x.shape()));
  const int Ho = pool_out_size(H, p, s), Wo = pool_out_size(W, p, s);
  Tensor<T> out({N, Ho, Wo, C});
  if (argmax) argmax->assign(out.size(), 0);
  std::vector<std::size_t> best(static_cast<std::size_t>(C));
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        T* o = &out.at(n, oy, ox, 0);
        bool first = true;
        for (int i = 0; i < p; ++i) {
          for (int j = 0; j < p; ++j) {
            const std::size_t base = ((static_cast<std::size_t>(n) * H + oy * s + i) * W + ox * s + j) * C;
            for (int c = 0; c < C; ++c) {
              const T v = x[base + c];
              if (first || v > o[c]) {
                o[c] = v;
                best[c] = base + c;
              }
            }
            first = false;
          }
        }
        if (argmax) {
          const std::size_t ob = ((static_cast<std::size_t>(n) * Ho + oy) * Wo + ox) * C;
          for (int c = 0; c < C; ++c) (*argmax)[ob + c] = best[c];
        }
      }
    }
  }
  return out;
}

// Row-wise softmax of [N,K] with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  detail::require_rank("softmax input", logits.shape(), 2);
  const int N = logits.dim(0), K = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (int n = 0; n < N; ++n) {
    T mx = logits.at(n, 0);
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(n, k));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(logits.at(n, k) - mx));
    for (int k = 0; k < K; ++k) p.at(n, k) = static_cast<T>(std::exp(static_cast<double>(logits.at(n, k) - mx)) / sum);
  }
  return p;
}

// ---- layers -----------------------------------------------------------------

template <typename T>
class Layer {
public:
  Layer(LayerSpec spec, Shape input) : spec_(std::move(spec)), in_(std::move(input)), out_(nn::output_shape(spec_, in_)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  // Train mode caches what backward needs; infer mode touches no state.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  // Consumes the cache of the preceding train-mode forward.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  // Hash of the piecewise-linear switching pattern (relu gates, pool
  // winners) seen by the last train-mode forward.
  virtual std::uint64_t switch_signature() const { return 0; }
  virtual void set_dropout_enabled(bool) {}

  const LayerSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return in_; }
  const Shape& output_shape() const { return out_; }

protected:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() < 1 || x.dim(0) < 1) throw ZeroBatch(std::string(kind_name(spec_.kind)) + ": empty batch");
    if (per_sample(x.shape()) != in_) {
      throw ShapeMismatch(std::string(kind_name(spec_.kind)) + " expects per-sample " + shape_str(in_) + ", got " +
                          shape_str(per_sample(x.shape())));
    }
  }
  void require_cache(bool cached) const {
    if (!cached) {
      throw StaleCache(std::string(kind_name(spec_.kind)) + ": backward without a matching train-mode forward");
    }
  }

  LayerSpec spec_;
  Shape in_;
  Shape out_;
};

template <typename T>
class Conv2D final : public Layer<T> {
public:
  Conv2D(const LayerSpec& spec, const Shape& in, Rng& rng)
      : Layer<T>(spec, in),
        w_{"kernel", Tensor<T>({spec.kernel_h, spec.kernel_w, in[2], spec.filters}), {}, true},
        b_{"bias", Tensor<T>({spec.filters}), {}, true} {
    detail::he_uniform(w_.value, spec.kernel_h * spec.kernel_w * in[2], rng);
    w_.grad = Tensor<T>(w_.value.shape());
    b_.grad = Tensor<T>(b_.value.shape());
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    Tensor<T> y = conv2d_forward(x, w_.value, b_.value, this->spec_);
    if (mode == Mode::train) {
      x_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    return conv2d_backward(x_, w_.value, g, this->spec_, w_.grad, b_.grad);
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

private:
  Param<T> w_, b_;
  Tensor<T> x_;
  bool cached_ = false;
};

template <typename T>
class Dense final : public Layer<T> {
public:
  Dense(const LayerSpec& spec, const Shape& in, Rng& rng)
      : Layer<T>(spec, in),
        w_{"kernel", Tensor<T>({in[0], spec.units}), {}, true},
        b_{"bias", Tensor<T>({spec.units}), {}, true} {
    detail::he_uniform(w_.value, in[0], rng);
    w_.grad = Tensor<T>(w_.value.shape());
    b_.grad = Tensor<T>(b_.value.shape());
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    Tensor<T> y = dense_forward(x, w_.value, b_.value);
    if (mode == Mode::train) {
      x_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    const int N = x_.dim(0), D = x_.dim(1), U = this->spec_.units;
    Tensor<T> dx(x_.shape());
    for (int n = 0; n < N; ++n) {
      const T* gn = &g.at(n, 0);
      for (int u = 0; u < U; ++u) b_.grad[u] += gn[u];
      for (int d = 0; d < D; ++d) {
        const T xv = x_.at(n, d);
        T* dwr = w_.grad.data() + static_cast<std::size_t>(d) * U;
        const T* wr = w_.value.data() + static_cast<std::size_t>(d) * U;
        T acc = 0;
        for (int u = 0; u < U; ++u) {
          dwr[u] += xv * gn[u];
          acc += wr[u] * gn[u];
        }
        dx.at(n, d) = acc;
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

private:
  Param<T> w_, b_;
  Tensor<T> x_;
  bool cached_ = false;
};

template <typename T>
class MaxPool2D final : public Layer<T> {
public:
  MaxPool2D(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    if (mode != Mode::train) return maxpool2d_forward(x, this->spec_);
    Tensor<T> y = maxpool2d_forward(x, this->spec_, &argmax_);
    x_shape_ = x.shape();
    signature_ = 0;
    for (auto idx : argmax_) signature_ = detail::mix(signature_, idx);
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    Tensor<T> dx(x_shape_);
    for (std::size_t i = 0; i < argmax_.size(); ++i) dx[argmax_[i]] += g[i];
    return dx;
  }

  std::uint64_t switch_signature() const override { return signature_; }

private:
  std::vector<std::size_t> argmax_;
  Shape x_shape_;
  std::uint64_t signature_ = 0;
  bool cached_ = false;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
  ReLU(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (mode == Mode::train) {
      mask_.resize(x.size());
      signature_ = 0;
      std::uint64_t word = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        mask_[i] = x[i] > T(0);
        word = (word << 1) | mask_[i];
        if ((i & 63) == 63) signature_ = detail::mix(signature_, word);
      }
      signature_ = detail::mix(signature_, word);
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = mask_[i] ? g[i] : T(0);
    return dx;
  }

  std::uint64_t switch_signature() const override { return signature_; }

private:
  std::vector<std::uint8_t> mask_;
  std::uint64_t signature_ = 0;
  bool cached_ = false;
};

// Inverted dropout. The element variant draws one keep/drop per value; the
// spatial variant draws one per (sample, channel) of an N,H,W,C tensor.
template <typename T>
class Dropout final : public Layer<T> {
public:
  Dropout(const LayerSpec& spec, const Shape& in, std::uint64_t seed) : Layer<T>(spec, in), rng_(seed) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    const double rate = this->spec_.rate;
    if (mode != Mode::train || !enabled_ || rate == 0.0) {
      if (mode == Mode::train) {
        mask_.assign(x.size(), T(1));
        cached_ = true;
      }
      return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    mask_.assign(x.size(), T(0));
    if (this->spec_.kind == LayerKind::spatial_dropout) {
      const int N = x.dim(0), C = x.dim(3);
      const std::size_t plane = x.size() / static_cast<std::size_t>(N) / C;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          if (rng_.uniform() < rate) continue;
          for (std::size_t p = 0; p < plane; ++p) mask_[(static_cast<std::size_t>(n) * plane + p) * C + c] = keep_scale;
        }
      }
    } else {
      for (auto& m : mask_) m = rng_.uniform() < rate ? T(0) : keep_scale;
    }
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask_[i];
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * mask_[i];
    return dx;
  }

  void set_dropout_enabled(bool on) override { enabled_ = on; }
  const std::vector<T>& mask() const { return mask_; }

private:
  Rng rng_;
  std::vector<T> mask_;
  bool enabled_ = true;
  bool cached_ = false;
};

template <typename T>
class Flatten final : public Layer<T> {
public:
  Flatten(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    if (mode == Mode::train) cached_ = true;
    return x.reshaped(batched(x.dim(0), this->out_));
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    return g.reshaped(batched(g.dim(0), this->in_));
  }

private:
  bool cached_ = false;
};

// Normalizes over every axis but the last. Running statistics are kept as
// non-learnable parameters so checkpoints carry them.
template <typename T>
class BatchNorm final : public Layer<T> {
public:
  BatchNorm(const LayerSpec& spec, const Shape& in)
      : Layer<T>(spec, in),
        gamma_{"gamma", Tensor<T>({in.back()}, T(1)), Tensor<T>({in.back()}), true},
        beta_{"beta", Tensor<T>({in.back()}), Tensor<T>({in.back()}), true},
        mean_{"moving_mean", Tensor<T>({in.back()}), Tensor<T>({in.back()}), false},
        var_{"moving_variance", Tensor<T>({in.back()}, T(1)), Tensor<T>({in.back()}), false} {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    const int D = this->in_.back();
    const std::size_t M = x.size() / static_cast<std::size_t>(D);
    if (M == 0) throw ZeroBatch("batchnorm: empty batch");
    const double eps = this->spec_.epsilon;
    Tensor<T> y(x.shape());

    if (mode == Mode::infer) {
      for (int d = 0; d < D; ++d) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(var_.value[d]) + eps);
        const double mu = mean_.value[d], g = gamma_.value[d], b = beta_.value[d];
        for (std::size_t m = 0; m < M; ++m) {
          const std::size_t i = m * D + d;
          y[i] = static_cast<T>(g * ((x[i] - mu) * inv) + b);
        }
      }
      return y;
    }

    std::vector<double> mean(D, 0.0), var(D, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
      for (int d = 0; d < D; ++d) mean[d] += x[m * D + d];
    }
    for (int d = 0; d < D; ++d) mean[d] /= static_cast<double>(M);
    for (std::size_t m = 0; m < M; ++m) {
      for (int d = 0; d < D; ++d) {
        const double c = x[m * D + d] - mean[d];
        var[d] += c * c;
      }
    }
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(D, 0.0);
    const double mom = this->spec_.momentum;
    for (int d = 0; d < D; ++d) {
      var[d] /= static_cast<double>(M);
      inv_std_[d] = 1.0 / std::sqrt(var[d] + eps);
      mean_.value[d] = static_cast<T>(mom * mean_.value[d] + (1.0 - mom) * mean[d]);
      var_.value[d] = static_cast<T>(mom * var_.value[d] + (1.0 - mom) * var[d]);
    }
    for (std::size_t m = 0; m < M; ++m) {
      for (int d = 0; d < D; ++d) {
        const std::size_t i = m * D + d;
        const double xh = (x[i] - mean[d]) * inv_std_[d];
        xhat_[i] = static_cast<T>(xh);
        y[i] = static_cast<T>(gamma_.value[d] * xh + beta_.value[d]);
      }
    }
    cached_ = true;
    return y;
  }

  // dx = inv_std/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = g*gamma.
  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    const int D = this->in_.back();
    const std::size_t M = g.size() / static_cast<std::size_t>(D);
    std::vector<double> sum_g(D, 0.0), sum_gx(D, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
      for (int d = 0; d < D; ++d) {
        const std::size_t i = m * D + d;
        sum_g[d] += g[i];
        sum_gx[d] += static_cast<double>(g[i]) * xhat_[i];
      }
    }
    Tensor<T> dx(g.shape());
    const double Md = static_cast<double>(M);
    for (int d = 0; d < D; ++d) {
      gamma_.grad[d] += static_cast<T>(sum_gx[d]);
      beta_.grad[d] += static_cast<T>(sum_g[d]);
    }
    for (std::size_t m = 0; m < M; ++m) {
      for (int d = 0; d < D; ++d) {
        const std::size_t i = m * D + d;
        const double gam = gamma_.value[d];
        dx[i] = static_cast<T>(gam * inv_std_[d] / Md * (Md * g[i] - sum_g[d] - xhat_[i] * sum_gx[d]));
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_, &mean_, &var_}; }

private:
  Param<T> gamma_, beta_, mean_, var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  bool cached_ = false;
};

template <typename T>
class Softmax final : public Layer<T> {
public:
  Softmax(const LayerSpec& spec, const Shape& in) : Layer<T>(spec, in) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input(x);
    Tensor<T> p = softmax_rows(x);
    if (mode == Mode::train) {
      p_ = p;
      cached_ = true;
    }
    return p;
  }

  // Jacobian-vector product; the training path uses the fused loss gradient instead.
  Tensor<T> backward(const Tensor<T>& g) override {
    this->require_cache(cached_);
    cached_ = false;
    const int N = g.dim(0), K = g.dim(1);
    Tensor<T> dx(g.shape());
    for (int n = 0; n < N; ++n) {
      double dot = 0.0;
      for (int k = 0; k < K; ++k) dot += static_cast<double>(g.at(n, k)) * p_.at(n, k);
      for (int k = 0; k < K; ++k) dx.at(n, k) = static_cast<T>(p_.at(n, k) * (g.at(n, k) - dot));
    }
    return dx;
  }

private:
  Tensor<T> p_;
  bool cached_ = false;
};

// Layer index feeds the per-layer seed so weight init and dropout masks are
// fixed by (model seed, position).
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, std::uint64_t model_seed, int index) {
  Rng rng(Rng::derive(model_seed, static_cast<std::uint64_t>(index)));
  switch (spec.kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2D<T>>(spec, in, rng);
    case LayerKind::dense: return std::make_unique<Dense<T>>(spec, in, rng);
    case LayerKind::maxpool2d: return std::make_unique<MaxPool2D<T>>(spec, in);
    case LayerKind::relu: return std::make_unique<ReLU<T>>(spec, in);
    case LayerKind::dropout:
    case LayerKind::spatial_dropout:
      return std::make_unique<Dropout<T>>(spec, in, Rng::derive(model_seed ^ 0xD0D0D0D0ULL, static_cast<std::uint64_t>(index)));
    case LayerKind::flatten: return std::make_unique<Flatten<T>>(spec, in);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm<T>>(spec, in);
    case LayerKind::softmax: return std::make_unique<Softmax<T>>(spec, in);
  }
  throw InvalidLayer("unhandled layer kind");
}

}  // namespace almond::nn
