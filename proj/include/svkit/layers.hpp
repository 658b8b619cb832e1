#pragma once

#include <cmath>
#include <unordered_map>

#include "svkit/kernels.hpp"
#include "svkit/rng.hpp"
#include "svkit/tensor.hpp"

// Layers of the Table-1 style network. Forward caches whatever backward
// needs when `record` is set; backward accumulates parameter gradients into
// the grad buffers and returns the input gradient.

namespace svkit::nn {

using svkit::Parameter;
using svkit::ParamStore;
using svkit::Tensor;

template <typename T>
void he_init(Tensor<T>& t, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / double(fan_in));
  for (auto& v : t.values) v = T(rng.normal(0.0, std));
}

// ---- conv ----

template <typename T>
class Conv2d {
 public:
  Conv2d(ParamStore<T>& store, const std::string& name, int c_in, int c_out, Rng& rng)
      : c_in_(c_in), c_out_(c_out) {
    weight_ = store.create(name + ".weight", {3, 3, c_in, c_out});
    bias_ = store.create(name + ".bias", {c_out});
    he_init(weight_->tensor, 9 * c_in, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool record) {
    if (x.ndim() != 4 || x.dim(3) != c_in_) throw NnError("conv2d: channel mismatch");
    if (record) input_ = x;
    Tensor<T> out({x.dim(0), x.dim(1), x.dim(2), c_out_});
    kernels::conv2d_forward(x.values.data(), weight_->tensor.values.data(),
                            bias_->tensor.values.data(), out.values.data(), x.dim(0), x.dim(1),
                            x.dim(2), c_in_, c_out_);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const int N = input_.dim(0), F = input_.dim(1), TT = input_.dim(2);
    weight_->tensor.ensure_grad();
    bias_->tensor.ensure_grad();
    kernels::conv2d_backward_params(input_.values.data(), dout.values.data(),
                                    weight_->tensor.grad.data(), bias_->tensor.grad.data(), N, F,
                                    TT, c_in_, c_out_);
    // tap-transposed weights for the input gradient
    std::vector<T> w_t(size_t(9) * c_out_ * c_in_);
    const T* w = weight_->tensor.values.data();
    for (int tap = 0; tap < 9; ++tap)
      for (int ci = 0; ci < c_in_; ++ci)
        for (int co = 0; co < c_out_; ++co)
          w_t[(ptrdiff_t(tap) * c_out_ + co) * c_in_ + ci] =
              w[(ptrdiff_t(tap) * c_in_ + ci) * c_out_ + co];
    Tensor<T> dx({N, F, TT, c_in_});
    kernels::conv2d_backward_input(dout.values.data(), w_t.data(), dx.values.data(), N, F, TT,
                                   c_in_, c_out_);
    return dx;
  }

  Parameter<T>* weight() { return weight_; }
  Parameter<T>* bias() { return bias_; }

 private:
  int c_in_, c_out_;
  Parameter<T>* weight_;
  Parameter<T>* bias_;
  Tensor<T> input_;
};

// ---- batch norm (per innermost channel, decay 0.99) ----

template <typename T>
class BatchNorm {
 public:
  BatchNorm(ParamStore<T>& store, const std::string& name, int channels, double decay = 0.99)
      : channels_(channels), decay_(decay) {
    gamma_ = store.create(name + ".gamma", {channels});
    beta_ = store.create(name + ".beta", {channels});
    running_mean_ = store.create(name + ".running_mean", {channels}, /*trainable=*/false);
    running_var_ = store.create(name + ".running_var", {channels}, /*trainable=*/false);
    std::fill(gamma_->tensor.values.begin(), gamma_->tensor.values.end(), T(1));
    std::fill(running_var_->tensor.values.begin(), running_var_->tensor.values.end(), T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, bool record) {
    if (x.dim(x.ndim() - 1) != channels_) throw NnError("batch_norm: channel mismatch");
    const ptrdiff_t rows = ptrdiff_t(x.numel()) / channels_;
    Tensor<T> out(x.shape);

    if (train) {
      if (x.dim(0) < 2) throw NnError("batch_norm: train mode needs batch >= 2");
      mean_.assign(size_t(channels_), T(0));
      inv_std_.assign(size_t(channels_), T(0));
#pragma omp parallel for schedule(static)
      for (int c = 0; c < channels_; ++c) {
        double m = 0.0;
        for (ptrdiff_t r = 0; r < rows; ++r) m += double(x.values[r * channels_ + c]);
        m /= double(rows);
        double v = 0.0;
        for (ptrdiff_t r = 0; r < rows; ++r) {
          double d = double(x.values[r * channels_ + c]) - m;
          v += d * d;
        }
        v /= double(rows);
        mean_[c] = T(m);
        inv_std_[c] = T(1.0 / std::sqrt(v + kEps));
        auto& rm = running_mean_->tensor.values[c];
        auto& rv = running_var_->tensor.values[c];
        rm = T(decay_ * double(rm) + (1.0 - decay_) * m);
        rv = T(decay_ * double(rv) + (1.0 - decay_) * v);
      }
    } else {
      mean_.assign(size_t(channels_), T(0));
      inv_std_.assign(size_t(channels_), T(0));
      for (int c = 0; c < channels_; ++c) {
        mean_[c] = running_mean_->tensor.values[c];
        inv_std_[c] = T(1.0 / std::sqrt(double(running_var_->tensor.values[c]) + kEps));
      }
    }

    if (record) xhat_.assign(x.numel(), T(0));
#pragma omp parallel for schedule(static)
    for (ptrdiff_t r = 0; r < rows; ++r) {
      for (int c = 0; c < channels_; ++c) {
        T xh = (x.values[r * channels_ + c] - mean_[c]) * inv_std_[c];
        if (record) xhat_[r * channels_ + c] = xh;
        out.values[r * channels_ + c] = gamma_->tensor.values[c] * xh + beta_->tensor.values[c];
      }
    }
    return out;
  }

  // train-mode backward
  Tensor<T> backward(const Tensor<T>& dout) {
    const ptrdiff_t rows = ptrdiff_t(dout.numel()) / channels_;
    gamma_->tensor.ensure_grad();
    beta_->tensor.ensure_grad();
    Tensor<T> dx(dout.shape);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels_; ++c) {
      const T g = gamma_->tensor.values[c];
      double sum_d = 0.0, sum_dx = 0.0;
      for (ptrdiff_t r = 0; r < rows; ++r) {
        const double d = double(dout.values[r * channels_ + c]);
        sum_d += d;
        sum_dx += d * double(xhat_[r * channels_ + c]);
      }
      gamma_->tensor.grad[c] += T(sum_dx);
      beta_->tensor.grad[c] += T(sum_d);
      const double scale = double(g) * double(inv_std_[c]) / double(rows);
      for (ptrdiff_t r = 0; r < rows; ++r) {
        const double d = double(dout.values[r * channels_ + c]);
        dx.values[r * channels_ + c] =
            T(scale * (double(rows) * d - sum_d - double(xhat_[r * channels_ + c]) * sum_dx));
      }
    }
    return dx;
  }

  Parameter<T>* gamma() { return gamma_; }
  Parameter<T>* beta() { return beta_; }

  static constexpr double kEps = 1e-5;

 private:
  int channels_;
  double decay_;
  Parameter<T>*gamma_, *beta_, *running_mean_, *running_var_;
  std::vector<T> mean_, inv_std_, xhat_;
};

// ---- activations / dropout ----

template <typename T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool record) {
    Tensor<T> out(x.shape);
    if (record) mask_.assign(x.numel(), 0);
    const ptrdiff_t n = ptrdiff_t(x.numel());
#pragma omp parallel for schedule(static)
    for (ptrdiff_t i = 0; i < n; ++i) {
      const bool pos = x.values[i] > T(0);
      out.values[i] = pos ? x.values[i] : T(0);
      if (record) mask_[i] = pos;
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx(dout.shape);
    const ptrdiff_t n = ptrdiff_t(dout.numel());
    for (ptrdiff_t i = 0; i < n; ++i) dx.values[i] = mask_[i] ? dout.values[i] : T(0);
    return dx;
  }

 private:
  std::vector<char> mask_;
};

/// Inverted dropout: kept units are scaled by 1/(1-rate) in train mode, eval
/// mode is an exact identity. The mask comes from the caller's RNG so the
/// training loop stays deterministic.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw NnError("dropout rate must be in [0,1)");
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, Rng& rng, bool record) {
    if (!train || rate_ == 0.0) {
      if (record) scaled_mask_.assign(x.numel(), T(1));
      return x;
    }
    const T scale = T(1.0 / (1.0 - rate_));
    Tensor<T> out(x.shape);
    if (record) scaled_mask_.assign(x.numel(), T(0));
    for (size_t i = 0; i < x.numel(); ++i) {
      const bool keep = rng.uniform() >= rate_;
      const T m = keep ? scale : T(0);
      out.values[i] = x.values[i] * m;
      if (record) scaled_mask_[i] = m;
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dx(dout.shape);
    for (size_t i = 0; i < dout.numel(); ++i) dx.values[i] = dout.values[i] * scaled_mask_[i];
    return dx;
  }

 private:
  double rate_;
  std::vector<T> scaled_mask_;
};

// ---- pooling ----

/// Time-axis maxpool, kernel 2 stride 2, floor mode (odd tail frame dropped).
template <typename T>
class MaxPoolTime {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool record) {
    const int N = x.dim(0), F = x.dim(1), TT = x.dim(2), C = x.dim(3);
    if (TT < 2) throw NnError("maxpool_time: need at least 2 frames");
    const int To = TT / 2;
    in_shape_ = x.shape;
    Tensor<T> out({N, F, To, C});
    if (record) argmax_.assign(out.numel(), 0);
    const ptrdiff_t planes = ptrdiff_t(N) * F;
#pragma omp parallel for schedule(static)
    for (ptrdiff_t p = 0; p < planes; ++p) {
      const T* src = x.values.data() + p * TT * C;
      T* dst = out.values.data() + p * To * C;
      for (int to = 0; to < To; ++to)
        for (int c = 0; c < C; ++c) {
          const T a = src[ptrdiff_t(2 * to) * C + c];
          const T b = src[ptrdiff_t(2 * to + 1) * C + c];
          const bool second = b > a;
          dst[ptrdiff_t(to) * C + c] = second ? b : a;
          if (record) argmax_[(p * To + to) * C + c] = second ? 1 : 0;
        }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const int N = in_shape_[0], F = in_shape_[1], TT = in_shape_[2], C = in_shape_[3];
    const int To = TT / 2;
    Tensor<T> dx(in_shape_);
    const ptrdiff_t planes = ptrdiff_t(N) * F;
    for (ptrdiff_t p = 0; p < planes; ++p)
      for (int to = 0; to < To; ++to)
        for (int c = 0; c < C; ++c) {
          const int t = 2 * to + argmax_[(p * To + to) * C + c];
          dx.values[(p * TT + t) * C + c] += dout.values[(p * To + to) * C + c];
        }
    return dx;
  }

 private:
  std::vector<int> in_shape_;
  std::vector<char> argmax_;
};

/// Heterogeneous frequency maxpool: three pools with (kernel, stride, pad) =
/// (2,2,0), (3,2,1), (4,2,1) along the frequency axis, concatenated in depth
/// in that order. Padding is a -inf sentinel, never selected.
template <typename T>
class HeteroFreqPool {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool record) {
    const int N = x.dim(0), F = x.dim(1), TT = x.dim(2), C = x.dim(3);
    if (F % 2 != 0) throw NnError("hetero_freq_maxpool: frequency axis must be even");
    const int Fo = F / 2;
    in_shape_ = x.shape;
    Tensor<T> out({N, Fo, TT, 3 * C});
    if (record) argmax_.assign(out.numel(), 0);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int br = 0; br < 3; ++br) {
        const int k = kKernel[br], pad = kPad[br];
        for (int fo = 0; fo < Fo; ++fo) {
          const int f_begin = 2 * fo - pad;
          for (int t = 0; t < TT; ++t)
            for (int c = 0; c < C; ++c) {
              T best{};
              int best_f = -1;
              for (int df = 0; df < k; ++df) {
                const int f = f_begin + df;
                if (f < 0 || f >= F) continue;  // -inf padding
                const T v = x.values[((ptrdiff_t(n) * F + f) * TT + t) * C + c];
                if (best_f < 0 || v > best) {
                  best = v;
                  best_f = f;
                }
              }
              const ptrdiff_t oi = ((ptrdiff_t(n) * Fo + fo) * TT + t) * 3 * C + br * C + c;
              out.values[oi] = best;
              if (record) argmax_[oi] = best_f;
            }
        }
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const int N = in_shape_[0], F = in_shape_[1], TT = in_shape_[2], C = in_shape_[3];
    const int Fo = F / 2;
    Tensor<T> dx(in_shape_);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
      for (int fo = 0; fo < Fo; ++fo)
        for (int t = 0; t < TT; ++t)
          for (int br = 0; br < 3; ++br)
            for (int c = 0; c < C; ++c) {
              const ptrdiff_t oi = ((ptrdiff_t(n) * Fo + fo) * TT + t) * 3 * C + br * C + c;
              const int f = argmax_[oi];
              dx.values[((ptrdiff_t(n) * F + f) * TT + t) * C + c] += dout.values[oi];
            }
    return dx;
  }

  static constexpr int kKernel[3] = {2, 3, 4};
  static constexpr int kPad[3] = {0, 1, 1};

 private:
  std::vector<int> in_shape_;
  std::vector<int> argmax_;
};

/// Mean over the whole time axis; output time length is 1 whatever T was,
/// which is what makes the network input-length independent past this point.
template <typename T>
class GlobalAvgPoolTime {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool /*record*/) {
    const int N = x.dim(0), F = x.dim(1), TT = x.dim(2), C = x.dim(3);
    in_shape_ = x.shape;
    Tensor<T> out({N, F, 1, C});
    const ptrdiff_t planes = ptrdiff_t(N) * F;
#pragma omp parallel for schedule(static)
    for (ptrdiff_t p = 0; p < planes; ++p) {
      const T* src = x.values.data() + p * TT * C;
      T* dst = out.values.data() + p * C;
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = 0; t < TT; ++t) acc += double(src[ptrdiff_t(t) * C + c]);
        dst[c] = T(acc / TT);
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const int TT = in_shape_[2];
    Tensor<T> dx(in_shape_);
    const int C = in_shape_[3];
    const ptrdiff_t planes = ptrdiff_t(in_shape_[0]) * in_shape_[1];
    for (ptrdiff_t p = 0; p < planes; ++p)
      for (int t = 0; t < TT; ++t)
        for (int c = 0; c < C; ++c)
          dx.values[(p * TT + t) * C + c] = dout.values[p * C + c] / T(TT);
    return dx;
  }

 private:
  std::vector<int> in_shape_;
};

// ---- fully connected ----

template <typename T>
class Linear {
 public:
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng)
      : in_(in), out_(out) {
    weight_ = store.create(name + ".weight", {out, in});
    bias_ = store.create(name + ".bias", {out});
    he_init(weight_->tensor, in, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, bool record) {
    const int N = x.dim(0);
    if (int(x.numel()) / N != in_) throw NnError("linear: dimension mismatch");
    if (record) input_ = x;
    Tensor<T> out({N, out_});
    kernels::linear_forward(x.values.data(), weight_->tensor.values.data(),
                            bias_->tensor.values.data(), out.values.data(), N, in_, out_);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    const int N = input_.dim(0);
    weight_->tensor.ensure_grad();
    bias_->tensor.ensure_grad();
    kernels::linear_backward_params(input_.values.data(), dout.values.data(),
                                    weight_->tensor.grad.data(), bias_->tensor.grad.data(), N,
                                    in_, out_);
    Tensor<T> dx(input_.shape);
    kernels::linear_backward_input(dout.values.data(), weight_->tensor.values.data(),
                                   dx.values.data(), N, in_, out_);
    return dx;
  }

  Parameter<T>* weight() { return weight_; }
  Parameter<T>* bias() { return bias_; }
  int in() const { return in_; }
  int out() const { return out_; }

 private:
  int in_, out_;
  Parameter<T>* weight_;
  Parameter<T>* bias_;
  Tensor<T> input_;
};

// {N, F, T, C} -> {N, F*T*C}; values are already contiguous per sample.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  Tensor<T> out;
  out.shape = {x.dim(0), int(x.numel()) / x.dim(0)};
  out.values = x.values;
  return out;
}

template <typename T>
Tensor<T> unflatten(const Tensor<T>& x, const std::vector<int>& shape) {
  Tensor<T> out;
  out.shape = shape;
  out.values = x.values;
  return out;
}

// ---- losses ----

/// Mean softmax cross-entropy, numerically stabilized by max subtraction.
/// dlogits, when given, receives (softmax - onehot) / batch.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                             Tensor<T>* dlogits = nullptr) {
  const int N = logits.dim(0), K = logits.dim(1);
  if (int(labels.size()) != N) throw NnError("softmax_cross_entropy: label count mismatch");
  if (dlogits) *dlogits = Tensor<T>(logits.shape);
  double loss = 0.0;
  std::vector<double> p(size_t(K), 0.0);
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) throw NnError("softmax_cross_entropy: label out of range");
    const T* row = logits.values.data() + ptrdiff_t(n) * K;
    double m = double(row[0]);
    for (int k = 1; k < K; ++k) m = std::max(m, double(row[k]));
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      p[k] = std::exp(double(row[k]) - m);
      z += p[k];
    }
    loss -= (double(row[labels[n]]) - m) - std::log(z);
    if (dlogits) {
      T* drow = dlogits->values.data() + ptrdiff_t(n) * K;
      for (int k = 0; k < K; ++k)
        drow[k] = T((p[k] / z - (k == labels[n] ? 1.0 : 0.0)) / double(N));
    }
  }
  return loss / N;
}

/// Contrastive loss of one embedding pair, margin m, unsquared Euclidean
/// distance in both branches: genuine (y=0) -> d/2, impostor (y=1) ->
/// max(0, m-d)/2.
template <typename T>
double contrastive_loss(const std::vector<T>& z_i, const std::vector<T>& z_j, int y, double m) {
  if (z_i.size() != z_j.size()) throw NnError("contrastive_loss: length mismatch");
  if (m <= 0.0) throw NnError("contrastive_loss: margin must be positive");
  double d2 = 0.0;
  for (size_t k = 0; k < z_i.size(); ++k) {
    double d = double(z_i[k]) - double(z_j[k]);
    d2 += d * d;
  }
  double d = std::sqrt(d2);
  return y == 0 ? 0.5 * d : 0.5 * std::max(0.0, m - d);
}

/// Batched contrastive loss over embedding rows; returns the mean loss and
/// fills dza/dzb.
template <typename T>
double contrastive_loss_batch(const Tensor<T>& za, const Tensor<T>& zb,
                              const std::vector<int>& labels, double margin, Tensor<T>* dza,
                              Tensor<T>* dzb) {
  const int N = za.dim(0), D = za.dim(1);
  if (zb.dim(0) != N || zb.dim(1) != D) throw NnError("contrastive: shape mismatch");
  if (dza) *dza = Tensor<T>(za.shape);
  if (dzb) *dzb = Tensor<T>(zb.shape);
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const T* a = za.values.data() + ptrdiff_t(n) * D;
    const T* b = zb.values.data() + ptrdiff_t(n) * D;
    double d2 = 0.0;
    for (int k = 0; k < D; ++k) {
      double d = double(a[k]) - double(b[k]);
      d2 += d * d;
    }
    const double d = std::sqrt(d2);
    double coeff = 0.0;  // dloss/dd, per pair
    if (labels[n] == 0) {
      loss += 0.5 * d;
      coeff = 0.5;
    } else if (d < margin) {
      loss += 0.5 * (margin - d);
      coeff = -0.5;
    }
    if (dza && d > 1e-12) {
      T* ga = dza->values.data() + ptrdiff_t(n) * D;
      T* gb = dzb->values.data() + ptrdiff_t(n) * D;
      const double s = coeff / (d * N);
      for (int k = 0; k < D; ++k) {
        const double diff = double(a[k]) - double(b[k]);
        ga[k] = T(s * diff);
        gb[k] = T(-s * diff);
      }
    }
  }
  return loss / N;
}

// ---- optimizer ----

/// SGD with momentum and decoupled-from-nothing classic L2 weight decay:
/// v <- m v + (g + lambda w); w <- w - alpha v. Frozen parameters are
/// untouched.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore<T>& store, double lr) {
    for (auto& p : store) {
      if (!p->trainable) continue;
      if (p->tensor.grad.empty()) continue;
      auto& v = velocity_[p.get()];
      if (v.size() != p->tensor.values.size()) v.assign(p->tensor.values.size(), T(0));
      T* w = p->tensor.values.data();
      const T* g = p->tensor.grad.data();
      const ptrdiff_t n = ptrdiff_t(p->tensor.values.size());
      for (ptrdiff_t i = 0; i < n; ++i) {
        v[size_t(i)] = T(momentum_ * double(v[size_t(i)]) +
                         (double(g[i]) + weight_decay_ * double(w[i])));
        w[i] = T(double(w[i]) - lr * double(v[size_t(i)]));
      }
    }
  }

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::unordered_map<const Parameter<T>*, std::vector<T>> velocity_;
};

}  // namespace svkit::nn
