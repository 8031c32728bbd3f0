#include "dualseg/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace dualseg {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

// cols is (c * k * k, h * w); zero padding of k / 2.
template <class T>
void im2col(const T* src, int c, int h, int w, int k, T* cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    const T* plane = src + ci * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int x0 = std::max(0, pad - kx);
        const int x1 = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          T* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T{});
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(sy) * w + (kx - pad);
          std::fill(row, row + x0, T{});
          std::copy(srow + x0, srow + x1, row + x0);
          std::fill(row + x1, row + w, T{});
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, int c, int h, int w, int k, T* dst) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    T* plane = dst + ci * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int x0 = std::max(0, pad - kx);
        const int x1 = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* row = src + static_cast<std::size_t>(y) * w;
          T* drow = plane + static_cast<std::size_t>(sy) * w + (kx - pad);
          for (int x = x0; x < x1; ++x) drow[x] += row[x];
        }
      }
    }
  }
}

template <class T>
Param<T> make_param(const std::string& name, Shape4 shape, T fill, bool trainable = true) {
  Param<T> p;
  p.name = name;
  p.value = Tensor<T>(shape, fill);
  if (trainable) p.grad = Tensor<T>(shape);
  p.trainable = trainable;
  return p;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      weight_(make_param<T>(name + ".weight", {out_channels, in_channels, kernel, kernel}, T{})),
      bias_(make_param<T>(name + ".bias", {out_channels, 1, 1, 1}, T{})) {}

template <class T>
void Conv2d<T>::init(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_) * k_ * k_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : weight_.value.values()) v = static_cast<T>(dist(rng));
  bias_.value.zero();
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c() != in_) {
    throw Error(Errc::ShapeMismatch, weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                         to_string(x.shape()));
  }
  const int h = x.h();
  const int w = x.w();
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index kk = static_cast<Eigen::Index>(in_) * k_ * k_;
  Tensor<T> y({x.n(), out_, h, w});

  AlignedVector<T> scratch;
  if (mode == Mode::Train) {
    in_shape_ = x.shape();
    cols_.resize(static_cast<std::size_t>(x.n()) * kk * hw);
  } else {
    scratch.resize(static_cast<std::size_t>(kk * hw));
  }
  MapConstMat<T> wm(weight_.value.data(), out_, kk);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), out_);
  for (int n = 0; n < x.n(); ++n) {
    T* cols = mode == Mode::Train ? cols_.data() + static_cast<std::size_t>(n) * kk * hw : scratch.data();
    im2col(x.sample(n), in_, h, w, k_, cols);
    MapMat<T> out(y.sample(n), out_, hw);
    out.noalias() = wm * MapConstMat<T>(cols, kk, hw);
    out.colwise() += bias;
  }
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  const int h = in_shape_.h;
  const int w = in_shape_.w;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index kk = static_cast<Eigen::Index>(in_) * k_ * k_;
  Tensor<T> dx(in_shape_);
  MapConstMat<T> wm(weight_.value.data(), out_, kk);
  MapMat<T> dw(weight_.grad.data(), out_, kk);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), out_);
  RowMat<T> dcols(kk, hw);
  for (int n = 0; n < in_shape_.n; ++n) {
    MapConstMat<T> g(dy.sample(n), out_, hw);
    MapConstMat<T> cols(cols_.data() + static_cast<std::size_t>(n) * kk * hw, kk, hw);
    dw.noalias() += g * cols.transpose();
    db += g.rowwise().sum();
    dcols.noalias() = wm.transpose() * g;
    col2im_add(dcols.data(), in_, h, w, k_, dx.sample(n));
  }
  return dx;
}

template <class T>
void Conv2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ----------------------------------------------------------- BatchNorm2d

template <class T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : c_(channels),
      gamma_(make_param<T>(name + ".gamma", {channels, 1, 1, 1}, T{1})),
      beta_(make_param<T>(name + ".beta", {channels, 1, 1, 1}, T{0})),
      running_mean_(make_param<T>(name + ".running_mean", {channels, 1, 1, 1}, T{0}, false)),
      running_var_(make_param<T>(name + ".running_var", {channels, 1, 1, 1}, T{1}, false)) {}

template <class T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c() != c_) throw Error(Errc::ShapeMismatch, gamma_.name + ": channel count mismatch " + to_string(x.shape()));
  const std::size_t hw = x.shape().plane();
  const std::size_t m = hw * x.n();
  Tensor<T> y(x.shape());

  if (mode == Mode::Infer) {
    for (int c = 0; c < c_; ++c) {
      const double scale = gamma_.value[c] / std::sqrt(static_cast<double>(running_var_.value[c]) + kEps);
      const double shift = beta_.value[c] - scale * running_mean_.value[c];
      for (int n = 0; n < x.n(); ++n) {
        const T* src = x.plane(n, c);
        T* dst = y.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = static_cast<T>(scale * src[i] + shift);
      }
    }
    return y;
  }

  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(c_, 0.0);
  for (int c = 0; c < c_; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* src = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* src = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) sq += (src[i] - mean) * (src[i] - mean);
    }
    const double var = sq / static_cast<double>(m);
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv_std;
    const double g = gamma_.value[c];
    const double b = beta_.value[c];
    for (int n = 0; n < x.n(); ++n) {
      const T* src = x.plane(n, c);
      T* xh = xhat_.plane(n, c);
      T* dst = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = (src[i] - mean) * inv_std;
        xh[i] = static_cast<T>(v);
        dst[i] = static_cast<T>(g * v + b);
      }
    }
    const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
    running_mean_.value[c] = static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
    running_var_.value[c] = static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
  }
  return y;
}

template <class T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  const std::size_t hw = dy.shape().plane();
  const double m = static_cast<double>(hw * dy.n());
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < c_; ++c) {
    double dbeta = 0.0;
    double dgamma = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = xhat_.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        dbeta += g[i];
        dgamma += static_cast<double>(g[i]) * xh[i];
      }
    }
    gamma_.grad[c] += static_cast<T>(dgamma);
    beta_.grad[c] += static_cast<T>(dbeta);
    const double k = gamma_.value[c] * inv_std_[c] / m;
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = xhat_.plane(n, c);
      T* d = dx.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) d[i] = static_cast<T>(k * (m * g[i] - dbeta - xh[i] * dgamma));
    }
  }
  return dx;
}

template <class T>
void BatchNorm2d<T>::collect(ParamRefs<T>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ------------------------------------------------------------------ ReLU

template <class T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y(x.shape());
  if (mode == Mode::Train) active_.assign(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > T{0};
    y[i] = on ? x[i] : T{0};
    if (mode == Mode::Train) active_[i] = on;
  }
  return y;
}

template <class T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = active_[i] ? dy[i] : T{0};
  return dx;
}

// -------------------------------------------------------------- MaxPool2

template <class T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw Error(Errc::BadSpatialDims, "max-pool needs even spatial dims, got " + to_string(x.shape()));
  }
  const int oh = x.h() / 2;
  const int ow = x.w() / 2;
  Tensor<T> y({x.n(), x.c(), oh, ow});
  if (mode == Mode::Train) {
    in_shape_ = x.shape();
    argmax_.assign(y.size(), 0);
  }
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      const std::size_t base = static_cast<std::size_t>(src - x.data());
      for (int yy = 0; yy < oh; ++yy) {
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::size_t best = static_cast<std::size_t>(2 * yy) * x.w() + 2 * xx;
          for (std::size_t cand : {best + 1, best + x.w(), best + x.w() + 1}) {
            if (src[cand] > src[best]) best = cand;
          }
          y[o] = src[best];
          if (mode == Mode::Train) argmax_[o] = base + best;
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
  return dx;
}

// ------------------------------------------------------------ functional

template <class T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y({x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* dst = y.plane(n, c);
      for (int yy = 0; yy < y.h(); ++yy) {
        const T* srow = src + static_cast<std::size_t>(yy / 2) * x.w();
        T* drow = dst + static_cast<std::size_t>(yy) * y.w();
        for (int xx = 0; xx < y.w(); ++xx) drow[xx] = srow[xx / 2];
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx({dy.n(), dy.c(), dy.h() / 2, dy.w() / 2});
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      const T* src = dy.plane(n, c);
      T* dst = dx.plane(n, c);
      for (int yy = 0; yy < dy.h(); ++yy) {
        const T* srow = src + static_cast<std::size_t>(yy) * dy.w();
        T* drow = dst + static_cast<std::size_t>(yy / 2) * dx.w();
        for (int xx = 0; xx < dy.w(); ++xx) drow[xx / 2] += srow[xx];
      }
    }
  }
  return dx;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
  return y;
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  Tensor<T> p(logits.shape());
  const std::size_t hw = logits.shape().plane();
  const int classes = logits.c();
  std::vector<double> e(classes);
  for (int n = 0; n < logits.n(); ++n) {
    const T* l = logits.sample(n);
    T* out = p.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = l[i];
      for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(l[c * hw + i]));
      double sum = 0.0;
      for (int c = 0; c < classes; ++c) sum += e[c] = std::exp(l[c * hw + i] - mx);
      for (int c = 0; c < classes; ++c) out[c * hw + i] = static_cast<T>(e[c] / sum);
    }
  }
  return p;
}

template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& dprobs) {
  probs.require_same(dprobs, "softmax_channels_backward");
  Tensor<T> dl(probs.shape());
  const std::size_t hw = probs.shape().plane();
  const int classes = probs.c();
  for (int n = 0; n < probs.n(); ++n) {
    const T* p = probs.sample(n);
    const T* g = dprobs.sample(n);
    T* d = dl.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (int c = 0; c < classes; ++c) dot += static_cast<double>(g[c * hw + i]) * p[c * hw + i];
      for (int c = 0; c < classes; ++c) d[c * hw + i] = static_cast<T>(p[c * hw + i] * (g[c * hw + i] - dot));
    }
  }
  return dl;
}

// ---------------------------------------------------------------- blocks

template <class T>
ConvBlock<T>::ConvBlock(const std::string& name, int in_channels, int out_channels)
    : conv_(name + ".conv", in_channels, out_channels, 3), bn_(name + ".bn", out_channels) {}

template <class T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  return relu_.forward(bn_.forward(conv_.forward(x, mode), mode), mode);
}

template <class T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& dy) {
  return conv_.backward(bn_.backward(relu_.backward(dy)));
}

template <class T>
void ConvBlock<T>::collect(ParamRefs<T>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

template <class T>
DoubleConv<T>::DoubleConv(const std::string& name, int in_channels, int out_channels)
    : first_(name + ".block1", in_channels, out_channels), second_(name + ".block2", out_channels, out_channels) {}

template <class T>
void DoubleConv<T>::init(std::mt19937_64& rng) {
  first_.init(rng);
  second_.init(rng);
}

template <class T>
Tensor<T> DoubleConv<T>::forward(const Tensor<T>& x, Mode mode) {
  return second_.forward(first_.forward(x, mode), mode);
}

template <class T>
Tensor<T> DoubleConv<T>::backward(const Tensor<T>& dy) {
  return first_.backward(second_.backward(dy));
}

template <class T>
void DoubleConv<T>::collect(ParamRefs<T>& out) {
  first_.collect(out);
  second_.collect(out);
}

#define DUALSEG_INSTANTIATE_LAYERS(T)                                                   \
  template class Conv2d<T>;                                                             \
  template class BatchNorm2d<T>;                                                        \
  template class ReLU<T>;                                                               \
  template class MaxPool2<T>;                                                           \
  template class ConvBlock<T>;                                                          \
  template class DoubleConv<T>;                                                         \
  template Tensor<T> upsample2(const Tensor<T>&);                                       \
  template Tensor<T> upsample2_backward(const Tensor<T>&);                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                         \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                \
  template Tensor<T> softmax_channels_backward(const Tensor<T>&, const Tensor<T>&);

DUALSEG_INSTANTIATE_LAYERS(float)
DUALSEG_INSTANTIATE_LAYERS(double)

#undef DUALSEG_INSTANTIATE_LAYERS

std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

}  // namespace dualseg
