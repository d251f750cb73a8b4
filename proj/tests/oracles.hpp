#pragma once
// Straight-line reference implementations used as test oracles. Nothing here
// calls into the library's kernels; only Tensor is used as a container.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "cs3d/random.hpp"
#include "cs3d/tensor.hpp"

namespace oracle {

using cs3d::Shape;
using cs3d::Tensor;

/// Multiplications performed by the loops below since the last reset.
inline std::size_t& mul_count() {
  static std::size_t n = 0;
  return n;
}

inline double counted_mul(double a, double b) {
  ++mul_count();
  return a * b;
}

struct Dims5 {
  std::size_t n, c, t, h, w;
  explicit Dims5(const Shape& s) : n(s[0]), c(s[1]), t(s[2]), h(s[3]), w(s[4]) {}
  std::size_t at(std::size_t a, std::size_t b, std::size_t i, std::size_t j, std::size_t k) const {
    return (((a * c + b) * t + i) * h + j) * w + k;
  }
};

inline Tensor random_tensor(const Shape& s, cs3d::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(s.numel());
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor(s, std::move(d));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// General grouped 3D correlation. groups == C_in gives depthwise,
/// groups == 1 gives dense. Weight [C_out, C_in/groups, kt, kh, kw].
inline Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor* bias, std::size_t groups,
                     std::size_t st, std::size_t sh, std::size_t sw, std::size_t pt,
                     std::size_t ph, std::size_t pw) {
  const Dims5 in(x.shape());
  const std::size_t co = weight.dim(0), cig = weight.dim(1);
  const std::size_t kt = weight.dim(2), kh = weight.dim(3), kw = weight.dim(4);
  const std::size_t to = (in.t + 2 * pt - kt) / st + 1;
  const std::size_t ho = (in.h + 2 * ph - kh) / sh + 1;
  const std::size_t wo = (in.w + 2 * pw - kw) / sw + 1;
  const std::size_t cog = co / groups;
  Tensor y = Tensor::zeros({in.n, co, to, ho, wo});
  const Dims5 out(y.shape());
  auto yd = y.mutable_data();
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < in.n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < to; ++i)
        for (std::size_t j = 0; j < ho; ++j)
          for (std::size_t k = 0; k < wo; ++k) {
            double acc = bias ? bias->data()[o] : 0.0;
            const std::size_t g = o / cog;
            for (std::size_t ci = 0; ci < cig; ++ci)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t p = 0; p < kh; ++p)
                  for (std::size_t q = 0; q < kw; ++q) {
                    const long long ti = static_cast<long long>(i * st + a) - static_cast<long long>(pt);
                    const long long hi = static_cast<long long>(j * sh + p) - static_cast<long long>(ph);
                    const long long wi = static_cast<long long>(k * sw + q) - static_cast<long long>(pw);
                    // Padded taps are multiplications by zero; count them
                    // like a framework would.
                    double v = 0.0;
                    if (ti >= 0 && hi >= 0 && wi >= 0 && ti < static_cast<long long>(in.t) &&
                        hi < static_cast<long long>(in.h) && wi < static_cast<long long>(in.w)) {
                      v = xd[in.at(b, g * cig + ci, static_cast<std::size_t>(ti),
                                   static_cast<std::size_t>(hi), static_cast<std::size_t>(wi))];
                    }
                    acc += counted_mul(v, wd[(((o * cig + ci) * kt + a) * kh + p) * kw + q]);
                  }
            yd[out.at(b, o, i, j, k)] = acc;
          }
  return y;
}

/// y[n,k] = sum_f x[n,f] w[f,k] + b[k].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), f = x.dim(1), k = w.dim(1);
  Tensor y = Tensor::zeros({n, k});
  auto yd = y.mutable_data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      double acc = b.data()[c];
      for (std::size_t i = 0; i < f; ++i) acc += counted_mul(x.data()[r * f + i], w.data()[i * k + c]);
      yd[r * k + c] = acc;
    }
  return y;
}

enum class Pool { kMax, kAvg };

inline Tensor pool3d(const Tensor& x, Pool kind, std::size_t wt, std::size_t wh, std::size_t ww,
                     std::size_t st, std::size_t sh, std::size_t sw) {
  const Dims5 in(x.shape());
  const std::size_t to = (in.t - wt) / st + 1, ho = (in.h - wh) / sh + 1, wo = (in.w - ww) / sw + 1;
  Tensor y = Tensor::zeros({in.n, in.c, to, ho, wo});
  const Dims5 out(y.shape());
  auto yd = y.mutable_data();
  for (std::size_t b = 0; b < in.n; ++b)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t i = 0; i < to; ++i)
        for (std::size_t j = 0; j < ho; ++j)
          for (std::size_t k = 0; k < wo; ++k) {
            double m = -std::numeric_limits<double>::infinity(), s = 0.0;
            for (std::size_t a = 0; a < wt; ++a)
              for (std::size_t p = 0; p < wh; ++p)
                for (std::size_t q = 0; q < ww; ++q) {
                  const double v = x.data()[in.at(b, c, i * st + a, j * sh + p, k * sw + q)];
                  m = std::max(m, v);
                  s += v;
                }
            yd[out.at(b, c, i, j, k)] = kind == Pool::kMax ? m : s / static_cast<double>(wt * wh * ww);
          }
  return y;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// 1-D correlation over T with same padding, on [C_in, T] sequences.
inline std::vector<double> conv_t(const std::vector<double>& z, std::size_t cin, std::size_t t,
                                  const Tensor& w, const Tensor& b) {
  const std::size_t cout = w.dim(0), k = w.dim(2), pad = k / 2;
  std::vector<double> y(cout * t, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < t; ++i) {
      double acc = b.data()[o];
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t a = 0; a < k; ++a) {
          const long long ti = static_cast<long long>(i + a) - static_cast<long long>(pad);
          if (ti < 0 || ti >= static_cast<long long>(t)) continue;
          acc += z[c * t + static_cast<std::size_t>(ti)] * w.data()[(o * cin + c) * k + a];
        }
      y[o * t + i] = acc;
    }
  return y;
}

/// Temporal gating, one line of the algorithm per block. conv weights are
/// [C/r, C, k, 1, 1] and [C, C/r, k, 1, 1]; `relu_phi` selects phi.
inline Tensor temporal_attention(const Tensor& x, const Tensor& w1, const Tensor& b1,
                                 const Tensor& w2, const Tensor& b2, bool relu_phi) {
  const Dims5 d(x.shape());
  const std::size_t cr = w1.dim(0);
  Tensor y = Tensor::zeros(x.shape());
  auto yd = y.mutable_data();
  for (std::size_t b = 0; b < d.n; ++b) {
    std::vector<double> z_avg(d.c * d.t), z_max(d.c * d.t);
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t t = 0; t < d.t; ++t) {
        double s = 0.0, m = -std::numeric_limits<double>::infinity();
        for (std::size_t h = 0; h < d.h; ++h)
          for (std::size_t w = 0; w < d.w; ++w) {
            const double v = x.data()[d.at(b, c, t, h, w)];
            s += v;
            m = std::max(m, v);
          }
        z_avg[c * d.t + t] = s / static_cast<double>(d.h * d.w);
        z_max[c * d.t + t] = m;
      }
    auto branch = [&](const std::vector<double>& z) {
      std::vector<double> h = conv_t(z, d.c, d.t, w1, b1);
      if (relu_phi)
        for (double& v : h) v = std::max(v, 0.0);
      std::vector<double> s = conv_t(h, cr, d.t, w2, b2);
      for (double& v : s) v = logistic(v);
      return s;
    };
    const std::vector<double> s_t = branch(z_avg);
    const std::vector<double> s_s = branch(z_max);
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t t = 0; t < d.t; ++t) {
        const double s = std::max(s_t[c * d.t + t], s_s[c * d.t + t]);
        for (std::size_t h = 0; h < d.h; ++h)
          for (std::size_t w = 0; w < d.w; ++w) {
            const double v = x.data()[d.at(b, c, t, h, w)];
            yd[d.at(b, c, t, h, w)] = v * s + v;
          }
      }
  }
  return y;
}

/// Spatial gating: channel mean/max, concat, one same-padded 2->1 conv,
/// sigmoid, attn * X + X. Weight [1, 2, kt, kh, kw].
inline Tensor spatial_attention(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const Dims5 d(x.shape());
  const std::size_t kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  Tensor pooled = Tensor::zeros({d.n, 2, d.t, d.h, d.w});
  const Dims5 pd(pooled.shape());
  auto pdat = pooled.mutable_data();
  for (std::size_t b = 0; b < d.n; ++b)
    for (std::size_t t = 0; t < d.t; ++t)
      for (std::size_t h = 0; h < d.h; ++h)
        for (std::size_t v = 0; v < d.w; ++v) {
          double s = 0.0, m = -std::numeric_limits<double>::infinity();
          for (std::size_t c = 0; c < d.c; ++c) {
            const double e = x.data()[d.at(b, c, t, h, v)];
            s += e;
            m = std::max(m, e);
          }
          pdat[pd.at(b, 0, t, h, v)] = s / static_cast<double>(d.c);
          pdat[pd.at(b, 1, t, h, v)] = m;
        }
  Tensor attn = conv3d(pooled, w, &bias, 1, 1, 1, 1, kt / 2, kh / 2, kw / 2);
  Tensor y = Tensor::zeros(x.shape());
  auto yd = y.mutable_data();
  for (std::size_t b = 0; b < d.n; ++b)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t t = 0; t < d.t; ++t)
        for (std::size_t h = 0; h < d.h; ++h)
          for (std::size_t v = 0; v < d.w; ++v) {
            const double a = logistic(attn.data()[Dims5(attn.shape()).at(b, 0, t, h, v)]);
            const double e = x.data()[d.at(b, c, t, h, v)];
            yd[d.at(b, c, t, h, v)] = a * e + e;
          }
  return y;
}

/// Batch norm over (B, T, H, W) with the batch (biased) variance.
inline Tensor batchnorm_train(const Tensor& x, const std::vector<double>& gamma,
                              const std::vector<double>& delta, double eps) {
  const Dims5 d(x.shape());
  Tensor y = Tensor::zeros(x.shape());
  auto yd = y.mutable_data();
  const double count = static_cast<double>(d.n * d.t * d.h * d.w);
  for (std::size_t c = 0; c < d.c; ++c) {
    double s = 0.0;
    for (std::size_t b = 0; b < d.n; ++b)
      for (std::size_t t = 0; t < d.t; ++t)
        for (std::size_t h = 0; h < d.h; ++h)
          for (std::size_t w = 0; w < d.w; ++w) s += x.data()[d.at(b, c, t, h, w)];
    const double mu = s / count;
    double q = 0.0;
    for (std::size_t b = 0; b < d.n; ++b)
      for (std::size_t t = 0; t < d.t; ++t)
        for (std::size_t h = 0; h < d.h; ++h)
          for (std::size_t w = 0; w < d.w; ++w) {
            const double e = x.data()[d.at(b, c, t, h, w)] - mu;
            q += e * e;
          }
    const double var = q / count;
    for (std::size_t b = 0; b < d.n; ++b)
      for (std::size_t t = 0; t < d.t; ++t)
        for (std::size_t h = 0; h < d.h; ++h)
          for (std::size_t w = 0; w < d.w; ++w) {
            const std::size_t i = d.at(b, c, t, h, w);
            yd[i] = gamma[c] * (x.data()[i] - mu) / std::sqrt(var + eps) + delta[c];
          }
  }
  return y;
}

}  // namespace oracle
