#include "cs3d/conv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cs3d/ops.hpp"
#include "cs3d/parallel.hpp"
#include "eigen_maps.hpp"

namespace cs3d {

std::string Extent3::str() const {
  std::ostringstream os;
  os << t << 'x' << h << 'x' << w;
  return os.str();
}

std::size_t conv_out_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                            std::size_t pad, const char* what) {
  if (stride == 0) throw ShapeError(std::string(what) + ": stride must be >= 1");
  if (extent + 2 * pad < kernel) {
    throw ShapeError(std::string(what) + ": kernel extent " + std::to_string(kernel) +
                     " exceeds padded input extent " + std::to_string(extent + 2 * pad));
  }
  return (extent + 2 * pad - kernel) / stride + 1;
}

Shape conv_out_shape(const Shape& in, std::size_t out_channels, const Extent3& kernel,
                     const Extent3& stride, const Extent3& padding) {
  if (in.rank() != 5) throw ShapeError("expected rank-5 input, got " + in.str());
  return Shape{in[0], out_channels,
               conv_out_extent(in[2], kernel.t, stride.t, padding.t, "conv"),
               conv_out_extent(in[3], kernel.h, stride.h, padding.h, "conv"),
               conv_out_extent(in[4], kernel.w, stride.w, padding.w, "conv")};
}

namespace {

struct Geometry {
  std::size_t batch, c_in, c_out;
  std::size_t t, h, w;     // input extents
  std::size_t ot, oh, ow;  // output extents
  Extent3 k, s, p;

  std::size_t in_plane() const { return t * h * w; }
  std::size_t out_plane() const { return ot * oh * ow; }
};

Geometry make_geometry(const Tensor& x, const ConvParams& p, const Extent3& kernel,
                       const char* op) {
  if (x.shape().rank() != 5) {
    throw ShapeError(std::string(op) + ": expected rank-5 input, got " + x.shape().str());
  }
  if (!p.weight.defined() || p.weight.shape().rank() != 5) {
    throw ShapeError(std::string(op) + ": weight must be rank 5");
  }
  if (p.kernel() != kernel) {
    throw ShapeError(std::string(op) + ": weight kernel " + p.kernel().str() +
                     " does not match declared kernel " + kernel.str());
  }
  if (p.has_bias() && (p.bias.shape().rank() != 1 || p.bias.dim(0) != p.weight.dim(0))) {
    throw ShapeError(std::string(op) + ": bias shape " + p.bias.shape().str() +
                     " does not match " + std::to_string(p.weight.dim(0)) + " output channels");
  }
  Geometry g{};
  g.batch = x.dim(0);
  g.c_in = x.dim(1);
  g.c_out = p.weight.dim(0);
  g.t = x.dim(2);
  g.h = x.dim(3);
  g.w = x.dim(4);
  g.k = kernel;
  g.s = p.stride;
  g.p = p.padding;
  g.ot = conv_out_extent(g.t, kernel.t, g.s.t, g.p.t, op);
  g.oh = conv_out_extent(g.h, kernel.h, g.s.h, g.p.h, op);
  g.ow = conv_out_extent(g.w, kernel.w, g.s.w, g.p.w, op);
  return g;
}

// Valid output range [lo, hi) along one axis for kernel tap k.
inline void tap_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                      std::size_t pad, std::size_t k, std::size_t& lo, std::size_t& hi) {
  // in = o*stride + k - pad must lie in [0, in_extent)
  lo = std::min(out_extent, k >= pad ? 0 : (pad - k + stride - 1) / stride);
  if (in_extent + pad <= k) {
    hi = lo;
    return;
  }
  const std::size_t max_in = in_extent - 1 + pad - k;  // o*stride <= max_in
  hi = std::min(out_extent, max_in / stride + 1);
  if (hi < lo) hi = lo;
}

// ---- depthwise --------------------------------------------------------------

void dw_plane_forward(const Geometry& g, const double* in, const double* wk, double* out) {
  for (std::size_t kt = 0; kt < g.k.t; ++kt) {
    std::size_t t_lo, t_hi;
    tap_range(g.ot, g.t, g.s.t, g.p.t, kt, t_lo, t_hi);
    for (std::size_t kh = 0; kh < g.k.h; ++kh) {
      std::size_t h_lo, h_hi;
      tap_range(g.oh, g.h, g.s.h, g.p.h, kh, h_lo, h_hi);
      for (std::size_t kw = 0; kw < g.k.w; ++kw) {
        std::size_t w_lo, w_hi;
        tap_range(g.ow, g.w, g.s.w, g.p.w, kw, w_lo, w_hi);
        const double weight = wk[(kt * g.k.h + kh) * g.k.w + kw];
        for (std::size_t ot = t_lo; ot < t_hi; ++ot) {
          const std::size_t it = ot * g.s.t + kt - g.p.t;
          for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
            const std::size_t ih = oh * g.s.h + kh - g.p.h;
            const double* src = in + (it * g.h + ih) * g.w;
            double* dst = out + (ot * g.oh + oh) * g.ow;
            if (g.s.w == 1) {
              const double* shifted = src + w_lo + kw - g.p.w;
              double* d = dst + w_lo;
              for (std::size_t i = 0; i < w_hi - w_lo; ++i) d[i] += weight * shifted[i];
            } else {
              for (std::size_t ow = w_lo; ow < w_hi; ++ow) {
                dst[ow] += weight * src[ow * g.s.w + kw - g.p.w];
              }
            }
          }
        }
      }
    }
  }
}

// Accumulates input and weight gradients for one (sample, channel) plane.
void dw_plane_backward(const Geometry& g, const double* in, const double* wk, const double* gout,
                       double* gin, double* gw) {
  for (std::size_t kt = 0; kt < g.k.t; ++kt) {
    std::size_t t_lo, t_hi;
    tap_range(g.ot, g.t, g.s.t, g.p.t, kt, t_lo, t_hi);
    for (std::size_t kh = 0; kh < g.k.h; ++kh) {
      std::size_t h_lo, h_hi;
      tap_range(g.oh, g.h, g.s.h, g.p.h, kh, h_lo, h_hi);
      for (std::size_t kw = 0; kw < g.k.w; ++kw) {
        std::size_t w_lo, w_hi;
        tap_range(g.ow, g.w, g.s.w, g.p.w, kw, w_lo, w_hi);
        const std::size_t tap = (kt * g.k.h + kh) * g.k.w + kw;
        const double weight = wk[tap];
        double acc = 0.0;
        for (std::size_t ot = t_lo; ot < t_hi; ++ot) {
          const std::size_t it = ot * g.s.t + kt - g.p.t;
          for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
            const std::size_t ih = oh * g.s.h + kh - g.p.h;
            const std::size_t base = (it * g.h + ih) * g.w + kw - g.p.w;
            const double* go = gout + (ot * g.oh + oh) * g.ow;
            for (std::size_t ow = w_lo; ow < w_hi; ++ow) {
              const std::size_t iw = base + ow * g.s.w;
              acc += go[ow] * in[iw];
              if (gin) gin[iw] += weight * go[ow];
            }
          }
        }
        if (gw) gw[tap] += acc;
      }
    }
  }
}

// ---- im2col GEMM path (dense and pointwise) ---------------------------------

bool is_pointwise(const Geometry& g) {
  return g.k.volume() == 1 && g.s == Extent3{1, 1, 1} && g.p == Extent3{0, 0, 0};
}

void im2col(const Geometry& g, const double* x, double* cols) {
  const std::size_t v = g.out_plane();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const double* xc = x + ci * g.in_plane();
    for (std::size_t kt = 0; kt < g.k.t; ++kt) {
      for (std::size_t kh = 0; kh < g.k.h; ++kh) {
        for (std::size_t kw = 0; kw < g.k.w; ++kw, ++row) {
          double* dst = cols + row * v;
          std::size_t w_lo, w_hi;
          tap_range(g.ow, g.w, g.s.w, g.p.w, kw, w_lo, w_hi);
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const long it = static_cast<long>(ot * g.s.t + kt) - static_cast<long>(g.p.t);
            for (std::size_t oh = 0; oh < g.oh; ++oh, dst += g.ow) {
              const long ih = static_cast<long>(oh * g.s.h + kh) - static_cast<long>(g.p.h);
              if (it < 0 || it >= static_cast<long>(g.t) || ih < 0 ||
                  ih >= static_cast<long>(g.h)) {
                std::fill_n(dst, g.ow, 0.0);
                continue;
              }
              const double* src = xc + (static_cast<std::size_t>(it) * g.h +
                                        static_cast<std::size_t>(ih)) * g.w;
              std::fill(dst, dst + w_lo, 0.0);
              for (std::size_t ow = w_lo; ow < w_hi; ++ow) dst[ow] = src[ow * g.s.w + kw - g.p.w];
              std::fill(dst + w_hi, dst + g.ow, 0.0);
            }
          }
        }
      }
    }
  }
}

void col2im_add(const Geometry& g, const double* cols, double* gx) {
  const std::size_t v = g.out_plane();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    double* gc = gx + ci * g.in_plane();
    for (std::size_t kt = 0; kt < g.k.t; ++kt) {
      for (std::size_t kh = 0; kh < g.k.h; ++kh) {
        for (std::size_t kw = 0; kw < g.k.w; ++kw, ++row) {
          const double* src = cols + row * v;
          std::size_t w_lo, w_hi;
          tap_range(g.ow, g.w, g.s.w, g.p.w, kw, w_lo, w_hi);
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const long it = static_cast<long>(ot * g.s.t + kt) - static_cast<long>(g.p.t);
            for (std::size_t oh = 0; oh < g.oh; ++oh, src += g.ow) {
              const long ih = static_cast<long>(oh * g.s.h + kh) - static_cast<long>(g.p.h);
              if (it < 0 || it >= static_cast<long>(g.t) || ih < 0 ||
                  ih >= static_cast<long>(g.h)) {
                continue;
              }
              double* dst = gc + (static_cast<std::size_t>(it) * g.h +
                                  static_cast<std::size_t>(ih)) * g.w;
              for (std::size_t ow = w_lo; ow < w_hi; ++ow) dst[ow * g.s.w + kw - g.p.w] += src[ow];
            }
          }
        }
      }
    }
  }
}

Tensor conv_gemm(const Tensor& x, const ConvParams& p, const Geometry& g, const char* op) {
  const std::size_t kdim = g.c_in * g.k.volume();
  const std::size_t v = g.out_plane();
  const bool pointwise = is_pointwise(g);
  Shape out_shape{g.batch, g.c_out, g.ot, g.oh, g.ow};
  std::vector<double> out(out_shape.numel());

  const double* xd = x.data().data();
  const double* bias = p.has_bias() ? p.bias.data().data() : nullptr;
  CMatrixMap W(p.weight.data().data(), g.c_out, kdim);
  parallel_for(g.batch, [&](std::size_t b) {
    MatrixMap Y(out.data() + b * g.c_out * v, g.c_out, v);
    const double* xb = xd + b * g.c_in * g.in_plane();
    if (pointwise) {
      Y.noalias() = W * CMatrixMap(xb, kdim, v);
    } else {
      std::vector<double> cols(kdim * v);
      im2col(g, xb, cols.data());
      Y.noalias() = W * CMatrixMap(cols.data(), kdim, v);
    }
    if (bias) {
      for (std::size_t co = 0; co < g.c_out; ++co) Y.row(co).array() += bias[co];
    }
  });

  return make_result(
      op, out_shape, std::move(out), p.has_bias() ? std::vector<Tensor>{x, p.weight, p.bias}
                                                  : std::vector<Tensor>{x, p.weight},
      [x, w = p.weight, g, kdim, v, pointwise](const TensorImpl& o, const GradSink& sink) {
        double* gx = sink.grad(0);
        double* gw = sink.grad(1);
        double* gb = o.grad_fn->inputs.size() > 2 ? sink.grad(2) : nullptr;
        CMatrixMap W(w.data().data(), g.c_out, kdim);
        const double* xd = x.data().data();
        if (gx) {
          parallel_for(g.batch, [&](std::size_t b) {
            CMatrixMap G(o.grad.data() + b * g.c_out * v, g.c_out, v);
            double* gxb = gx + b * g.c_in * g.in_plane();
            if (pointwise) {
              MatrixMap(gxb, kdim, v).noalias() += W.transpose() * G;
            } else {
              std::vector<double> dcols(kdim * v);
              MatrixMap(dcols.data(), kdim, v).noalias() = W.transpose() * G;
              col2im_add(g, dcols.data(), gxb);
            }
          });
        }
        if (gw) {
          MatrixMap GW(gw, g.c_out, kdim);
          std::vector<double> cols;
          if (!pointwise) cols.resize(kdim * v);
          for (std::size_t b = 0; b < g.batch; ++b) {
            CMatrixMap G(o.grad.data() + b * g.c_out * v, g.c_out, v);
            const double* xb = xd + b * g.c_in * g.in_plane();
            if (pointwise) {
              GW.noalias() += G * CMatrixMap(xb, kdim, v).transpose();
            } else {
              im2col(g, xb, cols.data());
              GW.noalias() += G * CMatrixMap(cols.data(), kdim, v).transpose();
            }
          }
        }
        if (gb) {
          for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t co = 0; co < g.c_out; ++co) {
              const double* row = o.grad.data() + (b * g.c_out + co) * v;
              double acc = 0.0;
              for (std::size_t i = 0; i < v; ++i) acc += row[i];
              gb[co] += acc;
            }
          }
        }
      });
}

}  // namespace

Tensor dwconv3d(const Tensor& x, const ConvParams& p, const Extent3& kernel) {
  Geometry g = make_geometry(x, p, kernel, "dwconv3d");
  if (p.weight.dim(1) != 1) {
    throw ShapeError("dwconv3d: weight must be [C,1,kt,kh,kw], got " + p.weight.shape().str());
  }
  if (g.c_out != g.c_in) {
    throw ShapeError("dwconv3d: channel mismatch, input has " + std::to_string(g.c_in) +
                     " channels but weight has " + std::to_string(g.c_out));
  }
  const std::size_t channels = g.c_in;
  const std::size_t kvol = kernel.volume();
  Shape out_shape{g.batch, channels, g.ot, g.oh, g.ow};
  std::vector<double> out(out_shape.numel(), 0.0);
  const double* xd = x.data().data();
  const double* wd = p.weight.data().data();
  const double* bias = p.has_bias() ? p.bias.data().data() : nullptr;
  parallel_for(g.batch * channels, [&](std::size_t plane) {
    const std::size_t c = plane % channels;
    double* dst = out.data() + plane * g.out_plane();
    dw_plane_forward(g, xd + plane * g.in_plane(), wd + c * kvol, dst);
    if (bias) {
      for (std::size_t i = 0; i < g.out_plane(); ++i) dst[i] += bias[c];
    }
  });
  std::vector<Tensor> inputs{x, p.weight};
  if (p.has_bias()) inputs.push_back(p.bias);
  return make_result(
      "dwconv3d", out_shape, std::move(out), inputs,
      [x, w = p.weight, g, channels, kvol](const TensorImpl& o, const GradSink& sink) {
        double* gx = sink.grad(0);
        double* gw = sink.grad(1);
        double* gb = o.grad_fn->inputs.size() > 2 ? sink.grad(2) : nullptr;
        const double* xd = x.data().data();
        const double* wd = w.data().data();
        // Parallel over channels; the batch loop stays inside so weight
        // gradients accumulate in a fixed order.
        parallel_for(channels, [&](std::size_t c) {
          for (std::size_t b = 0; b < g.batch; ++b) {
            const std::size_t plane = b * channels + c;
            const double* go = o.grad.data() + plane * g.out_plane();
            dw_plane_backward(g, xd + plane * g.in_plane(), wd + c * kvol, go,
                              gx ? gx + plane * g.in_plane() : nullptr, gw ? gw + c * kvol : nullptr);
            if (gb) {
              double acc = 0.0;
              for (std::size_t i = 0; i < g.out_plane(); ++i) acc += go[i];
              gb[c] += acc;
            }
          }
        });
      });
}

Tensor pwconv3d(const Tensor& x, const ConvParams& p) {
  Geometry g = make_geometry(x, p, Extent3{1, 1, 1}, "pwconv3d");
  if (p.weight.dim(1) != g.c_in) {
    throw ShapeError("pwconv3d: channel mismatch, input has " + std::to_string(g.c_in) +
                     " channels but weight expects " + std::to_string(p.weight.dim(1)));
  }
  return conv_gemm(x, p, g, "pwconv3d");
}

Tensor dense_conv3d(const Tensor& x, const ConvParams& p, const Extent3& kernel) {
  Geometry g = make_geometry(x, p, kernel, "dense_conv3d");
  if (p.weight.dim(1) != g.c_in) {
    throw ShapeError("dense_conv3d: channel mismatch, input has " + std::to_string(g.c_in) +
                     " channels but weight expects " + std::to_string(p.weight.dim(1)));
  }
  return conv_gemm(x, p, g, "dense_conv3d");
}

// ---- batch norm -------------------------------------------------------------

BatchNormState BatchNormState::identity(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor::full(Shape{channels}, 1.0, true);
  s.delta = Tensor::zeros(Shape{channels}, true);
  s.running_mean = Tensor::zeros(Shape{channels});
  s.running_var = Tensor::full(Shape{channels}, 1.0);
  return s;
}

Tensor batchnorm3d(const Tensor& x, BatchNormState& s, Mode mode) {
  if (x.shape().rank() != 5) throw ShapeError("batchnorm3d: expected rank-5 input " + x.shape().str());
  const std::size_t channels = x.dim(1);
  if (channels != s.channels()) {
    throw ShapeError("batchnorm3d: channel mismatch, input has " + std::to_string(channels) +
                     " channels, state has " + std::to_string(s.channels()));
  }
  if (!(s.epsilon > 0.0)) throw std::invalid_argument("batchnorm3d: epsilon must be > 0");
  const std::size_t batch = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3) * x.dim(4);
  const std::size_t count = batch * plane;
  const double* xd = x.data().data();
  const double* gamma = s.gamma.data().data();
  const double* delta = s.delta.data().data();

  std::vector<double> mu(channels);
  std::vector<double> inv_std(channels);
  if (mode == Mode::kTrain) {
    auto rm = s.running_mean.mutable_data();
    auto rv = s.running_var.mutable_data();
    parallel_for(channels, [&](std::size_t c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = xd + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = xd + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double var = sq / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + s.epsilon);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      rm[c] = (1.0 - s.momentum) * rm[c] + s.momentum * m;
      rv[c] = (1.0 - s.momentum) * rv[c] + s.momentum * unbiased;
    });
  } else {
    auto rm = s.running_mean.data();
    auto rv = s.running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + s.epsilon);
    }
  }

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  parallel_for(batch * channels, [&](std::size_t bc) {
    const std::size_t c = bc % channels;
    const double* p = xd + bc * plane;
    double* xh = xhat.data() + bc * plane;
    double* y = out.data() + bc * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xh[i] = (p[i] - mu[c]) * inv_std[c];
      y[i] = gamma[c] * xh[i] + delta[c];
    }
  });

  const bool train = mode == Mode::kTrain;
  return make_result(
      "batchnorm3d", x.shape(), std::move(out), {x, s.gamma, s.delta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gamma_t = s.gamma, train, batch,
       channels, plane, count](const TensorImpl& o, const GradSink& sink) {
        double* gx = sink.grad(0);
        double* gg = sink.grad(1);
        double* gd = sink.grad(2);
        const double* gamma = gamma_t.data().data();
        parallel_for(channels, [&](std::size_t c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += o.grad[off + i];
              sum_gx += o.grad[off + i] * xhat[off + i];
            }
          }
          if (gg) gg[c] += sum_gx;
          if (gd) gd[c] += sum_g;
          if (!gx) return;
          const double scale = gamma[c] * inv_std[c];
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double gi = o.grad[off + i];
              if (train) {
                gx[off + i] += scale * (gi - sum_g / n - xhat[off + i] * sum_gx / n);
              } else {
                gx[off + i] += scale * gi;
              }
            }
          }
        });
      });
}

// ---- pooling ----------------------------------------------------------------

namespace {

Geometry pool_geometry(const Tensor& x, const Extent3& window, const Extent3& stride,
                       const char* op) {
  if (x.shape().rank() != 5) {
    throw ShapeError(std::string(op) + ": expected rank-5 input, got " + x.shape().str());
  }
  Geometry g{};
  g.batch = x.dim(0);
  g.c_in = g.c_out = x.dim(1);
  g.t = x.dim(2);
  g.h = x.dim(3);
  g.w = x.dim(4);
  g.k = window;
  g.s = stride;
  if (window.t > g.t || window.h > g.h || window.w > g.w) {
    throw ShapeError(std::string(op) + ": window " + window.str() + " exceeds input " +
                     x.shape().str());
  }
  g.ot = conv_out_extent(g.t, window.t, stride.t, 0, op);
  g.oh = conv_out_extent(g.h, window.h, stride.h, 0, op);
  g.ow = conv_out_extent(g.w, window.w, stride.w, 0, op);
  return g;
}

}  // namespace

Tensor maxpool3d(const Tensor& x, const Extent3& window, const Extent3& stride) {
  Geometry g = pool_geometry(x, window, stride, "maxpool3d");
  const std::size_t planes = g.batch * g.c_in;
  Shape out_shape{g.batch, g.c_in, g.ot, g.oh, g.ow};
  std::vector<double> out(out_shape.numel());
  std::vector<std::size_t> argmax(out.size());
  const double* xd = x.data().data();
  parallel_for(planes, [&](std::size_t pl) {
    const double* in = xd + pl * g.in_plane();
    std::size_t o = pl * g.out_plane();
    for (std::size_t ot = 0; ot < g.ot; ++ot) {
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow, ++o) {
          std::size_t best = (ot * g.s.t * g.h + oh * g.s.h) * g.w + ow * g.s.w;
          double best_v = in[best];
          // Scan in increasing flat index; strict > keeps the lowest index on ties.
          for (std::size_t kt = 0; kt < g.k.t; ++kt) {
            for (std::size_t kh = 0; kh < g.k.h; ++kh) {
              const std::size_t row = ((ot * g.s.t + kt) * g.h + oh * g.s.h + kh) * g.w + ow * g.s.w;
              for (std::size_t kw = 0; kw < g.k.w; ++kw) {
                if (in[row + kw] > best_v) {
                  best_v = in[row + kw];
                  best = row + kw;
                }
              }
            }
          }
          out[o] = best_v;
          argmax[o] = pl * g.in_plane() + best;
        }
      }
    }
  });
  return make_result("maxpool3d", out_shape, std::move(out), {x},
                     [argmax = std::move(argmax)](const TensorImpl& o, const GradSink& sink) {
                       double* gx = sink.grad(0);
                       for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += o.grad[i];
                     });
}

Tensor avgpool3d(const Tensor& x, const Extent3& window, const Extent3& stride) {
  Geometry g = pool_geometry(x, window, stride, "avgpool3d");
  const std::size_t planes = g.batch * g.c_in;
  const double inv = 1.0 / static_cast<double>(window.volume());
  Shape out_shape{g.batch, g.c_in, g.ot, g.oh, g.ow};
  std::vector<double> out(out_shape.numel());
  const double* xd = x.data().data();
  parallel_for(planes, [&](std::size_t pl) {
    const double* in = xd + pl * g.in_plane();
    std::size_t o = pl * g.out_plane();
    for (std::size_t ot = 0; ot < g.ot; ++ot) {
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow, ++o) {
          double acc = 0.0;
          for (std::size_t kt = 0; kt < g.k.t; ++kt) {
            for (std::size_t kh = 0; kh < g.k.h; ++kh) {
              const std::size_t row = ((ot * g.s.t + kt) * g.h + oh * g.s.h + kh) * g.w + ow * g.s.w;
              for (std::size_t kw = 0; kw < g.k.w; ++kw) acc += in[row + kw];
            }
          }
          out[o] = acc * inv;
        }
      }
    }
  });
  return make_result("avgpool3d", out_shape, std::move(out), {x},
                     [g, planes, inv](const TensorImpl& o, const GradSink& sink) {
                       double* gx = sink.grad(0);
                       parallel_for(planes, [&](std::size_t pl) {
                         double* gin = gx + pl * g.in_plane();
                         std::size_t oi = pl * g.out_plane();
                         for (std::size_t ot = 0; ot < g.ot; ++ot) {
                           for (std::size_t oh = 0; oh < g.oh; ++oh) {
                             for (std::size_t ow = 0; ow < g.ow; ++ow, ++oi) {
                               const double v = o.grad[oi] * inv;
                               for (std::size_t kt = 0; kt < g.k.t; ++kt) {
                                 for (std::size_t kh = 0; kh < g.k.h; ++kh) {
                                   const std::size_t row =
                                       ((ot * g.s.t + kt) * g.h + oh * g.s.h + kh) * g.w + ow * g.s.w;
                                   for (std::size_t kw = 0; kw < g.k.w; ++kw) gin[row + kw] += v;
                                 }
                               }
                             }
                           }
                         }
                       });
                     });
}

Tensor multi_pool(const Tensor& x, const Extent3& window, const Extent3& stride,
                  MultiPoolKind kind) {
  Tensor mx = maxpool3d(x, window, stride);
  if (kind == MultiPoolKind::kMaxOnly) return mx;
  return concat({mx, avgpool3d(x, window, stride)}, 1);
}

Tensor activate(const Tensor& x, const Activation& a) {
  return a.kind == ActivationKind::kSsn ? ssn(x, a.ssn) : relu(x);
}

// ---- factorized block -------------------------------------------------------

Tensor factorized_block(const Tensor& x, FactorizedBlock& b, Mode mode) {
  if (x.shape().rank() != 5 || x.dim(1) != b.in_channels()) {
    throw ShapeError("factorized_block: input " + x.shape().str() + " does not have " +
                     std::to_string(b.in_channels()) + " channels");
  }
  Tensor y = dwconv3d(x, b.dw_temporal, kTemporalKernel);
  y = pwconv3d(y, b.pw1);
  y = batchnorm3d(y, b.bn1, mode);
  y = activate(y, b.act1);
  y = dwconv3d(y, b.dw_spatial, kSpatialKernel);
  y = pwconv3d(y, b.pw2);
  y = batchnorm3d(y, b.bn2, mode);
  y = activate(y, b.act2);
  Tensor shortcut = b.has_projection() ? pwconv3d(x, b.residual_projection) : x;
  return add(y, shortcut);
}

}  // namespace cs3d
