#include "cs3d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eigen_maps.hpp"

namespace cs3d {

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_strides;  // 0 along broadcast axes
  std::vector<std::size_t> b_strides;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.rank(), 0);
  auto own = s.strides();
  std::size_t offset = out.rank() - s.rank();
  for (std::size_t i = 0; i < s.rank(); ++i) {
    st[offset + i] = s[i] == 1 ? 0 : own[i];
  }
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.a_strides = aligned_strides(a, p.out);
  p.b_strides = aligned_strides(b, p.out);
  return p;
}

// Visits every output element in row-major order with the matching source
// offsets of both operands.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t rank = p.out.rank();
  const std::size_t n = p.out.numel();
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += p.a_strides[d];
      ib += p.b_strides[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.a_strides[d] * idx[d];
      ib -= p.b_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class Binary { kAdd, kSub, kMul };

Tensor binary(Binary op, const Tensor& a, const Tensor& b) {
  const char* name = op == Binary::kAdd ? "add" : op == Binary::kSub ? "sub" : "mul";
  if (a.shape() == b.shape()) {
    const auto& x = a.data();
    const auto& y = b.data();
    std::vector<double> out(x.size());
    switch (op) {
      case Binary::kAdd:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
        break;
      case Binary::kSub:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
        break;
      case Binary::kMul:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
        break;
    }
    return make_result(name, a.shape(), std::move(out), {a, b},
                       [op, a, b](const TensorImpl& o, const GradSink& sink) {
                         const auto& g = o.grad;
                         const std::size_t n = g.size();
                         if (double* ga = sink.grad(0)) {
                           if (op == Binary::kMul) {
                             auto y = b.data();
                             for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
                           } else {
                             for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                           }
                         }
                         if (double* gb = sink.grad(1)) {
                           if (op == Binary::kMul) {
                             auto x = a.data();
                             for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * x[i];
                           } else if (op == Binary::kSub) {
                             for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
                           } else {
                             for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
                           }
                         }
                       });
  }

  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<double> out(plan.out.numel());
  auto x = a.data();
  auto y = b.data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (op) {
      case Binary::kAdd: out[i] = x[ia] + y[ib]; break;
      case Binary::kSub: out[i] = x[ia] - y[ib]; break;
      case Binary::kMul: out[i] = x[ia] * y[ib]; break;
    }
  });
  Shape out_shape = plan.out;
  return make_result(name, out_shape, std::move(out), {a, b},
                     [op, a, b, plan](const TensorImpl& o, const GradSink& sink) {
                       double* ga = sink.grad(0);
                       double* gb = sink.grad(1);
                       auto x = a.data();
                       auto y = b.data();
                       const auto& g = o.grad;
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t ia,
                                                    std::size_t ib) {
                         switch (op) {
                           case Binary::kAdd:
                             if (ga) ga[ia] += g[i];
                             if (gb) gb[ib] += g[i];
                             break;
                           case Binary::kSub:
                             if (ga) ga[ia] += g[i];
                             if (gb) gb[ib] -= g[i];
                             break;
                           case Binary::kMul:
                             if (ga) ga[ia] += g[i] * y[ib];
                             if (gb) gb[ib] += g[i] * x[ia];
                             break;
                         }
                       });
                     });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.rank(), b.rank());
  std::vector<std::size_t> dims(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.rank() ? 1 : a[i - (rank - a.rank())];
    std::size_t db = i < rank - b.rank() ? 1 : b[i - (rank - b.rank())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shape mismatch: cannot broadcast " + a.str() + " with " + b.str());
    }
    dims[i] = std::max(da, db);
  }
  return Shape(std::move(dims));
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::kMul, a, b); }

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return make_result("add_scalar", a.shape(), std::move(out), {a},
                     [](const TensorImpl& o, const GradSink& sink) {
                       double* g = sink.grad(0);
                       for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                     });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result("mul_scalar", a.shape(), std::move(out), {a},
                     [s](const TensorImpl& o, const GradSink& sink) {
                       double* g = sink.grad(0);
                       for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += s * o.grad[i];
                     });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::kAdd: return add(a, b);
    case ElementwiseOp::kSub: return sub(a, b);
    case ElementwiseOp::kMul: return mul(a, b);
    case ElementwiseOp::kScalarMul:
    case ElementwiseOp::kScalarAdd:
      if (b.numel() != 1) throw ShapeError("scalar op given non-scalar operand " + b.shape().str());
      return elementwise(op, a, b.item());
  }
  throw std::invalid_argument("unknown elementwise op");
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, double b) {
  switch (op) {
    case ElementwiseOp::kScalarMul: return mul_scalar(a, b);
    case ElementwiseOp::kScalarAdd: return add_scalar(a, b);
    case ElementwiseOp::kAdd: return add_scalar(a, b);
    case ElementwiseOp::kSub: return add_scalar(a, -b);
    case ElementwiseOp::kMul: return mul_scalar(a, b);
  }
  throw std::invalid_argument("unknown elementwise op");
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("maximum: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= y[i] ? x[i] : y[i];
  return make_result("maximum", a.shape(), std::move(out), {a, b},
                     [a, b](const TensorImpl& o, const GradSink& sink) {
                       auto x = a.data();
                       auto y = b.data();
                       double* ga = sink.grad(0);
                       double* gb = sink.grad(1);
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         if (x[i] >= y[i]) {
                           if (ga) ga[i] += o.grad[i];
                         } else if (gb) {
                           gb[i] += o.grad[i];
                         }
                       }
                     });
}

Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<std::size_t>& dims, bool keepdim) {
  const Shape& in = x.shape();
  std::vector<bool> reduced(in.rank(), false);
  for (auto d : dims) {
    if (d >= in.rank()) {
      throw ShapeError("invalid reduction axis " + std::to_string(d) + " for shape " + in.str());
    }
    reduced[d] = true;
  }
  std::vector<std::size_t> kept(in.rank());
  std::vector<std::size_t> out_dims;
  std::size_t group = 1;
  for (std::size_t i = 0; i < in.rank(); ++i) {
    kept[i] = reduced[i] ? 1 : in[i];
    if (reduced[i]) group *= in[i];
    if (!reduced[i] || keepdim) out_dims.push_back(kept[i]);
  }
  Shape keep_shape(kept);
  auto kstr = keep_shape.strides();
  // Map every input element to its output slot.
  std::vector<std::size_t> target(in.numel());
  {
    std::vector<std::size_t> idx(in.rank(), 0);
    for (std::size_t i = 0; i < target.size(); ++i) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < in.rank(); ++d) {
        if (!reduced[d]) o += idx[d] * kstr[d];
      }
      target[i] = o;
      for (std::size_t d = in.rank(); d-- > 0;) {
        if (++idx[d] < in[d]) break;
        idx[d] = 0;
      }
    }
  }
  const std::size_t n_out = keep_shape.numel();
  auto v = x.data();
  std::vector<double> out(n_out, 0.0);
  Shape out_shape{std::vector<std::size_t>(out_dims)};

  if (op == ReduceOp::kMax) {
    std::vector<std::size_t> argmax(n_out, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < target.size(); ++i) {
      auto t = target[i];
      if (argmax[t] == static_cast<std::size_t>(-1) || v[i] > out[t]) {
        out[t] = v[i];
        argmax[t] = i;
      }
    }
    return make_result("reduce_max", out_shape, std::move(out), {x},
                       [argmax = std::move(argmax)](const TensorImpl& o, const GradSink& sink) {
                         double* g = sink.grad(0);
                         for (std::size_t t = 0; t < argmax.size(); ++t) g[argmax[t]] += o.grad[t];
                       });
  }

  for (std::size_t i = 0; i < target.size(); ++i) out[target[i]] += v[i];
  const double scale = op == ReduceOp::kMean ? 1.0 / static_cast<double>(group) : 1.0;
  if (op == ReduceOp::kMean) {
    for (auto& o : out) o *= scale;
  }
  return make_result(op == ReduceOp::kMean ? "reduce_mean" : "reduce_sum", out_shape,
                     std::move(out), {x},
                     [target = std::move(target), scale](const TensorImpl& o,
                                                         const GradSink& sink) {
                       double* g = sink.grad(0);
                       for (std::size_t i = 0; i < target.size(); ++i) {
                         g[i] += scale * o.grad[target[i]];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> all(x.shape().rank());
  std::iota(all.begin(), all.end(), 0);
  return reduce(ReduceOp::kSum, x, all, false);
}

Tensor mean(const Tensor& x) {
  std::vector<std::size_t> all(x.shape().rank());
  std::iota(all.begin(), all.end(), 0);
  return reduce(ReduceOp::kMean, x, all, false);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.shape().rank() != 2 || weight.shape().rank() != 2 || bias.shape().rank() != 1 ||
      x.dim(1) != weight.dim(0) || bias.dim(0) != weight.dim(1)) {
    throw ShapeError("linear: shape mismatch x" + x.shape().str() + " w" +
                     weight.shape().str() + " b" + bias.shape().str());
  }
  const std::size_t n = x.dim(0);
  const std::size_t f = x.dim(1);
  const std::size_t k = weight.dim(1);
  std::vector<double> out(n * k);
  {
    CMatrixMap X(x.data().data(), n, f);
    CMatrixMap W(weight.data().data(), f, k);
    MatrixMap Y(out.data(), n, k);
    Y.noalias() = X * W;
    auto b = bias.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < k; ++c) out[r * k + c] += b[c];
    }
  }
  return make_result("linear", Shape{n, k}, std::move(out), {x, weight, bias},
                     [x, weight, n, f, k](const TensorImpl& o, const GradSink& sink) {
                       CMatrixMap G(o.grad.data(), n, k);
                       if (double* gx = sink.grad(0)) {
                         MatrixMap GX(gx, n, f);
                         GX.noalias() += G * CMatrixMap(weight.data().data(), f, k).transpose();
                       }
                       if (double* gw = sink.grad(1)) {
                         MatrixMap GW(gw, f, k);
                         GW.noalias() += CMatrixMap(x.data().data(), n, f).transpose() * G;
                       }
                       if (double* gb = sink.grad(2)) {
                         for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t c = 0; c < k; ++c) gb[c] += o.grad[r * k + c];
                         }
                       }
                     });
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logistic(v[i]);
  return make_result("sigmoid", x.shape(), std::move(out), {x},
                     [](const TensorImpl& o, const GradSink& sink) {
                       double* g = sink.grad(0);
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         const double s = o.data[i];
                         g[i] += o.grad[i] * s * (1.0 - s);
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return make_result("relu", x.shape(), std::move(out), {x},
                     [x](const TensorImpl& o, const GradSink& sink) {
                       double* g = sink.grad(0);
                       auto v = x.data();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         if (v[i] > 0.0) g[i] += o.grad[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t dim) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (dim >= first.rank()) throw ShapeError("concat axis out of range for " + first.str());
  std::vector<std::size_t> dims = first.dims();
  dims[dim] = 0;
  for (const auto& p : parts) {
    if (p.shape().rank() != first.rank()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < first.rank(); ++i) {
      if (i != dim && p.shape()[i] != first[i]) {
        throw ShapeError("concat shape mismatch " + first.str() + " vs " + p.shape().str());
      }
    }
    dims[dim] += p.shape()[dim];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < dim; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = dim + 1; i < first.rank(); ++i) inner *= first[i];
  Shape out_shape(dims);
  std::vector<double> out(out_shape.numel());
  const std::size_t row = dims[dim] * inner;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.shape()[dim] * inner;
    auto src = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk, out.begin() + o * row + off);
    }
    off += chunk;
  }
  std::vector<std::size_t> chunks;
  for (const auto& p : parts) chunks.push_back(p.shape()[dim] * inner);
  return make_result("concat", out_shape, std::move(out), parts,
                     [offsets, chunks, outer, row](const TensorImpl& o, const GradSink& sink) {
                       for (std::size_t k = 0; k < chunks.size(); ++k) {
                         double* g = sink.grad(k);
                         if (!g) continue;
                         for (std::size_t r = 0; r < outer; ++r) {
                           const double* src = o.grad.data() + r * row + offsets[k];
                           for (std::size_t i = 0; i < chunks[k]; ++i) g[r * chunks[k] + i] += src[i];
                         }
                       }
                     });
}

Tensor flatten(const Tensor& x) {
  const std::size_t lead = x.shape().rank() == 0 ? 1 : x.dim(0);
  return x.reshape(Shape{lead, x.numel() / lead});
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  std::vector<std::size_t> dims{items.size()};
  for (auto d : items.front().shape().dims()) dims.push_back(d);
  std::vector<double> out;
  out.reserve(items.size() * items.front().numel());
  for (const auto& t : items) {
    if (t.shape() != items.front().shape()) {
      throw ShapeError("stack shape mismatch " + items.front().shape().str() + " vs " +
                       t.shape().str());
    }
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor(Shape(dims), std::move(out));
}

}  // namespace cs3d
