#pragma once

#include <vector>

#include "cs3d/tensor.hpp"

namespace cs3d {

// Elementwise binary ops broadcast numpy-style: extents are right-aligned
// and must be equal or 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

enum class ElementwiseOp { kAdd, kSub, kMul, kScalarMul, kScalarAdd };
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseOp op, const Tensor& a, double b);

Shape broadcast_shape(const Shape& a, const Shape& b);

/// Elementwise max; gradient goes to `a` on ties.
Tensor maximum(const Tensor& a, const Tensor& b);

enum class ReduceOp { kSum, kMean, kMax };

/// Reduces over `dims`. Max routes its gradient to the lowest flat index
/// among tied maxima.
Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<std::size_t>& dims,
              bool keepdim);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// y[n,k] = sum_f x[n,f] w[f,k] + b[k].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

/// Concatenates along `dim`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t dim);

/// Collapses everything after the leading dimension.
Tensor flatten(const Tensor& x);

/// Stacks equally shaped tensors along a new leading axis (no gradient).
Tensor stack(const std::vector<Tensor>& items);

double logistic(double z);

}  // namespace cs3d
