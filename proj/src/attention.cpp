#include "cs3d/attention.hpp"

#include "cs3d/ops.hpp"

namespace cs3d {

namespace {

void require_rank5(const Tensor& x, const char* op) {
  if (x.shape().rank() != 5) {
    throw ShapeError(std::string(op) + ": expected rank-5 input, got " + x.shape().str());
  }
}

Tensor gate_branch(const Tensor& z, const TemporalAttentionParams& p) {
  const Extent3 k1 = p.conv1.kernel();
  const Extent3 k2 = p.conv2.kernel();
  Tensor h = dense_conv3d(z, p.conv1, k1);
  if (p.phi == GateActivation::kRelu) h = relu(h);
  return sigmoid(dense_conv3d(h, p.conv2, k2));
}

}  // namespace

TemporalGates temporal_gates(const Tensor& x, const TemporalAttentionParams& p) {
  require_rank5(x, "temporal_attention");
  if (x.dim(1) != p.channels() || p.conv1.weight.dim(1) != x.dim(1)) {
    throw ShapeError("temporal_attention: input has " + std::to_string(x.dim(1)) +
                     " channels, parameters expect " + std::to_string(p.channels()));
  }
  Tensor z_avg = reduce(ReduceOp::kMean, x, {3, 4}, true);
  Tensor z_max = reduce(ReduceOp::kMax, x, {3, 4}, true);
  TemporalGates g;
  g.s_avg = gate_branch(z_avg, p);
  g.s_max = gate_branch(z_max, p);
  g.gate = maximum(g.s_avg, g.s_max);
  return g;
}

Tensor temporal_attention(const Tensor& x, const TemporalAttentionParams& p) {
  Tensor s = temporal_gates(x, p).gate;
  return add(mul(x, s), x);
}

Tensor spatial_gate(const Tensor& x, const SpatialAttentionParams& p) {
  require_rank5(x, "spatial_attention");
  if (p.conv.weight.dim(0) != 1 || p.conv.weight.dim(1) != 2) {
    throw ShapeError("spatial_attention: conv weight must be [1,2,kt,kh,kw], got " +
                     p.conv.weight.shape().str());
  }
  Tensor avg_out = reduce(ReduceOp::kMean, x, {1}, true);
  Tensor max_out = reduce(ReduceOp::kMax, x, {1}, true);
  Tensor pooled = concat({avg_out, max_out}, 1);
  return sigmoid(dense_conv3d(pooled, p.conv, p.conv.kernel()));
}

Tensor spatial_attention(const Tensor& x, const SpatialAttentionParams& p) {
  Tensor attn = spatial_gate(x, p);
  return add(mul(attn, x), x);
}

Tensor joint_attention(const Tensor& x, const TemporalAttentionParams& tp,
                       const SpatialAttentionParams& sp, bool use_temporal, bool use_spatial) {
  require_rank5(x, "joint_attention");
  Tensor y = use_temporal ? temporal_attention(x, tp) : x;
  if (use_spatial) y = spatial_attention(y, sp);
  return add(y, x);
}

}  // namespace cs3d
