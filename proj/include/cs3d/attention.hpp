#pragma once

#include "cs3d/conv.hpp"

namespace cs3d {

/// Nonlinearity between the two shared temporal convolutions.
enum class GateActivation { kRelu, kIdentity };

/// Squeeze over (H, W), then two 1-D convolutions over T shared by the
/// average and max branches: C -> C/r -> C.
struct TemporalAttentionParams {
  ConvParams conv1;  // [C/r, C, k, 1, 1]
  ConvParams conv2;  // [C, C/r, k, 1, 1]
  GateActivation phi = GateActivation::kRelu;

  std::size_t channels() const { return conv2.weight.dim(0); }
  std::size_t kernel_t() const { return conv1.weight.dim(2); }
};

/// Channel mean and max maps -> one conv (2 -> 1 channel) -> sigmoid gate.
struct SpatialAttentionParams {
  ConvParams conv;  // [1, 2, kt, kh, kw], same-padded
};

struct TemporalGates {
  Tensor s_avg;  // sigma(conv2(phi(conv1(z_avg)))), [B, C, T, 1, 1]
  Tensor s_max;  // same network on z_max
  Tensor gate;   // elementwise max, ties to s_avg
};

TemporalGates temporal_gates(const Tensor& x, const TemporalAttentionParams& p);

/// X * S + X with S the fused temporal gate broadcast over (H, W).
Tensor temporal_attention(const Tensor& x, const TemporalAttentionParams& p);

/// The [B, 1, T, H, W] gate of the spatial branch.
Tensor spatial_gate(const Tensor& x, const SpatialAttentionParams& p);

/// attn * X + X with attn broadcast over channels.
Tensor spatial_attention(const Tensor& x, const SpatialAttentionParams& p);

/// Y = SA(TA(X)) + X. Disabling one branch replaces it by the identity
/// map inside the composition.
Tensor joint_attention(const Tensor& x, const TemporalAttentionParams& tp,
                       const SpatialAttentionParams& sp, bool use_temporal = true,
                       bool use_spatial = true);

}  // namespace cs3d
