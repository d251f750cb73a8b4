#pragma once

#include <array>
#include <string>

#include "cs3d/ssn.hpp"
#include "cs3d/tensor.hpp"

namespace cs3d {

/// (t, h, w) triple used for kernels, strides, paddings and pool windows.
struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t volume() const { return t * h * w; }
  bool operator==(const Extent3&) const = default;
  std::string str() const;
};

/// floor((extent + 2*pad - kernel) / stride) + 1, throwing when the kernel
/// does not fit the padded input.
std::size_t conv_out_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                            std::size_t pad, const char* what);
Shape conv_out_shape(const Shape& in, std::size_t out_channels, const Extent3& kernel,
                     const Extent3& stride, const Extent3& padding);

struct ConvParams {
  Tensor weight;  // [C_out, C_in or 1, kt, kh, kw]
  Tensor bias;    // [C_out]; undefined when absent
  Extent3 stride{};
  Extent3 padding{};

  bool has_bias() const { return bias.defined(); }
  Extent3 kernel() const { return {weight.dim(2), weight.dim(3), weight.dim(4)}; }
  std::size_t out_channels() const { return weight.dim(0); }
};

// All convolutions use the correlation convention (kernel not flipped).

/// One filter per channel: weight [C, 1, kt, kh, kw].
Tensor dwconv3d(const Tensor& x, const ConvParams& p, const Extent3& kernel);
/// Channel mixing per voxel: weight [C_out, C_in, 1, 1, 1].
Tensor pwconv3d(const Tensor& x, const ConvParams& p);
/// Full cross-channel 3D correlation: weight [C_out, C_in, kt, kh, kw].
Tensor dense_conv3d(const Tensor& x, const ConvParams& p, const Extent3& kernel);

enum class Mode { kTrain, kEval };

struct BatchNormState {
  Tensor gamma;  // scale
  Tensor delta;  // shift
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormState identity(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
};

/// Per-channel normalization over (B, T, H, W). Train mode uses batch
/// statistics and updates the running statistics (running_var takes the
/// unbiased estimate); eval mode uses the running statistics.
Tensor batchnorm3d(const Tensor& x, BatchNormState& s, Mode mode);

Tensor maxpool3d(const Tensor& x, const Extent3& window, const Extent3& stride);
Tensor avgpool3d(const Tensor& x, const Extent3& window, const Extent3& stride);

enum class MultiPoolKind { kMaxAvg, kMaxOnly };

/// Max and average pooling over the same window, concatenated along
/// channels (max first). kMaxOnly degenerates to maxpool3d.
Tensor multi_pool(const Tensor& x, const Extent3& window, const Extent3& stride,
                  MultiPoolKind kind = MultiPoolKind::kMaxAvg);

enum class ActivationKind { kSsn, kRelu };

struct Activation {
  ActivationKind kind = ActivationKind::kSsn;
  SsnParams ssn{};
};

Tensor activate(const Tensor& x, const Activation& a);

/// Temporal DW(3x1x1) -> PW -> BN -> act -> spatial DW(1x3x3) -> PW -> BN
/// -> act, plus a residual that is identity or a 1x1x1 projection when the
/// channel count changes.
struct FactorizedBlock {
  ConvParams dw_temporal;
  ConvParams pw1;
  BatchNormState bn1;
  Activation act1;
  ConvParams dw_spatial;
  ConvParams pw2;
  BatchNormState bn2;
  Activation act2;
  ConvParams residual_projection;  // weight undefined when identity

  std::size_t in_channels() const { return dw_temporal.weight.dim(0); }
  std::size_t out_channels() const { return pw2.weight.dim(0); }
  bool has_projection() const { return residual_projection.weight.defined(); }
};

inline constexpr Extent3 kTemporalKernel{3, 1, 1};
inline constexpr Extent3 kSpatialKernel{1, 3, 3};

Tensor factorized_block(const Tensor& x, FactorizedBlock& b, Mode mode);

}  // namespace cs3d
