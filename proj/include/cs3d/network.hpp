#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cs3d/attention.hpp"
#include "cs3d/conv.hpp"
#include "cs3d/serialize.hpp"

namespace cs3d {

enum class LayerKind { kFactorizedBlock, kDenseConv, kMultiPool, kMaxPool, kAttention, kFlatten, kLinear };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// Declarative description of one layer. Only the fields relevant to `kind`
/// are read; the rest keep their defaults.
struct LayerSpec {
  LayerKind kind = LayerKind::kFlatten;
  std::string name;

  // factorized_block, dense_conv
  std::size_t out_channels = 0;
  Extent3 kernel{3, 3, 3};  // dense_conv only; same-padded
  std::optional<ActivationKind> activation;
  std::optional<SsnParams> ssn;

  // maxpool, multi_pool
  Extent3 window{1, 2, 2};
  Extent3 stride{1, 2, 2};
  MultiPoolKind pool_kind = MultiPoolKind::kMaxAvg;

  // attention
  bool temporal = true;
  bool spatial = true;
  std::size_t reduction = 2;
  std::size_t temporal_kernel = 3;
  Extent3 spatial_kernel{1, 7, 7};
  GateActivation phi = GateActivation::kRelu;

  // linear: 0 means class_count; hidden layers apply the activation
  std::size_t features = 0;
  bool hidden = false;
};

struct ModelConfig {
  std::string name = "cs3d";
  std::array<std::size_t, 4> input_shape{2, 16, 112, 112};  // C, T, H, W
  std::size_t class_count = 4;
  std::vector<LayerSpec> layers;
  ActivationKind activation = ActivationKind::kSsn;
  SsnParams ssn_defaults{};
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  Shape input(std::size_t batch) const;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Factorized blocks 64-128-256-256 with pooling, Multi-Pool, joint
/// attention and a linear classifier.
ModelConfig default_cs3d_config();
/// Five dense 3x3x3 conv stages 64-128-256-256-256, pooling after each,
/// two linear layers (2048 hidden).
ModelConfig default_c3d_config();

struct AblationFlags {
  bool no_ssn = false;
  bool no_factorized = false;
  bool no_temporal_attn = false;
  bool no_spatial_attn = false;
};

/// Applies removal flags to a configuration: rectifier instead of SSN,
/// dense 3x3x3 conv instead of factorized blocks, attention branches off.
ModelConfig apply_ablation(ModelConfig cfg, const AblationFlags& flags);

struct Variant {
  std::string label;
  ModelConfig config;
};

/// The five comparison rows: C3D, C3D+SSN, C3D+FactorizedConv3D,
/// C3D+attention, CS3D, all sharing input shape and class count.
std::vector<Variant> ablation_variants(const std::array<std::size_t, 4>& input_shape,
                                       std::size_t class_count, std::uint64_t seed);

/// One analytic cost row of a layer or sub-operation.
struct LayerCost {
  std::string name;
  std::string kind;
  Shape out_shape;
  std::size_t params = 0;
  std::size_t flops = 0;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  /// Appends analytic cost rows for input shape `in`.
  virtual void describe(const Shape& in, std::vector<LayerCost>& rows) const = 0;
  /// Trainable tensors and buffers, names relative to the layer.
  virtual void collect(std::vector<NamedTensor>& out) const = 0;
  /// Batch-norm states owned by the layer, if any.
  virtual void batchnorms(std::vector<BatchNormState*>&) {}

  LayerKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

 protected:
  Layer(LayerKind kind, std::string name) : kind_(kind), name_(std::move(name)) {}

 private:
  LayerKind kind_;
  std::string name_;
};

class Model {
 public:
  Model(ModelConfig cfg, std::vector<std::unique_ptr<Layer>> layers);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Logits [B, class_count]. Records the tape when grad mode is on.
  Tensor forward(const Tensor& batch, Mode mode);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

  /// Trainable tensors under unique dotted paths, in layer order.
  std::vector<NamedTensor> parameters() const;
  /// Parameters plus buffers (batch-norm running statistics).
  std::vector<NamedTensor> state() const;
  std::size_t parameter_count() const;
  std::vector<BatchNormState*> batchnorms();

  void save(const std::filesystem::path& path) const;
  /// Copies checkpoint values into this model; names and shapes must match.
  void load(const std::filesystem::path& path);
  void load_state(const std::vector<NamedTensor>& entries);

 private:
  ModelConfig cfg_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

Model build_model(const ModelConfig& cfg);
Model build_cs3d(const ModelConfig& cfg = default_cs3d_config());
Model build_c3d(const ModelConfig& cfg = default_c3d_config());

// Config files are JSON documents with one object per section.
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);
ModelConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace cs3d
