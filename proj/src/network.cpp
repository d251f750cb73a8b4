#include "cs3d/network.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cs3d/ops.hpp"
#include "cs3d/random.hpp"

namespace cs3d {

using json = nlohmann::json;

namespace {

constexpr struct {
  LayerKind kind;
  const char* name;
} kKindNames[] = {
    {LayerKind::kFactorizedBlock, "factorized_block"},
    {LayerKind::kDenseConv, "dense_conv"},
    {LayerKind::kMultiPool, "multi_pool"},
    {LayerKind::kMaxPool, "maxpool"},
    {LayerKind::kAttention, "attention"},
    {LayerKind::kFlatten, "flatten"},
    {LayerKind::kLinear, "linear"},
};

Extent3 same_padding(const Extent3& k) { return {k.t / 2, k.h / 2, k.w / 2}; }

std::size_t elems(const Shape& s) { return s.numel(); }

Tensor uniform_tensor(const Shape& shape, double bound, Rng& rng) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(v), true);
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual framework default.
Tensor init_weight(const Shape& shape, std::size_t fan_in, Rng& rng) {
  return uniform_tensor(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

ConvParams make_conv(std::size_t c_out, std::size_t c_in_per_filter, const Extent3& k, bool bias,
                     Rng& rng) {
  ConvParams p;
  p.weight = init_weight(Shape{c_out, c_in_per_filter, k.t, k.h, k.w}, c_in_per_filter * k.volume(),
                         rng);
  if (bias) p.bias = Tensor::zeros(Shape{c_out}, true);
  p.padding = same_padding(k);
  return p;
}

std::size_t conv_params(const ConvParams& p) {
  return p.weight.numel() + (p.has_bias() ? p.bias.numel() : 0);
}

Activation resolve_activation(const LayerSpec& spec, const ModelConfig& cfg) {
  Activation a;
  a.kind = spec.activation.value_or(cfg.activation);
  a.ssn = spec.ssn.value_or(cfg.ssn_defaults);
  return a;
}

// Adds a conv cost row: MACs plus one add per output element for the bias.
void conv_row(std::vector<LayerCost>& rows, const std::string& name, const char* kind,
              const Shape& out, std::size_t macs_per_out, const ConvParams& p) {
  const std::size_t n = elems(out);
  rows.push_back({name, kind, out, conv_params(p), n * macs_per_out + (p.has_bias() ? n : 0)});
}

void elementwise_row(std::vector<LayerCost>& rows, const std::string& name, const char* kind,
                     const Shape& out, std::size_t params = 0) {
  rows.push_back({name, kind, out, params, elems(out)});
}

const char* activation_kind(const Activation& a) {
  return a.kind == ActivationKind::kSsn ? "ssn" : "relu";
}

// ---- layers -----------------------------------------------------------------

class FactorizedBlockLayer final : public Layer {
 public:
  FactorizedBlockLayer(std::string name, std::size_t c_in, std::size_t c_out, Activation act,
                       Rng& rng)
      : Layer(LayerKind::kFactorizedBlock, std::move(name)) {
    b_.dw_temporal = make_conv(c_in, 1, kTemporalKernel, false, rng);
    b_.pw1 = make_conv(c_out, c_in, {1, 1, 1}, false, rng);
    b_.bn1 = BatchNormState::identity(c_out);
    b_.act1 = act;
    b_.dw_spatial = make_conv(c_out, 1, kSpatialKernel, false, rng);
    b_.pw2 = make_conv(c_out, c_out, {1, 1, 1}, false, rng);
    b_.bn2 = BatchNormState::identity(c_out);
    b_.act2 = act;
    if (c_in != c_out) b_.residual_projection = make_conv(c_out, c_in, {1, 1, 1}, false, rng);
  }

  Tensor forward(const Tensor& x, Mode mode) override { return factorized_block(x, b_, mode); }

  Shape output_shape(const Shape& in) const override {
    return Shape{in[0], b_.out_channels(), in[2], in[3], in[4]};
  }

  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    const Shape mid_in = in;
    const Shape out = output_shape(in);
    const std::string& n = name();
    conv_row(rows, n + ".dw_temporal", "dwconv3d", mid_in, kTemporalKernel.volume(), b_.dw_temporal);
    conv_row(rows, n + ".pw1", "pwconv3d", out, b_.in_channels(), b_.pw1);
    elementwise_row(rows, n + ".bn1", "batchnorm3d", out, 2 * b_.out_channels());
    elementwise_row(rows, n + ".act1", activation_kind(b_.act1), out);
    conv_row(rows, n + ".dw_spatial", "dwconv3d", out, kSpatialKernel.volume(), b_.dw_spatial);
    conv_row(rows, n + ".pw2", "pwconv3d", out, b_.out_channels(), b_.pw2);
    elementwise_row(rows, n + ".bn2", "batchnorm3d", out, 2 * b_.out_channels());
    elementwise_row(rows, n + ".act2", activation_kind(b_.act2), out);
    if (b_.has_projection()) {
      conv_row(rows, n + ".residual_projection", "pwconv3d", out, b_.in_channels(),
               b_.residual_projection);
    }
    elementwise_row(rows, n + ".residual_add", "add", out);
  }

  void collect(std::vector<NamedTensor>& out) const override {
    const std::string& n = name();
    out.push_back({n + ".dw_temporal.weight", EntryKind::kParameter, b_.dw_temporal.weight});
    out.push_back({n + ".pw1.weight", EntryKind::kParameter, b_.pw1.weight});
    out.push_back({n + ".bn1.gamma", EntryKind::kParameter, b_.bn1.gamma});
    out.push_back({n + ".bn1.delta", EntryKind::kParameter, b_.bn1.delta});
    out.push_back({n + ".bn1.running_mean", EntryKind::kBuffer, b_.bn1.running_mean});
    out.push_back({n + ".bn1.running_var", EntryKind::kBuffer, b_.bn1.running_var});
    out.push_back({n + ".dw_spatial.weight", EntryKind::kParameter, b_.dw_spatial.weight});
    out.push_back({n + ".pw2.weight", EntryKind::kParameter, b_.pw2.weight});
    out.push_back({n + ".bn2.gamma", EntryKind::kParameter, b_.bn2.gamma});
    out.push_back({n + ".bn2.delta", EntryKind::kParameter, b_.bn2.delta});
    out.push_back({n + ".bn2.running_mean", EntryKind::kBuffer, b_.bn2.running_mean});
    out.push_back({n + ".bn2.running_var", EntryKind::kBuffer, b_.bn2.running_var});
    if (b_.has_projection()) {
      out.push_back({n + ".residual_projection.weight", EntryKind::kParameter,
                     b_.residual_projection.weight});
    }
  }

  void batchnorms(std::vector<BatchNormState*>& out) override {
    out.push_back(&b_.bn1);
    out.push_back(&b_.bn2);
  }

 private:
  FactorizedBlock b_;
};

class DenseConvLayer final : public Layer {
 public:
  DenseConvLayer(std::string name, std::size_t c_in, std::size_t c_out, const Extent3& kernel,
                 Activation act, Rng& rng)
      : Layer(LayerKind::kDenseConv, std::move(name)), kernel_(kernel), act_(act) {
    conv_ = make_conv(c_out, c_in, kernel, true, rng);
  }

  Tensor forward(const Tensor& x, Mode) override {
    return activate(dense_conv3d(x, conv_, kernel_), act_);
  }

  Shape output_shape(const Shape& in) const override {
    return conv_out_shape(in, conv_.out_channels(), kernel_, conv_.stride, conv_.padding);
  }

  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    const Shape out = output_shape(in);
    conv_row(rows, name() + ".conv", "dense_conv3d", out, in[1] * kernel_.volume(), conv_);
    elementwise_row(rows, name() + ".act", activation_kind(act_), out);
  }

  void collect(std::vector<NamedTensor>& out) const override {
    out.push_back({name() + ".weight", EntryKind::kParameter, conv_.weight});
    out.push_back({name() + ".bias", EntryKind::kParameter, conv_.bias});
  }

 private:
  Extent3 kernel_;
  Activation act_;
  ConvParams conv_;
};

Shape pool_shape(const Shape& in, std::size_t channels, const Extent3& window,
                 const Extent3& stride) {
  if (in.rank() != 5) throw ShapeError("pooling needs rank-5 input, got " + in.str());
  if (window.t > in[2] || window.h > in[3] || window.w > in[4]) {
    throw ShapeError("pool window " + window.str() + " exceeds input " + in.str());
  }
  return Shape{in[0], channels, conv_out_extent(in[2], window.t, stride.t, 0, "pool"),
               conv_out_extent(in[3], window.h, stride.h, 0, "pool"),
               conv_out_extent(in[4], window.w, stride.w, 0, "pool")};
}

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::string name, Extent3 window, Extent3 stride)
      : Layer(LayerKind::kMaxPool, std::move(name)), window_(window), stride_(stride) {}

  Tensor forward(const Tensor& x, Mode) override { return maxpool3d(x, window_, stride_); }
  Shape output_shape(const Shape& in) const override {
    return pool_shape(in, in[1], window_, stride_);
  }
  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    elementwise_row(rows, name(), "maxpool3d", output_shape(in));
  }
  void collect(std::vector<NamedTensor>&) const override {}

 private:
  Extent3 window_;
  Extent3 stride_;
};

class MultiPoolLayer final : public Layer {
 public:
  MultiPoolLayer(std::string name, Extent3 window, Extent3 stride, MultiPoolKind kind)
      : Layer(LayerKind::kMultiPool, std::move(name)), window_(window), stride_(stride),
        pool_kind_(kind) {}

  Tensor forward(const Tensor& x, Mode) override {
    return multi_pool(x, window_, stride_, pool_kind_);
  }
  Shape output_shape(const Shape& in) const override {
    const std::size_t c = pool_kind_ == MultiPoolKind::kMaxAvg ? 2 * in[1] : in[1];
    return pool_shape(in, c, window_, stride_);
  }
  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    const Shape branch = pool_shape(in, in[1], window_, stride_);
    elementwise_row(rows, name() + ".max", "maxpool3d", branch);
    if (pool_kind_ == MultiPoolKind::kMaxAvg) {
      elementwise_row(rows, name() + ".avg", "avgpool3d", branch);
    }
  }
  void collect(std::vector<NamedTensor>&) const override {}

 private:
  Extent3 window_;
  Extent3 stride_;
  MultiPoolKind pool_kind_;
};

class AttentionLayer final : public Layer {
 public:
  AttentionLayer(std::string name, std::size_t channels, const LayerSpec& spec, Rng& rng)
      : Layer(LayerKind::kAttention, std::move(name)),
        use_temporal_(spec.temporal),
        use_spatial_(spec.spatial) {
    const std::size_t reduced = channels / spec.reduction;
    const Extent3 kt{spec.temporal_kernel, 1, 1};
    if (use_temporal_) {
      temporal_.conv1 = make_conv(reduced, channels, kt, true, rng);
      temporal_.conv2 = make_conv(channels, reduced, kt, true, rng);
      temporal_.phi = spec.phi;
    }
    if (use_spatial_) spatial_.conv = make_conv(1, 2, spec.spatial_kernel, true, rng);
  }

  Tensor forward(const Tensor& x, Mode) override {
    return joint_attention(x, temporal_, spatial_, use_temporal_, use_spatial_);
  }
  Shape output_shape(const Shape& in) const override { return in; }

  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    const std::string& n = name();
    const std::size_t b = in[0];
    const std::size_t c = in[1];
    const std::size_t t = in[2];
    if (use_temporal_) {
      const Shape squeezed{b, c, t, 1, 1};
      const std::size_t reduced = temporal_.conv1.out_channels();
      const std::size_t k = temporal_.kernel_t();
      const Shape hidden{b, reduced, t, 1, 1};
      elementwise_row(rows, n + ".temporal.avg_pool", "reduce_mean", squeezed);
      elementwise_row(rows, n + ".temporal.max_pool", "reduce_max", squeezed);
      // Shared weights are counted once in params, twice in FLOPs.
      LayerCost conv1{n + ".temporal.conv1", "dense_conv3d", hidden, conv_params(temporal_.conv1),
                      2 * (elems(hidden) * c * k + elems(hidden))};
      rows.push_back(conv1);
      if (temporal_.phi == GateActivation::kRelu) {
        rows.push_back({n + ".temporal.phi", "relu", hidden, 0, 2 * elems(hidden)});
      }
      rows.push_back({n + ".temporal.conv2", "dense_conv3d", squeezed,
                      conv_params(temporal_.conv2), 2 * (elems(squeezed) * reduced * k + elems(squeezed))});
      rows.push_back({n + ".temporal.sigmoid", "sigmoid", squeezed, 0, 2 * elems(squeezed)});
      elementwise_row(rows, n + ".temporal.gate_max", "maximum", squeezed);
      elementwise_row(rows, n + ".temporal.scale", "mul", in);
      elementwise_row(rows, n + ".temporal.residual_add", "add", in);
    }
    if (use_spatial_) {
      const Shape map{b, 1, in[2], in[3], in[4]};
      elementwise_row(rows, n + ".spatial.avg_pool", "reduce_mean", map);
      elementwise_row(rows, n + ".spatial.max_pool", "reduce_max", map);
      conv_row(rows, n + ".spatial.conv", "dense_conv3d", map, 2 * spatial_.conv.kernel().volume(),
               spatial_.conv);
      elementwise_row(rows, n + ".spatial.sigmoid", "sigmoid", map);
      elementwise_row(rows, n + ".spatial.scale", "mul", in);
      elementwise_row(rows, n + ".spatial.residual_add", "add", in);
    }
    elementwise_row(rows, n + ".joint_residual_add", "add", in);
  }

  void collect(std::vector<NamedTensor>& out) const override {
    const std::string& n = name();
    if (use_temporal_) {
      out.push_back({n + ".temporal.conv1.weight", EntryKind::kParameter, temporal_.conv1.weight});
      out.push_back({n + ".temporal.conv1.bias", EntryKind::kParameter, temporal_.conv1.bias});
      out.push_back({n + ".temporal.conv2.weight", EntryKind::kParameter, temporal_.conv2.weight});
      out.push_back({n + ".temporal.conv2.bias", EntryKind::kParameter, temporal_.conv2.bias});
    }
    if (use_spatial_) {
      out.push_back({n + ".spatial.conv.weight", EntryKind::kParameter, spatial_.conv.weight});
      out.push_back({n + ".spatial.conv.bias", EntryKind::kParameter, spatial_.conv.bias});
    }
  }

 private:
  bool use_temporal_;
  bool use_spatial_;
  TemporalAttentionParams temporal_;
  SpatialAttentionParams spatial_;
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(std::string name) : Layer(LayerKind::kFlatten, std::move(name)) {}
  Tensor forward(const Tensor& x, Mode) override { return flatten(x); }
  Shape output_shape(const Shape& in) const override { return Shape{in[0], in.numel() / in[0]}; }
  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    rows.push_back({name(), "flatten", output_shape(in), 0, 0});
  }
  void collect(std::vector<NamedTensor>&) const override {}
};

class LinearLayer final : public Layer {
 public:
  LinearLayer(std::string name, std::size_t f, std::size_t k, bool hidden, Activation act, Rng& rng)
      : Layer(LayerKind::kLinear, std::move(name)), hidden_(hidden), act_(act) {
    weight_ = init_weight(Shape{f, k}, f, rng);
    bias_ = Tensor::zeros(Shape{k}, true);
  }

  Tensor forward(const Tensor& x, Mode) override {
    Tensor y = linear(x, weight_, bias_);
    return hidden_ ? activate(y, act_) : y;
  }
  Shape output_shape(const Shape& in) const override {
    if (in.rank() != 2 || in[1] != weight_.dim(0)) {
      throw ShapeError("linear expects [N," + std::to_string(weight_.dim(0)) + "], got " + in.str());
    }
    return Shape{in[0], weight_.dim(1)};
  }
  void describe(const Shape& in, std::vector<LayerCost>& rows) const override {
    const Shape out = output_shape(in);
    rows.push_back({name(), "linear", out, weight_.numel() + bias_.numel(),
                    in[0] * in[1] * out[1] + elems(out)});
    if (hidden_) elementwise_row(rows, name() + ".act", activation_kind(act_), out);
  }
  void collect(std::vector<NamedTensor>& out) const override {
    out.push_back({name() + ".weight", EntryKind::kParameter, weight_});
    out.push_back({name() + ".bias", EntryKind::kParameter, bias_});
  }

 private:
  bool hidden_;
  Activation act_;
  Tensor weight_;
  Tensor bias_;
};

// Symbolic shape step shared by validation and building.
Shape spec_output_shape(const LayerSpec& spec, const Shape& in, const ModelConfig& cfg) {
  const bool spatial_input = in.rank() == 5;
  switch (spec.kind) {
    case LayerKind::kFactorizedBlock:
    case LayerKind::kDenseConv:
      if (!spatial_input) throw ConfigError("convolution after flatten");
      if (spec.out_channels == 0) throw ConfigError("out_channels must be > 0");
      if (spec.kind == LayerKind::kDenseConv) {
        return conv_out_shape(in, spec.out_channels, spec.kernel, {1, 1, 1},
                              same_padding(spec.kernel));
      }
      return Shape{in[0], spec.out_channels, in[2], in[3], in[4]};
    case LayerKind::kMaxPool:
    case LayerKind::kMultiPool: {
      if (!spatial_input) throw ConfigError("pooling after flatten");
      const bool doubled =
          spec.kind == LayerKind::kMultiPool && spec.pool_kind == MultiPoolKind::kMaxAvg;
      return pool_shape(in, doubled ? 2 * in[1] : in[1], spec.window, spec.stride);
    }
    case LayerKind::kAttention:
      if (!spatial_input) throw ConfigError("attention after flatten");
      if (spec.reduction == 0 || in[1] % spec.reduction != 0) {
        throw ConfigError("attention reduction " + std::to_string(spec.reduction) +
                          " must divide channel count " + std::to_string(in[1]));
      }
      if (spec.temporal_kernel % 2 == 0 || spec.spatial_kernel.t % 2 == 0 ||
          spec.spatial_kernel.h % 2 == 0 || spec.spatial_kernel.w % 2 == 0) {
        throw ConfigError("attention kernels must have odd extents for same padding");
      }
      return in;
    case LayerKind::kFlatten:
      if (!spatial_input) throw ConfigError("flatten applied twice");
      return Shape{in[0], in.numel() / in[0]};
    case LayerKind::kLinear:
      if (spatial_input) throw ConfigError("linear layer before flatten");
      return Shape{in[0], spec.features == 0 ? cfg.class_count : spec.features};
  }
  throw ConfigError("unknown layer kind");
}

std::string auto_name(const LayerSpec& spec, std::size_t index) {
  if (!spec.name.empty()) return spec.name;
  return std::string(to_string(spec.kind)) + std::to_string(index);
}

}  // namespace

const char* to_string(LayerKind kind) {
  for (const auto& e : kKindNames) {
    if (e.kind == kind) return e.name;
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (const auto& e : kKindNames) {
    if (s == e.name) return e.kind;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (class_count < 2) throw ConfigError("class_count must be >= 2");
  for (auto d : input_shape) {
    if (d == 0) throw ConfigError("input_shape extents must be >= 1");
  }
  if (layers.empty()) throw ConfigError("model has no layers");
  ssn_defaults.validate();
  std::set<std::string> names;
  Shape s = input(1);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& spec = layers[i];
    const std::string n = auto_name(spec, i);
    if (!names.insert(n).second) throw ConfigError("duplicate layer name '" + n + "'");
    if (spec.ssn) spec.ssn->validate();
    try {
      s = spec_output_shape(spec, s, *this);
    } catch (const ShapeError& e) {
      throw ConfigError("layer '" + n + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("layer '" + n + "': " + e.what());
    }
  }
  if (s.rank() != 2 || s[1] != class_count) {
    throw ConfigError("final layer must produce [B," + std::to_string(class_count) +
                      "] logits, got " + s.str());
  }
}

Shape ModelConfig::input(std::size_t batch) const {
  return Shape{batch, input_shape[0], input_shape[1], input_shape[2], input_shape[3]};
}

namespace {

LayerSpec block(std::size_t c, const char* name) {
  LayerSpec s;
  s.kind = LayerKind::kFactorizedBlock;
  s.out_channels = c;
  s.name = name;
  return s;
}

LayerSpec dense(std::size_t c, const char* name) {
  LayerSpec s;
  s.kind = LayerKind::kDenseConv;
  s.out_channels = c;
  s.kernel = {3, 3, 3};
  s.name = name;
  return s;
}

LayerSpec pool(Extent3 w, const char* name) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.window = w;
  s.stride = w;
  s.name = name;
  return s;
}

LayerSpec attention_spec() {
  LayerSpec s;
  s.kind = LayerKind::kAttention;
  s.name = "attention";
  return s;
}

LayerSpec flatten_spec() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  s.name = "flatten";
  return s;
}

LayerSpec linear_spec(std::size_t features, bool hidden, const char* name) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.features = features;
  s.hidden = hidden;
  s.name = name;
  return s;
}

}  // namespace

ModelConfig default_cs3d_config() {
  ModelConfig cfg;
  cfg.name = "cs3d";
  cfg.activation = ActivationKind::kSsn;
  LayerSpec mp;
  mp.kind = LayerKind::kMultiPool;
  mp.window = mp.stride = {2, 2, 2};
  mp.name = "multi_pool";
  cfg.layers = {block(64, "block1"),  pool({1, 2, 2}, "pool1"), block(128, "block2"),
                pool({2, 2, 2}, "pool2"), block(256, "block3"), pool({2, 2, 2}, "pool3"),
                block(256, "block4"), mp, attention_spec(), flatten_spec(),
                linear_spec(0, false, "classifier")};
  return cfg;
}

ModelConfig default_c3d_config() {
  ModelConfig cfg;
  cfg.name = "c3d";
  cfg.activation = ActivationKind::kRelu;
  cfg.layers = {dense(64, "conv1"),  pool({1, 2, 2}, "pool1"), dense(128, "conv2"),
                pool({2, 2, 2}, "pool2"), dense(256, "conv3"), pool({2, 2, 2}, "pool3"),
                dense(256, "conv4"), pool({2, 2, 2}, "pool4"), dense(256, "conv5"),
                pool({2, 2, 2}, "pool5"), flatten_spec(), linear_spec(2048, true, "fc6"),
                linear_spec(0, false, "fc7")};
  return cfg;
}

ModelConfig apply_ablation(ModelConfig cfg, const AblationFlags& flags) {
  if (flags.no_ssn) {
    cfg.activation = ActivationKind::kRelu;
    for (auto& l : cfg.layers) {
      if (l.activation == ActivationKind::kSsn) l.activation = ActivationKind::kRelu;
    }
  }
  if (flags.no_factorized) {
    for (auto& l : cfg.layers) {
      if (l.kind == LayerKind::kFactorizedBlock) {
        l.kind = LayerKind::kDenseConv;
        l.kernel = {3, 3, 3};
      }
    }
  }
  if (flags.no_temporal_attn || flags.no_spatial_attn) {
    std::vector<LayerSpec> kept;
    for (auto l : cfg.layers) {
      if (l.kind == LayerKind::kAttention) {
        l.temporal = l.temporal && !flags.no_temporal_attn;
        l.spatial = l.spatial && !flags.no_spatial_attn;
        if (!l.temporal && !l.spatial) continue;
      }
      kept.push_back(std::move(l));
    }
    cfg.layers = std::move(kept);
  }
  return cfg;
}

std::vector<Variant> ablation_variants(const std::array<std::size_t, 4>& input_shape,
                                       std::size_t class_count, std::uint64_t seed) {
  auto base = [&](ModelConfig cfg) {
    cfg.input_shape = input_shape;
    cfg.class_count = class_count;
    cfg.seed = seed;
    return cfg;
  };
  std::vector<Variant> rows;
  rows.push_back({"C3D", base(default_c3d_config())});

  ModelConfig with_ssn = base(default_c3d_config());
  with_ssn.name = "c3d+ssn";
  with_ssn.activation = ActivationKind::kSsn;
  rows.push_back({"C3D+SSN", with_ssn});

  ModelConfig factorized = base(default_c3d_config());
  factorized.name = "c3d+factorized";
  for (auto& l : factorized.layers) {
    if (l.kind == LayerKind::kDenseConv) {
      l.kind = LayerKind::kFactorizedBlock;
      std::string n = l.name;
      l.name = "block" + n.substr(n.size() - 1);
    }
  }
  rows.push_back({"C3D+FactorizedConv3D", factorized});

  ModelConfig attn = base(default_c3d_config());
  attn.name = "c3d+attention";
  for (std::size_t i = 0; i < attn.layers.size(); ++i) {
    if (attn.layers[i].kind == LayerKind::kFlatten) {
      attn.layers.insert(attn.layers.begin() + static_cast<long>(i), attention_spec());
      break;
    }
  }
  rows.push_back({"C3D+Attention", attn});

  rows.push_back({"CS3D", base(default_cs3d_config())});
  return rows;
}

// ---- Model ------------------------------------------------------------------

Model::Model(ModelConfig cfg, std::vector<std::unique_ptr<Layer>> layers)
    : cfg_(std::move(cfg)), layers_(std::move(layers)) {}

Tensor Model::forward(const Tensor& batch, Mode mode) {
  const Shape& s = batch.shape();
  if (s.rank() != 5 || s[1] != cfg_.input_shape[0] || s[2] != cfg_.input_shape[1] ||
      s[3] != cfg_.input_shape[2] || s[4] != cfg_.input_shape[3]) {
    throw ShapeError("model input " + s.str() + " does not match configured " +
                     cfg_.input(s.rank() ? s[0] : 1).str());
  }
  Tensor x = batch;
  for (auto& layer : layers_) {
    try {
      x = layer->forward(x, mode);
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + layer->name() + "': " + e.what());
    }
  }
  return x;
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> out;
  for (const auto& l : layers_) l->collect(out);
  return out;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (auto& e : state()) {
    if (e.kind == EntryKind::kParameter) out.push_back(std::move(e));
  }
  return out;
}

std::vector<BatchNormState*> Model::batchnorms() {
  std::vector<BatchNormState*> out;
  for (auto& l : layers_) l->batchnorms(out);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::save(const std::filesystem::path& path) const { save_checkpoint(path, state()); }

void Model::load(const std::filesystem::path& path) { load_state(load_checkpoint(path)); }

void Model::load_state(const std::vector<NamedTensor>& entries) {
  auto mine = state();
  if (entries.size() != mine.size()) {
    throw FormatError("checkpoint has " + std::to_string(entries.size()) + " entries, model has " +
                      std::to_string(mine.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (entries[i].name != mine[i].name || entries[i].tensor.shape() != mine[i].tensor.shape()) {
      throw FormatError("checkpoint entry '" + entries[i].name + "' does not match '" +
                        mine[i].name + "' " + mine[i].tensor.shape().str());
    }
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    auto dst = mine[i].tensor.mutable_data();
    auto src = entries[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<std::unique_ptr<Layer>> layers;
  Shape s = cfg.input(1);
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& spec = cfg.layers[i];
    const std::string name = auto_name(spec, i);
    const Activation act = resolve_activation(spec, cfg);
    switch (spec.kind) {
      case LayerKind::kFactorizedBlock:
        layers.push_back(
            std::make_unique<FactorizedBlockLayer>(name, s[1], spec.out_channels, act, rng));
        break;
      case LayerKind::kDenseConv:
        layers.push_back(
            std::make_unique<DenseConvLayer>(name, s[1], spec.out_channels, spec.kernel, act, rng));
        break;
      case LayerKind::kMaxPool:
        layers.push_back(std::make_unique<MaxPoolLayer>(name, spec.window, spec.stride));
        break;
      case LayerKind::kMultiPool:
        layers.push_back(
            std::make_unique<MultiPoolLayer>(name, spec.window, spec.stride, spec.pool_kind));
        break;
      case LayerKind::kAttention:
        layers.push_back(std::make_unique<AttentionLayer>(name, s[1], spec, rng));
        break;
      case LayerKind::kFlatten:
        layers.push_back(std::make_unique<FlattenLayer>(name));
        break;
      case LayerKind::kLinear: {
        const std::size_t k = spec.features == 0 ? cfg.class_count : spec.features;
        layers.push_back(std::make_unique<LinearLayer>(name, s[1], k, spec.hidden, act, rng));
        break;
      }
    }
    s = spec_output_shape(spec, s, cfg);
  }
  return Model(cfg, std::move(layers));
}

Model build_cs3d(const ModelConfig& cfg) { return build_model(cfg); }
Model build_c3d(const ModelConfig& cfg) { return build_model(cfg); }

// ---- config files -----------------------------------------------------------

namespace {

json extent_json(const Extent3& e) { return json::array({e.t, e.h, e.w}); }

Extent3 extent_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("extent must be a [t,h,w] array");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

const char* activation_name(ActivationKind k) { return k == ActivationKind::kSsn ? "ssn" : "relu"; }

ActivationKind activation_from(const std::string& s) {
  if (s == "ssn") return ActivationKind::kSsn;
  if (s == "relu") return ActivationKind::kRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

json ssn_json(const SsnParams& p) { return {{"theta", p.theta}, {"beta", p.beta}}; }

SsnParams ssn_from(const json& j) {
  SsnParams p;
  p.theta = j.value("theta", p.theta);
  p.beta = j.value("beta", p.beta);
  return p;
}

json layer_json(const LayerSpec& l) {
  json j{{"kind", to_string(l.kind)}};
  if (!l.name.empty()) j["name"] = l.name;
  switch (l.kind) {
    case LayerKind::kDenseConv:
      j["kernel"] = extent_json(l.kernel);
      [[fallthrough]];
    case LayerKind::kFactorizedBlock:
      j["out_channels"] = l.out_channels;
      if (l.activation) j["activation"] = activation_name(*l.activation);
      if (l.ssn) j["ssn"] = ssn_json(*l.ssn);
      break;
    case LayerKind::kMultiPool:
      j["pool"] = l.pool_kind == MultiPoolKind::kMaxAvg ? "max+avg" : "max";
      [[fallthrough]];
    case LayerKind::kMaxPool:
      j["window"] = extent_json(l.window);
      j["stride"] = extent_json(l.stride);
      break;
    case LayerKind::kAttention:
      j["temporal"] = l.temporal;
      j["spatial"] = l.spatial;
      j["reduction"] = l.reduction;
      j["temporal_kernel"] = l.temporal_kernel;
      j["spatial_kernel"] = extent_json(l.spatial_kernel);
      j["phi"] = l.phi == GateActivation::kRelu ? "relu" : "identity";
      break;
    case LayerKind::kFlatten:
      break;
    case LayerKind::kLinear:
      j["features"] = l.features;
      j["hidden"] = l.hidden;
      if (l.activation) j["activation"] = activation_name(*l.activation);
      break;
  }
  return j;
}

LayerSpec layer_from(const json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.name = j.value("name", std::string());
  l.out_channels = j.value("out_channels", l.out_channels);
  if (j.contains("kernel")) l.kernel = extent_from(j["kernel"]);
  if (j.contains("activation")) l.activation = activation_from(j["activation"].get<std::string>());
  if (j.contains("ssn")) l.ssn = ssn_from(j["ssn"]);
  if (j.contains("window")) l.window = extent_from(j["window"]);
  l.stride = j.contains("stride") ? extent_from(j["stride"]) : l.window;
  if (j.contains("pool")) {
    const auto p = j["pool"].get<std::string>();
    if (p == "max+avg") {
      l.pool_kind = MultiPoolKind::kMaxAvg;
    } else if (p == "max") {
      l.pool_kind = MultiPoolKind::kMaxOnly;
    } else {
      throw ConfigError("unknown multi_pool kind '" + p + "'");
    }
  }
  l.temporal = j.value("temporal", l.temporal);
  l.spatial = j.value("spatial", l.spatial);
  l.reduction = j.value("reduction", l.reduction);
  l.temporal_kernel = j.value("temporal_kernel", l.temporal_kernel);
  if (j.contains("spatial_kernel")) l.spatial_kernel = extent_from(j["spatial_kernel"]);
  if (j.contains("phi")) {
    const auto p = j["phi"].get<std::string>();
    if (p == "relu") {
      l.phi = GateActivation::kRelu;
    } else if (p == "identity") {
      l.phi = GateActivation::kIdentity;
    } else {
      throw ConfigError("unknown phi '" + p + "'");
    }
  }
  l.features = j.value("features", l.features);
  l.hidden = j.value("hidden", l.hidden);
  return l;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["model"] = {{"name", cfg.name},
                {"input_shape", cfg.input_shape},
                {"class_count", cfg.class_count},
                {"seed", cfg.seed}};
  j["activation"] = {{"kind", activation_name(cfg.activation)}, {"ssn", ssn_json(cfg.ssn_defaults)}};
  j["layers"] = json::array();
  for (const auto& l : cfg.layers) j["layers"].push_back(layer_json(l));
  return j.dump(2) + "\n";
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    const auto& m = j.at("model");
    cfg.name = m.value("name", cfg.name);
    if (m.contains("input_shape")) cfg.input_shape = m["input_shape"].get<std::array<std::size_t, 4>>();
    cfg.class_count = m.value("class_count", cfg.class_count);
    cfg.seed = m.value("seed", cfg.seed);
    if (j.contains("activation")) {
      const auto& a = j["activation"];
      if (a.contains("kind")) cfg.activation = activation_from(a["kind"].get<std::string>());
      if (a.contains("ssn")) cfg.ssn_defaults = ssn_from(a["ssn"]);
    }
    for (const auto& l : j.at("layers")) cfg.layers.push_back(layer_from(l));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write config " + path.string());
  os << config_to_json(cfg);
}

}  // namespace cs3d
