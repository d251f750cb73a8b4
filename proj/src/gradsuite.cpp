#include "cs3d/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include "cs3d/attention.hpp"
#include "cs3d/conv.hpp"
#include "cs3d/ops.hpp"
#include "cs3d/random.hpp"
#include "cs3d/ssn.hpp"
#include "cs3d/trainer.hpp"

namespace cs3d {

namespace {

Tensor uniform(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(s, std::move(v));
}

// Distinct values at least 0.05 apart, so max/relu kinks sit far from the
// finite-difference stencil.
Tensor separated(const Shape& s, Rng& rng) {
  std::vector<double> v(s.numel());
  std::vector<std::size_t> perm(v.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  shuffle(perm, rng);
  const double span = 0.05 * static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = 0.05 * static_cast<double>(perm[i]) - span / 2.0 + 0.025 + rng.uniform(-0.005, 0.005);
  }
  return Tensor(s, std::move(v));
}

class Suite {
 public:
  Suite(std::uint64_t seed, CheckOptions opt) : rng_(seed), opt_(opt) {}

  Rng& rng() { return rng_; }

  // `f` maps the inputs to an output tensor; a random weighting makes it scalar.
  void check(const std::string& name, const std::vector<Tensor>& inputs,
             const std::function<Tensor()>& f) {
    Tensor probe;
    {
      NoGradGuard g;
      probe = f();
    }
    Tensor r = uniform(probe.shape(), rng_, 0.5, 1.5);
    auto loss = [&]() { return sum(mul(f(), r)); };
    out_.push_back({name, gradient_check(loss, inputs, opt_), false});
  }

  void add(SuiteEntry e) { out_.push_back(std::move(e)); }
  std::vector<SuiteEntry> take() { return std::move(out_); }

 private:
  Rng rng_;
  CheckOptions opt_;
  std::vector<SuiteEntry> out_;
};

ConvParams conv_params(std::size_t c_out, std::size_t c_in, const Extent3& k, bool bias, Rng& rng,
                       Extent3 stride = {1, 1, 1}, Extent3 pad = {0, 0, 0}) {
  ConvParams p;
  p.weight = uniform(Shape{c_out, c_in, k.t, k.h, k.w}, rng, -0.5, 0.5);
  if (bias) p.bias = uniform(Shape{c_out}, rng, -0.5, 0.5);
  p.stride = stride;
  p.padding = pad;
  return p;
}

std::vector<Tensor> conv_inputs(const Tensor& x, const ConvParams& p) {
  std::vector<Tensor> v{x, p.weight};
  if (p.has_bias()) v.push_back(p.bias);
  return v;
}

}  // namespace

std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed, const CheckOptions& options) {
  Suite s(seed, options);
  Rng& rng = s.rng();

  // Elementwise with broadcasting.
  {
    Tensor a = uniform(Shape{2, 3, 4}, rng);
    Tensor b = uniform(Shape{3, 1}, rng);
    s.check("elementwise.add", {a, b}, [=] { return add(a, b); });
    s.check("elementwise.sub", {a, b}, [=] { return sub(a, b); });
    s.check("elementwise.mul", {a, b}, [=] { return mul(a, b); });
    s.check("elementwise.scalar", {a}, [=] { return add_scalar(mul_scalar(a, -1.7), 0.3); });
    Tensor c = separated(Shape{2, 3, 4}, rng);
    Tensor d = c.clone();
    for (auto& v : d.mutable_data()) v += rng.uniform() < 0.5 ? -0.02 : 0.02;
    s.check("elementwise.maximum", {c, d}, [=] { return maximum(c, d); });
  }
  // Reductions.
  {
    Tensor x = uniform(Shape{2, 3, 4, 2}, rng);
    s.check("reduce.sum", {x}, [=] { return reduce(ReduceOp::kSum, x, {1, 3}, true); });
    s.check("reduce.mean", {x}, [=] { return reduce(ReduceOp::kMean, x, {0, 2}, false); });
    Tensor y = separated(Shape{2, 3, 4, 2}, rng);
    s.check("reduce.max", {y}, [=] { return reduce(ReduceOp::kMax, y, {2, 3}, true); });
  }
  // Dense layers and activations.
  {
    Tensor x = uniform(Shape{3, 5}, rng);
    Tensor w = uniform(Shape{5, 4}, rng);
    Tensor b = uniform(Shape{4}, rng);
    s.check("linear", {x, w, b}, [=] { return linear(x, w, b); });
    Tensor z = uniform(Shape{2, 3, 4}, rng, -3.0, 3.0);
    s.check("sigmoid", {z}, [=] { return sigmoid(z); });
    Tensor q = separated(Shape{2, 3, 4}, rng);
    s.check("relu", {q}, [=] { return relu(q); });
    Tensor u = uniform(Shape{2, 2, 3}, rng);
    Tensor v = uniform(Shape{2, 4, 3}, rng);
    s.check("concat", {u, v}, [=] { return concat({u, v}, 1); });
    Tensor f = uniform(Shape{2, 3, 2, 2}, rng);
    s.check("flatten", {f}, [=] { return flatten(f); });
  }
  // Convolutions.
  {
    Tensor x = uniform(Shape{2, 3, 4, 5, 5}, rng);
    ConvParams dw_t = conv_params(3, 1, {3, 1, 1}, false, rng, {1, 1, 1}, {1, 0, 0});
    s.check("dwconv3d.temporal", conv_inputs(x, dw_t),
            [=] { return dwconv3d(x, dw_t, {3, 1, 1}); });
    ConvParams dw_s = conv_params(3, 1, {1, 3, 3}, true, rng, {1, 2, 2}, {0, 1, 1});
    s.check("dwconv3d.spatial_strided", conv_inputs(x, dw_s),
            [=] { return dwconv3d(x, dw_s, {1, 3, 3}); });
    ConvParams pw = conv_params(4, 3, {1, 1, 1}, true, rng);
    s.check("pwconv3d", conv_inputs(x, pw), [=] { return pwconv3d(x, pw); });
    ConvParams dense = conv_params(2, 3, {3, 3, 3}, true, rng, {1, 1, 1}, {1, 1, 1});
    s.check("dense_conv3d", conv_inputs(x, dense),
            [=] { return dense_conv3d(x, dense, {3, 3, 3}); });
    ConvParams strided = conv_params(2, 3, {2, 3, 3}, false, rng, {2, 2, 2}, {0, 1, 1});
    s.check("dense_conv3d.strided", conv_inputs(x, strided),
            [=] { return dense_conv3d(x, strided, {2, 3, 3}); });
  }
  // Batch normalization.
  {
    Tensor x = uniform(Shape{2, 3, 3, 4, 4}, rng);
    auto bn = std::make_shared<BatchNormState>(BatchNormState::identity(3));
    bn->gamma = uniform(Shape{3}, rng, 0.5, 1.5);
    bn->delta = uniform(Shape{3}, rng);
    s.check("batchnorm3d.train", {x, bn->gamma, bn->delta},
            [=] { return batchnorm3d(x, *bn, Mode::kTrain); });
    bn->running_mean = uniform(Shape{3}, rng);
    bn->running_var = uniform(Shape{3}, rng, 0.5, 2.0);
    s.check("batchnorm3d.eval", {x, bn->gamma, bn->delta},
            [=] { return batchnorm3d(x, *bn, Mode::kEval); });
  }
  // Pooling.
  {
    Tensor x = separated(Shape{2, 2, 4, 4, 4}, rng);
    s.check("maxpool3d", {x}, [=] { return maxpool3d(x, {2, 2, 2}, {2, 2, 2}); });
    s.check("avgpool3d", {x}, [=] { return avgpool3d(x, {2, 2, 2}, {1, 2, 2}); });
    s.check("multi_pool", {x}, [=] { return multi_pool(x, {1, 2, 2}, {1, 2, 2}); });
  }
  // Attention.
  {
    Tensor x = uniform(Shape{2, 4, 5, 3, 3}, rng);
    TemporalAttentionParams tp;
    tp.conv1 = conv_params(2, 4, {3, 1, 1}, true, rng, {1, 1, 1}, {1, 0, 0});
    tp.conv2 = conv_params(4, 2, {3, 1, 1}, true, rng, {1, 1, 1}, {1, 0, 0});
    SpatialAttentionParams sp;
    sp.conv = conv_params(1, 2, {1, 3, 3}, true, rng, {1, 1, 1}, {0, 1, 1});
    std::vector<Tensor> t_in{x, tp.conv1.weight, tp.conv1.bias, tp.conv2.weight, tp.conv2.bias};
    s.check("temporal_attention", t_in, [=] { return temporal_attention(x, tp); });
    s.check("spatial_attention", {x, sp.conv.weight, sp.conv.bias},
            [=] { return spatial_attention(x, sp); });
    std::vector<Tensor> j_in = t_in;
    j_in.push_back(sp.conv.weight);
    j_in.push_back(sp.conv.bias);
    s.check("joint_attention", j_in, [=] { return joint_attention(x, tp, sp); });
  }
  // Factorized block. In train mode batch statistics couple every
  // coordinate, so a single rectifier kink spoils the whole stencil; that
  // case runs with SSN at theta = lowest double, which is exactly the
  // identity with unit surrogate. The rectifier runs in eval mode.
  {
    Tensor x = uniform(Shape{2, 2, 3, 4, 4}, rng);
    auto b = std::make_shared<FactorizedBlock>();
    b->dw_temporal = conv_params(2, 1, kTemporalKernel, false, rng, {1, 1, 1}, {1, 0, 0});
    b->pw1 = conv_params(3, 2, {1, 1, 1}, false, rng);
    b->bn1 = BatchNormState::identity(3);
    b->dw_spatial = conv_params(3, 1, kSpatialKernel, false, rng, {1, 1, 1}, {0, 1, 1});
    b->pw2 = conv_params(3, 3, {1, 1, 1}, false, rng);
    b->bn2 = BatchNormState::identity(3);
    b->residual_projection = conv_params(3, 2, {1, 1, 1}, false, rng);
    const std::vector<Tensor> inputs{x,
                                     b->dw_temporal.weight,
                                     b->pw1.weight,
                                     b->bn1.gamma,
                                     b->bn1.delta,
                                     b->dw_spatial.weight,
                                     b->pw2.weight,
                                     b->bn2.gamma,
                                     b->bn2.delta,
                                     b->residual_projection.weight};
    b->act1 = Activation{ActivationKind::kSsn, {std::numeric_limits<double>::lowest(), 2.0}};
    b->act2 = b->act1;
    s.check("factorized_block.train", inputs, [=] { return factorized_block(x, *b, Mode::kTrain); });
    b->act1 = Activation{ActivationKind::kRelu, {}};
    b->act2 = b->act1;
    b->bn1.running_var = uniform(Shape{3}, rng, 0.5, 2.0);
    b->bn2.running_mean = uniform(Shape{3}, rng);
    s.check("factorized_block.eval", inputs, [=] { return factorized_block(x, *b, Mode::kEval); });
  }
  // Cross-entropy.
  {
    Tensor logits = uniform(Shape{4, 5}, rng, -2.0, 2.0);
    std::vector<std::size_t> labels{0, 3, 4, 1};
    s.add({"cross_entropy",
           gradient_check([=] { return cross_entropy(logits, labels); }, {logits}, options), false});
  }
  // SSN: tape gradient equals upstream * sigma(beta * (x - theta)) exactly.
  {
    SsnParams p{0.1, 2.0};
    Tensor x = uniform(Shape{3, 4, 5}, rng, -2.0, 2.0);
    x.set_requires_grad(true);
    Tensor r = uniform(x.shape(), rng);
    sum(mul(ssn(x, p), r)).backward();
    SuiteEntry e{"ssn.surrogate", {}, true};
    const auto xd = x.data();
    const auto g = x.grad();
    const auto rd = r.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const double expected = rd[i] * logistic(p.beta * (xd[i] - p.theta));
      const double err = std::abs(g[i] - expected);
      e.report.max_abs_error = std::max(e.report.max_abs_error, err);
      e.report.max_rel_error =
          std::max(e.report.max_rel_error, err / std::max(std::abs(expected), options.floor));
      ++e.report.coordinates;
    }
    e.report.passed = e.report.max_abs_error == 0.0;
    s.add(e);
  }
  return s.take();
}

}  // namespace cs3d
