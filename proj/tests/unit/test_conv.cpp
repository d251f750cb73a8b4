#include <doctest.h>

#include <cmath>
#include <limits>

#include "cs3d/conv.hpp"
#include "cs3d/ops.hpp"
#include "cs3d/random.hpp"
#include "oracles.hpp"

using namespace cs3d;

namespace {

ConvParams conv(Tensor w, Tensor b, Extent3 stride, Extent3 pad) {
  ConvParams p;
  p.weight = std::move(w);
  p.bias = std::move(b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace

TEST_CASE("depthwise conv matches the nested-loop oracle") {
  Rng rng(1);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 4);
    const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Extent3 s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const Extent3 pad{rng.below(k.t), rng.below(k.h), rng.below(k.w)};
    Tensor x = oracle::random_tensor({n, c, pick(rng, 3, 6), pick(rng, 3, 6), pick(rng, 3, 6)}, rng);
    Tensor w = oracle::random_tensor({c, 1, k.t, k.h, k.w}, rng);
    Tensor b = rep % 2 ? oracle::random_tensor({c}, rng) : Tensor();
    Tensor y = dwconv3d(x, conv(w, b, s, pad), k);
    Tensor ref = oracle::conv3d(x, w, b.defined() ? &b : nullptr, c, s.t, s.h, s.w, pad.t, pad.h, pad.w);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-10);
  }
}

TEST_CASE("depthwise example: random 1x2x5x4x4") {
  Rng rng(2);
  Tensor x = oracle::random_tensor({1, 2, 5, 4, 4}, rng);
  Tensor w = oracle::random_tensor({2, 1, 3, 3, 3}, rng);
  Tensor y = dwconv3d(x, conv(w, {}, {1, 1, 1}, {1, 1, 1}), {3, 3, 3});
  CHECK(oracle::max_abs_diff(y, oracle::conv3d(x, w, nullptr, 2, 1, 1, 1, 1, 1, 1)) < 1e-12);
}

TEST_CASE("dense and pointwise conv match the oracle") {
  Rng rng(3);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
    const Extent3 k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Extent3 s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const Extent3 pad{k.t / 2, k.h / 2, k.w / 2};
    Tensor x = oracle::random_tensor({n, ci, pick(rng, 3, 6), pick(rng, 3, 6), pick(rng, 3, 6)}, rng);
    Tensor w = oracle::random_tensor({co, ci, k.t, k.h, k.w}, rng);
    Tensor b = oracle::random_tensor({co}, rng);
    Tensor y = dense_conv3d(x, conv(w, b, s, pad), k);
    CHECK(oracle::max_abs_diff(y, oracle::conv3d(x, w, &b, 1, s.t, s.h, s.w, pad.t, pad.h, pad.w)) < 1e-10);

    Tensor wp = oracle::random_tensor({co, ci, 1, 1, 1}, rng);
    Tensor yp = pwconv3d(x, conv(wp, {}, {1, 1, 1}, {0, 0, 0}));
    CHECK(oracle::max_abs_diff(yp, oracle::conv3d(x, wp, nullptr, 1, 1, 1, 1, 0, 0, 0)) < 1e-10);
  }
}

TEST_CASE("conv identity and box-filter examples") {
  Rng rng(4);
  Tensor x = oracle::random_tensor({1, 3, 4, 5, 5}, rng);
  Tensor one = Tensor::full({3, 1, 1, 1, 1}, 1.0);
  Tensor y = dwconv3d(x, conv(one, Tensor::zeros({3}), {1, 1, 1}, {0, 0, 0}), {1, 1, 1});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor c = Tensor::full({1, 1, 5, 2, 2}, 0.7);
  Tensor box = dwconv3d(c, conv(Tensor::full({1, 1, 3, 1, 1}, 1.0), {}, {1, 1, 1}, {1, 0, 0}),
                        kTemporalKernel);
  for (std::size_t t = 0; t < 5; ++t) {
    const double want = (t == 0 || t == 4) ? 1.4 : 2.1;
    CHECK(box.at({0, 0, t, 1, 1}) == doctest::Approx(want).epsilon(1e-14));
  }

  Tensor eye(Shape{2, 2, 1, 1, 1}, {1, 0, 0, 1});
  Tensor x2 = oracle::random_tensor({2, 2, 3, 3, 3}, rng);
  Tensor same = pwconv3d(x2, conv(eye, {}, {1, 1, 1}, {0, 0, 0}));
  for (std::size_t i = 0; i < x2.numel(); ++i) CHECK(same.data()[i] == x2.data()[i]);
  Tensor summed = pwconv3d(x2, conv(Tensor::full({1, 2, 1, 1, 1}, 1.0), {}, {1, 1, 1}, {0, 0, 0}));
  CHECK(summed.at({1, 0, 2, 1, 0}) == doctest::Approx(x2.at({1, 0, 2, 1, 0}) + x2.at({1, 1, 2, 1, 0})));
}

TEST_CASE("dense conv impulse response is the kernel under correlation") {
  Rng rng(5);
  Tensor x = Tensor::zeros({1, 1, 5, 5, 5});
  x.mutable_data()[2 * 25 + 2 * 5 + 2] = 1.0;
  Tensor w = oracle::random_tensor({1, 1, 3, 3, 3}, rng);
  Tensor y = dense_conv3d(x, conv(w, {}, {1, 1, 1}, {1, 1, 1}), {3, 3, 3});
  // Correlation puts w[a,b,c] at output (2+1-a, 2+1-b, 2+1-c).
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(y.at({0, 0, 3 - a, 3 - b, 3 - c}) == w.at({0, 0, a, b, c}));
}

TEST_CASE("conv shape errors") {
  Tensor x = Tensor::zeros({1, 2, 3, 3, 3});
  CHECK_THROWS_AS(dense_conv3d(x, conv(Tensor::zeros({1, 3, 1, 1, 1}), {}, {1, 1, 1}, {0, 0, 0}),
                               {1, 1, 1}),
                  ShapeError);
  CHECK_THROWS_AS(dense_conv3d(x, conv(Tensor::zeros({1, 2, 5, 1, 1}), {}, {1, 1, 1}, {0, 0, 0}),
                               {5, 1, 1}),
                  ShapeError);
  CHECK_THROWS_AS(dwconv3d(x, conv(Tensor::zeros({3, 1, 1, 1, 1}), {}, {1, 1, 1}, {0, 0, 0}),
                           {1, 1, 1}),
                  ShapeError);
}

TEST_CASE("pooling matches the oracle") {
  Rng rng(6);
  for (int rep = 0; rep < 25; ++rep) {
    const Extent3 win{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Extent3 st{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    Tensor x = oracle::random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 6), pick(rng, 3, 6),
                                      pick(rng, 3, 6)},
                                     rng);
    Tensor mx = maxpool3d(x, win, st);
    Tensor av = avgpool3d(x, win, st);
    CHECK(oracle::max_abs_diff(mx, oracle::pool3d(x, oracle::Pool::kMax, win.t, win.h, win.w, st.t, st.h, st.w)) < 1e-10);
    CHECK(oracle::max_abs_diff(av, oracle::pool3d(x, oracle::Pool::kAvg, win.t, win.h, win.w, st.t, st.h, st.w)) < 1e-10);
    Tensor mp = multi_pool(x, win, st);
    CHECK(oracle::max_abs_diff(mp, concat({mx, av}, 1)) == 0.0);
    CHECK(oracle::max_abs_diff(multi_pool(x, win, st, MultiPoolKind::kMaxOnly), mx) == 0.0);
  }
}

TEST_CASE("pooling trivial cases") {
  Rng rng(7);
  Tensor x = oracle::random_tensor({1, 2, 2, 4, 4}, rng);
  CHECK(oracle::max_abs_diff(maxpool3d(x, {1, 1, 1}, {1, 1, 1}), x) == 0.0);
  Tensor c = Tensor::full({1, 2, 2, 4, 4}, 0.3);
  Tensor mp = multi_pool(c, {1, 2, 2}, {1, 2, 2});
  CHECK(mp.dim(1) == 4);
  for (double v : mp.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("batchnorm train mode matches the oracle and updates running stats") {
  Rng rng(8);
  Tensor x = oracle::random_tensor({2, 3, 2, 3, 3}, rng, -2, 3);
  BatchNormState s = BatchNormState::identity(3);
  std::vector<double> gamma{0.5, 1.5, -1.0}, delta{0.1, -0.2, 0.3};
  for (std::size_t c = 0; c < 3; ++c) {
    s.gamma.mutable_data()[c] = gamma[c];
    s.delta.mutable_data()[c] = delta[c];
  }
  Tensor y = batchnorm3d(x, s, Mode::kTrain);
  CHECK(oracle::max_abs_diff(y, oracle::batchnorm_train(x, gamma, delta, s.epsilon)) < 1e-10);

  const double n = 2 * 2 * 3 * 3;
  for (std::size_t c = 0; c < 3; ++c) {
    double mu = 0.0, q = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t h = 0; h < 3; ++h)
          for (std::size_t w = 0; w < 3; ++w) mu += x.at({b, c, t, h, w});
    mu /= n;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t h = 0; h < 3; ++h)
          for (std::size_t w = 0; w < 3; ++w) q += std::pow(x.at({b, c, t, h, w}) - mu, 2);
    CHECK(s.running_mean.data()[c] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(s.running_var.data()[c] == doctest::Approx(0.9 + 0.1 * q / (n - 1)).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm eval mode uses the running statistics") {
  Rng rng(9);
  Tensor x = oracle::random_tensor({1, 2, 2, 2, 2}, rng);
  BatchNormState s = BatchNormState::identity(2);
  s.epsilon = 1e-300;
  Tensor y = batchnorm3d(x, s, Mode::kEval);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  s.epsilon = 1e-5;
  s.running_mean.mutable_data()[1] = 2.0;
  s.running_var.mutable_data()[1] = 4.0;
  y = batchnorm3d(x, s, Mode::kEval);
  CHECK(y.at({0, 1, 1, 0, 1}) == doctest::Approx((x.at({0, 1, 1, 0, 1}) - 2.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(s.running_mean.data()[0] == 0.0);  // untouched in eval
}

namespace {

FactorizedBlock random_block(std::size_t cin, std::size_t cout, Rng& rng) {
  FactorizedBlock b;
  b.dw_temporal = conv(oracle::random_tensor({cin, 1, 3, 1, 1}, rng), {}, {1, 1, 1}, {1, 0, 0});
  b.pw1 = conv(oracle::random_tensor({cout, cin, 1, 1, 1}, rng), {}, {1, 1, 1}, {0, 0, 0});
  b.bn1 = BatchNormState::identity(cout);
  b.dw_spatial = conv(oracle::random_tensor({cout, 1, 1, 3, 3}, rng), {}, {1, 1, 1}, {0, 1, 1});
  b.pw2 = conv(oracle::random_tensor({cout, cout, 1, 1, 1}, rng), {}, {1, 1, 1}, {0, 0, 0});
  b.bn2 = BatchNormState::identity(cout);
  if (cin != cout) {
    b.residual_projection = conv(oracle::random_tensor({cout, cin, 1, 1, 1}, rng), {}, {1, 1, 1}, {0, 0, 0});
  }
  return b;
}

}  // namespace

TEST_CASE("factorized block with zero branch weights is the pure residual") {
  Rng rng(10);
  FactorizedBlock b = random_block(3, 3, rng);
  for (ConvParams* p : {&b.dw_temporal, &b.pw1, &b.dw_spatial, &b.pw2})
    for (double& v : p->weight.mutable_data()) v = 0.0;
  Tensor x = oracle::random_tensor({2, 3, 3, 4, 4}, rng);
  Tensor y = factorized_block(x, b, Mode::kEval);
  CHECK(oracle::max_abs_diff(y, x) == 0.0);
}

TEST_CASE("factorized block follows its operation order") {
  Rng rng(11);
  for (std::size_t cout : {3u, 5u}) {
    FactorizedBlock b = random_block(3, cout, rng);
    for (BatchNormState* s : {&b.bn1, &b.bn2})
      for (std::size_t c = 0; c < cout; ++c) {
        s->running_mean.mutable_data()[c] = rng.uniform(-0.2, 0.2);
        s->running_var.mutable_data()[c] = rng.uniform(0.5, 2.0);
      }
    b.act1 = b.act2 = Activation{ActivationKind::kSsn, {0.05, 2.0}};
    Tensor x = oracle::random_tensor({2, 3, 3, 4, 4}, rng);

    auto bn_eval = [](const Tensor& v, const BatchNormState& s) {
      Tensor out = v.clone();
      auto d = out.mutable_data();
      const std::size_t plane = v.dim(2) * v.dim(3) * v.dim(4);
      for (std::size_t i = 0; i < v.numel(); ++i) {
        const std::size_t c = (i / plane) % v.dim(1);
        d[i] = s.gamma.data()[c] * (d[i] - s.running_mean.data()[c]) /
                   std::sqrt(s.running_var.data()[c] + s.epsilon) +
               s.delta.data()[c];
      }
      return out;
    };
    auto act = [](const Tensor& v) {
      Tensor out = v.clone();
      for (double& e : out.mutable_data()) e = e > 0.05 ? e : 0.0;
      return out;
    };
    const std::size_t cin = 3;
    Tensor h = oracle::conv3d(x, b.dw_temporal.weight, nullptr, cin, 1, 1, 1, 1, 0, 0);
    h = oracle::conv3d(h, b.pw1.weight, nullptr, 1, 1, 1, 1, 0, 0, 0);
    h = act(bn_eval(h, b.bn1));
    h = oracle::conv3d(h, b.dw_spatial.weight, nullptr, cout, 1, 1, 1, 0, 1, 1);
    h = oracle::conv3d(h, b.pw2.weight, nullptr, 1, 1, 1, 1, 0, 0, 0);
    h = act(bn_eval(h, b.bn2));
    Tensor res = b.has_projection()
                     ? oracle::conv3d(x, b.residual_projection.weight, nullptr, 1, 1, 1, 1, 0, 0, 0)
                     : x;
    Tensor want = add(h, res);
    CHECK(oracle::max_abs_diff(factorized_block(x, b, Mode::kEval), want) < 1e-10);
  }
}

TEST_CASE("factorization identity: a dense 3x3x3 separable kernel equals the factorized path") {
  // With BN at identity (tiny epsilon), the activation at -inf threshold
  // (identity map), one channel and unit pointwise weights, the branch is
  // the separable kernel kt (x) ks applied densely.
  Rng rng(12);
  FactorizedBlock b = random_block(1, 1, rng);
  b.pw1.weight.mutable_data()[0] = 1.0;
  b.pw2.weight.mutable_data()[0] = 1.0;
  b.bn1.epsilon = b.bn2.epsilon = 1e-300;
  const SsnParams open{std::numeric_limits<double>::lowest(), 2.0};
  b.act1 = b.act2 = Activation{ActivationKind::kSsn, open};
  Tensor x = oracle::random_tensor({1, 1, 4, 5, 5}, rng);
  Tensor dense_w = Tensor::zeros({1, 1, 3, 3, 3});
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t p = 0; p < 9; ++p)
      dense_w.mutable_data()[a * 9 + p] = b.dw_temporal.weight.data()[a] * b.dw_spatial.weight.data()[p];
  Tensor want = add(oracle::conv3d(x, dense_w, nullptr, 1, 1, 1, 1, 1, 1, 1), x);
  CHECK(oracle::max_abs_diff(factorized_block(x, b, Mode::kEval), want) < 1e-10);
}
