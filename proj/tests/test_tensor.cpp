#include <doctest.h>

#include <cmath>
#include <random>

#include "bers/optim.hpp"
#include "bers/ops.hpp"
#include "testutil.hpp"

using namespace bers;
using namespace bers::test;

namespace {

// Direct five-loop convolution, independent of the im2col path.
Tensor conv3d_reference(const Tensor& x, const Tensor& w, const Tensor& b,
                        const Conv3dSpec& spec) {
  const int64_t n = x.dim(0), cin = x.dim(1), t = x.dim(2), h = x.dim(3), wd = x.dim(4);
  const int64_t cout = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int64_t cg = cin / spec.groups, cog = cout / spec.groups;
  const int64_t to = (t + 2 * spec.padding[0] - kt) / spec.stride[0] + 1;
  const int64_t ho = (h + 2 * spec.padding[1] - kh) / spec.stride[1] + 1;
  const int64_t wo = (wd + 2 * spec.padding[2] - kw) / spec.stride[2] + 1;
  Tensor y({n, cout, to, ho, wo});
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t co = 0; co < cout; ++co) {
      const int64_t g = co / cog;
      for (int64_t zt = 0; zt < to; ++zt)
        for (int64_t zh = 0; zh < ho; ++zh)
          for (int64_t zw = 0; zw < wo; ++zw) {
            double acc = b.data()[co];
            for (int64_t ci = 0; ci < cg; ++ci)
              for (int64_t a = 0; a < kt; ++a)
                for (int64_t bb = 0; bb < kh; ++bb)
                  for (int64_t c = 0; c < kw; ++c) {
                    const int64_t ti = zt * spec.stride[0] - spec.padding[0] + a;
                    const int64_t hi = zh * spec.stride[1] - spec.padding[1] + bb;
                    const int64_t wi = zw * spec.stride[2] - spec.padding[2] + c;
                    if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= wd) continue;
                    acc += x.data()[(((ni * cin + g * cg + ci) * t + ti) * h + hi) * wd + wi] *
                           w.data()[(((co * cg + ci) * kt + a) * kh + bb) * kw + c];
                  }
            y.data()[(((ni * cout + co) * to + zt) * ho + zh) * wo + zw] = acc;
          }
    }
  return y;
}

}  // namespace

TEST_CASE("conv3d identity kernel") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 3, 4, 5, 5}, rng);
  Tensor w = Tensor::zeros({3, 3, 1, 1, 1});
  for (int64_t c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  Tensor b = Tensor::zeros({3});
  Tensor y = conv3d(nullptr, x, w, b, {});
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv3d all-ones 3x3x3 kernel, padded ones input") {
  Tensor x = Tensor::full({1, 1, 5, 5, 5}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Conv3dSpec spec;
  spec.padding = {1, 1, 1};
  Tensor y = conv3d(nullptr, x, w, b, spec);
  REQUIRE(y.shape() == Shape{1, 1, 5, 5, 5});
  // center voxel sees the full 27-element kernel support
  CHECK(y.data()[(2 * 5 + 2) * 5 + 2] == doctest::Approx(27.0));
  // corner voxel sees an octant
  CHECK(y.data()[0] == doctest::Approx(8.0));
}

TEST_CASE("conv3d matches the direct-loop reference") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    Conv3dSpec spec;
    spec.stride = {1 + trial % 2, 1, 2};
    spec.padding = {1, 0, 1};
    spec.groups = (trial % 2) ? 2 : 1;
    Tensor x = random_tensor({2, 4, 3, 4, 5}, rng);
    Tensor w = random_tensor({6, 4 / spec.groups, 3, 2, 3}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor fast = conv3d(nullptr, x, w, b, spec);
    Tensor slow = conv3d_reference(x, w, b, spec);
    REQUIRE(fast.shape() == slow.shape());
    for (int64_t i = 0; i < fast.numel(); ++i)
      CHECK(fast.data()[i] == doctest::Approx(slow.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv3d gradient check with groups") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 4, 3, 4, 4}, rng);
  Tensor w = random_tensor({4, 2, 3, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  Conv3dSpec spec;
  spec.padding = {1, 1, 1};
  spec.groups = 2;
  Tensor probe_shape = conv3d(nullptr, x, w, b, spec);
  const std::vector<double> ws = random_weights(probe_shape.numel(), rng);
  const double err = grad_check({x, w, b}, [&](Tape* tape) {
    return weighted_sum(tape, conv3d(tape, x, w, b, spec), ws);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("conv3d groups equal independent per-slice convolutions") {
  std::mt19937_64 rng(4);
  const int64_t g = 3;
  Tensor x = random_tensor({2, 6, 3, 4, 4}, rng);
  Tensor w = random_tensor({6, 2, 3, 3, 3}, rng);
  Tensor b = random_tensor({6}, rng);
  Conv3dSpec spec;
  spec.padding = {1, 1, 1};
  spec.groups = g;
  Tensor grouped = conv3d(nullptr, x, w, b, spec);

  // slice channels, run groups=1 convolutions, concatenate
  const int64_t cg = 2, cog = 2, t = 3, h = 4, wd = 4;
  for (int64_t gi = 0; gi < g; ++gi) {
    Tensor xs({2, cg, t, h, wd});
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t c = 0; c < cg; ++c)
        std::copy_n(x.data() + ((n * 6 + gi * cg + c) * t * h * wd), t * h * wd,
                    xs.data() + ((n * cg + c) * t * h * wd));
    Tensor wsl({cog, cg, 3, 3, 3});
    std::copy_n(w.data() + gi * cog * cg * 27, cog * cg * 27, wsl.data());
    Tensor bs({cog});
    std::copy_n(b.data() + gi * cog, cog, bs.data());
    Conv3dSpec s1 = spec;
    s1.groups = 1;
    Tensor ys = conv3d(nullptr, xs, wsl, bs, s1);
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t c = 0; c < cog; ++c)
        for (int64_t i = 0; i < t * h * wd; ++i)
          CHECK(ys.data()[(n * cog + c) * t * h * wd + i] ==
                doctest::Approx(grouped.data()[((n * 6 + gi * cog + c) * t * h * wd) + i])
                    .epsilon(1e-12));
  }
}

TEST_CASE("conv3d dimension and configuration errors") {
  Tensor x({1, 3, 4, 4, 4});
  Tensor w({4, 3, 3, 3, 3});
  Tensor b({4});
  Conv3dSpec bad_groups;
  bad_groups.groups = 2;  // does not divide Cin=3
  CHECK_THROWS_AS(conv3d(nullptr, x, w, b, bad_groups), ConfigError);
  Tensor w_badc({4, 2, 3, 3, 3});
  CHECK_THROWS_AS(conv3d(nullptr, x, w_badc, b, {}), DimensionError);
  Conv3dSpec no_fit;
  no_fit.stride = {1, 1, 1};
  Tensor w_big({4, 3, 5, 3, 3});  // kT=5 > T=4, no padding
  CHECK_THROWS_AS(conv3d(nullptr, x, w_big, b, no_fit), DimensionError);
}

TEST_CASE("relu basics and backward through negatives") {
  Tensor x({3}, {-1.0, 0.0, 2.0}, true);
  Tape tape;
  Tensor y = relu(&tape, x);
  CHECK(y.vec() == std::vector<double>{0.0, 0.0, 2.0});

  Tensor all_neg = Tensor::full({4}, -3.0, true);
  Tape tape2;
  Tensor z = relu(&tape2, all_neg);
  for (double v : z.vec()) CHECK(v == 0.0);
  Tensor loss = weighted_sum(&tape2, z, {1, 1, 1, 1});
  tape2.backward(loss);
  for (double g : all_neg.grad_vec()) CHECK(g == 0.0);
}

TEST_CASE("relu gradient check away from the kink") {
  std::mt19937_64 rng(5);
  Tensor x({40}, true);
  std::uniform_real_distribution<double> dist(1e-3, 1.0);
  for (double& v : x.vec()) v = dist(rng) * (rng() % 2 ? 1.0 : -1.0);
  const std::vector<double> ws = random_weights(x.numel(), rng);
  const double err =
      grad_check({x}, [&](Tape* tape) { return weighted_sum(tape, relu(tape, x), ws); });
  CHECK(err < 1e-6);
}

TEST_CASE("batch_norm normalizes per channel in train mode") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({4, 3, 2, 2, 2}, rng, -100.0, 100.0, false);
  Tensor scale = Tensor::full({3}, 1.0);
  Tensor shift = Tensor::zeros({3});
  BatchNormState state(3);
  Tensor y = batch_norm(nullptr, x, scale, shift, state, Mode::kTrain);
  const int64_t spatial = 8, m = 4 * spatial;
  for (int64_t ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < spatial; ++i) mean += y.data()[(n * 3 + ch) * spatial + i];
    mean /= m;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < spatial; ++i) {
        const double d = y.data()[(n * 3 + ch) * spatial + i] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("batch_norm eval with unit running stats is identity") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 3, 2, 2, 2}, rng, -1.0, 1.0, false);
  Tensor scale = Tensor::full({3}, 1.0);
  Tensor shift = Tensor::zeros({3});
  BatchNormState state(3);  // mean 0, var 1
  Tensor y = batch_norm(nullptr, x, scale, shift, state, Mode::kEval);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm gradient check") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({4, 3, 2, 2, 2}, rng);
  Tensor scale = random_tensor({3}, rng, 0.5, 1.5);
  Tensor shift = random_tensor({3}, rng);
  const std::vector<double> ws = random_weights(x.numel(), rng);
  const double err = grad_check({x, scale, shift}, [&](Tape* tape) {
    BatchNormState state(3);  // fresh stats: forward must be repeatable
    return weighted_sum(tape, batch_norm(tape, x, scale, shift, state, Mode::kTrain), ws);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("batch_norm degenerate batch") {
  Tensor x({1, 3, 1, 1, 1});
  Tensor scale = Tensor::full({3}, 1.0);
  Tensor shift = Tensor::zeros({3});
  BatchNormState state(3);
  CHECK_THROWS_AS(batch_norm(nullptr, x, scale, shift, state, Mode::kTrain), DataError);
  CHECK_NOTHROW(batch_norm(nullptr, x, scale, shift, state, Mode::kEval));
}

TEST_CASE("global_avg_pool constant and arithmetic mean") {
  Tensor c = Tensor::full({2, 3, 2, 2, 2}, 4.25);
  Tensor y = global_avg_pool(nullptr, c);
  for (double v : y.vec()) CHECK(v == doctest::Approx(4.25));

  Tensor x({1, 1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  CHECK(global_avg_pool(nullptr, x).item() == doctest::Approx(2.5));
}

TEST_CASE("global_avg_pool gradient is upstream over volume") {
  Tensor x({1, 2, 1, 2, 2}, true);
  Tape tape;
  Tensor y = global_avg_pool(&tape, x);
  Tensor loss = weighted_sum(&tape, y, {3.0, 5.0});
  tape.backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(x.grad_vec()[i] == doctest::Approx(3.0 / 4));
  for (int64_t i = 4; i < 8; ++i) CHECK(x.grad_vec()[i] == doctest::Approx(5.0 / 4));
}

TEST_CASE("fully_connected identity and all-ones rows") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  Tensor zb = Tensor::zeros({3});
  Tensor y = fully_connected(nullptr, x, eye, zb);
  for (int64_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  Tensor ones_w = Tensor::full({1, 3}, 1.0);
  Tensor ones_x = Tensor::full({1, 3}, 1.0);
  CHECK(fully_connected(nullptr, ones_x, ones_w, Tensor::zeros({1})).item() ==
        doctest::Approx(3.0));
  CHECK_THROWS_AS(fully_connected(nullptr, x, Tensor({3, 4}), Tensor({3})), DimensionError);
}

TEST_CASE("fully_connected gradient check") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({4}, rng);
  const std::vector<double> ws = random_weights(12, rng);
  const double err = grad_check({x, w, b}, [&](Tape* tape) {
    return weighted_sum(tape, fully_connected(tape, x, w, b), ws);
  });
  CHECK(err < 1e-8);
}

TEST_CASE("softmax_cross_entropy values") {
  Tensor uniform = Tensor::zeros({2, 4});
  CHECK(softmax_cross_entropy(nullptr, uniform, {0, 3}).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));

  Tensor confident = Tensor::zeros({1, 4});
  confident.data()[2] = 1000.0;
  CHECK(softmax_cross_entropy(nullptr, confident, {2}).item() < 1e-9);

  CHECK_THROWS_AS(softmax_cross_entropy(nullptr, uniform, {0, 4}), LabelError);
}

TEST_CASE("softmax_cross_entropy gradient equals softmax minus one-hot") {
  std::mt19937_64 rng(10);
  Tensor logits = random_tensor({3, 5}, rng, -2.0, 2.0);
  const std::vector<int64_t> labels{1, 4, 0};
  Tape tape;
  Tensor loss = softmax_cross_entropy(&tape, logits, labels);
  tape.backward(loss);
  Tensor probs = softmax_rows(logits);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      const double expected = (probs.data()[i * 5 + j] - (labels[i] == j ? 1.0 : 0.0)) / 3.0;
      CHECK(logits.grad_vec()[i * 5 + j] == doctest::Approx(expected).epsilon(1e-10));
    }
  const double err = grad_check({logits}, [&](Tape* tape2) {
    return softmax_cross_entropy(tape2, logits, labels);
  });
  CHECK(err < 1e-7);
}

TEST_CASE("softmax rows implied by cross-entropy sum to 1") {
  std::mt19937_64 rng(11);
  Tensor logits = random_tensor({8, 6}, rng, -5.0, 5.0, false);
  Tensor probs = softmax_rows(logits);
  for (int64_t i = 0; i < 8; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < 6; ++j) s += probs.data()[i * 6 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("mse_distance values and gradient") {
  std::mt19937_64 rng(12);
  Tensor a({2}, {1.0, 2.0});
  Tensor b = Tensor::zeros({2});
  CHECK(mse_distance(nullptr, a, a.clone()).item() == 0.0);
  CHECK(mse_distance(nullptr, a, b).item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(mse_distance(nullptr, a, Tensor({3})), DimensionError);

  Tensor ra = random_tensor({3, 4}, rng);
  Tensor rb = random_tensor({3, 4}, rng);
  const double err =
      grad_check({ra, rb}, [&](Tape* tape) { return mse_distance(tape, ra, rb); });
  CHECK(err < 1e-8);
}

TEST_CASE("backward on sum gives all-ones and accumulates") {
  Tensor x({4}, {1, 2, 3, 4}, true);
  Tape tape;
  Tensor loss = weighted_sum(&tape, x, {1, 1, 1, 1});
  tape.backward(loss);
  for (double g : x.grad_vec()) CHECK(g == 1.0);
  tape.backward(loss);  // repeated backward accumulates
  for (double g : x.grad_vec()) CHECK(g == 2.0);
  CHECK_THROWS_AS(tape.backward(Tensor({2})), ContractError);
}

TEST_CASE("backward of mse at the minimum is zero") {
  Tensor x({3}, {1.0, -2.0, 0.5}, true);
  Tensor c = x.clone();
  Tape tape;
  Tensor loss = mse_distance(&tape, x, c);
  tape.backward(loss);
  for (double g : x.grad_vec()) CHECK(g == 0.0);
}

TEST_CASE("composite conv->relu->pool->fc->cross-entropy gradient check") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({2, 2, 3, 4, 4}, rng);
  Tensor cw = random_tensor({4, 2, 3, 3, 3}, rng, -0.5, 0.5);
  Tensor cb = random_tensor({4}, rng, -0.1, 0.1);
  Tensor fw = random_tensor({3, 4}, rng, -0.5, 0.5);
  Tensor fb = random_tensor({3}, rng, -0.1, 0.1);
  Conv3dSpec spec;
  spec.padding = {1, 1, 1};
  const std::vector<int64_t> labels{0, 2};
  const double err = grad_check({x, cw, cb, fw, fb}, [&](Tape* tape) {
    Tensor h = relu(tape, conv3d(tape, x, cw, cb, spec));
    Tensor pooled = global_avg_pool(tape, h);
    Tensor logits = fully_connected(tape, pooled, fw, fb);
    return softmax_cross_entropy(tape, logits, labels);
  });
  CHECK(err < 1e-5);
}

TEST_CASE("forward determinism is bit-exact") {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({2, 4, 3, 4, 4}, rng, -1.0, 1.0, false);
  Tensor w = random_tensor({4, 2, 3, 3, 3}, rng, -1.0, 1.0, false);
  Tensor b = random_tensor({4}, rng, -1.0, 1.0, false);
  Conv3dSpec spec;
  spec.padding = {1, 1, 1};
  spec.groups = 2;
  Tensor y1 = conv3d(nullptr, x, w, b, spec);
  Tensor y2 = conv3d(nullptr, x, w, b, spec);
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("sgd_step recurrences") {
  Tensor w = Tensor::scalar(1.0, true);
  SgdOptimizer opt({w}, 0.1, 0.0);
  w.grad()[0] = 0.5;
  opt.step();
  CHECK(w.item() == doctest::Approx(0.95));

  Tensor w2 = Tensor::scalar(1.0, true);
  SgdOptimizer opt2({w2}, 0.1, 0.9);
  w2.grad()[0] = 0.0;
  opt2.step();
  CHECK(w2.item() == doctest::Approx(1.0));  // zero gradient, zero velocity

  Tensor w3 = Tensor::scalar(1.0, true);
  SgdOptimizer opt3({w3}, 0.1, 0.9);
  w3.grad()[0] = 1.0;
  opt3.step();
  CHECK(w3.item() == doctest::Approx(0.9));  // first step: -0.1
  opt3.step();                               // same gradient, momentum kicks in
  CHECK(w3.item() == doctest::Approx(0.71)); // second step: -0.19
}

TEST_CASE("gradient oracle: randomized trials across all differentiable ops") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({2, 2, 2, 3, 3}, rng);
    Tensor w = random_tensor({2, 1, 1, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    Conv3dSpec spec;
    spec.padding = {0, 1, 1};
    spec.groups = 2;
    Tensor probe = conv3d(nullptr, x, w, b, spec);
    const std::vector<double> ws = random_weights(probe.numel(), rng);
    const double err = grad_check({x, w, b}, [&](Tape* tape) {
      return weighted_sum(tape, relu(tape, conv3d(tape, x, w, b, spec)), ws);
    });
    CHECK(err < 1e-5);
  }
}
