// Copyright (c) 2026, The DeMoSeg-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "demoseg/diffops.hpp"
#include "demoseg/error.hpp"
#include "demoseg/gradcheck.hpp"
#include "demoseg/params.hpp"
#include "demoseg/rng.hpp"

namespace demoseg {
namespace {

using V = Var<double>;

Tensor<double> randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(s));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

// direct loop, zero padding
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, int stride) {
  const auto ci = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto co = w.dim(0), k = w.dim(2), p = k / 2;
  const auto od = (D + 2 * p - k) / stride + 1, oh = (H + 2 * p - k) / stride + 1, ow = (W + 2 * p - k) / stride + 1;
  Tensor<double> y({co, od, oh, ow});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t z = 0; z < od; ++z)
      for (std::int64_t r = 0; r < oh; ++r)
        for (std::int64_t c = 0; c < ow; ++c) {
          double acc = 0;
          for (std::int64_t i = 0; i < ci; ++i)
            for (std::int64_t a = 0; a < k; ++a)
              for (std::int64_t b = 0; b < k; ++b)
                for (std::int64_t e = 0; e < k; ++e) {
                  auto zz = z * stride + a - p, rr = r * stride + b - p, cc = c * stride + e - p;
                  if (zz < 0 || rr < 0 || cc < 0 || zz >= D || rr >= H || cc >= W) continue;
                  acc += x[((i * D + zz) * H + rr) * W + cc] * w[(((o * ci + i) * k + a) * k + b) * k + e];
                }
          y[((o * od + z) * oh + r) * ow + c] = acc;
        }
  return y;
}

TEST(Conv3d, IdentityDeltaKernel) {
  auto x = randn({3, 5, 4, 6}, 1);
  Tensor<double> w({3, 3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w[(((c * 3 + c) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
  auto y = ops::conv3d(V::constant(x), V::constant(w), V{});
  EXPECT_EQ(y.value(), x);
}

TEST(Conv3d, MatchesDirectLoop) {
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      auto x = randn({2, 5, 6, 7}, 10 + stride + k);
      auto w = randn({3, 2, k, k, k}, 20 + stride + k);
      auto y = ops::conv3d(V::constant(x), V::constant(w), V{}, stride);
      auto ref = conv_oracle(x, w, stride);
      ASSERT_EQ(y.shape(), ref.shape());
      for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv3d, ShapeErrors) {
  auto x = V::constant(randn({2, 4, 4, 4}, 1));
  EXPECT_THROW(ops::conv3d(x, V::constant(randn({3, 3, 3, 3, 3}, 2)), V{}), ShapeError);
  EXPECT_THROW(ops::conv3d(x, V::constant(randn({3, 2, 2, 2, 2}, 2)), V{}), ShapeError);
  EXPECT_THROW(ops::conv3d(V::constant(randn({2, 4, 4}, 1)), V::constant(randn({3, 2, 3, 3, 3}, 2)), V{}),
               ShapeError);
}

TEST(ConvTranspose3d, DoublesExtent) {
  auto x = V::constant(randn({4, 3, 2, 5}, 3));
  auto w = V::constant(randn({4, 2, 2, 2, 2}, 4));
  auto y = ops::conv_transpose3d(x, w, V{});
  EXPECT_EQ(y.shape(), (Shape{2, 6, 4, 10}));
  // each output voxel sees exactly one input voxel
  const auto& xv = x.value();
  const auto& wv = w.value();
  double ref = 0;
  for (int i = 0; i < 4; ++i) ref += xv[((i * 3 + 1) * 2 + 0) * 5 + 2] * wv[(((i * 2 + 1) * 2 + 1) * 2 + 0) * 2 + 1];
  EXPECT_NEAR(y.value()[((1 * 6 + 3) * 4 + 0) * 10 + 5], ref, 1e-12);
}

TEST(Softmax, ConstantVector) {
  auto y = ops::softmax(V::constant(Tensor<double>({4}, 3.7)), 0);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.value()[i], 0.25);
}

TEST(Softmax, PositiveAndNormalised) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = randn({3, 4, 5}, seed, 10.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = ops::softmax(V::constant(x), axis).value();
      Shape s = x.shape();
      std::int64_t outer = 1, inner = 1;
      for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
      for (std::size_t a = axis + 1; a < 3; ++a) inner *= s[a];
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          double acc = 0;
          for (std::int64_t k = 0; k < s[axis]; ++k) {
            double v = y[(o * s[axis] + k) * inner + i];
            EXPECT_GT(v, 0.0);
            acc += v;
          }
          EXPECT_NEAR(acc, 1.0, 1e-6);
        }
    }
  }
}

TEST(Softmax, EmptyAxis) {
  EXPECT_THROW(ops::softmax(V::constant(Tensor<double>({2, 0})), 1), ShapeError);
}

TEST(GlobalAvgPool, MatchesExplicitLoop) {
  auto x = randn({8, 2, 2, 2}, 5);
  auto y = ops::global_avg_pool(V::constant(x));
  ASSERT_EQ(y.shape(), (Shape{8}));
  for (int c = 0; c < 8; ++c) {
    double acc = 0;
    for (int i = 0; i < 8; ++i) acc += x[c * 8 + i];
    EXPECT_NEAR(y.value()[c], acc / 8.0, 1e-15);
  }
}

TEST(InstanceNorm, ZeroMeanUnitVariance) {
  auto x = randn({3, 4, 4, 4}, 6, 5.0);
  auto y = ops::instance_norm(V::constant(x), V::constant(Tensor<double>({3}, 1.0)),
                              V::constant(Tensor<double>({3}, 0.0)))
               .value();
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 64; ++i) m += y[c * 64 + i];
    m /= 64;
    for (int i = 0; i < 64; ++i) v += (y[c * 64 + i] - m) * (y[c * 64 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 64, 1.0, 1e-3);
  }
}

TEST(Elementwise, ShapeMismatch) {
  auto a = V::constant(Tensor<double>({2, 3}));
  auto b = V::constant(Tensor<double>({3, 2}));
  EXPECT_THROW(ops::add(a, b), ShapeError);
  EXPECT_THROW(ops::mul(a, b), ShapeError);
  EXPECT_THROW(ops::concat(std::vector<V>{V::constant(Tensor<double>({2, 3})), V::constant(Tensor<double>({2, 4}))}, 0),
               ShapeError);
}

TEST(ChannelGather, Permutes) {
  auto x = randn({4, 2, 2, 2}, 7);
  auto y = ops::channel_gather(V::constant(x), {2, 0, 3, 1}).value();
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(y[0 * 8 + i], x[2 * 8 + i]);
    EXPECT_EQ(y[1 * 8 + i], x[0 * 8 + i]);
    EXPECT_EQ(y[2 * 8 + i], x[3 * 8 + i]);
    EXPECT_EQ(y[3 * 8 + i], x[1 * 8 + i]);
  }
  EXPECT_THROW(ops::channel_gather(V::constant(x), {0, 1, 2, 4}), ShapeError);
}

TEST(Backward, AccumulatesIntoSharedLeaf) {
  auto x = V::leaf(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
  auto y = ops::sum(ops::add(ops::mul(x, x), x));
  backward(y);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * (i + 1) + 1.0);
}

TEST(Backward, NonScalarRoot) {
  auto x = V::leaf(Tensor<double>({3}, 1.0));
  EXPECT_THROW(backward(ops::scale(x, 2.0)), ShapeError);
}

TEST(Detach, BlocksGradient) {
  auto x = V::leaf(Tensor<double>({3}, 1.0));
  auto y = ops::sum(ops::add(ops::detach(x), ops::scale(x, 3.0)));
  backward(y);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 3.0);
}

TEST(GradCheck, SumOfConv) {
  auto rep = grad_check(
      "sum_conv3d",
      [](const std::vector<V>& in) { return ops::sum(ops::conv3d(in[0], in[1], in[2])); },
      {randn({2, 4, 4, 4}, 1), randn({3, 2, 3, 3, 3}, 2), randn({3}, 3)});
  EXPECT_TRUE(rep.pass) << rep.max_rel_error;
  EXPECT_LE(rep.max_rel_error, 1e-4);
}

TEST(GradCheck, WeightedSoftmax) {
  auto c = randn({5, 3}, 9);
  auto rep = grad_check(
      "softmax_dot",
      [c](const std::vector<V>& in) { return ops::sum(ops::mul(ops::softmax(in[0], 0), V::constant(c))); },
      {randn({5, 3}, 8)});
  EXPECT_TRUE(rep.pass) << rep.max_rel_error;
}

TEST(GradCheck, CorruptedGradientFails) {
  // y = 2x with a backward that reports 2.2
  auto bad = [](const V& x) {
    Tensor<double> v = x.value();
    for (auto& e : v.storage()) e *= 2.0;
    return make_op<double>("bad_scale", std::move(v), {x}, [](Node<double>& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.2 * self.grad[i];
    });
  };
  auto c = randn({6}, 11);
  auto rep = grad_check(
      "corrupted", [&](const std::vector<V>& in) { return ops::sum(ops::mul(bad(in[0]), V::constant(c))); },
      {randn({6}, 12)});
  EXPECT_FALSE(rep.pass);
  EXPECT_GT(rep.max_rel_error, 0.05);
}

TEST(GradCheck, NonScalarOutput) {
  EXPECT_THROW(grad_check("vec", [](const std::vector<V>& in) { return ops::scale(in[0], 2.0); }, {randn({3}, 1)}),
               ShapeError);
}

TEST(GradCheck, EveryPrimitiveTwentySeeds) {
  GradSuiteOptions opt;
  opt.seeds = 20;
  auto reports = run_gradient_suite(opt);
  EXPECT_EQ(reports.size(), gradient_suite_cases().size());
  for (const auto& r : reports) {
    EXPECT_EQ(r.trials, 20) << r.op;
    EXPECT_TRUE(r.pass) << r.op << " " << r.max_rel_error;
    EXPECT_LE(r.max_rel_error, 1e-4) << r.op;
  }
}

TEST(Determinism, ForwardBitIdentical) {
  auto x = randn({2, 6, 6, 6}, 21);
  auto w = randn({4, 2, 3, 3, 3}, 22);
  auto run = [&] {
    auto h = ops::conv3d(V::constant(x), V::constant(w), V{}, 2);
    h = ops::leaky_relu(h);
    return ops::softmax(h, 0).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(ParameterStore, SeededByName) {
  ParameterStore<double> a(3), b(3);
  a.kaiming("x.weight", {4, 2, 3, 3, 3}, 54);
  a.kaiming("y.weight", {4}, 4);
  b.kaiming("y.weight", {4}, 4);
  b.kaiming("x.weight", {4, 2, 3, 3, 3}, 54);
  EXPECT_EQ(a.get("x.weight").value(), b.get("x.weight").value());
  EXPECT_EQ(a.get("y.weight").value(), b.get("y.weight").value());
  EXPECT_THROW(a.add("x.weight", Tensor<double>({1})), ContractViolation);
  EXPECT_THROW(a.get("z"), ContractViolation);
  EXPECT_EQ(a.count("x."), 4 * 2 * 27);
}

}  // namespace
}  // namespace demoseg
