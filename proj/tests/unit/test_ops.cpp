#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "scvm/ops.hpp"
#include "scvm/rng.hpp"

using namespace scvm;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

}  // namespace

TEST(Ops, LayerNormOfConstantRowIsZero) {
  auto x = Tensor<float>::from({1, 3}, {5.0f, 5.0f, 5.0f});
  auto y = ops::layer_norm(x);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Ops, SigmoidOfGateBias) {
  auto y = ops::sigmoid(Tensor<float>::from({1}, {-2.2f}));
  EXPECT_NEAR(y[0], 0.0998, 1e-3);
}

TEST(Ops, PoolingOverTokens) {
  auto x = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ops::max_pool(x).to_vector(), (std::vector<float>{3, 4}));
  EXPECT_EQ(ops::mean_pool(x).to_vector(), (std::vector<float>{2, 3}));
}

TEST(Ops, MaxPoolTieRoutesToFirstRow) {
  auto x = Tensor<double>::from({3, 1}, {2.0, 2.0, 1.0}).set_requires_grad(true);
  auto y = ops::max_pool(x);
  EXPECT_TRUE(graph_stats(y).non_differentiable);
  ops::sum(y).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto y = ops::softmax(random_tensor({4, 7}, seed, -10.0, 10.0));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += y.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Ops, LayerNormRowStatistics) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto y = ops::layer_norm(random_tensor({5, 16}, seed, -10.0, 10.0));
    for (std::size_t r = 0; r < 5; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c);
      mean /= 16;
      for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
      var /= 16;
      EXPECT_LT(std::abs(mean), 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-5);
    }
  }
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({3, 2});
  try {
    ops::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::matmul(a, a), ShapeError);
}

TEST(Ops, BroadcastOnlyVectorOverGrid) {
  auto grid = Tensor<float>::zeros({4, 3});
  EXPECT_NO_THROW(ops::add(grid, Tensor<float>::zeros({3})));
  EXPECT_THROW(ops::add(grid, Tensor<float>::zeros({4})), ShapeError);
  EXPECT_THROW(ops::add(Tensor<float>::zeros({3}), grid), ShapeError);
}

TEST(Ops, NonFiniteInputRejectedInVerificationMode) {
  auto bad = Tensor<double>::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(ops::tanh(bad), NumericalError);
  auto inf = Tensor<double>::from({2}, {1.0, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(ops::sum(inf), NumericalError);
}

TEST(Ops, CrossEntropyRejectsInvalidTarget) {
  EXPECT_THROW(ops::cross_entropy(Tensor<float>::zeros({4}), 4), std::out_of_range);
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogK) {
  auto loss = ops::cross_entropy(Tensor<double>::zeros({12}), 5);
  EXPECT_NEAR(loss.item(), std::log(12.0), 1e-12);
}

TEST(Ops, PatchifyRasterOrder) {
  // 4x4 single-channel image holding its pixel index.
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i);
  auto p = ops::patchify(Tensor<float>::from({4, 4, 1}, v), 2);
  ASSERT_EQ(p.shape(), (Shape{4, 4}));
  EXPECT_EQ(ops::row(p, 0).to_vector(), (std::vector<float>{0, 1, 4, 5}));
  EXPECT_EQ(ops::row(p, 3).to_vector(), (std::vector<float>{10, 11, 14, 15}));
}

TEST(Ops, CosineGuardOnZeroVector) {
  auto z = Tensor<double>::zeros({3});
  auto v = Tensor<double>::from({3}, {1, 2, 3});
  EXPECT_EQ(ops::cosine_similarity(z, v).item(), 0.0);
}

TEST(Ops, GeluMatchesTanhApproximation) {
  const double x = 0.7;
  const double expected = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
  EXPECT_NEAR(ops::gelu(Tensor<double>::from({1}, {x}))[0], expected, 1e-15);
}
