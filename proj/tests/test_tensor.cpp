#include <gtest/gtest.h>

#include "deesco/ops.hpp"
#include "deesco/tensor.hpp"

using namespace deesco;

TEST(Tensor, ShapeValueInvariant) {
  Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(Tensor::from_values({2, 3}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, ScalarItem) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.25).item(), 4.25);
  Tensor v = Tensor::from_values({2}, {1.0, 2.0});
  EXPECT_THROW(v.item(), UsageError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_values({3}, {1.0, -2.0, 5.0}, true);
  backward(sum(x));
  ASSERT_TRUE(x.has_grad());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 1.0);
}

TEST(Backward, DiamondGraphSumsBothPaths) {
  // y = x*x + 3x -> dy/dx = 2x + 3
  Tensor x = Tensor::from_values({2}, {1.5, -0.5}, true);
  Tensor y = sum(add(mul(x, x), scale(x, 3.0)));
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 * 1.5 + 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0 * -0.5 + 3.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor y = mul(x, x);
  EXPECT_THROW(backward(y), UsageError);
}

TEST(Backward, GradsAccumulateAcrossCalls) {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor y = sum(x);
  backward(y);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  x.clear_grad();
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Backward, ConstantLossIsNoop) {
  Tensor c = Tensor::from_values({}, {7.0});
  backward(sum(c));  // nothing requires grad; must not throw
}

// Any valid reverse-topological schedule must produce identical gradients.
TEST(Backward, OrderInvariance) {
  auto build_grads = [](std::uint64_t order_seed, bool shuffled) {
    Rng rng(99);
    Tensor x = Tensor::randn({4, 5}, rng, 1.0, true);
    Tensor w = Tensor::randn({3, 5}, rng, 0.5, true);
    Tensor b = Tensor::randn({3}, rng, 0.1, true);
    Tensor h = relu(dense(x, w, b));
    Tensor loss = add(sum(mul(h, h)), scale(sum(x), 0.25));
    if (shuffled)
      backward_shuffled(loss, order_seed);
    else
      backward(loss);
    std::vector<std::vector<double>> grads;
    for (const Tensor& t : {x, w, b})
      grads.emplace_back(t.grad().begin(), t.grad().end());
    return grads;
  };
  auto ref = build_grads(0, false);
  for (std::uint64_t seed : {1ull, 17ull, 123456789ull}) {
    auto got = build_grads(seed, true);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      for (std::size_t j = 0; j < ref[i].size(); ++j)
        EXPECT_DOUBLE_EQ(got[i][j], ref[i][j]) << "input " << i << "[" << j
                                               << "] seed " << seed;
  }
}

TEST(Ops, ReluValues) {
  Tensor x = Tensor::from_values({2}, {-1.0, 2.0});
  Tensor y = relu(x);
  EXPECT_DOUBLE_EQ(y.at(0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(1), 2.0);
}

TEST(Ops, ReshapeRoundTrip) {
  std::vector<double> v(16384);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  Tensor x = Tensor::from_values({1, 16384}, v);
  Tensor y = reshape(reshape(x, {128, 128}), {1, 16384});
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(y.at(i), v[i]);
  EXPECT_THROW(reshape(x, {128, 127}), ShapeError);
}

TEST(Ops, ConcatChannels) {
  // 2-channel + 3-channel maps -> 5-channel, values in the right slots.
  Tensor a = Tensor::full({1, 2, 2, 2}, 1.0);
  Tensor b = Tensor::full({1, 3, 2, 2}, 2.0);
  Tensor c = concat_channels(a, b);
  ASSERT_EQ(c.shape(), (Shape{1, 5, 2, 2}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(c.at(i), 1.0);
  for (std::size_t i = 8; i < 20; ++i) EXPECT_DOUBLE_EQ(c.at(i), 2.0);
  Tensor bad = Tensor::full({1, 3, 2, 3}, 0.0);
  EXPECT_THROW(concat_channels(a, bad), ShapeError);
}

TEST(Ops, OuterProductHandValues) {
  Tensor a = Tensor::from_values({1, 2}, {1.0, 2.0});  // horizontal
  Tensor b = Tensor::from_values({1, 2}, {3.0, 4.0});  // vertical
  Tensor h = outer_product(a, b);
  ASSERT_EQ(h.shape(), (Shape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(h.at(0), 3.0);
  EXPECT_DOUBLE_EQ(h.at(1), 6.0);
  EXPECT_DOUBLE_EQ(h.at(2), 4.0);
  EXPECT_DOUBLE_EQ(h.at(3), 8.0);

  Tensor az = Tensor::zeros({1, 2});
  Tensor hz = outer_product(az, b);
  for (std::size_t i = 0; i < hz.numel(); ++i) EXPECT_DOUBLE_EQ(hz.at(i), 0.0);
}
