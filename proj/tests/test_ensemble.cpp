#include <gtest/gtest.h>

#include <set>

#include "deesco/ensemble.hpp"
#include "test_util.hpp"

using namespace deesco;
using deesco::testing::make_random_batch;
using deesco::testing::tiny_config;

namespace {

std::vector<BranchConfig> tiny_trio() {
  return {tiny_config(BranchKind::Rh), tiny_config(BranchKind::Ou),
          tiny_config(BranchKind::Fc)};
}

}  // namespace

TEST(EnumerateSubsets, CountsAndOrder) {
  auto s3 = enumerate_subsets(3);
  const std::vector<std::vector<int>> expect{{0}, {1}, {2}, {0, 1}, {0, 2}, {1, 2}};
  EXPECT_EQ(s3, expect);

  EXPECT_TRUE(enumerate_subsets(1).empty());
  for (int n : {1, 2, 3, 4, 5}) {
    auto subs = enumerate_subsets(n);
    EXPECT_EQ(subs.size(), (std::size_t{1} << n) - 2) << "N=" << n;
    std::set<std::vector<int>> uniq(subs.begin(), subs.end());
    EXPECT_EQ(uniq.size(), subs.size()) << "duplicates at N=" << n;
    for (const auto& s : subs) {
      EXPECT_GE(s.size(), 1u);
      EXPECT_LT(s.size(), static_cast<std::size_t>(n));
      for (int i : s) {
        EXPECT_GE(i, 0);
        EXPECT_LT(i, n);
      }
    }
  }
  EXPECT_THROW(enumerate_subsets(0), UsageError);
}

TEST(SubsetKey, Formatting) {
  EXPECT_EQ(subset_key({0}), "0");
  EXPECT_EQ(subset_key({0, 2}), "0,2");
  EXPECT_EQ(subset_key({0, 1, 2}), "0,1,2");
}

TEST(EnsembleModel, CombinerLayout) {
  EnsembleModel model(tiny_trio(), 5);
  EXPECT_EQ(model.size(), 3u);
  EXPECT_EQ(model.strict_combiners().size(), 6u);
  EXPECT_TRUE(model.full_combiner().is_full);
  EXPECT_EQ(model.full_combiner().subset, (std::vector<int>{0, 1, 2}));
  // Lambda initialization: 1/N for the full set, 1/|I| for subsets.
  for (const auto& c : model.strict_combiners()) {
    EXPECT_EQ(c.lambdas.numel(), c.subset.size());
    for (std::size_t i = 0; i < c.lambdas.numel(); ++i)
      EXPECT_DOUBLE_EQ(c.lambdas.at(i), 1.0 / c.subset.size());
  }
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_DOUBLE_EQ(model.full_combiner().lambdas.at(i), 1.0 / 3.0);
  // Lambda parameters appear under combiner/{subset}/lambda.
  int lambda_params = 0;
  for (const auto& p : model.parameters())
    if (p.name.rfind("combiner/", 0) == 0) ++lambda_params;
  EXPECT_EQ(lambda_params, 7);  // 2^3 - 1
}

TEST(EnsembleModel, MismatchedHeatmapSizesRejected) {
  auto cfgs = tiny_trio();
  cfgs[1].heatmap_size = 32;
  EXPECT_THROW(EnsembleModel(cfgs, 5), ConfigError);
}

TEST(EnsembleForward, BranchesRunExactlyOnce) {
  EnsembleModel model(tiny_trio(), 5);
  Rng rng(6);
  auto batch = make_random_batch(2, 16, 16, rng);
  auto out = model.forward(batch, Mode::Train);
  for (std::size_t i = 0; i < model.size(); ++i)
    EXPECT_EQ(model.predictor(i).forward_calls(), 1) << "branch " << i;
  EXPECT_EQ(out.branch_heatmaps.size(), 3u);
  EXPECT_EQ(out.subsets.size(), 6u);
  EXPECT_EQ(out.full_pred.shape(), (Shape{2, 2}));
}

TEST(EnsembleForward, SingleBranchModel) {
  std::vector<BranchConfig> one{tiny_config(BranchKind::Rh)};
  EnsembleModel model(one, 5);
  EXPECT_TRUE(model.strict_combiners().empty());
  Rng rng(6);
  auto batch = make_random_batch(2, 16, 16, rng);
  auto out = model.forward(batch, Mode::Train);
  EXPECT_TRUE(out.subsets.empty());
  // Full lambda initializes to 1.0, so the merged map equals the branch map.
  for (std::size_t i = 0; i < out.full_merged.numel(); ++i)
    EXPECT_DOUBLE_EQ(out.full_merged.at(i), out.branch_heatmaps[0].at(i));
}

// With identical member heatmaps and the uniform initial lambdas, every
// subset estimate equals the full estimate.
TEST(EnsembleForward, EqualHeatmapsGiveEqualEstimates) {
  Rng rng(7);
  Tensor h = Tensor::randn({2, 8, 8}, rng);
  auto decode = [](const Tensor& m) {
    return soft_argmax(spatial_softmax(m));
  };
  std::vector<Tensor> members3{h, h, h};
  Tensor lam3 = Tensor::full({3}, 1.0 / 3.0);
  Tensor full_pred = decode(merge_heatmaps(lam3, members3));
  for (const auto& subset : enumerate_subsets(3)) {
    std::vector<Tensor> members(subset.size(), h);
    Tensor lam = Tensor::full({subset.size()}, 1.0 / subset.size());
    Tensor pred = decode(merge_heatmaps(lam, members));
    for (std::size_t i = 0; i < pred.numel(); ++i)
      EXPECT_NEAR(pred.at(i), full_pred.at(i), 1e-12);
  }
}

// Decoded estimates are convex combinations of grid coordinates, so they can
// never leave [-1,1]^2.
TEST(EnsembleForward, EstimatesStayInRange) {
  EnsembleModel model(tiny_trio(), 99);
  // Make the lambdas non-trivial.
  Rng lrng(1);
  for (auto& c : model.strict_combiners())
    for (auto& v : c.lambdas.raw_values()) v = lrng.uniform(-2.0, 2.0);
  for (auto& v : model.full_combiner().lambdas.raw_values())
    v = lrng.uniform(-2.0, 2.0);

  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto batch = make_random_batch(2, 16, 16, rng);
    auto out = model.forward(batch, Mode::Eval);
    auto in_range = [](const Tensor& p) {
      for (std::size_t i = 0; i < p.numel(); ++i)
        if (p.at(i) < -1.0 || p.at(i) > 1.0) return false;
      return true;
    };
    ASSERT_TRUE(in_range(out.full_pred)) << "trial " << trial;
    for (const auto& so : out.subsets)
      ASSERT_TRUE(in_range(so.pred)) << "trial " << trial;
  }
}

TEST(EnsembleModel, ArchHashDetectsShapeChanges) {
  EnsembleModel a(tiny_trio(), 5);
  EnsembleModel b(tiny_trio(), 6);  // same shape, different weights
  EXPECT_EQ(a.arch_hash(), b.arch_hash());
  auto cfgs = tiny_trio();
  cfgs[0].conv_channels = {8};
  EnsembleModel c(cfgs, 5);
  EXPECT_NE(a.arch_hash(), c.arch_hash());
}
