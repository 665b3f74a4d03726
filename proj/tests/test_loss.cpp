#include <gtest/gtest.h>

#include <cmath>

#include "deesco/ensemble.hpp"
#include "deesco/gradcheck.hpp"
#include "deesco/loss.hpp"
#include "test_util.hpp"

using namespace deesco;
using deesco::testing::make_random_batch;
using deesco::testing::tiny_config;

TEST(L2GazeLoss, HandValues) {
  Tensor t = Tensor::from_values({1, 2}, {0.3, -0.4});
  Tensor zero = Tensor::zeros({1, 2});
  EXPECT_DOUBLE_EQ(l2_gaze_loss(t, t).item(), 0.0);
  EXPECT_DOUBLE_EQ(l2_gaze_loss(zero, t).item(), 0.25);
}

TEST(L2GazeLoss, MatchesNaivePerSampleMean) {
  Rng rng(3);
  const std::size_t b = 7;
  Tensor pred = Tensor::randn({b, 2}, rng);
  Tensor truth = Tensor::randn({b, 2}, rng);
  double naive = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double dg = pred.at(i * 2) - truth.at(i * 2);
    const double db = pred.at(i * 2 + 1) - truth.at(i * 2 + 1);
    naive += dg * dg + db * db;
  }
  naive /= static_cast<double>(b);
  EXPECT_NEAR(l2_gaze_loss(pred, truth).item(), naive, 1e-12);
}

TEST(SampleMu, NormalizationAndDeterminism) {
  auto subsets = enumerate_subsets(3);
  Rng rng(17);
  auto mu = sample_mu(rng, subsets, 0);
  ASSERT_EQ(mu.weights.size(), 6u);
  double total = 0.0;
  for (double w : mu.weights) {
    EXPECT_GT(w, 0.0);
    EXPECT_LT(w, 1.0);
    total += w;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);

  Rng rng2(17);
  auto mu2 = sample_mu(rng2, subsets, 0);
  for (std::size_t i = 0; i < mu.weights.size(); ++i)
    EXPECT_EQ(mu.weights[i], mu2.weights[i]);

  // Single subset normalizes to exactly 1.
  std::vector<std::vector<int>> single{{0}};
  Rng rng3(1);
  auto mu1 = sample_mu(rng3, single);
  EXPECT_DOUBLE_EQ(mu1.weights[0], 1.0);

  // N=1 has no strict subsets.
  Rng rng4(1);
  auto mu0 = sample_mu(rng4, {});
  EXPECT_TRUE(mu0.empty());
}

// Normalized independent uniforms are exchangeable, so each subset's mean
// weight converges to 1/(2^N-2).
TEST(SampleMu, ExpectationSanity) {
  auto subsets = enumerate_subsets(3);
  const std::size_t k = subsets.size();
  const int draws = 1000;
  std::vector<double> sums(k, 0.0), sq(k, 0.0);
  Rng rng(2025);
  for (int d = 0; d < draws; ++d) {
    auto mu = sample_mu(rng, subsets, d);
    for (std::size_t i = 0; i < k; ++i) {
      sums[i] += mu.weights[i];
      sq[i] += mu.weights[i] * mu.weights[i];
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    const double mean = sums[i] / draws;
    const double var = sq[i] / draws - mean * mean;
    const double se = std::sqrt(var / draws);
    EXPECT_NEAR(mean, 1.0 / static_cast<double>(k), 3.0 * se)
        << "subset " << subset_key(subsets[i]);
  }
}

TEST(CombinatoryLoss, HandValuesAndSelector) {
  Tensor truth = Tensor::zeros({1, 2});
  // L = 1.0 and L = 2.0 by construction.
  Tensor p1 = Tensor::from_values({1, 2}, {1.0, 0.0});
  Tensor p2 = Tensor::from_values({1, 2}, {1.0, 1.0});
  std::vector<std::vector<int>> subsets{{0}, {1}};
  std::vector<Tensor> preds{p1, p2};

  MuWeights mu;
  mu.subsets = subsets;
  mu.weights = {0.3, 0.7};
  auto cl = combinatory_loss(subsets, preds, truth, mu);
  EXPECT_NEAR(cl.value.item(), 0.3 * 1.0 + 0.7 * 2.0, 1e-12);
  ASSERT_EQ(cl.per_subset.size(), 2u);
  EXPECT_DOUBLE_EQ(cl.per_subset[0].item(), 1.0);
  EXPECT_DOUBLE_EQ(cl.per_subset[1].item(), 2.0);

  // Concentrating mu selects a single subset loss.
  mu.weights = {1.0, 0.0};
  EXPECT_DOUBLE_EQ(combinatory_loss(subsets, preds, truth, mu).value.item(),
                   1.0);

  // Key mismatch is a usage error.
  MuWeights bad;
  bad.subsets = {{0}, {2}};
  bad.weights = {0.5, 0.5};
  EXPECT_THROW(combinatory_loss(subsets, preds, truth, bad), UsageError);
}

TEST(CombinatoryLoss, LinearInSubsetLosses) {
  Rng rng(8);
  Tensor truth = Tensor::zeros({2, 2});
  std::vector<std::vector<int>> subsets{{0}, {1}, {0, 1}};
  std::vector<Tensor> preds, preds_scaled;
  const double root2 = std::sqrt(2.0);
  for (int i = 0; i < 3; ++i) {
    Tensor p = Tensor::randn({2, 2}, rng);
    preds.push_back(p);
    preds_scaled.push_back(scale(p, root2));  // doubles every L^I
  }
  MuWeights mu;
  mu.subsets = subsets;
  mu.weights = {0.2, 0.5, 0.3};
  const double base = combinatory_loss(subsets, preds, truth, mu).value.item();
  const double doubled =
      combinatory_loss(subsets, preds_scaled, truth, mu).value.item();
  EXPECT_NEAR(doubled, 2.0 * base, 1e-12 * std::max(1.0, std::abs(doubled)));
}

TEST(CombinatoryLoss, MatchesIndependentWeightedSum) {
  Rng rng(9);
  auto subsets = enumerate_subsets(3);
  Tensor truth = Tensor::randn({3, 2}, rng);
  std::vector<Tensor> preds;
  for (std::size_t i = 0; i < subsets.size(); ++i)
    preds.push_back(Tensor::randn({3, 2}, rng));
  Rng mu_rng(10);
  auto mu = sample_mu(mu_rng, subsets);
  auto cl = combinatory_loss(subsets, preds, truth, mu);
  double recomputed = 0.0;
  for (std::size_t i = 0; i < subsets.size(); ++i)
    recomputed += mu.weights[i] * l2_gaze_loss(preds[i], truth).item();
  EXPECT_NEAR(cl.value.item(), recomputed, 1e-12);
}

TEST(TotalLoss, HandValues) {
  Tensor l0 = Tensor::scalar(0.2);
  Tensor lc = Tensor::scalar(0.1);
  EXPECT_DOUBLE_EQ(total_loss(l0, lc, 0.0).item(), 0.2);
  EXPECT_DOUBLE_EQ(total_loss(l0, lc, 1.0).item(), 0.2 + 0.1);
  EXPECT_NEAR(total_loss(l0, lc, 5.0).item(), 0.7, 1e-15);
  EXPECT_THROW(total_loss(l0, lc, -0.5), UsageError);
}

// Relabeling branches by a permutation permutes the per-subset losses.
TEST(CombinatoryLoss, PermutationConsistency) {
  Rng rng(11);
  std::vector<Tensor> hs;
  for (int i = 0; i < 3; ++i) hs.push_back(Tensor::randn({1, 8, 8}, rng));
  Tensor truth = Tensor::from_values({1, 2}, {0.2, -0.3});
  const std::vector<int> pi{2, 0, 1};  // relabeling

  auto subset_loss = [&](const std::vector<Tensor>& members) {
    Tensor lam = Tensor::full({members.size()}, 1.0 / members.size());
    Tensor pred = soft_argmax(spatial_softmax(merge_heatmaps(lam, members)));
    return l2_gaze_loss(pred, truth).item();
  };

  for (const auto& subset : enumerate_subsets(3)) {
    std::vector<Tensor> orig, relabeled;
    std::vector<int> mapped;
    for (int i : subset) mapped.push_back(pi[i]);
    std::sort(mapped.begin(), mapped.end());
    for (int i : subset) orig.push_back(hs[i]);
    // The relabeled model's subset `subset` uses branches pi(subset); its
    // members are gathered in sorted order of the new indices.
    for (std::size_t j = 0; j < subset.size(); ++j) {
      // member with new index mapped[j] is the old branch pi^{-1}(mapped[j])
      int old_idx = -1;
      for (int i = 0; i < 3; ++i)
        if (pi[i] == mapped[j]) old_idx = i;
      relabeled.push_back(hs[old_idx]);
    }
    // Permuting member order inside the uniform mix cannot change the loss.
    EXPECT_NEAR(subset_loss(orig), subset_loss(relabeled), 1e-12);
  }
}

// Gradient coverage through a real model: nu > 0 reaches every strict-subset
// lambda; nu = 0 leaves them exactly zero while the full lambda still learns.
TEST(CombinatoryLoss, GradientCoverage) {
  std::vector<BranchConfig> cfgs{tiny_config(BranchKind::Rh),
                                 tiny_config(BranchKind::Ou),
                                 tiny_config(BranchKind::Fc)};
  for (double nu : {1.0, 0.0}) {
    EnsembleModel model(cfgs, 31);
    Rng rng(6);
    auto batch = make_random_batch(2, 16, 16, rng);
    auto out = model.forward(batch, Mode::Train);
    Tensor l0 = l2_gaze_loss(out.full_pred, batch.target);
    std::vector<std::vector<int>> subsets;
    std::vector<Tensor> preds;
    for (const auto& so : out.subsets) {
      subsets.push_back(so.subset);
      preds.push_back(so.pred);
    }
    Rng mu_rng(7);
    auto mu = sample_mu(mu_rng, subsets);
    auto cl = combinatory_loss(subsets, preds, batch.target, mu);
    Tensor lt = total_loss(l0, cl.value, nu);
    backward(lt);

    for (const auto& c : model.strict_combiners()) {
      ASSERT_TRUE(c.lambdas.has_grad()) << subset_key(c.subset);
      bool nonzero = false;
      for (double gv : c.lambdas.grad()) nonzero |= gv != 0.0;
      if (nu > 0.0)
        EXPECT_TRUE(nonzero) << "nu=1 subset " << subset_key(c.subset);
      else
        EXPECT_FALSE(nonzero) << "nu=0 subset " << subset_key(c.subset);
    }
    bool full_nonzero = false;
    for (double gv : model.full_combiner().lambdas.grad())
      full_nonzero |= gv != 0.0;
    EXPECT_TRUE(full_nonzero);
  }
}

// Miniature end-to-end check: the gradient of the total loss with respect to
// every parameter of every branch kind matches finite differences.
TEST(FullModel, EveryParameterMatchesFiniteDifferences) {
  std::vector<BranchConfig> cfgs{
      tiny_config(BranchKind::Ba), tiny_config(BranchKind::Rh),
      tiny_config(BranchKind::Ou), tiny_config(BranchKind::Fc)};
  EnsembleModel model(cfgs, 123);
  Rng rng(5);
  auto batch = make_random_batch(2, 16, 16, rng);
  auto subsets = model.strict_subsets();
  Rng mu_rng(6);
  auto mu = sample_mu(mu_rng, subsets);

  auto f = [&] {
    auto out = model.forward(batch, Mode::Train);
    Tensor l0 = l2_gaze_loss(out.full_pred, batch.target);
    std::vector<Tensor> preds;
    for (const auto& so : out.subsets) preds.push_back(so.pred);
    return total_loss(l0, combinatory_loss(subsets, preds, batch.target, mu).value,
                      1.0);
  };

  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  for (const auto& p : model.parameters()) {
    inputs.push_back(p.tensor);
    names.push_back(p.name);
  }
  GradCheckOptions opt;
  opt.max_coords_per_input = 6;  // subsample coordinates of each tensor
  auto rep = grad_check(f, inputs, names, opt);
  for (const auto& pi : rep.inputs)
    EXPECT_LT(pi.max_rel_err, 1e-3) << pi.name;
}

// Finite-difference oracle for dL_comb/d(branch parameter) on a real model.
TEST(CombinatoryLoss, GradCheckThroughModel) {
  std::vector<BranchConfig> cfgs{tiny_config(BranchKind::Rh),
                                 tiny_config(BranchKind::Ou),
                                 tiny_config(BranchKind::Fc)};
  EnsembleModel model(cfgs, 77);
  Rng rng(8);
  auto batch = make_random_batch(2, 16, 16, rng);
  auto subsets = model.strict_subsets();
  Rng mu_rng(9);
  auto mu = sample_mu(mu_rng, subsets);

  auto f = [&] {
    auto out = model.forward(batch, Mode::Train);
    std::vector<Tensor> preds;
    for (const auto& so : out.subsets) preds.push_back(so.pred);
    return combinatory_loss(subsets, preds, batch.target, mu).value;
  };

  // A few representative parameters: one per branch plus one subset lambda.
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& ps = model.predictor(i).parameters();
    inputs.push_back(ps[0].tensor);  // first trunk conv weight
    names.push_back(ps[0].name);
  }
  inputs.push_back(model.strict_combiners()[3].lambdas);
  names.push_back("combiner/0,1/lambda");

  GradCheckOptions opt;
  opt.max_coords_per_input = 24;
  auto rep = grad_check(f, inputs, names, opt);
  EXPECT_TRUE(rep.passed()) << "max rel err " << rep.max_rel_err;
}
