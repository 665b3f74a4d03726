#include <gtest/gtest.h>

#include <cmath>

#include "deesco/branches.hpp"
#include "deesco/heatmap.hpp"
#include "deesco/loss.hpp"
#include "test_util.hpp"

using namespace deesco;
using deesco::testing::make_random_batch;
using deesco::testing::tiny_config;

TEST(BranchConfigValidation, GeometryErrors) {
  BranchConfig c = tiny_config(BranchKind::Rh);
  c.heatmap_size = 12;  // not a power of two
  EXPECT_THROW(validate_branch_config(c), ConfigError);
  c.heatmap_size = 4;  // too small
  EXPECT_THROW(validate_branch_config(c), ConfigError);

  c = tiny_config(BranchKind::Fc);
  c.heatmap_size = 8;  // below the 16x16 stage: cannot upsample to it
  EXPECT_THROW(validate_branch_config(c), ConfigError);

  c = tiny_config(BranchKind::Rh);
  c.crop_h = 24;  // 24/16 is not a power of two
  EXPECT_THROW(validate_branch_config(c), ConfigError);

  c = tiny_config(BranchKind::Ba);
  c.gaussian_sigma = 0.0;
  EXPECT_THROW(validate_branch_config(c), ConfigError);
}

TEST(BuildBranch, SameSeedSameParameters) {
  for (BranchKind kind :
       {BranchKind::Ba, BranchKind::Rh, BranchKind::Fc, BranchKind::Ou}) {
    auto a = build_branch(tiny_config(kind), 42);
    auto b = build_branch(tiny_config(kind), 42);
    ASSERT_EQ(a->parameters().size(), b->parameters().size());
    for (std::size_t i = 0; i < a->parameters().size(); ++i) {
      EXPECT_EQ(a->parameters()[i].name, b->parameters()[i].name);
      const auto& ta = a->parameters()[i].tensor;
      const auto& tb = b->parameters()[i].tensor;
      ASSERT_EQ(ta.numel(), tb.numel());
      for (std::size_t j = 0; j < ta.numel(); ++j)
        EXPECT_EQ(ta.at(j), tb.at(j)) << a->parameters()[i].name;
    }
    auto c = build_branch(tiny_config(kind), 43);
    bool any_diff = false;
    for (std::size_t j = 0; j < a->parameters()[0].tensor.numel(); ++j)
      any_diff |= a->parameters()[0].tensor.at(j) != c->parameters()[0].tensor.at(j);
    EXPECT_TRUE(any_diff) << "different seeds must differ";
  }
}

TEST(BranchForward, EveryKindOutputsSquareHeatmap) {
  Rng rng(5);
  auto batch = make_random_batch(2, 16, 16, rng);
  for (BranchKind kind :
       {BranchKind::Ba, BranchKind::Rh, BranchKind::Fc, BranchKind::Ou}) {
    auto wp = build_branch(tiny_config(kind), 7);
    Tensor h = wp->forward(batch, Mode::Train);
    EXPECT_EQ(h.shape(), (Shape{2, 16, 16})) << to_string(kind);
    Tensor he = wp->forward(batch, Mode::Eval);
    EXPECT_EQ(he.shape(), (Shape{2, 16, 16})) << to_string(kind);
  }
}

TEST(BranchForward, DeterministicAcrossRebuilds) {
  Rng rng(6);
  auto batch = make_random_batch(2, 16, 16, rng);
  for (BranchKind kind : {BranchKind::Rh, BranchKind::Fc, BranchKind::Ou}) {
    auto a = build_branch(tiny_config(kind), 11);
    auto b = build_branch(tiny_config(kind), 11);
    Tensor ha = a->forward(batch, Mode::Train);
    Tensor hb = b->forward(batch, Mode::Train);
    for (std::size_t i = 0; i < ha.numel(); ++i)
      EXPECT_EQ(ha.at(i), hb.at(i)) << to_string(kind) << " index " << i;
  }
}

TEST(BranchForward, ZeroFinalRhLayerDecodesToCenter) {
  auto wp = build_branch(tiny_config(BranchKind::Rh), 3);
  for (auto& p : wp->parameters())
    if (p.name.find("head/out/") != std::string::npos)
      for (auto& v : p.tensor.raw_values()) v = 0.0;
  Rng rng(4);
  auto batch = make_random_batch(2, 16, 16, rng);
  Tensor h = wp->forward(batch, Mode::Train);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_DOUBLE_EQ(h.at(i), 0.0);
  Tensor p = soft_argmax(spatial_softmax(h));
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(p.at(i), 0.0, 1e-15);
}

TEST(BranchForward, OuHeatmapsHaveRankOne) {
  auto wp = build_branch(tiny_config(BranchKind::Ou), 9);
  Rng rng(10);
  auto batch = make_random_batch(2, 16, 16, rng);
  Tensor h = wp->forward(batch, Mode::Train);
  const std::size_t s = 16;
  for (std::size_t n = 0; n < 2; ++n) {
    const double* hm = h.values().data() + n * s * s;
    // Pivot-based rank-1 reconstruction must be exact up to rounding.
    std::size_t py = 0, px = 0;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x)
        if (std::abs(hm[y * s + x]) > std::abs(hm[py * s + px])) {
          py = y;
          px = x;
        }
    const double pivot = hm[py * s + px];
    ASSERT_GT(std::abs(pivot), 1e-12);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double recon = hm[y * s + px] * hm[py * s + x] / pivot;
        EXPECT_NEAR(hm[y * s + x], recon, 1e-9 * std::max(1.0, std::abs(pivot)));
      }
  }
}

TEST(BranchForward, CropMismatchIsShapeError) {
  auto wp = build_branch(tiny_config(BranchKind::Rh), 3);
  Rng rng(4);
  auto batch = make_random_batch(2, 32, 32, rng);  // config wants 16x16 crops
  EXPECT_THROW(wp->forward(batch, Mode::Train), ShapeError);
}

TEST(BranchForward, SingleEyeSelection) {
  BranchConfig c = tiny_config(BranchKind::Rh);
  c.eyes = Eyes::Left;
  c.crop_w = 32;  // single 16x32 crop
  auto wp = build_branch(c, 3);
  Rng rng(4);
  auto batch = make_random_batch(2, 16, 32, rng);
  Tensor h = wp->forward(batch, Mode::Train);
  EXPECT_EQ(h.shape(), (Shape{2, 16, 16}));
}

TEST(BuildBranch, FcUpsamplingStageCount) {
  BranchConfig c = tiny_config(BranchKind::Fc);
  c.heatmap_size = 32;  // 16 -> 32: exactly one stride-2 stage
  auto wp = build_branch(c, 3);
  int up_stages = 0;
  for (const auto& p : wp->parameters())
    if (p.name.find("head/up") != std::string::npos &&
        p.name.find("/weight") != std::string::npos &&
        p.name.find("upbn") == std::string::npos)
      ++up_stages;
  EXPECT_EQ(up_stages, 1);
}

// Head parameter ordering with identical trunks at S=128.
TEST(BuildBranch, HeadParameterOrdering) {
  auto make = [](BranchKind kind) {
    BranchConfig c;
    c.kind = kind;
    c.eyes = Eyes::Both;
    c.crop_h = 128;
    c.crop_w = 128;
    c.heatmap_size = 128;
    c.conv_channels = {16, 32, 64};
    c.fc_widths = {128};
    return build_branch(c, 1);
  };
  auto rh = make(BranchKind::Rh);
  auto ou = make(BranchKind::Ou);
  auto fc = make(BranchKind::Fc);
  auto ba = make(BranchKind::Ba);
  EXPECT_EQ(rh->trunk_param_count(), ou->trunk_param_count());
  EXPECT_EQ(rh->trunk_param_count(), fc->trunk_param_count());
  EXPECT_LT(ou->head_param_count(), rh->head_param_count());
  EXPECT_LT(fc->head_param_count(), rh->head_param_count());
  EXPECT_LT(ba->head_param_count(), rh->head_param_count());
}

// After one backward pass from a loss, every parameter of every branch kind
// must carry at least one nonzero gradient entry.
TEST(BranchForward, GradientsReachEveryParameter) {
  Rng rng(12);
  auto batch = make_random_batch(4, 16, 16, rng);
  for (BranchKind kind :
       {BranchKind::Ba, BranchKind::Rh, BranchKind::Fc, BranchKind::Ou}) {
    auto wp = build_branch(tiny_config(kind), 21);
    Tensor pred = soft_argmax(spatial_softmax(wp->forward(batch, Mode::Train)));
    Tensor loss = l2_gaze_loss(pred, batch.target);
    backward(loss);
    for (const auto& p : wp->parameters()) {
      ASSERT_TRUE(p.tensor.has_grad()) << to_string(kind) << " " << p.name;
      bool nonzero = false;
      for (double g : p.tensor.grad()) nonzero |= g != 0.0;
      EXPECT_TRUE(nonzero) << to_string(kind) << " " << p.name;
    }
  }
}
