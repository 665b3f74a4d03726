#pragma once

// Training objectives: the L2 gaze loss on the full ensemble, the per-subset
// losses, their random convex combination (one fresh draw per batch), and the
// weighted total.

#include <span>
#include <string>
#include <vector>

#include "deesco/ops.hpp"
#include "deesco/rng.hpp"
#include "deesco/tensor.hpp"

namespace deesco {

/// One per-batch draw of convex subset weights.
struct MuWeights {
  std::vector<std::vector<int>> subsets;
  std::vector<double> weights;  // sum to 1, all >= 0
  std::uint64_t batch_id = 0;

  bool empty() const { return subsets.empty(); }
};

/// Independent Uniform(0,1) draw per subset, then normalization. Redrawn for
/// every batch by the training loop.
inline MuWeights sample_mu(Rng& rng,
                           const std::vector<std::vector<int>>& subsets,
                           std::uint64_t batch_id = 0) {
  MuWeights mu;
  mu.subsets = subsets;
  mu.batch_id = batch_id;
  if (subsets.empty()) return mu;  // N=1: L_comb is defined as 0
  mu.weights.reserve(subsets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    const double u = rng.uniform();
    mu.weights.push_back(u);
    total += u;
  }
  if (total <= 0.0) {  // vanishing-probability guard
    for (auto& w : mu.weights) w = 1.0 / static_cast<double>(subsets.size());
    return mu;
  }
  for (auto& w : mu.weights) w /= total;
  return mu;
}

/// Squared-error gaze loss, mean over the batch:
/// (1/B) sum_b (pred_gamma - gamma*)^2 + (pred_beta - beta*)^2.
inline Tensor l2_gaze_loss(const Tensor& pred, const Tensor& truth) {
  if (pred.rank() != 2 || pred.dim(1) != 2)
    throw ShapeError("l2_gaze_loss: predictions must be [B,2], got " +
                     shape_str(pred.shape()));
  check_same_shape("l2_gaze_loss", pred, truth);
  Tensor d = sub(pred, truth);
  return scale(sum(mul(d, d)), 1.0 / static_cast<double>(pred.dim(0)));
}

struct CombinatoryLoss {
  Tensor value;                    // sum_I mu^I * L^I (scalar)
  std::vector<Tensor> per_subset;  // L^I in mu order
};

/// Weighted sum of per-subset gaze losses. Subset keys must match the mu draw
/// exactly (same sets, same order).
inline CombinatoryLoss combinatory_loss(
    std::span<const std::vector<int>> subsets, std::span<const Tensor> preds,
    const Tensor& truth, const MuWeights& mu) {
  if (subsets.size() != preds.size())
    throw UsageError("combinatory_loss: subset/prediction count mismatch");
  if (subsets.size() != mu.subsets.size())
    throw UsageError("combinatory_loss: mu covers " +
                     std::to_string(mu.subsets.size()) + " subsets but " +
                     std::to_string(subsets.size()) + " predictions given");
  for (std::size_t i = 0; i < subsets.size(); ++i)
    if (subsets[i] != mu.subsets[i])
      throw UsageError("combinatory_loss: subset key mismatch at position " +
                       std::to_string(i));

  CombinatoryLoss out;
  if (subsets.empty()) {
    out.value = Tensor::scalar(0.0);
    return out;
  }
  out.per_subset.reserve(subsets.size());
  Tensor acc;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    Tensor li = l2_gaze_loss(preds[i], truth);
    out.per_subset.push_back(li);
    Tensor term = scale(li, mu.weights[i]);
    acc = i == 0 ? term : add(acc, term);
  }
  out.value = acc;
  return out;
}

/// L_tot = L0 + nu * L_comb.
inline Tensor total_loss(const Tensor& l0, const Tensor& l_comb, double nu) {
  if (nu < 0.0) throw UsageError("total_loss: nu must be >= 0");
  return add(l0, scale(l_comb, nu));
}

/// Plain-number snapshot of one step's losses, for logging.
struct LossBreakdown {
  double l0 = 0.0;
  std::vector<std::pair<std::string, double>> per_subset;
  double l_comb = 0.0;
  double l_tot = 0.0;
  double nu = 0.0;
};

}  // namespace deesco
