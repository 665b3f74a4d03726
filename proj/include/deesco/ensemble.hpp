#pragma once

// Ensemble head: learned 1x1 mixes of the N member heatmaps, one combiner for
// the full set and one for every strict non-empty subset (2^N - 1 in total),
// each decoded through spatial softmax + first-order moments.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "deesco/branches.hpp"
#include "deesco/heatmap.hpp"

namespace deesco {

/// All strict non-empty subsets of {0..n-1}, ordered by size then
/// lexicographically. Size is 2^n - 2 (empty for n = 1).
inline std::vector<std::vector<int>> enumerate_subsets(int n) {
  if (n < 1) throw UsageError("enumerate_subsets: N must be >= 1");
  std::vector<std::vector<int>> out;
  for (int size = 1; size < n; ++size) {
    std::vector<int> idx(size);
    for (int i = 0; i < size; ++i) idx[i] = i;
    for (;;) {
      out.push_back(idx);
      int i = size - 1;
      while (i >= 0 && idx[i] == n - size + i) --i;
      if (i < 0) break;
      ++idx[i];
      for (int j = i + 1; j < size; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return out;
}

inline std::string subset_key(const std::vector<int>& subset) {
  std::string key;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (i) key += ',';
    key += std::to_string(subset[i]);
  }
  return key;
}

/// Learned linear mix over one index subset (the 1x1 mixing layer; no bias).
struct SubsetCombiner {
  std::vector<int> subset;  // sorted member indices
  Tensor lambdas;           // one weight per member
  bool is_full = false;
};

struct EnsembleOutputs {
  std::vector<Tensor> branch_heatmaps;  // raw, one per member
  Tensor full_merged;                   // mixed full-set heatmap (raw)
  Tensor full_prob;                     // after spatial softmax
  Tensor full_pred;                     // [B,2] normalized estimates
  struct SubsetOut {
    std::vector<int> subset;
    Tensor merged;  // raw mixed heatmap
    Tensor pred;    // [B,2]
  };
  std::vector<SubsetOut> subsets;  // strict subsets, enumeration order
};

class EnsembleModel {
 public:
  EnsembleModel(std::vector<BranchConfig> configs, std::uint64_t seed) {
    if (configs.empty())
      throw ConfigError("ensemble: need at least one branch");
    heatmap_size_ = configs[0].heatmap_size;
    for (const auto& c : configs)
      if (c.heatmap_size != heatmap_size_)
        throw ConfigError("ensemble: branch heatmap sizes differ");
    for (std::size_t i = 0; i < configs.size(); ++i)
      preds_.push_back(std::make_unique<WeakPredictor>(
          configs[i], static_cast<int>(i),
          substream(seed, "branch", i).next_u64()));

    const int n = static_cast<int>(preds_.size());
    for (auto& subset : enumerate_subsets(n))
      strict_.push_back(make_combiner(std::move(subset), false));
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    full_ = make_combiner(std::move(all), true);

    for (auto& p : preds_) {
      auto& ps = p->parameters();
      params_.insert(params_.end(), ps.begin(), ps.end());
      auto& bs = p->buffers();
      buffers_.insert(buffers_.end(), bs.begin(), bs.end());
    }
    for (auto& c : strict_)
      params_.push_back({"combiner/" + subset_key(c.subset) + "/lambda",
                         c.lambdas});
    params_.push_back({"combiner/" + subset_key(full_.subset) + "/lambda",
                       full_.lambdas});
  }

  std::size_t size() const { return preds_.size(); }
  std::size_t heatmap_size() const { return heatmap_size_; }
  WeakPredictor& predictor(std::size_t i) { return *preds_[i]; }
  const WeakPredictor& predictor(std::size_t i) const { return *preds_[i]; }

  std::vector<SubsetCombiner>& strict_combiners() { return strict_; }
  const std::vector<SubsetCombiner>& strict_combiners() const { return strict_; }
  SubsetCombiner& full_combiner() { return full_; }
  const SubsetCombiner& full_combiner() const { return full_; }

  std::vector<std::vector<int>> strict_subsets() const {
    std::vector<std::vector<int>> out;
    out.reserve(strict_.size());
    for (const auto& c : strict_) out.push_back(c.subset);
    return out;
  }

  /// Runs every branch exactly once and reuses the heatmaps across all
  /// combiners.
  EnsembleOutputs forward(const BatchTensors& batch, Mode mode) {
    EnsembleOutputs out;
    out.branch_heatmaps.reserve(preds_.size());
    for (auto& p : preds_) out.branch_heatmaps.push_back(p->forward(batch, mode));

    out.full_merged = merge_heatmaps(full_.lambdas, out.branch_heatmaps);
    out.full_prob = spatial_softmax(out.full_merged);
    out.full_pred = soft_argmax(out.full_prob);

    out.subsets.reserve(strict_.size());
    for (const auto& c : strict_) {
      std::vector<Tensor> members;
      members.reserve(c.subset.size());
      for (int i : c.subset)
        members.push_back(out.branch_heatmaps[static_cast<std::size_t>(i)]);
      EnsembleOutputs::SubsetOut so;
      so.subset = c.subset;
      so.merged = merge_heatmaps(c.lambdas, members);
      so.pred = soft_argmax(spatial_softmax(so.merged));
      out.subsets.push_back(std::move(so));
    }
    return out;
  }

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& buffers() const { return buffers_; }
  std::vector<Parameter>& buffers() { return buffers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  /// Fingerprint of the architecture, stored in checkpoints so loading into a
  /// differently-shaped model fails loudly.
  std::uint64_t arch_hash() const {
    std::string desc;
    for (const auto& p : preds_) {
      const auto& c = p->config();
      desc += to_string(c.kind);
      desc += '/';
      desc += to_string(c.eyes);
      desc += '/';
      desc += std::to_string(c.crop_h) + "x" + std::to_string(c.crop_w);
      desc += "/S" + std::to_string(c.heatmap_size) + "/ch";
      for (auto v : c.conv_channels) desc += "." + std::to_string(v);
      desc += "/fc";
      for (auto v : c.fc_widths) desc += "." + std::to_string(v);
      desc += "|";
    }
    return fnv1a64(desc);
  }

 private:
  SubsetCombiner make_combiner(std::vector<int> subset, bool is_full) {
    SubsetCombiner c;
    const double init = 1.0 / static_cast<double>(subset.size());
    c.lambdas = Tensor::full({subset.size()}, init, true);
    c.subset = std::move(subset);
    c.is_full = is_full;
    return c;
  }

  std::vector<std::unique_ptr<WeakPredictor>> preds_;
  std::vector<SubsetCombiner> strict_;
  SubsetCombiner full_;
  std::vector<Parameter> params_;
  std::vector<Parameter> buffers_;
  std::size_t heatmap_size_ = 0;
};

}  // namespace deesco
