#pragma once

// Named finite-difference checks over every registered primitive, shared by
// the gradcheck CLI command and the acceptance suite. Each op gets freshly
// randomized shapes per seed.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deesco/gradcheck.hpp"
#include "deesco/heatmap.hpp"
#include "deesco/loss.hpp"
#include "deesco/ops.hpp"

namespace deesco {

struct OpCheckResult {
  std::string op;
  int seeds = 0;
  double max_rel_err = 0.0;
  bool passed = false;
};

namespace detail {

inline Tensor gc_randn(Shape s, Rng& rng, double sd = 1.0) {
  return Tensor::randn(std::move(s), rng, sd, true);
}

inline Tensor gc_nonkink(Shape s, Rng& rng) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) {
    const double m = rng.uniform(0.2, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor::from_values(std::move(s), std::move(v), true);
}

/// One seeded run of the named primitive; returns its gradcheck report.
inline GradCheckReport run_one_op(const std::string& op, std::uint64_t seed,
                                  const GradCheckOptions& opt) {
  Rng rng(substream(0xdc5ee, op, seed).next_u64());
  std::vector<Tensor> in;
  std::vector<std::string> names;
  std::function<Tensor()> f;

  if (op == "conv2d") {
    const std::size_t ci = 1 + rng.next_below(3), co = 1 + rng.next_below(3);
    const std::size_t h = 4 + rng.next_below(4), w = 4 + rng.next_below(4);
    const std::size_t k = rng.next_below(2) ? 3 : 1;
    const std::size_t s = 1 + rng.next_below(2), p = rng.next_below(2);
    Tensor x = gc_randn({2, ci, h, w}, rng);
    Tensor wt = gc_randn({co, ci, k, k}, rng, 0.5);
    Tensor b = gc_randn({co}, rng, 0.1);
    in = {x, wt, b};
    names = {"x", "w", "b"};
    f = [=] { return conv2d(x, wt, b, s, p); };
  } else if (op == "transposed_conv2d") {
    const std::size_t ci = 1 + rng.next_below(3), co = 1 + rng.next_below(3);
    const std::size_t h = 3 + rng.next_below(3), w = 3 + rng.next_below(3);
    const std::size_t k = 2 + rng.next_below(3);
    const std::size_t s = 1 + rng.next_below(2);
    const std::size_t p = rng.next_below(k > 2 ? 2 : 1);
    Tensor x = gc_randn({2, ci, h, w}, rng);
    Tensor wt = gc_randn({ci, co, k, k}, rng, 0.5);
    Tensor b = gc_randn({co}, rng, 0.1);
    in = {x, wt, b};
    names = {"x", "w", "b"};
    f = [=] { return transposed_conv2d(x, wt, b, s, p); };
  } else if (op == "dense") {
    const std::size_t n = 1 + rng.next_below(4);
    const std::size_t fi = 1 + rng.next_below(6), fo = 1 + rng.next_below(6);
    Tensor x = gc_randn({n, fi}, rng);
    Tensor wt = gc_randn({fo, fi}, rng, 0.5);
    Tensor b = gc_randn({fo}, rng, 0.1);
    in = {x, wt, b};
    names = {"x", "w", "b"};
    f = [=] { return dense(x, wt, b); };
  } else if (op == "batch_norm") {
    const std::size_t n = 2 + rng.next_below(3), c = 1 + rng.next_below(3);
    Shape shp = rng.next_below(2) ? Shape{n, c, 2 + rng.next_below(2), 2}
                                  : Shape{n, c};
    Tensor x = gc_randn(shp, rng);
    Tensor gamma = gc_randn({c}, rng, 0.5);
    Tensor beta = gc_randn({c}, rng, 0.5);
    Tensor rm = Tensor::randn({c}, rng, 0.3);
    std::vector<double> rv(c);
    for (auto& v : rv) v = rng.uniform(0.5, 2.0);
    Tensor rvt = Tensor::from_values({c}, rv);
    const Mode mode = seed % 2 ? Mode::Eval : Mode::Train;
    in = {x, gamma, beta};
    names = {"x", "gamma", "beta"};
    f = [=]() mutable { return batch_norm(x, gamma, beta, rm, rvt, mode); };
  } else if (op == "relu") {
    Tensor x = gc_nonkink({3, 5}, rng);
    in = {x};
    names = {"x"};
    f = [=] { return relu(x); };
  } else if (op == "concat") {
    Tensor a = gc_randn({2, 2, 3, 3}, rng);
    Tensor b = gc_randn({2, 1 + rng.next_below(3), 3, 3}, rng);
    in = {a, b};
    names = {"a", "b"};
    f = [=] { return concat_channels(a, b); };
  } else if (op == "reshape") {
    Tensor x = gc_randn({2, 6}, rng);
    in = {x};
    names = {"x"};
    f = [=] { return reshape(scale(x, 1.5), {3, 4}); };
  } else if (op == "outer_product") {
    const std::size_t n = 1 + rng.next_below(3);
    Tensor a = gc_randn({n, 2 + rng.next_below(4)}, rng);
    Tensor b = gc_randn({n, 2 + rng.next_below(4)}, rng);
    in = {a, b};
    names = {"a", "b"};
    f = [=] { return outer_product(a, b); };
  } else if (op == "spatial_softmax") {
    Tensor h = gc_randn({2, 4, 5}, rng);
    in = {h};
    names = {"h"};
    f = [=] { return spatial_softmax(h); };
  } else if (op == "soft_argmax") {
    Tensor h = gc_randn({2, 5, 5}, rng);
    in = {h};
    names = {"h"};
    f = [=] { return soft_argmax(spatial_softmax(h)); };
  } else if (op == "gaussian_render") {
    std::vector<double> cv;
    const std::size_t n = 1 + rng.next_below(2);
    for (std::size_t i = 0; i < 2 * n; ++i) cv.push_back(rng.uniform(-0.8, 0.8));
    Tensor c = Tensor::from_values({n, 2}, cv, true);
    in = {c};
    names = {"coords"};
    f = [=] { return coords_to_gaussian_heatmap(c, 9, 0.3); };
  } else if (op == "merge") {
    const std::size_t k = 1 + rng.next_below(4);
    Tensor lam = gc_randn({k}, rng, 0.8);
    std::vector<Tensor> hs;
    for (std::size_t j = 0; j < k; ++j) hs.push_back(gc_randn({1, 4, 4}, rng));
    in = {lam};
    names = {"lambda"};
    for (std::size_t j = 0; j < k; ++j) {
      in.push_back(hs[j]);
      names.push_back("h" + std::to_string(j));
    }
    f = [=] { return merge_heatmaps(lam, hs); };
  } else if (op == "l2_gaze_loss") {
    const std::size_t n = 2 + rng.next_below(4);
    Tensor pred = gc_randn({n, 2}, rng);
    Tensor truth = Tensor::randn({n, 2}, rng);
    in = {pred};
    names = {"pred"};
    f = [=] { return l2_gaze_loss(pred, truth); };
  } else if (op == "combinatory_loss") {
    std::vector<std::vector<int>> subsets{{0}, {1}, {0, 1}};
    Tensor truth = Tensor::randn({2, 2}, rng);
    std::vector<Tensor> preds;
    for (std::size_t i = 0; i < subsets.size(); ++i)
      preds.push_back(gc_randn({2, 2}, rng));
    Rng mu_rng(seed + 1);
    MuWeights mu = sample_mu(mu_rng, subsets);
    in = preds;
    names = {"pred0", "pred1", "pred01"};
    f = [=] { return combinatory_loss(subsets, preds, truth, mu).value; };
  } else if (op == "total_loss") {
    Tensor a = gc_randn({3, 2}, rng);
    Tensor b = gc_randn({3, 2}, rng);
    Tensor truth = Tensor::randn({3, 2}, rng);
    const double nu = rng.uniform(0.1, 5.0);
    in = {a, b};
    names = {"pred_full", "pred_subset"};
    f = [=] {
      return total_loss(l2_gaze_loss(a, truth), l2_gaze_loss(b, truth), nu);
    };
  } else {
    throw UsageError("gradcheck: unknown op '" + op + "'");
  }
  return grad_check(f, in, names, opt);
}

}  // namespace detail

inline std::vector<std::string> gradcheck_op_names() {
  return {"conv2d",        "transposed_conv2d", "dense",
          "batch_norm",    "relu",              "concat",
          "reshape",       "outer_product",     "spatial_softmax",
          "soft_argmax",   "gaussian_render",   "merge",
          "l2_gaze_loss",  "combinatory_loss",  "total_loss"};
}

inline OpCheckResult run_op_gradcheck(const std::string& op, int seeds,
                                      GradCheckOptions base = {}) {
  OpCheckResult res;
  res.op = op;
  res.seeds = seeds;
  for (int s = 0; s < seeds; ++s) {
    GradCheckOptions opt = base;
    opt.seed = static_cast<std::uint64_t>(s) + 1;
    auto rep = detail::run_one_op(op, static_cast<std::uint64_t>(s), opt);
    res.max_rel_err = std::max(res.max_rel_err, rep.max_rel_err);
  }
  res.passed = res.max_rel_err < base.tol;
  return res;
}

}  // namespace deesco
