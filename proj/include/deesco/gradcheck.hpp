#pragma once

// Central finite-difference gradient checker. This is the independent oracle
// for every differentiable primitive: it never touches the backward closures
// except to read the analytic gradients it compares against.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deesco/ops.hpp"
#include "deesco/rng.hpp"
#include "deesco/tensor.hpp"

namespace deesco {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0x5eedf00d;
  /// Test hook: scales analytic gradients by (1 + fault) so negative-control
  /// tests can prove the checker reports corrupted adjoints.
  double inject_fault = 0.0;
};

struct GradCheckReport {
  struct PerInput {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t coords_checked = 0;
  };
  std::vector<PerInput> inputs;
  double max_rel_err = 0.0;
  double tol = 0.0;

  bool passed() const { return max_rel_err < tol; }
};

/// Checks d(scalarize(f()))/d(input) for every listed input. Non-scalar f
/// outputs are reduced with a fixed random projection so a single backward
/// covers the whole Jacobian. Relative error uses a unit floor:
/// |a-n| / max(|a|,|n|,1), i.e. absolute error for small gradients.
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  std::span<const Tensor> inputs,
                                  std::span<const std::string> names,
                                  const GradCheckOptions& opt = {}) {
  if (inputs.empty()) throw UsageError("grad_check: no inputs");
  Rng rng(opt.seed);

  Tensor out0 = f();
  std::vector<double> proj(out0.numel());
  for (auto& p : proj) p = rng.uniform(-1.0, 1.0);
  if (out0.numel() == 1) proj[0] = 1.0;

  auto scalarize = [&](const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) s += proj[i] * t.at(i);
    return s;
  };
  auto scalarize_tensor = [&](const Tensor& t) {
    if (t.numel() == 1) return t;
    Tensor r = Tensor::from_values(t.shape(),
                                   std::vector<double>(proj.begin(), proj.end()));
    return sum(mul(t, r));
  };

  // Analytic pass.
  for (auto in : inputs) const_cast<Tensor&>(in).clear_grad();
  Tensor loss = scalarize_tensor(f());
  backward(loss);

  GradCheckReport report;
  report.tol = opt.tol;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& in = inputs[k];
    GradCheckReport::PerInput pi;
    pi.name = k < names.size() ? names[k] : ("input" + std::to_string(k));
    if (!in.requires_grad())
      throw UsageError("grad_check: input '" + pi.name +
                       "' does not require grad");
    std::vector<double> analytic(in.numel(), 0.0);
    if (in.has_grad()) {
      auto g = in.grad();
      analytic.assign(g.begin(), g.end());
    }
    if (opt.inject_fault != 0.0)
      for (auto& a : analytic) a *= (1.0 + opt.inject_fault);

    std::vector<std::size_t> coords;
    if (opt.max_coords_per_input == 0 ||
        in.numel() <= opt.max_coords_per_input) {
      coords.resize(in.numel());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      Rng crng = substream(opt.seed, "coords", k);
      auto perm = random_permutation(in.numel(), crng);
      coords.assign(perm.begin(),
                    perm.begin() +
                        static_cast<std::ptrdiff_t>(opt.max_coords_per_input));
    }

    Tensor mut = in;  // shares the node; raw_values edits the leaf
    for (std::size_t idx : coords) {
      const double orig = mut.at(idx);
      mut.raw_values()[idx] = orig + opt.eps;
      const double fp = scalarize(f());
      mut.raw_values()[idx] = orig - opt.eps;
      const double fm = scalarize(f());
      mut.raw_values()[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double a = analytic[idx];
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), 1.0});
      pi.max_abs_err = std::max(pi.max_abs_err, abs_err);
      pi.max_rel_err = std::max(pi.max_rel_err, rel_err);
    }
    pi.coords_checked = coords.size();
    report.max_rel_err = std::max(report.max_rel_err, pi.max_rel_err);
    report.inputs.push_back(std::move(pi));
  }
  return report;
}

}  // namespace deesco
