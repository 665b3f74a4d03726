#pragma once

// Heatmap decoding: spatial softmax, first-order-moment decoding (soft
// argmax), Gaussian rendering of coordinates, and the learned linear mix of
// member heatmaps.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "deesco/ops.hpp"
#include "deesco/tensor.hpp"

namespace deesco {

/// Grid coordinate of pixel i on an n-wide axis, mapped to [-1,1] with the
/// endpoints at pixel centers 0 and n-1.
inline double pixel_to_norm(std::size_t i, std::size_t n) {
  return n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0
               : 0.0;
}

/// Per-sample softmax over the spatial grid: phi = exp(H) / sum exp(H),
/// stabilized by max subtraction. Rejects non-finite inputs outright.
inline Tensor spatial_softmax(const Tensor& h) {
  if (h.rank() != 3)
    throw ShapeError("spatial_softmax: expected [N,H,W], got " +
                     shape_str(h.shape()));
  const std::size_t n = h.dim(0), hh = h.dim(1), ww = h.dim(2);
  const std::size_t sz = hh * ww;
  for (std::size_t i = 0; i < h.numel(); ++i)
    if (!std::isfinite(h.at(i)))
      throw NumericError("spatial_softmax: non-finite heatmap entry at index " +
                         std::to_string(i));

  std::vector<double> out(h.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const double* hi = h.values().data() + i * sz;
    double* oi = out.data() + i * sz;
    double mx = hi[0];
    for (std::size_t p = 1; p < sz; ++p) mx = std::max(mx, hi[p]);
    double denom = 0.0;
    for (std::size_t p = 0; p < sz; ++p) {
      oi[p] = std::exp(hi[p] - mx);
      denom += oi[p];
    }
    const double inv = 1.0 / denom;
    for (std::size_t p = 0; p < sz; ++p) oi[p] *= inv;
  }

  TensorNode* hn = h.node().get();
  return detail::make_op(
      "spatial_softmax", h.shape(), std::move(out), {h},
      [hn, n, sz](TensorNode& self) {
        if (!hn->requires_grad) return;
        const auto& g = self.grad;
        const auto& phi = self.values;
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = g.data() + i * sz;
          const double* pi = phi.data() + i * sz;
          double dot = 0.0;
          for (std::size_t p = 0; p < sz; ++p) dot += gi[p] * pi[p];
          double* out_g = hn->grad.data() + i * sz;
          for (std::size_t p = 0; p < sz; ++p)
            out_g[p] += pi[p] * (gi[p] - dot);
        }
      });
}

/// First-order moments of a probability map in normalized grid coordinates:
/// out[n] = (sum x_n*phi, sum y_n*phi). Linear in phi.
inline Tensor soft_argmax(const Tensor& phi) {
  if (phi.rank() != 3)
    throw ShapeError("soft_argmax: expected [N,H,W], got " +
                     shape_str(phi.shape()));
  const std::size_t n = phi.dim(0), hh = phi.dim(1), ww = phi.dim(2);
  std::vector<double> out(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = 0.0, my = 0.0;
    const double* pi = phi.values().data() + i * hh * ww;
    for (std::size_t y = 0; y < hh; ++y) {
      const double yn = pixel_to_norm(y, hh);
      const double* row = pi + y * ww;
      for (std::size_t x = 0; x < ww; ++x) {
        mx += pixel_to_norm(x, ww) * row[x];
        my += yn * row[x];
      }
    }
    out[i * 2] = mx;
    out[i * 2 + 1] = my;
  }
  TensorNode* pn = phi.node().get();
  return detail::make_op(
      "soft_argmax", {n, 2}, std::move(out), {phi},
      [pn, n, hh, ww](TensorNode& self) {
        if (!pn->requires_grad) return;
        const auto& g = self.grad;
        for (std::size_t i = 0; i < n; ++i) {
          const double gx = g[i * 2], gy = g[i * 2 + 1];
          double* gp = pn->grad.data() + i * hh * ww;
          for (std::size_t y = 0; y < hh; ++y) {
            const double yn = pixel_to_norm(y, hh);
            double* row = gp + y * ww;
            for (std::size_t x = 0; x < ww; ++x)
              row[x] += gx * pixel_to_norm(x, ww) + gy * yn;
          }
        }
      });
}

/// Render normalized (u,v) coordinates as an isotropic Gaussian bump:
/// H[y][x] = exp(-((x_n-u)^2 + (y_n-v)^2) / (2 sigma^2)). Differentiable in
/// the coordinates, so a 2-vector head can join heatmap mixing.
inline Tensor coords_to_gaussian_heatmap(const Tensor& coords, std::size_t s,
                                         double sigma) {
  if (coords.rank() != 2 || coords.dim(1) != 2)
    throw ShapeError("coords_to_gaussian_heatmap: expected coords[N,2]");
  if (!(sigma > 0.0))
    throw ConfigError("coords_to_gaussian_heatmap: sigma must be > 0");
  const std::size_t n = coords.dim(0);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> out(n * s * s);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = coords.at(i * 2), v = coords.at(i * 2 + 1);
    double* hi = out.data() + i * s * s;
    for (std::size_t y = 0; y < s; ++y) {
      const double dy = pixel_to_norm(y, s) - v;
      double* row = hi + y * s;
      for (std::size_t x = 0; x < s; ++x) {
        const double dx = pixel_to_norm(x, s) - u;
        row[x] = std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  }
  TensorNode* cn = coords.node().get();
  const double inv_s2 = 1.0 / (sigma * sigma);
  return detail::make_op(
      "coords_to_gaussian_heatmap", {n, s, s}, std::move(out), {coords},
      [cn, n, s, inv_s2](TensorNode& self) {
        if (!cn->requires_grad) return;
        const auto& g = self.grad;
        const auto& hv = self.values;
        for (std::size_t i = 0; i < n; ++i) {
          const double u = cn->values[i * 2], v = cn->values[i * 2 + 1];
          double du = 0.0, dv = 0.0;
          for (std::size_t y = 0; y < s; ++y) {
            const double dyv = pixel_to_norm(y, s) - v;
            const double* grow = g.data() + (i * s + y) * s;
            const double* hrow = hv.data() + (i * s + y) * s;
            for (std::size_t x = 0; x < s; ++x) {
              const double dxu = pixel_to_norm(x, s) - u;
              const double gh = grow[x] * hrow[x] * inv_s2;
              du += gh * dxu;
              dv += gh * dyv;
            }
          }
          cn->grad[i * 2] += du;
          cn->grad[i * 2 + 1] += dv;
        }
      });
}

/// Pixelwise weighted sum of member heatmaps: out = sum_i lambda[i] * H_i.
/// Differentiable in both the weights and the heatmaps (the 1x1 mixing layer;
/// no bias term, so the mix is exactly linear).
inline Tensor merge_heatmaps(const Tensor& lambdas,
                             std::span<const Tensor> heatmaps) {
  if (lambdas.rank() != 1)
    throw ShapeError("merge_heatmaps: lambdas must be a vector");
  if (heatmaps.empty() || lambdas.dim(0) != heatmaps.size())
    throw UsageError("merge_heatmaps: " + std::to_string(lambdas.numel()) +
                     " weights for " + std::to_string(heatmaps.size()) +
                     " heatmaps");
  const Shape& shp = heatmaps[0].shape();
  for (const auto& h : heatmaps)
    if (h.shape() != shp)
      throw ShapeError("merge_heatmaps: member heatmap shapes differ");

  const std::size_t k = heatmaps.size();
  const std::size_t sz = heatmaps[0].numel();
  std::vector<double> out(sz, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double lj = lambdas.at(j);
    const double* hj = heatmaps[j].values().data();
    for (std::size_t p = 0; p < sz; ++p) out[p] += lj * hj[p];
  }

  std::vector<Tensor> parents;
  parents.reserve(k + 1);
  parents.push_back(lambdas);
  for (const auto& h : heatmaps) parents.push_back(h);
  TensorNode* ln = lambdas.node().get();
  std::vector<TensorNode*> hs;
  hs.reserve(k);
  for (const auto& h : heatmaps) hs.push_back(h.node().get());
  return detail::make_op(
      "merge_heatmaps", shp, std::move(out), std::move(parents),
      [ln, hs = std::move(hs), k, sz](TensorNode& self) {
        const auto& g = self.grad;
        for (std::size_t j = 0; j < k; ++j) {
          TensorNode* hj = hs[j];
          if (ln->requires_grad) {
            double s = 0.0;
            for (std::size_t p = 0; p < sz; ++p) s += g[p] * hj->values[p];
            ln->grad[j] += s;
          }
          if (hj->requires_grad) {
            const double lj = ln->values[j];
            for (std::size_t p = 0; p < sz; ++p) hj->grad[p] += lj * g[p];
          }
        }
      });
}

}  // namespace deesco
