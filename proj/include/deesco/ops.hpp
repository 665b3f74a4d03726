#pragma once

// Differentiable primitives. Every op validates shapes up front, computes the
// forward value, and records a closure that routes output gradients back to
// the parents. NCHW layout, cross-correlation convention, double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deesco/gemm.hpp"
#include "deesco/tensor.hpp"

namespace deesco {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op("add", a.shape(), std::move(out), {a, b},
                         [an, bn](TensorNode& self) {
                           const auto& g = self.grad;
                           if (an->requires_grad)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               an->grad[i] += g[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               bn->grad[i] += g[i];
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op("sub", a.shape(), std::move(out), {a, b},
                         [an, bn](TensorNode& self) {
                           const auto& g = self.grad;
                           if (an->requires_grad)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               an->grad[i] += g[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               bn->grad[i] -= g[i];
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op("mul", a.shape(), std::move(out), {a, b},
                         [an, bn](TensorNode& self) {
                           const auto& g = self.grad;
                           if (an->requires_grad)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               an->grad[i] += g[i] * bn->values[i];
                           if (bn->requires_grad)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               bn->grad[i] += g[i] * an->values[i];
                         });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.at(i);
  TensorNode* an = a.node().get();
  return detail::make_op("scale", a.shape(), std::move(out), {a},
                         [an, c](TensorNode& self) {
                           if (!an->requires_grad) return;
                           const auto& g = self.grad;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             an->grad[i] += c * g[i];
                         });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  TensorNode* an = a.node().get();
  return detail::make_op("sum", {}, {s}, {a}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    const double g = self.grad[0];
    for (auto& v : an->grad) v += g;
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
  TensorNode* an = a.node().get();
  return detail::make_op("mean", {}, {s * inv}, {a},
                         [an, inv](TensorNode& self) {
                           if (!an->requires_grad) return;
                           const double g = self.grad[0] * inv;
                           for (auto& v : an->grad) v += g;
                         });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  // NaN passes through rather than being masked to zero, so divergence
  // surfaces at the loss instead of disappearing mid-graph.
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = a.at(i);
    out[i] = v > 0.0 || v != v ? v : 0.0;
  }
  TensorNode* an = a.node().get();
  return detail::make_op("relu", a.shape(), std::move(out), {a},
                         [an](TensorNode& self) {
                           if (!an->requires_grad) return;
                           const auto& g = self.grad;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (an->values[i] > 0.0) an->grad[i] += g[i];
                         });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " (" +
                     std::to_string(a.numel()) + " elements) as " +
                     shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  TensorNode* an = a.node().get();
  return detail::make_op("reshape", std::move(shape), std::move(out), {a},
                         [an](TensorNode& self) {
                           if (!an->requires_grad) return;
                           const auto& g = self.grad;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             an->grad[i] += g[i];
                         });
}

/// Concatenate along `axis`; all other extents must match.
inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank())
    throw ShapeError("concat: rank mismatch or bad axis");
  for (std::size_t d = 0; d < a.rank(); ++d)
    if (d != axis && a.dim(d) != b.dim(d))
      throw ShapeError("concat: shape mismatch " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()) + " on axis " +
                       std::to_string(d));
  Shape out_shape = a.shape();
  out_shape[axis] = a.dim(axis) + b.dim(axis);

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t wa = a.dim(axis) * inner;
  const std::size_t wb = b.dim(axis) * inner;

  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.values().data() + o * wa, wa, out.data() + o * (wa + wb));
    std::copy_n(b.values().data() + o * wb, wb,
                out.data() + o * (wa + wb) + wa);
  }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      "concat", std::move(out_shape), std::move(out), {a, b},
      [an, bn, outer, wa, wb](TensorNode& self) {
        const auto& g = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          const double* go = g.data() + o * (wa + wb);
          if (an->requires_grad)
            for (std::size_t i = 0; i < wa; ++i) an->grad[o * wa + i] += go[i];
          if (bn->requires_grad)
            for (std::size_t i = 0; i < wb; ++i)
              bn->grad[o * wb + i] += go[wa + i];
        }
      });
}

/// Channel concatenation for NC... tensors (axis 1).
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2) throw ShapeError("concat_channels: rank must be >= 2");
  return concat(a, b, 1);
}

// ---------------------------------------------------------------------------
// Dense / convolution
// ---------------------------------------------------------------------------

/// Affine map: x[N,Fin] * w[Fout,Fin]^T + b[Fout].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    throw ShapeError("dense: expected x[N,Fin], w[Fout,Fin], b[Fout]");
  const std::size_t n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
  if (w.dim(1) != fin)
    throw ShapeError("dense: input width " + std::to_string(fin) +
                     " does not match weight " + shape_str(w.shape()));
  if (b.dim(0) != fout)
    throw ShapeError("dense: bias " + shape_str(b.shape()) +
                     " does not match weight " + shape_str(w.shape()));

  std::vector<double> out(n * fout);
  detail::matmul_a_bt(out.data(), x.values().data(), w.values().data(), n, fin,
                      fout);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < fout; ++f) out[i * fout + f] += b.at(f);

  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      "dense", {n, fout}, std::move(out), {x, w, b},
      [xn, wn, bn, n, fin, fout](TensorNode& self) {
        const double* g = self.grad.data();
        if (xn->requires_grad)
          detail::matmul(xn->grad.data(), g, wn->values.data(), n, fout, fin,
                         true);
        if (wn->requires_grad)
          detail::matmul_at_b(wn->grad.data(), g, xn->values.data(), fout, n,
                              fin, true);
        if (bn->requires_grad)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t f = 0; f < fout; ++f)
              bn->grad[f] += g[i * fout + f];
      });
}

/// Cross-correlation with per-axis stride/pad; the public conv2d wraps it.
inline Tensor conv2d_hw(const Tensor& x, const Tensor& w, const Tensor& b,
                        std::size_t sh, std::size_t sw, std::size_t ph,
                        std::size_t pw) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1)
    throw ShapeError("conv2d: expected x[N,C,H,W], w[Co,Ci,kh,kw], b[Co]");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci)
    throw ShapeError("conv2d: input has " + std::to_string(ci) +
                     " channels but weight is " + shape_str(w.shape()));
  if (b.dim(0) != co)
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  const auto g = detail::conv_geometry(ci, h, wd, kh, kw, sh, sw, ph, pw);
  const std::size_t rows = g.rows(), P = g.patches();

  std::vector<double> out(n * co * P);
  std::vector<double> col(rows * P);
  const std::size_t xstride = ci * h * wd;
  for (std::size_t i = 0; i < n; ++i) {
    detail::im2col(x.values().data() + i * xstride, g, col.data());
    double* yi = out.data() + i * co * P;
    detail::matmul(yi, w.values().data(), col.data(), co, rows, P);
    for (std::size_t c = 0; c < co; ++c) {
      const double bc = b.at(c);
      double* yc = yi + c * P;
      for (std::size_t p = 0; p < P; ++p) yc[p] += bc;
    }
  }

  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      "conv2d", {n, co, g.hout, g.wout}, std::move(out), {x, w, b},
      [xn, wn, bn, g, n, co, rows, P, xstride](TensorNode& self) {
        std::vector<double> col(rows * P);
        std::vector<double> tmp;
        for (std::size_t i = 0; i < n; ++i) {
          const double* gy = self.grad.data() + i * co * P;
          if (wn->requires_grad || bn->requires_grad) {
            if (wn->requires_grad) {
              detail::im2col(xn->values.data() + i * xstride, g, col.data());
              detail::matmul_a_bt(wn->grad.data(), gy, col.data(), co, P, rows,
                                  true);
            }
            if (bn->requires_grad)
              for (std::size_t c = 0; c < co; ++c) {
                double s = 0.0;
                const double* gc = gy + c * P;
                for (std::size_t p = 0; p < P; ++p) s += gc[p];
                bn->grad[c] += s;
              }
          }
          if (xn->requires_grad) {
            tmp.assign(rows * P, 0.0);
            detail::matmul_at_b(tmp.data(), wn->values.data(), gy, rows, co, P);
            detail::col2im(tmp.data(), g, xn->grad.data() + i * xstride);
          }
        }
      });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     std::size_t stride = 1, std::size_t pad = 0) {
  return conv2d_hw(x, w, b, stride, stride, pad, pad);
}

/// Adjoint of conv2d with the same geometry. Weight layout is [Ci,Co,kh,kw];
/// output spatial size is (in-1)*stride - 2*pad + k.
inline Tensor transposed_conv2d(const Tensor& x, const Tensor& w,
                                const Tensor& b, std::size_t stride = 1,
                                std::size_t pad = 0) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1)
    throw ShapeError(
        "transposed_conv2d: expected x[N,Ci,h,w], w[Ci,Co,kh,kw], b[Co]");
  if (stride < 1) throw ShapeError("transposed_conv2d: stride must be >= 1");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != ci)
    throw ShapeError("transposed_conv2d: input has " + std::to_string(ci) +
                     " channels but weight is " + shape_str(w.shape()));
  if (b.dim(0) != co)
    throw ShapeError("transposed_conv2d: bias " + shape_str(b.shape()) +
                     " does not match weight " + shape_str(w.shape()));
  const std::ptrdiff_t hout_s =
      static_cast<std::ptrdiff_t>((h - 1) * stride + kh) -
      2 * static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t wout_s =
      static_cast<std::ptrdiff_t>((wd - 1) * stride + kw) -
      2 * static_cast<std::ptrdiff_t>(pad);
  if (hout_s < 1 || wout_s < 1)
    throw ConfigError("transposed_conv2d: computed output size " +
                      std::to_string(hout_s) + "x" + std::to_string(wout_s) +
                      " is not positive");
  const std::size_t hout = static_cast<std::size_t>(hout_s);
  const std::size_t wout = static_cast<std::size_t>(wout_s);

  // The virtual conv runs from the [Co,hout,wout] output back to [*,h,w].
  const auto g =
      detail::conv_geometry(co, hout, wout, kh, kw, stride, stride, pad, pad);
  const std::size_t rows = g.rows();      // co*kh*kw
  const std::size_t P = g.patches();      // h*w
  const std::size_t ystride = co * hout * wout;
  const std::size_t xstride = ci * h * wd;

  std::vector<double> out(n * ystride, 0.0);
  std::vector<double> col(rows * P);
  for (std::size_t i = 0; i < n; ++i) {
    detail::matmul_at_b(col.data(), w.values().data(),
                        x.values().data() + i * xstride, rows, ci, P);
    detail::col2im(col.data(), g, out.data() + i * ystride);
    double* yi = out.data() + i * ystride;
    for (std::size_t c = 0; c < co; ++c) {
      const double bc = b.at(c);
      double* yc = yi + c * hout * wout;
      for (std::size_t p = 0; p < hout * wout; ++p) yc[p] += bc;
    }
  }

  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      "transposed_conv2d", {n, co, hout, wout}, std::move(out), {x, w, b},
      [xn, wn, bn, g, n, ci, co, rows, P, xstride, ystride, hout,
       wout](TensorNode& self) {
        std::vector<double> gcol(rows * P);
        for (std::size_t i = 0; i < n; ++i) {
          const double* gy = self.grad.data() + i * ystride;
          detail::im2col(gy, g, gcol.data());
          if (xn->requires_grad)
            detail::matmul(xn->grad.data() + i * xstride, wn->values.data(),
                           gcol.data(), ci, rows, P, true);
          if (wn->requires_grad)
            detail::matmul_a_bt(wn->grad.data(), xn->values.data() + i * xstride,
                                gcol.data(), ci, P, rows, true);
          if (bn->requires_grad)
            for (std::size_t c = 0; c < co; ++c) {
              double s = 0.0;
              const double* gc = gy + c * hout * wout;
              for (std::size_t p = 0; p < hout * wout; ++p) s += gc[p];
              bn->grad[c] += s;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over [N,C,H,W] or [N,C]. Train mode uses
/// batch statistics (biased variance, floor eps) and updates the running
/// buffers in place with the given momentum; eval mode reads the buffers.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, Tensor& running_mean,
                         Tensor& running_var, Mode mode,
                         double momentum = 0.1, double eps = 1e-5) {
  if (x.rank() != 4 && x.rank() != 2)
    throw ShapeError("batch_norm: expected x[N,C,H,W] or x[N,C]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      running_mean.shape() != Shape{c} || running_var.shape() != Shape{c})
    throw ShapeError("batch_norm: gamma/beta/running stats must all be [C]=[" +
                     std::to_string(c) + "]");

  const std::size_t m = n * spatial;  // elements per channel
  std::vector<double> mean_c(c), invstd_c(c);
  if (mode == Mode::Train) {
    if (n < 2)
      throw UsageError(
          "batch_norm: train mode requires batch size >= 2 (zero-variance "
          "hazard)");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* base = x.values().data() + (i * c + ch) * spatial;
        for (std::size_t p = 0; p < spatial; ++p) {
          s += base[p];
          ss += base[p] * base[p];
        }
      }
      const double mu = s / static_cast<double>(m);
      double var = ss / static_cast<double>(m) - mu * mu;
      if (var < 0.0) var = 0.0;  // guard fp cancellation
      mean_c[ch] = mu;
      invstd_c[ch] = 1.0 / std::sqrt(var + eps);
      auto rm = running_mean.raw_values();
      auto rv = running_var.raw_values();
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = running_mean.at(ch);
      invstd_c[ch] = 1.0 / std::sqrt(running_var.at(ch) + eps);
    }
  }

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * spatial;
      const double mu = mean_c[ch], is = invstd_c[ch];
      const double ga = gamma.at(ch), be = beta.at(ch);
      for (std::size_t p = 0; p < spatial; ++p) {
        const double xh = (x.at(base + p) - mu) * is;
        xhat[base + p] = xh;
        out[base + p] = ga * xh + be;
      }
    }

  TensorNode* xn = x.node().get();
  TensorNode* gn = gamma.node().get();
  TensorNode* bn = beta.node().get();
  const bool train = mode == Mode::Train;
  return detail::make_op(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, n, c, spatial, m, train, xhat = std::move(xhat),
       invstd_c = std::move(invstd_c)](TensorNode& self) {
        const auto& g = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * spatial;
            for (std::size_t p = 0; p < spatial; ++p) {
              sum_g += g[base + p];
              sum_gx += g[base + p] * xhat[base + p];
            }
          }
          if (gn->requires_grad) gn->grad[ch] += sum_gx;
          if (bn->requires_grad) bn->grad[ch] += sum_g;
          if (xn->requires_grad) {
            const double ga = gn->values[ch], is = invstd_c[ch];
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t base = (i * c + ch) * spatial;
              for (std::size_t p = 0; p < spatial; ++p) {
                // Eval mode treats mean/var as constants.
                const double dxh = g[base + p] * ga;
                xn->grad[base + p] +=
                    train ? is * (dxh - inv_m * sum_g * ga -
                                  xhat[base + p] * inv_m * sum_gx * ga)
                          : dxh * is;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Outer product
// ---------------------------------------------------------------------------

/// Per-sample rank-1 map: out[n,y,x] = b[n,y] * a[n,x].
/// `a` holds the horizontal marginal (length W), `b` the vertical (length H).
inline Tensor outer_product(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("outer_product: expected a[N,W], b[N,H] with equal N");
  const std::size_t n = a.dim(0), w = a.dim(1), h = b.dim(1);
  std::vector<double> out(n * h * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y) {
      const double by = b.at(i * h + y);
      double* row = out.data() + (i * h + y) * w;
      const double* ai = a.values().data() + i * w;
      for (std::size_t x = 0; x < w; ++x) row[x] = by * ai[x];
    }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::make_op(
      "outer_product", {n, h, w}, std::move(out), {a, b},
      [an, bn, n, h, w](TensorNode& self) {
        const auto& g = self.grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t y = 0; y < h; ++y) {
            const double* grow = g.data() + (i * h + y) * w;
            const double by = bn->values[i * h + y];
            if (an->requires_grad)
              for (std::size_t x = 0; x < w; ++x)
                an->grad[i * w + x] += grow[x] * by;
            if (bn->requires_grad) {
              double s = 0.0;
              for (std::size_t x = 0; x < w; ++x)
                s += grow[x] * an->values[i * w + x];
              bn->grad[i * h + y] += s;
            }
          }
      });
}

}  // namespace deesco
