#pragma once

// Dense kernels behind the conv/dense ops. Eigen does the matrix products;
// the im2col/col2im pair defines the convolution lowering. col2im is the
// exact transpose of im2col, which is what makes conv and transposed conv
// adjoint by construction.

#include <Eigen/Core>
#include <cstddef>
#include <string>
#include <vector>

#include "deesco/errors.hpp"

namespace deesco::detail {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

/// C(m x n) = A(m x k) * B(k x n), optionally accumulating into C.
inline void matmul(double* c, const double* a, const double* b, std::size_t m,
                   std::size_t k, std::size_t n, bool accumulate = false) {
  MapRM C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  CMapRM A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  CMapRM B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

/// C(m x n) = A^T * B where A is (k x m).
inline void matmul_at_b(double* c, const double* a, const double* b,
                        std::size_t m, std::size_t k, std::size_t n,
                        bool accumulate = false) {
  MapRM C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  CMapRM A(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  CMapRM B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

/// C(m x n) = A * B^T where B is (n x k).
inline void matmul_a_bt(double* c, const double* a, const double* b,
                        std::size_t m, std::size_t k, std::size_t n,
                        bool accumulate = false) {
  MapRM C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  CMapRM A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  CMapRM B(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

/// Geometry of one 2D cross-correlation (per sample).
struct ConvGeom {
  std::size_t ci = 0, hin = 0, win = 0;
  std::size_t kh = 0, kw = 0;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;
  std::size_t hout = 0, wout = 0;

  std::size_t rows() const { return ci * kh * kw; }       // im2col rows
  std::size_t patches() const { return hout * wout; }     // im2col cols
};

inline ConvGeom conv_geometry(std::size_t ci, std::size_t hin, std::size_t win,
                              std::size_t kh, std::size_t kw, std::size_t sh,
                              std::size_t sw, std::size_t ph, std::size_t pw) {
  if (sh < 1 || sw < 1) throw ShapeError("conv: stride must be >= 1");
  if (hin + 2 * ph < kh || win + 2 * pw < kw)
    throw ShapeError("conv: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     std::to_string(hin + 2 * ph) + "x" +
                     std::to_string(win + 2 * pw));
  ConvGeom g;
  g.ci = ci;
  g.hin = hin;
  g.win = win;
  g.kh = kh;
  g.kw = kw;
  g.sh = sh;
  g.sw = sw;
  g.ph = ph;
  g.pw = pw;
  g.hout = (hin + 2 * ph - kh) / sh + 1;
  g.wout = (win + 2 * pw - kw) / sw + 1;
  return g;
}

/// col[(ci*kh+ky)*kw+kx, oy*wout+ox] = x[ci, oy*sh+ky-ph, ox*sw+kx-pw] (0 off-image).
inline void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t P = g.patches();
  for (std::size_t ci = 0; ci < g.ci; ++ci) {
    const double* xc = x + ci * g.hin * g.win;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                    static_cast<std::ptrdiff_t>(g.ph);
          double* dst = row + oy * g.wout;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.hin)) {
            for (std::size_t ox = 0; ox < g.wout; ++ox) dst[ox] = 0.0;
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.win;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                static_cast<std::ptrdiff_t>(g.pw);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.win))
                          ? 0.0
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

/// Transpose of im2col: scatter-accumulate columns back onto the image.
inline void col2im(const double* col, const ConvGeom& g, double* x) {
  const std::size_t P = g.patches();
  for (std::size_t ci = 0; ci < g.ci; ++ci) {
    double* xc = x + ci * g.hin * g.win;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                    static_cast<std::ptrdiff_t>(g.ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.hin)) continue;
          const double* src = row + oy * g.wout;
          double* dstrow = xc + static_cast<std::size_t>(iy) * g.win;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.sw + kx) -
                static_cast<std::ptrdiff_t>(g.pw);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.win)) continue;
            dstrow[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace deesco::detail
