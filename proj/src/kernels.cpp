#include "spadvae/kernels.hpp"

#include "spadvae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace spadvae::nn {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

struct ConvDims {
  std::size_t N, C, H, W;   // input
  std::size_t Co, Ho, Wo;   // output
  std::size_t k, s;
  std::int64_t p;
};

ConvDims check_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                    const ConvSpec& spec, bool transposed, const char* op) {
  require(x.rank() == 4, std::string(op) + ": input must be rank 4, got " +
                             x.shape_str());
  require(w.rank() == 4, std::string(op) + ": weight must be rank 4, got " +
                             w.shape_str());
  require(b.rank() == 1, std::string(op) + ": bias must be rank 1, got " +
                             b.shape_str());
  ConvDims d{};
  d.N = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.k = spec.kernel;
  d.s = spec.stride;
  d.p = static_cast<std::int64_t>(spec.padding);
  require(w.dim(2) == d.k && w.dim(3) == d.k,
          std::string(op) + ": weight spatial dims " + w.shape_str() +
              " do not match kernel size " + std::to_string(d.k));
  if (!transposed) {
    d.Co = w.dim(0);
    require(w.dim(1) == d.C, std::string(op) + ": weight in-channels " +
                                 w.shape_str() + " do not match input " +
                                 x.shape_str());
    d.Ho = conv_out_extent(d.H, spec);
    d.Wo = conv_out_extent(d.W, spec);
  } else {
    d.Co = w.dim(1);
    require(w.dim(0) == d.C, std::string(op) + ": weight in-channels " +
                                 w.shape_str() + " do not match input " +
                                 x.shape_str());
    d.Ho = tconv_out_extent(d.H, spec);
    d.Wo = tconv_out_extent(d.W, spec);
  }
  require(b.dim(0) == d.Co, std::string(op) + ": bias " + b.shape_str() +
                                " does not match out-channels " +
                                std::to_string(d.Co));
  return d;
}

void check_grad_out(const Tensor& gy, const ConvDims& d, const char* op) {
  require(gy.rank() == 4 && gy.dim(0) == d.N && gy.dim(1) == d.Co &&
              gy.dim(2) == d.Ho && gy.dim(3) == d.Wo,
          std::string(op) + ": output gradient " + gy.shape_str() +
              " does not match expected " +
              shape_to_string({d.N, d.Co, d.Ho, d.Wo}));
}

// ---------------------------------------------------------------------------
// GEMM building blocks for the default kernels.
//
// gemm_rows computes C[M][cols] = init + A[M][K] * B[K][cols] where init is
// the bias (broadcast per row), zero, or the existing contents of C. Each
// output element is a single sequential accumulation over r = 0..K-1, so the
// per-element reduction order is exactly the ascending flattened index order
// of the B rows. Column tiles only change which elements are in flight, never
// the order within one element.
// ---------------------------------------------------------------------------

template <int CT>
inline void gemm_block(const double* A, const double* B, double* C,
                       std::size_t M, std::size_t K, std::size_t cols,
                       std::size_t c0, const double* bias, bool accumulate) {
  for (std::size_t m = 0; m < M; ++m) {
    double acc[CT];
    double* crow = C + m * cols + c0;
    if (accumulate) {
      for (int j = 0; j < CT; ++j) acc[j] = crow[j];
    } else if (bias) {
      for (int j = 0; j < CT; ++j) acc[j] = bias[m];
    } else {
      for (int j = 0; j < CT; ++j) acc[j] = 0.0;
    }
    const double* arow = A + m * K;
    const double* brow = B + c0;
    for (std::size_t r = 0; r < K; ++r, brow += cols) {
      const double a = arow[r];
      for (int j = 0; j < CT; ++j) acc[j] = fmadd(a, brow[j], acc[j]);
    }
    for (int j = 0; j < CT; ++j) crow[j] = acc[j];
  }
}

void gemm_rows(const double* A, const double* B, double* C, std::size_t M,
               std::size_t K, std::size_t cols, const double* bias,
               bool accumulate) {
  std::size_t c0 = 0;
  for (; c0 + 16 <= cols; c0 += 16)
    gemm_block<16>(A, B, C, M, K, cols, c0, bias, accumulate);
  if (c0 + 8 <= cols) {
    gemm_block<8>(A, B, C, M, K, cols, c0, bias, accumulate);
    c0 += 8;
  }
  if (c0 + 4 <= cols) {
    gemm_block<4>(A, B, C, M, K, cols, c0, bias, accumulate);
    c0 += 4;
  }
  if (c0 + 2 <= cols) {
    gemm_block<2>(A, B, C, M, K, cols, c0, bias, accumulate);
    c0 += 2;
  }
  if (c0 < cols) gemm_block<1>(A, B, C, M, K, cols, c0, bias, accumulate);
}

// Valid output-column range [lo, hi) for which 0 <= col*s - p + kq < extent.
inline void valid_range(std::size_t out_extent, std::size_t in_extent,
                        std::size_t s, std::int64_t p, std::size_t kq,
                        std::size_t& lo, std::size_t& hi) {
  const std::int64_t a = p - static_cast<std::int64_t>(kq);
  lo = a <= 0 ? 0
              : static_cast<std::size_t>((a + static_cast<std::int64_t>(s) - 1) /
                                         static_cast<std::int64_t>(s));
  const std::int64_t bmax =
      static_cast<std::int64_t>(in_extent) - 1 + p - static_cast<std::int64_t>(kq);
  if (bmax < 0) {
    hi = 0;
  } else {
    hi = std::min(out_extent,
                  static_cast<std::size_t>(bmax / static_cast<std::int64_t>(s)) + 1);
  }
  if (lo > hi) lo = hi;
}

// Patch matrix for one frame: P[r][col] with r = (c*k + kh)*k + kw and
// col = oh*Wo + ow, reading src[c][oh*s-p+kh][ow*s-p+kw] (zero outside).
// The same routine serves the transposed-conv backward passes with the roles
// of the extents swapped, because the index map is identical.
void im2col(const double* src, std::size_t C, std::size_t H, std::size_t W,
            std::size_t Ho, std::size_t Wo, std::size_t k, std::size_t s,
            std::int64_t p, double* P) {
  const std::size_t cols = Ho * Wo;
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw, ++r) {
        double* prow = P + r * cols;
        std::size_t wlo, whi;
        valid_range(Wo, W, s, p, kw, wlo, whi);
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih =
              static_cast<std::int64_t>(oh * s) - p + static_cast<std::int64_t>(kh);
          double* dst = prow + oh * Wo;
          if (ih < 0 || ih >= static_cast<std::int64_t>(H)) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* srow = src + (c * H + static_cast<std::size_t>(ih)) * W;
          std::fill(dst, dst + wlo, 0.0);
          for (std::size_t ow = wlo; ow < whi; ++ow) {
            const std::int64_t iw = static_cast<std::int64_t>(ow * s) - p +
                                    static_cast<std::int64_t>(kw);
            dst[ow] = srow[iw];
          }
          std::fill(dst + whi, dst + Wo, 0.0);
        }
      }
    }
  }
}

// Scatter-add the patch-space gradient G[r][col] back into a [C,H,W] plane.
void col2im_acc(const double* G, std::size_t C, std::size_t H, std::size_t W,
                std::size_t Ho, std::size_t Wo, std::size_t k, std::size_t s,
                std::int64_t p, double* dst_plane) {
  const std::size_t cols = Ho * Wo;
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw, ++r) {
        const double* grow = G + r * cols;
        std::size_t wlo, whi;
        valid_range(Wo, W, s, p, kw, wlo, whi);
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::int64_t ih =
              static_cast<std::int64_t>(oh * s) - p + static_cast<std::int64_t>(kh);
          if (ih < 0 || ih >= static_cast<std::int64_t>(H)) continue;
          double* drow = dst_plane + (c * H + static_cast<std::size_t>(ih)) * W;
          const double* gsrc = grow + oh * Wo;
          for (std::size_t ow = wlo; ow < whi; ++ow) {
            const std::int64_t iw = static_cast<std::int64_t>(ow * s) - p +
                                    static_cast<std::int64_t>(kw);
            drow[iw] += gsrc[ow];
          }
        }
      }
    }
  }
}

// Scatter-add for the transposed-conv forward: G[r2][col] with
// r2 = (oc*k + kh)*k + kw, col = ih*W + iw lands on y[oc][ih*s-p+kh][iw*s-p+kw].
void tconv_scatter_acc(const double* G, std::size_t Co, std::size_t H,
                       std::size_t W, std::size_t Ho, std::size_t Wo,
                       std::size_t k, std::size_t s, std::int64_t p,
                       double* y_plane) {
  const std::size_t cols = H * W;
  std::size_t r = 0;
  for (std::size_t oc = 0; oc < Co; ++oc) {
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw, ++r) {
        const double* grow = G + r * cols;
        std::size_t wlo, whi;
        valid_range(W, Wo, s, p, kw, wlo, whi);
        for (std::size_t ih = 0; ih < H; ++ih) {
          const std::int64_t oh =
              static_cast<std::int64_t>(ih * s) - p + static_cast<std::int64_t>(kh);
          if (oh < 0 || oh >= static_cast<std::int64_t>(Ho)) continue;
          double* drow = y_plane + (oc * Ho + static_cast<std::size_t>(oh)) * Wo;
          const double* gsrc = grow + ih * W;
          for (std::size_t iw = wlo; iw < whi; ++iw) {
            const std::int64_t ow = static_cast<std::int64_t>(iw * s) - p +
                                    static_cast<std::int64_t>(kw);
            drow[ow] += gsrc[iw];
          }
        }
      }
    }
  }
}

void transpose(const double* src, std::size_t rows, std::size_t cols,
               double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

} // namespace

std::size_t conv_out_extent(std::size_t in, const ConvSpec& spec) {
  require(spec.kernel >= 1 && spec.stride >= 1,
          "conv spec: kernel and stride must be >= 1");
  require(in >= 1, "conv: input extent must be >= 1");
  const std::size_t padded = in + 2 * spec.padding;
  require(padded >= spec.kernel,
          "conv: input extent " + std::to_string(in) + " too small for kernel " +
              std::to_string(spec.kernel) + " with padding " +
              std::to_string(spec.padding));
  return (padded - spec.kernel) / spec.stride + 1;
}

std::size_t tconv_out_extent(std::size_t in, const ConvSpec& spec) {
  require(spec.kernel >= 1 && spec.stride >= 1,
          "tconv spec: kernel and stride must be >= 1");
  require(in >= 1, "tconv: input extent must be >= 1");
  const std::size_t grown = (in - 1) * spec.stride + spec.kernel;
  require(grown > 2 * spec.padding,
          "tconv: output extent would be non-positive for input " +
              std::to_string(in));
  return grown - 2 * spec.padding;
}

// --------------------------------------------------------------------------
// Default (fast) kernels.
// --------------------------------------------------------------------------

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      const ConvSpec& spec) {
  const ConvDims d = check_conv(x, w, b, spec, false, "conv2d_forward");
  Tensor y({d.N, d.Co, d.Ho, d.Wo});
  const std::size_t R = d.C * d.k * d.k;
  const std::size_t cols = d.Ho * d.Wo;
  const std::size_t in_plane = d.C * d.H * d.W;
  const std::size_t out_plane = d.Co * cols;
#pragma omp parallel
  {
    std::vector<double> P(R * cols);
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(d.N); ++n) {
      im2col(x.data() + n * in_plane, d.C, d.H, d.W, d.Ho, d.Wo, d.k, d.s, d.p,
             P.data());
      gemm_rows(w.data(), P.data(), y.data() + n * out_plane, d.Co, R, cols,
                b.data(), false);
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                          const ConvSpec& spec) {
  // Bias tensor is not needed for the backward pass; synthesize the shape.
  Tensor bshape({w.dim(0)});
  const ConvDims d = check_conv(x, w, bshape, spec, false, "conv2d_backward");
  check_grad_out(gy, d, "conv2d_backward");
  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.Co})};
  const std::size_t R = d.C * d.k * d.k;
  const std::size_t cols = d.Ho * d.Wo;
  const std::size_t in_plane = d.C * d.H * d.W;
  const std::size_t out_plane = d.Co * cols;

  // Input gradient: per-frame GEMM into patch space, then scatter. Frames are
  // independent, so the loop parallelizes without changing any result.
  std::vector<double> Wt(R * d.Co);
  transpose(w.data(), d.Co, R, Wt.data());
#pragma omp parallel
  {
    std::vector<double> G(R * cols);
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(d.N); ++n) {
      gemm_rows(Wt.data(), gy.data() + n * out_plane, G.data(), R, d.Co, cols,
                nullptr, false);
      col2im_acc(G.data(), d.C, d.H, d.W, d.Ho, d.Wo, d.k, d.s, d.p,
                 g.input.data() + n * in_plane);
    }
  }

  // Weight gradient: accumulate frame by frame in ascending order so the
  // reduction order (frame, output row, output column) is fixed regardless of
  // the OpenMP configuration.
  {
    std::vector<double> P(R * cols), Pt(cols * R);
    for (std::size_t n = 0; n < d.N; ++n) {
      im2col(x.data() + n * in_plane, d.C, d.H, d.W, d.Ho, d.Wo, d.k, d.s, d.p,
             P.data());
      transpose(P.data(), R, cols, Pt.data());
      gemm_rows(gy.data() + n * out_plane, Pt.data(), g.weight.data(), d.Co,
                cols, R, nullptr, true);
    }
  }

  for (std::size_t oc = 0; oc < d.Co; ++oc) {
    double acc = 0.0;
    for (std::size_t n = 0; n < d.N; ++n) {
      const double* gp = gy.data() + n * out_plane + oc * cols;
      for (std::size_t i = 0; i < cols; ++i) acc += gp[i];
    }
    g.bias[oc] = acc;
  }
  return g;
}

Tensor tconv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                       const ConvSpec& spec) {
  const ConvDims d = check_conv(x, w, b, spec, true, "tconv2d_forward");
  Tensor y({d.N, d.Co, d.Ho, d.Wo});
  const std::size_t R2 = d.Co * d.k * d.k;
  const std::size_t cols = d.H * d.W;
  const std::size_t in_plane = d.C * cols;
  const std::size_t out_plane = d.Co * d.Ho * d.Wo;

  // Repack w [C,Co,k,k] as A2[(oc,kh,kw)][c].
  std::vector<double> A2(R2 * d.C);
  {
    const std::size_t kk = d.k * d.k;
    for (std::size_t c = 0; c < d.C; ++c)
      for (std::size_t r = 0; r < R2; ++r)
        A2[r * d.C + c] = w.data()[c * R2 + r];
    (void)kk;
  }
#pragma omp parallel
  {
    std::vector<double> G(R2 * cols);
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(d.N); ++n) {
      gemm_rows(A2.data(), x.data() + n * in_plane, G.data(), R2, d.C, cols,
                nullptr, false);
      double* yp = y.data() + n * out_plane;
      for (std::size_t oc = 0; oc < d.Co; ++oc)
        std::fill(yp + oc * d.Ho * d.Wo, yp + (oc + 1) * d.Ho * d.Wo, b[oc]);
      tconv_scatter_acc(G.data(), d.Co, d.H, d.W, d.Ho, d.Wo, d.k, d.s, d.p,
                        yp);
    }
  }
  return y;
}

ConvGrads tconv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                           const ConvSpec& spec) {
  Tensor bshape({w.dim(1)});
  const ConvDims d = check_conv(x, w, bshape, spec, true, "tconv2d_backward");
  check_grad_out(gy, d, "tconv2d_backward");
  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.Co})};
  const std::size_t R2 = d.Co * d.k * d.k;
  const std::size_t cols = d.H * d.W;
  const std::size_t in_plane = d.C * cols;
  const std::size_t out_plane = d.Co * d.Ho * d.Wo;

  // Input gradient: dx[c] = w[c][.] dot patches of gy; w rows are already
  // contiguous in the [(oc,kh,kw)] order the patch matrix uses.
#pragma omp parallel
  {
    std::vector<double> P2(R2 * cols);
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(d.N); ++n) {
      im2col(gy.data() + n * out_plane, d.Co, d.Ho, d.Wo, d.H, d.W, d.k, d.s,
             d.p, P2.data());
      gemm_rows(w.data(), P2.data(), g.input.data() + n * in_plane, d.C, R2,
                cols, nullptr, false);
    }
  }

  // Weight gradient: fixed frame-ascending accumulation, as in conv2d.
  {
    std::vector<double> P2(R2 * cols), P2t(cols * R2);
    for (std::size_t n = 0; n < d.N; ++n) {
      im2col(gy.data() + n * out_plane, d.Co, d.Ho, d.Wo, d.H, d.W, d.k, d.s,
             d.p, P2.data());
      transpose(P2.data(), R2, cols, P2t.data());
      gemm_rows(x.data() + n * in_plane, P2t.data(), g.weight.data(), d.C, cols,
                R2, nullptr, true);
    }
  }

  const std::size_t oplane = d.Ho * d.Wo;
  for (std::size_t oc = 0; oc < d.Co; ++oc) {
    double acc = 0.0;
    for (std::size_t n = 0; n < d.N; ++n) {
      const double* gp = gy.data() + n * out_plane + oc * oplane;
      for (std::size_t i = 0; i < oplane; ++i) acc += gp[i];
    }
    g.bias[oc] = acc;
  }
  return g;
}

namespace {

void check_fc(const Tensor& x, const Tensor& w, const Tensor* b,
              const char* op) {
  require(x.rank() == 2 && w.rank() == 2,
          std::string(op) + ": expected rank-2 input and weight, got " +
              x.shape_str() + " and " + w.shape_str());
  require(x.dim(1) == w.dim(1), std::string(op) + ": input features " +
                                    x.shape_str() + " do not match weight " +
                                    w.shape_str());
  if (b)
    require(b->rank() == 1 && b->dim(0) == w.dim(0),
            std::string(op) + ": bias " + b->shape_str() +
                " does not match weight " + w.shape_str());
}

} // namespace

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_fc(x, w, &b, "fc_forward");
  const std::size_t N = x.dim(0), F = x.dim(1), Fo = w.dim(0);
  Tensor y({N, Fo});
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(N); ++n) {
    const double* xrow = x.data() + n * F;
    double* yrow = y.data() + n * Fo;
    for (std::size_t fo = 0; fo < Fo; ++fo) {
      const double* wrow = w.data() + fo * F;
      double acc = b[fo];
      for (std::size_t f = 0; f < F; ++f) acc = fmadd(xrow[f], wrow[f], acc);
      yrow[fo] = acc;
    }
  }
  return y;
}

FcGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor& gy) {
  check_fc(x, w, nullptr, "fc_backward");
  const std::size_t N = x.dim(0), F = x.dim(1), Fo = w.dim(0);
  require(gy.rank() == 2 && gy.dim(0) == N && gy.dim(1) == Fo,
          "fc_backward: output gradient " + gy.shape_str() +
              " does not match expected " + shape_to_string({N, Fo}));
  FcGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({Fo})};
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(N); ++n) {
    const double* grow = gy.data() + n * Fo;
    double* dxrow = g.input.data() + n * F;
    for (std::size_t f = 0; f < F; ++f) {
      double acc = 0.0;
      for (std::size_t fo = 0; fo < Fo; ++fo)
        acc = fmadd(grow[fo], w.data()[fo * F + f], acc);
      dxrow[f] = acc;
    }
  }
  for (std::size_t fo = 0; fo < Fo; ++fo) {
    double* dwrow = g.weight.data() + fo * F;
    double db = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double gv = gy.data()[n * Fo + fo];
      const double* xrow = x.data() + n * F;
      for (std::size_t f = 0; f < F; ++f)
        dwrow[f] = fmadd(gv, xrow[f], dwrow[f]);
      db += gv;
    }
    g.bias[fo] = db;
  }
  return g;
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  Tensor y(x.shape());
  const double* xp = x.data();
  double* yp = y.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    yp[i] = xp[i] >= 0.0 ? xp[i] : negative_slope * xp[i];
  return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& gy,
                           double negative_slope) {
  if (!x.same_shape(gy))
    throw UsageError("leaky_relu_backward: shape mismatch " + x.shape_str() +
                     " vs " + gy.shape_str());
  Tensor gx(x.shape());
  const double* xp = x.data();
  const double* gp = gy.data();
  double* op = gx.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    op[i] = xp[i] >= 0.0 ? gp[i] : negative_slope * gp[i];
  return gx;
}

double sigmoid_scalar(double x) noexcept {
  double y;
  if (x >= 0.0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  // Keep strictly inside (0,1) so log(y) and log(1-y) stay finite.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  if (y < lo) y = lo;
  if (y > hi) y = hi;
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  const double* xp = x.data();
  double* yp = y.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) yp[i] = sigmoid_scalar(xp[i]);
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& gy) {
  if (!y.same_shape(gy))
    throw UsageError("sigmoid_backward: shape mismatch " + y.shape_str() +
                     " vs " + gy.shape_str());
  Tensor gx(y.shape());
  const double* yp = y.data();
  const double* gp = gy.data();
  double* op = gx.data();
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) op[i] = gp[i] * yp[i] * (1.0 - yp[i]);
  return gx;
}

// --------------------------------------------------------------------------
// Serial reference kernels.
// --------------------------------------------------------------------------

namespace ref {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      const ConvSpec& spec) {
  const ConvDims d = check_conv(x, w, b, spec, false, "ref::conv2d_forward");
  Tensor y({d.N, d.Co, d.Ho, d.Wo});
  const std::int64_t s = static_cast<std::int64_t>(d.s);
  for (std::size_t n = 0; n < d.N; ++n)
    for (std::size_t oc = 0; oc < d.Co; ++oc)
      for (std::size_t oh = 0; oh < d.Ho; ++oh)
        for (std::size_t ow = 0; ow < d.Wo; ++ow) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < d.C; ++ic)
            for (std::size_t kh = 0; kh < d.k; ++kh) {
              const std::int64_t ih = static_cast<std::int64_t>(oh) * s - d.p +
                                      static_cast<std::int64_t>(kh);
              if (ih < 0 || ih >= static_cast<std::int64_t>(d.H)) continue;
              for (std::size_t kw = 0; kw < d.k; ++kw) {
                const std::int64_t iw = static_cast<std::int64_t>(ow) * s -
                                        d.p + static_cast<std::int64_t>(kw);
                if (iw < 0 || iw >= static_cast<std::int64_t>(d.W)) continue;
                acc = fmadd(x.at4(n, ic, static_cast<std::size_t>(ih),
                                  static_cast<std::size_t>(iw)),
                            w.at4(oc, ic, kh, kw), acc);
              }
            }
          y.at4(n, oc, oh, ow) = acc;
        }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                          const ConvSpec& spec) {
  Tensor bshape({w.dim(0)});
  const ConvDims d = check_conv(x, w, bshape, spec, false, "ref::conv2d_backward");
  check_grad_out(gy, d, "ref::conv2d_backward");
  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.Co})};
  const std::int64_t s = static_cast<std::int64_t>(d.s);

  for (std::size_t n = 0; n < d.N; ++n)
    for (std::size_t ic = 0; ic < d.C; ++ic)
      for (std::size_t ih = 0; ih < d.H; ++ih)
        for (std::size_t iw = 0; iw < d.W; ++iw) {
          // Accumulate tap-by-tap (inner dot over output channels) so the
          // summation order matches the blocked implementation bit for bit.
          double acc = 0.0;
          for (std::size_t kh = 0; kh < d.k; ++kh) {
            const std::int64_t nh = static_cast<std::int64_t>(ih) + d.p -
                                    static_cast<std::int64_t>(kh);
            if (nh < 0 || nh % s != 0) continue;
            const std::int64_t oh = nh / s;
            if (oh >= static_cast<std::int64_t>(d.Ho)) continue;
            for (std::size_t kw = 0; kw < d.k; ++kw) {
              const std::int64_t nw = static_cast<std::int64_t>(iw) + d.p -
                                      static_cast<std::int64_t>(kw);
              if (nw < 0 || nw % s != 0) continue;
              const std::int64_t ow = nw / s;
              if (ow >= static_cast<std::int64_t>(d.Wo)) continue;
              double tap = 0.0;
              for (std::size_t oc = 0; oc < d.Co; ++oc)
                tap = fmadd(gy.at4(n, oc, static_cast<std::size_t>(oh),
                                   static_cast<std::size_t>(ow)),
                            w.at4(oc, ic, kh, kw), tap);
              acc += tap;
            }
          }
          g.input.at4(n, ic, ih, iw) = acc;
        }

  for (std::size_t oc = 0; oc < d.Co; ++oc)
    for (std::size_t ic = 0; ic < d.C; ++ic)
      for (std::size_t kh = 0; kh < d.k; ++kh)
        for (std::size_t kw = 0; kw < d.k; ++kw) {
          double acc = 0.0;
          for (std::size_t n = 0; n < d.N; ++n)
            for (std::size_t oh = 0; oh < d.Ho; ++oh) {
              const std::int64_t ih = static_cast<std::int64_t>(oh) * s - d.p +
                                      static_cast<std::int64_t>(kh);
              if (ih < 0 || ih >= static_cast<std::int64_t>(d.H)) continue;
              for (std::size_t ow = 0; ow < d.Wo; ++ow) {
                const std::int64_t iw = static_cast<std::int64_t>(ow) * s -
                                        d.p + static_cast<std::int64_t>(kw);
                if (iw < 0 || iw >= static_cast<std::int64_t>(d.W)) continue;
                acc = fmadd(gy.at4(n, oc, oh, ow),
                            x.at4(n, ic, static_cast<std::size_t>(ih),
                                  static_cast<std::size_t>(iw)),
                            acc);
              }
            }
          g.weight.at4(oc, ic, kh, kw) = acc;
        }

  for (std::size_t oc = 0; oc < d.Co; ++oc) {
    double acc = 0.0;
    for (std::size_t n = 0; n < d.N; ++n)
      for (std::size_t oh = 0; oh < d.Ho; ++oh)
        for (std::size_t ow = 0; ow < d.Wo; ++ow) acc += gy.at4(n, oc, oh, ow);
    g.bias[oc] = acc;
  }
  return g;
}

Tensor tconv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                       const ConvSpec& spec) {
  const ConvDims d = check_conv(x, w, b, spec, true, "ref::tconv2d_forward");
  Tensor y({d.N, d.Co, d.Ho, d.Wo});
  const std::int64_t s = static_cast<std::int64_t>(d.s);
  for (std::size_t n = 0; n < d.N; ++n)
    for (std::size_t oc = 0; oc < d.Co; ++oc)
      for (std::size_t oh = 0; oh < d.Ho; ++oh)
        for (std::size_t ow = 0; ow < d.Wo; ++ow) {
          // Accumulate tap-by-tap (inner dot over input channels) so the
          // summation order matches the blocked implementation bit for bit.
          double acc = b[oc];
          for (std::size_t kh = 0; kh < d.k; ++kh) {
            const std::int64_t nh = static_cast<std::int64_t>(oh) + d.p -
                                    static_cast<std::int64_t>(kh);
            if (nh < 0 || nh % s != 0) continue;
            const std::int64_t ih = nh / s;
            if (ih >= static_cast<std::int64_t>(d.H)) continue;
            for (std::size_t kw = 0; kw < d.k; ++kw) {
              const std::int64_t nw = static_cast<std::int64_t>(ow) + d.p -
                                      static_cast<std::int64_t>(kw);
              if (nw < 0 || nw % s != 0) continue;
              const std::int64_t iw = nw / s;
              if (iw >= static_cast<std::int64_t>(d.W)) continue;
              double tap = 0.0;
              for (std::size_t ic = 0; ic < d.C; ++ic)
                tap = fmadd(x.at4(n, ic, static_cast<std::size_t>(ih),
                                  static_cast<std::size_t>(iw)),
                            w.at4(ic, oc, kh, kw), tap);
              acc += tap;
            }
          }
          y.at4(n, oc, oh, ow) = acc;
        }
  return y;
}

ConvGrads tconv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                           const ConvSpec& spec) {
  Tensor bshape({w.dim(1)});
  const ConvDims d = check_conv(x, w, bshape, spec, true, "ref::tconv2d_backward");
  check_grad_out(gy, d, "ref::tconv2d_backward");
  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.Co})};
  const std::int64_t s = static_cast<std::int64_t>(d.s);

  for (std::size_t n = 0; n < d.N; ++n)
    for (std::size_t ic = 0; ic < d.C; ++ic)
      for (std::size_t ih = 0; ih < d.H; ++ih)
        for (std::size_t iw = 0; iw < d.W; ++iw) {
          double acc = 0.0;
          for (std::size_t oc = 0; oc < d.Co; ++oc)
            for (std::size_t kh = 0; kh < d.k; ++kh) {
              const std::int64_t oh = static_cast<std::int64_t>(ih) * s - d.p +
                                      static_cast<std::int64_t>(kh);
              if (oh < 0 || oh >= static_cast<std::int64_t>(d.Ho)) continue;
              for (std::size_t kw = 0; kw < d.k; ++kw) {
                const std::int64_t ow = static_cast<std::int64_t>(iw) * s -
                                        d.p + static_cast<std::int64_t>(kw);
                if (ow < 0 || ow >= static_cast<std::int64_t>(d.Wo)) continue;
                acc = fmadd(gy.at4(n, oc, static_cast<std::size_t>(oh),
                                   static_cast<std::size_t>(ow)),
                            w.at4(ic, oc, kh, kw), acc);
              }
            }
          g.input.at4(n, ic, ih, iw) = acc;
        }

  for (std::size_t ic = 0; ic < d.C; ++ic)
    for (std::size_t oc = 0; oc < d.Co; ++oc)
      for (std::size_t kh = 0; kh < d.k; ++kh)
        for (std::size_t kw = 0; kw < d.k; ++kw) {
          double acc = 0.0;
          for (std::size_t n = 0; n < d.N; ++n)
            for (std::size_t ih = 0; ih < d.H; ++ih) {
              const std::int64_t oh = static_cast<std::int64_t>(ih) * s - d.p +
                                      static_cast<std::int64_t>(kh);
              if (oh < 0 || oh >= static_cast<std::int64_t>(d.Ho)) continue;
              for (std::size_t iw = 0; iw < d.W; ++iw) {
                const std::int64_t ow = static_cast<std::int64_t>(iw) * s -
                                        d.p + static_cast<std::int64_t>(kw);
                if (ow < 0 || ow >= static_cast<std::int64_t>(d.Wo)) continue;
                acc = fmadd(x.at4(n, ic, ih, iw),
                            gy.at4(n, oc, static_cast<std::size_t>(oh),
                                   static_cast<std::size_t>(ow)),
                            acc);
              }
            }
          g.weight.at4(ic, oc, kh, kw) = acc;
        }

  for (std::size_t oc = 0; oc < d.Co; ++oc) {
    double acc = 0.0;
    for (std::size_t n = 0; n < d.N; ++n)
      for (std::size_t oh = 0; oh < d.Ho; ++oh)
        for (std::size_t ow = 0; ow < d.Wo; ++ow) acc += gy.at4(n, oc, oh, ow);
    g.bias[oc] = acc;
  }
  return g;
}

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_fc(x, w, &b, "ref::fc_forward");
  const std::size_t N = x.dim(0), F = x.dim(1), Fo = w.dim(0);
  Tensor y({N, Fo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t fo = 0; fo < Fo; ++fo) {
      double acc = b[fo];
      for (std::size_t f = 0; f < F; ++f)
        acc = fmadd(x.at2(n, f), w.at2(fo, f), acc);
      y.at2(n, fo) = acc;
    }
  return y;
}

FcGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor& gy) {
  check_fc(x, w, nullptr, "ref::fc_backward");
  const std::size_t N = x.dim(0), F = x.dim(1), Fo = w.dim(0);
  require(gy.rank() == 2 && gy.dim(0) == N && gy.dim(1) == Fo,
          "ref::fc_backward: output gradient " + gy.shape_str() +
              " does not match expected " + shape_to_string({N, Fo}));
  FcGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({Fo})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f) {
      double acc = 0.0;
      for (std::size_t fo = 0; fo < Fo; ++fo)
        acc = fmadd(gy.at2(n, fo), w.at2(fo, f), acc);
      g.input.at2(n, f) = acc;
    }
  for (std::size_t fo = 0; fo < Fo; ++fo)
    for (std::size_t f = 0; f < F; ++f) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        acc = fmadd(gy.at2(n, fo), x.at2(n, f), acc);
      g.weight.at2(fo, f) = acc;
    }
  for (std::size_t fo = 0; fo < Fo; ++fo) {
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) acc += gy.at2(n, fo);
    g.bias[fo] = acc;
  }
  return g;
}

} // namespace ref

} // namespace spadvae::nn
