#pragma once

#include "spadvae/tensor.hpp"

#include <cmath>
#include <cstddef>

namespace spadvae::nn {

// acc + a*b with pinned rounding. Every multiply-accumulate chain in this
// library (default kernels, serial reference kernels, batched scoring path)
// goes through this helper so the three implementations produce bit-identical
// results by IEEE semantics instead of depending on whether the compiler
// happens to contract a given loop. With hardware FMA the product is fused;
// without it no path can fuse, so plain mul+add is equally deterministic.
inline double fmadd(double a, double b, double acc) noexcept {
#ifdef FP_FAST_FMA
  return std::fma(a, b, acc);
#else
  return acc + a * b;
#endif
}

// Convolution geometry shared by the conv and transposed-conv stages.
// Defaults match the model blocks (4x4 kernel, stride 2, pad 1).
struct ConvSpec {
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;
};

// (in + 2p - k) / s + 1; throws UsageError if the geometry is invalid.
std::size_t conv_out_extent(std::size_t in, const ConvSpec& spec);
// (in - 1) * s - 2p + k; throws UsageError if the geometry is invalid.
std::size_t tconv_out_extent(std::size_t in, const ConvSpec& spec);

struct ConvGrads {
  Tensor input;  // same shape as x
  Tensor weight; // same shape as w
  Tensor bias;   // same shape as b
};

struct FcGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// Default kernels: im2col + register-tiled GEMM inner loops, OpenMP across
// frames. Per output element the reduction order is fixed (in-channel, then
// kernel row, then kernel column; weight gradients reduce over frame, then
// output row, then output column), so results do not depend on thread count.
//
// Shapes: x [N,C,H,W], conv w [Cout,Cin,k,k], tconv w [Cin,Cout,k,k], b [Cout],
// fc x [N,F], fc w [Fout,F], fc b [Fout].

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      const ConvSpec& spec);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                          const ConvSpec& spec);

Tensor tconv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                       const ConvSpec& spec);
ConvGrads tconv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                           const ConvSpec& spec);

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b);
FcGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor& gy);

Tensor leaky_relu(const Tensor& x, double negative_slope = 0.01);
// gy is dL/dy; x is the forward *input*. At x == 0 the slope-1 branch is used.
Tensor leaky_relu_backward(const Tensor& x, const Tensor& gy,
                           double negative_slope = 0.01);

// Numerically stable logistic; output clamped into the open interval (0,1)
// so downstream logs stay finite even for extreme inputs.
double sigmoid_scalar(double x) noexcept;
Tensor sigmoid(const Tensor& x);
// y is the forward *output* (gradient is y(1-y) * gy).
Tensor sigmoid_backward(const Tensor& y, const Tensor& gy);

// Naive serial reference kernels: direct loops, no scratch, no OpenMP.
// Kept as the correctness baseline for tests and the kernel benchmark.
namespace ref {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      const ConvSpec& spec);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                          const ConvSpec& spec);
Tensor tconv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                       const ConvSpec& spec);
ConvGrads tconv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                           const ConvSpec& spec);
Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b);
FcGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor& gy);

} // namespace ref

} // namespace spadvae::nn
