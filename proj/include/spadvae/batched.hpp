#pragma once

// Frame-minor inference kernels for batched scoring. Activations are stored
// element-major with the frame index innermost ([element][lane]), so every
// arithmetic step applies one scalar coefficient across a contiguous lane
// vector — at large batch sizes the hot loops vectorize across frames and
// amortize all addressing work, which is where the per-frame throughput
// gain over single-frame inference comes from.
//
// Every output element is accumulated in exactly the same order as the
// standard per-frame kernels (input channel, then kernel row, then kernel
// column; dot products before scatter-adds), so scores computed here are
// bit-identical to the reference pipeline.

#include "spadvae/datagen.hpp"
#include "spadvae/kernels.hpp"
#include "spadvae/tensor.hpp"
#include "spadvae/vae.hpp"

#include <cstdint>
#include <vector>

namespace spadvae::nn::batched {

// Dense [elements][lanes] buffer; lane l of element e sits at data[e*lanes+l].
struct FmBuffer {
  std::size_t elems = 0;
  std::size_t lanes = 0;
  std::vector<double> data;

  FmBuffer() = default;
  FmBuffer(std::size_t e, std::size_t l) : elems(e), lanes(l), data(e * l) {}

  void resize(std::size_t e, std::size_t l) {
    elems = e;
    lanes = l;
    data.resize(e * l);
  }
  double* row(std::size_t e) { return data.data() + e * lanes; }
  const double* row(std::size_t e) const { return data.data() + e * lanes; }
};

// Packs dense [N,C,H,W] activations (or a frame subset) into frame-minor
// layout; unpack_rows transposes an [E][N] buffer back to a [N,E] tensor.
FmBuffer pack_tensor(const Tensor& nchw);
FmBuffer pack_rows(const Tensor& rows); // [N,E] -> FmBuffer [E][N]
FmBuffer pack_frames(const std::vector<Frame>& frames,
                     const std::vector<std::size_t>* indices = nullptr);
Tensor unpack_rows(const FmBuffer& buf); // -> [lanes, elems]

// Layer kernels (shapes as in the standard per-frame kernels; weights and
// biases are ordinary tensors).
void conv_forward(const FmBuffer& x, std::size_t in_c, std::size_t in_h,
                  std::size_t in_w, const Tensor& w, const Tensor& bias,
                  const ConvSpec& spec, FmBuffer& y);
void tconv_forward(const FmBuffer& x, std::size_t in_c, std::size_t in_h,
                   std::size_t in_w, const Tensor& w, const Tensor& bias,
                   const ConvSpec& spec, FmBuffer& y);
void fc_forward(const FmBuffer& x, const Tensor& w, const Tensor& bias,
                FmBuffer& y);
void leaky_relu_inplace(FmBuffer& x, double negative_slope);
void sigmoid_inplace(FmBuffer& x);

// Reusable scratch for the model-level passes; call sites that loop (the
// benchmark, chunked scoring) keep one Workspace so buffers are allocated
// once.
struct Workspace {
  FmBuffer a, b;
  std::vector<double> lane_scratch;
};

void encode(const FmBuffer& frames, const Parameters& p,
            const ModelConfig& cfg, Workspace& ws, FmBuffer& mu,
            FmBuffer& logvar);
void decode(const FmBuffer& z, const Parameters& p, const ModelConfig& cfg,
            Workspace& ws, FmBuffer& recon);

// Per-lane loss sums, evaluated by the shared row kernels.
std::vector<double> bce_frames(const FmBuffer& x, const FmBuffer& recon,
                               Workspace& ws);
std::vector<double> kld_frames(const FmBuffer& mu, const FmBuffer& logvar,
                               Workspace& ws);

// z = mu + exp(logvar/2) * eps, elementwise over [d][N] buffers.
FmBuffer reparameterize_fm(const FmBuffer& mu, const FmBuffer& logvar,
                           const FmBuffer& eps);

// Full scoring pipeline on packed frames: encode, z = mu (or the sampled z
// when eps is given), decode, per-frame loss sums.
struct ScoredBatch {
  std::vector<double> bce, kld;
};
ScoredBatch score_packed(const FmBuffer& frames, const Parameters& p,
                         const ModelConfig& cfg, Workspace& ws,
                         const FmBuffer* eps = nullptr,
                         FmBuffer* mu_out = nullptr);

} // namespace spadvae::nn::batched
