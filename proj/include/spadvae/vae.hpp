#pragma once

#include "spadvae/kernels.hpp"
#include "spadvae/rng.hpp"
#include "spadvae/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spadvae {

// Architecture hyperparameters. The default is the 6-stage encoder
// [8,16,24,32,48,64] on 64x64 frames with a 32-dimensional latent space;
// reduced configs (fewer stages, smaller frames) are allowed for tests as
// long as the conv chain divides the extents exactly.
struct ModelConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::vector<std::size_t> encoder_channels = {8, 16, 24, 32, 48, 64};
  std::size_t latent_dim = 32;
  nn::ConvSpec conv{4, 2, 1};
  double leaky_slope = 0.01;

  std::size_t depth() const { return encoder_channels.size(); }
  std::size_t bottleneck_height() const;
  std::size_t bottleneck_width() const;
  std::size_t flat_features() const;

  void validate() const; // throws UsageError

  // Canonical little-endian byte serialization; basis of hash() and the
  // checkpoint config block.
  std::vector<std::uint8_t> serialize() const;
  static ModelConfig deserialize(const std::uint8_t* data, std::size_t len);
  std::uint64_t hash() const;

  bool operator==(const ModelConfig& o) const;
};

// All trainable tensors. Checkpoint order (also the order for_each visits):
// enc0.w, enc0.b, ..., mu.w, mu.b, logvar.w, logvar.b, dec_fc.w, dec_fc.b,
// dec0.w, dec0.b, ...
struct Parameters {
  std::vector<Tensor> enc_w, enc_b;
  Tensor mu_w, mu_b, logvar_w, logvar_b;
  Tensor dec_fc_w, dec_fc_b;
  std::vector<Tensor> dec_w, dec_b;

  template <typename F> void for_each(F&& f) {
    for (std::size_t i = 0; i < enc_w.size(); ++i) {
      f("enc" + std::to_string(i) + ".w", enc_w[i]);
      f("enc" + std::to_string(i) + ".b", enc_b[i]);
    }
    f("mu.w", mu_w);
    f("mu.b", mu_b);
    f("logvar.w", logvar_w);
    f("logvar.b", logvar_b);
    f("dec_fc.w", dec_fc_w);
    f("dec_fc.b", dec_fc_b);
    for (std::size_t i = 0; i < dec_w.size(); ++i) {
      f("dec" + std::to_string(i) + ".w", dec_w[i]);
      f("dec" + std::to_string(i) + ".b", dec_b[i]);
    }
  }
  template <typename F> void for_each(F&& f) const {
    const_cast<Parameters*>(this)->for_each(
        [&](const std::string& name, Tensor& t) {
          f(name, static_cast<const Tensor&>(t));
        });
  }

  std::size_t total_size() const;
  bool all_finite() const;
};

using Gradients = Parameters;

// Closed-form total parameter count for a config.
std::size_t parameter_count(const ModelConfig& cfg);

// Zero-initialized parameter set with the shapes the config dictates.
Parameters make_parameters(const ModelConfig& cfg);

// Seeded uniform init, U(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor, then
// snapped to the float32 grid (parameters live on that grid at all times so
// the 32-bit checkpoint round-trip is lossless).
Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Snap every parameter to the nearest float32 value. Called after init and
// after every optimizer step.
void quantize_parameters_f32(Parameters& p);

// Throws UsageError if p's shapes don't match cfg.
void check_parameters_shape(const Parameters& p, const ModelConfig& cfg);

struct LatentBatch {
  Tensor mu;     // [N,d]
  Tensor logvar; // [N,d]
};

struct LossBreakdown {
  double bce = 0.0;
  double kld = 0.0;
  double beta = 0.0;
  double total = 0.0; // always bce + beta*kld
};

LossBreakdown make_loss_breakdown(double bce, double kld, double beta);

// Forward activations recorded for backward().
struct ForwardCache {
  bool recorded = false;
  double beta = 0.0;
  Tensor input;
  std::vector<Tensor> enc_pre, enc_act;
  Tensor flat;
  Tensor mu, logvar, eps, z;
  Tensor dec_fc_pre, dec_fc_act;
  std::vector<Tensor> dec_in, dec_pre;
  Tensor recon;
};

struct ForwardResult {
  Tensor recon;
  LatentBatch stats;
  Tensor z;
  std::vector<LossBreakdown> losses; // one per frame
};

LatentBatch encode(const Tensor& frames, const Parameters& p,
                   const ModelConfig& cfg);

// z = mu + exp(logvar/2) * eps, elementwise.
Tensor reparameterize(const LatentBatch& stats, const Tensor& eps);

Tensor decode(const Tensor& z, const Parameters& p, const ModelConfig& cfg);

// eps helpers: all-zero (deterministic mode) or standard-normal rows drawn
// sequentially from rng (row-major order).
Tensor zero_noise(std::size_t n, std::size_t d);
Tensor sampled_noise(std::size_t n, std::size_t d, Rng& rng);

// Per-frame sums of Eq-style losses. Tensors are [N, ...]; each frame is one
// slice along dim 0. bce clamps xhat to [1e-7, 1-1e-7] before the logs.
std::vector<double> bce_per_frame(const Tensor& x, const Tensor& xhat);
std::vector<double> kld_per_frame(const LatentBatch& stats);

// Whole-tensor single-frame conveniences (any rank).
double bce_loss_frame(const Tensor& x, const Tensor& xhat);
double kld_loss_frame(const Tensor& mu, const Tensor& logvar);

// Raw-pointer forms of the per-frame sums, shared by every scoring path so
// alternative data layouts produce bit-identical loss values.
double bce_loss_row(const double* x, const double* xhat, std::size_t len);
double kld_loss_row(const double* mu, const double* logvar, std::size_t len);

// Full pass: encode, reparameterize with the given eps [N,d], decode, losses.
// If cache is non-null, activations are recorded for backward().
ForwardResult forward(const Tensor& frames, const Parameters& p,
                      const ModelConfig& cfg, const Tensor& eps, double beta,
                      ForwardCache* cache = nullptr);

// Analytic gradients of loss_scale * sum_frames [bce + beta*kld] with beta
// taken from the cache. Throws UsageError if the cache was not recorded.
Gradients backward(const ForwardCache& cache, const Parameters& p,
                   const ModelConfig& cfg, double loss_scale);

} // namespace spadvae
