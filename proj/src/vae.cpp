#include "spadvae/vae.hpp"

#include "spadvae/errors.hpp"
#include "spadvae/wire.hpp"

#include <algorithm>
#include <cmath>

namespace spadvae {

namespace {

constexpr double kBceClampLo = 1e-7;
constexpr double kBceClampHi = 1.0 - 1e-7;

// Channel chain helpers. Encoder stage i maps enc_in(i) -> channels[i];
// decoder stage j maps dec_in(j) -> dec_out(j), mirroring the encoder.
std::size_t enc_in_channels(const ModelConfig& c, std::size_t i) {
  return i == 0 ? 1 : c.encoder_channels[i - 1];
}

std::size_t dec_in_channels(const ModelConfig& c, std::size_t j) {
  return c.encoder_channels[c.depth() - 1 - j];
}

std::size_t dec_out_channels(const ModelConfig& c, std::size_t j) {
  return j == c.depth() - 1 ? 1 : c.encoder_channels[c.depth() - 2 - j];
}

} // namespace

std::size_t ModelConfig::bottleneck_height() const {
  std::size_t h = input_height;
  for (std::size_t i = 0; i < depth(); ++i) h = nn::conv_out_extent(h, conv);
  return h;
}

std::size_t ModelConfig::bottleneck_width() const {
  std::size_t w = input_width;
  for (std::size_t i = 0; i < depth(); ++i) w = nn::conv_out_extent(w, conv);
  return w;
}

std::size_t ModelConfig::flat_features() const {
  return encoder_channels.back() * bottleneck_height() * bottleneck_width();
}

void ModelConfig::validate() const {
  if (encoder_channels.empty())
    throw UsageError("model config: encoder_channels must be non-empty");
  for (std::size_t c : encoder_channels)
    if (c < 1) throw UsageError("model config: channel counts must be >= 1");
  if (latent_dim < 1) throw UsageError("model config: latent_dim must be >= 1");
  if (leaky_slope < 0.0 || leaky_slope >= 1.0)
    throw UsageError("model config: leaky_slope must be in [0,1)");
  // The conv chain must shrink to a positive bottleneck and the transposed
  // chain must map back to the input extents exactly.
  std::size_t h = input_height, w = input_width;
  for (std::size_t i = 0; i < depth(); ++i) {
    h = nn::conv_out_extent(h, conv);
    w = nn::conv_out_extent(w, conv);
    if (h < 1 || w < 1)
      throw UsageError("model config: spatial extent collapses at stage " +
                       std::to_string(i));
  }
  for (std::size_t i = 0; i < depth(); ++i) {
    h = nn::tconv_out_extent(h, conv);
    w = nn::tconv_out_extent(w, conv);
  }
  if (h != input_height || w != input_width)
    throw UsageError(
        "model config: decoder does not invert the encoder geometry (" +
        std::to_string(input_height) + "x" + std::to_string(input_width) +
        " -> " + std::to_string(h) + "x" + std::to_string(w) + ")");
}

std::vector<std::uint8_t> ModelConfig::serialize() const {
  std::vector<std::uint8_t> out;
  wire::put_u32(out, static_cast<std::uint32_t>(input_height));
  wire::put_u32(out, static_cast<std::uint32_t>(input_width));
  wire::put_u32(out, static_cast<std::uint32_t>(encoder_channels.size()));
  for (std::size_t c : encoder_channels)
    wire::put_u32(out, static_cast<std::uint32_t>(c));
  wire::put_u32(out, static_cast<std::uint32_t>(latent_dim));
  wire::put_u32(out, static_cast<std::uint32_t>(conv.kernel));
  wire::put_u32(out, static_cast<std::uint32_t>(conv.stride));
  wire::put_u32(out, static_cast<std::uint32_t>(conv.padding));
  wire::put_f64(out, leaky_slope);
  return out;
}

ModelConfig ModelConfig::deserialize(const std::uint8_t* data,
                                     std::size_t len) {
  wire::Reader r(data, len);
  ModelConfig cfg;
  cfg.input_height = r.u32("config input_height");
  cfg.input_width = r.u32("config input_width");
  const std::uint32_t n = r.u32("config channel count");
  if (n > 64) throw IoError("config channel count implausible: " +
                            std::to_string(n));
  cfg.encoder_channels.clear();
  for (std::uint32_t i = 0; i < n; ++i)
    cfg.encoder_channels.push_back(r.u32("config channel"));
  cfg.latent_dim = r.u32("config latent_dim");
  cfg.conv.kernel = r.u32("config kernel");
  cfg.conv.stride = r.u32("config stride");
  cfg.conv.padding = r.u32("config padding");
  cfg.leaky_slope = r.f64("config leaky_slope");
  if (r.remaining() != 0)
    throw IoError::at("trailing bytes after config block", r.pos());
  cfg.validate();
  return cfg;
}

std::uint64_t ModelConfig::hash() const {
  const auto bytes = serialize();
  return fnv1a64(bytes.data(), bytes.size());
}

bool ModelConfig::operator==(const ModelConfig& o) const {
  return input_height == o.input_height && input_width == o.input_width &&
         encoder_channels == o.encoder_channels && latent_dim == o.latent_dim &&
         conv.kernel == o.conv.kernel && conv.stride == o.conv.stride &&
         conv.padding == o.conv.padding && leaky_slope == o.leaky_slope;
}

std::size_t Parameters::total_size() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

bool Parameters::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor& t) {
    if (!t.all_finite()) ok = false;
  });
  return ok;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t k2 = cfg.conv.kernel * cfg.conv.kernel;
  const std::size_t D = cfg.depth();
  const std::size_t F = cfg.flat_features();
  const std::size_t d = cfg.latent_dim;
  std::size_t total = 0;
  for (std::size_t i = 0; i < D; ++i)
    total += enc_in_channels(cfg, i) * cfg.encoder_channels[i] * k2 +
             cfg.encoder_channels[i];
  total += 2 * (F * d + d);   // mu and logvar heads
  total += d * F + F;         // decoder input head
  for (std::size_t j = 0; j < D; ++j)
    total += dec_in_channels(cfg, j) * dec_out_channels(cfg, j) * k2 +
             dec_out_channels(cfg, j);
  return total;
}

Parameters make_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.conv.kernel;
  const std::size_t D = cfg.depth();
  const std::size_t F = cfg.flat_features();
  const std::size_t d = cfg.latent_dim;
  Parameters p;
  for (std::size_t i = 0; i < D; ++i) {
    p.enc_w.emplace_back(
        std::vector<std::size_t>{cfg.encoder_channels[i], enc_in_channels(cfg, i), k, k});
    p.enc_b.emplace_back(std::vector<std::size_t>{cfg.encoder_channels[i]});
  }
  p.mu_w = Tensor({d, F});
  p.mu_b = Tensor({d});
  p.logvar_w = Tensor({d, F});
  p.logvar_b = Tensor({d});
  p.dec_fc_w = Tensor({F, d});
  p.dec_fc_b = Tensor({F});
  for (std::size_t j = 0; j < D; ++j) {
    p.dec_w.emplace_back(std::vector<std::size_t>{
        dec_in_channels(cfg, j), dec_out_channels(cfg, j), k, k});
    p.dec_b.emplace_back(std::vector<std::size_t>{dec_out_channels(cfg, j)});
  }
  return p;
}

void quantize_parameters_f32(Parameters& p) {
  p.for_each([](const std::string&, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(static_cast<float>(t[i]));
  });
}

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  Parameters p = make_parameters(cfg);
  const std::size_t k2 = cfg.conv.kernel * cfg.conv.kernel;
  // fan_in: conv/tconv weights use (weight dim 1) * k^2, fully-connected
  // weights their input feature count; each bias shares its weight's bound.
  // Every tensor gets its own derived stream, so the values do not depend on
  // fill order.
  std::size_t idx = 0;
  double weight_bound = 1.0;
  p.for_each([&](const std::string&, Tensor& t) {
    if (t.rank() == 4)
      weight_bound = 1.0 / std::sqrt(static_cast<double>(t.dim(1) * k2));
    else if (t.rank() == 2)
      weight_bound = 1.0 / std::sqrt(static_cast<double>(t.dim(1)));
    Rng rng(derive_seed(seed, "init", idx));
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = rng.next_uniform(-weight_bound, weight_bound);
    ++idx;
  });
  quantize_parameters_f32(p);
  return p;
}

void check_parameters_shape(const Parameters& p, const ModelConfig& cfg) {
  const Parameters expect = make_parameters(cfg);
  bool ok = p.enc_w.size() == expect.enc_w.size() &&
            p.dec_w.size() == expect.dec_w.size() &&
            p.enc_b.size() == expect.enc_b.size() &&
            p.dec_b.size() == expect.dec_b.size();
  if (ok) {
    std::vector<const Tensor*> a, b;
    p.for_each([&](const std::string&, const Tensor& t) { a.push_back(&t); });
    expect.for_each(
        [&](const std::string&, const Tensor& t) { b.push_back(&t); });
    for (std::size_t i = 0; ok && i < a.size(); ++i)
      if (a[i]->shape() != b[i]->shape()) ok = false;
  }
  if (!ok)
    throw UsageError("parameters do not match the model config (expected " +
                     std::to_string(parameter_count(cfg)) + " values)");
}

LossBreakdown make_loss_breakdown(double bce, double kld, double beta) {
  LossBreakdown l;
  l.bce = bce;
  l.kld = kld;
  l.beta = beta;
  l.total = bce + beta * kld;
  return l;
}

namespace {

void check_frames(const Tensor& frames, const ModelConfig& cfg,
                  const char* op) {
  if (frames.rank() != 4 || frames.dim(1) != 1 ||
      frames.dim(2) != cfg.input_height || frames.dim(3) != cfg.input_width)
    throw UsageError(std::string(op) + ": frames " + frames.shape_str() +
                     " do not match config [N,1," +
                     std::to_string(cfg.input_height) + "," +
                     std::to_string(cfg.input_width) + "]");
}

void check_finite_params(const Parameters& p, const char* op) {
  if (!p.all_finite())
    throw NumericError(std::string(op) + ": non-finite parameter values", op);
}

} // namespace

LatentBatch encode(const Tensor& frames, const Parameters& p,
                   const ModelConfig& cfg) {
  check_frames(frames, cfg, "encode");
  check_parameters_shape(p, cfg);
  check_finite_params(p, "encode");
  const std::size_t N = frames.dim(0);
  Tensor cur = frames;
  for (std::size_t i = 0; i < cfg.depth(); ++i) {
    Tensor pre = nn::conv2d_forward(cur, p.enc_w[i], p.enc_b[i], cfg.conv);
    cur = nn::leaky_relu(pre, cfg.leaky_slope);
  }
  Tensor flat = cur.reshaped({N, cfg.flat_features()});
  LatentBatch out;
  out.mu = nn::fc_forward(flat, p.mu_w, p.mu_b);
  out.logvar = nn::fc_forward(flat, p.logvar_w, p.logvar_b);
  return out;
}

Tensor reparameterize(const LatentBatch& stats, const Tensor& eps) {
  if (!stats.mu.same_shape(stats.logvar) || !stats.mu.same_shape(eps))
    throw UsageError("reparameterize: shape mismatch mu " +
                     stats.mu.shape_str() + " logvar " +
                     stats.logvar.shape_str() + " eps " + eps.shape_str());
  Tensor z(stats.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = nn::fmadd(std::exp(stats.logvar[i] / 2.0), eps[i], stats.mu[i]);
  return z;
}

Tensor decode(const Tensor& z, const Parameters& p, const ModelConfig& cfg) {
  check_parameters_shape(p, cfg);
  check_finite_params(p, "decode");
  if (z.rank() != 2 || z.dim(1) != cfg.latent_dim)
    throw UsageError("decode: z " + z.shape_str() + " does not match [N," +
                     std::to_string(cfg.latent_dim) + "]");
  const std::size_t N = z.dim(0);
  Tensor fc_pre = nn::fc_forward(z, p.dec_fc_w, p.dec_fc_b);
  Tensor fc_act = nn::leaky_relu(fc_pre, cfg.leaky_slope);
  Tensor cur = fc_act.reshaped({N, cfg.encoder_channels.back(),
                                cfg.bottleneck_height(),
                                cfg.bottleneck_width()});
  for (std::size_t j = 0; j < cfg.depth(); ++j) {
    Tensor pre = nn::tconv2d_forward(cur, p.dec_w[j], p.dec_b[j], cfg.conv);
    cur = (j + 1 < cfg.depth()) ? nn::leaky_relu(pre, cfg.leaky_slope)
                                : nn::sigmoid(pre);
  }
  return cur;
}

Tensor zero_noise(std::size_t n, std::size_t d) { return Tensor({n, d}); }

Tensor sampled_noise(std::size_t n, std::size_t d, Rng& rng) {
  Tensor eps({n, d});
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.next_normal();
  return eps;
}

double bce_loss_row(const double* x, const double* xhat, std::size_t len) {
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double xc = std::clamp(xhat[i], kBceClampLo, kBceClampHi);
    acc -= x[i] * std::log(xc) + (1.0 - x[i]) * std::log(1.0 - xc);
  }
  return acc;
}

double kld_loss_row(const double* mu, const double* lv, std::size_t len) {
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i)
    acc += 1.0 + lv[i] - std::exp(lv[i]) - mu[i] * mu[i];
  const double kld = -0.5 * acc;
  // Analytically >= 0; clamp shields the invariant against rounding at the
  // prior point.
  return kld > 0.0 ? kld : 0.0;
}

namespace {

double bce_row(const double* x, const double* xhat, std::size_t len) {
  return bce_loss_row(x, xhat, len);
}

double kld_row(const double* mu, const double* lv, std::size_t len) {
  return kld_loss_row(mu, lv, len);
}

} // namespace

std::vector<double> bce_per_frame(const Tensor& x, const Tensor& xhat) {
  if (!x.same_shape(xhat))
    throw UsageError("bce: shape mismatch " + x.shape_str() + " vs " +
                     xhat.shape_str());
  if (x.rank() < 1 || x.dim(0) == 0)
    throw UsageError("bce: empty batch");
  const std::size_t N = x.dim(0);
  const std::size_t per = x.size() / N;
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n)
    out[n] = bce_row(x.data() + n * per, xhat.data() + n * per, per);
  return out;
}

std::vector<double> kld_per_frame(const LatentBatch& stats) {
  if (!stats.mu.same_shape(stats.logvar))
    throw UsageError("kld: shape mismatch mu " + stats.mu.shape_str() +
                     " vs logvar " + stats.logvar.shape_str());
  const std::size_t N = stats.mu.dim(0);
  const std::size_t d = stats.mu.size() / N;
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n)
    out[n] = kld_row(stats.mu.data() + n * d, stats.logvar.data() + n * d, d);
  return out;
}

double bce_loss_frame(const Tensor& x, const Tensor& xhat) {
  if (!x.same_shape(xhat))
    throw UsageError("bce: shape mismatch " + x.shape_str() + " vs " +
                     xhat.shape_str());
  return bce_row(x.data(), xhat.data(), x.size());
}

double kld_loss_frame(const Tensor& mu, const Tensor& logvar) {
  if (!mu.same_shape(logvar))
    throw UsageError("kld: shape mismatch " + mu.shape_str() + " vs " +
                     logvar.shape_str());
  return kld_row(mu.data(), logvar.data(), mu.size());
}

ForwardResult forward(const Tensor& frames, const Parameters& p,
                      const ModelConfig& cfg, const Tensor& eps, double beta,
                      ForwardCache* cache) {
  check_frames(frames, cfg, "forward");
  check_parameters_shape(p, cfg);
  check_finite_params(p, "forward");
  const std::size_t N = frames.dim(0);
  const std::size_t D = cfg.depth();
  if (eps.rank() != 2 || eps.dim(0) != N || eps.dim(1) != cfg.latent_dim)
    throw UsageError("forward: eps " + eps.shape_str() +
                     " does not match [N,d]");

  ForwardCache local;
  ForwardCache& cc = cache ? *cache : local;
  cc = ForwardCache{};
  cc.beta = beta;
  cc.input = frames;

  Tensor cur = frames;
  for (std::size_t i = 0; i < D; ++i) {
    Tensor pre = nn::conv2d_forward(cur, p.enc_w[i], p.enc_b[i], cfg.conv);
    cur = nn::leaky_relu(pre, cfg.leaky_slope);
    cc.enc_pre.push_back(std::move(pre));
    cc.enc_act.push_back(cur);
  }
  cc.flat = cur.reshaped({N, cfg.flat_features()});
  cc.mu = nn::fc_forward(cc.flat, p.mu_w, p.mu_b);
  cc.logvar = nn::fc_forward(cc.flat, p.logvar_w, p.logvar_b);
  cc.eps = eps;
  cc.z = reparameterize(LatentBatch{cc.mu, cc.logvar}, eps);

  cc.dec_fc_pre = nn::fc_forward(cc.z, p.dec_fc_w, p.dec_fc_b);
  cc.dec_fc_act = nn::leaky_relu(cc.dec_fc_pre, cfg.leaky_slope);
  cur = cc.dec_fc_act.reshaped({N, cfg.encoder_channels.back(),
                                cfg.bottleneck_height(),
                                cfg.bottleneck_width()});
  for (std::size_t j = 0; j < D; ++j) {
    cc.dec_in.push_back(cur);
    Tensor pre = nn::tconv2d_forward(cur, p.dec_w[j], p.dec_b[j], cfg.conv);
    cur = (j + 1 < D) ? nn::leaky_relu(pre, cfg.leaky_slope)
                      : nn::sigmoid(pre);
    cc.dec_pre.push_back(std::move(pre));
  }
  cc.recon = cur;
  cc.recorded = true;

  ForwardResult res;
  res.recon = cc.recon;
  res.stats = LatentBatch{cc.mu, cc.logvar};
  res.z = cc.z;
  const std::vector<double> bces = bce_per_frame(frames, cc.recon);
  const std::vector<double> klds =
      kld_per_frame(LatentBatch{cc.mu, cc.logvar});
  res.losses.reserve(N);
  for (std::size_t n = 0; n < N; ++n)
    res.losses.push_back(make_loss_breakdown(bces[n], klds[n], beta));
  return res;
}

Gradients backward(const ForwardCache& cc, const Parameters& p,
                   const ModelConfig& cfg, double loss_scale) {
  if (!cc.recorded)
    throw UsageError("backward called without a recorded forward pass");
  check_parameters_shape(p, cfg);
  const std::size_t N = cc.input.dim(0);
  const std::size_t D = cfg.depth();
  const double beta = cc.beta;
  Gradients grads = make_parameters(cfg);

  // d(bce)/d(recon), zero where the clamp is active.
  Tensor grecon(cc.recon.shape());
  for (std::size_t i = 0; i < grecon.size(); ++i) {
    const double xv = cc.input[i];
    const double rv = cc.recon[i];
    if (rv <= kBceClampLo || rv >= kBceClampHi) {
      grecon[i] = 0.0;
    } else {
      grecon[i] = loss_scale * (-xv / rv + (1.0 - xv) / (1.0 - rv));
    }
  }

  // Decoder chain.
  Tensor gact = std::move(grecon);
  for (std::size_t jj = D; jj-- > 0;) {
    Tensor gpre = (jj + 1 == D)
                      ? nn::sigmoid_backward(cc.recon, gact)
                      : nn::leaky_relu_backward(cc.dec_pre[jj], gact,
                                                cfg.leaky_slope);
    nn::ConvGrads tg =
        nn::tconv2d_backward(cc.dec_in[jj], p.dec_w[jj], gpre, cfg.conv);
    grads.dec_w[jj] = std::move(tg.weight);
    grads.dec_b[jj] = std::move(tg.bias);
    gact = std::move(tg.input);
  }

  Tensor g_fc_act = gact.reshaped({N, cfg.flat_features()});
  Tensor g_fc_pre =
      nn::leaky_relu_backward(cc.dec_fc_pre, g_fc_act, cfg.leaky_slope);
  nn::FcGrads fcg = nn::fc_backward(cc.z, p.dec_fc_w, g_fc_pre);
  grads.dec_fc_w = std::move(fcg.weight);
  grads.dec_fc_b = std::move(fcg.bias);

  // Latent gradients: through the reparameterisation plus the direct KLD term.
  Tensor gmu = fcg.input; // dz flows to mu with unit factor
  Tensor glv(cc.logvar.shape());
  for (std::size_t i = 0; i < glv.size(); ++i) {
    const double sigma = std::exp(cc.logvar[i] / 2.0);
    glv[i] = fcg.input[i] * 0.5 * sigma * cc.eps[i] +
             loss_scale * beta * 0.5 * (std::exp(cc.logvar[i]) - 1.0);
    gmu[i] += loss_scale * beta * cc.mu[i];
  }

  nn::FcGrads mg = nn::fc_backward(cc.flat, p.mu_w, gmu);
  nn::FcGrads lg = nn::fc_backward(cc.flat, p.logvar_w, glv);
  grads.mu_w = std::move(mg.weight);
  grads.mu_b = std::move(mg.bias);
  grads.logvar_w = std::move(lg.weight);
  grads.logvar_b = std::move(lg.bias);

  Tensor gflat(mg.input.shape());
  for (std::size_t i = 0; i < gflat.size(); ++i)
    gflat[i] = mg.input[i] + lg.input[i];

  // Encoder chain.
  Tensor gcur = gflat.reshaped({N, cfg.encoder_channels.back(),
                                cfg.bottleneck_height(),
                                cfg.bottleneck_width()});
  for (std::size_t ii = D; ii-- > 0;) {
    Tensor gpre =
        nn::leaky_relu_backward(cc.enc_pre[ii], gcur, cfg.leaky_slope);
    const Tensor& stage_in = ii == 0 ? cc.input : cc.enc_act[ii - 1];
    nn::ConvGrads cg =
        nn::conv2d_backward(stage_in, p.enc_w[ii], gpre, cfg.conv);
    grads.enc_w[ii] = std::move(cg.weight);
    grads.enc_b[ii] = std::move(cg.bias);
    gcur = std::move(cg.input);
  }
  return grads;
}

} // namespace spadvae
