#include "spadvae/batched.hpp"

#include "spadvae/errors.hpp"

#include <algorithm>
#include <cmath>

namespace spadvae::nn::batched {

namespace {

// Same accumulation-order rules as the standard kernels: per output element
// the taps run (input channel, kernel row, kernel column) ascending in one
// fused chain; transposed convolutions finish each (kernel row, kernel
// column) dot product over input channels before adding it to the output.
// Zero-padding taps are skipped — adding an exact zero never changes the
// running sum of these chains.

void check_lanes(const FmBuffer& x, std::size_t expect_elems,
                 const char* what) {
  if (x.elems != expect_elems)
    throw UsageError(std::string(what) + ": buffer holds " +
                     std::to_string(x.elems) + " elements, expected " +
                     std::to_string(expect_elems));
  if (x.lanes == 0) throw UsageError(std::string(what) + ": zero lanes");
  if (x.data.size() != x.elems * x.lanes)
    throw UsageError(std::string(what) + ": buffer storage mismatch");
}

} // namespace

FmBuffer pack_tensor(const Tensor& nchw) {
  if (nchw.rank() != 4)
    throw UsageError("pack_tensor expects [N,C,H,W], got " + nchw.shape_str());
  const std::size_t n = nchw.dim(0);
  const std::size_t e = nchw.dim(1) * nchw.dim(2) * nchw.dim(3);
  FmBuffer out(e, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = nchw.data() + i * e;
    for (std::size_t j = 0; j < e; ++j) out.data[j * n + i] = src[j];
  }
  return out;
}

FmBuffer pack_rows(const Tensor& rows) {
  if (rows.rank() != 2)
    throw UsageError("pack_rows expects [N,E], got " + rows.shape_str());
  const std::size_t n = rows.dim(0);
  const std::size_t e = rows.dim(1);
  FmBuffer out(e, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < e; ++j)
      out.data[j * n + i] = rows.data()[i * e + j];
  return out;
}

FmBuffer pack_frames(const std::vector<Frame>& frames,
                     const std::vector<std::size_t>* indices) {
  const std::size_t n = indices ? indices->size() : frames.size();
  if (n == 0) throw UsageError("cannot pack zero frames");
  auto pick = [&](std::size_t i) -> const Frame& {
    const std::size_t src = indices ? (*indices)[i] : i;
    if (src >= frames.size())
      throw UsageError("frame index out of range while packing");
    return frames[src];
  };
  const std::size_t h = pick(0).height();
  const std::size_t w = pick(0).width();
  FmBuffer out(h * w, n);
  for (std::size_t i = 0; i < n; ++i) {
    const Frame& f = pick(i);
    if (f.height() != h || f.width() != w)
      throw UsageError("frames differ in geometry while packing");
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.data[(y * w + x) * n + i] = f.get(x, y) ? 1.0 : 0.0;
  }
  return out;
}

Tensor unpack_rows(const FmBuffer& buf) {
  Tensor out({buf.lanes, buf.elems});
  for (std::size_t e = 0; e < buf.elems; ++e) {
    const double* src = buf.row(e);
    for (std::size_t l = 0; l < buf.lanes; ++l)
      out.data()[l * buf.elems + e] = src[l];
  }
  return out;
}

void conv_forward(const FmBuffer& x, std::size_t in_c, std::size_t in_h,
                  std::size_t in_w, const Tensor& w, const Tensor& bias,
                  const ConvSpec& spec, FmBuffer& y) {
  check_lanes(x, in_c * in_h * in_w, "batched conv");
  if (w.rank() != 4 || w.dim(1) != in_c || w.dim(2) != spec.kernel ||
      w.dim(3) != spec.kernel)
    throw UsageError("batched conv: weight " + w.shape_str() +
                     " does not match input channels " + std::to_string(in_c));
  const std::size_t out_c = w.dim(0);
  if (bias.size() != out_c)
    throw UsageError("batched conv: bias size mismatch");
  const std::size_t out_h = conv_out_extent(in_h, spec);
  const std::size_t out_w = conv_out_extent(in_w, spec);
  const std::size_t lanes = x.lanes;
  const std::size_t k = spec.kernel;
  const std::int64_t p = static_cast<std::int64_t>(spec.padding);
  const std::int64_t s = static_cast<std::int64_t>(spec.stride);

  y.resize(out_c * out_h * out_w, lanes);
  for (std::size_t oc = 0; oc < out_c; ++oc) {
    const double bval = bias[oc];
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        double* acc = y.row((oc * out_h + oh) * out_w + ow);
        for (std::size_t l = 0; l < lanes; ++l) acc[l] = bval;
        for (std::size_t ic = 0; ic < in_c; ++ic) {
          for (std::size_t kh = 0; kh < k; ++kh) {
            const std::int64_t ih =
                static_cast<std::int64_t>(oh) * s - p +
                static_cast<std::int64_t>(kh);
            if (ih < 0 || ih >= static_cast<std::int64_t>(in_h)) continue;
            for (std::size_t kw = 0; kw < k; ++kw) {
              const std::int64_t iw =
                  static_cast<std::int64_t>(ow) * s - p +
                  static_cast<std::int64_t>(kw);
              if (iw < 0 || iw >= static_cast<std::int64_t>(in_w)) continue;
              const double wv = w[((oc * in_c + ic) * k + kh) * k + kw];
              const double* src = x.row(
                  (ic * in_h + static_cast<std::size_t>(ih)) * in_w +
                  static_cast<std::size_t>(iw));
              for (std::size_t l = 0; l < lanes; ++l)
                acc[l] = fmadd(wv, src[l], acc[l]);
            }
          }
        }
      }
    }
  }
}

void tconv_forward(const FmBuffer& x, std::size_t in_c, std::size_t in_h,
                   std::size_t in_w, const Tensor& w, const Tensor& bias,
                   const ConvSpec& spec, FmBuffer& y) {
  check_lanes(x, in_c * in_h * in_w, "batched tconv");
  if (w.rank() != 4 || w.dim(0) != in_c || w.dim(2) != spec.kernel ||
      w.dim(3) != spec.kernel)
    throw UsageError("batched tconv: weight " + w.shape_str() +
                     " does not match input channels " + std::to_string(in_c));
  const std::size_t out_c = w.dim(1);
  if (bias.size() != out_c)
    throw UsageError("batched tconv: bias size mismatch");
  const std::size_t out_h = tconv_out_extent(in_h, spec);
  const std::size_t out_w = tconv_out_extent(in_w, spec);
  const std::size_t lanes = x.lanes;
  const std::size_t k = spec.kernel;
  const std::int64_t p = static_cast<std::int64_t>(spec.padding);
  const std::int64_t s = static_cast<std::int64_t>(spec.stride);

  y.resize(out_c * out_h * out_w, lanes);
  std::vector<double> inner(lanes);
  for (std::size_t oc = 0; oc < out_c; ++oc) {
    const double bval = bias[oc];
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        double* acc = y.row((oc * out_h + oh) * out_w + ow);
        for (std::size_t l = 0; l < lanes; ++l) acc[l] = bval;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const std::int64_t ihs =
              static_cast<std::int64_t>(oh) + p - static_cast<std::int64_t>(kh);
          if (ihs < 0 || ihs % s != 0) continue;
          const std::int64_t ih = ihs / s;
          if (ih >= static_cast<std::int64_t>(in_h)) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const std::int64_t iws = static_cast<std::int64_t>(ow) + p -
                                     static_cast<std::int64_t>(kw);
            if (iws < 0 || iws % s != 0) continue;
            const std::int64_t iw = iws / s;
            if (iw >= static_cast<std::int64_t>(in_w)) continue;
            // Finish the channel dot product first, then add it, matching
            // the standard kernel's matrix-product-then-scatter order.
            for (std::size_t l = 0; l < lanes; ++l) inner[l] = 0.0;
            for (std::size_t ic = 0; ic < in_c; ++ic) {
              const double wv = w[((ic * out_c + oc) * k + kh) * k + kw];
              const double* src = x.row(
                  (ic * in_h + static_cast<std::size_t>(ih)) * in_w +
                  static_cast<std::size_t>(iw));
              for (std::size_t l = 0; l < lanes; ++l)
                inner[l] = fmadd(wv, src[l], inner[l]);
            }
            for (std::size_t l = 0; l < lanes; ++l) acc[l] += inner[l];
          }
        }
      }
    }
  }
}

void fc_forward(const FmBuffer& x, const Tensor& w, const Tensor& bias,
                FmBuffer& y) {
  if (w.rank() != 2)
    throw UsageError("batched fc: weight must be rank 2");
  const std::size_t out_f = w.dim(0);
  const std::size_t in_f = w.dim(1);
  check_lanes(x, in_f, "batched fc");
  if (bias.size() != out_f)
    throw UsageError("batched fc: bias size mismatch");
  const std::size_t lanes = x.lanes;
  y.resize(out_f, lanes);
  for (std::size_t fo = 0; fo < out_f; ++fo) {
    double* acc = y.row(fo);
    const double bval = bias[fo];
    for (std::size_t l = 0; l < lanes; ++l) acc[l] = bval;
    for (std::size_t fi = 0; fi < in_f; ++fi) {
      const double wv = w[fo * in_f + fi];
      const double* src = x.row(fi);
      for (std::size_t l = 0; l < lanes; ++l)
        acc[l] = fmadd(wv, src[l], acc[l]);
    }
  }
}

void leaky_relu_inplace(FmBuffer& x, double negative_slope) {
  double* d = x.data.data();
  const std::size_t n = x.data.size();
  for (std::size_t i = 0; i < n; ++i)
    d[i] = d[i] >= 0.0 ? d[i] : negative_slope * d[i];
}

void sigmoid_inplace(FmBuffer& x) {
  double* d = x.data.data();
  const std::size_t n = x.data.size();
  for (std::size_t i = 0; i < n; ++i) d[i] = sigmoid_scalar(d[i]);
}

void encode(const FmBuffer& frames, const Parameters& p,
            const ModelConfig& cfg, Workspace& ws, FmBuffer& mu,
            FmBuffer& logvar) {
  check_parameters_shape(p, cfg);
  if (!p.all_finite())
    throw NumericError("non-finite parameter while encoding", "encode");
  check_lanes(frames, cfg.input_height * cfg.input_width, "batched encode");

  const FmBuffer* cur = &frames;
  std::size_t c = 1, h = cfg.input_height, w = cfg.input_width;
  for (std::size_t i = 0; i < cfg.depth(); ++i) {
    FmBuffer& dst = (i % 2 == 0) ? ws.a : ws.b;
    conv_forward(*cur, c, h, w, p.enc_w[i], p.enc_b[i], cfg.conv, dst);
    leaky_relu_inplace(dst, cfg.leaky_slope);
    c = cfg.encoder_channels[i];
    h = conv_out_extent(h, cfg.conv);
    w = conv_out_extent(w, cfg.conv);
    cur = &dst;
  }
  fc_forward(*cur, p.mu_w, p.mu_b, mu);
  fc_forward(*cur, p.logvar_w, p.logvar_b, logvar);
}

void decode(const FmBuffer& z, const Parameters& p, const ModelConfig& cfg,
            Workspace& ws, FmBuffer& recon) {
  check_parameters_shape(p, cfg);
  if (!p.all_finite())
    throw NumericError("non-finite parameter while decoding", "decode");
  check_lanes(z, cfg.latent_dim, "batched decode");

  fc_forward(z, p.dec_fc_w, p.dec_fc_b, ws.a);
  leaky_relu_inplace(ws.a, cfg.leaky_slope);

  const FmBuffer* cur = &ws.a;
  std::size_t c = cfg.encoder_channels.back();
  std::size_t h = cfg.bottleneck_height(), w = cfg.bottleneck_width();
  for (std::size_t j = 0; j < cfg.depth(); ++j) {
    const bool last = (j + 1 == cfg.depth());
    FmBuffer& dst = last ? recon : ((j % 2 == 0) ? ws.b : ws.a);
    tconv_forward(*cur, c, h, w, p.dec_w[j], p.dec_b[j], cfg.conv, dst);
    if (last)
      sigmoid_inplace(dst);
    else
      leaky_relu_inplace(dst, cfg.leaky_slope);
    c = p.dec_w[j].dim(1);
    h = tconv_out_extent(h, cfg.conv);
    w = tconv_out_extent(w, cfg.conv);
    cur = &dst;
  }
}

std::vector<double> bce_frames(const FmBuffer& x, const FmBuffer& recon,
                               Workspace& ws) {
  if (x.elems != recon.elems || x.lanes != recon.lanes)
    throw UsageError("batched bce: layout mismatch");
  const std::size_t lanes = x.lanes, elems = x.elems;
  ws.lane_scratch.resize(2 * elems);
  double* xs = ws.lane_scratch.data();
  double* rs = xs + elems;
  std::vector<double> out(lanes);
  for (std::size_t l = 0; l < lanes; ++l) {
    for (std::size_t e = 0; e < elems; ++e) {
      xs[e] = x.data[e * lanes + l];
      rs[e] = recon.data[e * lanes + l];
    }
    out[l] = bce_loss_row(xs, rs, elems);
  }
  return out;
}

std::vector<double> kld_frames(const FmBuffer& mu, const FmBuffer& logvar,
                               Workspace& ws) {
  if (mu.elems != logvar.elems || mu.lanes != logvar.lanes)
    throw UsageError("batched kld: layout mismatch");
  const std::size_t lanes = mu.lanes, elems = mu.elems;
  ws.lane_scratch.resize(2 * elems);
  double* ms = ws.lane_scratch.data();
  double* vs = ms + elems;
  std::vector<double> out(lanes);
  for (std::size_t l = 0; l < lanes; ++l) {
    for (std::size_t e = 0; e < elems; ++e) {
      ms[e] = mu.data[e * lanes + l];
      vs[e] = logvar.data[e * lanes + l];
    }
    out[l] = kld_loss_row(ms, vs, elems);
  }
  return out;
}

FmBuffer reparameterize_fm(const FmBuffer& mu, const FmBuffer& logvar,
                           const FmBuffer& eps) {
  if (mu.elems != logvar.elems || mu.lanes != logvar.lanes ||
      mu.elems != eps.elems || mu.lanes != eps.lanes)
    throw UsageError("batched reparameterize: layout mismatch");
  FmBuffer z(mu.elems, mu.lanes);
  for (std::size_t i = 0; i < z.data.size(); ++i)
    z.data[i] =
        fmadd(std::exp(logvar.data[i] / 2.0), eps.data[i], mu.data[i]);
  return z;
}

ScoredBatch score_packed(const FmBuffer& frames, const Parameters& p,
                         const ModelConfig& cfg, Workspace& ws,
                         const FmBuffer* eps, FmBuffer* mu_out) {
  FmBuffer mu, logvar, recon;
  encode(frames, p, cfg, ws, mu, logvar);
  ScoredBatch out;
  out.kld = kld_frames(mu, logvar, ws);
  if (eps != nullptr) {
    FmBuffer z = reparameterize_fm(mu, logvar, *eps);
    decode(z, p, cfg, ws, recon);
  } else {
    decode(mu, p, cfg, ws, recon);
  }
  out.bce = bce_frames(frames, recon, ws);
  if (mu_out != nullptr) *mu_out = std::move(mu);
  return out;
}

} // namespace spadvae::nn::batched
