#include "spadvae/trainer.hpp"

#include "spadvae/errors.hpp"
#include "spadvae/wire.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace spadvae {

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 2)
    throw UsageError("training needs at least 2 epochs: warmup spans the "
                     "whole first epoch, so the decay phase would be empty");
  if (batch_size == 0) throw UsageError("batch size must be >= 1");
  if (!(base_lr > 0.0)) throw UsageError("base learning rate must be > 0");
  const double sum = split[0] + split[1] + split[2];
  if (std::fabs(sum - 1.0) > 1e-9)
    throw UsageError("split ratios must sum to 1");
  for (double r : split)
    if (r < 0.0) throw UsageError("split ratios must be nonnegative");
}

SplitIndices split_dataset(std::size_t n_frames,
                           const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  if (n_frames == 0) throw UsageError("cannot split an empty dataset");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::fabs(sum - 1.0) > 1e-9)
    throw UsageError("split ratios must sum to 1");

  std::vector<std::size_t> perm(n_frames);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split", 0));
  for (std::size_t i = n_frames; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(perm[i - 1], perm[j]);
  }

  const double n = static_cast<double>(n_frames);
  std::size_t n_train = static_cast<std::size_t>(std::floor(ratios[0] * n));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(ratios[1] * n));
  const std::size_t n_test =
      static_cast<std::size_t>(std::floor(ratios[2] * n));
  n_train += n_frames - (n_train + n_val + n_test); // remainder -> train

  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + n_train);
  out.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  out.test.assign(perm.begin() + n_train + n_val, perm.end());
  return out;
}

std::size_t iters_per_epoch(std::size_t n_train, std::size_t batch_size) {
  return (n_train + batch_size - 1) / batch_size;
}

ScheduleConfig training_schedule(const TrainConfig& cfg, std::size_t n_train) {
  ScheduleConfig sched;
  sched.base_lr = cfg.base_lr;
  sched.warmup_iters = iters_per_epoch(n_train, cfg.batch_size);
  sched.total_iters = sched.warmup_iters * cfg.epochs;
  sched.eta_min = cfg.eta_min;
  sched.beta_cycles = cfg.beta_cycles;
  sched.ramp_fraction = cfg.ramp_fraction;
  sched.sigmoid_steepness = cfg.sigmoid_steepness;
  return sched;
}

namespace {

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_idx,
                                     std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order = train_idx;
  Rng rng(derive_seed(seed, "shuffle", epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

// Mean per-frame losses over a frame subset in deterministic mode,
// evaluated in batch_size chunks to bound peak memory.
std::pair<double, double> eval_losses(const std::vector<Frame>& frames,
                                      const std::vector<std::size_t>& idx,
                                      const Parameters& params,
                                      const ModelConfig& model,
                                      std::size_t batch_size) {
  double bce = 0.0, kld = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t stop = std::min(idx.size(), start + batch_size);
    std::vector<std::size_t> chunk(idx.begin() + start, idx.begin() + stop);
    Tensor x = frames_to_tensor(frames, &chunk);
    ForwardResult r = forward(x, params, model,
                              zero_noise(chunk.size(), model.latent_dim), 1.0);
    for (const LossBreakdown& l : r.losses) {
      bce += l.bce;
      kld += l.kld;
    }
  }
  const double n = static_cast<double>(idx.size());
  return {bce / n, kld / n};
}

} // namespace

TrainResult train(const std::vector<Frame>& frames,
                  const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& val_idx,
                  const TrainConfig& cfg, const Checkpoint* resume,
                  std::size_t stop_after_epochs) {
  cfg.validate();
  if (train_idx.empty()) throw UsageError("training split is empty");

  const std::size_t per_epoch = iters_per_epoch(train_idx.size(), cfg.batch_size);
  const ScheduleConfig sched = training_schedule(cfg, train_idx.size());
  sched.validate();

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  AdamW opt(cfg.adamw);
  std::uint64_t start_iter = 0;

  if (resume != nullptr) {
    if (resume->model.hash() != cfg.model.hash())
      throw ConfigMismatchError(cfg.model.hash(), resume->model.hash());
    if (resume->iter % per_epoch != 0)
      throw UsageError("resume checkpoint does not sit on an epoch boundary");
    if (resume->iter >= sched.total_iters)
      throw UsageError("resume checkpoint already covers the requested run");
    ck.params = resume->params;
    check_parameters_shape(ck.params, cfg.model);
    opt.restore(resume->adam_m, resume->adam_v, resume->adam_t);
    start_iter = resume->iter;
    ck.seed = resume->seed;
  } else {
    ck.params = init_parameters(cfg.model, cfg.seed);
    ck.seed = cfg.seed;
  }
  ck.model = cfg.model;

  std::uint64_t end_iter = sched.total_iters;
  if (stop_after_epochs != 0)
    end_iter = std::min<std::uint64_t>(
        sched.total_iters, start_iter + stop_after_epochs * per_epoch);

  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  for (std::uint64_t iter = start_iter; iter < end_iter; ++iter) {
    const std::size_t epoch = iter / per_epoch;
    const std::size_t pos = iter % per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(train_idx, ck.seed, epoch);
      order_epoch = epoch;
    }

    const std::size_t lo = pos * cfg.batch_size;
    const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
    std::vector<std::size_t> batch(order.begin() + lo, order.begin() + hi);
    Tensor x = frames_to_tensor(frames, &batch);

    Rng eps_rng(derive_seed(ck.seed, "eps", iter));
    Tensor eps = sampled_noise(batch.size(), cfg.model.latent_dim, eps_rng);
    const double lr = lr_at(iter, sched);
    const double beta = beta_at(iter, sched);

    ForwardCache cache;
    ForwardResult fr = forward(x, ck.params, cfg.model, eps, beta, &cache);
    double batch_bce = 0.0, batch_kld = 0.0;
    for (const LossBreakdown& l : fr.losses) {
      batch_bce += l.bce;
      batch_kld += l.kld;
    }
    batch_bce /= static_cast<double>(batch.size());
    batch_kld /= static_cast<double>(batch.size());
    if (!std::isfinite(batch_bce))
      throw NumericError("non-finite bce loss at iteration " +
                             std::to_string(iter),
                         "bce", iter);
    if (!std::isfinite(batch_kld))
      throw NumericError("non-finite kld loss at iteration " +
                             std::to_string(iter),
                         "kld", iter);

    Gradients grads =
        backward(cache, ck.params, cfg.model,
                 1.0 / static_cast<double>(batch.size()));
    try {
      opt.step(ck.params, grads, lr);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " +
                             std::to_string(iter),
                         e.context(), iter);
    }
    quantize_parameters_f32(ck.params);

    MetricRecord rec;
    rec.iter = iter;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.beta = beta;
    rec.train_bce = batch_bce;
    rec.train_kld = batch_kld;
    if (pos + 1 == per_epoch && !val_idx.empty()) {
      const auto [vb, vk] =
          eval_losses(frames, val_idx, ck.params, cfg.model, cfg.batch_size);
      rec.has_val = true;
      rec.val_bce = vb;
      rec.val_kld = vk;
    }
    result.metrics.push_back(rec);
  }

  ck.adam_m = opt.m();
  ck.adam_v = opt.v();
  if (ck.adam_m.empty()) {
    ck.adam_m.assign(ck.params.total_size(), 0.0);
    ck.adam_v.assign(ck.params.total_size(), 0.0);
  }
  ck.adam_t = opt.t();
  ck.iter = end_iter;
  return result;
}

namespace {

constexpr char kCkptMagic[4] = {'V', 'A', 'E', 'C'};
constexpr std::uint16_t kCkptVersion = 1;
constexpr std::size_t kCkptTrailer = 40; // t, iter, seed, hash, checksum

} // namespace

std::size_t checkpoint_byte_size(const ModelConfig& model) {
  const std::size_t config_len = model.serialize().size();
  const std::size_t p = parameter_count(model);
  return 4 + 2 + 4 + config_len + 8 + 4 * p + 16 * p + kCkptTrailer;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::size_t pcount = parameter_count(ckpt.model);
  if (ckpt.params.total_size() != pcount)
    throw UsageError("checkpoint parameters do not match its model config");
  if (ckpt.adam_m.size() != pcount || ckpt.adam_v.size() != pcount)
    throw UsageError("checkpoint optimizer state does not match its model");

  std::vector<std::uint8_t> out;
  out.reserve(checkpoint_byte_size(ckpt.model));
  out.insert(out.end(), kCkptMagic, kCkptMagic + 4);
  wire::put_u16(out, kCkptVersion);
  const std::vector<std::uint8_t> config = ckpt.model.serialize();
  wire::put_u32(out, static_cast<std::uint32_t>(config.size()));
  out.insert(out.end(), config.begin(), config.end());
  wire::put_u64(out, pcount);
  ckpt.params.for_each([&](const std::string&, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
      wire::put_f32(out, static_cast<float>(t[i]));
  });
  for (double m : ckpt.adam_m) wire::put_f64(out, m);
  for (double v : ckpt.adam_v) wire::put_f64(out, v);
  wire::put_u64(out, ckpt.adam_t);
  wire::put_u64(out, ckpt.iter);
  wire::put_u64(out, ckpt.seed);
  wire::put_u64(out, ckpt.model.hash());
  wire::put_u64(out, fnv1a64(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write failure on '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failure on checkpoint '" + path + "'");

  wire::Reader rd(data.data(), data.size());
  std::uint8_t magic[4];
  rd.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw IoError::at("bad magic (not a checkpoint)", 0);
  const std::uint16_t version = rd.u16("version");
  if (version != kCkptVersion)
    throw IoError::at("unsupported version " + std::to_string(version), 4);
  const std::uint32_t config_len = rd.u32("config length");
  if (config_len > 4096)
    throw IoError::at("implausible config block length", 6);
  std::vector<std::uint8_t> config(config_len);
  rd.bytes(config.data(), config_len, "config block");

  Checkpoint ck;
  ck.model = ModelConfig::deserialize(config.data(), config.size());
  const std::uint64_t pcount = rd.u64("parameter count");
  if (pcount != parameter_count(ck.model))
    throw IoError::at("parameter count disagrees with the config", 10);

  ck.params = make_parameters(ck.model);
  ck.params.for_each([&](const std::string& name, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(rd.f32(name.c_str()));
  });
  ck.adam_m.resize(pcount);
  ck.adam_v.resize(pcount);
  for (std::size_t i = 0; i < pcount; ++i) ck.adam_m[i] = rd.f64("adam m");
  for (std::size_t i = 0; i < pcount; ++i) ck.adam_v[i] = rd.f64("adam v");
  ck.adam_t = rd.u64("step counter");
  ck.iter = rd.u64("iteration counter");
  ck.seed = rd.u64("seed");
  const std::uint64_t stored_hash = rd.u64("config hash");
  if (stored_hash != ck.model.hash())
    throw ConfigMismatchError(ck.model.hash(), stored_hash);
  const std::size_t checksum_pos = rd.pos();
  const std::uint64_t stored_checksum = rd.u64("checksum");
  const std::uint64_t computed = fnv1a64(data.data(), checksum_pos);
  if (stored_checksum != computed)
    throw IoError::at("checksum mismatch (corrupt checkpoint)", checksum_pos);
  if (rd.remaining() != 0)
    throw IoError::at("trailing bytes after checkpoint", rd.pos());
  return ck;
}

std::string render_metrics_csv(const std::vector<MetricRecord>& records) {
  std::string out = "iter,epoch,lr,beta,train_bce,train_kld,val_bce,val_kld\n";
  char buf[512];
  for (const MetricRecord& r : records) {
    if (r.has_val) {
      std::snprintf(buf, sizeof buf,
                    "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter,
                    r.epoch, r.lr, r.beta, r.train_bce, r.train_kld, r.val_bce,
                    r.val_kld);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,,\n",
                    r.iter, r.epoch, r.lr, r.beta, r.train_bce, r.train_kld);
    }
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << render_metrics_csv(records);
  f.flush();
  if (!f) throw IoError("write failure on '" + path + "'");
}

} // namespace spadvae
