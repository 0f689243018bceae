#include "spadvae/optim.hpp"

#include "spadvae/errors.hpp"
#include "spadvae/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <numbers>

namespace spadvae {

void ScheduleConfig::validate() const {
  if (!(base_lr > 0.0))
    throw UsageError("schedule base_lr must be positive");
  if (warmup_iters == 0 || warmup_iters >= total_iters)
    throw UsageError("schedule requires 0 < warmup_iters < total_iters");
  if (beta_cycles == 0)
    throw UsageError("schedule requires beta_cycles >= 1");
  if (!(ramp_fraction > 0.0) || ramp_fraction > 1.0)
    throw UsageError("schedule requires ramp_fraction in (0, 1]");
  if (!(eta_min >= 0.0) || eta_min > base_lr)
    throw UsageError("schedule requires 0 <= eta_min <= base_lr");
}

namespace {

void check_iter(std::size_t iter, const ScheduleConfig& cfg) {
  cfg.validate();
  if (iter >= cfg.total_iters)
    throw UsageError("schedule iteration " + std::to_string(iter) +
                     " out of range [0, " + std::to_string(cfg.total_iters) +
                     ")");
}

} // namespace

double lr_at(std::size_t iter, const ScheduleConfig& cfg) {
  check_iter(iter, cfg);
  if (iter < cfg.warmup_iters) {
    return cfg.base_lr * static_cast<double>(iter + 1) /
           static_cast<double>(cfg.warmup_iters);
  }
  const double progress =
      static_cast<double>(iter - cfg.warmup_iters) /
      static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  return cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) *
                           (1.0 + std::cos(progress * std::numbers::pi));
}

double beta_at(std::size_t iter, const ScheduleConfig& cfg) {
  check_iter(iter, cfg);
  const double cycle_len = static_cast<double>(cfg.total_iters) /
                           static_cast<double>(cfg.beta_cycles);
  const double phase =
      std::fmod(static_cast<double>(iter), cycle_len) / cycle_len;
  if (phase >= cfg.ramp_fraction) return 1.0;
  const double arg =
      cfg.sigmoid_steepness * (2.0 * phase / cfg.ramp_fraction - 1.0);
  return nn::sigmoid_scalar(arg);
}

void AdamW::step(const std::vector<View>& views, double lr) {
  if (!(lr >= 0.0)) throw UsageError("optimizer learning rate must be >= 0");

  std::size_t total = 0;
  for (const View& v : views) {
    if (v.param == nullptr || v.grad == nullptr)
      throw UsageError("optimizer view '" + v.name + "' is incomplete");
    if (v.param->shape() != v.grad->shape())
      throw UsageError("optimizer shape mismatch for '" + v.name +
                       "': param " + v.param->shape_str() + " vs grad " +
                       v.grad->shape_str());
    if (!v.grad->all_finite())
      throw NumericError("non-finite gradient in tensor '" + v.name + "'",
                         v.name);
    total += v.param->size();
  }
  if (m_.empty()) {
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
  } else if (m_.size() != total) {
    throw UsageError("optimizer state holds " + std::to_string(m_.size()) +
                     " elements but views supply " + std::to_string(total));
  }

  t_ += 1;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - lr * hyper_.weight_decay;

  std::size_t off = 0;
  for (const View& view : views) {
    Tensor& p = *view.param;
    const Tensor& g = *view.grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double grad = g[i];
      double& m = m_[off + i];
      double& v = v_[off + i];
      m = hyper_.beta1 * m + (1.0 - hyper_.beta1) * grad;
      v = hyper_.beta2 * v + (1.0 - hyper_.beta2) * grad * grad;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + hyper_.eps);
    }
    off += p.size();
  }
}

void AdamW::step(Parameters& params, const Gradients& grads, double lr) {
  std::vector<View> views;
  params.for_each([&](const std::string& name, Tensor& t) {
    views.push_back(View{name, &t, nullptr});
  });
  std::size_t idx = 0;
  grads.for_each([&](const std::string&, const Tensor& t) {
    if (idx < views.size()) views[idx].grad = &t;
    ++idx;
  });
  if (idx != views.size())
    throw UsageError("optimizer parameter/gradient structure mismatch");
  step(views, lr);
}

void AdamW::restore(std::vector<double> m, std::vector<double> v,
                    std::uint64_t t) {
  if (m.size() != v.size())
    throw UsageError("optimizer moment arrays differ in length");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

} // namespace spadvae
