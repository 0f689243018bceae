#pragma once

// Training-time machinery: learning-rate and KL-weight schedules plus the
// AdamW optimizer with externally serializable state.

#include "spadvae/tensor.hpp"
#include "spadvae/vae.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spadvae {

// Warmup + cosine learning rate together with the cyclic sigmoid ramp used
// for the KL weight. All schedule evaluations are pure functions of (iter,
// config).
struct ScheduleConfig {
  double base_lr = 1e-3;
  std::size_t warmup_iters = 0; // iterations of the first epoch
  std::size_t total_iters = 0;
  double eta_min = 0.0;
  std::size_t beta_cycles = 5;
  double ramp_fraction = 0.5;    // fraction of each cycle spent ramping
  double sigmoid_steepness = 6.0;

  void validate() const;
};

// Linear warmup to base_lr over warmup_iters, then a cosine decay to eta_min
// across the remaining iterations. Both pieces evaluate to base_lr at the
// junction.
double lr_at(std::size_t iter, const ScheduleConfig& cfg);

// Cyclic KL weight: total_iters is split into beta_cycles equal cycles; the
// first ramp_fraction of each cycle follows a sigmoid ramp from sigma(-s) up
// to 1, the remainder holds at exactly 1.
double beta_at(std::size_t iter, const ScheduleConfig& cfg);

// AdamW with decoupled weight decay. Moment state is kept as flat arrays in
// visitation order so it can be checkpointed and restored exactly.
class AdamW {
public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
  };

  // One named parameter/gradient pair. Updates consume views in order; the
  // flat moment arrays follow the concatenation of all views.
  struct View {
    std::string name;
    Tensor* param = nullptr;
    const Tensor* grad = nullptr;
  };

  AdamW() = default;
  explicit AdamW(Hyper hyper) : hyper_(hyper) {}

  // Applies one update. All gradients are validated (shape + finiteness)
  // before any state or parameter is touched, so a throwing call leaves the
  // optimizer and the parameters unchanged.
  void step(const std::vector<View>& views, double lr);
  void step(Parameters& params, const Gradients& grads, double lr);

  const Hyper& hyper() const { return hyper_; }
  std::uint64_t t() const { return t_; }
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }

  // Restores checkpointed state; m and v must be equally sized.
  void restore(std::vector<double> m, std::vector<double> v, std::uint64_t t);

private:
  Hyper hyper_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

} // namespace spadvae
