#include "spadvae/optim.hpp"

#include "spadvae/errors.hpp"

#include <cmath>
#include <vector>

#include <doctest.h>

using namespace spadvae;

namespace {

ScheduleConfig standard_schedule() {
  ScheduleConfig cfg;
  cfg.warmup_iters = 1000;
  cfg.total_iters = 50000;
  return cfg;
}

} // namespace

TEST_CASE("learning rate warms up linearly to exactly base_lr") {
  ScheduleConfig cfg = standard_schedule();
  CHECK(lr_at(0, cfg) == doctest::Approx(1e-3 / 1000.0).epsilon(1e-15));
  CHECK(lr_at(499, cfg) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(lr_at(cfg.warmup_iters - 1, cfg) == 1e-3);
}

TEST_CASE("learning rate is continuous at the warmup/cosine junction") {
  ScheduleConfig cfg = standard_schedule();
  CHECK(lr_at(cfg.warmup_iters - 1, cfg) == cfg.base_lr);
  CHECK(lr_at(cfg.warmup_iters, cfg) == cfg.base_lr);
}

TEST_CASE("cosine decay midpoint and endpoint") {
  ScheduleConfig cfg = standard_schedule();
  // progress = 0.5 at iter 1000 + 24500
  CHECK(lr_at(25500, cfg) == doctest::Approx(cfg.base_lr / 2.0).epsilon(1e-12));
  CHECK(lr_at(cfg.total_iters - 1, cfg) <= 1e-6 * cfg.base_lr);
  CHECK(lr_at(cfg.total_iters - 1, cfg) >= cfg.eta_min);

  ScheduleConfig floored = cfg;
  floored.eta_min = 1e-5;
  CHECK(lr_at(cfg.total_iters - 1, floored) >= 1e-5);
  CHECK(lr_at(25500, floored) ==
        doctest::Approx(1e-5 + 0.5 * (1e-3 - 1e-5)).epsilon(1e-12));
}

TEST_CASE("learning rate never increases after warmup") {
  ScheduleConfig cfg = standard_schedule();
  double prev = lr_at(cfg.warmup_iters, cfg);
  for (std::size_t it = cfg.warmup_iters + 1; it < cfg.total_iters; ++it) {
    const double cur = lr_at(it, cfg);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("beta schedule hits its pinned waypoints") {
  ScheduleConfig cfg = standard_schedule(); // cycle length 10000
  // Ramp midpoint (phase = R/2 = 0.25) is exactly sigma(0) = 1/2.
  CHECK(beta_at(2500, cfg) == 0.5);
  CHECK(beta_at(12500, cfg) == 0.5);
  // Cycle start is sigma(-6).
  CHECK(beta_at(0, cfg) == doctest::Approx(0.002473).epsilon(1e-3));
  CHECK(beta_at(10000, cfg) == beta_at(0, cfg));
  // Hold phase pins beta at exactly 1.
  CHECK(beta_at(5000, cfg) == 1.0);
  CHECK(beta_at(7321, cfg) == 1.0);
  CHECK(beta_at(cfg.total_iters - 1, cfg) == 1.0);
}

TEST_CASE("beta stays in [0,1] with five plateaus and four restarts") {
  ScheduleConfig cfg = standard_schedule();
  std::vector<double> betas(cfg.total_iters);
  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    betas[it] = beta_at(it, cfg);
    CHECK(betas[it] >= 0.0);
    CHECK(betas[it] <= 1.0);
  }
  std::size_t plateaus = 0;
  std::size_t restarts = 0;
  bool in_plateau = false;
  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    const bool at_one = betas[it] == 1.0;
    if (at_one && !in_plateau) ++plateaus;
    in_plateau = at_one;
    if (it > 0 && betas[it - 1] - betas[it] > 0.9) ++restarts;
  }
  CHECK(plateaus == cfg.beta_cycles);
  CHECK(restarts == cfg.beta_cycles - 1);
}

TEST_CASE("beta ramp is nondecreasing within a cycle") {
  ScheduleConfig cfg = standard_schedule();
  double prev = beta_at(0, cfg);
  for (std::size_t it = 1; it < 10000; ++it) {
    const double cur = beta_at(it, cfg);
    CHECK(cur >= prev);
    prev = cur;
  }
}

TEST_CASE("schedule validation rejects degenerate configs") {
  ScheduleConfig cfg = standard_schedule();
  CHECK_NOTHROW(cfg.validate());

  ScheduleConfig bad = cfg;
  bad.warmup_iters = 0;
  CHECK_THROWS_AS(lr_at(0, bad), UsageError);
  bad = cfg;
  bad.warmup_iters = bad.total_iters;
  CHECK_THROWS_AS(lr_at(0, bad), UsageError);
  bad = cfg;
  bad.beta_cycles = 0;
  CHECK_THROWS_AS(beta_at(0, bad), UsageError);
  bad = cfg;
  bad.ramp_fraction = 0.0;
  CHECK_THROWS_AS(beta_at(0, bad), UsageError);
  bad = cfg;
  bad.ramp_fraction = 1.5;
  CHECK_THROWS_AS(beta_at(0, bad), UsageError);

  CHECK_THROWS_AS(lr_at(cfg.total_iters, cfg), UsageError);
  CHECK_THROWS_AS(beta_at(cfg.total_iters, cfg), UsageError);
}

TEST_CASE("ramp_fraction = 1 ramps for the whole cycle") {
  ScheduleConfig cfg = standard_schedule();
  cfg.ramp_fraction = 1.0;
  CHECK(beta_at(5000, cfg) == 0.5);
  CHECK(beta_at(9999, cfg) < 1.0);
  CHECK(beta_at(9999, cfg) > 0.99);
}
