#include "spadvae/optim.hpp"

#include "spadvae/errors.hpp"
#include "spadvae/vae.hpp"
#include "test_util.hpp"

#include <cmath>
#include <limits>

#include <doctest.h>

using namespace spadvae;

namespace {

AdamW::Hyper no_decay() {
  AdamW::Hyper h;
  h.weight_decay = 0.0;
  return h;
}

} // namespace

TEST_CASE("first AdamW step on a unit gradient moves by about -lr") {
  AdamW opt(no_decay());
  Tensor p({1}, {0.0});
  Tensor g({1}, {1.0});
  opt.step({{"w", &p, &g}}, 0.1);
  CHECK(opt.t() == 1);
  // mhat = vhat = 1 up to rounding, so the update is lr/(1+eps).
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("zero gradient leaves parameters alone but advances the step") {
  AdamW opt(no_decay());
  Tensor p({3}, {1.0, -2.0, 0.25});
  Tensor g({3});
  Tensor before = p;
  opt.step({{"w", &p, &g}}, 0.1);
  CHECK(testutil::tensors_bitwise_equal(p, before));
  CHECK(opt.t() == 1);
}

TEST_CASE("zero learning rate still updates the moments") {
  AdamW opt(no_decay());
  Tensor p({2}, {1.0, 2.0});
  Tensor g({2}, {3.0, -4.0});
  Tensor before = p;
  opt.step({{"w", &p, &g}}, 0.0);
  CHECK(testutil::tensors_bitwise_equal(p, before));
  CHECK(opt.m()[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(opt.m()[1] == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(opt.v()[0] == doctest::Approx(0.009).epsilon(1e-12));
  CHECK(opt.v()[1] == doctest::Approx(0.016).epsilon(1e-12));
}

TEST_CASE("decay is decoupled: zero gradient still shrinks parameters") {
  AdamW::Hyper h;
  h.weight_decay = 0.01;
  AdamW opt(h);
  Tensor p({1}, {1.0});
  Tensor g({1});
  opt.step({{"w", &p, &g}}, 0.1);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.01).epsilon(1e-15));
}

TEST_CASE("updates are invariant to how tensors are partitioned") {
  const std::size_t n = 8;
  for (double wd : {0.0, 1e-2}) {
    AdamW::Hyper h;
    h.weight_decay = wd;

    Tensor whole_p = testutil::random_tensor({n}, 101);
    Tensor part_a({3}), part_b({5});
    for (std::size_t i = 0; i < 3; ++i) part_a[i] = whole_p[i];
    for (std::size_t i = 0; i < 5; ++i) part_b[i] = whole_p[3 + i];

    AdamW opt_whole(h), opt_split(h);
    for (int step = 0; step < 3; ++step) {
      Tensor g = testutil::random_tensor({n}, 200 + step);
      Tensor ga({3}), gb({5});
      for (std::size_t i = 0; i < 3; ++i) ga[i] = g[i];
      for (std::size_t i = 0; i < 5; ++i) gb[i] = g[3 + i];
      const double lr = 0.01 * (step + 1);
      opt_whole.step({{"w", &whole_p, &g}}, lr);
      opt_split.step({{"a", &part_a, &ga}, {"b", &part_b, &gb}}, lr);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(part_a[i] == whole_p[i]);
    for (std::size_t i = 0; i < 5; ++i) CHECK(part_b[i] == whole_p[3 + i]);
  }
}

TEST_CASE("non-finite gradients are rejected by name without side effects") {
  AdamW opt;
  Tensor p1({2}, {1.0, 2.0});
  Tensor g1({2}, {0.1, 0.2});
  Tensor p2({2}, {3.0, 4.0});
  Tensor g2({2}, {0.3, std::numeric_limits<double>::quiet_NaN()});
  Tensor p1_before = p1;
  try {
    opt.step({{"enc0.w", &p1, &g1}, {"dec0.w", &p2, &g2}}, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("dec0.w") != std::string::npos);
  }
  CHECK(opt.t() == 0);
  CHECK(testutil::tensors_bitwise_equal(p1, p1_before));
  CHECK(opt.m().empty());
}

TEST_CASE("shape and state mismatches are usage errors") {
  AdamW opt;
  Tensor p({2, 2});
  Tensor g({4});
  CHECK_THROWS_AS(opt.step({{"w", &p, &g}}, 0.1), UsageError);

  AdamW opt2(no_decay());
  Tensor p2({4});
  Tensor g2({4});
  opt2.step({{"w", &p2, &g2}}, 0.1);
  Tensor p3({5});
  Tensor g3({5});
  CHECK_THROWS_AS(opt2.step({{"w", &p3, &g3}}, 0.1), UsageError);

  CHECK_THROWS_AS(opt2.step({{"w", &p2, &g2}}, -1.0), UsageError);
}

TEST_CASE("restored state reproduces a step exactly") {
  AdamW opt(no_decay());
  Tensor p({4});
  for (std::size_t i = 0; i < 4; ++i) p[i] = 0.5 * (double)i;
  Tensor g = testutil::random_tensor({4}, 7);
  opt.step({{"w", &p, &g}}, 0.05);

  const std::vector<double> m_saved = opt.m();
  const std::vector<double> v_saved = opt.v();
  const std::uint64_t t_saved = opt.t();
  Tensor p_saved = p;

  Tensor g2 = testutil::random_tensor({4}, 8);
  opt.step({{"w", &p, &g2}}, 0.05);
  Tensor after_first = p;

  AdamW fresh(no_decay());
  fresh.restore(m_saved, v_saved, t_saved);
  Tensor p_replay = p_saved;
  fresh.step({{"w", &p_replay, &g2}}, 0.05);
  CHECK(testutil::tensors_bitwise_equal(p_replay, after_first));
  CHECK(fresh.t() == opt.t());
}

TEST_CASE("the Parameters overload walks the full model") {
  ModelConfig cfg;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.encoder_channels = {2, 3};
  cfg.latent_dim = 3;
  Parameters p = init_parameters(cfg, 5);
  Gradients g = make_parameters(cfg); // all-zero gradients
  AdamW opt(no_decay());
  Parameters before = p;
  opt.step(p, g, 1e-3);
  CHECK(opt.t() == 1);
  CHECK(opt.m().size() == parameter_count(cfg));
  bool unchanged = true;
  std::vector<const Tensor*> ta, tb;
  p.for_each([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
  before.for_each(
      [&](const std::string&, const Tensor& t) { tb.push_back(&t); });
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!testutil::tensors_bitwise_equal(*ta[i], *tb[i])) unchanged = false;
  CHECK(unchanged);
}
