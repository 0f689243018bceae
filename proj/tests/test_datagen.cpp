#include "spadvae/datagen.hpp"

#include "spadvae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

using namespace spadvae;

TEST_CASE("frame bit packing round-trips through get/set") {
  Frame f(10, 3); // 30 bits -> 4 bytes, tail padded
  CHECK(f.bytes().size() == 4);
  CHECK(f.count() == 0);
  f.set(0, 0, true);
  f.set(9, 2, true);
  f.set(4, 1, true);
  CHECK(f.count() == 3);
  CHECK(f.get(0, 0));
  CHECK(f.get(9, 2));
  CHECK(f.get(4, 1));
  CHECK_FALSE(f.get(1, 0));
  f.set(4, 1, false);
  CHECK(f.count() == 2);
  CHECK_FALSE(f.get(4, 1));
  CHECK_THROWS_AS(f.get(10, 0), UsageError);
  CHECK_THROWS_AS(f.set(0, 3, true), UsageError);
}

TEST_CASE("degenerate dark-count probabilities") {
  GenConfig cfg;
  cfg.width = 8;
  cfg.height = 8;

  cfg.dcr_p = 0.0;
  Rng r1(1);
  CHECK(gen_background(cfg, r1).count() == 0);

  cfg.dcr_p = 1.0;
  cfg.crosstalk_p = 0.0;
  Rng r2(2);
  CHECK(gen_background(cfg, r2).count() == 64);
}

TEST_CASE("background mean count matches the binomial oracle") {
  GenConfig cfg; // 64x64, dcr 1.2e-3
  cfg.crosstalk_p = 0.0;
  const std::size_t n = 10000;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(424242, "bgmean", i));
    total += static_cast<double>(gen_background(cfg, rng).count());
  }
  const double mean = total / static_cast<double>(n);
  const double expect = 4096.0 * 1.2e-3;
  const double sigma =
      std::sqrt(4096.0 * 1.2e-3 * (1.0 - 1.2e-3)) / std::sqrt((double)n);
  CHECK(std::fabs(mean - expect) < 3.0 * sigma);
}

TEST_CASE("per-pixel lit frequency obeys the configured law") {
  GenConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.crosstalk_p = 0.0;
  const std::size_t n = 100000;
  std::vector<std::size_t> hits(256, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(99, "pixlaw", i));
    Frame f = gen_background(cfg, rng);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        if (f.get(x, y)) ++hits[y * 16 + x];
  }
  const double p = cfg.dcr_p;
  const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  for (std::size_t i = 0; i < 256; ++i) {
    const double freq = static_cast<double>(hits[i]) / n;
    CHECK(std::fabs(freq - p) < 4.0 * sigma);
  }
}

TEST_CASE("crosstalk adds at most one extra pixel per source") {
  GenConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  cfg.dcr_p = 5e-3;
  cfg.crosstalk_p = 1.0; // every lit pixel fires its neighbour draw
  for (std::size_t i = 0; i < 200; ++i) {
    Rng seeded(derive_seed(7, "xtalk", i));
    Frame with = gen_background(cfg, seeded);
    GenConfig off = cfg;
    off.crosstalk_p = 0.0;
    Rng seeded2(derive_seed(7, "xtalk", i));
    Frame without = gen_background(off, seeded2);
    // The dark-count pass consumes the same draws, so `with` is a superset.
    std::size_t extra = 0;
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        if (without.get(x, y)) CHECK(with.get(x, y));
        if (with.get(x, y) && !without.get(x, y)) ++extra;
      }
    CHECK(extra <= without.count());
  }
}

TEST_CASE("deterministic track hits one full column") {
  GenConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.dcr_p = 0.0;
  cfg.track.hit_p = 1.0;
  cfg.track.max_drift = 0;
  Rng rng(3);
  Frame f = gen_signal(cfg, rng);
  CHECK(f.count() == 16);
  // All hits share one column, covering every row.
  std::size_t col = 16;
  for (std::size_t x = 0; x < 16; ++x)
    if (f.get(x, 0)) col = x;
  REQUIRE(col < 16);
  for (std::size_t y = 0; y < 16; ++y) {
    CHECK(f.get(col, y));
    for (std::size_t x = 0; x < 16; ++x)
      if (x != col) CHECK_FALSE(f.get(x, y));
  }
}

TEST_CASE("signal counts stochastically dominate background counts") {
  GenConfig cfg;
  const std::size_t n = 5000;
  std::vector<std::size_t> bg_counts(n), sig_counts(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r1(derive_seed(11, "domb", i));
    bg_counts[i] = gen_background(cfg, r1).count();
    Rng r2(derive_seed(11, "doms", i));
    sig_counts[i] = gen_signal(cfg, r2).count();
  }
  std::sort(bg_counts.begin(), bg_counts.end());
  std::sort(sig_counts.begin(), sig_counts.end());
  const double mean_bg =
      std::accumulate(bg_counts.begin(), bg_counts.end(), 0.0) / n;
  const double mean_sig =
      std::accumulate(sig_counts.begin(), sig_counts.end(), 0.0) / n;
  CHECK(mean_sig > mean_bg);
  // Empirical CDF of signal lies at or below background's everywhere.
  const std::size_t max_count =
      std::max(bg_counts.back(), sig_counts.back());
  for (std::size_t t = 0; t <= max_count; ++t) {
    const double cdf_bg =
        std::upper_bound(bg_counts.begin(), bg_counts.end(), t) -
        bg_counts.begin();
    const double cdf_sig =
        std::upper_bound(sig_counts.begin(), sig_counts.end(), t) -
        sig_counts.begin();
    CHECK(cdf_sig <= cdf_bg);
  }
}

TEST_CASE("hit_p = 0 reduces the signal generator to background statistics") {
  GenConfig cfg;
  cfg.track.hit_p = 0.0;
  const std::size_t n = 3000;
  double tot_b = 0.0, tot_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r1(derive_seed(21, "hp0b", i));
    tot_b += gen_background(cfg, r1).count();
    Rng r2(derive_seed(21, "hp0s", i));
    tot_s += gen_signal(cfg, r2).count();
  }
  const double sigma = std::sqrt(2.0 * 4.91 / n); // ~Poisson counts
  CHECK(std::fabs(tot_b / n - tot_s / n) < 4.0 * sigma);
}

TEST_CASE("datasets are deterministic and index-stable") {
  GenConfig cfg;
  LabeledSet a = gen_dataset(5, 3, cfg, 777);
  LabeledSet b = gen_dataset(5, 3, cfg, 777);
  REQUIRE(a.frames.size() == 8);
  CHECK(a.has_labels);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a.frames[i] == b.frames[i]);
    CHECK(a.labels[i] == b.labels[i]);
  }
  CHECK(std::count(a.labels.begin(), a.labels.end(),
                   FrameLabel::background) == 5);
  CHECK(std::count(a.labels.begin(), a.labels.end(), FrameLabel::signal) == 3);

  // Frame i depends only on (seed, i): shrinking the signal block leaves
  // the background block untouched.
  LabeledSet bg_only = gen_dataset(5, 0, cfg, 777);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.frames[i] == bg_only.frames[i]);
  CHECK(std::all_of(bg_only.labels.begin(), bg_only.labels.end(),
                    [](FrameLabel l) { return l == FrameLabel::background; }));

  LabeledSet other = gen_dataset(5, 3, cfg, 778);
  bool any_diff = false;
  for (std::size_t i = 0; i < 8; ++i)
    if (!(a.frames[i] == other.frames[i])) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("track length range is honoured") {
  GenConfig cfg;
  cfg.dcr_p = 0.0;
  cfg.track.hit_p = 1.0;
  cfg.track.min_length = 6;
  cfg.track.max_length = 20;
  std::size_t lo = 64, hi = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    Rng rng(derive_seed(31, "len", i));
    Frame f = gen_signal(cfg, rng);
    // With hit_p = 1 every visited row has exactly one pixel.
    std::size_t rows = 0;
    for (std::size_t y = 0; y < 64; ++y) {
      bool any = false;
      for (std::size_t x = 0; x < 64; ++x) any = any || f.get(x, y);
      if (any) ++rows;
    }
    CHECK(rows == f.count());
    lo = std::min(lo, rows);
    hi = std::max(hi, rows);
  }
  CHECK(lo >= 6);
  CHECK(hi <= 20);
  CHECK(lo == 6);   // both endpoints reached in 500 draws
  CHECK(hi == 20);
}

TEST_CASE("generator configs are validated") {
  GenConfig bad;
  bad.dcr_p = 1.5;
  Rng r(1);
  CHECK_THROWS_AS(gen_background(bad, r), UsageError);
  bad = GenConfig{};
  bad.track.min_length = 10;
  bad.track.max_length = 5;
  CHECK_THROWS_AS(gen_signal(bad, r), UsageError);
  bad = GenConfig{};
  bad.track.max_length = 100; // exceeds height 64
  CHECK_THROWS_AS(gen_signal(bad, r), UsageError);
}

TEST_CASE("frames_to_tensor unpacks pixels and honours index subsets") {
  GenConfig cfg;
  cfg.width = 4;
  cfg.height = 2;
  Frame a(4, 2), b(4, 2);
  a.set(0, 0, true);
  a.set(3, 1, true);
  b.set(2, 0, true);
  std::vector<Frame> frames{a, b};
  Tensor t = frames_to_tensor(frames);
  CHECK(t.shape() == std::vector<std::size_t>{2, 1, 2, 4});
  CHECK(t[0] == 1.0);
  CHECK(t[7] == 1.0);
  CHECK(t[8 + 2] == 1.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) sum += t[i];
  CHECK(sum == 3.0);

  std::vector<std::size_t> idx{1};
  Tensor sub = frames_to_tensor(frames, &idx);
  CHECK(sub.shape() == std::vector<std::size_t>{1, 1, 2, 4});
  CHECK(sub[2] == 1.0);

  std::vector<std::size_t> oob{5};
  CHECK_THROWS_AS(frames_to_tensor(frames, &oob), UsageError);
  std::vector<Frame> none;
  CHECK_THROWS_AS(frames_to_tensor(none), UsageError);
}
