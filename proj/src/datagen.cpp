#include "spadvae/datagen.hpp"

#include "spadvae/errors.hpp"

#include <algorithm>
#include <bit>
#include <utility>

namespace spadvae {

Frame::Frame(std::size_t width, std::size_t height)
    : width_(width), height_(height), bytes_(packed_size(width, height), 0) {
  if (width == 0 || height == 0)
    throw UsageError("frame dimensions must be positive");
}

bool Frame::get(std::size_t x, std::size_t y) const {
  if (x >= width_ || y >= height_)
    throw UsageError("frame pixel access out of bounds");
  const std::size_t bit = y * width_ + x;
  return (bytes_[bit / 8] >> (7 - bit % 8)) & 1u;
}

void Frame::set(std::size_t x, std::size_t y, bool value) {
  if (x >= width_ || y >= height_)
    throw UsageError("frame pixel access out of bounds");
  const std::size_t bit = y * width_ + x;
  const std::uint8_t mask = static_cast<std::uint8_t>(1u << (7 - bit % 8));
  if (value)
    bytes_[bit / 8] |= mask;
  else
    bytes_[bit / 8] &= static_cast<std::uint8_t>(~mask);
}

std::size_t Frame::count() const {
  std::size_t total = 0;
  for (std::uint8_t b : bytes_) total += std::popcount(b);
  return total;
}

void GenConfig::validate() const {
  if (width == 0 || height == 0)
    throw UsageError("generator frame dimensions must be positive");
  if (!(dcr_p >= 0.0 && dcr_p <= 1.0))
    throw UsageError("dark-count probability must lie in [0, 1]");
  if (!(crosstalk_p >= 0.0 && crosstalk_p <= 1.0))
    throw UsageError("crosstalk probability must lie in [0, 1]");
  if (!(track.hit_p >= 0.0 && track.hit_p <= 1.0))
    throw UsageError("track hit probability must lie in [0, 1]");
  const std::size_t lo = track_min_length();
  const std::size_t hi = track_max_length();
  if (lo == 0 || lo > hi || hi > height)
    throw UsageError("track length range must satisfy 1 <= min <= max <= "
                     "frame height");
}

std::size_t GenConfig::track_min_length() const {
  return track.min_length == 0 ? height : track.min_length;
}

std::size_t GenConfig::track_max_length() const {
  return track.max_length == 0 ? height : track.max_length;
}

namespace {

void scatter_dark_counts(Frame& frame, const GenConfig& cfg, Rng& rng) {
  // First pass: independent dark counts; remember them for the crosstalk
  // pass so secondary pixels never cascade.
  std::vector<std::pair<std::size_t, std::size_t>> lit;
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x)
      if (rng.next_double() < cfg.dcr_p) {
        frame.set(x, y, true);
        lit.emplace_back(x, y);
      }
  if (cfg.crosstalk_p <= 0.0) return;
  for (const auto& [x, y] : lit) {
    if (rng.next_double() >= cfg.crosstalk_p) continue;
    // Uniform over the four neighbours; one falling off the edge lights
    // nothing (the draw is still consumed).
    static constexpr int dx[4] = {1, -1, 0, 0};
    static constexpr int dy[4] = {0, 0, 1, -1};
    const std::size_t dir = static_cast<std::size_t>(rng.next_below(4));
    const std::int64_t nx = static_cast<std::int64_t>(x) + dx[dir];
    const std::int64_t ny = static_cast<std::int64_t>(y) + dy[dir];
    if (nx >= 0 && ny >= 0 && nx < static_cast<std::int64_t>(cfg.width) &&
        ny < static_cast<std::int64_t>(cfg.height))
      frame.set(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny),
                true);
  }
}

std::size_t clamp_to_width(std::int64_t col, std::size_t width) {
  if (col < 0) return 0;
  if (col >= static_cast<std::int64_t>(width)) return width - 1;
  return static_cast<std::size_t>(col);
}

void add_track(Frame& frame, const GenConfig& cfg, Rng& rng) {
  const std::size_t lo = cfg.track_min_length();
  const std::size_t hi = cfg.track_max_length();
  const std::size_t length =
      lo + static_cast<std::size_t>(rng.next_below(hi - lo + 1));

  // Entry column uniform in a window around the horizontal centre, clamped
  // to the frame.
  const std::int64_t centre = static_cast<std::int64_t>(cfg.width - 1) / 2;
  const std::int64_t jitter = static_cast<std::int64_t>(
      std::min<std::size_t>(cfg.track.entry_jitter, cfg.width));
  const std::int64_t win_lo = std::max<std::int64_t>(0, centre - jitter);
  const std::int64_t win_hi = std::min<std::int64_t>(
      static_cast<std::int64_t>(cfg.width) - 1, centre + jitter);
  std::size_t col = clamp_to_width(
      win_lo + static_cast<std::int64_t>(
                   rng.next_below(static_cast<std::uint64_t>(win_hi - win_lo + 1))),
      cfg.width);

  const std::uint64_t steps = 2 * cfg.track.max_drift + 1;
  for (std::size_t row = 0; row < length; ++row) {
    if (rng.next_double() < cfg.track.hit_p) frame.set(col, row, true);
    if (row + 1 < length) {
      const std::int64_t drift =
          static_cast<std::int64_t>(rng.next_below(steps)) -
          static_cast<std::int64_t>(cfg.track.max_drift);
      col = clamp_to_width(static_cast<std::int64_t>(col) + drift, cfg.width);
    }
  }
}

} // namespace

Frame gen_background(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  Frame frame(cfg.width, cfg.height);
  scatter_dark_counts(frame, cfg, rng);
  return frame;
}

Frame gen_signal(const GenConfig& cfg, Rng& rng) {
  cfg.validate();
  Frame frame(cfg.width, cfg.height);
  scatter_dark_counts(frame, cfg, rng);
  add_track(frame, cfg, rng);
  return frame;
}

LabeledSet gen_dataset(std::size_t n_background, std::size_t n_signal,
                       const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t total = n_background + n_signal;
  LabeledSet set;
  set.frames.resize(total);
  set.labels.resize(total);
  set.has_labels = true;
  set.config = cfg;
  set.seed = seed;

#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(total); ++i) {
    const std::size_t idx = static_cast<std::size_t>(i);
    Rng rng(derive_seed(seed, "gen/frame", idx));
    if (idx < n_background) {
      set.frames[idx] = gen_background(cfg, rng);
      set.labels[idx] = FrameLabel::background;
    } else {
      set.frames[idx] = gen_signal(cfg, rng);
      set.labels[idx] = FrameLabel::signal;
    }
  }
  return set;
}

Tensor frames_to_tensor(const std::vector<Frame>& frames,
                        const std::vector<std::size_t>* indices) {
  const std::size_t n = indices ? indices->size() : frames.size();
  if (n == 0) throw UsageError("cannot build a tensor from zero frames");
  auto pick = [&](std::size_t i) -> const Frame& {
    const std::size_t src = indices ? (*indices)[i] : i;
    if (src >= frames.size())
      throw UsageError("frame index out of range building tensor");
    return frames[src];
  };
  const std::size_t h = pick(0).height();
  const std::size_t w = pick(0).width();
  Tensor out({n, 1, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    const Frame& f = pick(i);
    if (f.height() != h || f.width() != w)
      throw UsageError("frames differ in geometry while building tensor");
    double* plane = out.data() + i * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        plane[y * w + x] = f.get(x, y) ? 1.0 : 0.0;
  }
  return out;
}

} // namespace spadvae
