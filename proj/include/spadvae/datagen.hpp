#pragma once

// Synthetic sparse binary sensor frames: background frames made of isolated
// dark counts plus optional single-neighbour crosstalk, and signal frames
// that add a top-to-bottom particle track with bounded horizontal drift.

#include "spadvae/rng.hpp"
#include "spadvae/tensor.hpp"

#include <cstdint>
#include <vector>

namespace spadvae {

// A bit-packed binary frame. Pixels are stored row-major as a continuous bit
// stream (bit index y*W + x), MSB-first within each byte; unused trailing
// bits of the last byte are always zero.
class Frame {
public:
  Frame() = default;
  Frame(std::size_t width, std::size_t height);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t pixel_count() const { return width_ * height_; }

  bool get(std::size_t x, std::size_t y) const;
  void set(std::size_t x, std::size_t y, bool value);
  std::size_t count() const; // number of lit pixels

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

  static std::size_t packed_size(std::size_t width, std::size_t height) {
    return (width * height + 7) / 8;
  }

  bool operator==(const Frame&) const = default;

private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> bytes_;
};

// Track model: tracks enter at the top edge inside a window of half-width
// entry_jitter around the horizontal centre, walk downward one row at a
// time with a horizontal step drawn uniformly from [-max_drift, +max_drift],
// and light each visited pixel with probability hit_p. Track length in rows
// is drawn uniformly from [min_length, max_length]; 0 means "frame height".
struct TrackConfig {
  std::size_t entry_jitter = 1u << 20; // effectively the whole width
  std::size_t max_drift = 1;
  std::size_t min_length = 0; // 0 = frame height
  std::size_t max_length = 0; // 0 = frame height
  double hit_p = 0.55;
};

struct GenConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  double dcr_p = 1.2e-3;      // per-pixel dark-count probability per frame
  double crosstalk_p = 0.05;  // chance a lit pixel lights one 4-neighbour
  TrackConfig track;

  void validate() const;
  std::size_t track_min_length() const;
  std::size_t track_max_length() const;
};

enum class FrameLabel : std::uint8_t { background = 0, signal = 1 };

struct LabeledSet {
  std::vector<Frame> frames;
  std::vector<FrameLabel> labels; // aligned with frames when has_labels
  bool has_labels = false;
  GenConfig config;    // provenance (defaulted for sets read from disk)
  std::uint64_t seed = 0;
};

// Single-frame generators; both consume the supplied stream sequentially.
Frame gen_background(const GenConfig& cfg, Rng& rng);
Frame gen_signal(const GenConfig& cfg, Rng& rng);

// Deterministic dataset: background frames first, then signal frames. Frame
// i is generated from its own stream derived from (seed, i), so the output
// is independent of generation order and thread count.
LabeledSet gen_dataset(std::size_t n_background, std::size_t n_signal,
                       const GenConfig& cfg, std::uint64_t seed);

// Unpacks frames (optionally a subset selected by `indices`) into a dense
// [N,1,H,W] tensor of 0/1 values. All frames must share one geometry.
Tensor frames_to_tensor(const std::vector<Frame>& frames,
                        const std::vector<std::size_t>* indices = nullptr);

} // namespace spadvae
