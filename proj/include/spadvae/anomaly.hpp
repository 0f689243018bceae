#pragma once

#include "spadvae/datagen.hpp"
#include "spadvae/tensor.hpp"
#include "spadvae/trainer.hpp"
#include "spadvae/vae.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace spadvae {

// Per-frame anomaly scores (loss sums with the beta weight excluded), plus
// the per-frame lit-pixel count and the generator label when one is known.
struct ScoreSet {
  std::vector<double> bce;
  std::vector<double> kld;
  std::vector<std::size_t> count;
  std::vector<FrameLabel> labels; // aligned with scores when has_labels
  bool has_labels = false;
  std::uint64_t config_hash = 0; // hash of the model config that scored them

  std::size_t size() const { return bce.size(); }
};

enum class ScoreMode { deterministic, sampled };
enum class SelectionMode { bce_only, kld_only, either };
enum class ThresholdKind { divergence, p98, max };

// Calibrated score cuts. Values come in (bce, kld) pairs per kind; a pair is
// present only when its `has_*` flag is set. The divergence pair carries
// per-loss fallback flags (set when the histogram rule found no qualifying
// bin and the 98th percentile was substituted).
struct Thresholds {
  std::uint64_t config_hash = 0;

  bool has_p98 = false;
  double bce_p98 = 0.0, kld_p98 = 0.0;

  bool has_max = false;
  double bce_max = 0.0, kld_max = 0.0;

  bool has_divergence = false;
  double bce_divergence = 0.0, kld_divergence = 0.0;
  bool bce_divergence_fallback = false, kld_divergence_fallback = false;

  // Provenance, written to the thresholds file when nonempty.
  std::string bg_source;
  std::string mixed_source;
};

// Scores frames (optionally a subset selected by `indices`) against a
// checkpoint, chunked through the batched inference path so large sets never
// materialize dense activations for more than `chunk` frames at a time.
// Deterministic mode encodes with eps = 0; sampled mode draws each frame's
// eps from its own stream derived from (seed, "score/eps", dataset index),
// so results are independent of chunk size and subset composition.
ScoreSet score_frames(const Checkpoint& ck, const LabeledSet& set,
                      ScoreMode mode = ScoreMode::deterministic,
                      std::uint64_t seed = 0,
                      const std::vector<std::size_t>* indices = nullptr,
                      std::size_t chunk = 64);

// Deterministic encoder statistics (mu, logvar as [N,d]) for latent export.
LatentBatch export_latent_stats(const Checkpoint& ck, const LabeledSet& set,
                                const std::vector<std::size_t>* indices =
                                    nullptr,
                                std::size_t chunk = 64);

// Value at rank ceil(q*N) of the ascending sort (nearest-rank percentile).
double percentile_threshold(const std::vector<double>& scores,
                            double q = 0.98);

// Maximum score.
double max_threshold(const std::vector<double>& scores);

struct DivergenceResult {
  double threshold = 0.0;
  bool fallback = false; // percentile substituted; see divergence_threshold
};

// Divergence point of the mixed-score distribution above the background one:
// both samples are histogrammed into `bins` equal-width shared bins spanning
// the pooled [min, max] and normalized to unit area; the threshold is the
// lower edge of the smallest-index bin from which every higher bin with
// nonzero mixed density has mixed density strictly above background density.
// If no bin qualifies (e.g. the two samples are identical) the background
// 98th percentile is returned with `fallback` set; a degenerate range
// (min == max) falls back the same way.
DivergenceResult divergence_threshold(const std::vector<double>& bg_scores,
                                      const std::vector<double>& mixed_scores,
                                      std::size_t bins = 200);

// Convenience: calibrate the requested pairs in one pass. p98 and max are
// always computed from bg; the divergence pair is added when mixed != nullptr.
Thresholds calibrate_thresholds(const ScoreSet& bg,
                                const ScoreSet* mixed = nullptr,
                                std::size_t bins = 200);

// Frame selected iff its score strictly exceeds the cut for the requested
// kind: bce only, kld only, or either (logical OR). Throws UsageError when
// the thresholds lack the requested kind, ConfigMismatchError when scores
// and thresholds carry different (nonzero) config hashes.
std::vector<std::uint8_t> select(const ScoreSet& scores, const Thresholds& t,
                                 SelectionMode mode, ThresholdKind kind);

struct CountRow {
  std::size_t count = 0;
  std::size_t frames = 0;
  std::size_t selected = 0;
};

struct SelectionReport {
  std::size_t c_min = 4, c_max = 9;
  std::vector<CountRow> rows; // one row per count value in [c_min, c_max]
};

// Stratifies the mask by lit-pixel count; frames outside [c_min, c_max] are
// excluded entirely.
SelectionReport per_count_report(const ScoreSet& scores,
                                 const std::vector<std::uint8_t>& mask,
                                 std::size_t c_min = 4, std::size_t c_max = 9);

// CSV `count,frames,selected,percent` with percent = 100*selected/frames to
// two decimals; the percent cell is empty for rows with zero frames.
std::string render_selection_report_csv(const SelectionReport& report);

// Per-frame CSV `frame,count,bce,kld,selected,label` (%.17g scores; label
// empty when unknown). `frame` is the dataset index of the scored frame.
std::string render_scores_csv(const ScoreSet& scores,
                              const std::vector<std::uint8_t>& mask,
                              const std::vector<std::size_t>* indices =
                                  nullptr);

struct SummedImages {
  std::size_t width = 0, height = 0;
  std::vector<std::uint64_t> selected;   // row-major y*width + x
  std::vector<std::uint64_t> unselected; // same layout
};

// Elementwise integer pixel sums over each mask partition. `indices` selects
// the same subset the mask was computed on.
SummedImages summed_image(const std::vector<Frame>& frames,
                          const std::vector<std::uint8_t>& mask,
                          const std::vector<std::size_t>* indices = nullptr);

// Binary PGM (P5). Sample width follows the format rule: one byte when
// maxval < 256, two big-endian bytes otherwise, with maxval the actual
// maximum (at least 1). Values above 65535 saturate (the CSV export carries
// the exact sums).
std::string render_pgm(const std::vector<std::uint64_t>& image,
                       std::size_t width, std::size_t height);

// CSV `x,y,selected,unselected` of the raw integer sums, rows in row-major
// order (y outer).
std::string render_summed_csv(const SummedImages& images);

// CSV `mu_0..mu_{d-1}[,lv_0..lv_{d-1}],count,selected,label`, one row per
// scored frame (%.17g latent values; label empty when unknown).
std::string render_latent_csv(const LatentBatch& stats, const ScoreSet& scores,
                              const std::vector<std::uint8_t>& mask,
                              bool include_logvar = false);

// Flat key=value thresholds file. Unknown keys are rejected on read;
// `config_hash` is mandatory.
std::string render_thresholds(const Thresholds& t);
Thresholds parse_thresholds(const std::string& text);
void write_thresholds(const std::filesystem::path& path, const Thresholds& t);
Thresholds read_thresholds(const std::filesystem::path& path);

} // namespace spadvae
