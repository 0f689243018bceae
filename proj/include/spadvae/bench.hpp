#pragma once

// Inference timing harness: per-phase, per-batch-size latency of the scoring
// pipeline, reported as mean +/- sample std of per-frame wall time over
// repeated runs. Component phases (encoder, decoder, kld, bce) are timed in
// isolation on pre-staged inputs; "total" is the full scoring pipeline end to
// end, not the sum of parts.

#include "spadvae/trainer.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace spadvae {

// Phase identifiers in report order.
inline constexpr std::string_view kBenchPhases[] = {"encoder", "decoder",
                                                    "kld", "bce", "total"};
inline constexpr std::size_t kBenchPhaseCount = 5;

// Default batch-size sweep for the CLI and the throughput acceptance check.
std::vector<std::size_t> default_bench_batches();

struct TimingCell {
  std::string phase;
  std::size_t batch = 0;
  std::vector<double> samples_ms; // per-frame wall time, one entry per run
  double mean_ms = 0.0;
  double std_ms = 0.0; // sample standard deviation (N-1); 0 when n_runs == 1
};

struct TimingReport {
  std::vector<TimingCell> cells; // phase-major, batch ascending within phase
  std::size_t n_runs = 0;
  std::size_t warmup_runs = 0;
  bool parallel = false;            // intra-batch parallelism was permitted
  bool timer_warning = false;       // clock resolution coarser than 1 us
  double timer_resolution_ns = 0.0; // measured monotonic-clock granularity
};

// Times every phase at every batch size on a fixed random batch per size.
// Each phase runs warmup_runs untimed executions before its n_runs timed
// ones; batch generation, input staging, and report assembly are excluded
// from the timed regions. With parallel = false (the default) the timed
// executions are pinned to a single thread for clean measurements.
TimingReport time_phases(const Checkpoint& checkpoint,
                         const std::vector<std::size_t>& batch_sizes,
                         std::size_t n_runs = 1000,
                         std::size_t warmup_runs = 10, bool parallel = false,
                         std::uint64_t seed = 0);

// Median of a cell's recorded per-frame samples.
double median_ms(const TimingCell& cell);

// Looks up the cell for (phase, batch); throws UsageError when absent.
const TimingCell& find_cell(const TimingReport& report, std::string_view phase,
                            std::size_t batch);

// `phase,batch_size,mean_ms_per_frame,std_ms_per_frame,n_runs` with values
// at 4 decimal places, rows phase-major with batch ascending.
std::string render_timing_csv(const TimingReport& report);

// Raw per-run dump: `phase,batch_size,run_index,ms`.
std::string render_timing_samples_csv(const TimingReport& report);

void write_timing_csv(const std::string& path, const TimingReport& report);
void write_timing_samples_csv(const std::string& path,
                              const TimingReport& report);

} // namespace spadvae
