#include "spadvae/bench.hpp"

#include "spadvae/batched.hpp"
#include "spadvae/datagen.hpp"
#include "spadvae/errors.hpp"
#include "spadvae/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <utility>

namespace spadvae {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ns(Clock::time_point t0, Clock::time_point t1) {
  return static_cast<double>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
}

// Smallest observable tick of the monotonic clock: spin until now() changes
// and keep the best (smallest) delta over a handful of probes.
double probe_resolution_ns() {
  double best = std::numeric_limits<double>::infinity();
  for (int probe = 0; probe < 64; ++probe) {
    const Clock::time_point t0 = Clock::now();
    Clock::time_point t1 = Clock::now();
    while (t1 == t0) t1 = Clock::now();
    best = std::min(best, elapsed_ns(t0, t1));
  }
  return best;
}

double sample_mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (const double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (const double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// Restores the OpenMP worker cap on scope exit so a pinned benchmark cannot
// leak a one-thread limit into the rest of the process.
class ThreadCapGuard {
public:
  explicit ThreadCapGuard(bool pin_single) {
#ifdef _OPENMP
    saved_ = omp_get_max_threads();
    if (pin_single) omp_set_num_threads(1);
#else
    (void)pin_single;
#endif
  }
  ~ThreadCapGuard() {
#ifdef _OPENMP
    omp_set_num_threads(saved_);
#endif
  }
  ThreadCapGuard(const ThreadCapGuard&) = delete;
  ThreadCapGuard& operator=(const ThreadCapGuard&) = delete;

private:
#ifdef _OPENMP
  int saved_ = 1;
#endif
};

template <typename Fn>
std::vector<double> run_timed(Fn&& phase, std::size_t batch,
                              std::size_t n_runs, std::size_t warmup_runs) {
  for (std::size_t i = 0; i < warmup_runs; ++i) phase();
  std::vector<double> samples(n_runs);
  for (std::size_t i = 0; i < n_runs; ++i) {
    const Clock::time_point t0 = Clock::now();
    phase();
    const Clock::time_point t1 = Clock::now();
    samples[i] = elapsed_ns(t0, t1) / 1.0e6 / static_cast<double>(batch);
  }
  return samples;
}

} // namespace

std::vector<std::size_t> default_bench_batches() {
  return {1, 2, 4, 8, 16, 32, 64};
}

TimingReport time_phases(const Checkpoint& checkpoint,
                         const std::vector<std::size_t>& batch_sizes,
                         std::size_t n_runs, std::size_t warmup_runs,
                         bool parallel, std::uint64_t seed) {
  if (batch_sizes.empty())
    throw UsageError("benchmark needs at least one batch size");
  if (n_runs == 0) throw UsageError("benchmark needs n_runs >= 1");
  std::vector<std::size_t> batches = batch_sizes;
  std::sort(batches.begin(), batches.end());
  batches.erase(std::unique(batches.begin(), batches.end()), batches.end());
  if (batches.front() == 0) throw UsageError("batch size 0 is invalid");

  check_parameters_shape(checkpoint.params, checkpoint.model);

  TimingReport report;
  report.n_runs = n_runs;
  report.warmup_runs = warmup_runs;
  report.parallel = parallel;
  report.timer_resolution_ns = probe_resolution_ns();
  report.timer_warning = report.timer_resolution_ns > 1000.0;

  ThreadCapGuard guard(!parallel);

  // samples[phase][batch index], filled batch-by-batch so each fixed random
  // batch is generated and staged exactly once.
  std::vector<std::vector<std::vector<double>>> samples(
      kBenchPhaseCount,
      std::vector<std::vector<double>>(batches.size()));

  // Keeps every timed call observable so no phase body can be optimized out.
  double sink = 0.0;

  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const std::size_t batch = batches[bi];

    GenConfig gen;
    gen.width = checkpoint.model.input_width;
    gen.height = checkpoint.model.input_height;
    const LabeledSet set = gen_dataset(
        batch, 0, gen, derive_seed(seed, "bench/frames", batch));

    nn::batched::Workspace ws;
    const nn::batched::FmBuffer packed =
        nn::batched::pack_frames(set.frames);

    // Untimed staging: the component phases time one layer group each, on
    // inputs produced once up front.
    nn::batched::FmBuffer mu_staged, logvar_staged, recon_staged;
    nn::batched::encode(packed, checkpoint.params, checkpoint.model, ws,
                        mu_staged, logvar_staged);
    nn::batched::decode(mu_staged, checkpoint.params, checkpoint.model, ws,
                        recon_staged);

    nn::batched::FmBuffer mu_tmp, logvar_tmp, recon_tmp;

    samples[0][bi] = run_timed(
        [&] {
          nn::batched::encode(packed, checkpoint.params, checkpoint.model, ws,
                              mu_tmp, logvar_tmp);
          sink += mu_tmp.data[0];
        },
        batch, n_runs, warmup_runs);
    samples[1][bi] = run_timed(
        [&] {
          nn::batched::decode(mu_staged, checkpoint.params, checkpoint.model,
                              ws, recon_tmp);
          sink += recon_tmp.data[0];
        },
        batch, n_runs, warmup_runs);
    samples[2][bi] = run_timed(
        [&] {
          sink += nn::batched::kld_frames(mu_staged, logvar_staged, ws)[0];
        },
        batch, n_runs, warmup_runs);
    samples[3][bi] = run_timed(
        [&] { sink += nn::batched::bce_frames(packed, recon_staged, ws)[0]; },
        batch, n_runs, warmup_runs);
    samples[4][bi] = run_timed(
        [&] {
          sink += nn::batched::score_packed(packed, checkpoint.params,
                                            checkpoint.model, ws)
                      .bce[0];
        },
        batch, n_runs, warmup_runs);
  }

  if (!std::isfinite(sink))
    throw NumericError("benchmark produced non-finite scores");

  report.cells.reserve(kBenchPhaseCount * batches.size());
  for (std::size_t pi = 0; pi < kBenchPhaseCount; ++pi)
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      TimingCell cell;
      cell.phase = std::string(kBenchPhases[pi]);
      cell.batch = batches[bi];
      cell.samples_ms = std::move(samples[pi][bi]);
      cell.mean_ms = sample_mean(cell.samples_ms);
      cell.std_ms = sample_std(cell.samples_ms, cell.mean_ms);
      report.cells.push_back(std::move(cell));
    }
  return report;
}

double median_ms(const TimingCell& cell) {
  if (cell.samples_ms.empty())
    throw UsageError("timing cell has no samples");
  std::vector<double> sorted = cell.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
}

const TimingCell& find_cell(const TimingReport& report, std::string_view phase,
                            std::size_t batch) {
  for (const TimingCell& cell : report.cells)
    if (cell.phase == phase && cell.batch == batch) return cell;
  throw UsageError("no timing cell for phase '" + std::string(phase) +
                   "' at batch " + std::to_string(batch));
}

std::string render_timing_csv(const TimingReport& report) {
  std::string out =
      "phase,batch_size,mean_ms_per_frame,std_ms_per_frame,n_runs\n";
  char buf[160];
  for (const TimingCell& cell : report.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.4f,%.4f,%zu\n",
                  cell.phase.c_str(), cell.batch, cell.mean_ms, cell.std_ms,
                  report.n_runs);
    out += buf;
  }
  return out;
}

std::string render_timing_samples_csv(const TimingReport& report) {
  std::string out = "phase,batch_size,run_index,ms\n";
  char buf[160];
  for (const TimingCell& cell : report.cells)
    for (std::size_t i = 0; i < cell.samples_ms.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.6f\n", cell.phase.c_str(),
                    cell.batch, i, cell.samples_ms[i]);
      out += buf;
    }
  return out;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("write failure on '" + path + "'");
}

} // namespace

void write_timing_csv(const std::string& path, const TimingReport& report) {
  write_text(path, render_timing_csv(report));
}

void write_timing_samples_csv(const std::string& path,
                              const TimingReport& report) {
  write_text(path, render_timing_samples_csv(report));
}

} // namespace spadvae
