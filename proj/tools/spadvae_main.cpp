// spadvae: one executable for the full pipeline — synthetic frame
// generation, VAE training, threshold calibration, frame selection,
// latent export, and the inference timing harness.
//
// Exit codes: 0 success, 2 usage/validation, 3 numerical abort,
// 4 I/O or file-format failure (including config-hash mismatches).
//
// Every subcommand writes a JSON manifest next to its primary output with
// the fully resolved configuration; rerunning with identical flags and seed
// reproduces the primary outputs bit for bit (timing measurements excepted),
// with only the manifest timestamps differing.

#include "spadvae/anomaly.hpp"
#include "spadvae/bench.hpp"
#include "spadvae/datagen.hpp"
#include "spadvae/errors.hpp"
#include "spadvae/frame_io.hpp"
#include "spadvae/trainer.hpp"
#include "spadvae/vae.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
using namespace spadvae;

constexpr const char* kToolVersion = "1.0.0";
constexpr std::size_t kScoreChunk = 64;

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.flush();
  if (!f) throw IoError("write failure on '" + path + "'");
}

// Plain text index list, one frame index per line.
void write_index_file(const std::string& path,
                      const std::vector<std::size_t>& indices) {
  std::string out;
  for (const std::size_t i : indices) {
    out += std::to_string(i);
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<std::size_t> read_index_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open index file '" + path + "'");
  std::vector<std::size_t> indices;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t consumed = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(line, &consumed);
    } catch (const std::exception&) {
      throw IoError("bad index on line " + std::to_string(line_no) + " of '" +
                    path + "'");
    }
    if (consumed != line.size())
      throw IoError("bad index on line " + std::to_string(line_no) + " of '" +
                    path + "'");
    indices.push_back(static_cast<std::size_t>(value));
  }
  if (indices.empty()) throw IoError("index file '" + path + "' is empty");
  return indices;
}

// Manifest assembly: the command fills config/inputs/outputs, the runner
// stamps identity and timestamps.
struct Manifest {
  std::string subcommand;
  std::string path;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::uint64_t seed = 0;
  std::string started_at;
};

void write_manifest(const Manifest& m) {
  json j;
  j["subcommand"] = m.subcommand;
  j["tool_version"] = kToolVersion;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["started_at"] = m.started_at;
  j["finished_at"] = utc_timestamp();
  write_text_file(m.path, j.dump(2) + "\n");
}

void apply_thread_cap(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

std::string trim_ws(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Expands `--config <path>` into the equivalent command-line flags: each
// `key=value` line of the file becomes `--key=value`, appended after the
// explicit arguments. Whitespace around the key and value is ignored. A flag
// given on the command line wins over the file.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return args;

  std::ifstream f(config_path);
  if (!f) throw IoError("cannot open config file '" + config_path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    line = trim_ws(line);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    const std::string key = eq == std::string::npos ? "" : trim_ws(line.substr(0, eq));
    if (key.empty())
      throw IoError("config file '" + config_path + "' line " +
                    std::to_string(line_no) + " is not key=value");
    const std::string flag = "--" + key;
    bool overridden = false;
    for (const std::string& arg : args)
      if (arg == flag || arg.rfind(flag + "=", 0) == 0) {
        overridden = true;
        break;
      }
    if (!overridden) args.push_back(flag + "=" + trim_ws(line.substr(eq + 1)));
  }
  return args;
}

SelectionMode parse_mode(const std::string& mode) {
  if (mode == "bce") return SelectionMode::bce_only;
  if (mode == "kld") return SelectionMode::kld_only;
  if (mode == "either") return SelectionMode::either;
  throw UsageError("unknown --mode '" + mode + "'");
}

ThresholdKind parse_kind(const std::string& kind) {
  if (kind == "p98") return ThresholdKind::p98;
  if (kind == "max") return ThresholdKind::max;
  if (kind == "divergence") return ThresholdKind::divergence;
  throw UsageError("unknown --kind '" + kind + "'");
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen

struct GenFlags {
  std::size_t bg = 0, sig = 0;
  std::size_t width = 64, height = 64;
  double dcr = 1.2e-3, crosstalk = 0.05, hit_p = 0.55;
  std::size_t track_min = 0, track_max = 0;
  std::string out = "frames.spf";
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_gen(const GenFlags& f) {
  Manifest m;
  m.subcommand = "gen";
  m.started_at = utc_timestamp();
  m.seed = f.seed;
  apply_thread_cap(f.threads);

  if (f.bg + f.sig == 0)
    throw UsageError("nothing to generate: pass --bg and/or --sig");

  GenConfig cfg;
  cfg.width = f.width;
  cfg.height = f.height;
  cfg.dcr_p = f.dcr;
  cfg.crosstalk_p = f.crosstalk;
  cfg.track.hit_p = f.hit_p;
  cfg.track.min_length = f.track_min;
  cfg.track.max_length = f.track_max;
  cfg.validate();

  const LabeledSet set = gen_dataset(f.bg, f.sig, cfg, f.seed);
  write_frames(f.out, set);

  m.config = {{"bg", f.bg},
              {"sig", f.sig},
              {"width", f.width},
              {"height", f.height},
              {"dcr", f.dcr},
              {"crosstalk", f.crosstalk},
              {"hit_p", f.hit_p},
              {"track_min", cfg.track_min_length()},
              {"track_max", cfg.track_max_length()},
              {"threads", f.threads}};
  m.outputs = {{"frames", f.out}};
  m.path = f.out + ".manifest.json";
  write_manifest(m);
  std::cout << "wrote " << set.frames.size() << " frames to " << f.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string in;
  std::string out = "model.ckpt";
  std::string metrics = "metrics.csv";
  std::string test_indices = "test_indices.txt";
  std::size_t epochs = 50;
  std::size_t batch = 256;
  double lr = 1e-3;
  std::size_t latent = 32;
  std::vector<std::size_t> channels = {8, 16, 24, 32, 48, 64};
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_train(const TrainFlags& f) {
  Manifest m;
  m.subcommand = "train";
  m.started_at = utc_timestamp();
  m.seed = f.seed;
  apply_thread_cap(f.threads);

  const LabeledSet set = read_frames(f.in);
  if (set.frames.empty()) throw UsageError("training input has no frames");

  TrainConfig cfg;
  cfg.epochs = f.epochs;
  cfg.batch_size = f.batch;
  cfg.base_lr = f.lr;
  cfg.seed = f.seed;
  cfg.model.input_height = set.frames[0].height();
  cfg.model.input_width = set.frames[0].width();
  cfg.model.latent_dim = f.latent;
  cfg.model.encoder_channels = f.channels;
  cfg.validate();

  const SplitIndices split =
      split_dataset(set.frames.size(), cfg.split, f.seed);
  const TrainResult result =
      train(set.frames, split.train, split.val, cfg);

  save_checkpoint(f.out, result.checkpoint);
  write_metrics_csv(f.metrics, result.metrics);
  write_index_file(f.test_indices, split.test);

  m.config = {{"epochs", f.epochs},
              {"batch", f.batch},
              {"lr", f.lr},
              {"latent", f.latent},
              {"channels", join_sizes(f.channels)},
              {"split", "0.60/0.10/0.30"},
              {"threads", f.threads}};
  m.inputs = {{"frames", f.in}};
  m.outputs = {{"checkpoint", f.out},
               {"metrics", f.metrics},
               {"test_indices", f.test_indices}};
  m.path = f.out + ".manifest.json";
  write_manifest(m);

  const MetricRecord& last = result.metrics.back();
  std::cout << "trained " << f.epochs << " epochs (" << result.metrics.size()
            << " iterations); final val_bce "
            << (last.has_val ? last.val_bce : 0.0) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateFlags {
  std::string ckpt;
  std::string in;
  std::string indices;
  std::string mixed;
  std::string kind = "all";
  std::string out = "thresholds.txt";
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_calibrate(const CalibrateFlags& f) {
  Manifest m;
  m.subcommand = "calibrate";
  m.started_at = utc_timestamp();
  m.seed = f.seed;
  apply_thread_cap(f.threads);

  const bool want_divergence = f.kind == "divergence" || f.kind == "all";
  if (f.kind == "divergence" && f.mixed.empty())
    throw UsageError("--kind divergence requires --mixed");

  const Checkpoint ck = load_checkpoint(f.ckpt);
  const LabeledSet bg_set = read_frames(f.in);
  std::optional<std::vector<std::size_t>> idx;
  if (!f.indices.empty()) idx = read_index_file(f.indices);

  const ScoreSet bg =
      score_frames(ck, bg_set, ScoreMode::deterministic, f.seed,
                   idx ? &*idx : nullptr, kScoreChunk);

  std::optional<ScoreSet> mixed_scores;
  if (want_divergence && !f.mixed.empty()) {
    const LabeledSet mixed_set = read_frames(f.mixed);
    mixed_scores = score_frames(ck, mixed_set, ScoreMode::deterministic,
                                f.seed, nullptr, kScoreChunk);
  }

  Thresholds t =
      calibrate_thresholds(bg, mixed_scores ? &*mixed_scores : nullptr);
  if (f.kind == "p98") {
    t.has_max = false;
    t.has_divergence = false;
  } else if (f.kind == "max") {
    t.has_p98 = false;
    t.has_divergence = false;
  } else if (f.kind == "divergence") {
    t.has_p98 = false;
    t.has_max = false;
  }
  t.bg_source = f.in;
  t.mixed_source = mixed_scores ? f.mixed : "";
  write_thresholds(f.out, t);

  m.config = {{"kind", f.kind}, {"threads", f.threads}};
  m.inputs = {{"checkpoint", f.ckpt}, {"frames", f.in}};
  if (!f.indices.empty()) m.inputs["indices"] = f.indices;
  if (mixed_scores) m.inputs["mixed"] = f.mixed;
  m.outputs = {{"thresholds", f.out}};
  m.path = f.out + ".manifest.json";
  write_manifest(m);

  std::cout << "calibrated " << f.kind << " thresholds from " << bg.size()
            << " background frames\n";
  return 0;
}

// ---------------------------------------------------------------------------
// select

struct SelectFlags {
  std::string ckpt;
  std::string in;
  std::string thresholds;
  std::string indices;
  std::string mode = "either";
  std::string kind = "p98";
  std::size_t count_min = 4;
  std::size_t count_max = 9;
  std::string out_prefix = "selection";
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_select(const SelectFlags& f) {
  Manifest m;
  m.subcommand = "select";
  m.started_at = utc_timestamp();
  m.seed = f.seed;
  apply_thread_cap(f.threads);

  const Checkpoint ck = load_checkpoint(f.ckpt);
  const Thresholds t = read_thresholds(f.thresholds);
  if (t.config_hash != ck.model.hash())
    throw ConfigMismatchError(t.config_hash, ck.model.hash());

  const LabeledSet set = read_frames(f.in);
  std::optional<std::vector<std::size_t>> idx;
  if (!f.indices.empty()) idx = read_index_file(f.indices);

  const ScoreSet scores =
      score_frames(ck, set, ScoreMode::deterministic, f.seed,
                   idx ? &*idx : nullptr, kScoreChunk);
  const std::vector<std::uint8_t> mask =
      select(scores, t, parse_mode(f.mode), parse_kind(f.kind));
  const SelectionReport report =
      per_count_report(scores, mask, f.count_min, f.count_max);
  const SummedImages imgs =
      summed_image(set.frames, mask, idx ? &*idx : nullptr);

  const std::string frames_csv = f.out_prefix + "_frames.csv";
  const std::string report_csv = f.out_prefix + "_report.csv";
  const std::string selected_pgm = f.out_prefix + "_selected.pgm";
  const std::string unselected_pgm = f.out_prefix + "_unselected.pgm";
  const std::string summed_csv = f.out_prefix + "_summed.csv";

  write_text_file(frames_csv,
                  render_scores_csv(scores, mask, idx ? &*idx : nullptr));
  write_text_file(report_csv, render_selection_report_csv(report));
  write_text_file(selected_pgm,
                  render_pgm(imgs.selected, imgs.width, imgs.height));
  write_text_file(unselected_pgm,
                  render_pgm(imgs.unselected, imgs.width, imgs.height));
  write_text_file(summed_csv, render_summed_csv(imgs));

  m.config = {{"mode", f.mode},
              {"kind", f.kind},
              {"count_min", f.count_min},
              {"count_max", f.count_max},
              {"threads", f.threads}};
  m.inputs = {{"checkpoint", f.ckpt},
              {"frames", f.in},
              {"thresholds", f.thresholds}};
  if (!f.indices.empty()) m.inputs["indices"] = f.indices;
  m.outputs = {{"frames_csv", frames_csv},
               {"report_csv", report_csv},
               {"selected_pgm", selected_pgm},
               {"unselected_pgm", unselected_pgm},
               {"summed_csv", summed_csv}};
  m.path = f.out_prefix + ".manifest.json";
  write_manifest(m);

  std::size_t selected = 0;
  for (const std::uint8_t b : mask) selected += b;
  std::cout << "selected " << selected << " of " << mask.size() << " frames ("
            << f.mode << "/" << f.kind << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// export-latent

struct ExportLatentFlags {
  std::string ckpt;
  std::string in;
  std::string indices;
  std::string thresholds;
  std::string mode = "either";
  std::string kind = "p98";
  bool logvar = false;
  std::string out = "latent.csv";
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_export_latent(const ExportLatentFlags& f) {
  Manifest m;
  m.subcommand = "export-latent";
  m.started_at = utc_timestamp();
  m.seed = f.seed;
  apply_thread_cap(f.threads);

  const Checkpoint ck = load_checkpoint(f.ckpt);
  const LabeledSet set = read_frames(f.in);
  std::optional<std::vector<std::size_t>> idx;
  if (!f.indices.empty()) idx = read_index_file(f.indices);

  const LatentBatch stats =
      export_latent_stats(ck, set, idx ? &*idx : nullptr, kScoreChunk);
  const ScoreSet scores =
      score_frames(ck, set, ScoreMode::deterministic, f.seed,
                   idx ? &*idx : nullptr, kScoreChunk);

  std::vector<std::uint8_t> mask(scores.size(), 0);
  if (!f.thresholds.empty()) {
    const Thresholds t = read_thresholds(f.thresholds);
    if (t.config_hash != ck.model.hash())
      throw ConfigMismatchError(t.config_hash, ck.model.hash());
    mask = select(scores, t, parse_mode(f.mode), parse_kind(f.kind));
  }

  write_text_file(f.out, render_latent_csv(stats, scores, mask, f.logvar));

  m.config = {{"logvar", f.logvar}, {"threads", f.threads}};
  if (!f.thresholds.empty()) {
    m.config["mode"] = f.mode;
    m.config["kind"] = f.kind;
  }
  m.inputs = {{"checkpoint", f.ckpt}, {"frames", f.in}};
  if (!f.indices.empty()) m.inputs["indices"] = f.indices;
  if (!f.thresholds.empty()) m.inputs["thresholds"] = f.thresholds;
  m.outputs = {{"latent_csv", f.out}};
  m.path = f.out + ".manifest.json";
  write_manifest(m);

  std::cout << "exported latent statistics for " << scores.size()
            << " frames\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchFlags {
  std::string ckpt;
  std::vector<std::size_t> batches = {1, 2, 4, 8, 16, 32, 64};
  std::size_t runs = 1000;
  std::size_t warmup = 10;
  bool parallel = false;
  std::string out = "timing.csv";
  std::string samples_out;
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_bench(const BenchFlags& f) {
  Manifest m;
  m.subcommand = "bench";
  m.started_at = utc_timestamp();
  m.seed = f.seed;
  apply_thread_cap(f.threads);

  const Checkpoint ck = load_checkpoint(f.ckpt);
  const TimingReport report =
      time_phases(ck, f.batches, f.runs, f.warmup, f.parallel, f.seed);
  write_timing_csv(f.out, report);
  if (!f.samples_out.empty()) write_timing_samples_csv(f.samples_out, report);
  if (report.timer_warning)
    std::cerr << "warning: monotonic clock resolution "
              << report.timer_resolution_ns
              << " ns is coarser than 1 us; timings may be quantized\n";

  m.config = {{"batches", join_sizes(f.batches)},
              {"runs", f.runs},
              {"warmup", f.warmup},
              {"parallel", f.parallel},
              {"threads", f.threads}};
  m.inputs = {{"checkpoint", f.ckpt}};
  m.outputs = {{"timing_csv", f.out}};
  if (!f.samples_out.empty()) m.outputs["samples_csv"] = f.samples_out;
  m.path = f.out + ".manifest.json";
  write_manifest(m);

  const TimingCell& total1 = find_cell(report, "total", report.cells[0].batch);
  std::cout << "timed " << report.cells.size() << " cells over "
            << report.n_runs << " runs (smallest batch total "
            << total1.mean_ms << " ms/frame)\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"Sparse binary frame anomaly pipeline"};
  app.require_subcommand(1);

  // `--config <path>` is expanded into ordinary flags before parsing; this
  // option only documents it (and rejects a dangling `--config`).
  std::string config_display;
  const auto add_config_help = [&config_display](CLI::App* sub) {
    sub->add_option("--config", config_display,
                    "Flat key=value file supplying any of this "
                    "subcommand's flags (command line wins)");
  };

  GenFlags gen_flags;
  CLI::App* gen = app.add_subcommand("gen", "Generate synthetic frames");
  add_config_help(gen);
  gen->add_option("--bg", gen_flags.bg, "Background frame count");
  gen->add_option("--sig", gen_flags.sig, "Signal frame count");
  gen->add_option("--width", gen_flags.width, "Frame width in pixels");
  gen->add_option("--height", gen_flags.height, "Frame height in pixels");
  gen->add_option("--dcr", gen_flags.dcr,
                  "Per-pixel dark-count probability");
  gen->add_option("--crosstalk", gen_flags.crosstalk,
                  "Crosstalk probability per lit pixel");
  gen->add_option("--hit-p", gen_flags.hit_p,
                  "Per-row hit probability along a track");
  gen->add_option("--track-min", gen_flags.track_min,
                  "Minimum track length in rows (0 = frame height)");
  gen->add_option("--track-max", gen_flags.track_max,
                  "Maximum track length in rows (0 = frame height)");
  gen->add_option("--out", gen_flags.out, "Output frame file");
  gen->add_option("--seed", gen_flags.seed, "Root RNG seed");
  gen->add_option("--threads", gen_flags.threads, "Worker thread cap");

  TrainFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "Train the model");
  add_config_help(train);
  train->add_option("--in", train_flags.in, "Training frame file")
      ->required();
  train->add_option("--out", train_flags.out, "Checkpoint output path");
  train->add_option("--metrics", train_flags.metrics, "Metrics CSV path");
  train->add_option("--test-indices", train_flags.test_indices,
                    "Held-out test split index file");
  train->add_option("--epochs", train_flags.epochs, "Training epochs");
  train->add_option("--batch", train_flags.batch, "Batch size");
  train->add_option("--lr", train_flags.lr, "Base learning rate");
  train->add_option("--latent", train_flags.latent, "Latent dimension");
  train
      ->add_option("--channels", train_flags.channels,
                   "Encoder channel progression")
      ->delimiter(',');
  train->add_option("--seed", train_flags.seed, "Root RNG seed");
  train->add_option("--threads", train_flags.threads, "Worker thread cap");

  CalibrateFlags cal_flags;
  CLI::App* calibrate =
      app.add_subcommand("calibrate", "Compute loss thresholds");
  add_config_help(calibrate);
  calibrate->add_option("--ckpt", cal_flags.ckpt, "Model checkpoint")
      ->required();
  calibrate->add_option("--in", cal_flags.in, "Background frame file")
      ->required();
  calibrate->add_option("--indices", cal_flags.indices,
                        "Index file restricting --in to a subset");
  calibrate->add_option("--mixed", cal_flags.mixed,
                        "Mixed frame file for divergence thresholds");
  calibrate
      ->add_option("--kind", cal_flags.kind,
                   "Threshold family: p98, max, divergence, or all")
      ->check(CLI::IsMember({"p98", "max", "divergence", "all"}));
  calibrate->add_option("--out", cal_flags.out, "Thresholds output path");
  calibrate->add_option("--seed", cal_flags.seed, "Root RNG seed");
  calibrate->add_option("--threads", cal_flags.threads, "Worker thread cap");

  SelectFlags sel_flags;
  CLI::App* select = app.add_subcommand("select", "Select anomalous frames");
  add_config_help(select);
  select->add_option("--ckpt", sel_flags.ckpt, "Model checkpoint")
      ->required();
  select->add_option("--in", sel_flags.in, "Frame file to score")
      ->required();
  select->add_option("--thresholds", sel_flags.thresholds, "Thresholds file")
      ->required();
  select->add_option("--indices", sel_flags.indices,
                     "Index file restricting --in to a subset");
  select
      ->add_option("--mode", sel_flags.mode,
                   "Loss combination: bce, kld, or either")
      ->check(CLI::IsMember({"bce", "kld", "either"}));
  select
      ->add_option("--kind", sel_flags.kind,
                   "Threshold family: p98, max, or divergence")
      ->check(CLI::IsMember({"p98", "max", "divergence"}));
  select->add_option("--count-min", sel_flags.count_min,
                     "Lowest pixel count in the report");
  select->add_option("--count-max", sel_flags.count_max,
                     "Highest pixel count in the report");
  select->add_option("--out-prefix", sel_flags.out_prefix,
                     "Prefix for the output files");
  select->add_option("--seed", sel_flags.seed, "Root RNG seed");
  select->add_option("--threads", sel_flags.threads, "Worker thread cap");

  ExportLatentFlags lat_flags;
  CLI::App* latent =
      app.add_subcommand("export-latent", "Export latent statistics");
  add_config_help(latent);
  latent->add_option("--ckpt", lat_flags.ckpt, "Model checkpoint")
      ->required();
  latent->add_option("--in", lat_flags.in, "Frame file to encode")
      ->required();
  latent->add_option("--indices", lat_flags.indices,
                     "Index file restricting --in to a subset");
  latent->add_option("--thresholds", lat_flags.thresholds,
                     "Thresholds file for the selected column");
  latent
      ->add_option("--mode", lat_flags.mode,
                   "Loss combination: bce, kld, or either")
      ->check(CLI::IsMember({"bce", "kld", "either"}));
  latent
      ->add_option("--kind", lat_flags.kind,
                   "Threshold family: p98, max, or divergence")
      ->check(CLI::IsMember({"p98", "max", "divergence"}));
  latent->add_flag("--logvar", lat_flags.logvar,
                   "Also export log-variance columns");
  latent->add_option("--out", lat_flags.out, "Latent CSV output path");
  latent->add_option("--seed", lat_flags.seed, "Root RNG seed");
  latent->add_option("--threads", lat_flags.threads, "Worker thread cap");

  BenchFlags bench_flags;
  CLI::App* bench =
      app.add_subcommand("bench", "Time the scoring pipeline phases");
  add_config_help(bench);
  bench->add_option("--ckpt", bench_flags.ckpt, "Model checkpoint")
      ->required();
  bench
      ->add_option("--batches", bench_flags.batches,
                   "Batch sizes to sweep")
      ->delimiter(',');
  bench->add_option("--runs", bench_flags.runs, "Timed runs per cell");
  bench->add_option("--warmup", bench_flags.warmup,
                    "Untimed warmup runs per cell");
  bench->add_flag("--parallel", bench_flags.parallel,
                  "Allow intra-batch parallelism during timing");
  bench->add_option("--out", bench_flags.out, "Timing CSV output path");
  bench->add_option("--samples-out", bench_flags.samples_out,
                    "Optional raw per-run sample dump");
  bench->add_option("--seed", bench_flags.seed, "Root RNG seed");
  bench->add_option("--threads", bench_flags.threads, "Worker thread cap");

  std::vector<std::string> args = expand_config_args(argc, argv);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*gen) return cmd_gen(gen_flags);
  if (*train) return cmd_train(train_flags);
  if (*calibrate) return cmd_calibrate(cal_flags);
  if (*select) return cmd_select(sel_flags);
  if (*latent) return cmd_export_latent(lat_flags);
  if (*bench) return cmd_bench(bench_flags);
  return 2;
}

} // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
