// End-to-end tests of the spadvae executable: every subcommand is driven
// through a real process (std::system) against small 16x16 datasets, and the
// outputs are inspected with the library's own readers. SPADVAE_CLI_PATH is
// injected by the build.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spadvae/anomaly.hpp"
#include "spadvae/frame_io.hpp"
#include "spadvae/trainer.hpp"

#include "json.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spadvae;

namespace {

const fs::path kWorkDir = "/tmp/spadvae_cli_tests";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPADVAE_CLI_PATH) + " " + args +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream out;
  out << f.rdbuf();
  return out.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// Per-frame selection flags from a select run's frames CSV
// (frame,count,bce,kld,selected,label).
std::vector<int> mask_of(const fs::path& frames_csv) {
  const std::vector<std::string> lines = lines_of(slurp(frames_csv));
  REQUIRE(lines.size() > 1);
  std::vector<int> mask;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream row(lines[i]);
    std::string field;
    for (int j = 0; j < 5; ++j) std::getline(row, field, ',');
    REQUIRE((field == "0" || field == "1"));
    mask.push_back(field == "1" ? 1 : 0);
  }
  return mask;
}

json manifest_without_timestamps(const fs::path& path) {
  json j = json::parse(slurp(path));
  REQUIRE(j.contains("started_at"));
  REQUIRE(j.contains("finished_at"));
  j.erase("started_at");
  j.erase("finished_at");
  return j;
}

// One shared tiny pipeline, built on first use: background and mixed frame
// files plus a short training run. Everything later reuses these artifacts.
struct Artifacts {
  fs::path dir = kWorkDir;
  fs::path bg = dir / "bg.spf";
  fs::path mixed = dir / "mixed.spf";
  fs::path ckpt = dir / "model.ckpt";
  fs::path metrics = dir / "metrics.csv";
  fs::path test_idx = dir / "test_indices.txt";

  Artifacts() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    REQUIRE(run_cli("gen --bg 300 --width 16 --height 16 --seed 7 --out " +
                    bg.string()) == 0);
    REQUIRE(run_cli("gen --bg 120 --sig 80 --width 16 --height 16 "
                    "--track-min 4 --track-max 10 --seed 8 --out " +
                    mixed.string()) == 0);
    REQUIRE(run_cli("train --in " + bg.string() +
                    " --epochs 2 --batch 32 --latent 4 --channels 4,8 "
                    "--seed 7 --out " +
                    ckpt.string() + " --metrics " + metrics.string() +
                    " --test-indices " + test_idx.string()) == 0);
  }
};

const Artifacts& artifacts() {
  static Artifacts a;
  return a;
}

} // namespace

TEST_CASE("gen writes labeled frame files of the requested composition") {
  const Artifacts& a = artifacts();

  const LabeledSet bg = read_frames(a.bg.string());
  CHECK(bg.frames.size() == 300);
  REQUIRE(bg.has_labels);
  for (const FrameLabel label : bg.labels)
    CHECK(label == FrameLabel::background);
  CHECK(bg.frames[0].width() == 16);
  CHECK(bg.frames[0].height() == 16);

  const LabeledSet mixed = read_frames(a.mixed.string());
  REQUIRE(mixed.frames.size() == 200);
  std::size_t signal = 0;
  for (const FrameLabel label : mixed.labels)
    if (label == FrameLabel::signal) ++signal;
  CHECK(signal == 80);
  for (std::size_t i = 0; i < 120; ++i)
    CHECK(mixed.labels[i] == FrameLabel::background);
}

TEST_CASE("gen reruns are bit-identical and manifests differ only in time") {
  const Artifacts& a = artifacts();
  const fs::path again = a.dir / "bg_again.spf";
  REQUIRE(run_cli("gen --bg 300 --width 16 --height 16 --seed 7 --out " +
                  again.string()) == 0);
  CHECK(slurp(again) == slurp(a.bg));

  json m1 = manifest_without_timestamps(a.dir / "bg.spf.manifest.json");
  json m2 = manifest_without_timestamps(a.dir / "bg_again.spf.manifest.json");
  // The output path is the one intentional difference between the runs.
  m1["outputs"]["frames"] = "";
  m2["outputs"]["frames"] = "";
  CHECK(m1 == m2);

  // A different seed must change the frames.
  const fs::path other = a.dir / "bg_seed9.spf";
  REQUIRE(run_cli("gen --bg 300 --width 16 --height 16 --seed 9 --out " +
                  other.string()) == 0);
  CHECK(slurp(other) != slurp(a.bg));
}

TEST_CASE("usage errors exit with code 2") {
  const Artifacts& a = artifacts();
  CHECK(run_cli("gen --bg 10 --dcr 1.5 --out " +
                (a.dir / "bad.spf").string()) == 2);
  CHECK(run_cli("gen") == 2); // nothing to generate
  CHECK(run_cli("") == 2);    // missing subcommand
  CHECK(run_cli("frobnicate --bg 1") == 2);
  CHECK(run_cli("train --epochs 1") == 2); // --in is required
  CHECK(run_cli("select --mode sometimes --ckpt x --in y --thresholds z") ==
        2);
}

TEST_CASE("missing input files exit with code 4") {
  const Artifacts& a = artifacts();
  CHECK(run_cli("train --in " + (a.dir / "nope.spf").string()) == 4);
  CHECK(run_cli("calibrate --ckpt " + (a.dir / "nope.ckpt").string() +
                " --in " + a.bg.string()) == 4);
  CHECK(run_cli("bench --ckpt " + (a.dir / "nope.ckpt").string()) == 4);
}

TEST_CASE("train produces a loadable checkpoint, metrics, and test split") {
  const Artifacts& a = artifacts();

  const Checkpoint ck = load_checkpoint(a.ckpt.string());
  CHECK(ck.model.input_width == 16);
  CHECK(ck.model.encoder_channels == std::vector<std::size_t>{4, 8});
  CHECK(ck.model.latent_dim == 4);
  CHECK(ck.iter > 0);

  const std::vector<std::string> rows = lines_of(slurp(a.metrics));
  CHECK(rows[0] == "iter,epoch,lr,beta,train_bce,train_kld,val_bce,val_kld");
  std::size_t val_rows = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream row(rows[i]);
    std::string field;
    for (int j = 0; j < 7; ++j) std::getline(row, field, ',');
    if (!field.empty()) ++val_rows;
  }
  CHECK(val_rows == 2); // one validation row per epoch

  // Warmup spans the first epoch: its final row must be back at base lr.
  const std::size_t per_epoch = (rows.size() - 1) / 2;
  std::istringstream warm_end(rows[per_epoch]);
  std::string field;
  std::getline(warm_end, field, ',');
  std::getline(warm_end, field, ',');
  std::getline(warm_end, field, ',');
  CHECK(std::stod(field) == doctest::Approx(1e-3).epsilon(1e-12));

  // Test split: 30% of 300 frames, all indices in range and unique.
  const std::vector<std::string> idx = lines_of(slurp(a.test_idx));
  CHECK(idx.size() == 90);
  std::vector<bool> seen(300, false);
  for (const std::string& line : idx) {
    const std::size_t v = std::stoull(line);
    REQUIRE(v < 300);
    CHECK_FALSE(seen[v]);
    seen[v] = true;
  }
}

TEST_CASE("train reruns reproduce the checkpoint and metrics bitwise") {
  const Artifacts& a = artifacts();
  const fs::path ckpt2 = a.dir / "model_again.ckpt";
  const fs::path metrics2 = a.dir / "metrics_again.csv";
  REQUIRE(run_cli("train --in " + a.bg.string() +
                  " --epochs 2 --batch 32 --latent 4 --channels 4,8 "
                  "--seed 7 --out " +
                  ckpt2.string() + " --metrics " + metrics2.string() +
                  " --test-indices " +
                  (a.dir / "test_again.txt").string()) == 0);
  CHECK(slurp(ckpt2) == slurp(a.ckpt));
  CHECK(slurp(metrics2) == slurp(a.metrics));
  CHECK(slurp(a.dir / "test_again.txt") == slurp(a.test_idx));
}

TEST_CASE("calibrate writes the requested threshold families") {
  const Artifacts& a = artifacts();

  const fs::path p98 = a.dir / "thr_p98.txt";
  REQUIRE(run_cli("calibrate --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --indices " + a.test_idx.string() +
                  " --kind p98 --out " + p98.string()) == 0);
  const Thresholds t98 = read_thresholds(p98.string());
  CHECK(t98.has_p98);
  CHECK_FALSE(t98.has_max);
  CHECK_FALSE(t98.has_divergence);
  CHECK(t98.config_hash == load_checkpoint(a.ckpt.string()).model.hash());
  CHECK(t98.bg_source == a.bg.string());

  const fs::path all = a.dir / "thr_all.txt";
  REQUIRE(run_cli("calibrate --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --indices " + a.test_idx.string() +
                  " --mixed " + a.mixed.string() + " --kind all --out " +
                  all.string()) == 0);
  const Thresholds tall = read_thresholds(all.string());
  CHECK(tall.has_p98);
  CHECK(tall.has_max);
  CHECK(tall.has_divergence);
  CHECK(tall.mixed_source == a.mixed.string());
  CHECK(tall.bce_p98 == t98.bce_p98); // same inputs, same rule

  CHECK(run_cli("calibrate --ckpt " + a.ckpt.string() + " --in " +
                a.bg.string() + " --kind divergence --out " +
                (a.dir / "thr_no_mixed.txt").string()) == 2);
}

TEST_CASE("max thresholds calibrated on a set select nothing from it") {
  const Artifacts& a = artifacts();
  const fs::path thr = a.dir / "thr_max.txt";
  REQUIRE(run_cli("calibrate --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --indices " + a.test_idx.string() +
                  " --kind max --out " + thr.string()) == 0);
  const fs::path prefix = a.dir / "self";
  REQUIRE(run_cli("select --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --indices " + a.test_idx.string() +
                  " --thresholds " + thr.string() +
                  " --mode either --kind max --out-prefix " +
                  prefix.string()) == 0);

  const std::vector<int> mask = mask_of(a.dir / "self_frames.csv");
  CHECK(mask.size() == 90); // one row per scored frame
  for (const int m : mask) CHECK(m == 0);

  // The unselected summed image therefore holds every lit pixel.
  const std::string summed = slurp(a.dir / "self_summed.csv");
  const std::vector<std::string> rows = lines_of(summed);
  REQUIRE(rows.size() == 1 + 16 * 16);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream row(rows[i]);
    std::string x, y, sel;
    std::getline(row, x, ',');
    std::getline(row, y, ',');
    std::getline(row, sel, ',');
    CHECK(sel == "0");
  }
}

TEST_CASE("selection modes recombine: either equals bce OR kld") {
  const Artifacts& a = artifacts();
  const fs::path thr = a.dir / "thr_modes.txt";
  REQUIRE(run_cli("calibrate --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --indices " + a.test_idx.string() +
                  " --kind p98 --out " + thr.string()) == 0);

  const std::string base = "select --ckpt " + a.ckpt.string() + " --in " +
                           a.mixed.string() + " --thresholds " + thr.string() +
                           " --kind p98 --out-prefix ";
  REQUIRE(run_cli(base + (a.dir / "m_bce").string() + " --mode bce") == 0);
  REQUIRE(run_cli(base + (a.dir / "m_kld").string() + " --mode kld") == 0);
  REQUIRE(run_cli(base + (a.dir / "m_or").string() + " --mode either") == 0);

  const std::vector<int> bce = mask_of(a.dir / "m_bce_frames.csv");
  const std::vector<int> kld = mask_of(a.dir / "m_kld_frames.csv");
  const std::vector<int> either = mask_of(a.dir / "m_or_frames.csv");
  REQUIRE(bce.size() == 200);
  REQUIRE(kld.size() == 200);
  REQUIRE(either.size() == 200);
  for (std::size_t i = 0; i < either.size(); ++i) {
    CAPTURE(i);
    CHECK(either[i] == (bce[i] | kld[i]));
  }
}

TEST_CASE("select rejects thresholds from a different model config") {
  const Artifacts& a = artifacts();
  Thresholds foreign;
  foreign.config_hash = 1234567;
  foreign.has_p98 = true;
  foreign.bce_p98 = 1.0;
  foreign.kld_p98 = 1.0;
  const fs::path thr = a.dir / "thr_foreign.txt";
  write_thresholds(thr.string(), foreign);

  CHECK(run_cli("select --ckpt " + a.ckpt.string() + " --in " +
                a.mixed.string() + " --thresholds " + thr.string() +
                " --mode either --kind p98 --out-prefix " +
                (a.dir / "foreign").string()) == 4);
}

TEST_CASE("select report covers the requested count band") {
  const Artifacts& a = artifacts();
  const fs::path thr = a.dir / "thr_band.txt";
  REQUIRE(run_cli("calibrate --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --kind p98 --out " + thr.string()) == 0);
  const fs::path prefix = a.dir / "band";
  REQUIRE(run_cli("select --ckpt " + a.ckpt.string() + " --in " +
                  a.mixed.string() + " --thresholds " + thr.string() +
                  " --mode either --kind p98 --count-min 2 --count-max 6 "
                  "--out-prefix " +
                  prefix.string()) == 0);

  const std::vector<std::string> rows =
      lines_of(slurp(a.dir / "band_report.csv"));
  REQUIRE(rows.size() == 1 + 5); // counts 2..6
  CHECK(rows[0] == "count,frames,selected,percent");
  CHECK(rows[1].rfind("2,", 0) == 0);
  CHECK(rows[5].rfind("6,", 0) == 0);
}

TEST_CASE("export-latent emits one row per frame") {
  const Artifacts& a = artifacts();
  const fs::path out = a.dir / "latent.csv";
  REQUIRE(run_cli("export-latent --ckpt " + a.ckpt.string() + " --in " +
                  a.mixed.string() + " --out " + out.string()) == 0);
  const std::vector<std::string> rows = lines_of(slurp(out));
  CHECK(rows.size() == 1 + 200);
  CHECK(rows[0] == "mu_0,mu_1,mu_2,mu_3,count,selected,label");
  // Without thresholds the selected column (second to last) is all zeros.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream row(rows[i]);
    std::string field;
    for (int j = 0; j < 6; ++j) std::getline(row, field, ',');
    CHECK(field == "0");
  }

  const fs::path sub = a.dir / "latent_sub.csv";
  REQUIRE(run_cli("export-latent --ckpt " + a.ckpt.string() + " --in " +
                  a.bg.string() + " --indices " + a.test_idx.string() +
                  " --logvar --out " + sub.string()) == 0);
  const std::vector<std::string> sub_rows = lines_of(slurp(sub));
  CHECK(sub_rows.size() == 1 + 90);
  CHECK(sub_rows[0].rfind("mu_0,mu_1,mu_2,mu_3,lv_0,", 0) == 0);
}

TEST_CASE("bench sweeps the requested batch sizes") {
  const Artifacts& a = artifacts();
  const fs::path out = a.dir / "timing.csv";
  REQUIRE(run_cli("bench --ckpt " + a.ckpt.string() +
                  " --batches 1,2 --runs 2 --warmup 1 --out " +
                  out.string()) == 0);
  const std::vector<std::string> rows = lines_of(slurp(out));
  REQUIRE(rows.size() == 1 + 5 * 2);
  CHECK(rows[0] == "phase,batch_size,mean_ms_per_frame,std_ms_per_frame,n_runs");
  CHECK(rows[1].rfind("encoder,1,", 0) == 0);
  CHECK(rows[10].rfind("total,2,", 0) == 0);

  const fs::path samples = a.dir / "timing_samples.csv";
  REQUIRE(run_cli("bench --ckpt " + a.ckpt.string() +
                  " --batches 1 --runs 3 --warmup 0 --out " +
                  (a.dir / "timing_b1.csv").string() + " --samples-out " +
                  samples.string()) == 0);
  CHECK(lines_of(slurp(samples)).size() == 1 + 5 * 3);
}

TEST_CASE("a config file stands in for command-line flags") {
  const Artifacts& a = artifacts();
  const fs::path cfg = a.dir / "gen.cfg";
  const fs::path out_cfg = a.dir / "bg_from_cfg.spf";
  {
    std::ofstream f(cfg);
    f << "bg=300\n"
      << "width=16\n"
      << "height=16\n"
      << "seed=7\n"
      << "out=" << out_cfg.string() << "\n";
  }
  REQUIRE(run_cli("gen --config " + cfg.string()) == 0);
  CHECK(slurp(out_cfg) == slurp(a.bg));
}

TEST_CASE("calibrate manifests are rerun-stable apart from timestamps") {
  const Artifacts& a = artifacts();
  const fs::path thr = a.dir / "thr_stable.txt";
  const std::string cmd = "calibrate --ckpt " + a.ckpt.string() + " --in " +
                          a.bg.string() + " --indices " +
                          a.test_idx.string() + " --kind p98 --out " +
                          thr.string();
  REQUIRE(run_cli(cmd) == 0);
  const std::string first = slurp(thr);
  const json m1 = manifest_without_timestamps(a.dir / "thr_stable.txt.manifest.json");
  REQUIRE(run_cli(cmd) == 0);
  CHECK(slurp(thr) == first);
  const json m2 = manifest_without_timestamps(a.dir / "thr_stable.txt.manifest.json");
  CHECK(m1 == m2);
}
