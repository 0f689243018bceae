#include "spadvae/anomaly.hpp"

#include "spadvae/batched.hpp"
#include "spadvae/errors.hpp"
#include "spadvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace spadvae {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const Frame& frame_at(const LabeledSet& set,
                      const std::vector<std::size_t>* indices, std::size_t i) {
  const std::size_t g = indices ? (*indices)[i] : i;
  if (g >= set.frames.size())
    throw UsageError("frame index " + std::to_string(g) +
                     " out of range for a set of " +
                     std::to_string(set.frames.size()));
  return set.frames[g];
}

void check_geometry(const Checkpoint& ck, const Frame& f) {
  if (f.height() != ck.model.input_height ||
      f.width() != ck.model.input_width)
    throw UsageError(
        "frame geometry " + std::to_string(f.width()) + "x" +
        std::to_string(f.height()) + " does not match the model input " +
        std::to_string(ck.model.input_width) + "x" +
        std::to_string(ck.model.input_height));
}

} // namespace

ScoreSet score_frames(const Checkpoint& ck, const LabeledSet& set,
                      ScoreMode mode, std::uint64_t seed,
                      const std::vector<std::size_t>* indices,
                      std::size_t chunk) {
  const std::size_t n = indices ? indices->size() : set.frames.size();
  if (n == 0) throw UsageError("no frames to score");
  if (chunk == 0) throw UsageError("chunk size must be positive");
  check_geometry(ck, frame_at(set, indices, 0));
  check_parameters_shape(ck.params, ck.model);

  const std::size_t d = ck.model.latent_dim;
  ScoreSet out;
  out.bce.reserve(n);
  out.kld.reserve(n);
  out.count.reserve(n);
  out.has_labels = set.has_labels;
  if (set.has_labels) out.labels.reserve(n);
  out.config_hash = ck.model.hash();

  nn::batched::Workspace ws;
  std::vector<std::size_t> chunk_idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t lanes = std::min(chunk, n - start);
    chunk_idx.resize(lanes);
    for (std::size_t l = 0; l < lanes; ++l)
      chunk_idx[l] = indices ? (*indices)[start + l] : start + l;

    const nn::batched::FmBuffer packed =
        nn::batched::pack_frames(set.frames, &chunk_idx);

    nn::batched::FmBuffer eps;
    if (mode == ScoreMode::sampled) {
      eps.resize(d, lanes);
      for (std::size_t l = 0; l < lanes; ++l) {
        Rng stream(derive_seed(seed, "score/eps", chunk_idx[l]));
        for (std::size_t j = 0; j < d; ++j)
          eps.data[j * lanes + l] = stream.next_normal();
      }
    }

    const nn::batched::ScoredBatch scored = nn::batched::score_packed(
        packed, ck.params, ck.model, ws,
        mode == ScoreMode::sampled ? &eps : nullptr);

    for (std::size_t l = 0; l < lanes; ++l) {
      out.bce.push_back(scored.bce[l]);
      out.kld.push_back(scored.kld[l]);
      const Frame& f = set.frames[chunk_idx[l]];
      out.count.push_back(f.count());
      if (set.has_labels) out.labels.push_back(set.labels[chunk_idx[l]]);
    }
  }
  return out;
}

LatentBatch export_latent_stats(const Checkpoint& ck, const LabeledSet& set,
                                const std::vector<std::size_t>* indices,
                                std::size_t chunk) {
  const std::size_t n = indices ? indices->size() : set.frames.size();
  if (n == 0) throw UsageError("no frames to encode");
  if (chunk == 0) throw UsageError("chunk size must be positive");
  check_geometry(ck, frame_at(set, indices, 0));
  check_parameters_shape(ck.params, ck.model);

  const std::size_t d = ck.model.latent_dim;
  LatentBatch stats{Tensor({n, d}), Tensor({n, d})};

  nn::batched::Workspace ws;
  std::vector<std::size_t> chunk_idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t lanes = std::min(chunk, n - start);
    chunk_idx.resize(lanes);
    for (std::size_t l = 0; l < lanes; ++l)
      chunk_idx[l] = indices ? (*indices)[start + l] : start + l;

    nn::batched::FmBuffer mu, logvar;
    nn::batched::encode(nn::batched::pack_frames(set.frames, &chunk_idx),
                        ck.params, ck.model, ws, mu, logvar);
    for (std::size_t l = 0; l < lanes; ++l)
      for (std::size_t j = 0; j < d; ++j) {
        stats.mu.data()[(start + l) * d + j] = mu.data[j * lanes + l];
        stats.logvar.data()[(start + l) * d + j] = logvar.data[j * lanes + l];
      }
  }
  return stats;
}

double percentile_threshold(const std::vector<double>& scores, double q) {
  if (scores.empty())
    throw UsageError("percentile_threshold: empty score list");
  if (!(q > 0.0 && q < 1.0))
    throw UsageError("percentile_threshold: q must lie in (0,1), got " +
                     fmt_double(q));
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double exact = q * static_cast<double>(sorted.size());
  std::size_t rank = static_cast<std::size_t>(std::ceil(exact));
  if (rank == 0) rank = 1;
  if (rank > sorted.size()) rank = sorted.size();
  return sorted[rank - 1];
}

double max_threshold(const std::vector<double>& scores) {
  if (scores.empty()) throw UsageError("max_threshold: empty score list");
  return *std::max_element(scores.begin(), scores.end());
}

DivergenceResult divergence_threshold(const std::vector<double>& bg_scores,
                                      const std::vector<double>& mixed_scores,
                                      std::size_t bins) {
  if (bg_scores.empty() || mixed_scores.empty())
    throw UsageError("divergence_threshold: empty score list");
  if (bins == 0) throw UsageError("divergence_threshold: zero bins");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const double v : bg_scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (const double v : mixed_scores) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    return {percentile_threshold(bg_scores, 0.98), true};

  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> bg_hist(bins, 0), mixed_hist(bins, 0);
  const auto bin_of = [&](double v) {
    const double f = (v - lo) / width;
    std::size_t b = f < 0.0 ? 0 : static_cast<std::size_t>(f);
    return std::min(b, bins - 1);
  };
  for (const double v : bg_scores) ++bg_hist[bin_of(v)];
  for (const double v : mixed_scores) ++mixed_hist[bin_of(v)];

  // Unit-area densities share the constant 1/width factor; comparing
  // count/set-size ratios is the same ordering.
  const double bg_n = static_cast<double>(bg_scores.size());
  const double mixed_n = static_cast<double>(mixed_scores.size());
  std::size_t best = bins; // sentinel: no qualifying bin
  for (std::size_t j = bins; j-- > 0;) {
    if (mixed_hist[j] > 0) {
      const double mixed_density = static_cast<double>(mixed_hist[j]) / mixed_n;
      const double bg_density = static_cast<double>(bg_hist[j]) / bg_n;
      if (!(mixed_density > bg_density)) break; // suffix property lost
    }
    best = j;
  }
  if (best == bins) return {percentile_threshold(bg_scores, 0.98), true};
  return {lo + static_cast<double>(best) * width, false};
}

Thresholds calibrate_thresholds(const ScoreSet& bg, const ScoreSet* mixed,
                                std::size_t bins) {
  if (bg.size() == 0) throw UsageError("calibrate: empty background scores");
  Thresholds t;
  t.config_hash = bg.config_hash;
  t.has_p98 = true;
  t.bce_p98 = percentile_threshold(bg.bce, 0.98);
  t.kld_p98 = percentile_threshold(bg.kld, 0.98);
  t.has_max = true;
  t.bce_max = max_threshold(bg.bce);
  t.kld_max = max_threshold(bg.kld);
  if (mixed != nullptr) {
    if (mixed->config_hash != 0 && bg.config_hash != 0 &&
        mixed->config_hash != bg.config_hash)
      throw ConfigMismatchError(bg.config_hash, mixed->config_hash);
    const DivergenceResult b = divergence_threshold(bg.bce, mixed->bce, bins);
    const DivergenceResult k = divergence_threshold(bg.kld, mixed->kld, bins);
    t.has_divergence = true;
    t.bce_divergence = b.threshold;
    t.bce_divergence_fallback = b.fallback;
    t.kld_divergence = k.threshold;
    t.kld_divergence_fallback = k.fallback;
  }
  return t;
}

std::vector<std::uint8_t> select(const ScoreSet& scores, const Thresholds& t,
                                 SelectionMode mode, ThresholdKind kind) {
  if (scores.config_hash != 0 && t.config_hash != 0 &&
      scores.config_hash != t.config_hash)
    throw ConfigMismatchError(t.config_hash, scores.config_hash);

  double t_bce = 0.0, t_kld = 0.0;
  switch (kind) {
    case ThresholdKind::p98:
      if (!t.has_p98)
        throw UsageError("thresholds carry no p98 values");
      t_bce = t.bce_p98;
      t_kld = t.kld_p98;
      break;
    case ThresholdKind::max:
      if (!t.has_max)
        throw UsageError("thresholds carry no max values");
      t_bce = t.bce_max;
      t_kld = t.kld_max;
      break;
    case ThresholdKind::divergence:
      if (!t.has_divergence)
        throw UsageError("thresholds carry no divergence values");
      t_bce = t.bce_divergence;
      t_kld = t.kld_divergence;
      break;
  }

  const std::size_t n = scores.size();
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool by_bce = scores.bce[i] > t_bce;
    const bool by_kld = scores.kld[i] > t_kld;
    bool hit = false;
    switch (mode) {
      case SelectionMode::bce_only: hit = by_bce; break;
      case SelectionMode::kld_only: hit = by_kld; break;
      case SelectionMode::either: hit = by_bce || by_kld; break;
    }
    mask[i] = hit ? 1 : 0;
  }
  return mask;
}

SelectionReport per_count_report(const ScoreSet& scores,
                                 const std::vector<std::uint8_t>& mask,
                                 std::size_t c_min, std::size_t c_max) {
  if (c_min > c_max)
    throw UsageError("per_count_report: c_min " + std::to_string(c_min) +
                     " exceeds c_max " + std::to_string(c_max));
  if (mask.size() != scores.size())
    throw UsageError("per_count_report: mask length " +
                     std::to_string(mask.size()) + " does not match " +
                     std::to_string(scores.size()) + " scores");
  SelectionReport report;
  report.c_min = c_min;
  report.c_max = c_max;
  report.rows.resize(c_max - c_min + 1);
  for (std::size_t i = 0; i < report.rows.size(); ++i)
    report.rows[i].count = c_min + i;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t c = scores.count[i];
    if (c < c_min || c > c_max) continue;
    CountRow& row = report.rows[c - c_min];
    ++row.frames;
    if (mask[i]) ++row.selected;
  }
  return report;
}

std::string render_selection_report_csv(const SelectionReport& report) {
  std::string out = "count,frames,selected,percent\n";
  for (const CountRow& row : report.rows) {
    out += std::to_string(row.count) + ',' + std::to_string(row.frames) +
           ',' + std::to_string(row.selected) + ',';
    if (row.frames > 0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f",
                    100.0 * static_cast<double>(row.selected) /
                        static_cast<double>(row.frames));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string render_scores_csv(const ScoreSet& scores,
                              const std::vector<std::uint8_t>& mask,
                              const std::vector<std::size_t>* indices) {
  if (mask.size() != scores.size())
    throw UsageError("render_scores_csv: mask length mismatch");
  if (indices && indices->size() != scores.size())
    throw UsageError("render_scores_csv: index list length mismatch");
  std::string out = "frame,count,bce,kld,selected,label\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t g = indices ? (*indices)[i] : i;
    out += std::to_string(g) + ',' + std::to_string(scores.count[i]) + ',' +
           fmt_double(scores.bce[i]) + ',' + fmt_double(scores.kld[i]) + ',' +
           (mask[i] ? '1' : '0');
    out += ',';
    if (scores.has_labels)
      out += scores.labels[i] == FrameLabel::signal ? "signal" : "background";
    out += '\n';
  }
  return out;
}

SummedImages summed_image(const std::vector<Frame>& frames,
                          const std::vector<std::uint8_t>& mask,
                          const std::vector<std::size_t>* indices) {
  const std::size_t n = indices ? indices->size() : frames.size();
  if (mask.size() != n)
    throw UsageError("summed_image: mask length " +
                     std::to_string(mask.size()) + " does not match " +
                     std::to_string(n) + " frames");
  if (n == 0) throw UsageError("summed_image: no frames");

  const auto& first = frames.at(indices ? (*indices)[0] : 0);
  SummedImages out;
  out.width = first.width();
  out.height = first.height();
  out.selected.assign(out.width * out.height, 0);
  out.unselected.assign(out.width * out.height, 0);

  for (std::size_t i = 0; i < n; ++i) {
    const Frame& f = frames.at(indices ? (*indices)[i] : i);
    if (f.width() != out.width || f.height() != out.height)
      throw UsageError("summed_image: frames differ in geometry");
    auto& target = mask[i] ? out.selected : out.unselected;
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x)
        if (f.get(x, y)) ++target[y * out.width + x];
  }
  return out;
}

std::string render_pgm(const std::vector<std::uint64_t>& image,
                       std::size_t width, std::size_t height) {
  if (image.size() != width * height)
    throw UsageError("render_pgm: image size does not match geometry");
  if (width == 0 || height == 0)
    throw UsageError("render_pgm: empty geometry");

  std::uint64_t maxval = 1;
  for (const std::uint64_t v : image) maxval = std::max(maxval, v);
  maxval = std::min<std::uint64_t>(maxval, 65535);

  std::string out = "P5\n" + std::to_string(width) + ' ' +
                    std::to_string(height) + '\n' + std::to_string(maxval) +
                    '\n';
  if (maxval < 256) {
    for (const std::uint64_t v : image)
      out += static_cast<char>(std::min<std::uint64_t>(v, maxval));
  } else {
    for (const std::uint64_t v : image) {
      const std::uint64_t s = std::min<std::uint64_t>(v, maxval);
      out += static_cast<char>((s >> 8) & 0xFF);
      out += static_cast<char>(s & 0xFF);
    }
  }
  return out;
}

std::string render_summed_csv(const SummedImages& images) {
  std::string out = "x,y,selected,unselected\n";
  for (std::size_t y = 0; y < images.height; ++y)
    for (std::size_t x = 0; x < images.width; ++x) {
      const std::size_t i = y * images.width + x;
      out += std::to_string(x) + ',' + std::to_string(y) + ',' +
             std::to_string(images.selected[i]) + ',' +
             std::to_string(images.unselected[i]) + '\n';
    }
  return out;
}

std::string render_latent_csv(const LatentBatch& stats, const ScoreSet& scores,
                              const std::vector<std::uint8_t>& mask,
                              bool include_logvar) {
  if (stats.mu.rank() != 2)
    throw UsageError("render_latent_csv: mu must be [N,d]");
  const std::size_t n = stats.mu.dim(0), d = stats.mu.dim(1);
  if (scores.size() != n || mask.size() != n)
    throw UsageError("render_latent_csv: row count mismatch");
  if (include_logvar && !stats.logvar.same_shape(stats.mu))
    throw UsageError("render_latent_csv: logvar shape mismatch");

  std::string out;
  for (std::size_t j = 0; j < d; ++j) out += "mu_" + std::to_string(j) + ',';
  if (include_logvar)
    for (std::size_t j = 0; j < d; ++j)
      out += "lv_" + std::to_string(j) + ',';
  out += "count,selected,label\n";

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      out += fmt_double(stats.mu.data()[i * d + j]) + ',';
    if (include_logvar)
      for (std::size_t j = 0; j < d; ++j)
        out += fmt_double(stats.logvar.data()[i * d + j]) + ',';
    out += std::to_string(scores.count[i]) + ',';
    out += mask[i] ? '1' : '0';
    out += ',';
    if (scores.has_labels)
      out += scores.labels[i] == FrameLabel::signal ? "signal" : "background";
    out += '\n';
  }
  return out;
}

std::string render_thresholds(const Thresholds& t) {
  std::string out = "config_hash=" + std::to_string(t.config_hash) + '\n';
  if (t.has_p98) {
    out += "bce_p98=" + fmt_double(t.bce_p98) + '\n';
    out += "kld_p98=" + fmt_double(t.kld_p98) + '\n';
  }
  if (t.has_max) {
    out += "bce_max=" + fmt_double(t.bce_max) + '\n';
    out += "kld_max=" + fmt_double(t.kld_max) + '\n';
  }
  if (t.has_divergence) {
    out += "bce_divergence=" + fmt_double(t.bce_divergence) + '\n';
    out += "kld_divergence=" + fmt_double(t.kld_divergence) + '\n';
    out += "bce_divergence_fallback=" +
           std::string(t.bce_divergence_fallback ? "1" : "0") + '\n';
    out += "kld_divergence_fallback=" +
           std::string(t.kld_divergence_fallback ? "1" : "0") + '\n';
  }
  if (!t.bg_source.empty()) out += "bg_source=" + t.bg_source + '\n';
  if (!t.mixed_source.empty()) out += "mixed_source=" + t.mixed_source + '\n';
  return out;
}

namespace {

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw IoError("thresholds file: invalid numeric value '" + value +
                  "' for key '" + key + "'");
  }
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "0") return false;
  if (value == "1") return true;
  throw IoError("thresholds file: invalid flag value '" + value +
                "' for key '" + key + "' (expected 0 or 1)");
}

} // namespace

Thresholds parse_thresholds(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("thresholds file: line " + std::to_string(line_no) +
                    " is not key=value");
    const std::string key = line.substr(0, eq);
    if (!kv.emplace(key, line.substr(eq + 1)).second)
      throw IoError("thresholds file: duplicate key '" + key + "'");
  }

  static const char* known[] = {
      "config_hash",     "bce_p98",
      "kld_p98",         "bce_max",
      "kld_max",         "bce_divergence",
      "kld_divergence",  "bce_divergence_fallback",
      "kld_divergence_fallback", "bg_source",
      "mixed_source"};
  for (const auto& [key, value] : kv) {
    (void)value;
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw IoError("thresholds file: unknown key '" + key + "'");
  }

  const auto has = [&](const char* k) { return kv.count(k) != 0; };
  const auto require_pair = [&](const char* a, const char* b) {
    if (has(a) != has(b))
      throw IoError(std::string("thresholds file: '") + a + "' and '" + b +
                    "' must appear together");
    return has(a);
  };

  if (!has("config_hash"))
    throw IoError("thresholds file: missing config_hash");

  Thresholds t;
  try {
    t.config_hash = std::stoull(kv.at("config_hash"));
  } catch (const std::exception&) {
    throw IoError("thresholds file: invalid config_hash '" +
                  kv.at("config_hash") + "'");
  }

  if (require_pair("bce_p98", "kld_p98")) {
    t.has_p98 = true;
    t.bce_p98 = parse_real("bce_p98", kv.at("bce_p98"));
    t.kld_p98 = parse_real("kld_p98", kv.at("kld_p98"));
  }
  if (require_pair("bce_max", "kld_max")) {
    t.has_max = true;
    t.bce_max = parse_real("bce_max", kv.at("bce_max"));
    t.kld_max = parse_real("kld_max", kv.at("kld_max"));
  }
  if (require_pair("bce_divergence", "kld_divergence")) {
    t.has_divergence = true;
    t.bce_divergence = parse_real("bce_divergence", kv.at("bce_divergence"));
    t.kld_divergence = parse_real("kld_divergence", kv.at("kld_divergence"));
    if (!require_pair("bce_divergence_fallback", "kld_divergence_fallback"))
      throw IoError(
          "thresholds file: divergence values require their fallback flags");
    t.bce_divergence_fallback =
        parse_flag("bce_divergence_fallback", kv.at("bce_divergence_fallback"));
    t.kld_divergence_fallback =
        parse_flag("kld_divergence_fallback", kv.at("kld_divergence_fallback"));
  } else if (has("bce_divergence_fallback") ||
             has("kld_divergence_fallback")) {
    throw IoError(
        "thresholds file: fallback flags without divergence values");
  }

  if (has("bg_source")) t.bg_source = kv.at("bg_source");
  if (has("mixed_source")) t.mixed_source = kv.at("mixed_source");
  return t;
}

void write_thresholds(const std::filesystem::path& path, const Thresholds& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string text = render_thresholds(t);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Thresholds read_thresholds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  try {
    return parse_thresholds(buf.str());
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " in '" + path.string() + "'");
  }
}

} // namespace spadvae
