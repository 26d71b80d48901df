// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "icem/common.hpp"
#include "icem/dataio.hpp"
#include "icem/features.hpp"

namespace icem::pipeline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt10(double v) {
  char b[40];
  std::snprintf(b, sizeof(b), "%.10g", v);
  return b;
}

std::string comp_label(int i) {
  char b[16];
  std::snprintf(b, sizeof(b), "comp_%03d", i);
  return b;
}

std::vector<std::string> comp_labels(Eigen::Index k) {
  std::vector<std::string> n(static_cast<size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) n[static_cast<size_t>(i)] = comp_label(static_cast<int>(i));
  return n;
}

// Content digest of an artifact including its companion files (.raw body,
// .json sidecar) when present.
uint64_t artifact_digest(const std::string& path) {
  uint64_t h = digest_file(path);
  for (const char* suffix : {".raw", ".json"}) {
    const std::string side = path + suffix;
    if (fs::exists(side)) {
      Fnv f;
      f.u64(h);
      f.u64(digest_file(side));
      h = f.h;
    }
  }
  return h;
}

bool stage_fresh(const std::string& dir, uint64_t digest,
                 const std::vector<std::string>& outputs) {
  const std::string marker = dir + "/.stage_digest";
  if (!fs::exists(marker)) return false;
  if (read_text_file(marker) != hex64(digest) + "\n") return false;
  for (const auto& o : outputs)
    if (!fs::exists(o)) return false;
  return true;
}

void stage_begin(const std::string& dir) {
  fs::create_directories(dir);
  // a stale marker must not survive a partial rerun
  fs::remove(dir + "/.stage_digest");
}

void stage_done(const std::string& dir, uint64_t digest) {
  const std::string tmp = dir + "/.stage_digest.tmp";
  write_text_file(tmp, hex64(digest) + "\n");
  fs::rename(tmp, dir + "/.stage_digest");
}

void require_artifact(const std::string& path, const std::string& producer) {
  require(fs::exists(path), Err::MissingInput,
          path + " not found; run '" + producer + "' first");
}

// Adds a field to an existing JSON artifact (volume headers, model meta).
void stamp_json(const std::string& path, uint64_t digest) {
  json j = dataio::parse_json_file(path);
  j["config_digest"] = hex64(digest);
  dataio::write_json_file(path, j);
}

void write_tsv(const std::string& path, const Eigen::MatrixXd& m,
               const std::vector<std::string>& names, const std::vector<std::string>& comments) {
  std::string out;
  for (const auto& c : comments) out += "# " + c + "\n";
  for (size_t j = 0; j < names.size(); ++j) {
    if (j) out += '\t';
    out += names[j];
  }
  out += '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += '\t';
      out += fmt_double(m(i, j));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

std::string digest_comment(const PipelineConfig& cfg) {
  return "config_digest=" + hex64(cfg.digest);
}

// --- stage directories ---------------------------------------------------

std::string dir_synth(const PipelineConfig& c) { return c.out_dir + "/synth"; }
std::string dir_pp(const PipelineConfig& c) { return c.out_dir + "/preprocess"; }
std::string dir_ica(const PipelineConfig& c) { return c.out_dir + "/ica"; }
std::string dir_project(const PipelineConfig& c) { return c.out_dir + "/project"; }
std::string dir_features(const PipelineConfig& c) { return c.out_dir + "/features"; }
std::string dir_encode(const PipelineConfig& c) { return c.out_dir + "/encode"; }
std::string dir_permtest(const PipelineConfig& c) { return c.out_dir + "/permtest"; }
std::string dir_fdr(const PipelineConfig& c) { return c.out_dir + "/fdr"; }
std::string dir_aroma(const PipelineConfig& c) { return c.out_dir + "/aroma"; }
std::string dir_match(const PipelineConfig& c) { return c.out_dir + "/match_atlas"; }
std::string dir_fa(const PipelineConfig& c) { return c.out_dir + "/feature_analysis"; }
std::string dir_report(const PipelineConfig& c) { return c.out_dir + "/report"; }

std::string pp_path(const PipelineConfig& c, const RunRef& r, bool ica_path) {
  return dir_pp(c) + "/" + r.id + (ica_path ? ".ica.vxt" : ".enc.vxt");
}
std::string comps_path(const PipelineConfig& c, const RunRef& r) {
  return dir_project(c) + "/" + r.id + ".comps.tsv";
}
std::string raw_comps_path(const PipelineConfig& c, const RunRef& r) {
  return dir_project(c) + "/" + r.id + ".raw_comps.tsv";
}
std::string tracks_path(const PipelineConfig& c, const RunRef& r) {
  return dir_features(c) + "/" + r.id + ".tracks.tsv";
}

// --- small data helpers ---------------------------------------------------

ConfoundMatrix load_confounds(const RunRef& r, int t) {
  if (r.confounds.empty()) {
    ConfoundMatrix c;
    c.cols.resize(t, 0);
    return c;
  }
  ConfoundMatrix c = dataio::read_confounds_tsv(r.confounds);
  require(c.t() == t, Err::SizeMismatch,
          r.confounds + ": " + std::to_string(c.t()) + " rows for a run of " + std::to_string(t) +
              " volumes");
  return c;
}

VolumeSeries concat_series(const std::vector<VolumeSeries>& runs) {
  require(!runs.empty(), Err::ShapeMismatch, "no runs to concatenate");
  const uint64_t md = runs.front().mask.digest();
  Eigen::Index t = 0;
  for (const auto& r : runs) {
    require(r.mask.digest() == md, Err::MaskMismatch, "runs disagree on analysis mask");
    require(r.tr == runs.front().tr, Err::ShapeMismatch, "runs disagree on tr");
    t += r.data.rows();
  }
  VolumeSeries out;
  out.mask = runs.front().mask;
  out.tr = runs.front().tr;
  out.data.resize(t, runs.front().data.cols());
  Eigen::Index at = 0;
  for (const auto& r : runs) {
    out.data.middleRows(at, r.data.rows()) = r.data;
    at += r.data.rows();
  }
  return out;
}

Eigen::MatrixXd vstack(const std::vector<Eigen::MatrixXd>& parts) {
  require(!parts.empty(), Err::ShapeMismatch, "nothing to stack");
  Eigen::Index t = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts.front().cols(), Err::ShapeMismatch,
            "row blocks disagree on column count");
    t += p.rows();
  }
  Eigen::MatrixXd out(t, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

// Feature rows live on the raw scan grid; targets are trimmed. Cut the
// FIR-expanded design to the preprocessed window.
Eigen::MatrixXd trim_rows(const Eigen::MatrixXd& m, int head, int tail) {
  require(m.rows() > head + tail, Err::EmptyAfterTrim,
          "trim removes every row of a " + std::to_string(m.rows()) + "-row block");
  return m.middleRows(head, m.rows() - head - tail);
}

struct TracksOnDisk {
  Eigen::MatrixXd values;  // full scan grid rows
  std::vector<std::string> names;
};

TracksOnDisk load_tracks(const PipelineConfig& cfg, const RunRef& r) {
  TracksOnDisk t;
  t.values = dataio::read_matrix_tsv(tracks_path(cfg, r), &t.names);
  return t;
}

// --- SVG ------------------------------------------------------------------

constexpr const char* kPalette[5] = {"#4878a8", "#d08a42", "#7aa869", "#b34f4f", "#8064a2"};

struct SvgCanvas {
  std::string body;
  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& extra = "") {
    char b[256];
    std::snprintf(b, sizeof(b),
                  "  <rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"%s/>\n",
                  x, y, w, h, fill.c_str(), extra.c_str());
    body += b;
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke) {
    char b[256];
    std::snprintf(b, sizeof(b),
                  "  <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" "
                  "stroke-width=\"1\"/>\n",
                  x1, y1, x2, y2, stroke.c_str());
    body += b;
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "middle",
            int size = 11) {
    char b[384];
    std::snprintf(b, sizeof(b),
                  "  <text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"%d\" "
                  "text-anchor=\"%s\">%s</text>\n",
                  x, y, size, anchor.c_str(), s.c_str());
    body += b;
  }
};

struct BarStyle {
  std::string fill;
  bool flagged = false;  // drawn with a contrasting outline
};

// Single-series bar chart with optional error whiskers and per-bar styling.
void write_svg_bars(const std::string& path, const std::string& title,
                    const std::vector<std::string>& labels, const std::vector<double>& values,
                    const std::vector<BarStyle>& styles, const std::vector<double>& sds,
                    uint64_t digest) {
  const double w = 760, h = 420, x0 = 70, x1 = 740, y0 = 46, y1 = 356;
  double vmin = 0.0, vmax = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    const double sd = sds.empty() ? 0.0 : sds[i];
    vmin = std::min(vmin, values[i] - sd);
    vmax = std::max(vmax, values[i] + sd);
  }
  if (vmax - vmin < 1e-12) vmax = vmin + 1.0;
  auto ypix = [&](double v) { return y1 - (v - vmin) / (vmax - vmin) * (y1 - y0); };

  SvgCanvas c;
  c.text((x0 + x1) / 2, 24, title, "middle", 14);
  c.line(x0, y1, x1, y1, "#999999");
  c.line(x0, y0, x0, y1, "#999999");
  c.line(x0, ypix(0.0), x1, ypix(0.0), "#cccccc");
  c.text(x0 - 6, ypix(vmax) + 4, fmt10(vmax), "end");
  c.text(x0 - 6, ypix(vmin) + 4, fmt10(vmin), "end");
  c.text(x0 - 6, ypix(0.0) + 4, "0", "end");

  const size_t n = values.size();
  const double slot = (x1 - x0 - 10) / std::max<size_t>(n, 1);
  const size_t stride = n > 24 ? (n + 23) / 24 : 1;
  for (size_t i = 0; i < n; ++i) {
    const double bx = x0 + 5 + slot * static_cast<double>(i) + slot * 0.125;
    const double bw = slot * 0.75;
    const double yv = ypix(values[i]), yz = ypix(0.0);
    const std::string extra = styles[i].flagged
                                  ? " stroke=\"#b34f4f\" stroke-width=\"1.5\" "
                                    "stroke-dasharray=\"3,2\""
                                  : "";
    c.rect(bx, std::min(yv, yz), bw, std::max(std::abs(yz - yv), 0.5), styles[i].fill, extra);
    if (!sds.empty() && sds[i] > 0.0) {
      const double cx = bx + bw / 2;
      c.line(cx, ypix(values[i] - sds[i]), cx, ypix(values[i] + sds[i]), "#444444");
    }
    if (i % stride == 0) c.text(bx + bw / 2, y1 + 14, labels[i], "middle", 9);
  }

  char head[256];
  std::snprintf(head, sizeof(head),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n<!-- config_digest=%s -->\n",
                w, h, w, h, hex64(digest).c_str());
  write_text_file(path, head + c.body + "</svg>\n");
}

// Grouped bars (one cluster per group, one color per series).
void write_svg_grouped(const std::string& path, const std::string& title,
                       const std::vector<std::string>& groups,
                       const std::vector<std::string>& series,
                       const Eigen::MatrixXd& values,  // groups x series
                       uint64_t digest) {
  const double w = 760, h = 420, x0 = 70, x1 = 740, y0 = 46, y1 = 356;
  double vmin = std::min(0.0, values.minCoeff());
  double vmax = std::max(0.0, values.maxCoeff());
  if (vmax - vmin < 1e-12) vmax = vmin + 1.0;
  auto ypix = [&](double v) { return y1 - (v - vmin) / (vmax - vmin) * (y1 - y0); };

  SvgCanvas c;
  c.text((x0 + x1) / 2, 24, title, "middle", 14);
  c.line(x0, y1, x1, y1, "#999999");
  c.line(x0, y0, x0, y1, "#999999");
  c.line(x0, ypix(0.0), x1, ypix(0.0), "#cccccc");
  c.text(x0 - 6, ypix(vmax) + 4, fmt10(vmax), "end");
  c.text(x0 - 6, ypix(vmin) + 4, fmt10(vmin), "end");

  const auto ng = static_cast<size_t>(values.rows());
  const auto ns = static_cast<size_t>(values.cols());
  const double slot = (x1 - x0 - 10) / std::max<size_t>(ng, 1);
  for (size_t g = 0; g < ng; ++g) {
    const double gx = x0 + 5 + slot * static_cast<double>(g);
    const double bw = slot * 0.8 / static_cast<double>(ns);
    for (size_t s = 0; s < ns; ++s) {
      const double bx = gx + slot * 0.1 + bw * static_cast<double>(s);
      const double yv = ypix(values(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(s)));
      const double yz = ypix(0.0);
      c.rect(bx, std::min(yv, yz), bw * 0.92, std::max(std::abs(yz - yv), 0.5),
             kPalette[s % 5]);
    }
    c.text(gx + slot / 2, y1 + 14, groups[g], "middle", 10);
  }
  for (size_t s = 0; s < ns; ++s) {
    const double lx = x1 - 150;
    const double ly = y0 + 16 * static_cast<double>(s);
    c.rect(lx, ly - 8, 10, 10, kPalette[s % 5]);
    c.text(lx + 16, ly + 1, series[s], "start", 10);
  }

  char head[256];
  std::snprintf(head, sizeof(head),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n<!-- config_digest=%s -->\n",
                w, h, w, h, hex64(digest).c_str());
  write_text_file(path, head + c.body + "</svg>\n");
}

}  // namespace

// --- config ----------------------------------------------------------------

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  c.raw = j;
  c.out_dir = j.value("out", std::string("out"));
  c.seed = j.value("seed", static_cast<uint64_t>(0));
  c.jobs = j.value("jobs", 1);
  require(c.jobs >= 1, Err::Config, "config field 'jobs': must be >= 1");

  if (j.contains("synth")) {
    c.has_synth = true;
    json js = j.at("synth");
    if (!js.contains("seed")) js["seed"] = c.seed;
    c.synth_spec = synth::SynthSpec::from_json(js);
    c.synth_subject = js.value("subject", std::string("sub000"));
  } else if (j.contains("paths")) {
    const auto& p = j.at("paths");
    auto parse_runs = [&p](const char* key, std::vector<RunRef>& out, bool need_words) {
      if (!p.contains(key)) return;
      for (const auto& r : p.at(key)) {
        RunRef ref;
        ref.id = r.at("id").get<std::string>();
        ref.series = r.at("series").get<std::string>();
        ref.confounds = r.value("confounds", std::string());
        ref.words = r.value("words", std::string());
        ref.embeddings = r.value("embeddings", std::string());
        if (need_words)
          require(!ref.words.empty(), Err::Config,
                  std::string("config field 'paths.") + key + "': run '" + ref.id +
                      "' needs a word table");
        out.push_back(std::move(ref));
      }
    };
    parse_runs("est_runs", c.est, false);
    parse_runs("train_runs", c.train, true);
    parse_runs("test_runs", c.test, true);
    if (p.contains("atlas")) {
      c.atlas_volume = p.at("atlas").value("volume", std::string());
      c.atlas_names_path = p.at("atlas").value("names", std::string());
    }
    c.csf_mask_path = p.value("csf_mask", std::string());
  }

  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    if (p.contains("ica")) {
      const auto& b = p.at("ica");
      c.ica_path.trim_head = b.value("trim_head", c.ica_path.trim_head);
      c.ica_path.trim_tail = b.value("trim_tail", c.ica_path.trim_tail);
      c.ica_path.detrend = b.value("detrend", c.ica_path.detrend);
      c.ica_path.band_low = b.value("band_low", c.ica_path.band_low);
      c.ica_path.band_high = b.value("band_high", c.ica_path.band_high);
      c.ica_path.band_order = b.value("band_order", c.ica_path.band_order);
      c.ica_path.fwhm_mm = b.value("fwhm_mm", c.ica_path.fwhm_mm);
      c.ica_path.standardize = b.value("standardize", c.ica_path.standardize);
    }
    if (p.contains("encoding")) {
      const auto& b = p.at("encoding");
      c.enc_path.trim_head = b.value("trim_head", c.enc_path.trim_head);
      c.enc_path.trim_tail = b.value("trim_tail", c.enc_path.trim_tail);
      c.enc_path.detrend = b.value("detrend", c.enc_path.detrend);
      c.enc_path.standardize = b.value("standardize", c.enc_path.standardize);
    }
    c.fd_spike_threshold = p.value("fd_spike_threshold", 0.0);
  }

  if (j.contains("ica")) {
    const auto& b = j.at("ica");
    c.ica.k = b.value("k", c.ica.k);
    c.ica.seed = b.value("seed", c.seed);
    c.ica.tol = b.value("tol", c.ica.tol);
    c.ica.max_iter = b.value("max_iter", c.ica.max_iter);
  } else {
    c.ica.seed = c.seed;
  }

  if (j.contains("features")) {
    const auto& b = j.at("features");
    if (b.contains("tracks")) {
      c.use_word_rate = c.use_resid_surprisal = c.use_embeddings = false;
      for (const auto& t : b.at("tracks")) {
        const std::string name = t.get<std::string>();
        if (name == "word_rate")
          c.use_word_rate = true;
        else if (name == "resid_surprisal")
          c.use_resid_surprisal = true;
        else if (name == "embeddings")
          c.use_embeddings = true;
        else
          raise(Err::Config, "config field 'features.tracks': unknown track '" + name + "'");
      }
    }
    if (b.contains("delays")) {
      c.delays.clear();
      for (const auto& d : b.at("delays")) c.delays.push_back(d.get<int>());
    }
    c.lanczos_window = b.value("window", c.lanczos_window);
    c.surprisal_is_prob = b.value("surprisal_is_prob", c.surprisal_is_prob);
    const std::string base = b.value("log_base", std::string("e"));
    require(base == "e" || base == "2", Err::Config,
            "config field 'features.log_base': must be \"e\" or \"2\"");
    c.surprisal_log2 = base == "2";
  }

  if (j.contains("ridge")) {
    const auto& b = j.at("ridge");
    if (b.contains("alpha_grid")) {
      c.ridge.alpha_grid.clear();
      for (const auto& a : b.at("alpha_grid")) c.ridge.alpha_grid.push_back(a.get<double>());
    }
    c.ridge.folds = b.value("folds", c.ridge.folds);
    const std::string scheme = b.value("scheme", std::string("contiguous"));
    if (scheme == "contiguous")
      c.ridge.fold_scheme = encoder::FoldScheme::ContiguousBlocks;
    else if (scheme == "by_story")
      c.ridge.fold_scheme = encoder::FoldScheme::ByStory;
    else
      raise(Err::Config, "config field 'ridge.scheme': unknown scheme '" + scheme + "'");
  }

  if (j.contains("stats")) {
    const auto& b = j.at("stats");
    c.n_perm = b.value("n_perm", c.n_perm);
    c.fdr_q = b.value("q", c.fdr_q);
    c.block_len = b.value("block_len", c.block_len);
  }

  if (j.contains("matching")) {
    const auto& b = j.at("matching");
    c.match_percentile = b.value("percentile", c.match_percentile);
    c.match_weighted = b.value("weighted", c.match_weighted);
    c.matching_enabled = b.value("enabled", true);
  } else {
    c.matching_enabled = c.has_synth || !c.atlas_volume.empty();
  }

  if (j.contains("aroma")) {
    const auto& b = j.at("aroma");
    c.aroma_thr.csf = b.value("csf", c.aroma_thr.csf);
    c.aroma_thr.hfc = b.value("hfc", c.aroma_thr.hfc);
    c.aroma_thr.edge = b.value("edge", c.aroma_thr.edge);
    c.aroma_thr.motion = b.value("motion", c.aroma_thr.motion);
    c.aroma_thr.hfc_cutoff_hz = b.value("hfc_cutoff_hz", c.aroma_thr.hfc_cutoff_hz);
    c.aroma_thr.percentile = b.value("percentile", c.aroma_thr.percentile);
    if (b.contains("motion_columns")) {
      c.motion_columns.clear();
      for (const auto& m : b.at("motion_columns")) c.motion_columns.push_back(m.get<std::string>());
    }
  }

  if (j.contains("feature_analysis")) {
    const auto& b = j.at("feature_analysis");
    if (b.contains("networks")) {
      c.networks.clear();
      for (const auto& n : b.at("networks")) c.networks.push_back(n.get<std::string>());
    }
  }

  json canonical = j;
  canonical.erase("jobs");
  Fnv f;
  f.str(canonical.dump());
  c.digest = f.h;
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  return from_json(dataio::parse_json_file(path));
}

void PipelineConfig::apply_overrides(const std::optional<std::string>& out,
                                     const std::optional<uint64_t>& seed_override,
                                     const std::optional<int>& jobs_override) {
  json j = raw;
  if (out) j["out"] = *out;
  if (seed_override) j["seed"] = *seed_override;
  if (jobs_override) j["jobs"] = *jobs_override;
  *this = from_json(j);
}

void PipelineConfig::validate() const {
  require(!out_dir.empty(), Err::Config, "config field 'out': must not be empty");
  require(!has_synth || !raw.contains("paths"), Err::Config,
          "config fields 'synth' and 'paths' are mutually exclusive");
  require(!delays.empty(), Err::Config, "config field 'features.delays': must not be empty");
  for (int d : delays)
    require(d >= 1, Err::Config, "config field 'features.delays': lags must be >= 1");
  require(lanczos_window >= 1, Err::Config, "config field 'features.window': must be >= 1");
  ridge.validate();
  require(n_perm >= 1, Err::Config, "config field 'stats.n_perm': must be >= 1");
  require(fdr_q > 0.0 && fdr_q < 1.0, Err::Config,
          "config field 'stats.q': must lie strictly between 0 and 1");
  require(block_len >= 0, Err::Config, "config field 'stats.block_len': must be >= 0");
  require(match_percentile > 0.0 && match_percentile < 100.0, Err::PercentileOutOfRange,
          "config field 'matching.percentile': must lie strictly between 0 and 100");
  require(fd_spike_threshold >= 0.0, Err::Config,
          "config field 'preprocess.fd_spike_threshold': must be >= 0");
  if (!has_synth) {
    std::set<std::string> ids;
    for (const auto* grp : {&est, &train, &test})
      for (const auto& r : *grp)
        require(ids.insert(r.id).second, Err::Config,
                "config field 'paths': run id '" + r.id + "' appears in more than one split");
  }
}

// --- input resolution -------------------------------------------------------

void resolve_inputs(PipelineConfig& cfg) {
  if (cfg.has_synth) {
    const std::string bundle = dir_synth(cfg);
    Fnv f;
    f.str("synth");
    f.str(cfg.synth_spec.to_json().dump());
    const uint64_t d = f.h;
    // deleting any bundle file must trigger regeneration
    std::vector<std::string> outs = {bundle + "/manifest.json"};
    if (fs::exists(bundle + "/manifest.json")) {
      try {
        const json m = dataio::parse_json_file(bundle + "/manifest.json");
        outs.push_back(bundle + "/" + m.at("atlas").at("volume").get<std::string>());
        outs.push_back(bundle + "/" + m.at("atlas").at("names").get<std::string>());
        for (const char* key : {"est", "train", "test"})
          for (const auto& st : m.at("stories").at(key)) {
            const std::string id = st.get<std::string>();
            outs.push_back(bundle + "/stimulus/" + id + ".words.tsv");
            outs.push_back(bundle + "/stimulus/" + id + ".emb.f32");
            for (const auto& s : m.at("subjects")) {
              const std::string sub = s.get<std::string>();
              outs.push_back(bundle + "/" + sub + "/" + id + ".vxt");
              outs.push_back(bundle + "/" + sub + "/" + id + ".confounds.tsv");
            }
          }
      } catch (const std::exception&) {
        outs.push_back(bundle + "/.force_regen");  // unparseable manifest: rebuild
      }
    }
    if (stage_fresh(bundle, d, outs)) {
      logging::info("synth: cache hit");
    } else {
      stage_begin(bundle);
      synth::generate(cfg.synth_spec, bundle);
      stage_done(bundle, d);
      logging::info("synth: bundle written to " + bundle);
    }
    const json manifest = dataio::parse_json_file(bundle + "/manifest.json");
    bool have_subject = false;
    for (const auto& s : manifest.at("subjects"))
      have_subject = have_subject || s.get<std::string>() == cfg.synth_subject;
    require(have_subject, Err::Config,
            "config field 'synth.subject': '" + cfg.synth_subject + "' is not in the bundle");
    cfg.est.clear();
    cfg.train.clear();
    cfg.test.clear();
    auto fill = [&](const char* key, std::vector<RunRef>& out) {
      for (const auto& s : manifest.at("stories").at(key)) {
        const std::string id = s.get<std::string>();
        RunRef r;
        r.id = id;
        r.series = bundle + "/" + cfg.synth_subject + "/" + id + ".vxt";
        r.confounds = bundle + "/" + cfg.synth_subject + "/" + id + ".confounds.tsv";
        r.words = bundle + "/stimulus/" + id + ".words.tsv";
        r.embeddings = bundle + "/stimulus/" + id + ".emb.f32";
        out.push_back(std::move(r));
      }
    };
    fill("est", cfg.est);
    fill("train", cfg.train);
    fill("test", cfg.test);
    cfg.atlas_volume = bundle + "/" + manifest.at("atlas").at("volume").get<std::string>();
    cfg.atlas_names_path = bundle + "/" + manifest.at("atlas").at("names").get<std::string>();
  }

  require(!cfg.est.empty(), Err::Config, "config field 'paths.est_runs': at least one run needed");
  require(!cfg.train.empty(), Err::Config,
          "config field 'paths.train_runs': at least one run needed");
  require(!cfg.test.empty(), Err::Config,
          "config field 'paths.test_runs': at least one run needed");
  for (const auto* grp : {&cfg.est, &cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      require(fs::exists(r.series), Err::Config,
              "config field 'paths': series for run '" + r.id + "' not found: " + r.series);
      for (const std::string& p : {r.confounds, r.words, r.embeddings})
        require(p.empty() || fs::exists(p), Err::Config,
                "config field 'paths': sidecar for run '" + r.id + "' not found: " + p);
    }
  if (cfg.matching_enabled) {
    require(!cfg.atlas_volume.empty() && fs::exists(cfg.atlas_volume), Err::Config,
            "config field 'paths.atlas.volume': required when matching is enabled");
    require(!cfg.atlas_names_path.empty() && fs::exists(cfg.atlas_names_path), Err::Config,
            "config field 'paths.atlas.names': required when matching is enabled");
  }
  require(cfg.csf_mask_path.empty() || fs::exists(cfg.csf_mask_path), Err::Config,
          "config field 'paths.csf_mask': not found: " + cfg.csf_mask_path);

  fs::create_directories(cfg.out_dir);
  json meta;
  meta["format"] = "icem-run-1";
  meta["config_digest"] = hex64(cfg.digest);
  auto ids = [](const std::vector<RunRef>& v) {
    std::vector<std::string> out;
    for (const auto& r : v) out.push_back(r.id);
    return out;
  };
  meta["est_ids"] = ids(cfg.est);
  meta["train_ids"] = ids(cfg.train);
  meta["test_ids"] = ids(cfg.test);
  dataio::write_json_file(cfg.out_dir + "/run_meta.json", meta);
}

// --- stages -----------------------------------------------------------------

void stage_preprocess(const PipelineConfig& cfg) {
  const std::string dir = dir_pp(cfg);
  Fnv f;
  f.str("preprocess");
  f.str(cfg.raw.value("preprocess", json::object()).dump());
  std::vector<std::string> outputs;
  for (const auto& r : cfg.est) {
    f.u64(artifact_digest(r.series));
    if (!r.confounds.empty()) f.u64(artifact_digest(r.confounds));
    outputs.push_back(pp_path(cfg, r, true));
  }
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      f.u64(artifact_digest(r.series));
      if (!r.confounds.empty()) f.u64(artifact_digest(r.confounds));
      outputs.push_back(pp_path(cfg, r, false));
    }
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("preprocess: cache hit");
    return;
  }
  stage_begin(dir);
  for (const auto& r : cfg.est) {
    VolumeSeries s = dataio::read_volume_series(r.series);
    ConfoundMatrix c = load_confounds(r, s.t());
    if (cfg.fd_spike_threshold > 0.0) c = preprocess::add_fd_spikes(c, cfg.fd_spike_threshold);
    const VolumeSeries out = preprocess::run_ica_path(s, c, cfg.ica_path);
    dataio::write_volume_series(pp_path(cfg, r, true), out);
    stamp_json(pp_path(cfg, r, true), cfg.digest);
  }
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      VolumeSeries s = dataio::read_volume_series(r.series);
      ConfoundMatrix c = load_confounds(r, s.t());
      if (cfg.fd_spike_threshold > 0.0) c = preprocess::add_fd_spikes(c, cfg.fd_spike_threshold);
      const VolumeSeries out = preprocess::run_encoding_path(s, c, cfg.enc_path);
      dataio::write_volume_series(pp_path(cfg, r, false), out);
      stamp_json(pp_path(cfg, r, false), cfg.digest);
    }
  stage_done(dir, f.h);
  logging::info("preprocess: " +
                std::to_string(cfg.est.size() + cfg.train.size() + cfg.test.size()) +
                " runs written");
}

void stage_ica(const PipelineConfig& cfg) {
  const std::string dir = dir_ica(cfg);
  Fnv f;
  f.str("ica");
  f.str(cfg.raw.value("ica", json::object()).dump());
  f.u64(cfg.ica.seed);
  f.i64(cfg.ica.k);
  for (const auto& r : cfg.est) {
    require_artifact(pp_path(cfg, r, true), "icem preprocess");
    f.u64(artifact_digest(pp_path(cfg, r, true)));
  }
  const std::vector<std::string> outputs = {dir + "/model.sources.vxt", dir + "/model.means.vxt",
                                            dir + "/model.meta.json"};
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("ica: cache hit");
    return;
  }
  stage_begin(dir);
  std::vector<VolumeSeries> runs;
  for (const auto& r : cfg.est) runs.push_back(dataio::read_volume_series(pp_path(cfg, r, true)));
  const VolumeSeries est = concat_series(runs);
  ica::IcaModel model = ica::fit_ica(est, cfg.ica);
  model = ica::sign_align(model);
  ica::save_model(dir + "/model", model);
  stamp_json(dir + "/model.meta.json", cfg.digest);
  stamp_json(dir + "/model.sources.vxt", cfg.digest);
  stamp_json(dir + "/model.means.vxt", cfg.digest);
  stage_done(dir, f.h);
  logging::info("ica: fit k=" + std::to_string(model.k) + " on " + std::to_string(est.t()) +
                " volumes");
}

void stage_project(const PipelineConfig& cfg) {
  const std::string dir = dir_project(cfg);
  require_artifact(dir_ica(cfg) + "/model.meta.json", "icem ica-fit");
  Fnv f;
  f.str("project");
  f.u64(artifact_digest(dir_ica(cfg) + "/model.sources.vxt"));
  f.u64(artifact_digest(dir_ica(cfg) + "/model.means.vxt"));
  std::vector<std::string> outputs;
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      require_artifact(pp_path(cfg, r, false), "icem preprocess");
      f.u64(artifact_digest(pp_path(cfg, r, false)));
      outputs.push_back(comps_path(cfg, r));
    }
  for (const auto& r : cfg.est) {
    f.u64(artifact_digest(r.series));
    outputs.push_back(raw_comps_path(cfg, r));
  }
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("project: cache hit");
    return;
  }
  stage_begin(dir);
  const ica::IcaModel model = ica::load_model(dir_ica(cfg) + "/model");
  const auto names = comp_labels(model.k);
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      const VolumeSeries s = dataio::read_volume_series(pp_path(cfg, r, false));
      const ica::ComponentSeries cs = ica::project(model, s, r.id);
      write_tsv(comps_path(cfg, r), cs.series, names,
                {digest_comment(cfg), "model_digest=" + hex64(cs.model_digest), "run_id=" + r.id,
                 "tr=" + fmt_double(cs.tr)});
    }
  for (const auto& r : cfg.est) {
    VolumeSeries s = dataio::read_volume_series(r.series);
    if (s.mask.digest() != model.mask.digest()) s = dataio::apply_mask(s, model.mask);
    const ica::ComponentSeries cs = ica::project(model, s, r.id + ".raw");
    write_tsv(raw_comps_path(cfg, r), cs.series, names,
              {digest_comment(cfg), "model_digest=" + hex64(cs.model_digest),
               "run_id=" + r.id + ".raw", "tr=" + fmt_double(cs.tr)});
  }
  stage_done(dir, f.h);
  logging::info("project: component series written");
}

namespace {

// Track matrix for one run on its raw scan grid.
TracksOnDisk build_tracks(const PipelineConfig& cfg, const RunRef& r) {
  require(!r.words.empty(), Err::Config,
          "config field 'paths': run '" + r.id + "' needs a word table for features");
  const WordTable words = dataio::read_word_table_tsv(r.words);
  const json hdr = dataio::parse_json_file(r.series);
  const int n_trs = hdr.at("t").get<int>();
  const double tr = hdr.at("tr").get<double>();

  const Eigen::VectorXd rate = features::word_rate(words, tr, n_trs);
  const auto n = static_cast<Eigen::Index>(words.words.size());
  Eigen::VectorXd mid(n);
  for (Eigen::Index i = 0; i < n; ++i) mid[i] = words.words[static_cast<size_t>(i)].midpoint();

  TracksOnDisk out;
  std::vector<Eigen::VectorXd> cols;
  if (cfg.use_word_rate) {
    out.names.push_back("word_rate");
    cols.push_back(rate);
  }
  if (cfg.use_resid_surprisal) {
    require(words.has_surprisal, Err::Config,
            "config field 'features.tracks': run '" + r.id +
                "' has no surprisal column in its word table");
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = words.words[static_cast<size_t>(i)].surprisal;
      s[i] = cfg.surprisal_is_prob ? features::surprisal_from_prob(v, cfg.surprisal_log2) : v;
    }
    const Eigen::VectorXd track =
        features::lanczos_resample(mid, s, tr, n_trs, cfg.lanczos_window).col(0);
    out.names.push_back("resid_surprisal");
    cols.push_back(features::residualize(track, rate));
  }
  if (cfg.use_embeddings) {
    require(!r.embeddings.empty(), Err::Config,
            "config field 'paths': run '" + r.id + "' needs embeddings for features");
    const EmbeddingTable emb = dataio::read_embeddings(r.embeddings);
    require(emb.n_words() == static_cast<int>(n), Err::SizeMismatch,
            r.embeddings + ": " + std::to_string(emb.n_words()) + " embedding rows for " +
                std::to_string(n) + " words");
    const Eigen::MatrixXd tracks =
        features::lanczos_resample(mid, emb.rows, tr, n_trs, cfg.lanczos_window);
    for (Eigen::Index jcol = 0; jcol < tracks.cols(); ++jcol) {
      out.names.push_back("emb" + std::to_string(jcol));
      cols.push_back(tracks.col(jcol));
    }
  }
  require(!cols.empty(), Err::Config, "config field 'features.tracks': no tracks enabled");
  out.values.resize(n_trs, static_cast<Eigen::Index>(cols.size()));
  for (size_t jcol = 0; jcol < cols.size(); ++jcol)
    out.values.col(static_cast<Eigen::Index>(jcol)) = cols[jcol];
  return out;
}

}  // namespace

void stage_features(const PipelineConfig& cfg) {
  const std::string dir = dir_features(cfg);
  Fnv f;
  f.str("features");
  f.str(cfg.raw.value("features", json::object()).dump());
  std::vector<std::string> outputs;
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      f.u64(artifact_digest(r.words));
      if (!r.embeddings.empty()) f.u64(artifact_digest(r.embeddings));
      f.u64(artifact_digest(r.series));
      outputs.push_back(tracks_path(cfg, r));
    }
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("features: cache hit");
    return;
  }
  stage_begin(dir);
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      const TracksOnDisk t = build_tracks(cfg, r);
      write_tsv(tracks_path(cfg, r), t.values, t.names,
                {digest_comment(cfg), "run_id=" + r.id});
    }
  stage_done(dir, f.h);
  logging::info("features: stimulus tracks written");
}

namespace {

struct EncodingData {
  Eigen::MatrixXd x_train, y_train, x_test, y_test;
  Eigen::MatrixXd pre_fir_train;  // trimmed, before lag expansion
  std::vector<int> story_ids;
  std::vector<std::string> track_names;
  std::vector<std::string> comp_names;
};

EncodingData load_encoding_data(const PipelineConfig& cfg) {
  EncodingData d;
  std::vector<Eigen::MatrixXd> xs, ys, pre;
  int story = 0;
  for (const auto& r : cfg.train) {
    require_artifact(tracks_path(cfg, r), "icem features");
    require_artifact(comps_path(cfg, r), "icem project");
    const TracksOnDisk t = load_tracks(cfg, r);
    d.track_names = t.names;
    const Eigen::MatrixXd comps = dataio::read_matrix_tsv(comps_path(cfg, r), &d.comp_names);
    const Eigen::MatrixXd design =
        trim_rows(features::fir_expand(t.values, cfg.delays), cfg.enc_path.trim_head,
                  cfg.enc_path.trim_tail);
    require(design.rows() == comps.rows(), Err::ShapeMismatch,
            "run '" + r.id + "': design rows (" + std::to_string(design.rows()) +
                ") disagree with component rows (" + std::to_string(comps.rows()) +
                "); check trim settings");
    xs.push_back(design);
    ys.push_back(comps);
    pre.push_back(trim_rows(t.values, cfg.enc_path.trim_head, cfg.enc_path.trim_tail));
    for (Eigen::Index i = 0; i < design.rows(); ++i) d.story_ids.push_back(story);
    ++story;
  }
  d.x_train = vstack(xs);
  d.y_train = vstack(ys);
  d.pre_fir_train = vstack(pre);

  std::vector<Eigen::MatrixXd> xt, yt;
  for (const auto& r : cfg.test) {
    require_artifact(tracks_path(cfg, r), "icem features");
    require_artifact(comps_path(cfg, r), "icem project");
    const TracksOnDisk t = load_tracks(cfg, r);
    const Eigen::MatrixXd comps = dataio::read_matrix_tsv(comps_path(cfg, r), nullptr);
    const Eigen::MatrixXd design =
        trim_rows(features::fir_expand(t.values, cfg.delays), cfg.enc_path.trim_head,
                  cfg.enc_path.trim_tail);
    require(design.rows() == comps.rows(), Err::ShapeMismatch,
            "run '" + r.id + "': test design rows disagree with component rows");
    xt.push_back(design);
    yt.push_back(comps);
  }
  d.x_test = vstack(xt);
  d.y_test = vstack(yt);
  return d;
}

std::vector<std::string> encode_inputs(const PipelineConfig& cfg, Fnv& f) {
  std::vector<std::string> ins;
  for (const auto* grp : {&cfg.train, &cfg.test})
    for (const auto& r : *grp) {
      ins.push_back(tracks_path(cfg, r));
      ins.push_back(comps_path(cfg, r));
    }
  for (const auto& p : ins)
    if (fs::exists(p)) f.u64(artifact_digest(p));
  return ins;
}

}  // namespace

void stage_encode(const PipelineConfig& cfg) {
  const std::string dir = dir_encode(cfg);
  Fnv f;
  f.str("encode");
  f.str(cfg.raw.value("ridge", json::object()).dump());
  f.str(cfg.raw.value("features", json::object()).dump());
  encode_inputs(cfg, f);
  const std::vector<std::string> outputs = {dir + "/model.weights.tsv", dir + "/model.meta.json",
                                            dir + "/test_r.tsv", dir + "/test_pred.tsv"};
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("encode: cache hit");
    return;
  }
  stage_begin(dir);
  const EncodingData d = load_encoding_data(cfg);
  const encoder::EncodingModel model =
      encoder::fit_ridge(d.x_train, d.y_train, cfg.ridge, cfg.seed, d.story_ids);
  encoder::save_encoding_model(dir + "/model", model,
                               features::fir_names(d.track_names, cfg.delays), d.comp_names);
  stamp_json(dir + "/model.meta.json", cfg.digest);

  const Eigen::MatrixXd pred = encoder::predict(model, d.x_test);
  Eigen::MatrixXd test_r(1, pred.cols());
  for (Eigen::Index jcol = 0; jcol < pred.cols(); ++jcol)
    test_r(0, jcol) = stats::pearson_or_zero(pred.col(jcol), d.y_test.col(jcol));
  write_tsv(dir + "/test_pred.tsv", pred, d.comp_names, {digest_comment(cfg)});
  write_tsv(dir + "/test_r.tsv", test_r, d.comp_names, {digest_comment(cfg)});
  stage_done(dir, f.h);
  logging::info("encode: held-out predictivity written");
}

void stage_permtest(const PipelineConfig& cfg) {
  const std::string dir = dir_permtest(cfg);
  Fnv f;
  f.str("permtest");
  f.str(cfg.raw.value("stats", json::object()).dump());
  f.str(cfg.raw.value("ridge", json::object()).dump());
  f.u64(cfg.seed);
  encode_inputs(cfg, f);
  const std::vector<std::string> outputs = {dir + "/perm.tsv", dir + "/null_r.tsv"};
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("permtest: cache hit");
    return;
  }
  stage_begin(dir);
  const EncodingData d = load_encoding_data(cfg);
  stats::PermSpec ps;
  ps.n_perm = cfg.n_perm;
  ps.seed = cfg.seed;
  ps.block_len = cfg.block_len;
  ps.delays = cfg.delays;
  ps.jobs = cfg.jobs;
  const stats::PermResult res =
      stats::permutation_test(d.pre_fir_train, d.y_train, cfg.ridge, ps, d.story_ids);

  Eigen::MatrixXd table(res.observed.size(), 4);
  for (Eigen::Index i = 0; i < res.observed.size(); ++i) {
    table(i, 0) = static_cast<double>(i);
    table(i, 1) = res.observed[i];
    table(i, 2) = res.p[i];
    table(i, 3) = res.alpha[i];
  }
  write_tsv(dir + "/perm.tsv", table, {"component", "observed", "p", "alpha"},
            {digest_comment(cfg), "n_perm=" + std::to_string(cfg.n_perm)});
  write_tsv(dir + "/null_r.tsv", res.null_r, d.comp_names, {digest_comment(cfg)});
  stage_done(dir, f.h);
  logging::info("permtest: " + std::to_string(cfg.n_perm) + " draws scored");
}

void stage_fdr(const PipelineConfig& cfg) {
  const std::string dir = dir_fdr(cfg);
  require_artifact(dir_permtest(cfg) + "/perm.tsv", "icem permtest");
  Fnv f;
  f.str("fdr");
  f.f64(cfg.fdr_q);
  f.u64(artifact_digest(dir_permtest(cfg) + "/perm.tsv"));
  if (stage_fresh(dir, f.h, {dir + "/fdr.tsv"})) {
    logging::info("fdr: cache hit");
    return;
  }
  stage_begin(dir);
  const Eigen::MatrixXd perm = dataio::read_matrix_tsv(dir_permtest(cfg) + "/perm.tsv", nullptr);
  std::vector<double> p(static_cast<size_t>(perm.rows()));
  for (Eigen::Index i = 0; i < perm.rows(); ++i) p[static_cast<size_t>(i)] = perm(i, 2);
  const auto sig = stats::bh_fdr(p, cfg.fdr_q);
  Eigen::MatrixXd table(perm.rows(), 3);
  for (Eigen::Index i = 0; i < perm.rows(); ++i) {
    table(i, 0) = static_cast<double>(i);
    table(i, 1) = p[static_cast<size_t>(i)];
    table(i, 2) = static_cast<double>(sig[static_cast<size_t>(i)]);
  }
  write_tsv(dir + "/fdr.tsv", table, {"component", "p", "significant"},
            {digest_comment(cfg), "q=" + fmt_double(cfg.fdr_q)});
  stage_done(dir, f.h);
  logging::info("fdr: decisions written");
}

void stage_aroma(const PipelineConfig& cfg) {
  const std::string dir = dir_aroma(cfg);
  require_artifact(dir_ica(cfg) + "/model.meta.json", "icem ica-fit");
  Fnv f;
  f.str("aroma");
  f.str(cfg.raw.value("aroma", json::object()).dump());
  f.u64(artifact_digest(dir_ica(cfg) + "/model.sources.vxt"));
  for (const auto& r : cfg.est) {
    require_artifact(raw_comps_path(cfg, r), "icem project");
    f.u64(artifact_digest(raw_comps_path(cfg, r)));
    if (!r.confounds.empty()) f.u64(artifact_digest(r.confounds));
  }
  if (!cfg.csf_mask_path.empty()) f.u64(artifact_digest(cfg.csf_mask_path));
  if (stage_fresh(dir, f.h, {dir + "/aroma.tsv"})) {
    logging::info("aroma: cache hit");
    return;
  }
  stage_begin(dir);
  const ica::IcaModel model = ica::load_model(dir_ica(cfg) + "/model");

  // component series on the unregressed estimation runs: motion coupling
  // must still be visible here
  std::vector<Eigen::MatrixXd> series_parts, motion_parts;
  double tr = 0.0;
  std::vector<std::string> motion_names;
  for (const auto& r : cfg.est) {
    series_parts.push_back(dataio::read_matrix_tsv(raw_comps_path(cfg, r), nullptr));
    const json hdr = dataio::parse_json_file(r.series);
    tr = hdr.at("tr").get<double>();
    Eigen::MatrixXd mot(series_parts.back().rows(),
                        static_cast<Eigen::Index>(cfg.motion_columns.size()));
    Eigen::Index found = 0;
    motion_names.clear();
    if (!r.confounds.empty()) {
      const ConfoundMatrix c = dataio::read_confounds_tsv(r.confounds);
      for (const auto& want : cfg.motion_columns)
        for (size_t jc = 0; jc < c.names.size(); ++jc)
          if (c.names[jc] == want) {
            mot.col(found++) = c.cols.col(static_cast<Eigen::Index>(jc));
            motion_names.push_back(want);
          }
    }
    motion_parts.push_back(mot.leftCols(found));
  }
  if (motion_names.size() < cfg.motion_columns.size())
    logging::warn("aroma: only " + std::to_string(motion_names.size()) + " of " +
                  std::to_string(cfg.motion_columns.size()) + " motion regressors found");

  ica::ComponentSeries cs;
  cs.series = vstack(series_parts);
  cs.tr = tr;
  cs.model_digest = model.digest();
  ConfoundMatrix motion;
  motion.names = motion_names;
  motion.cols = motion_parts.size() == 1 ? motion_parts[0] : vstack(motion_parts);

  const Mask edge = aroma::edge_mask_from(model.mask);
  Mask csf;
  const Mask* csf_ptr = nullptr;
  if (!cfg.csf_mask_path.empty()) {
    csf = dataio::mask_from_volume(dataio::read_volume_series(cfg.csf_mask_path));
    csf_ptr = &csf;
  }
  const auto feats = aroma::component_features(model, cs, edge, csf_ptr, motion, cfg.aroma_thr);
  const auto labels = aroma::classify_all(feats, cfg.aroma_thr);

  Eigen::MatrixXd table(static_cast<Eigen::Index>(feats.size()), 6);
  for (size_t i = 0; i < feats.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    table(row, 0) = static_cast<double>(i);
    table(row, 1) = feats[i].hfc;
    table(row, 2) = feats[i].edge_frac;
    table(row, 3) = feats[i].csf_frac;
    table(row, 4) = feats[i].motion_corr;
    table(row, 5) = labels[i] == aroma::Label::Noise ? 1.0 : 0.0;
  }
  write_tsv(dir + "/aroma.tsv", table,
            {"component", "hfc", "edge_frac", "csf_frac", "motion_corr", "noise"},
            {digest_comment(cfg)});
  stage_done(dir, f.h);
  logging::info("aroma: component labels written");
}

void stage_match_atlas(const PipelineConfig& cfg) {
  require(cfg.matching_enabled, Err::Config,
          "config field 'matching.enabled': matching is disabled");
  const std::string dir = dir_match(cfg);
  require_artifact(dir_ica(cfg) + "/model.meta.json", "icem ica-fit");
  Fnv f;
  f.str("match_atlas");
  f.str(cfg.raw.value("matching", json::object()).dump());
  f.u64(artifact_digest(dir_ica(cfg) + "/model.sources.vxt"));
  f.u64(artifact_digest(cfg.atlas_volume));
  f.u64(artifact_digest(cfg.atlas_names_path));
  const std::vector<std::string> outputs = {dir + "/match.tsv", dir + "/parcel_view.tsv",
                                            dir + "/match_atlas.csv"};
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("match-atlas: cache hit");
    return;
  }
  stage_begin(dir);
  const ica::IcaModel model = ica::load_model(dir_ica(cfg) + "/model");
  const Atlas atlas = dataio::read_atlas(cfg.atlas_volume, cfg.atlas_names_path);
  const matching::AtlasMatch am =
      matching::match_atlas(model, atlas, cfg.match_percentile, cfg.match_weighted);

  const auto k = static_cast<Eigen::Index>(am.best_parcel.size());
  Eigen::MatrixXd table(k, 5);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto s = static_cast<size_t>(i);
    table(i, 0) = static_cast<double>(i);
    table(i, 1) = static_cast<double>(am.best_parcel[s]);
    table(i, 2) = am.best_r[s];
    table(i, 3) = static_cast<double>(am.low_confidence[s]);
    table(i, 4) = static_cast<double>(am.tied[s]);
  }
  write_tsv(dir + "/match.tsv", table,
            {"component", "parcel", "r", "low_confidence", "tied"}, {digest_comment(cfg)});

  Eigen::MatrixXd pview(static_cast<Eigen::Index>(am.parcel_best_component.size()), 3);
  for (size_t p = 0; p < am.parcel_best_component.size(); ++p) {
    const auto row = static_cast<Eigen::Index>(p);
    pview(row, 0) = static_cast<double>(p);
    pview(row, 1) = static_cast<double>(am.parcel_best_component[p]);
    pview(row, 2) = am.parcel_best_r[p];
  }
  write_tsv(dir + "/parcel_view.tsv", pview, {"parcel", "best_component", "r"},
            {digest_comment(cfg)});

  std::string csv = "# " + digest_comment(cfg) + "\n";
  csv += "component,parcel,r,low_confidence,tied\n";
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto s = static_cast<size_t>(i);
    csv += comp_label(static_cast<int>(i)) + std::string(",") +
           atlas.names[static_cast<size_t>(am.best_parcel[s])] + "," + fmt10(am.best_r[s]) + "," +
           std::to_string(am.low_confidence[s]) + "," + std::to_string(am.tied[s]) + "\n";
  }
  write_text_file(dir + "/match_atlas.csv", csv);
  stage_done(dir, f.h);
  logging::info("match-atlas: assignments written");
}

void stage_feature_analysis(const PipelineConfig& cfg) {
  require(cfg.matching_enabled, Err::Config,
          "config field 'matching.enabled': feature analysis needs atlas matching");
  require(cfg.use_word_rate && cfg.use_resid_surprisal, Err::Config,
          "config field 'features.tracks': feature analysis needs word_rate and "
          "resid_surprisal tracks");
  const std::string dir = dir_fa(cfg);
  require_artifact(dir_match(cfg) + "/parcel_view.tsv", "icem match-atlas");
  Fnv f;
  f.str("feature_analysis");
  for (const auto& n : cfg.networks) f.str(n);
  f.u64(artifact_digest(dir_match(cfg) + "/parcel_view.tsv"));
  encode_inputs(cfg, f);
  const std::vector<std::string> outputs = {dir + "/feature_analysis.tsv",
                                            dir + "/feature_analysis.csv"};
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("feature-analysis: cache hit");
    return;
  }
  stage_begin(dir);
  const Atlas atlas = dataio::read_atlas(cfg.atlas_volume, cfg.atlas_names_path);
  const Eigen::MatrixXd pview =
      dataio::read_matrix_tsv(dir_match(cfg) + "/parcel_view.tsv", nullptr);
  const EncodingData d = load_encoding_data(cfg);

  int i_rate = -1, i_resid = -1;
  for (size_t i = 0; i < d.track_names.size(); ++i) {
    if (d.track_names[i] == "word_rate") i_rate = static_cast<int>(i);
    if (d.track_names[i] == "resid_surprisal") i_resid = static_cast<int>(i);
  }
  require(i_rate >= 0 && i_resid >= 0, Err::Config,
          "feature analysis needs word_rate and resid_surprisal in the track set");

  // full-grid tracks per run so single-feature designs get the same
  // lag expansion and trim as the joint model
  std::vector<Eigen::MatrixXd> train_tracks, test_tracks;
  for (const auto& r : cfg.train) train_tracks.push_back(load_tracks(cfg, r).values);
  for (const auto& r : cfg.test) test_tracks.push_back(load_tracks(cfg, r).values);
  auto single_design = [&](const std::vector<Eigen::MatrixXd>& runs, int track) {
    std::vector<Eigen::MatrixXd> parts;
    for (const auto& t : runs)
      parts.push_back(trim_rows(features::fir_expand(t.col(track), cfg.delays),
                                cfg.enc_path.trim_head, cfg.enc_path.trim_tail));
    return vstack(parts);
  };

  struct Row {
    std::string network;
    int component;
    double r_rate, r_resid;
  };
  std::vector<Row> rows;
  for (const auto& net : cfg.networks) {
    int parcel = -1;
    for (size_t p = 0; p < atlas.names.size(); ++p)
      if (atlas.names[p] == net) parcel = static_cast<int>(p);
    require(parcel >= 0, Err::NetworkUnresolved,
            "network '" + net + "' is not a parcel of the atlas");
    require(parcel < pview.rows(), Err::NetworkUnresolved,
            "network '" + net + "' has no entry in the parcel view");
    const int comp = static_cast<int>(pview(parcel, 1));
    require(comp >= 0 && comp < d.y_train.cols(), Err::NetworkUnresolved,
            "network '" + net + "' resolved to an invalid component");

    Row row;
    row.network = net;
    row.component = comp;
    for (int which = 0; which < 2; ++which) {
      const int track = which == 0 ? i_rate : i_resid;
      const Eigen::MatrixXd design_tr = single_design(train_tracks, track);
      const Eigen::MatrixXd yt = d.y_train.col(comp);
      const encoder::EncodingModel m =
          encoder::fit_ridge(design_tr, yt, cfg.ridge, cfg.seed, d.story_ids);
      const Eigen::MatrixXd x_te = single_design(test_tracks, track);
      const Eigen::VectorXd pred = encoder::predict(m, x_te).col(0);
      const double r = stats::pearson_or_zero(pred, d.y_test.col(comp));
      if (which == 0)
        row.r_rate = r;
      else
        row.r_resid = r;
    }
    rows.push_back(row);
  }

  Eigen::MatrixXd table(static_cast<Eigen::Index>(rows.size()), 3);
  for (size_t i = 0; i < rows.size(); ++i) {
    table(static_cast<Eigen::Index>(i), 0) = rows[i].component;
    table(static_cast<Eigen::Index>(i), 1) = rows[i].r_rate;
    table(static_cast<Eigen::Index>(i), 2) = rows[i].r_resid;
  }
  write_tsv(dir + "/feature_analysis.tsv", table,
            {"component", "word_rate_r", "resid_surprisal_r"}, {digest_comment(cfg)});

  std::string csv = "# " + digest_comment(cfg) + "\n";
  csv += "network,component,feature,r\n";
  for (const auto& row : rows) {
    csv += row.network + "," + comp_label(row.component) + ",word_rate," + fmt10(row.r_rate) + "\n";
    csv += row.network + "," + comp_label(row.component) + ",resid_surprisal," +
           fmt10(row.r_resid) + "\n";
  }
  write_text_file(dir + "/feature_analysis.csv", csv);
  stage_done(dir, f.h);
  logging::info("feature-analysis: network report written");
}

void stage_report(const PipelineConfig& cfg) {
  const std::string dir = dir_report(cfg);
  require_artifact(dir_encode(cfg) + "/test_r.tsv", "icem encode");
  require_artifact(dir_permtest(cfg) + "/perm.tsv", "icem permtest");
  require_artifact(dir_fdr(cfg) + "/fdr.tsv", "icem fdr");
  require_artifact(dir_aroma(cfg) + "/aroma.tsv", "icem aroma");

  Fnv f;
  f.str("report");
  for (const std::string& p :
       {dir_encode(cfg) + "/test_r.tsv", dir_permtest(cfg) + "/perm.tsv",
        dir_fdr(cfg) + "/fdr.tsv", dir_aroma(cfg) + "/aroma.tsv"})
    f.u64(artifact_digest(p));
  const bool with_match = cfg.matching_enabled && fs::exists(dir_match(cfg) + "/match.tsv");
  const bool with_fa = fs::exists(dir_fa(cfg) + "/feature_analysis.tsv");
  if (with_match) f.u64(artifact_digest(dir_match(cfg) + "/match.tsv"));
  if (with_fa) f.u64(artifact_digest(dir_fa(cfg) + "/feature_analysis.tsv"));
  std::vector<std::string> outputs = {dir + "/predictivity.csv", dir + "/summary.json",
                                      dir + "/predictivity.svg"};
  if (stage_fresh(dir, f.h, outputs)) {
    logging::info("report: cache hit");
    return;
  }
  stage_begin(dir);

  std::vector<std::string> comp_names;
  const Eigen::MatrixXd test_r = dataio::read_matrix_tsv(dir_encode(cfg) + "/test_r.tsv",
                                                         &comp_names);
  const Eigen::MatrixXd perm = dataio::read_matrix_tsv(dir_permtest(cfg) + "/perm.tsv", nullptr);
  const Eigen::MatrixXd fdr = dataio::read_matrix_tsv(dir_fdr(cfg) + "/fdr.tsv", nullptr);
  const Eigen::MatrixXd ar = dataio::read_matrix_tsv(dir_aroma(cfg) + "/aroma.tsv", nullptr);
  const auto k = test_r.cols();
  require(perm.rows() == k && fdr.rows() == k && ar.rows() == k, Err::ShapeMismatch,
          "stage artifacts disagree on component count");

  Eigen::MatrixXd match;
  std::vector<std::string> parcel_names;
  if (with_match) {
    match = dataio::read_matrix_tsv(dir_match(cfg) + "/match.tsv", nullptr);
    const Atlas atlas = dataio::read_atlas(cfg.atlas_volume, cfg.atlas_names_path);
    parcel_names = atlas.names;
  }

  const std::vector<int> rank = stats::rank_components(test_r.row(0).transpose());
  std::vector<int> order(static_cast<size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i)
    order[static_cast<size_t>(rank[static_cast<size_t>(i)] - 1)] = static_cast<int>(i);

  std::string csv = "# " + digest_comment(cfg) + "\n";
  csv += "rank,component,r_test,cv_r,p,significant,label,parcel,match_r\n";
  for (Eigen::Index pos = 0; pos < k; ++pos) {
    const int i = order[static_cast<size_t>(pos)];
    csv += std::to_string(pos + 1) + "," + comp_names[static_cast<size_t>(i)] + "," +
           fmt10(test_r(0, i)) + "," + fmt10(perm(i, 1)) + "," + fmt10(perm(i, 2)) + "," +
           std::to_string(static_cast<int>(fdr(i, 2))) + "," +
           (ar(i, 5) > 0.5 ? "noise" : "signal") + ",";
    if (with_match) {
      csv += parcel_names[static_cast<size_t>(static_cast<int>(match(i, 1)))] + "," +
             fmt10(match(i, 2));
    } else {
      csv += ",";
    }
    csv += "\n";
  }
  write_text_file(dir + "/predictivity.csv", csv);

  // summary
  json summary;
  summary["format"] = "icem-report-1";
  summary["config_digest"] = hex64(cfg.digest);
  summary["k"] = static_cast<int>(k);
  int n_sig = 0, n_noise = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    n_sig += fdr(i, 2) > 0.5 ? 1 : 0;
    n_noise += ar(i, 5) > 0.5 ? 1 : 0;
  }
  summary["n_significant"] = n_sig;
  summary["n_noise"] = n_noise;
  summary["fdr_q"] = cfg.fdr_q;
  summary["n_perm"] = cfg.n_perm;
  const json ica_meta = dataio::parse_json_file(dir_ica(cfg) + "/model.meta.json");
  summary["ica"] = {{"k", ica_meta.value("k", 0)},
                    {"converged", ica_meta.value("converged", false)},
                    {"iterations", ica_meta.value("iterations", 0)},
                    {"delta", ica_meta.value("delta", 0.0)}};
  dataio::write_json_file(dir + "/summary.json", summary);

  // ranked predictivity figure: filled bars are significant; dashed
  // outlines mark components labeled noise
  {
    std::vector<std::string> labels;
    std::vector<double> values;
    std::vector<BarStyle> styles;
    for (Eigen::Index pos = 0; pos < k; ++pos) {
      const int i = order[static_cast<size_t>(pos)];
      labels.push_back(comp_names[static_cast<size_t>(i)]);
      values.push_back(test_r(0, i));
      BarStyle st;
      st.fill = fdr(i, 2) > 0.5 ? kPalette[0] : "#c3cfdd";
      st.flagged = ar(i, 5) > 0.5;
      styles.push_back(st);
    }
    write_svg_bars(dir + "/predictivity.svg", "held-out component predictivity (ranked)", labels,
                   values, styles, {}, cfg.digest);
  }
  if (with_match) {
    std::vector<std::string> labels;
    std::vector<double> values;
    std::vector<BarStyle> styles;
    for (Eigen::Index i = 0; i < k; ++i) {
      labels.push_back(parcel_names[static_cast<size_t>(static_cast<int>(match(i, 1)))]);
      values.push_back(match(i, 2));
      BarStyle st;
      st.fill = kPalette[2];
      st.flagged = match(i, 3) > 0.5;  // low confidence
      styles.push_back(st);
    }
    write_svg_bars(dir + "/match_atlas.svg", "best atlas parcel per component", labels, values,
                   styles, {}, cfg.digest);
    fs::copy_file(dir_match(cfg) + "/match_atlas.csv", dir + "/match_atlas.csv",
                  fs::copy_options::overwrite_existing);
  }
  if (with_fa) {
    const Eigen::MatrixXd fa =
        dataio::read_matrix_tsv(dir_fa(cfg) + "/feature_analysis.tsv", nullptr);
    Eigen::MatrixXd vals(fa.rows(), 2);
    vals.col(0) = fa.col(1);
    vals.col(1) = fa.col(2);
    write_svg_grouped(dir + "/feature_analysis.svg", "single-feature predictivity per network",
                      cfg.networks, {"word_rate", "resid_surprisal"}, vals, cfg.digest);
    fs::copy_file(dir_fa(cfg) + "/feature_analysis.csv", dir + "/feature_analysis.csv",
                  fs::copy_options::overwrite_existing);
  }
  stage_done(dir, f.h);
  logging::info("report: bundle written to " + dir);
}

void run_all(PipelineConfig& cfg) {
  resolve_inputs(cfg);
  stage_preprocess(cfg);
  stage_ica(cfg);
  stage_project(cfg);
  stage_features(cfg);
  stage_encode(cfg);
  stage_permtest(cfg);
  stage_fdr(cfg);
  stage_aroma(cfg);
  if (cfg.matching_enabled) {
    stage_match_atlas(cfg);
    if (!cfg.networks.empty()) stage_feature_analysis(cfg);
  }
  stage_report(cfg);
}

// --- cross-subject matching --------------------------------------------------

void cmd_match_subjects(const std::vector<std::string>& subject_dirs,
                        matching::Direction direction, int top_n, bool use_actual_series,
                        const std::string& out_dir) {
  require(subject_dirs.size() >= 2, Err::TooFewSubjects,
          "cross-subject matching needs at least 2 completed subject directories");
  std::vector<matching::SubjectBundle> bundles;
  Fnv f;
  f.str("match_subjects");
  f.i64(static_cast<int64_t>(direction));
  f.i64(top_n);
  for (const auto& dirpath : subject_dirs) {
    require_artifact(dirpath + "/ica/model.meta.json", "icem run-all");
    require_artifact(dirpath + "/encode/test_r.tsv", "icem run-all");
    require_artifact(dirpath + "/run_meta.json", "icem run-all");
    matching::SubjectBundle b;
    fs::path p = fs::path(dirpath).lexically_normal();
    if (p.filename().empty() || p.filename() == ".") p = p.parent_path();
    b.id = p.filename().string();
    b.model = ica::load_model(dirpath + "/ica/model");
    if (use_actual_series) {
      const json meta = dataio::parse_json_file(dirpath + "/run_meta.json");
      std::vector<Eigen::MatrixXd> parts;
      for (const auto& id : meta.at("test_ids")) {
        const std::string path =
            dirpath + "/project/" + id.get<std::string>() + ".comps.tsv";
        require_artifact(path, "icem project");
        parts.push_back(dataio::read_matrix_tsv(path, nullptr));
      }
      b.test_series = vstack(parts);
    } else {
      require_artifact(dirpath + "/encode/test_pred.tsv", "icem run-all");
      b.test_series = dataio::read_matrix_tsv(dirpath + "/encode/test_pred.tsv", nullptr);
    }
    const Eigen::MatrixXd r = dataio::read_matrix_tsv(dirpath + "/encode/test_r.tsv", nullptr);
    b.predictivity = r.row(0).transpose();
    f.u64(b.model.digest());
    bundles.push_back(std::move(b));
  }
  const uint64_t digest = f.h;

  fs::create_directories(out_dir);
  std::string csv = "# config_digest=" + hex64(digest) + "\n";
  csv += "reference,other,ref_component,matched_component,match_r,eval_r\n";
  for (size_t i = 0; i < bundles.size(); ++i)
    for (size_t j = 0; j < bundles.size(); ++j) {
      if (i == j) continue;
      const matching::MatchResult res =
          matching::match_subjects_pair(bundles[i], bundles[j], direction);
      for (const auto& pr : res.pairs)
        csv += bundles[i].id + "," + bundles[j].id + "," + comp_label(pr.ref_component) + "," +
               comp_label(pr.other_component) + "," + fmt10(pr.match_r) + "," +
               fmt10(pr.eval_r) + "\n";
    }
  write_text_file(out_dir + "/match_subjects.csv", csv);

  const matching::LooSummary loo = matching::loo_aggregate(bundles, direction, top_n);
  std::string loo_csv = "# config_digest=" + hex64(digest) + "\n";
  loo_csv += "rank,mean_eval_r,sd\n";
  std::vector<std::string> labels;
  std::vector<double> values;
  std::vector<BarStyle> styles;
  for (size_t pos = 0; pos < loo.rank_mean.size(); ++pos) {
    loo_csv += std::to_string(pos + 1) + "," + fmt10(loo.rank_mean[pos]) + "," +
               fmt10(loo.rank_sd[pos]) + "\n";
    labels.push_back(std::to_string(pos + 1));
    values.push_back(loo.rank_mean[pos]);
    BarStyle st;
    st.fill = kPalette[0];
    styles.push_back(st);
  }
  write_text_file(out_dir + "/loo_ranks.csv", loo_csv);
  write_svg_bars(out_dir + "/loo_ranks.svg",
                 "cross-subject agreement by predictivity rank", labels, values, styles,
                 loo.rank_sd, digest);
  logging::info("match-subjects: group summary written to " + out_dir);
}

}  // namespace icem::pipeline
