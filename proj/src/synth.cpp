// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "icem/common.hpp"
#include "icem/dataio.hpp"
#include "icem/features.hpp"
#include "icem/stats.hpp"

namespace icem::synth {
namespace {

uint64_t sub_seed(uint64_t base, const std::string& tag, uint64_t idx) {
  Fnv f;
  f.u64(base);
  f.str(tag);
  f.u64(idx);
  return f.h;
}

// Blob centers as fractions of the grid extent, far enough apart that
// truncated tails barely overlap.
constexpr std::array<std::array<double, 3>, 8> kCenterTable{{
    {0.30, 0.30, 0.35},
    {0.70, 0.30, 0.50},
    {0.30, 0.70, 0.55},
    {0.68, 0.68, 0.40},
    {0.50, 0.50, 0.70},
    {0.35, 0.50, 0.30},
    {0.65, 0.50, 0.75},
    {0.50, 0.30, 0.62},
}};

std::string run_tag(const char* kind, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%03d", kind, i);
  return buf;
}

std::string subject_tag(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "sub%03d", i);
  return buf;
}

}  // namespace

std::string driver_name(Driver d) {
  switch (d) {
    case Driver::None: return "none";
    case Driver::WordRate: return "word_rate";
    case Driver::ResidSurprisal: return "resid_surprisal";
    case Driver::Embedding: return "embedding";
    case Driver::Artifact: return "artifact";
  }
  return "none";
}

Driver driver_from_name(const std::string& s) {
  if (s == "none") return Driver::None;
  if (s == "word_rate") return Driver::WordRate;
  if (s == "resid_surprisal") return Driver::ResidSurprisal;
  if (s == "embedding") return Driver::Embedding;
  if (s == "artifact") return Driver::Artifact;
  raise(Err::Config, "unknown component driver '" + s + "'");
}

std::vector<std::pair<int, double>> ComponentSpec::default_fir() {
  return {{1, 0.5}, {2, 1.0}, {3, 1.0}, {4, 0.5}};
}

std::vector<ComponentSpec> SynthSpec::default_components() {
  std::vector<ComponentSpec> c(5);
  c[0].name = "AUD";
  c[0].driver = Driver::WordRate;
  c[1].name = "LANG";
  c[1].driver = Driver::ResidSurprisal;
  c[2].name = "SEM";
  c[2].driver = Driver::Embedding;
  c[2].emb_index = 0;
  c[3].name = "VIS";
  c[3].driver = Driver::None;
  c[4].name = "ART";
  c[4].driver = Driver::Artifact;
  return c;
}

void SynthSpec::validate() const {
  for (int d : dims) require(d >= 4, Err::Config, "grid dimensions must be at least 4");
  for (double v : voxel_size)
    require(std::isfinite(v) && v > 0.0, Err::Config, "voxel size must be positive");
  require(tr > 0.0 && std::isfinite(tr), Err::Config, "tr must be positive");
  require(n_trs >= 50, Err::Config, "n_trs must be at least 50");
  require(est_runs >= 1 && train_runs >= 1 && test_runs >= 1, Err::Config,
          "at least one run of each kind is required");
  require(noise_sd >= 0.0 && std::isfinite(noise_sd), Err::Config,
          "noise sd must be non-negative");
  require(blob_sigma_vox > 0.0, Err::Config, "blob sigma must be positive");
  require(blob_jitter >= 0.0 && blob_jitter < 1.0, Err::Config,
          "blob jitter must lie in [0, 1)");
  require(emb_dim >= 1, Err::Config, "embedding dimension must be positive");
  require(subjects >= 1, Err::Config, "subject count must be positive");
  require(components.size() >= 2, Err::Config, "at least 2 components are required");
  std::set<std::string> names;
  for (const auto& c : components) {
    require(!c.name.empty(), Err::Config, "component names must be non-empty");
    require(names.insert(c.name).second, Err::Config,
            "duplicate component name '" + c.name + "'");
    if (c.driver == Driver::Embedding)
      require(c.emb_index >= 0 && c.emb_index < emb_dim, Err::Config,
              "embedding index out of range for component '" + c.name + "'");
    if (c.driver != Driver::Artifact) {
      require(!c.fir.empty(), Err::Config, "component '" + c.name + "' needs FIR weights");
      for (const auto& [d, w] : c.fir) {
        require(d >= 1, Err::Config, "FIR lags must be >= 1");
        require(std::isfinite(w), Err::Config, "FIR weights must be finite");
      }
    }
  }
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json j;
  j["dims"] = dims;
  j["voxel_size"] = voxel_size;
  j["tr"] = tr;
  j["n_trs"] = n_trs;
  j["est_runs"] = est_runs;
  j["train_runs"] = train_runs;
  j["test_runs"] = test_runs;
  j["noise_sd"] = noise_sd;
  j["seed"] = seed;
  j["blob_sigma_vox"] = blob_sigma_vox;
  j["blob_jitter"] = blob_jitter;
  j["emb_dim"] = emb_dim;
  j["subjects"] = subjects;
  j["shuffle_components"] = shuffle_components;
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components) {
    nlohmann::json jc;
    jc["name"] = c.name;
    jc["driver"] = driver_name(c.driver);
    jc["emb_index"] = c.emb_index;
    nlohmann::json fir = nlohmann::json::array();
    for (const auto& [d, w] : c.fir) fir.push_back({d, w});
    jc["fir"] = fir;
    comps.push_back(jc);
  }
  j["components"] = comps;
  return j;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    require(d.is_array() && d.size() == 3, Err::Config, "dims must be a 3-element array");
    for (int i = 0; i < 3; ++i) s.dims[static_cast<size_t>(i)] = d[static_cast<size_t>(i)];
  }
  if (j.contains("voxel_size")) {
    const auto& v = j.at("voxel_size");
    require(v.is_array() && v.size() == 3, Err::Config, "voxel_size must be a 3-element array");
    for (int i = 0; i < 3; ++i) s.voxel_size[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
  }
  s.tr = j.value("tr", s.tr);
  s.n_trs = j.value("n_trs", s.n_trs);
  s.est_runs = j.value("est_runs", s.est_runs);
  s.train_runs = j.value("train_runs", s.train_runs);
  s.test_runs = j.value("test_runs", s.test_runs);
  s.noise_sd = j.value("noise_sd", s.noise_sd);
  s.seed = j.value("seed", s.seed);
  s.blob_sigma_vox = j.value("blob_sigma_vox", s.blob_sigma_vox);
  s.blob_jitter = j.value("blob_jitter", s.blob_jitter);
  s.emb_dim = j.value("emb_dim", s.emb_dim);
  s.subjects = j.value("subjects", s.subjects);
  s.shuffle_components = j.value("shuffle_components", s.shuffle_components);
  if (j.contains("components")) {
    s.components.clear();
    for (const auto& jc : j.at("components")) {
      ComponentSpec c;
      c.name = jc.at("name").get<std::string>();
      c.driver = driver_from_name(jc.value("driver", "none"));
      c.emb_index = jc.value("emb_index", 0);
      if (jc.contains("fir")) {
        c.fir.clear();
        for (const auto& p : jc.at("fir")) {
          require(p.is_array() && p.size() == 2, Err::Config,
                  "FIR entries must be [lag, weight] pairs");
          c.fir.emplace_back(p[0].get<int>(), p[1].get<double>());
        }
      }
      s.components.push_back(std::move(c));
    }
  }
  s.validate();
  return s;
}

GroundTruth build_truth(const SynthSpec& spec) {
  spec.validate();
  const auto grid = VolumeGrid::axis_aligned(spec.dims[0], spec.dims[1], spec.dims[2],
                                             spec.voxel_size[0], spec.voxel_size[1],
                                             spec.voxel_size[2]);
  GroundTruth truth;
  truth.mask = Mask::full(grid);
  truth.components = spec.components;
  const auto k = static_cast<Eigen::Index>(spec.components.size());
  const auto v = static_cast<Eigen::Index>(grid.nvox());
  truth.sources = Eigen::MatrixXd::Zero(k, v);

  const double sigma = spec.blob_sigma_vox;
  const double trunc = 2.5 * sigma;
  size_t next_center = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& comp = spec.components[static_cast<size_t>(c)];
    Rng rng(sub_seed(spec.seed, "map:" + comp.name, 0));
    if (comp.driver == Driver::Artifact) {
      truth.artifact.push_back(static_cast<int>(c));
      // rim of the grid, jittered weights
      for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
          for (int x = 0; x < spec.dims[0]; ++x) {
            const bool rim = x == 0 || y == 0 || z == 0 || x == spec.dims[0] - 1 ||
                             y == spec.dims[1] - 1 || z == spec.dims[2] - 1;
            if (rim)
              truth.sources(c, static_cast<Eigen::Index>(grid_index(grid, x, y, z))) =
                  1.0 + spec.blob_jitter * rng.uniform(-1.0, 1.0);
          }
    } else {
      if (comp.driver != Driver::None) truth.driven.push_back(static_cast<int>(c));
      std::array<double, 3> ctr{};
      require(next_center < kCenterTable.size(), Err::OverlapInfeasible,
              "more blob components than available well-separated centers");
      for (int a = 0; a < 3; ++a) {
        ctr[static_cast<size_t>(a)] = kCenterTable[next_center][static_cast<size_t>(a)] *
                                      static_cast<double>(spec.dims[static_cast<size_t>(a)] - 1);
        require(ctr[static_cast<size_t>(a)] - trunc >= 0.0 &&
                    ctr[static_cast<size_t>(a)] + trunc <=
                        static_cast<double>(spec.dims[static_cast<size_t>(a)] - 1),
                Err::OverlapInfeasible,
                "blob for component '" + comp.name + "' does not fit inside the grid");
      }
      ++next_center;
      for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
          for (int x = 0; x < spec.dims[0]; ++x) {
            const double dx = x - ctr[0], dy = y - ctr[1], dz = z - ctr[2];
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 > trunc * trunc) continue;
            const double val = std::exp(-d2 / (2.0 * sigma * sigma)) *
                               (1.0 + spec.blob_jitter * rng.uniform(-1.0, 1.0));
            truth.sources(c, static_cast<Eigen::Index>(grid_index(grid, x, y, z))) = val;
          }
    }
    const double peak = truth.sources.row(c).cwiseAbs().maxCoeff();
    require(peak > 0.0, Err::AllZeroSource,
            "component '" + comp.name + "' produced an all-zero map");
    truth.sources.row(c) /= peak;
  }
  return truth;
}

Story make_story(const SynthSpec& spec, const std::string& name, uint64_t story_seed) {
  Rng rng(story_seed);
  const double duration = static_cast<double>(spec.n_trs) * spec.tr;
  const double phase_rate = rng.uniform(0.0, 6.283185307179586);
  const double phase_rate2 = rng.uniform(0.0, 6.283185307179586);
  const double phase_surp = rng.uniform(0.0, 6.283185307179586);

  Story st;
  st.name = name;
  st.words.has_surprisal = true;
  double t = 0.25;
  int idx = 0;
  while (true) {
    // speech rate wanders at ~1/60 and ~1/27 Hz, comfortably inside a
    // 0.01-0.1 Hz analysis band so rate-locked signal survives filtering
    const double rate = 1.0 + 0.35 * std::sin(6.283185307179586 * t / 60.0 + phase_rate) +
                        0.2 * std::sin(6.283185307179586 * t / 27.0 + phase_rate2);
    const double gap = (0.5 / rate) * rng.uniform(0.8, 1.2);
    const double onset = t;
    const double offset = onset + std::min(gap * 0.9, 0.4);
    if ((onset + offset) / 2.0 >= duration - 1.0) break;
    Word w;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%05d", idx);
    w.token = buf;
    w.onset = onset;
    w.offset = offset;
    w.surprisal = std::max(
        0.05, 2.0 + 0.9 * std::sin(6.283185307179586 * t / 80.0 + phase_surp) +
                  0.8 * rng.normal());
    st.words.words.push_back(w);
    t = onset + gap;
    ++idx;
  }
  require(st.words.words.size() >= 16, Err::Config,
          "story '" + name + "' is too short to carry any structure");
  st.words.validate();

  st.emb.rows.resize(static_cast<Eigen::Index>(st.words.words.size()), spec.emb_dim);
  for (Eigen::Index i = 0; i < st.emb.rows.rows(); ++i)
    for (Eigen::Index j = 0; j < st.emb.rows.cols(); ++j) st.emb.rows(i, j) = rng.normal();
  return st;
}

Tracks story_tracks(const Story& story, double tr, int n_trs) {
  Tracks tk;
  tk.rate = features::word_rate(story.words, tr, n_trs);
  const auto n = static_cast<Eigen::Index>(story.words.words.size());
  Eigen::VectorXd mid(n), surp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mid[i] = story.words.words[static_cast<size_t>(i)].midpoint();
    surp[i] = story.words.words[static_cast<size_t>(i)].surprisal;
  }
  const Eigen::VectorXd surp_track = features::lanczos_resample(mid, surp, tr, n_trs).col(0);
  tk.resid_surprisal = features::residualize(surp_track, tk.rate);
  tk.emb = features::lanczos_resample(mid, story.emb.rows, tr, n_trs);
  return tk;
}

Eigen::VectorXd fir_course(const Eigen::VectorXd& track,
                           const std::vector<std::pair<int, double>>& fir) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(track.size());
  for (const auto& [d, w] : fir) {
    if (d >= track.size()) continue;
    out.tail(track.size() - d) += w * track.head(track.size() - d);
  }
  return out;
}

namespace {

// Planted course scale. Three times the default voxel noise keeps the
// per-voxel variance profile of a blob graded, so voxel-wise
// standardization in the analysis paths stays close to linear and the
// spatial maps survive it.
constexpr double kCourseScale = 0.3;

// Every stimulus track of the story, lags 0..6, plus an intercept.
// Spontaneous courses are built orthogonal to this span: "undriven" has to
// mean unpredictable from the stimulus in-sample, not just independent in
// expectation.
Eigen::MatrixXd stim_lagged(const Tracks& tk, int t) {
  constexpr int kMaxLag = 6;
  Eigen::MatrixXd base(t, 2 + tk.emb.cols());
  base.col(0) = tk.rate;
  base.col(1) = tk.resid_surprisal;
  base.rightCols(tk.emb.cols()) = tk.emb;
  Eigen::MatrixXd out(t, base.cols() * (kMaxLag + 1) + 1);
  out.col(0).setOnes();
  Eigen::Index at = 1;
  for (int lag = 0; lag <= kMaxLag; ++lag)
    for (Eigen::Index j = 0; j < base.cols(); ++j) {
      Eigen::VectorXd col = Eigen::VectorXd::Zero(t);
      col.tail(t - lag) = base.col(j).head(t - lag);
      out.col(at++) = col;
    }
  return out;
}

Eigen::VectorXd ortho_to(const Eigen::VectorXd& y, const Eigen::MatrixXd& x) {
  return y - x * x.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
}

}  // namespace

RunData make_run(const SynthSpec& spec, const GroundTruth& truth, const Story& story,
                 uint64_t run_seed) {
  const auto k = static_cast<Eigen::Index>(truth.components.size());
  const auto v = truth.sources.cols();
  const int t = spec.n_trs;
  const Tracks tk = story_tracks(story, spec.tr, t);

  RunData run;
  run.mixing.resize(t, k);
  const Eigen::MatrixXd lagged = stim_lagged(tk, t);
  Eigen::VectorXd artifact_course = Eigen::VectorXd::Zero(t);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto& comp = truth.components[static_cast<size_t>(c)];
    switch (comp.driver) {
      case Driver::WordRate:
        run.mixing.col(c) = fir_course(tk.rate, comp.fir);
        break;
      case Driver::ResidSurprisal:
        run.mixing.col(c) = fir_course(tk.resid_surprisal, comp.fir);
        break;
      case Driver::Embedding:
        run.mixing.col(c) = fir_course(tk.emb.col(comp.emb_index), comp.fir);
        break;
      case Driver::None: {
        // spontaneous low-frequency activity: smoothed white noise
        Rng rng(sub_seed(run_seed, "course:" + comp.name, 0));
        Eigen::VectorXd white(t);
        for (int i = 0; i < t; ++i) white[i] = rng.normal();
        Eigen::VectorXd course = fir_course(white, comp.fir);
        // with too few volumes the residual would vanish; skip then
        if (lagged.cols() * 3 <= static_cast<Eigen::Index>(t) * 2)
          course = ortho_to(course, lagged);
        run.mixing.col(c) = course;
        break;
      }
      case Driver::Artifact: {
        Rng rng(sub_seed(run_seed, "course:" + comp.name, 0));
        Eigen::VectorXd course(t);
        for (int i = 0; i < t; ++i) course[i] = 0.05 * rng.normal();
        const int n_spikes = std::max(3, t / 50);
        std::set<int> at;
        while (static_cast<int>(at.size()) < n_spikes)
          at.insert(5 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t - 10))));
        for (int s : at) course[s] += 8.0 * (1.0 + 0.25 * rng.uniform(-1.0, 1.0));
        run.mixing.col(c) = course;
        artifact_course += course;
        break;
      }
    }
    if (comp.driver != Driver::Artifact) {
      const Eigen::VectorXd col = run.mixing.col(c);
      const double sd = std::sqrt((col.array() - col.mean()).square().sum() / t);
      if (sd > 1e-12) run.mixing.col(c) = col * (kCourseScale / sd);
    }
  }

  Rng noise(sub_seed(run_seed, "noise", 0));
  run.series.mask = truth.mask;
  run.series.tr = spec.tr;
  run.series.data = run.mixing * truth.sources;
  if (spec.noise_sd > 0.0)
    for (Eigen::Index i = 0; i < t; ++i)
      for (Eigen::Index j = 0; j < v; ++j) run.series.data(i, j) += spec.noise_sd * noise.normal();
  run.series.validate();

  // six rigid-body regressors as slow random walks; translations pick up a
  // share of the artifact course so motion coupling is visible
  Rng motion(sub_seed(run_seed, "motion", 0));
  run.confounds.names = {"trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z"};
  run.confounds.cols = Eigen::MatrixXd::Zero(t, 7);
  for (int j = 0; j < 6; ++j) {
    const double step = j < 3 ? 0.01 : 0.002;
    double walk = 0.0;
    for (int i = 0; i < t; ++i) {
      walk += step * motion.normal();
      run.confounds.cols(i, j) = walk;
    }
  }
  // slow walks overlap slow courses in-sample, and regressing them out
  // would bite into the planted signal; strip the stimulus- and
  // course-shaped directions from the walks so confound regression is
  // neutral for everything except the artifact coupling added below
  {
    Eigen::Index n_keep = 0;
    for (Eigen::Index c = 0; c < k; ++c)
      if (truth.components[static_cast<size_t>(c)].driver != Driver::Artifact) ++n_keep;
    Eigen::MatrixXd span(t, lagged.cols() + n_keep);
    span.leftCols(lagged.cols()) = lagged;
    Eigen::Index at = lagged.cols();
    for (Eigen::Index c = 0; c < k; ++c)
      if (truth.components[static_cast<size_t>(c)].driver != Driver::Artifact)
        span.col(at++) = run.mixing.col(c);
    if (span.cols() * 3 <= static_cast<Eigen::Index>(t) * 2) {
      const auto svd = span.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV);
      Eigen::MatrixXd walks = run.confounds.cols.leftCols(6);
      run.confounds.cols.leftCols(6) = walks - span * svd.solve(walks);
    }
  }
  if (!truth.artifact.empty()) run.confounds.cols.col(0) += 0.10 * artifact_course;
  run.confounds.names.push_back("framewise_displacement");
  for (int i = 1; i < t; ++i) {
    double fd = 0.0;
    for (int j = 0; j < 6; ++j)
      fd += std::abs(run.confounds.cols(i, j) - run.confounds.cols(i - 1, j));
    run.confounds.cols(i, 6) = fd;
  }
  run.confounds.validate();
  return run;
}

nlohmann::json generate(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "stimulus");

  const GroundTruth truth = build_truth(spec);
  const auto k = static_cast<Eigen::Index>(truth.components.size());

  std::vector<std::string> est_names, train_names, test_names;
  for (int i = 0; i < spec.est_runs; ++i) est_names.push_back(run_tag("est", i));
  for (int i = 0; i < spec.train_runs; ++i) train_names.push_back(run_tag("trn", i));
  for (int i = 0; i < spec.test_runs; ++i) test_names.push_back(run_tag("tst", i));
  std::vector<std::string> all_names = est_names;
  all_names.insert(all_names.end(), train_names.begin(), train_names.end());
  all_names.insert(all_names.end(), test_names.begin(), test_names.end());

  std::vector<Story> stories;
  for (const auto& name : all_names) {
    Story st = make_story(spec, name, sub_seed(spec.seed, "story:" + name, 0));
    const auto base = (fs::path(out_dir) / "stimulus" / name).string();
    dataio::write_word_table_tsv(base + ".words.tsv", st.words);
    dataio::write_embeddings(base + ".emb.f32", st.emb);
    stories.push_back(std::move(st));
  }

  // Reference atlas from the planted maps: each voxel joins the component
  // with the largest absolute weight, when that weight is substantial.
  {
    Atlas atlas;
    atlas.grid = truth.mask.grid;
    atlas.names.resize(static_cast<size_t>(k));
    atlas.maps.assign(static_cast<size_t>(k),
                      std::vector<uint8_t>(static_cast<size_t>(truth.mask.grid.nvox()), 0));
    for (Eigen::Index c = 0; c < k; ++c)
      atlas.names[static_cast<size_t>(c)] = truth.components[static_cast<size_t>(c)].name;
    for (Eigen::Index vox = 0; vox < truth.sources.cols(); ++vox) {
      Eigen::Index best = 0;
      double mag = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double m = std::abs(truth.sources(c, vox));
        if (m > mag) {
          mag = m;
          best = c;
        }
      }
      if (mag >= 0.3)
        atlas.maps[static_cast<size_t>(best)][static_cast<size_t>(vox)] = 1;
    }
    atlas.validate();
    dataio::write_atlas((fs::path(out_dir) / "atlas.vxt").string(),
                        (fs::path(out_dir) / "atlas_names.json").string(), atlas);
  }

  std::vector<std::string> subject_names;
  for (int s = 0; s < spec.subjects; ++s) {
    const std::string sub = subject_tag(s);
    subject_names.push_back(sub);
    const auto sub_dir = fs::path(out_dir) / sub;
    fs::create_directories(sub_dir);

    std::vector<int> order(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
    if (spec.shuffle_components) {
      Rng rng(sub_seed(spec.seed, "order", static_cast<uint64_t>(s)));
      order = rng.permutation(static_cast<int>(k));
    }

    std::vector<std::string> comp_names(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i)
      comp_names[static_cast<size_t>(i)] =
          truth.components[static_cast<size_t>(order[static_cast<size_t>(i)])].name;

    for (const auto& story : stories) {
      RunData run = make_run(spec, truth, story,
                             sub_seed(spec.seed, "run:" + story.name, static_cast<uint64_t>(s)));
      dataio::write_volume_series((sub_dir / (story.name + ".vxt")).string(), run.series);
      dataio::write_confounds_tsv((sub_dir / (story.name + ".confounds.tsv")).string(),
                                  run.confounds);
      Eigen::MatrixXd mixing(run.mixing.rows(), k);
      for (Eigen::Index i = 0; i < k; ++i)
        mixing.col(i) = run.mixing.col(order[static_cast<size_t>(i)]);
      dataio::write_matrix_tsv((sub_dir / ("truth_mixing_" + story.name + ".tsv")).string(),
                               mixing, comp_names);
    }

    VolumeSeries src;
    src.mask = truth.mask;
    src.tr = 1.0;
    src.data.resize(k, truth.sources.cols());
    for (Eigen::Index i = 0; i < k; ++i)
      src.data.row(i) = truth.sources.row(order[static_cast<size_t>(i)]);
    dataio::write_volume_series((sub_dir / "truth_sources.vxt").string(), src);

    nlohmann::json tj;
    tj["format"] = "icem-synth-truth-1";
    tj["k"] = static_cast<int>(k);
    tj["names"] = comp_names;
    tj["order"] = order;
    nlohmann::json drivers = nlohmann::json::array();
    std::vector<int> driven_idx, artifact_idx;
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& comp = truth.components[static_cast<size_t>(order[static_cast<size_t>(i)])];
      drivers.push_back(driver_name(comp.driver));
      if (comp.driver == Driver::Artifact)
        artifact_idx.push_back(static_cast<int>(i));
      else if (comp.driver != Driver::None)
        driven_idx.push_back(static_cast<int>(i));
    }
    tj["drivers"] = drivers;
    tj["driven"] = driven_idx;
    tj["artifact"] = artifact_idx;
    dataio::write_json_file((sub_dir / "truth.json").string(), tj);
  }

  nlohmann::json manifest;
  manifest["format"] = "icem-synth-1";
  manifest["spec"] = spec.to_json();
  manifest["subjects"] = subject_names;
  manifest["stories"] = {
      {"est", est_names}, {"train", train_names}, {"test", test_names}};
  manifest["atlas"] = {{"volume", "atlas.vxt"}, {"names", "atlas_names.json"}};
  manifest["tr"] = spec.tr;
  dataio::write_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
  return manifest;
}

RecoveryScore score_recovery(const Eigen::MatrixXd& truth_sources,
                             const Eigen::MatrixXd& est_sources) {
  require(truth_sources.cols() == est_sources.cols(), Err::ShapeMismatch,
          "truth and estimate disagree on voxel count");
  const Eigen::Index kt = truth_sources.rows(), ke = est_sources.rows();
  Eigen::MatrixXd r(kt, ke);
  for (Eigen::Index i = 0; i < kt; ++i)
    for (Eigen::Index j = 0; j < ke; ++j)
      r(i, j) = stats::pearson_or_zero(truth_sources.row(i), est_sources.row(j));

  RecoveryScore out;
  out.assignment.assign(static_cast<size_t>(kt), -1);
  out.abs_r.assign(static_cast<size_t>(kt), 0.0);
  out.sign.assign(static_cast<size_t>(kt), 0);
  std::vector<uint8_t> row_used(static_cast<size_t>(kt), 0), col_used(static_cast<size_t>(ke), 0);
  const Eigen::Index n_assign = std::min(kt, ke);
  for (Eigen::Index step = 0; step < n_assign; ++step) {
    double best = -1.0;
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < kt; ++i) {
      if (row_used[static_cast<size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < ke; ++j) {
        if (col_used[static_cast<size_t>(j)]) continue;
        if (std::abs(r(i, j)) > best) {
          best = std::abs(r(i, j));
          bi = i;
          bj = j;
        }
      }
    }
    row_used[static_cast<size_t>(bi)] = 1;
    col_used[static_cast<size_t>(bj)] = 1;
    out.assignment[static_cast<size_t>(bi)] = static_cast<int>(bj);
    out.abs_r[static_cast<size_t>(bi)] = best;
    out.sign[static_cast<size_t>(bi)] = r(bi, bj) >= 0.0 ? 1 : -1;
  }
  return out;
}

}  // namespace icem::synth
