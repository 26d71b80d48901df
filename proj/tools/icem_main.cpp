// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
//
// icem — component estimation and encoding pipeline driver. Every
// subcommand reads a JSON config, resolves its inputs, runs one stage (or
// all of them) and writes self-describing artifacts under --out. Stages
// are cached by content digests, so reruns are cheap and deleting an
// intermediate reproduces it bitwise.
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icem/common.hpp"
#include "icem/pipeline.hpp"

namespace {

struct GlobalOpts {
  std::string config;
  std::optional<std::string> out;
  std::optional<uint64_t> seed;
  std::optional<int> jobs;
  bool quiet = false;
};

void add_globals(CLI::App* cmd, GlobalOpts& g, bool config_required = true) {
  auto* c = cmd->add_option("-c,--config", g.config, "pipeline config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", [&g](const std::vector<std::string>& v) {
    g.out = v.back();
    return true;
  }, "output directory (overrides config)");
  cmd->add_option("--seed", [&g](const std::vector<std::string>& v) {
    try {
      g.seed = std::stoull(v.back());
    } catch (...) {
      return false;
    }
    return true;
  }, "seed (overrides config)");
  cmd->add_option("--jobs", [&g](const std::vector<std::string>& v) {
    try {
      g.jobs = std::stoi(v.back());
    } catch (...) {
      return false;
    }
    return true;
  }, "worker threads (overrides config)");
  cmd->add_flag("-q,--quiet", g.quiet, "suppress informational logging");
}

icem::pipeline::PipelineConfig load_config(const GlobalOpts& g) {
  icem::logging::set_quiet(g.quiet);
  auto cfg = icem::pipeline::PipelineConfig::load(g.config);
  cfg.apply_overrides(g.out, g.seed, g.jobs);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"component estimation and encoding pipeline"};
  app.require_subcommand(1);

  GlobalOpts g;
  using Stage = void (*)(const icem::pipeline::PipelineConfig&);
  struct StageCmd {
    const char* name;
    const char* help;
    Stage fn;
  };
  const std::vector<StageCmd> stages = {
      {"preprocess", "trim/detrend/filter/smooth the input runs", icem::pipeline::stage_preprocess},
      {"ica-fit", "estimate spatial components on the estimation runs", icem::pipeline::stage_ica},
      {"project", "sample component series from preprocessed and raw runs",
       icem::pipeline::stage_project},
      {"features", "build stimulus tracks on the scan grid", icem::pipeline::stage_features},
      {"encode", "fit the ridge encoding model and score held-out runs",
       icem::pipeline::stage_encode},
      {"permtest", "permutation null for per-component predictivity",
       icem::pipeline::stage_permtest},
      {"fdr", "multiple-comparison decisions over permutation p-values",
       icem::pipeline::stage_fdr},
      {"aroma", "signal/noise component classification", icem::pipeline::stage_aroma},
      {"match-atlas", "assign components to atlas parcels", icem::pipeline::stage_match_atlas},
      {"feature-analysis", "single-feature models for named networks",
       icem::pipeline::stage_feature_analysis},
      {"report", "collate the final report bundle", icem::pipeline::stage_report},
  };

  Stage selected = nullptr;
  bool want_synth = false, want_run_all = false;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic data bundle");
  add_globals(synth_cmd, g);
  synth_cmd->callback([&] { want_synth = true; });

  for (const auto& sc : stages) {
    auto* cmd = app.add_subcommand(sc.name, sc.help);
    add_globals(cmd, g);
    cmd->callback([&selected, fn = sc.fn] { selected = fn; });
  }

  auto* run_cmd = app.add_subcommand("run-all", "run every stage in order");
  add_globals(run_cmd, g);
  run_cmd->callback([&] { want_run_all = true; });

  // cross-subject matching works on completed output directories, not on a
  // pipeline config
  std::vector<std::string> subject_dirs;
  std::string direction_name = "temporal";
  int top_n = 5;
  bool use_actual = false;
  std::string ms_out = "out_group";
  bool want_ms = false;
  auto* ms = app.add_subcommand("match-subjects",
                                "align components across completed subject runs");
  ms->add_option("dirs", subject_dirs, "run-all output directories (one per subject)")
      ->required()
      ->expected(-2);
  ms->add_option("--direction", direction_name, "matching domain: temporal|spatial")
      ->check(CLI::IsMember({"temporal", "spatial"}));
  ms->add_option("--top-n", top_n, "ranks to aggregate in the group summary");
  ms->add_flag("--use-actual", use_actual,
               "match on projected test series instead of model predictions");
  ms->add_option("--out", ms_out, "output directory for the group summary");
  ms->add_flag("-q,--quiet", g.quiet, "suppress informational logging");
  ms->callback([&] { want_ms = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (want_ms) {
      icem::logging::set_quiet(g.quiet);
      const auto dir = direction_name == "temporal" ? icem::matching::Direction::TemporalFirst
                                                    : icem::matching::Direction::SpatialFirst;
      icem::pipeline::cmd_match_subjects(subject_dirs, dir, top_n, use_actual, ms_out);
      return 0;
    }
    auto cfg = load_config(g);
    if (want_synth) {
      icem::require(cfg.has_synth, icem::Err::Config,
                    "config field 'synth': required by the synth subcommand");
      icem::pipeline::resolve_inputs(cfg);
      return 0;
    }
    if (want_run_all) {
      icem::pipeline::run_all(cfg);
      return 0;
    }
    icem::pipeline::resolve_inputs(cfg);
    selected(cfg);
    return 0;
  } catch (const icem::Error& e) {
    std::fprintf(stderr, "icem: %s\n", e.what());
    return icem::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "icem: unexpected: %s\n", e.what());
    return 1;
  }
}
