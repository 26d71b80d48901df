// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <doctest.h>

#include "icem/dataio.hpp"
#include "icem/pipeline.hpp"
#include "test_util.hpp"

using namespace icem;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config(const std::string& out) {
  json j;
  j["out"] = out;
  j["seed"] = 5;
  j["jobs"] = 1;
  j["synth"] = {{"n_trs", 120}, {"train_runs", 1}, {"noise_sd", 0.1}};
  j["ica"] = {{"k", 5}};
  j["stats"] = {{"n_perm", 25}};
  return j;
}

std::map<std::string, uint64_t> tree_digests(const fs::path& root) {
  std::map<std::string, uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), root).string()] = digest_file(e.path().string());
  }
  return out;
}

std::string slurp(const std::string& path) { return read_text_file(path); }

}  // namespace

TEST_CASE("pipeline: an end-to-end run produces a coherent report") {
  test::TempDir dir("pipe");
  const std::string out = dir.file("out");
  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from_json(small_config(out));
  pipeline::run_all(cfg);

  for (const char* f : {"/report/predictivity.csv", "/report/summary.json",
                        "/report/predictivity.svg", "/report/match_atlas.csv",
                        "/report/feature_analysis.csv"})
    CHECK(fs::exists(out + f));

  json summary = dataio::parse_json_file(out + "/report/summary.json");
  CHECK(summary.at("format") == "icem-report-1");
  CHECK(summary.at("k") == 5);
  CHECK(summary.at("n_perm") == 25);
  CHECK(summary.at("config_digest") == hex64(cfg.digest));
  CHECK(summary.at("ica").at("converged").get<bool>());

  const std::string csv = slurp(out + "/report/predictivity.csv");
  CHECK(csv.rfind("# config_digest=" + hex64(cfg.digest), 0) == 0);
  CHECK(csv.find("rank,component,r_test") != std::string::npos);

  // a rerun over a complete output tree is a pure cache hit
  auto before = tree_digests(out);
  pipeline::PipelineConfig again = pipeline::PipelineConfig::from_json(small_config(out));
  pipeline::run_all(again);
  CHECK(tree_digests(out) == before);

  // deleting one stage directory regenerates it bitwise, leaving the rest
  const uint64_t fdr_before = digest_file(out + "/fdr/fdr.tsv");
  fs::remove_all(out + "/fdr");
  pipeline::PipelineConfig third = pipeline::PipelineConfig::from_json(small_config(out));
  pipeline::run_all(third);
  CHECK(digest_file(out + "/fdr/fdr.tsv") == fdr_before);
  CHECK(tree_digests(out) == before);

  // the same holds for the report bundle itself
  fs::remove_all(out + "/report");
  pipeline::PipelineConfig fourth = pipeline::PipelineConfig::from_json(small_config(out));
  pipeline::run_all(fourth);
  CHECK(tree_digests(out) == before);
}

TEST_CASE("pipeline: config digest ignores jobs but tracks everything else") {
  json a = small_config("outA");
  json b = a;
  b["jobs"] = 4;
  json c = a;
  c["seed"] = 6;

  pipeline::PipelineConfig ca = pipeline::PipelineConfig::from_json(a);
  pipeline::PipelineConfig cb = pipeline::PipelineConfig::from_json(b);
  pipeline::PipelineConfig cc = pipeline::PipelineConfig::from_json(c);
  CHECK(ca.digest == cb.digest);
  CHECK(ca.digest != cc.digest);
  CHECK(cb.jobs == 4);
}

TEST_CASE("pipeline: a run id may appear in only one split") {
  json j;
  j["out"] = "x";
  j["paths"] = {
      {"est_runs", {{{"id", "runA"}, {"series", "a.vxt"}}}},
      {"train_runs", {{{"id", "runA"}, {"series", "b.vxt"}, {"words", "w.tsv"}}}},
      {"test_runs", {{{"id", "runB"}, {"series", "c.vxt"}, {"words", "w.tsv"}}}},
  };
  try {
    (void)pipeline::PipelineConfig::from_json(j);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Config);
    CHECK(std::string(e.what()).find("more than one split") != std::string::npos);
  }
}

TEST_CASE("pipeline: matching without an atlas is rejected up front") {
  test::TempDir dir("noatlas");
  VolumeSeries s = test::make_series(4, 4, 4, 60, 2.0, 3);
  for (const char* name : {"est.vxt", "train.vxt", "test.vxt"})
    dataio::write_volume_series(dir.file(name), s);
  WordTable w;
  for (int i = 0; i < 4; ++i) {
    Word word;
    word.token = "tok" + std::to_string(i);
    word.onset = 1.0 + i;
    word.offset = 1.2 + i;
    word.surprisal = 2.0;
    w.words.push_back(word);
  }
  w.has_surprisal = true;
  dataio::write_word_table_tsv(dir.file("w.tsv"), w);

  json j;
  j["out"] = dir.file("out");
  j["paths"] = {
      {"est_runs", {{{"id", "e"}, {"series", dir.file("est.vxt")}}}},
      {"train_runs",
       {{{"id", "tr"}, {"series", dir.file("train.vxt")}, {"words", dir.file("w.tsv")}}}},
      {"test_runs",
       {{{"id", "te"}, {"series", dir.file("test.vxt")}, {"words", dir.file("w.tsv")}}}},
  };
  j["matching"] = {{"enabled", true}};

  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from_json(j);
  try {
    pipeline::resolve_inputs(cfg);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Config);
    CHECK(std::string(e.what()).find("paths.atlas.volume") != std::string::npos);
  }
}

TEST_CASE("pipeline: group matching needs at least two completed subjects") {
  test::TempDir dir("grp");
  try {
    pipeline::cmd_match_subjects({dir.file("only")}, matching::Direction::TemporalFirst, 3,
                                 false, dir.file("out"));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::TooFewSubjects);
  }
}
