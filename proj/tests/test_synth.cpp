// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include <doctest.h>

#include "icem/dataio.hpp"
#include "icem/synth.hpp"
#include "test_util.hpp"

using namespace icem;
namespace fs = std::filesystem;

namespace {

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd ac = a.array() - a.mean();
  Eigen::VectorXd bc = b.array() - b.mean();
  return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

std::map<std::string, uint64_t> tree_digests(const fs::path& root) {
  std::map<std::string, uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), root).string()] = digest_file(e.path().string());
  }
  return out;
}

synth::SynthSpec small_spec() {
  synth::SynthSpec spec;
  spec.n_trs = 50;
  spec.train_runs = 1;
  spec.seed = 11;
  return spec;
}

}  // namespace

TEST_CASE("synth: fir courses are weighted lag sums with zero fill") {
  Eigen::VectorXd track(4);
  track << 1, 2, 3, 4;
  Eigen::VectorXd out = synth::fir_course(track, {{1, 0.5}, {3, 2.0}});
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.5);
  CHECK(out[2] == 1.0);
  CHECK(out[3] == doctest::Approx(3.5));
  CHECK(synth::fir_course(track, {{10, 1.0}}).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synth: stories carry a coherent word table and embeddings") {
  synth::SynthSpec spec = small_spec();
  synth::Story st = synth::make_story(spec, "probe", 5);
  REQUIRE(st.words.words.size() >= 50);
  CHECK(st.words.has_surprisal);
  const double t_end = spec.tr * spec.n_trs;
  double prev = -1.0;
  for (const auto& w : st.words.words) {
    CHECK(w.onset >= prev);
    CHECK(w.offset >= w.onset);
    CHECK(w.midpoint() < t_end);
    CHECK(std::isfinite(w.surprisal));
    CHECK(w.surprisal > 0.0);
    prev = w.onset;
  }
  CHECK(st.emb.n_words() == static_cast<int>(st.words.words.size()));
  CHECK(st.emb.dim() == spec.emb_dim);

  // same seed, same story; different seed, different words
  synth::Story st2 = synth::make_story(spec, "probe", 5);
  CHECK(st2.words.words.size() == st.words.words.size());
  CHECK(st2.words.words[3].onset == st.words.words[3].onset);
  synth::Story other = synth::make_story(spec, "probe", 6);
  CHECK(other.words.words[3].onset != st.words.words[3].onset);
}

TEST_CASE("synth: surprisal track is built orthogonal to word rate") {
  synth::SynthSpec spec = small_spec();
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    synth::Story st = synth::make_story(spec, "s", seed);
    synth::Tracks tk = synth::story_tracks(st, spec.tr, spec.n_trs);
    CHECK(tk.rate.size() == spec.n_trs);
    CHECK(tk.emb.cols() == spec.emb_dim);
    CHECK(std::abs(corr(tk.resid_surprisal, tk.rate)) < 1e-10);
  }
}

TEST_CASE("synth: a word-rate component carries exactly the lagged rate") {
  synth::SynthSpec spec = small_spec();
  spec.noise_sd = 0.0;
  spec.n_trs = 60;
  spec.components.clear();
  synth::ComponentSpec main;
  main.name = "only";
  main.driver = synth::Driver::WordRate;
  main.fir = {{2, 1.0}};
  synth::ComponentSpec spare;
  spare.name = "spare";
  spare.driver = synth::Driver::None;
  spec.components = {main, spare};

  synth::GroundTruth truth = synth::build_truth(spec);
  synth::Story story = synth::make_story(spec, "s1", 7);
  synth::RunData run = synth::make_run(spec, truth, story, 8);
  synth::Tracks tk = synth::story_tracks(story, spec.tr, spec.n_trs);

  Eigen::VectorXd shifted = Eigen::VectorXd::Zero(spec.n_trs);
  for (int t = 2; t < spec.n_trs; ++t) shifted[t] = tk.rate[t - 2];
  CHECK(corr(run.mixing.col(0), shifted) > 1.0 - 1e-12);

  // planted courses are rescaled to a fixed population sd
  const Eigen::VectorXd c0 = run.mixing.col(0);
  const double sd = std::sqrt((c0.array() - c0.mean()).square().mean());
  CHECK(sd == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("synth: noiseless data has rank equal to the component count") {
  synth::SynthSpec spec = small_spec();
  spec.noise_sd = 0.0;
  spec.n_trs = 120;
  spec.components.resize(3);
  spec.components[0].name = "AUD";
  spec.components[0].driver = synth::Driver::WordRate;
  spec.components[1].name = "SEM";
  spec.components[1].driver = synth::Driver::Embedding;
  spec.components[2].name = "VIS";
  spec.components[2].driver = synth::Driver::None;

  synth::GroundTruth truth = synth::build_truth(spec);
  CHECK(truth.driven == std::vector<int>{0, 1});
  CHECK(truth.artifact.empty());

  synth::RunData run = synth::make_run(spec, truth, synth::make_story(spec, "s", 9), 10);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(run.series.data);
  const Eigen::VectorXd& sv = svd.singularValues();
  CHECK(sv[2] / sv[0] > 1e-10);
  CHECK(sv[3] / sv[0] < 1e-10);
}

TEST_CASE("synth: blobs that cannot fit the grid are rejected") {
  synth::SynthSpec spec = small_spec();
  spec.blob_sigma_vox = 2.0;  // 3-sigma support exceeds a 16^3 grid layout
  try {
    (void)synth::build_truth(spec);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::OverlapInfeasible);
  }
}

TEST_CASE("synth: recovery scoring is permutation and sign aware") {
  Rng rng(83);
  Eigen::MatrixXd truth(4, 200);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 200; ++j) truth(i, j) = rng.normal();

  std::vector<int> perm = {2, 0, 3, 1};
  std::vector<int> sign = {-1, 1, -1, 1};
  Eigen::MatrixXd est(4, 200);
  for (int i = 0; i < 4; ++i)
    est.row(perm[static_cast<size_t>(i)]) = sign[static_cast<size_t>(i)] * truth.row(i);

  synth::RecoveryScore score = synth::score_recovery(truth, est);
  for (int i = 0; i < 4; ++i) {
    CHECK(score.assignment[static_cast<size_t>(i)] == perm[static_cast<size_t>(i)]);
    CHECK(score.abs_r[static_cast<size_t>(i)] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(score.sign[static_cast<size_t>(i)] == sign[static_cast<size_t>(i)]);
  }

  // extra estimated rows stay unassigned; they never steal a match
  Eigen::MatrixXd wide(6, 200);
  wide.topRows(4) = est;
  for (int j = 0; j < 200; ++j) {
    wide(4, j) = rng.normal();
    wide(5, j) = rng.normal();
  }
  synth::RecoveryScore s2 = synth::score_recovery(truth, wide);
  for (int i = 0; i < 4; ++i) CHECK(s2.assignment[static_cast<size_t>(i)] == perm[static_cast<size_t>(i)]);

  // too few estimates leave the weakest truths unmatched
  synth::RecoveryScore s3 = synth::score_recovery(truth, est.topRows(2));
  int unmatched = 0;
  for (int i = 0; i < 4; ++i)
    if (s3.assignment[static_cast<size_t>(i)] < 0) ++unmatched;
  CHECK(unmatched == 2);

  // mild noise keeps the alignment but drops the correlations
  Eigen::MatrixXd noisy = truth;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 200; ++j) noisy(i, j) += 0.1 * rng.normal();
  synth::RecoveryScore s4 = synth::score_recovery(truth, noisy);
  for (int i = 0; i < 4; ++i) {
    CHECK(s4.assignment[static_cast<size_t>(i)] == i);
    CHECK(s4.abs_r[static_cast<size_t>(i)] > 0.95);
  }
}

TEST_CASE("synth: generation is byte-for-byte deterministic") {
  test::TempDir dir("synthgen");
  synth::SynthSpec spec = small_spec();
  spec.subjects = 2;
  spec.shuffle_components = true;
  spec.noise_sd = 0.05;

  nlohmann::json m1 = synth::generate(spec, dir.file("a"));
  nlohmann::json m2 = synth::generate(spec, dir.file("b"));
  CHECK(m1 == m2);
  CHECK(tree_digests(dir.file("a")) == tree_digests(dir.file("b")));

  // the returned manifest is the one on disk
  nlohmann::json on_disk = dataio::parse_json_file(dir.file("a") + "/manifest.json");
  CHECK(on_disk == m1);

  // per-subject component shuffling gives subjects different orders
  REQUIRE(m1.contains("subjects"));
  std::vector<std::vector<int>> orders;
  for (const auto& sub : m1["subjects"]) {
    nlohmann::json tj =
        dataio::parse_json_file(dir.file("a") + "/" + sub.get<std::string>() + "/truth.json");
    std::vector<int> order = tj.at("order").get<std::vector<int>>();
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == static_cast<int>(i));
    orders.push_back(order);
  }
  REQUIRE(orders.size() == 2);
  CHECK(orders[0] != orders[1]);

  // and the stored truth maps are those rows of the canonical truth
  synth::GroundTruth canon = synth::build_truth(spec);
  VolumeSeries stored = dataio::read_volume_series(dir.file("a") + "/" +
                                                   m1["subjects"][0].get<std::string>() +
                                                   "/truth_sources.vxt");
  REQUIRE(stored.data.rows() == canon.sources.rows());
  for (Eigen::Index i = 0; i < stored.data.rows(); ++i) {
    const Eigen::Index c = orders[0][static_cast<size_t>(i)];
    CHECK((stored.data.row(i).cast<float>().cast<double>() -
           canon.sources.row(c).cast<float>().cast<double>())
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}
