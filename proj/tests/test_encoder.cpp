// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "icem/encoder.hpp"
#include "test_util.hpp"

using namespace icem;

namespace {

Eigen::MatrixXd randn(int r, int c, uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Population z-scoring, written independently of the library helpers.
Eigen::MatrixXd zscore_pop(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - mu).square().mean());
    out.col(j) = (x.col(j).array() - mu) / sd;
  }
  return out;
}

// Dense symmetric solve by Gauss elimination with partial pivoting; the
// oracle shares no code path with Eigen's factorizations.
Eigen::MatrixXd gauss_solve(Eigen::MatrixXd a, Eigen::MatrixXd b) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index col = 0; col < n; ++col) {
    Eigen::Index piv = col;
    for (Eigen::Index r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    a.row(col).swap(a.row(piv));
    b.row(col).swap(b.row(piv));
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col) / a(col, col);
      a.row(r) -= f * a.row(col);
      b.row(r) -= f * b.row(col);
    }
  }
  for (Eigen::Index r = 0; r < n; ++r) b.row(r) /= a(r, r);
  return b;
}

}  // namespace

TEST_CASE("encoder: contiguous folds tile the run") {
  auto f = encoder::make_folds(10, 5, encoder::FoldScheme::ContiguousBlocks, {});
  REQUIRE(f.size() == 5);
  for (int k = 0; k < 5; ++k) {
    REQUIRE(f[static_cast<size_t>(k)].size() == 2);
    CHECK(f[static_cast<size_t>(k)][0] == 2 * k);
    CHECK(f[static_cast<size_t>(k)][1] == 2 * k + 1);
  }
  try {
    (void)encoder::make_folds(9, 5, encoder::FoldScheme::ContiguousBlocks, {});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::FoldInfeasible);
  }
}

TEST_CASE("encoder: by-story folds follow first appearance round-robin") {
  std::vector<int> stories = {5, 5, 7, 7, 9, 9, 11, 11, 13, 13, 15, 15};
  auto f = encoder::make_folds(12, 5, encoder::FoldScheme::ByStory, stories);
  CHECK(f[0] == std::vector<int>{0, 1, 10, 11});  // stories 5 and 15 share fold 0
  CHECK(f[1] == std::vector<int>{2, 3});
  CHECK(f[4] == std::vector<int>{8, 9});

  std::vector<int> few = {1, 1, 2, 2, 3, 3, 4, 4};
  try {
    (void)encoder::make_folds(8, 5, encoder::FoldScheme::ByStory, few);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::FoldInfeasible);
  }
}

TEST_CASE("encoder: noiseless targets are recovered at vanishing regularization") {
  const int t = 200, d = 8, m = 3;
  Eigen::MatrixXd x = randn(t, d, 101);
  Eigen::MatrixXd beta = randn(d, m, 102);
  Eigen::VectorXd c(m);
  c << 0.5, -2.0, 7.0;
  Eigen::MatrixXd y = (zscore_pop(x) * beta).rowwise() + c.transpose();

  encoder::RidgeSpec spec;
  spec.alpha_grid = {1e-8};
  encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);
  CHECK(test::max_abs_diff(model.weights, beta) < 1e-8);
  CHECK((model.intercepts - c).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(test::max_abs_diff(encoder::predict(model, x), y) < 1e-7);
}

TEST_CASE("encoder: extreme regularization collapses to the target mean") {
  const int t = 80, d = 6, m = 2;
  Eigen::MatrixXd x = randn(t, d, 103);
  Eigen::MatrixXd y = randn(t, m, 104);
  encoder::RidgeSpec spec;
  spec.alpha_grid = {1e12};
  encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);
  CHECK(model.weights.cwiseAbs().maxCoeff() < 1e-6);
  Eigen::MatrixXd pred = encoder::predict(model, x);
  for (Eigen::Index j = 0; j < m; ++j)
    CHECK((pred.col(j).array() - y.col(j).mean()).abs().maxCoeff() < 1e-4);
}

TEST_CASE("encoder: solutions match explicit normal equations across the grid") {
  for (uint64_t inst = 0; inst < 6; ++inst) {
    const int t = 60, d = 10, m = 3;
    Eigen::MatrixXd x = randn(t, d, 200 + inst);
    Eigen::MatrixXd y = randn(t, m, 300 + inst);
    for (double alpha : encoder::RidgeSpec::default_grid()) {
      encoder::RidgeSpec spec;
      spec.alpha_grid = {alpha};
      encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);

      Eigen::MatrixXd xs = zscore_pop(x);
      Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
      Eigen::MatrixXd g = xs.transpose() * xs;
      g.diagonal().array() += alpha;
      Eigen::MatrixXd w = gauss_solve(g, xs.transpose() * yc);
      CHECK(test::max_abs_diff(model.weights, w) < 1e-9);
      CHECK((model.intercepts.transpose() - y.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("encoder: weight norms shrink monotonically with alpha") {
  const int t = 90, d = 7, m = 2;
  Eigen::MatrixXd x = randn(t, d, 105);
  Eigen::MatrixXd y = randn(t, m, 106);
  std::vector<double> prev(m, std::numeric_limits<double>::infinity());
  for (double alpha : encoder::RidgeSpec::default_grid()) {
    encoder::RidgeSpec spec;
    spec.alpha_grid = {alpha};
    encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);
    for (int j = 0; j < m; ++j) {
      const double n = model.weights.col(j).norm();
      CHECK(n <= prev[static_cast<size_t>(j)] + 1e-12);
      prev[static_cast<size_t>(j)] = n;
    }
  }
}

TEST_CASE("encoder: fold scores ignore affine changes of the target") {
  const int t = 100, d = 6, m = 2;
  Eigen::MatrixXd x = randn(t, d, 107);
  Eigen::MatrixXd beta = randn(d, m, 108);
  Eigen::MatrixXd y = zscore_pop(x) * beta + 0.8 * randn(t, m, 109);

  encoder::RidgeSpec spec;  // full default grid
  encoder::EncodingModel a = encoder::fit_ridge(x, y, spec, 0);
  encoder::EncodingModel b = encoder::fit_ridge(x, (2.0 * y.array() + 3.0).matrix(), spec, 0);
  CHECK((a.alpha - b.alpha).cwiseAbs().maxCoeff() == 0.0);
  CHECK(test::max_abs_diff(a.cv_scores, b.cv_scores) < 1e-9);
}

TEST_CASE("encoder: exact score ties resolve to the smallest alpha") {
  const int t = 60, d = 4;
  Eigen::MatrixXd x = randn(t, d, 110);
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(t, 1, 5.0);  // every alpha scores 0
  encoder::RidgeSpec spec;
  spec.alpha_grid = {100.0, 1.0, 10.0};
  encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);
  CHECK(model.alpha[0] == 1.0);
  CHECK(model.weights.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encoder: out-of-fold predictions never see their own targets") {
  const int t = 60, d = 5, m = 2;
  Eigen::MatrixXd x = randn(t, d, 111);
  Eigen::MatrixXd y = randn(t, m, 112);
  auto folds = encoder::make_folds(t, 5, encoder::FoldScheme::ContiguousBlocks, {});
  Eigen::VectorXd alphas = Eigen::VectorXd::Constant(m, 10.0);

  Eigen::MatrixXd oof = encoder::cv_oof_predictions(x, y, folds, alphas);
  Eigen::MatrixXd y2 = y;
  for (int r : folds[0]) y2.row(r).array() += 1000.0;  // poison fold 0's targets
  Eigen::MatrixXd oof2 = encoder::cv_oof_predictions(x, y2, folds, alphas);

  for (int r : folds[0]) CHECK((oof.row(r) - oof2.row(r)).cwiseAbs().maxCoeff() == 0.0);
  double elsewhere = 0.0;
  for (size_t f = 1; f < folds.size(); ++f)
    for (int r : folds[f]) elsewhere = std::max(elsewhere, (oof.row(r) - oof2.row(r)).cwiseAbs().maxCoeff());
  CHECK(elsewhere > 1.0);  // other folds train on the poisoned rows
}

TEST_CASE("encoder: prediction at the training column means returns the intercepts") {
  const int t = 50, d = 4, m = 2;
  Eigen::MatrixXd x = randn(t, d, 113);
  Eigen::MatrixXd y = randn(t, m, 114);
  encoder::RidgeSpec spec;
  spec.alpha_grid = {10.0};
  encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);
  Eigen::MatrixXd probe = model.col_mean.transpose();
  Eigen::MatrixXd pred = encoder::predict(model, probe);
  CHECK((pred.row(0).transpose() - model.intercepts).cwiseAbs().maxCoeff() < 1e-12);

  // repeated fits are bitwise identical
  encoder::EncodingModel again = encoder::fit_ridge(x, y, spec, 7);
  CHECK(test::max_abs_diff(model.weights, again.weights) == 0.0);
}

TEST_CASE("encoder: target adapters expose components, voxels and parcel means") {
  VolumeSeries s = test::make_series(2, 2, 1, 6, 2.0, 115);
  for (int j = 0; j < 4; ++j) s.data.col(j).setConstant(j + 1.0);

  CHECK(test::max_abs_diff(encoder::targets_voxels(s), s.data) == 0.0);

  ica::ComponentSeries cs;
  cs.series = randn(6, 3, 116);
  CHECK(test::max_abs_diff(encoder::targets_components(cs), cs.series) == 0.0);

  Atlas atlas;
  atlas.grid = s.grid();
  atlas.names = {"front", "back"};
  atlas.maps = {{1, 1, 0, 0}, {0, 0, 1, 1}};
  Eigen::MatrixXd roi = encoder::targets_roi(s, atlas);
  REQUIRE(roi.cols() == 2);
  CHECK((roi.col(0).array() - 1.5).abs().maxCoeff() == 0.0);
  CHECK((roi.col(1).array() - 3.5).abs().maxCoeff() == 0.0);

  Atlas empty = atlas;
  empty.maps[1] = {0, 0, 0, 0};
  try {
    (void)encoder::targets_roi(s, empty);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::EmptyParcel);
  }
}

TEST_CASE("encoder: models survive a save/load round trip") {
  test::TempDir dir("encmodel");
  const int t = 70, d = 5, m = 3;
  Eigen::MatrixXd x = randn(t, d, 117);
  Eigen::MatrixXd y = randn(t, m, 118);
  encoder::RidgeSpec spec;
  encoder::EncodingModel model = encoder::fit_ridge(x, y, spec, 0);

  std::vector<std::string> dn, tn;
  for (int j = 0; j < d; ++j) dn.push_back("x" + std::to_string(j));
  for (int j = 0; j < m; ++j) tn.push_back("y" + std::to_string(j));
  encoder::save_encoding_model(dir.file("enc"), model, dn, tn);
  encoder::EncodingModel back = encoder::load_encoding_model(dir.file("enc"));

  Eigen::MatrixXd probe = randn(4, d, 119);
  CHECK(test::max_abs_diff(encoder::predict(model, probe), encoder::predict(back, probe)) == 0.0);
  CHECK((model.alpha - back.alpha).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder: malformed inputs are rejected") {
  Eigen::MatrixXd x = randn(30, 3, 120);
  Eigen::MatrixXd y = randn(29, 1, 121);
  encoder::RidgeSpec spec;
  try {
    (void)encoder::fit_ridge(x, y, spec, 0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ShapeMismatch);
  }

  Eigen::MatrixXd bad = randn(30, 1, 122);
  bad(3, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)encoder::fit_ridge(x, bad, spec, 0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::NonFiniteData);
  }

  encoder::RidgeSpec zero;
  zero.alpha_grid = {0.0};
  CHECK_THROWS_AS((void)encoder::fit_ridge(x, randn(30, 1, 123), zero, 0), Error);
}
