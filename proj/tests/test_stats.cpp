// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "icem/stats.hpp"
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

// Step-up rule spelled out directly: largest k with p_(k) <= q*k/m, then
// reject everything at or below that threshold.
std::vector<uint8_t> bh_oracle(const std::vector<double>& p, double q) {
  const size_t m = p.size();
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  double thresh = -1.0;
  for (size_t k = m; k >= 1; --k) {
    if (sorted[k - 1] <= q * static_cast<double>(k) / static_cast<double>(m)) {
      thresh = sorted[k - 1];
      break;
    }
  }
  std::vector<uint8_t> out(m, 0);
  for (size_t i = 0; i < m; ++i) out[i] = (thresh >= 0.0 && p[i] <= thresh) ? 1 : 0;
  return out;
}

}  // namespace

TEST_CASE("stats: pearson basics") {
  Eigen::VectorXd x(3), y(3);
  x << 1, 2, 3;
  y << 1, 2, 4;
  CHECK(stats::pearson(x, x) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(stats::pearson(x, (-x).eval()) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(stats::pearson(x, y) == doctest::Approx(std::sqrt(27.0 / 28.0)).epsilon(1e-14));

  // invariant under positive affine maps, negated by sign flips
  Eigen::VectorXd a = randn(40, 1, 1).col(0), b = randn(40, 1, 2).col(0);
  const double r = stats::pearson(a, b);
  CHECK(stats::pearson((3.0 * a.array() + 1.0).matrix(), b) == doctest::Approx(r).epsilon(1e-12));
  CHECK(stats::pearson((-2.0 * a.array()).matrix(), b) == doctest::Approx(-r).epsilon(1e-12));

  Eigen::VectorXd flat = Eigen::VectorXd::Constant(5, 2.0);
  try {
    (void)stats::pearson(flat, Eigen::VectorXd::LinSpaced(5, 0, 1));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ConstantInput);
  }
  CHECK(stats::pearson_or_zero(flat, Eigen::VectorXd::LinSpaced(5, 0, 1)) == 0.0);
}

TEST_CASE("stats: row shuffling moves whole blocks") {
  Eigen::MatrixXd x(8, 1);
  for (int i = 0; i < 8; ++i) x(i, 0) = i;

  Rng rng(5);
  Eigen::MatrixXd y = stats::shuffle_rows(x, rng, 3);
  // blocks are [0 1 2], [3 4 5], [6 7]; output must be a concatenation of
  // those blocks in some order
  std::vector<std::vector<double>> blocks = {{0, 1, 2}, {3, 4, 5}, {6, 7}};
  std::vector<int> order = {0, 1, 2};
  std::sort(order.begin(), order.end());
  bool matched = false;
  do {
    std::vector<double> cat;
    for (int b : order)
      for (double v : blocks[static_cast<size_t>(b)]) cat.push_back(v);
    bool same = true;
    for (int i = 0; i < 8; ++i) same = same && (y(i, 0) == cat[static_cast<size_t>(i)]);
    matched = matched || same;
  } while (std::next_permutation(order.begin(), order.end()));
  CHECK(matched);

  // single-row mode permutes rows: same multiset, same multicolumn rows
  Eigen::MatrixXd wide(6, 2);
  for (int i = 0; i < 6; ++i) {
    wide(i, 0) = i;
    wide(i, 1) = 10 * i;
  }
  Rng rng2(6);
  Eigen::MatrixXd p = stats::shuffle_rows(wide, rng2, 0);
  std::vector<double> seen;
  for (int i = 0; i < 6; ++i) {
    CHECK(p(i, 1) == 10 * p(i, 0));  // rows stay intact
    seen.push_back(p(i, 0));
  }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < 6; ++i) CHECK(seen[static_cast<size_t>(i)] == i);

  // deterministic given the generator state
  Rng r1(7), r2(7);
  CHECK(test::max_abs_diff(stats::shuffle_rows(wide, r1, 0), stats::shuffle_rows(wide, r2, 0)) ==
        0.0);
}

TEST_CASE("stats: permutation test saturates on a noiseless dependence") {
  const int t = 80;
  Eigen::MatrixXd feat = randn(t, 1, 11);
  // target is exactly the one-TR-lagged feature, inside the tested lag set
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(t, 1);
  for (int i = 1; i < t; ++i) y(i, 0) = feat(i - 1, 0);

  encoder::RidgeSpec ridge;
  ridge.alpha_grid = {1e-6};
  stats::PermSpec perm;
  perm.n_perm = 40;
  perm.seed = 9;
  stats::PermResult res = stats::permutation_test(feat, y, ridge, perm);
  CHECK(res.observed[0] > 0.99);
  CHECK(res.p[0] == doctest::Approx(1.0 / 41.0).epsilon(1e-12));
  CHECK(res.null_r.rows() == 40);
  CHECK(res.alpha[0] == 1e-6);
}

TEST_CASE("stats: permutation p-values are reproducible and properly bounded") {
  const int t = 60;
  Eigen::MatrixXd feat = randn(t, 2, 21);
  Eigen::MatrixXd y = randn(t, 3, 22);
  encoder::RidgeSpec ridge;
  stats::PermSpec perm;
  perm.n_perm = 25;
  perm.seed = 13;

  stats::PermResult a = stats::permutation_test(feat, y, ridge, perm);
  stats::PermResult b = stats::permutation_test(feat, y, ridge, perm);
  CHECK((a.p - b.p).cwiseAbs().maxCoeff() == 0.0);
  CHECK(test::max_abs_diff(a.null_r, b.null_r) == 0.0);

  perm.jobs = 3;  // parallel draws reuse per-draw generators
  stats::PermResult c = stats::permutation_test(feat, y, ridge, perm);
  CHECK(test::max_abs_diff(a.null_r, c.null_r) == 0.0);
  CHECK((a.p - c.p).cwiseAbs().maxCoeff() == 0.0);

  for (Eigen::Index j = 0; j < a.p.size(); ++j) {
    CHECK(a.p[j] >= 1.0 / 26.0);
    CHECK(a.p[j] <= 1.0);
  }

  perm.jobs = 1;
  perm.block_len = 10;  // block shuffling is a valid null as well
  stats::PermResult d = stats::permutation_test(feat, y, ridge, perm);
  for (Eigen::Index j = 0; j < d.p.size(); ++j) {
    CHECK(d.p[j] >= 1.0 / 26.0);
    CHECK(d.p[j] <= 1.0);
  }

  stats::PermSpec bad;
  bad.n_perm = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("stats: benjamini-hochberg matches the explicit step-up rule") {
  std::vector<uint8_t> flags = stats::bh_fdr({0.01, 0.02, 0.03, 0.5}, 0.05);
  CHECK(flags == std::vector<uint8_t>{1, 1, 1, 0});

  CHECK(stats::bh_fdr({1.0, 1.0, 1.0}, 0.05) == std::vector<uint8_t>{0, 0, 0});
  CHECK(stats::bh_fdr({0.04}, 0.05) == std::vector<uint8_t>{1});

  // equal p-values share a decision
  std::vector<uint8_t> eq = stats::bh_fdr({0.02, 0.02, 0.9}, 0.05);
  CHECK(eq[0] == eq[1]);

  Rng rng(31);
  for (int draw = 0; draw < 200; ++draw) {
    const int m = 1 + static_cast<int>(rng.uniform_int(50));
    std::vector<double> p(static_cast<size_t>(m));
    for (auto& v : p) v = rng.uniform01();
    // sprinkle duplicates so the tie rule is exercised
    if (m > 3) p[1] = p[0];
    std::vector<uint8_t> got = stats::bh_fdr(p, 0.1);
    CHECK(got == bh_oracle(p, 0.1));
    // monotonicity: anything below a rejected p is rejected too
    for (size_t i = 0; i < p.size(); ++i)
      for (size_t j = 0; j < p.size(); ++j)
        if (got[i] && p[j] <= p[i]) CHECK(got[j]);
  }
}

TEST_CASE("stats: component ranking is dense, 1-basedized and tie-stable") {
  Eigen::VectorXd s(3);
  s << 0.3, 0.9, 0.1;
  CHECK(stats::rank_components(s) == std::vector<int>{2, 1, 3});

  Eigen::VectorXd ties(4);
  ties << 0.5, 0.7, 0.5, 0.2;
  // equal scores rank by component index: c1 first, then c0, c2, c3
  CHECK(stats::rank_components(ties) == std::vector<int>{2, 1, 3, 4});

  Eigen::VectorXd many = randn(20, 1, 41).col(0);
  std::vector<int> r = stats::rank_components(many);
  std::vector<int> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<size_t>(i)] == i + 1);
  // the best score carries rank 1
  Eigen::Index best;
  many.maxCoeff(&best);
  CHECK(r[static_cast<size_t>(best)] == 1);
}
