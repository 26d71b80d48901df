// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <doctest.h>

#include "icem/aroma.hpp"
#include "test_util.hpp"

using namespace icem;

TEST_CASE("aroma: edge mask keeps exactly the one-voxel rim") {
  Mask cube = Mask::full(VolumeGrid::axis_aligned(5, 5, 5, 2, 2, 2));
  Mask edge = aroma::edge_mask_from(cube);
  CHECK(edge.v() == 125 - 27);  // a 3x3x3 interior survives erosion
  CHECK(edge.in[grid_index(edge.grid, 2, 2, 2)] == 0);
  CHECK(edge.in[grid_index(edge.grid, 0, 0, 0)] == 1);
  CHECK(edge.in[grid_index(edge.grid, 2, 2, 0)] == 1);

  // a single-slice mask erodes away entirely: everything is rim
  Mask slab = Mask::full(VolumeGrid::axis_aligned(5, 5, 1, 2, 2, 2));
  CHECK(aroma::edge_mask_from(slab).v() == 25);

  // an isolated voxel is its own rim
  Mask dot;
  dot.grid = cube.grid;
  dot.in.assign(static_cast<size_t>(cube.grid.nvox()), 0);
  dot.in[grid_index(dot.grid, 2, 2, 2)] = 1;
  Mask dot_edge = aroma::edge_mask_from(dot);
  CHECK(dot_edge.v() == 1);
  CHECK(dot_edge.in[grid_index(dot.grid, 2, 2, 2)] == 1);
}

TEST_CASE("aroma: high-frequency content splits power at the cutoff") {
  const int t = 256;
  const double tr = 0.5;  // Nyquist 1 Hz, bin width 1/128 Hz
  Eigen::VectorXd low(t), high(t), mix(t);
  for (int n = 0; n < t; ++n) {
    low[n] = std::cos(2.0 * M_PI * 4.0 * n / t);    // 0.03125 Hz
    high[n] = std::cos(2.0 * M_PI * 50.0 * n / t);  // 0.390625 Hz
    mix[n] = 2.0 * low[n] + high[n];
  }
  CHECK(aroma::high_frequency_content(low, tr, 0.10) < 1e-9);
  CHECK(aroma::high_frequency_content(high, tr, 0.10) > 1.0 - 1e-9);
  // exact-bin tones put power 4:1, so the high fraction is 1/5
  CHECK(aroma::high_frequency_content(mix, tr, 0.10) == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(aroma::high_frequency_content(Eigen::VectorXd::Constant(64, 3.0), tr, 0.10) == 0.0);
}

TEST_CASE("aroma: component features isolate csf, edge and motion signatures") {
  const VolumeGrid grid = VolumeGrid::axis_aligned(6, 6, 6, 2, 2, 2);
  const long v = grid.nvox();
  const int t = 128;
  Rng rng(77);

  ica::IcaModel model;
  model.k = 3;
  model.mask = Mask::full(grid);
  model.sources.resize(3, v);
  for (int c = 0; c < 3; ++c)
    for (long j = 0; j < v; ++j) model.sources(c, j) = 1e-6 * rng.normal();
  // at the default 99th percentile only ceil(216/100) = 3 voxels survive
  const std::vector<long> csf_vox = {grid_index(grid, 1, 1, 1), grid_index(grid, 2, 2, 2),
                                     grid_index(grid, 3, 3, 3)};
  const std::vector<long> rim_vox = {grid_index(grid, 0, 0, 0), grid_index(grid, 5, 5, 5),
                                     grid_index(grid, 0, 5, 0)};
  const std::vector<long> deep_vox = {grid_index(grid, 4, 4, 4), grid_index(grid, 4, 3, 3),
                                      grid_index(grid, 3, 4, 4)};
  for (long j : csf_vox) model.sources(0, j) = 7.0;
  for (long j : rim_vox) model.sources(1, j) = -7.0;
  for (long j : deep_vox) model.sources(2, j) = 7.0;

  Mask csf;
  csf.grid = grid;
  csf.in.assign(static_cast<size_t>(v), 0);
  for (long j : csf_vox) csf.in[static_cast<size_t>(j)] = 1;
  Mask edge = aroma::edge_mask_from(model.mask);

  ConfoundMatrix motion;
  motion.names = {"trans_x"};
  motion.cols.resize(t, 1);
  double pos = 0.0;
  for (int n = 0; n < t; ++n) {
    pos += 0.1 * rng.normal();
    motion.cols(n, 0) = pos;
  }

  ica::ComponentSeries series;
  series.tr = 0.5;
  series.series.resize(t, 3);
  series.series.col(0) = motion.cols.col(0);  // tracks motion exactly
  for (int n = 0; n < t; ++n) {
    series.series(n, 1) = std::cos(2.0 * M_PI * 50.0 * n / t);  // 0.39 Hz
    series.series(n, 2) = std::cos(2.0 * M_PI * 2.0 * n / t);   // 0.016 Hz
  }

  aroma::Thresholds thr;
  std::vector<aroma::Features> f =
      aroma::component_features(model, series, edge, &csf, motion, thr);
  REQUIRE(f.size() == 3);
  for (const auto& feat : f) {
    CHECK(feat.hfc >= 0.0);
    CHECK(feat.hfc <= 1.0);
    CHECK(feat.edge_frac >= 0.0);
    CHECK(feat.edge_frac <= 1.0);
    CHECK(feat.csf_frac >= 0.0);
    CHECK(feat.csf_frac <= 1.0);
    CHECK(feat.motion_corr >= 0.0);
    CHECK(feat.motion_corr <= 1.0);
  }
  CHECK(f[0].csf_frac == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f[0].edge_frac == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[0].motion_corr == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f[1].edge_frac == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f[1].csf_frac == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[1].hfc > 0.95);
  CHECK(f[2].edge_frac == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[2].csf_frac == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f[2].hfc < 0.05);

  std::vector<aroma::Label> labels = aroma::classify_all(f, thr);
  CHECK(labels[0] == aroma::Label::Noise);   // csf occupancy
  CHECK(labels[1] == aroma::Label::Noise);   // high-frequency series
  CHECK(labels[2] == aroma::Label::Signal);  // clean interior component

  // omitting the CSF segmentation leaves csf_frac at zero
  std::vector<aroma::Features> no_csf =
      aroma::component_features(model, series, edge, nullptr, motion, thr);
  CHECK(no_csf[0].csf_frac == 0.0);

  // and with no motion columns the coupling feature stays zero
  ConfoundMatrix none;
  none.cols.resize(0, 0);
  std::vector<aroma::Features> no_motion =
      aroma::component_features(model, series, edge, &csf, none, thr);
  CHECK(no_motion[0].motion_corr == 0.0);
}

TEST_CASE("aroma: decision rule follows the three clauses strictly") {
  aroma::Thresholds t;
  aroma::Features f;
  CHECK(aroma::classify(f, t) == aroma::Label::Signal);  // all zeros

  f.csf_frac = 0.2;
  CHECK(aroma::classify(f, t) == aroma::Label::Noise);
  f.csf_frac = 0.10;  // exactly at threshold: not above, so signal
  CHECK(aroma::classify(f, t) == aroma::Label::Signal);
  f.csf_frac = 0.0;

  f.hfc = 0.36;
  CHECK(aroma::classify(f, t) == aroma::Label::Noise);
  f.hfc = 0.35;
  CHECK(aroma::classify(f, t) == aroma::Label::Signal);
  f.hfc = 0.0;

  // the edge clause needs motion coupling as well
  f.edge_frac = 0.3;
  f.motion_corr = 0.5;
  CHECK(aroma::classify(f, t) == aroma::Label::Noise);
  f.motion_corr = 0.44;
  CHECK(aroma::classify(f, t) == aroma::Label::Signal);
  f.motion_corr = 0.9;
  f.edge_frac = 0.2;
  CHECK(aroma::classify(f, t) == aroma::Label::Signal);

  std::vector<aroma::Features> batch = {aroma::Features{}, f};
  std::vector<aroma::Label> lab = aroma::classify_all(batch, t);
  CHECK(lab[0] == aroma::classify(batch[0], t));
  CHECK(lab[1] == aroma::classify(batch[1], t));
}
