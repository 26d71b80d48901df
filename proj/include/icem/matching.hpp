// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icem/ica.hpp"
#include "icem/types.hpp"

namespace icem::matching {

// Keep the top (100 - percentile)% of voxels of a spatial map by absolute
// value. The count is ceil(V * (100 - percentile) / 100); voxels tied with
// the cutoff value are all retained.
struct ThresholdedMap {
  Eigen::VectorXd values;         // map with non-retained voxels zeroed
  std::vector<uint8_t> retained;  // per masked voxel
  double cutoff = 0.0;            // absolute-value threshold actually applied
  int n_retained = 0;
};

ThresholdedMap threshold_map(const Eigen::VectorXd& map, double percentile);

struct AtlasMatch {
  // forward view: one row per component
  std::vector<int> best_parcel;
  std::vector<double> best_r;
  std::vector<uint8_t> low_confidence;  // best r below 0.1
  std::vector<uint8_t> tied;            // another parcel reached the same r
  // reverse view: one entry per parcel
  std::vector<int> parcel_best_component;
  std::vector<double> parcel_best_r;
};

// Correlate each component's thresholded map with each parcel and keep the
// best parcel per component (ties resolve to the earlier parcel). The map
// side is binarized by default; `weighted` keeps absolute weights instead.
AtlasMatch match_atlas(const ica::IcaModel& model, const Atlas& atlas, double percentile = 99.0,
                       bool weighted = false);

enum class Direction { TemporalFirst, SpatialFirst };

struct SubjectBundle {
  std::string id;
  ica::IcaModel model;          // sign-aligned
  Eigen::MatrixXd test_series;  // T x K on a shared held-out story
  Eigen::VectorXd predictivity; // K, held-out prediction score per component
};

struct MatchPair {
  int ref_component = -1;
  int other_component = -1;
  double match_r = 0.0;  // |correlation| in the matching domain
  double eval_r = 0.0;   // |correlation| in the held-out domain
};

struct MatchResult {
  std::string ref_id, other_id;
  Direction direction = Direction::TemporalFirst;
  std::vector<MatchPair> pairs;  // one per reference component
};

// Match each reference component to its best counterpart in `other` by
// absolute correlation in one domain (temporal: test-story series;
// spatial: source maps) and report |r| in the other domain as evaluation.
// Magnitudes, not signed r: each subject's decomposition carries its own
// arbitrary per-component polarity.
MatchResult match_subjects_pair(const SubjectBundle& ref, const SubjectBundle& other,
                                Direction direction);

// Leave-one-subject-out summary: each subject in turn is the reference,
// its components are ordered by predictivity, and the evaluation
// correlations of the top_n best components are averaged over the other
// subjects. rank_mean/rank_sd are across references, one entry per rank.
struct LooSummary {
  Direction direction = Direction::TemporalFirst;
  int top_n = 0;
  std::vector<double> rank_mean;
  std::vector<double> rank_sd;
  // per reference, per rank: mean evaluation r over the other subjects
  std::vector<std::vector<double>> per_reference;
};

LooSummary loo_aggregate(const std::vector<SubjectBundle>& subjects, Direction direction,
                         int top_n);

}  // namespace icem::matching
