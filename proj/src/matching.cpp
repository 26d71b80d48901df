// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/matching.hpp"

#include <algorithm>
#include <cmath>

#include "icem/common.hpp"
#include "icem/stats.hpp"

namespace icem::matching {

ThresholdedMap threshold_map(const Eigen::VectorXd& map, double percentile) {
  require(percentile > 0.0 && percentile < 100.0, Err::PercentileOutOfRange,
          "threshold percentile must lie strictly between 0 and 100");
  const Eigen::Index v = map.size();
  require(v >= 1, Err::ShapeMismatch, "cannot threshold an empty map");
  require_finite(map, "spatial map");
  Eigen::VectorXd mag = map.cwiseAbs();
  require(mag.maxCoeff() > 0.0, Err::AllZeroSource, "cannot threshold an all-zero map");
  const auto n_keep = static_cast<Eigen::Index>(
      std::ceil(static_cast<double>(v) * (100.0 - percentile) / 100.0));
  std::vector<double> work(mag.data(), mag.data() + v);
  std::nth_element(work.begin(), work.begin() + (n_keep - 1), work.end(),
                   std::greater<double>());
  ThresholdedMap out;
  out.cutoff = work[static_cast<size_t>(n_keep - 1)];
  out.values = Eigen::VectorXd::Zero(v);
  out.retained.assign(static_cast<size_t>(v), 0);
  for (Eigen::Index i = 0; i < v; ++i) {
    if (mag[i] >= out.cutoff) {
      out.values[i] = map[i];
      out.retained[static_cast<size_t>(i)] = 1;
      ++out.n_retained;
    }
  }
  return out;
}

AtlasMatch match_atlas(const ica::IcaModel& model, const Atlas& atlas, double percentile,
                       bool weighted) {
  require(model.mask.grid.same_geometry(atlas.grid), Err::GridMismatch,
          "model and atlas are on different grids");
  const Eigen::Index k = model.sources.rows();
  const Eigen::Index v = model.sources.cols();
  const size_t np = atlas.maps.size();

  // Parcel indicator vectors over the masked voxels.
  const auto lin = model.mask.linear_indices();
  std::vector<Eigen::Index> col_of(model.mask.grid.nvox(), -1);
  for (size_t i = 0; i < lin.size(); ++i) col_of[lin[i]] = static_cast<Eigen::Index>(i);
  std::vector<Eigen::VectorXd> parcel(np);
  for (size_t p = 0; p < np; ++p) {
    parcel[p] = Eigen::VectorXd::Zero(v);
    Eigen::Index hit = 0;
    const auto& member = atlas.maps[p];
    for (size_t vox = 0; vox < member.size(); ++vox) {
      if (member[vox] && col_of[vox] >= 0) {
        parcel[p][col_of[vox]] = 1.0;
        ++hit;
      }
    }
    require(hit > 0, Err::EmptyParcel,
            "parcel '" + atlas.names[p] + "' has no voxels inside the analysis mask");
  }

  AtlasMatch out;
  out.best_parcel.assign(static_cast<size_t>(k), -1);
  out.best_r.assign(static_cast<size_t>(k), 0.0);
  out.low_confidence.assign(static_cast<size_t>(k), 0);
  out.tied.assign(static_cast<size_t>(k), 0);
  out.parcel_best_component.assign(np, -1);
  out.parcel_best_r.assign(np, 0.0);

  for (Eigen::Index c = 0; c < k; ++c) {
    const ThresholdedMap tm = threshold_map(model.sources.row(c), percentile);
    Eigen::VectorXd x(v);
    for (Eigen::Index i = 0; i < v; ++i)
      x[i] = weighted ? std::abs(tm.values[i])
                      : static_cast<double>(tm.retained[static_cast<size_t>(i)]);
    for (size_t p = 0; p < np; ++p) {
      const double r = stats::pearson_or_zero(x, parcel[p]);
      const size_t ci = static_cast<size_t>(c);
      if (out.best_parcel[ci] < 0 || r > out.best_r[ci]) {
        out.best_parcel[ci] = static_cast<int>(p);
        out.best_r[ci] = r;
        out.tied[ci] = 0;
      } else if (r == out.best_r[ci]) {
        out.tied[ci] = 1;
      }
      if (out.parcel_best_component[p] < 0 || r > out.parcel_best_r[p]) {
        out.parcel_best_component[p] = static_cast<int>(c);
        out.parcel_best_r[p] = r;
      }
    }
    out.low_confidence[static_cast<size_t>(c)] = out.best_r[static_cast<size_t>(c)] < 0.1 ? 1 : 0;
  }
  return out;
}

namespace {

// Best counterpart by |correlation| over the given K x * rows/columns.
// Sources carry an arbitrary sign per subject (sign_align only orients maps
// within one decomposition), so correspondence must ignore polarity.
MatchPair best_match(int ref_comp, const Eigen::VectorXd& ref_vec,
                     const std::vector<Eigen::VectorXd>& candidates) {
  MatchPair pair;
  pair.ref_component = ref_comp;
  for (size_t j = 0; j < candidates.size(); ++j) {
    const double r = std::abs(stats::pearson_or_zero(ref_vec, candidates[j]));
    if (pair.other_component < 0 || r > pair.match_r) {
      pair.other_component = static_cast<int>(j);
      pair.match_r = r;
    }
  }
  return pair;
}

}  // namespace

MatchResult match_subjects_pair(const SubjectBundle& ref, const SubjectBundle& other,
                                Direction direction) {
  require(ref.model.mask.grid.same_geometry(other.model.mask.grid), Err::GridMismatch,
          "subjects '" + ref.id + "' and '" + other.id + "' are on different grids");
  require(ref.model.sources.cols() == other.model.sources.cols(), Err::MaskMismatch,
          "subjects '" + ref.id + "' and '" + other.id + "' disagree on masked voxel count");
  require(ref.test_series.rows() == other.test_series.rows() && ref.test_series.rows() >= 2,
          Err::NoSharedStory,
          "temporal matching needs component series of equal length on a shared story");
  require(ref.test_series.cols() == ref.model.sources.rows() &&
              other.test_series.cols() == other.model.sources.rows(),
          Err::ShapeMismatch, "series column count must equal component count");

  const Eigen::Index k_ref = ref.model.sources.rows();
  const Eigen::Index k_other = other.model.sources.rows();
  std::vector<Eigen::VectorXd> other_series(static_cast<size_t>(k_other));
  std::vector<Eigen::VectorXd> other_maps(static_cast<size_t>(k_other));
  for (Eigen::Index j = 0; j < k_other; ++j) {
    other_series[static_cast<size_t>(j)] = other.test_series.col(j);
    other_maps[static_cast<size_t>(j)] = other.model.sources.row(j);
  }

  MatchResult res;
  res.ref_id = ref.id;
  res.other_id = other.id;
  res.direction = direction;
  res.pairs.resize(static_cast<size_t>(k_ref));
  for (Eigen::Index c = 0; c < k_ref; ++c) {
    MatchPair pair;
    if (direction == Direction::TemporalFirst) {
      pair = best_match(static_cast<int>(c), ref.test_series.col(c), other_series);
      pair.eval_r =
          std::abs(stats::pearson_or_zero(ref.model.sources.row(c),
                                          other_maps[static_cast<size_t>(pair.other_component)]));
    } else {
      pair = best_match(static_cast<int>(c), ref.model.sources.row(c), other_maps);
      pair.eval_r = std::abs(stats::pearson_or_zero(
          ref.test_series.col(c), other_series[static_cast<size_t>(pair.other_component)]));
    }
    res.pairs[static_cast<size_t>(c)] = pair;
  }
  return res;
}

LooSummary loo_aggregate(const std::vector<SubjectBundle>& subjects, Direction direction,
                         int top_n) {
  require(subjects.size() >= 2, Err::TooFewSubjects,
          "cross-subject aggregation needs at least 2 subjects");
  require(top_n >= 1, Err::Config, "top_n must be positive");
  for (const auto& s : subjects)
    require(s.predictivity.size() == s.model.sources.rows(), Err::ShapeMismatch,
            "subject '" + s.id + "' needs one predictivity score per component");

  int n = top_n;
  for (const auto& s : subjects) n = std::min<int>(n, static_cast<int>(s.predictivity.size()));
  if (n < top_n)
    logging::warn("top_n clipped to " + std::to_string(n) +
                  ", the smallest component count across subjects");

  LooSummary sum;
  sum.direction = direction;
  sum.top_n = n;
  for (size_t ref = 0; ref < subjects.size(); ++ref) {
    const auto& r = subjects[ref];
    const auto rank = [&r] {
      std::vector<int> idx(static_cast<size_t>(r.predictivity.size()));
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      std::sort(idx.begin(), idx.end(), [&r](int a, int b) {
        const double sa = r.predictivity[a], sb = r.predictivity[b];
        if (sa != sb) return sa > sb;
        return a < b;
      });
      return idx;
    }();
    std::vector<double> per_rank(static_cast<size_t>(n), 0.0);
    for (size_t other = 0; other < subjects.size(); ++other) {
      if (other == ref) continue;
      const MatchResult m = match_subjects_pair(r, subjects[other], direction);
      for (int pos = 0; pos < n; ++pos)
        per_rank[static_cast<size_t>(pos)] +=
            m.pairs[static_cast<size_t>(rank[static_cast<size_t>(pos)])].eval_r;
    }
    for (auto& v : per_rank) v /= static_cast<double>(subjects.size() - 1);
    sum.per_reference.push_back(std::move(per_rank));
  }

  const size_t n_ranks = sum.per_reference.front().size();
  for (const auto& pr : sum.per_reference)
    require(pr.size() == n_ranks, Err::ShapeMismatch,
            "subjects disagree on component count for rank aggregation");
  sum.rank_mean.assign(n_ranks, 0.0);
  sum.rank_sd.assign(n_ranks, 0.0);
  for (size_t pos = 0; pos < n_ranks; ++pos) {
    double mu = 0.0;
    for (const auto& pr : sum.per_reference) mu += pr[pos];
    mu /= static_cast<double>(sum.per_reference.size());
    double var = 0.0;
    for (const auto& pr : sum.per_reference) var += (pr[pos] - mu) * (pr[pos] - mu);
    var /= static_cast<double>(sum.per_reference.size());
    sum.rank_mean[pos] = mu;
    sum.rank_sd[pos] = std::sqrt(var);
  }
  return sum;
}

}  // namespace icem::matching
