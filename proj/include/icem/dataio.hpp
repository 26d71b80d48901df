// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "icem/types.hpp"

namespace icem::dataio {

// Native volume-series container: <path> is a JSON header, <path>.raw holds
// the body as little-endian float32, one masked volume after another in
// grid scan order. Header records grid, tr, mask (run-length encoded) and
// content digests so corrupt or truncated pairs are rejected.
void write_volume_series(const std::string& path, const VolumeSeries& s);
VolumeSeries read_volume_series(const std::string& path);

// Read-only NIfTI-1 import (.nii, single file). Supports float32/float64/
// int16, applies scl_slope/scl_inter, handles byte-swapped files. The
// result carries a full-grid mask; pair with mask_from_volume/apply_mask.
VolumeSeries import_nifti(const std::string& path);

// Mask = voxels whose first-volume value is nonzero.
Mask mask_from_volume(const VolumeSeries& vol);

// Restrict a series to a sub-mask (every voxel of m must already be
// included in s.mask).
VolumeSeries apply_mask(const VolumeSeries& s, const Mask& m);

// Tab-separated tables. Confounds: header row of column names, T numeric
// rows ("n/a" tokens load as 0 with a warning). Word tables: columns
// token/onset/offset and optional surprisal.
ConfoundMatrix read_confounds_tsv(const std::string& path);
void write_confounds_tsv(const std::string& path, const ConfoundMatrix& c);
WordTable read_word_table_tsv(const std::string& path);
void write_word_table_tsv(const std::string& path, const WordTable& t);

// Per-word embeddings: <path> is raw little-endian float32, row-major
// n_words x dim; <path>.json records the shape and a digest.
EmbeddingTable read_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const EmbeddingTable& e);

// Atlas = native label volume (one volume, integer-valued) plus a JSON
// object mapping label numbers to parcel names. Parcels are ordered by
// ascending label.
Atlas read_atlas(const std::string& vol_path, const std::string& names_path);
void write_atlas(const std::string& vol_path, const std::string& names_path, const Atlas& a,
                 double tr = 1.0);

// Generic numeric TSV with a header row; used for component series,
// design matrices and reports.
Eigen::MatrixXd read_matrix_tsv(const std::string& path, std::vector<std::string>* names = nullptr);
void write_matrix_tsv(const std::string& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& names);

nlohmann::json parse_json_file(const std::string& path);
nlohmann::json parse_json_text(const std::string& text, const std::string& what);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace icem::dataio
