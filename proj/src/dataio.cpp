// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace icem::dataio {

using nlohmann::json;

namespace {

// little-endian storage is assumed throughout the native format
bool host_is_little_endian() {
  uint16_t x = 1;
  uint8_t b;
  std::memcpy(&b, &x, 1);
  return b == 1;
}

void check_endianness() {
  if (!host_is_little_endian())
    raise(Err::Io, "big-endian hosts are not supported by the native volume format");
}

std::vector<char> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::Io, "cannot open: " + path);
  in.seekg(0, std::ios::end);
  std::streamoff n = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<size_t>(n));
  if (n > 0) in.read(buf.data(), n);
  if (!in) raise(Err::Io, "read failed: " + path);
  return buf;
}

void write_binary_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Err::Io, "cannot write: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(Err::Io, "short write: " + path);
}

std::vector<long> mask_rle(const Mask& m) {
  // alternating run lengths, starting with an excluded run (possibly 0)
  std::vector<long> runs;
  uint8_t cur = 0;
  long len = 0;
  for (uint8_t b : m.in) {
    uint8_t v = b ? 1 : 0;
    if (v == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = v;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

std::vector<uint8_t> mask_from_rle(const std::vector<long>& runs, long nvox) {
  std::vector<uint8_t> in;
  in.reserve(static_cast<size_t>(nvox));
  uint8_t cur = 0;
  for (long r : runs) {
    require(r >= 0, Err::MalformedHeader, "negative run length in mask rle");
    in.insert(in.end(), static_cast<size_t>(r), cur);
    cur = 1 - cur;
  }
  require(static_cast<long>(in.size()) == nvox, Err::MalformedHeader,
          "mask rle does not cover the grid");
  return in;
}

double get_num(const json& j, const std::string& key, const std::string& where) {
  require(j.contains(key) && j[key].is_number(), Err::MalformedHeader,
          where + ": missing or non-numeric field '" + key + "'");
  return j[key].get<double>();
}

}  // namespace

json parse_json_text(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) raise(Err::MalformedHeader, what + ": invalid JSON");
  return j;
}

json parse_json_file(const std::string& path) {
  return parse_json_text(read_text_file(path), path);
}

void write_json_file(const std::string& path, const json& j) {
  // nlohmann::json keeps object keys sorted, so this dump is deterministic
  write_text_file(path, j.dump(2) + "\n");
}

void write_volume_series(const std::string& path, const VolumeSeries& s) {
  check_endianness();
  s.validate();
  const int T = s.t(), V = s.v();
  std::vector<char> body(static_cast<size_t>(T) * V * 4);
  char* out = body.data();
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < V; ++j) {
      float f = static_cast<float>(s.data(t, j));
      std::memcpy(out, &f, 4);
      out += 4;
    }
  Fnv bd;
  bd.bytes(body.data(), body.size());

  json h;
  h["format"] = "vxt-1";
  h["dims"] = {s.grid().dims[0], s.grid().dims[1], s.grid().dims[2]};
  h["voxel_size"] = {s.grid().voxel_size[0], s.grid().voxel_size[1], s.grid().voxel_size[2]};
  h["affine"] = s.grid().affine;
  h["tr"] = s.tr;
  h["t"] = T;
  h["v"] = V;
  h["dtype"] = "f32";
  h["mask_rle"] = mask_rle(s.mask);
  h["mask_digest"] = hex64(s.mask.digest());
  h["data_digest"] = hex64(bd.h);

  write_binary_file(path + ".raw", body);
  write_json_file(path, h);
}

VolumeSeries read_volume_series(const std::string& path) {
  check_endianness();
  json h = parse_json_file(path);
  require(h.is_object(), Err::MalformedHeader, path + ": header is not an object");
  require(h.value("format", "") == "vxt-1", Err::MalformedHeader,
          path + ": unknown format tag");
  require(h.value("dtype", "") == "f32", Err::MalformedHeader, path + ": unsupported dtype");
  require(h.contains("dims") && h["dims"].is_array() && h["dims"].size() == 3,
          Err::MalformedHeader, path + ": bad dims");
  require(h.contains("affine") && h["affine"].is_array() && h["affine"].size() == 16,
          Err::MalformedHeader, path + ": bad affine");
  require(h.contains("voxel_size") && h["voxel_size"].is_array() && h["voxel_size"].size() == 3,
          Err::MalformedHeader, path + ": bad voxel_size");

  VolumeSeries s;
  VolumeGrid& g = s.mask.grid;
  for (int i = 0; i < 3; ++i) g.dims[i] = h["dims"][i].get<int>();
  for (int i = 0; i < 3; ++i) g.voxel_size[i] = h["voxel_size"][i].get<double>();
  for (int i = 0; i < 16; ++i) g.affine[i] = h["affine"][i].get<double>();
  g.validate();

  require(h.contains("mask_rle") && h["mask_rle"].is_array(), Err::MalformedHeader,
          path + ": missing mask_rle");
  std::vector<long> runs;
  for (const auto& r : h["mask_rle"]) runs.push_back(r.get<long>());
  s.mask.in = mask_from_rle(runs, g.nvox());
  if (h.contains("mask_digest"))
    require(h["mask_digest"].get<std::string>() == hex64(s.mask.digest()), Err::MalformedHeader,
            path + ": mask digest mismatch");

  s.tr = get_num(h, "tr", path);
  const int T = static_cast<int>(get_num(h, "t", path));
  const int V = static_cast<int>(get_num(h, "v", path));
  require(V == s.mask.v(), Err::SizeMismatch,
          path + ": header v=" + std::to_string(V) + " but mask includes " +
              std::to_string(s.mask.v()));
  require(T >= 1, Err::MalformedHeader, path + ": t must be >= 1");

  std::vector<char> body = read_binary_file(path + ".raw");
  size_t expect = static_cast<size_t>(T) * V * 4;
  require(body.size() == expect, Err::SizeMismatch,
          path + ".raw: expected " + std::to_string(expect) + " bytes, found " +
              std::to_string(body.size()));
  if (h.contains("data_digest")) {
    Fnv bd;
    bd.bytes(body.data(), body.size());
    require(h["data_digest"].get<std::string>() == hex64(bd.h), Err::Io,
            path + ".raw: content digest mismatch");
  }

  s.data.resize(T, V);
  const char* p = body.data();
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < V; ++j) {
      float f;
      std::memcpy(&f, p, 4);
      p += 4;
      if (!std::isfinite(f))
        raise(Err::NonFiniteData, path + ": non-finite value at (t=" + std::to_string(t) +
                                      ", v=" + std::to_string(j) + ")");
      s.data(t, j) = static_cast<double>(f);
    }
  s.validate();
  return s;
}

namespace {

// field readers over the 348-byte NIfTI-1 header
template <typename T>
T nif_get(const std::vector<char>& buf, size_t off, bool swap) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  if (swap) {
    char* b = reinterpret_cast<char*>(&v);
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

}  // namespace

VolumeSeries import_nifti(const std::string& path) {
  check_endianness();
  std::vector<char> buf = read_binary_file(path);
  require(buf.size() >= 352, Err::MalformedHeader, path + ": file shorter than a NIfTI-1 header");

  bool swap = false;
  int32_t hdr_size = nif_get<int32_t>(buf, 0, false);
  if (hdr_size != 348) {
    swap = true;
    hdr_size = nif_get<int32_t>(buf, 0, true);
    require(hdr_size == 348, Err::MalformedHeader,
            path + ": sizeof_hdr is not 348 in either byte order");
  }
  require(buf[344] == 'n' && buf[345] == '+' && buf[346] == '1' && buf[347] == '\0',
          Err::BadMagic, path + ": magic is not 'n+1' (detached .hdr/.img pairs unsupported)");

  int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = nif_get<int16_t>(buf, 40 + 2 * static_cast<size_t>(i), swap);
  require(dim[0] >= 3 && dim[0] <= 7, Err::DimMismatch,
          path + ": expected a 3D or 4D image, dim[0]=" + std::to_string(dim[0]));
  const int nx = dim[1], ny = dim[2], nz = dim[3];
  const int nt = dim[0] >= 4 ? std::max<int>(dim[4], 1) : 1;
  require(nx > 0 && ny > 0 && nz > 0, Err::DimMismatch, path + ": non-positive spatial dims");
  for (int i = 5; i <= dim[0]; ++i)
    require(dim[i] <= 1, Err::DimMismatch, path + ": dims beyond 4 must be singleton");

  const int16_t datatype = nif_get<int16_t>(buf, 70, swap);
  const int16_t bitpix = nif_get<int16_t>(buf, 72, swap);
  int elem = 0;
  switch (datatype) {
    case 4: elem = 2; break;    // int16
    case 16: elem = 4; break;   // float32
    case 64: elem = 8; break;   // float64
    default:
      raise(Err::UnsupportedDatatype,
            path + ": datatype code " + std::to_string(datatype) + " not supported");
  }
  require(bitpix == elem * 8, Err::MalformedHeader,
          path + ": bitpix inconsistent with datatype");

  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = nif_get<float>(buf, 76 + 4 * static_cast<size_t>(i), swap);
  const long vox_offset = std::lround(nif_get<float>(buf, 108, swap));
  require(vox_offset >= 348 && static_cast<size_t>(vox_offset) <= buf.size(),
          Err::MalformedHeader, path + ": bad vox_offset");
  float scl_slope = nif_get<float>(buf, 112, swap);
  float scl_inter = nif_get<float>(buf, 116, swap);
  if (scl_slope == 0.0f) {
    scl_slope = 1.0f;
    scl_inter = 0.0f;
  }
  const uint8_t xyzt = static_cast<uint8_t>(buf[123]);
  double space_scale = 1.0;  // to mm
  switch (xyzt & 0x07) {
    case 1: space_scale = 1000.0; break;  // meters
    case 3: space_scale = 0.001; break;   // microns
    default: break;                       // mm or unspecified
  }
  double time_scale = 1.0;  // to seconds
  switch (xyzt & 0x38) {
    case 16: time_scale = 0.001; break;     // ms
    case 24: time_scale = 1e-6; break;      // us
    default: break;                         // s or unspecified
  }

  VolumeSeries s;
  VolumeGrid& g = s.mask.grid;
  g.dims = {nx, ny, nz};
  for (int i = 0; i < 3; ++i) {
    double vs = std::abs(static_cast<double>(pixdim[i + 1])) * space_scale;
    g.voxel_size[i] = vs > 0.0 ? vs : 1.0;
  }
  const int16_t sform = nif_get<int16_t>(buf, 254, swap);
  if (sform > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        g.affine[static_cast<size_t>(r) * 4 + c] =
            nif_get<float>(buf, 280 + 16 * static_cast<size_t>(r) + 4 * static_cast<size_t>(c), swap);
    g.affine[12] = g.affine[13] = g.affine[14] = 0.0;
    g.affine[15] = 1.0;
  } else {
    g.affine = {g.voxel_size[0], 0, 0, 0, 0, g.voxel_size[1], 0, 0,
                0, 0, g.voxel_size[2], 0, 0, 0, 0, 1};
  }
  g.validate();
  s.mask.in.assign(static_cast<size_t>(g.nvox()), 1);

  s.tr = dim[0] >= 4 ? static_cast<double>(pixdim[4]) * time_scale : 0.0;
  if (!(s.tr > 0.0)) {
    if (nt > 1) logging::warn(path + ": missing or zero TR, defaulting to 1 s");
    s.tr = 1.0;
  }

  const size_t nvals = static_cast<size_t>(g.nvox()) * nt;
  require(buf.size() - static_cast<size_t>(vox_offset) >= nvals * static_cast<size_t>(elem),
          Err::SizeMismatch, path + ": body shorter than header dims require");

  s.data.resize(nt, g.nvox());
  const char* p = buf.data() + vox_offset;
  // NIfTI stores x fastest, then y, z, t: the same scan order used here
  for (int t = 0; t < nt; ++t)
    for (long j = 0; j < g.nvox(); ++j) {
      double raw;
      size_t off = (static_cast<size_t>(t) * g.nvox() + j) * static_cast<size_t>(elem);
      switch (datatype) {
        case 4: {
          int16_t v;
          std::memcpy(&v, p + off, 2);
          if (swap) v = static_cast<int16_t>((static_cast<uint16_t>(v) >> 8) |
                                             (static_cast<uint16_t>(v) << 8));
          raw = v;
          break;
        }
        case 16: {
          float v;
          std::memcpy(&v, p + off, 4);
          if (swap) {
            char* b = reinterpret_cast<char*>(&v);
            std::swap(b[0], b[3]);
            std::swap(b[1], b[2]);
          }
          raw = v;
          break;
        }
        default: {
          double v;
          std::memcpy(&v, p + off, 8);
          if (swap) {
            char* b = reinterpret_cast<char*>(&v);
            for (int i = 0; i < 4; ++i) std::swap(b[i], b[7 - i]);
          }
          raw = v;
          break;
        }
      }
      double val = static_cast<double>(scl_slope) * raw + static_cast<double>(scl_inter);
      if (!std::isfinite(val))
        raise(Err::NonFiniteData, path + ": non-finite voxel value at (t=" + std::to_string(t) +
                                      ", v=" + std::to_string(j) + ")");
      s.data(t, j) = val;
    }
  s.validate();
  return s;
}

Mask mask_from_volume(const VolumeSeries& vol) {
  Mask m;
  m.grid = vol.grid();
  m.in.assign(static_cast<size_t>(m.grid.nvox()), 0);
  std::vector<long> idx = vol.mask.linear_indices();
  for (int j = 0; j < vol.v(); ++j)
    if (vol.data(0, j) != 0.0) m.in[static_cast<size_t>(idx[static_cast<size_t>(j)])] = 1;
  m.validate();
  return m;
}

VolumeSeries apply_mask(const VolumeSeries& s, const Mask& m) {
  require(m.grid.same_geometry(s.grid()), Err::GridMismatch,
          "mask grid does not match series grid");
  m.validate();
  // column positions of m's voxels within s's masked columns
  std::vector<int> col_of(static_cast<size_t>(s.grid().nvox()), -1);
  {
    std::vector<long> sidx = s.mask.linear_indices();
    for (int j = 0; j < s.v(); ++j) col_of[static_cast<size_t>(sidx[static_cast<size_t>(j)])] = j;
  }
  std::vector<long> midx = m.linear_indices();
  VolumeSeries out;
  out.mask = m;
  out.tr = s.tr;
  out.data.resize(s.t(), static_cast<Eigen::Index>(midx.size()));
  for (size_t k = 0; k < midx.size(); ++k) {
    int src = col_of[static_cast<size_t>(midx[k])];
    require(src >= 0, Err::GridMismatch,
            "mask includes voxel " + std::to_string(midx[k]) + " absent from the series mask");
    out.data.col(static_cast<Eigen::Index>(k)) = s.data.col(src);
  }
  out.validate();
  return out;
}

namespace {

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::string text = read_text_file(path);
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '#') continue;  // annotation lines
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

bool is_na_token(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s == "n/a" || s == "na" || s == "nan";
}

double parse_num(const std::string& tok, const std::string& path, size_t lineno) {
  const char* c = tok.c_str();
  char* end = nullptr;
  double v = std::strtod(c, &end);
  if (end == c || *end != '\0')
    raise(Err::MalformedTable,
          path + ":" + std::to_string(lineno) + ": cannot parse number '" + tok + "'");
  return v;
}

}  // namespace

ConfoundMatrix read_confounds_tsv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  require(!lines.empty(), Err::MalformedTable, path + ": empty confound table");
  ConfoundMatrix c;
  c.names = split_tab(lines[0]);
  require(!c.names.empty() && !c.names[0].empty(), Err::MalformedTable,
          path + ": missing header row");
  const int p = static_cast<int>(c.names.size());
  const int t = static_cast<int>(lines.size()) - 1;
  require(t >= 1, Err::MalformedTable, path + ": confound table has no rows");
  c.cols.resize(t, p);
  bool warned_na = false;
  for (int i = 0; i < t; ++i) {
    std::vector<std::string> toks = split_tab(lines[static_cast<size_t>(i) + 1]);
    require(static_cast<int>(toks.size()) == p, Err::MalformedTable,
            path + ":" + std::to_string(i + 2) + ": expected " + std::to_string(p) +
                " columns, found " + std::to_string(toks.size()));
    for (int j = 0; j < p; ++j) {
      if (is_na_token(toks[static_cast<size_t>(j)])) {
        if (!warned_na) {
          logging::warn(path + ": n/a entries loaded as 0");
          warned_na = true;
        }
        c.cols(i, j) = 0.0;
      } else {
        c.cols(i, j) = parse_num(toks[static_cast<size_t>(j)], path, static_cast<size_t>(i) + 2);
      }
    }
  }
  c.validate();
  return c;
}

void write_confounds_tsv(const std::string& path, const ConfoundMatrix& c) {
  c.validate();
  write_matrix_tsv(path, c.cols, c.names);
}

WordTable read_word_table_tsv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  require(!lines.empty(), Err::MalformedTable, path + ": empty word table");
  std::vector<std::string> hdr = split_tab(lines[0]);
  int i_tok = -1, i_on = -1, i_off = -1, i_sur = -1;
  for (int j = 0; j < static_cast<int>(hdr.size()); ++j) {
    if (hdr[static_cast<size_t>(j)] == "token") i_tok = j;
    else if (hdr[static_cast<size_t>(j)] == "onset") i_on = j;
    else if (hdr[static_cast<size_t>(j)] == "offset") i_off = j;
    else if (hdr[static_cast<size_t>(j)] == "surprisal") i_sur = j;
  }
  require(i_tok >= 0 && i_on >= 0 && i_off >= 0, Err::MalformedTable,
          path + ": header must name token, onset and offset columns");
  WordTable t;
  t.has_surprisal = i_sur >= 0;
  for (size_t li = 1; li < lines.size(); ++li) {
    std::vector<std::string> toks = split_tab(lines[li]);
    require(toks.size() == hdr.size(), Err::MalformedTable,
            path + ":" + std::to_string(li + 1) + ": column count mismatch");
    Word w;
    w.token = toks[static_cast<size_t>(i_tok)];
    w.onset = parse_num(toks[static_cast<size_t>(i_on)], path, li + 1);
    w.offset = parse_num(toks[static_cast<size_t>(i_off)], path, li + 1);
    if (t.has_surprisal) w.surprisal = parse_num(toks[static_cast<size_t>(i_sur)], path, li + 1);
    t.words.push_back(w);
  }
  t.validate();  // rejects non-monotone onsets and negative durations
  return t;
}

void write_word_table_tsv(const std::string& path, const WordTable& t) {
  t.validate();
  std::string out = t.has_surprisal ? "token\tonset\toffset\tsurprisal\n" : "token\tonset\toffset\n";
  for (const Word& w : t.words) {
    out += w.token;
    out += '\t';
    out += fmt_double(w.onset);
    out += '\t';
    out += fmt_double(w.offset);
    if (t.has_surprisal) {
      out += '\t';
      out += fmt_double(w.surprisal);
    }
    out += '\n';
  }
  write_text_file(path, out);
}

EmbeddingTable read_embeddings(const std::string& path) {
  check_endianness();
  json meta = parse_json_file(path + ".json");
  const int n = static_cast<int>(get_num(meta, "n_words", path + ".json"));
  const int d = static_cast<int>(get_num(meta, "dim", path + ".json"));
  require(n >= 0 && d >= 1, Err::MalformedHeader, path + ".json: bad shape");
  std::vector<char> body = read_binary_file(path);
  size_t expect = static_cast<size_t>(n) * d * 4;
  require(body.size() == expect, Err::SizeMismatch,
          path + ": expected " + std::to_string(expect) + " bytes, found " +
              std::to_string(body.size()));
  if (meta.contains("digest")) {
    Fnv f;
    f.bytes(body.data(), body.size());
    require(meta["digest"].get<std::string>() == hex64(f.h), Err::Io,
            path + ": content digest mismatch");
  }
  EmbeddingTable e;
  e.rows.resize(n, d);
  const char* p = body.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      float f;
      std::memcpy(&f, p, 4);
      p += 4;
      require(std::isfinite(f), Err::NonFiniteData,
              path + ": non-finite embedding value at (" + std::to_string(i) + ", " +
                  std::to_string(j) + ")");
      e.rows(i, j) = f;
    }
  return e;
}

void write_embeddings(const std::string& path, const EmbeddingTable& e) {
  check_endianness();
  require_finite(e.rows, "embeddings");
  std::vector<char> body(static_cast<size_t>(e.n_words()) * e.dim() * 4);
  char* p = body.data();
  for (int i = 0; i < e.n_words(); ++i)
    for (int j = 0; j < e.dim(); ++j) {
      float f = static_cast<float>(e.rows(i, j));
      std::memcpy(p, &f, 4);
      p += 4;
    }
  Fnv f;
  f.bytes(body.data(), body.size());
  json meta;
  meta["n_words"] = e.n_words();
  meta["dim"] = e.dim();
  meta["digest"] = hex64(f.h);
  write_binary_file(path, body);
  write_json_file(path + ".json", meta);
}

Atlas read_atlas(const std::string& vol_path, const std::string& names_path) {
  VolumeSeries vol = read_volume_series(vol_path);
  require(vol.t() == 1, Err::ShapeMismatch, vol_path + ": atlas volume must have t=1");
  json names = parse_json_file(names_path);
  require(names.is_object(), Err::MalformedHeader, names_path + ": expected a label->name object");

  std::vector<long> idx = vol.mask.linear_indices();
  std::map<long, std::vector<uint8_t>> by_label;
  for (int j = 0; j < vol.v(); ++j) {
    double raw = vol.data(0, j);
    long label = std::lround(raw);
    require(std::abs(raw - static_cast<double>(label)) < 1e-6, Err::MalformedTable,
            vol_path + ": non-integer label " + fmt_double(raw));
    if (label == 0) continue;
    auto& map = by_label[label];
    if (map.empty()) map.assign(static_cast<size_t>(vol.grid().nvox()), 0);
    map[static_cast<size_t>(idx[static_cast<size_t>(j)])] = 1;
  }
  Atlas a;
  a.grid = vol.grid();
  for (auto& [label, map] : by_label) {
    std::string key = std::to_string(label);
    require(names.contains(key), Err::MalformedHeader,
            names_path + ": no name for label " + key);
    a.names.push_back(names[key].get<std::string>());
    a.maps.push_back(std::move(map));
  }
  for (auto it = names.begin(); it != names.end(); ++it) {
    long label = std::strtol(it.key().c_str(), nullptr, 10);
    if (by_label.find(label) == by_label.end())
      logging::warn(names_path + ": label " + it.key() + " (" +
                    it.value().get<std::string>() + ") has no voxels, ignored");
  }
  a.validate();
  return a;
}

void write_atlas(const std::string& vol_path, const std::string& names_path, const Atlas& a,
                 double tr) {
  a.validate();
  VolumeSeries vol;
  vol.mask = Mask::full(a.grid);
  vol.tr = tr;
  vol.data = Eigen::MatrixXd::Zero(1, a.grid.nvox());
  json names = json::object();
  for (int p = 0; p < a.n_parcels(); ++p) {
    for (long i = 0; i < a.grid.nvox(); ++i)
      if (a.maps[static_cast<size_t>(p)][static_cast<size_t>(i)]) vol.data(0, i) = p + 1;
    names[std::to_string(p + 1)] = a.names[static_cast<size_t>(p)];
  }
  write_volume_series(vol_path, vol);
  write_json_file(names_path, names);
}

Eigen::MatrixXd read_matrix_tsv(const std::string& path, std::vector<std::string>* names) {
  std::vector<std::string> lines = read_lines(path);
  require(lines.size() >= 2, Err::MalformedTable, path + ": need a header and at least one row");
  std::vector<std::string> hdr = split_tab(lines[0]);
  const int p = static_cast<int>(hdr.size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(lines.size()) - 1, p);
  for (size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> toks = split_tab(lines[i]);
    require(static_cast<int>(toks.size()) == p, Err::MalformedTable,
            path + ":" + std::to_string(i + 1) + ": column count mismatch");
    for (int j = 0; j < p; ++j)
      m(static_cast<Eigen::Index>(i) - 1, j) = parse_num(toks[static_cast<size_t>(j)], path, i + 1);
  }
  if (names) *names = hdr;
  return m;
}

void write_matrix_tsv(const std::string& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& names) {
  require(static_cast<Eigen::Index>(names.size()) == m.cols(), Err::ShapeMismatch,
          "header length does not match matrix columns");
  std::string out;
  for (size_t j = 0; j < names.size(); ++j) {
    if (j) out += '\t';
    out += names[j];
  }
  out += '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += '\t';
      out += fmt_double(m(i, j));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace icem::dataio
