// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace icem {

// Error taxonomy. Every failure the library raises carries one of these
// kinds; the CLI maps them onto process exit codes (config 2, data 3,
// numerical 4).
enum class Err {
  // configuration
  Config,
  BandOutOfRange,
  PercentileOutOfRange,
  EmptyAfterTrim,
  FoldInfeasible,
  OverlapInfeasible,
  TooFewSubjects,
  NetworkUnresolved,
  // data / IO
  Io,
  MalformedHeader,
  MalformedTable,
  SizeMismatch,
  DimMismatch,
  GridMismatch,
  MaskMismatch,
  ShapeMismatch,
  NonFiniteData,
  UnsupportedDatatype,
  BadMagic,
  MissingInput,
  WordPastEnd,
  EmptyParcel,
  NoSharedStory,
  // numerical
  RankTooLow,
  NonConverged,
  ConstantInput,
  DegenerateRegressor,
  AllZeroSource,
  SingularSystem,
};

const char* err_name(Err e);
int exit_code_for(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void raise(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Err code, const std::string& msg) {
  if (!cond) raise(code, msg);
}

namespace logging {
void set_quiet(bool q);
void warn(const std::string& msg);
void info(const std::string& msg);
}  // namespace logging

// Deterministic RNG. The engine (mt19937_64) has a standardized output
// sequence; the distributions below are hand-rolled because the stdlib
// ones are implementation-defined and would break cross-platform
// reproducibility of seeded runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }

  // uniform in [0,1) with 53 random bits
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; caches the second deviate
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // uniform integer in [0, n), rejection sampled to kill modulo bias
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) raise(Err::Config, "uniform_int: n must be positive");
    uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = eng_();
    while (x >= bound) x = eng_();
    return x % n;
  }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit streaming digest; used for content addressing of files,
// matrices and stage inputs.
struct Fnv {
  static constexpr uint64_t kOffset = 14695981039346656037ull;
  static constexpr uint64_t kPrime = 1099511628211ull;
  uint64_t h = kOffset;

  void bytes(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= kPrime;
    }
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i64(int64_t v) { bytes(&v, 8); }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void mat(const Eigen::MatrixXd& m) {
    i64(m.rows());
    i64(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
  }
};

std::string hex64(uint64_t v);
uint64_t digest_file(const std::string& path);

// fixed-width decimal formatting (17 significant digits, round-trip safe);
// all report output goes through this so reruns are byte-identical
std::string fmt_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// runs fn(0..n-1) on `jobs` threads; caller guarantees iterations are
// independent and write disjoint slots
void parallel_for(int jobs, int n, const std::function<void(int)>& fn);

}  // namespace icem
