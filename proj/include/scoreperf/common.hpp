#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scoreperf {

// Error taxonomy shared by every module. The CLI maps kinds to exit codes
// (parse=2, validation=3, internal=4).
enum class ErrorKind { Parse, Validation, Internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string location = {})
      : std::runtime_error(location.empty() ? message : message + " (" + location + ")"),
        kind_(kind),
        message_(std::move(message)),
        location_(std::move(location)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& message() const { return message_; }
  const std::string& location() const { return location_; }

 private:
  ErrorKind kind_;
  std::string message_;
  std::string location_;
};

class ParseError : public Error {
 public:
  explicit ParseError(std::string message, std::string location = {})
      : Error(ErrorKind::Parse, std::move(message), std::move(location)) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::string message, std::string location = {})
      : Error(ErrorKind::Validation, std::move(message), std::move(location)) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(std::string message, std::string location = {})
      : Error(ErrorKind::Internal, std::move(message), std::move(location)) {}
};

// Non-fatal issue attached to a parse result.
struct Warning {
  std::string message;
  std::string location;
};

// Rounding convention: half away from zero, everywhere. std::llround already
// implements this independent of the FP environment.
inline long long iround(double x) { return std::llround(x); }

inline int clamp_int(long long v, int lo, int hi) {
  return static_cast<int>(std::clamp<long long>(v, lo, hi));
}

// Shortest representation that round-trips bit-exactly through parsing.
inline std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

// Deterministic RNG facade. std::mt19937_64 output is pinned by the standard;
// the distribution helpers are hand-rolled because std::*_distribution is not
// portable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t u64() { return engine_(); }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InternalError("Rng::below(0)");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Inclusive integer range.
  long long range(long long lo, long long hi) {
    if (lo > hi) throw InternalError("Rng::range: lo > hi");
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Uniform in [0,1) with 53 bits.
  double real01() { return (engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

  bool chance(double p) { return real01() < p; }

  // Box-Muller; cached second sample for determinism.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = real01();
    double u2 = real01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices drawn from [0, n), in draw order.
  std::vector<int> sample_indices(int n, int k) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    shuffle(all);
    all.resize(static_cast<std::size_t>(std::min(n, k)));
    return all;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::string s = read_file(path);
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open file for writing", path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw ValidationError("write failed", path);
}

}  // namespace scoreperf
