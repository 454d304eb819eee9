#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace artic {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O format violation; carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Per-utterance RNG stream: results do not depend on processing order.
inline std::mt19937_64 rng_for(std::uint64_t seed, std::string_view id) {
  std::seed_seq seq{seed, fnv1a(id)};
  return std::mt19937_64(seq);
}

template <class S>
inline S clamp01(S x) {
  return x < S(0) ? S(0) : (x > S(1) ? S(1) : x);
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = a > b ? a : b;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

}  // namespace artic
