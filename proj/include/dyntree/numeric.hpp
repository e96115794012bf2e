#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyntree {

using Rng = std::mt19937_64;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Raised when the evidence or the current parameters make a quantity
// undefined (zero-probability evidence, an all-zero message, ...).
class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// log(sum(exp(v))) with the usual max shift; -inf for empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return kNegInf;
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi == kNegInf) return kNegInf;
  if (hi == kInf) return kInf;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

// Running log-sum-exp accumulator.
class LogSumAccumulator {
 public:
  void add(double log_value) {
    if (log_value == kNegInf) return;
    if (log_value > max_) {
      sum_ = sum_ * std::exp(max_ - log_value) + 1.0;
      max_ = log_value;
    } else {
      sum_ += std::exp(log_value - max_);
    }
  }
  double value() const { return sum_ == 0.0 ? kNegInf : max_ + std::log(sum_); }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

// x * log(x / y) with 0 log 0 = 0 and x > 0, y = 0 giving +inf.
inline double x_log_x_over_y(double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return kInf;
  return x * std::log(x / y);
}

// Normalizes in place; returns the original sum.
inline double normalize(std::span<double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  if (sum > 0.0) {
    for (double& x : v) x /= sum;
  }
  return sum;
}

// Divides by the maximum entry; returns log of that maximum (-inf if all zero).
inline double rescale_by_max(std::span<double> v) {
  double hi = 0.0;
  for (double x : v) hi = std::max(hi, x);
  if (hi <= 0.0) return kNegInf;
  for (double& x : v) x /= hi;
  return std::log(hi);
}

// exp(v - max(v)) normalized; all -inf input yields an empty-sum failure (returns false).
inline bool softmax_in_place(std::span<double> v) {
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi == kNegInf || std::isnan(hi)) return false;
  for (double& x : v) x = std::exp(x - hi);
  normalize(v);
  return true;
}

inline double sum_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for run `index` of an experiment driven by `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ (index + 0x632be59bd9b4e019ULL));
}

inline double uniform01(Rng& rng) {
  // 53 random mantissa bits; independent of the standard library's distribution code.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Draws an index from an unnormalized weight vector.
inline int sample_index(std::span<const double> weights, Rng& rng) {
  const double total = sum_of(weights);
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return static_cast<int>(i);
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace dyntree
