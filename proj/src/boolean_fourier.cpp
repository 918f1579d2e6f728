#include "senslab/boolean_fourier.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "senslab/error.hpp"

namespace senslab::boolean {
namespace {

void check_dim(int dim) {
  if (dim < 0) throw DomainError("negative cube dimension");
  if (dim > kMaxTransformDim) {
    throw CapacityError("cube dimension " + std::to_string(dim) + " exceeds the limit of " +
                        std::to_string(kMaxTransformDim));
  }
}

void check_size(int dim, std::size_t size, const char* what) {
  if (size != (std::size_t{1} << dim)) {
    throw DomainError(std::string(what) + " table length " + std::to_string(size) +
                      " does not equal 2^" + std::to_string(dim));
  }
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

BooleanFunction::BooleanFunction(int dim, std::vector<double> values)
    : dim_(dim), values_(std::move(values)) {
  check_dim(dim_);
  check_size(dim_, values_.size(), "function");
}

BooleanFunction BooleanFunction::constant(int dim, double value) {
  check_dim(dim);
  return BooleanFunction(dim, std::vector<double>(std::size_t{1} << dim, value));
}

BooleanFunction BooleanFunction::parity(int dim) {
  check_dim(dim);
  const std::uint32_t all = (std::uint32_t{1} << dim) - 1;
  std::vector<double> v(std::size_t{1} << dim);
  for (std::uint32_t x = 0; x < v.size(); ++x) v[x] = character(all, x);
  return BooleanFunction(dim, std::move(v));
}

BooleanFunction BooleanFunction::dictator(int dim, int coordinate) {
  check_dim(dim);
  if (coordinate < 1 || coordinate > dim) throw DomainError("dictator coordinate out of range");
  std::vector<double> v(std::size_t{1} << dim);
  for (std::uint32_t x = 0; x < v.size(); ++x) v[x] = ((x >> (coordinate - 1)) & 1U) ? 1.0 : -1.0;
  return BooleanFunction(dim, std::move(v));
}

BooleanFunction BooleanFunction::majority(int dim) {
  check_dim(dim);
  std::vector<double> v(std::size_t{1} << dim);
  for (std::uint32_t x = 0; x < v.size(); ++x) {
    const int ones = std::popcount(x);
    v[x] = sign_of(static_cast<double>(2 * ones - dim));
  }
  return BooleanFunction(dim, std::move(v));
}

bool BooleanFunction::is_pm_one() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 1.0 || v == -1.0; });
}

FourierCoefficients::FourierCoefficients(int dim, std::vector<double> coeffs)
    : dim_(dim), coeffs_(std::move(coeffs)) {
  check_dim(dim_);
  check_size(dim_, coeffs_.size(), "coefficient");
}

void walsh_hadamard(std::span<double> data) {
  if (!is_power_of_two(data.size())) throw DomainError("transform length must be a power of two");
  const std::size_t n = data.size();
  for (std::size_t half = 1; half < n; half <<= 1) {
    for (std::size_t block = 0; block < n; block += 2 * half) {
      for (std::size_t i = block; i < block + half; ++i) {
        // i has the bit clear (x_j = -1), i + half has it set (x_j = +1).
        const double lo = data[i];
        const double hi = data[i + half];
        data[i] = hi + lo;
        data[i + half] = hi - lo;
      }
    }
  }
}

void inverse_walsh_hadamard(std::span<double> data) {
  if (!is_power_of_two(data.size())) throw DomainError("transform length must be a power of two");
  const std::size_t n = data.size();
  for (std::size_t half = 1; half < n; half <<= 1) {
    for (std::size_t block = 0; block < n; block += 2 * half) {
      for (std::size_t i = block; i < block + half; ++i) {
        const double without = data[i];
        const double with = data[i + half];
        data[i] = without - with;
        data[i + half] = without + with;
      }
    }
  }
}

FourierCoefficients fourier_transform(const BooleanFunction& f) {
  std::vector<double> c(f.values().begin(), f.values().end());
  walsh_hadamard(c);
  const double scale = std::ldexp(1.0, -f.dim());
  for (double& v : c) v *= scale;
  return FourierCoefficients(f.dim(), std::move(c));
}

BooleanFunction inverse_transform(const FourierCoefficients& c) {
  std::vector<double> v(c.coeffs().begin(), c.coeffs().end());
  inverse_walsh_hadamard(v);
  return BooleanFunction(c.dim(), std::move(v));
}

int sensitivity_at(const BooleanFunction& f, std::uint32_t x) {
  if (x >= f.size()) throw DomainError("input index outside the cube");
  const int here = sign_of(f(x));
  int count = 0;
  for (int j = 0; j < f.dim(); ++j) {
    if (sign_of(f(x ^ (std::uint32_t{1} << j))) != here) ++count;
  }
  return count;
}

double average_sensitivity(const BooleanFunction& f) {
  // Exact integer total, then one division.
  std::uint64_t total = 0;
  for (std::uint32_t x = 0; x < f.size(); ++x) total += static_cast<std::uint64_t>(sensitivity_at(f, x));
  return std::ldexp(static_cast<double>(total), -f.dim());
}

double normalized_sensitivity(const BooleanFunction& f) {
  if (f.dim() == 0) return 0.0;
  return average_sensitivity(f) / f.dim();
}

int max_sensitivity(const BooleanFunction& f) {
  int best = 0;
  for (std::uint32_t x = 0; x < f.size(); ++x) best = std::max(best, sensitivity_at(f, x));
  return best;
}

double total_influence(const FourierCoefficients& c) {
  double total = 0.0;
  for (std::uint32_t u = 0; u < c.size(); ++u) total += std::popcount(u) * c[u] * c[u];
  return total;
}

int degree(const FourierCoefficients& c, double tolerance) {
  int best = 0;
  for (std::uint32_t u = 0; u < c.size(); ++u) {
    if (std::abs(c[u]) > tolerance) best = std::max(best, std::popcount(u));
  }
  return best;
}

int degree(const BooleanFunction& f) { return degree(fourier_transform(f)); }

bool huang_bound_holds(const BooleanFunction& f) {
  const int s = max_sensitivity(f);
  return degree(f) <= s * s;
}

}  // namespace senslab::boolean
