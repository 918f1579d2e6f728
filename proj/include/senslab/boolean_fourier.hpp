#pragma once

// Fourier analysis and sensitivity of functions on the Boolean cube {-1,+1}^d.
//
// Input convention: a point x is stored as a bit pattern i in [0, 2^d).
// Bit j of i encodes coordinate x_{j+1}; a set bit means +1, a clear bit -1.
// Subsets U of [d] are bitmasks with the same bit-to-coordinate mapping.

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

namespace senslab::boolean {

inline constexpr int kMaxTransformDim = 24;
inline constexpr double kCoefficientTolerance = 1e-9;

// sign with sign(0) = +1.
inline int sign_of(double v) { return v >= 0.0 ? 1 : -1; }

// chi_U(x) = prod_{i in U} x_i.
inline int character(std::uint32_t subset, std::uint32_t x) {
  return (std::popcount(subset & ~x) & 1U) ? -1 : 1;
}

class BooleanFunction {
 public:
  BooleanFunction(int dim, std::vector<double> values);

  static BooleanFunction constant(int dim, double value = 1.0);
  static BooleanFunction parity(int dim);
  // x_{coordinate}, with coordinate 1-based.
  static BooleanFunction dictator(int dim, int coordinate = 1);
  // sign(sum x_i), ties to +1.
  static BooleanFunction majority(int dim);

  int dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator()(std::uint32_t x) const { return values_[x]; }

  // True when every entry is exactly -1 or +1.
  bool is_pm_one() const;

 private:
  int dim_;
  std::vector<double> values_;
};

class FourierCoefficients {
 public:
  FourierCoefficients(int dim, std::vector<double> coeffs);

  int dim() const { return dim_; }
  std::size_t size() const { return coeffs_.size(); }
  std::span<const double> coeffs() const { return coeffs_; }
  double operator[](std::uint32_t subset) const { return coeffs_[subset]; }

 private:
  int dim_;
  std::vector<double> coeffs_;
};

// In-place analysis transform: data[U] <- sum_x data[x] chi_U(x).
// data.size() must be a power of two.
void walsh_hadamard(std::span<double> data);
// In-place synthesis transform: data[x] <- sum_U data[U] chi_U(x).
void inverse_walsh_hadamard(std::span<double> data);

// f^(U) = E_x[f(x) chi_U(x)]. Throws CapacityError for dim > kMaxTransformDim.
FourierCoefficients fourier_transform(const BooleanFunction& f);
BooleanFunction inverse_transform(const FourierCoefficients& c);

// Number of coordinates whose flip changes sign(f(x)).
int sensitivity_at(const BooleanFunction& f, std::uint32_t x);
double average_sensitivity(const BooleanFunction& f);
double normalized_sensitivity(const BooleanFunction& f);
int max_sensitivity(const BooleanFunction& f);

// sum_U |U| f^(U)^2
double total_influence(const FourierCoefficients& c);

int degree(const FourierCoefficients& c, double tolerance = kCoefficientTolerance);
int degree(const BooleanFunction& f);

// degree(f) <= max_sensitivity(f)^2
bool huang_bound_holds(const BooleanFunction& f);

}  // namespace senslab::boolean
