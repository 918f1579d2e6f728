#include <bit>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "senslab/error.hpp"
#include "senslab/kernel_spectra.hpp"

using namespace senslab;
using namespace senslab::kernels;

namespace {

using L = LayerKind;

// mu_k by summing x_1..x_k Psi(mean x) over every point of the cube.
double brute_mu(const KernelPsi& psi, int dim, int k) {
  double sum = 0.0;
  for (std::uint32_t x = 0; x < (1U << dim); ++x) {
    int ones = std::popcount(x);
    double mean = (2.0 * ones - dim) / dim;
    int sign = 1;
    for (int i = 0; i < k; ++i) sign *= (x >> i) & 1U ? 1 : -1;
    sum += sign * psi(mean);
  }
  return sum / std::ldexp(1.0, dim);
}

std::vector<std::vector<LayerKind>> all_stacks(int max_depth) {
  const std::vector<LayerKind> kinds = {L::dense_identity, L::dense_relu, L::dense_erf, L::linear_attention};
  std::vector<std::vector<LayerKind>> out, frontier = {{}};
  for (int depth = 1; depth <= max_depth; ++depth) {
    std::vector<std::vector<LayerKind>> next;
    for (const auto& s : frontier)
      for (auto k : kinds) {
        auto t = s;
        t.push_back(k);
        next.push_back(t);
        out.push_back(t);
      }
    frontier = std::move(next);
  }
  return out;
}

}  // namespace

TEST(Parsing, LayerTokens) {
  EXPECT_EQ(parse_layer("dense:relu"), L::dense_relu);
  EXPECT_EQ(parse_layer("attn"), L::linear_attention);
  auto stack = parse_layers("dense:relu,attn,dense:identity");
  ASSERT_EQ(stack.size(), 3U);
  EXPECT_EQ(stack[2], L::dense_identity);
  EXPECT_THROW(parse_layer("dense:tanh"), ConfigError);
  EXPECT_THROW(parse_layers(""), ConfigError);
}

TEST(ComposeCk, SingleLayers) {
  std::vector<LayerKind> id = {L::dense_identity};
  auto psi = compose_ck(id);
  EXPECT_DOUBLE_EQ(psi(1.0), 1.0);
  EXPECT_DOUBLE_EQ(psi(0.0), 0.0);
  std::vector<LayerKind> attn = {L::linear_attention};
  auto cube = compose_ck(attn);
  EXPECT_DOUBLE_EQ(cube(-1.0), -1.0);
  EXPECT_DOUBLE_EQ(cube(0.5), 0.125);
  std::vector<LayerKind> relu = {L::dense_relu};
  EXPECT_NEAR(compose_ck(relu)(0.0), 1.0 / std::numbers::pi, 1e-15);
  EXPECT_THROW(compose_ck(std::vector<LayerKind>{}), ConfigError);
}

TEST(ComposeCk, ReluMatchesMonteCarlo) {
  // Normalized arc-cosine kernel: 2 E[relu(u) relu(v)] for unit Gaussians with correlation c.
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  std::vector<LayerKind> relu = {L::dense_relu};
  auto psi = compose_ck(relu);
  for (double c : {-0.6, 0.0, 0.3, 0.9}) {
    const int n = 1000000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = normal(rng), b = normal(rng);
      double u = a, v = c * a + std::sqrt(1.0 - c * c) * b;
      double s = 2.0 * std::max(u, 0.0) * std::max(v, 0.0);
      sum += s;
      sq += s * s;
    }
    double mean = sum / n;
    double se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_NEAR(mean, psi(c), 4.0 * se) << "c=" << c;
  }
}

TEST(ComposeCk, ErfMatchesMonteCarlo) {
  // Dual of erf for unit-variance inputs, normalized so that Psi(1) = 1 is not assumed:
  // E[erf(u) erf(v)] = (2/pi) arcsin(2c/3).
  std::mt19937_64 rng(19);
  std::normal_distribution<double> normal;
  std::vector<LayerKind> erf = {L::dense_erf};
  auto psi = compose_ck(erf);
  for (double c : {-0.5, 0.4, 1.0}) {
    const int n = 1000000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = normal(rng), b = normal(rng);
      double u = a, v = c * a + std::sqrt(std::max(0.0, 1.0 - c * c)) * b;
      sum += std::erf(u) * std::erf(v);
    }
    EXPECT_NEAR(sum / n, psi(c), 0.003) << "c=" << c;
  }
}

TEST(ComposeCk, PrimitiveMapsBoundedByValueAtOne) {
  for (auto kind : {L::dense_identity, L::dense_relu, L::dense_erf, L::linear_attention}) {
    std::vector<LayerKind> stack = {kind};
    auto psi = compose_ck(stack);
    for (int i = 0; i <= 100; ++i) {
      double c = -1.0 + 2.0 * i / 100.0;
      EXPECT_TRUE(std::isfinite(psi(c)));
      EXPECT_LE(std::abs(psi(c)), psi(1.0) + 1e-15) << to_string(kind) << " c=" << c;
    }
  }
}

TEST(ComposeNtk, Examples) {
  std::vector<LayerKind> id = {L::dense_identity};
  auto theta = compose_ntk(id);
  for (double c : {-1.0, -0.3, 0.0, 0.7}) EXPECT_DOUBLE_EQ(theta(c), 2.0 * c);
  std::vector<LayerKind> attn = {L::linear_attention};
  auto theta3 = compose_ntk(attn);
  for (double c : {-1.0, -0.3, 0.0, 0.7}) EXPECT_NEAR(theta3(c), 4.0 * c * c * c, 1e-15);
}

TEST(ComposeNtk, ExceedsCkAtOne) {
  for (const auto& stack : all_stacks(3)) EXPECT_GT(compose_ntk(stack)(1.0), compose_ck(stack)(1.0));
}

TEST(ComposeNtk, DerivativeMapsMatchFiniteDifferences) {
  for (auto kind : {L::dense_identity, L::dense_relu, L::dense_erf, L::linear_attention})
    for (double c : {-0.8, -0.2, 0.1, 0.6}) {
      double h = 1e-6;
      double fd = (layer_map(kind, c + h) - layer_map(kind, c - h)) / (2 * h);
      EXPECT_NEAR(layer_map_derivative(kind, c), fd, 1e-7) << to_string(kind) << " c=" << c;
    }
}

TEST(EigenvalueMu, LinearProfile) {
  auto psi = KernelPsi::identity();
  EXPECT_NEAR(eigenvalue_mu(psi, 8, 1), 0.125, 1e-15);
  for (int k : {0, 2, 3, 8}) EXPECT_NEAR(eigenvalue_mu(psi, 8, k), 0.0, 1e-15);
}

TEST(EigenvalueMu, SquaredProfile) {
  auto psi = KernelPsi::identity().pow(2);
  EXPECT_NEAR(eigenvalue_mu(psi, 8, 0), 1.0 / 8.0, 1e-15);
  EXPECT_NEAR(eigenvalue_mu(psi, 8, 2), 2.0 / 64.0, 1e-15);
  EXPECT_NEAR(eigenvalue_mu(psi, 8, 1), 0.0, 1e-15);
}

TEST(EigenvalueMu, ConstantProfile) {
  auto psi = KernelPsi::constant(1.0);
  for (int d : {1, 5, 30}) {
    EXPECT_DOUBLE_EQ(eigenvalue_mu(psi, d, 0), 1.0);
    for (int k = 1; k <= d; ++k) EXPECT_NEAR(eigenvalue_mu(psi, d, k), 0.0, 1e-15);
  }
}

TEST(EigenvalueMu, Errors) {
  auto psi = KernelPsi::identity();
  EXPECT_THROW(eigenvalue_mu(psi, 4, 5), DomainError);
  EXPECT_THROW(eigenvalue_mu(psi, kMaxSpectrumDim + 1, 0), CapacityError);
}

TEST(EigenvalueMu, MatchesCubeEnumeration) {
  for (const auto& stack : all_stacks(2))
    for (bool ntk : {false, true}) {
      auto psi = ntk ? compose_ntk(stack) : compose_ck(stack);
      for (int d : {3, 7, 10})
        for (int k = 0; k <= d; ++k) EXPECT_NEAR(eigenvalue_mu(psi, d, k), brute_mu(psi, d, k), 1e-12);
    }
}

TEST(EigenvalueMu, MonteCarloAgreement) {
  std::vector<LayerKind> stack = {L::dense_relu, L::linear_attention};
  auto psi = compose_ntk(stack);
  const int d = 20, n = 200000;
  std::mt19937_64 rng(23);
  for (int k : {0, 1, 2, 3}) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      std::uint32_t x = static_cast<std::uint32_t>(rng()) & ((1U << d) - 1U);
      double mean = (2.0 * std::popcount(x) - d) / d;
      int sign = 1;
      for (int j = 0; j < k; ++j) sign *= (x >> j) & 1U ? 1 : -1;
      double v = sign * psi(mean);
      sum += v;
      sq += v * v;
    }
    double m = sum / n;
    double se = std::sqrt((sq / n - m * m) / n);
    EXPECT_LT(std::abs(m - eigenvalue_mu(psi, d, k)), 3.0 * se + 1e-12) << "k=" << k;
  }
}

TEST(Spectrum, Examples) {
  auto s = spectrum(KernelPsi::identity(), 4);
  ASSERT_EQ(s.mu.size(), 5U);
  std::vector<double> expect = {0, 0.25, 0, 0, 0};
  for (int k = 0; k <= 4; ++k) EXPECT_NEAR(s.mu[k], expect[k], 1e-15);

  auto cube = spectrum(KernelPsi::identity().pow(3), 4);
  EXPECT_GT(cube.mu[1], 0.0);
  EXPECT_GT(cube.mu[3], 0.0);
  EXPECT_GE(cube.mu[1], cube.mu[3]);
  for (int k : {0, 2, 4}) EXPECT_NEAR(cube.mu[k], 0.0, 1e-15);
  // Hand values: E[x1 m^3] = (3d - 2)/d^3 and E[x1x2x3 m^3] = 6/d^3 at d = 4.
  EXPECT_NEAR(cube.mu[1], 10.0 / 64.0, 1e-15);
  EXPECT_NEAR(cube.mu[3], 6.0 / 64.0, 1e-15);

  auto affine = spectrum(KernelPsi::constant(1.0) + KernelPsi::identity(), 3);
  std::vector<double> expect3 = {1, 1.0 / 3.0, 0, 0};
  for (int k = 0; k <= 3; ++k) EXPECT_NEAR(affine.mu[k], expect3[k], 1e-15);
}

TEST(Spectrum, Linearity) {
  std::vector<LayerKind> a = {L::dense_relu, L::linear_attention};
  std::vector<LayerKind> b = {L::dense_erf};
  auto pa = compose_ck(a), pb = compose_ntk(b);
  auto combo = 0.7 * pa + (-1.3) * pb;
  for (int d : {6, 17}) {
    auto sa = spectrum(pa, d), sb = spectrum(pb, d), sc = spectrum(combo, d);
    for (int k = 0; k <= d; ++k) EXPECT_NEAR(sc.mu[k], 0.7 * sa.mu[k] - 1.3 * sb.mu[k], 1e-12);
  }
}

TEST(Spectrum, Parity) {
  std::vector<LayerKind> odd = {L::dense_erf, L::linear_attention};  // odd maps compose to odd
  auto psi = compose_ck(odd);
  auto even = KernelPsi::identity().pow(2) + KernelPsi::constant(0.5);
  for (int d : {9, 24}) {
    auto so = spectrum(psi, d), se = spectrum(even, d);
    for (int k = 0; k <= d; k += 2) EXPECT_NEAR(so.mu[k], 0.0, 1e-12);
    for (int k = 1; k <= d; k += 2) EXPECT_NEAR(se.mu[k], 0.0, 1e-12);
  }
}

TEST(Spectrum, TraceIdentity) {
  for (const auto& stack : all_stacks(2))
    for (int d : {8, 24, 40}) {
      auto psi = compose_ntk(stack);
      auto s = spectrum(psi, d);
      double sum = 0.0, binom = 1.0;
      for (int k = 0; k <= d; ++k) {
        sum += binom * s.mu[k];
        binom = binom * (d - k) / (k + 1);
      }
      EXPECT_NEAR(sum, psi(1.0), 1e-9 * std::max(1.0, psi(1.0)));
    }
}

TEST(WeakSpectralBias, DirectComparisons) {
  EXPECT_TRUE(verify_weak_spectral_bias({3, {1, 0.5, 0.2, 0.4}}).holds);
  auto bad = verify_weak_spectral_bias({3, {0.1, 0, 0.2, 0}});
  EXPECT_FALSE(bad.holds);
  ASSERT_TRUE(bad.violation.has_value());
  EXPECT_EQ(bad.violation->first, 0);
  EXPECT_EQ(bad.violation->second, 2);
  auto odd = verify_weak_spectral_bias({4, {1, 0.1, 0.5, 0.3, 0.2}});
  ASSERT_TRUE(odd.violation.has_value());
  EXPECT_EQ(odd.violation->first, 1);
}

TEST(WeakSpectralBias, ReluAttentionReluCk) {
  std::vector<LayerKind> stack = {L::dense_relu, L::linear_attention, L::dense_relu};
  EXPECT_TRUE(verify_weak_spectral_bias(spectrum(compose_ck(stack), 16)).holds);
}

TEST(GramEigencheck, Examples) {
  EXPECT_LT(gram_eigencheck(KernelPsi::identity(), 6), 1e-10);
  EXPECT_LT(gram_eigencheck(KernelPsi::identity().pow(3), 8), 1e-8);
  EXPECT_LT(gram_eigencheck(KernelPsi::constant(2.0), 4), 1e-15);
  EXPECT_THROW(gram_eigencheck(KernelPsi::identity(), kMaxGramDim + 1), CapacityError);
}

TEST(GramEigencheck, RayleighQuotientsDependOnlyOnSize) {
  std::vector<LayerKind> stack = {L::dense_relu, L::linear_attention};
  auto psi = compose_ntk(stack);
  const int d = 8;
  const std::uint32_t n = 1U << d;
  std::vector<double> first(d + 1, std::nan(""));
  for (std::uint32_t u = 0; u < n; ++u) {
    // chi_U^T K chi_U / 2^d / 2^d with K(x, y) = Psi(<x, y> / d).
    double q = 0.0;
    for (std::uint32_t x = 0; x < n; ++x)
      for (std::uint32_t y = 0; y < n; ++y) {
        int agree = d - std::popcount(x ^ y);
        double c = (2.0 * agree - d) / d;
        int cx = (std::popcount(u & ~x) & 1) ? -1 : 1;
        int cy = (std::popcount(u & ~y) & 1) ? -1 : 1;
        q += cx * cy * psi(c);
      }
    q /= static_cast<double>(n) * n;
    int k = std::popcount(u);
    if (std::isnan(first[k])) {
      first[k] = q;
      EXPECT_NEAR(q, eigenvalue_mu(psi, d, k), 1e-10);
    } else {
      EXPECT_NEAR(q, first[k], 1e-10);
    }
  }
}
