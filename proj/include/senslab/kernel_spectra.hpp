#pragma once

// Dot-product kernel profiles Psi(c), c = <x, y> / d, for infinite-width
// networks with dense and linear-attention layers, and their exact
// eigenvalues on the Boolean cube.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace senslab::kernels {

inline constexpr int kMaxSpectrumDim = 40;
inline constexpr int kMaxGramDim = 12;
inline constexpr double kOrderingTolerance = 1e-12;

enum class LayerKind { dense_identity, dense_relu, dense_erf, linear_attention };

std::string_view to_string(LayerKind kind);
// Accepts "dense:identity", "dense:relu", "dense:erf", "attn" / "linear_attention".
LayerKind parse_layer(std::string_view token);
// Comma-separated list of layer tokens.
std::vector<LayerKind> parse_layers(std::string_view spec);

// Immutable expression tree over the correlation c. Copies share structure.
class KernelPsi {
 public:
  struct Node;

  static KernelPsi identity();
  static KernelPsi constant(double value);

  double operator()(double c) const;
  // Layer dual map applied on top of this profile: c -> map(Psi(c)).
  KernelPsi through(LayerKind kind) const;
  // Derivative of the layer dual map evaluated at this profile.
  KernelPsi through_derivative(LayerKind kind) const;
  KernelPsi pow(int exponent) const;

  friend KernelPsi operator+(const KernelPsi& a, const KernelPsi& b);
  friend KernelPsi operator*(const KernelPsi& a, const KernelPsi& b);
  friend KernelPsi operator*(double alpha, const KernelPsi& a);

 private:
  explicit KernelPsi(std::shared_ptr<const Node> root) : root_(std::move(root)) {}
  std::shared_ptr<const Node> root_;
};

// Dual map of a single layer and its derivative, on scalars.
double layer_map(LayerKind kind, double c);
double layer_map_derivative(LayerKind kind, double c);

KernelPsi compose_ck(std::span<const LayerKind> layers);
// Theta^l = Theta^{l-1} * map'(Psi^{l-1}) + Psi^l with Theta^0 = Psi^0 = c.
KernelPsi compose_ntk(std::span<const LayerKind> layers);

struct Spectrum {
  int dim = 0;
  std::vector<double> mu;  // mu[k] for k = 0..dim
};

// mu_k = E_x[x_1 ... x_k Psi(mean(x))], summed exactly over level sets.
double eigenvalue_mu(const KernelPsi& psi, int dim, int k);
Spectrum spectrum(const KernelPsi& psi, int dim);

struct OrderingVerdict {
  bool holds = true;
  // (i, j) with j = i + 2 and mu_j > mu_i + tolerance, first by i.
  std::optional<std::pair<int, int>> violation;
};

// mu_0 >= mu_2 >= ... and mu_1 >= mu_3 >= ...
OrderingVerdict verify_weak_spectral_bias(const Spectrum& s, double tolerance = kOrderingTolerance);

// Applies the 2^d x 2^d Gram matrix K(x, y) = Psi(<x, y> / d) to every
// character chi_U and returns max_U || 2^-d K chi_U - mu_|U| chi_U ||_inf.
double gram_eigencheck(const KernelPsi& psi, int dim);

}  // namespace senslab::kernels
