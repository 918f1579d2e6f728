#include "senslab/kernel_spectra.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "senslab/boolean_fourier.hpp"
#include "senslab/error.hpp"

namespace senslab::kernels {

struct KernelPsi::Node {
  enum class Op { input, constant, sum, product, scale, power, layer, layer_derivative };
  Op op = Op::input;
  double value = 0.0;  // constant value or scale factor
  int exponent = 1;
  LayerKind kind = LayerKind::dense_identity;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;

  double eval(double c) const {
    switch (op) {
      case Op::input:
        return c;
      case Op::constant:
        return value;
      case Op::sum:
        return lhs->eval(c) + rhs->eval(c);
      case Op::product:
        return lhs->eval(c) * rhs->eval(c);
      case Op::scale:
        return value * lhs->eval(c);
      case Op::power: {
        const double base = lhs->eval(c);
        double out = 1.0;
        for (int i = 0; i < exponent; ++i) out *= base;
        return out;
      }
      case Op::layer:
        return layer_map(kind, lhs->eval(c));
      case Op::layer_derivative:
        return layer_map_derivative(kind, lhs->eval(c));
    }
    return 0.0;
  }
};

namespace {

using Node = KernelPsi::Node;

std::shared_ptr<const Node> make(Node node) { return std::make_shared<const Node>(std::move(node)); }

// Guard against round-off pushing a correlation just outside [-1, 1].
double clamp_unit(double c) { return std::fmax(-1.0, std::fmin(1.0, c)); }

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense_identity:
      return "dense:identity";
    case LayerKind::dense_relu:
      return "dense:relu";
    case LayerKind::dense_erf:
      return "dense:erf";
    case LayerKind::linear_attention:
      return "attn";
  }
  return "?";
}

LayerKind parse_layer(std::string_view token) {
  while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
  while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
  if (token == "dense:identity" || token == "dense:linear" || token == "identity") return LayerKind::dense_identity;
  if (token == "dense:relu" || token == "relu") return LayerKind::dense_relu;
  if (token == "dense:erf" || token == "erf") return LayerKind::dense_erf;
  if (token == "attn" || token == "linear_attention") return LayerKind::linear_attention;
  throw ConfigError("unknown layer kind '" + std::string(token) + "'");
}

std::vector<LayerKind> parse_layers(std::string_view spec) {
  std::vector<LayerKind> layers;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::size_t end = comma == std::string_view::npos ? spec.size() : comma;
    layers.push_back(parse_layer(spec.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return layers;
}

double layer_map(LayerKind kind, double c) {
  switch (kind) {
    case LayerKind::dense_identity:
      return c;
    case LayerKind::dense_relu: {
      // Arc-cosine kernel of degree one, normalized so that 1 -> 1.
      const double u = clamp_unit(c);
      return (std::sqrt(1.0 - u * u) + (std::numbers::pi - std::acos(u)) * u) / std::numbers::pi;
    }
    case LayerKind::dense_erf:
      return 2.0 / std::numbers::pi * std::asin(2.0 * c / 3.0);
    case LayerKind::linear_attention:
      return c * c * c;
  }
  return 0.0;
}

double layer_map_derivative(LayerKind kind, double c) {
  switch (kind) {
    case LayerKind::dense_identity:
      return 1.0;
    case LayerKind::dense_relu:
      return (std::numbers::pi - std::acos(clamp_unit(c))) / std::numbers::pi;
    case LayerKind::dense_erf:
      return 4.0 / (3.0 * std::numbers::pi) / std::sqrt(1.0 - 4.0 * c * c / 9.0);
    case LayerKind::linear_attention:
      return 3.0 * c * c;
  }
  return 0.0;
}

KernelPsi KernelPsi::identity() { return KernelPsi(make(Node{})); }

KernelPsi KernelPsi::constant(double value) {
  Node n;
  n.op = Node::Op::constant;
  n.value = value;
  return KernelPsi(make(std::move(n)));
}

double KernelPsi::operator()(double c) const { return root_->eval(c); }

KernelPsi KernelPsi::through(LayerKind kind) const {
  Node n;
  n.op = Node::Op::layer;
  n.kind = kind;
  n.lhs = root_;
  return KernelPsi(make(std::move(n)));
}

KernelPsi KernelPsi::through_derivative(LayerKind kind) const {
  Node n;
  n.op = Node::Op::layer_derivative;
  n.kind = kind;
  n.lhs = root_;
  return KernelPsi(make(std::move(n)));
}

KernelPsi KernelPsi::pow(int exponent) const {
  if (exponent < 0) throw DomainError("negative kernel exponent");
  Node n;
  n.op = Node::Op::power;
  n.exponent = exponent;
  n.lhs = root_;
  return KernelPsi(make(std::move(n)));
}

KernelPsi operator+(const KernelPsi& a, const KernelPsi& b) {
  Node n;
  n.op = Node::Op::sum;
  n.lhs = a.root_;
  n.rhs = b.root_;
  return KernelPsi(make(std::move(n)));
}

KernelPsi operator*(const KernelPsi& a, const KernelPsi& b) {
  Node n;
  n.op = Node::Op::product;
  n.lhs = a.root_;
  n.rhs = b.root_;
  return KernelPsi(make(std::move(n)));
}

KernelPsi operator*(double alpha, const KernelPsi& a) {
  Node n;
  n.op = Node::Op::scale;
  n.value = alpha;
  n.lhs = a.root_;
  return KernelPsi(make(std::move(n)));
}

KernelPsi compose_ck(std::span<const LayerKind> layers) {
  if (layers.empty()) throw ConfigError("layer stack is empty");
  KernelPsi psi = KernelPsi::identity();
  for (LayerKind kind : layers) psi = psi.through(kind);
  return psi;
}

KernelPsi compose_ntk(std::span<const LayerKind> layers) {
  if (layers.empty()) throw ConfigError("layer stack is empty");
  KernelPsi psi = KernelPsi::identity();
  KernelPsi theta = KernelPsi::identity();
  for (LayerKind kind : layers) {
    KernelPsi next = psi.through(kind);
    theta = theta * psi.through_derivative(kind) + next;
    psi = next;
  }
  return theta;
}

namespace {

// Pascal triangle up to kMaxSpectrumDim; C(40, 20) < 2^38, exact in int64.
const std::vector<std::vector<std::int64_t>>& binomials() {
  static const auto table = [] {
    std::vector<std::vector<std::int64_t>> t(kMaxSpectrumDim + 1);
    for (int n = 0; n <= kMaxSpectrumDim; ++n) {
      t[n].assign(n + 1, 1);
      for (int r = 1; r < n; ++r) t[n][r] = t[n - 1][r - 1] + t[n - 1][r];
    }
    return t;
  }();
  return table;
}

std::int64_t choose(int n, int r) {
  if (r < 0 || r > n) return 0;
  return binomials()[n][r];
}

// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_spectrum_args(int dim, int k) {
  if (dim < 1) throw DomainError("spectrum dimension must be positive");
  if (dim > kMaxSpectrumDim) {
    throw CapacityError("spectrum dimension " + std::to_string(dim) + " exceeds " +
                        std::to_string(kMaxSpectrumDim));
  }
  if (k < 0 || k > dim) throw DomainError("degree k=" + std::to_string(k) + " outside [0, d]");
}

}  // namespace

double eigenvalue_mu(const KernelPsi& psi, int dim, int k) {
  check_spectrum_args(dim, k);
  // Group terms by s = number of +1 coordinates; the signed weight
  // sum_a (-1)^(k-a) C(k, a) C(d-k, s-a) is an exact integer.
  CompensatedSum total;
  for (int s = 0; s <= dim; ++s) {
    std::int64_t weight = 0;
    for (int a = std::max(0, s - (dim - k)); a <= std::min(k, s); ++a) {
      const std::int64_t term = choose(k, a) * choose(dim - k, s - a);
      weight += ((k - a) % 2 == 0) ? term : -term;
    }
    if (weight == 0) continue;
    const double c = static_cast<double>(2 * s - dim) / dim;
    total.add(static_cast<double>(weight) * psi(c));
  }
  return std::ldexp(total.value(), -dim);
}

Spectrum spectrum(const KernelPsi& psi, int dim) {
  check_spectrum_args(dim, 0);
  Spectrum s;
  s.dim = dim;
  s.mu.reserve(dim + 1);
  for (int k = 0; k <= dim; ++k) s.mu.push_back(eigenvalue_mu(psi, dim, k));
  return s;
}

OrderingVerdict verify_weak_spectral_bias(const Spectrum& s, double tolerance) {
  for (std::size_t i = 0; i + 2 < s.mu.size(); ++i) {
    if (s.mu[i + 2] > s.mu[i] + tolerance) {
      return {false, std::make_pair(static_cast<int>(i), static_cast<int>(i + 2))};
    }
  }
  return {};
}

double gram_eigencheck(const KernelPsi& psi, int dim) {
  if (dim < 1) throw DomainError("Gram check dimension must be positive");
  if (dim > kMaxGramDim) {
    throw CapacityError("Gram check dimension " + std::to_string(dim) + " exceeds " +
                        std::to_string(kMaxGramDim));
  }
  const std::uint32_t n = std::uint32_t{1} << dim;
  // <x, y> = d - 2 * popcount(x xor y).
  std::vector<double> by_distance(dim + 1);
  for (int h = 0; h <= dim; ++h) by_distance[h] = psi(static_cast<double>(dim - 2 * h) / dim);
  const Spectrum s = spectrum(psi, dim);

  double worst = 0.0;
  std::vector<double> row(n);
  for (std::uint32_t x = 0; x < n; ++x) {
    for (std::uint32_t y = 0; y < n; ++y) row[y] = by_distance[std::popcount(x ^ y)];
    // row[U] <- sum_y K(x, y) chi_U(y) = (K chi_U)(x)
    boolean::walsh_hadamard(row);
    for (std::uint32_t u = 0; u < n; ++u) {
      const double lhs = std::ldexp(row[u], -dim);
      const double rhs = s.mu[std::popcount(u)] * boolean::character(u, x);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

}  // namespace senslab::kernels
