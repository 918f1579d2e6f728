#pragma once

// Reference implementations used as test oracles. They favour plain loops
// over the cached and incremental paths of the library.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "senslab/attention_model.hpp"
#include "senslab/synthetic_data.hpp"

namespace oracle {

using senslab::model::Activation;
using senslab::model::AttentionParams;
using senslab::synth::TokenSequence;

inline TokenSequence random_sequence(int T, int d_tok, senslab::model::Rng& rng, bool with_noise) {
  std::uniform_int_distribution<int> tok(1, d_tok);
  std::normal_distribution<double> normal(0.0, 0.3);
  TokenSequence s;
  s.label = (rng() & 1U) ? 1 : -1;
  for (int t = 0; t < T; ++t) {
    s.tokens.push_back(tok(rng));
    s.roles.push_back(senslab::synth::Role::irrelevant);
  }
  if (with_noise) s.noise = Eigen::MatrixXd::NullaryExpr(T, d_tok, [&] { return normal(rng); });
  return s;
}

inline Eigen::MatrixXd dense_input(const TokenSequence& s, int d_tok) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.tokens.size()), d_tok);
  for (std::size_t t = 0; t < s.tokens.size(); ++t) x(static_cast<Eigen::Index>(t), s.tokens[t] - 1) = 1.0;
  if (s.has_noise()) x += s.noise;
  return x;
}

// <U, act(X Wq Wk^T X^T) X Wv> with the activation written out entrywise.
inline double score(const AttentionParams& p, const Eigen::MatrixXd& x) {
  const Eigen::Index T = x.rows();
  Eigen::MatrixXd s = x * p.query * p.key.transpose() * x.transpose();
  Eigen::MatrixXd a(T, T);
  for (Eigen::Index i = 0; i < T; ++i) {
    if (p.activation == Activation::softmax) {
      double z = 0.0;
      for (Eigen::Index j = 0; j < T; ++j) z += std::exp(s(i, j));
      for (Eigen::Index j = 0; j < T; ++j) a(i, j) = std::exp(s(i, j)) / z;
    } else if (p.activation == Activation::relu) {
      for (Eigen::Index j = 0; j < T; ++j) a(i, j) = s(i, j) > 0 ? s(i, j) : 0.0;
    } else {
      for (Eigen::Index j = 0; j < T; ++j) a(i, j) = s(i, j) / std::sqrt(static_cast<double>(T * x.cols()));
    }
  }
  return (p.head.array() * (a * x * p.value).array()).sum();
}

inline double logistic(double margin) { return std::log1p(std::exp(-margin)); }

inline double loss(const AttentionParams& p, const std::vector<TokenSequence>& data) {
  double sum = 0.0;
  for (const auto& s : data) sum += logistic(s.label * score(p, dense_input(s, p.token_dim())));
  return sum / static_cast<double>(data.size());
}

inline senslab::model::Batch as_batch(const std::vector<TokenSequence>& data) {
  senslab::model::Batch b;
  for (const auto& s : data) b.push_back(&s);
  return b;
}

// Central difference of f along coordinate i of the flattened parameters.
template <class F>
double central_difference(const AttentionParams& p, std::size_t i, double h, F&& f) {
  auto flat = p.flatten();
  auto plus = flat, minus = flat;
  plus[i] += h;
  minus[i] -= h;
  AttentionParams pp = p, pm = p;
  pp.assign_flat(plus);
  pm.assign_flat(minus);
  return (f(pp) - f(pm)) / (2 * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace oracle
