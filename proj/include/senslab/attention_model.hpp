#pragma once

// Single-head self-attention with a linear head:
//
//   score(X) = < U, act(X W_Q W_K^T X^T) X W_V >
//
// X is T x d_tok (one row per token), U is T x d_v. Gradients are written
// out by hand; see accumulate_score_gradient.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "senslab/synthetic_data.hpp"

namespace senslab::model {

using Rng = synth::Rng;

enum class Activation { softmax, relu, linear_scaled };
std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct ModelShape {
  int seq_len = 0;
  int token_dim = 0;
  int head_dim = 0;
  int value_dim = 0;
};

struct AttentionParams {
  Eigen::MatrixXd query;  // d_tok x d_h
  Eigen::MatrixXd key;    // d_tok x d_h
  Eigen::MatrixXd value;  // d_tok x d_v
  Eigen::MatrixXd head;   // T x d_v
  Activation activation = Activation::softmax;

  static AttentionParams zeros(const ModelShape& shape, Activation activation);

  ModelShape shape() const;
  int seq_len() const { return static_cast<int>(head.rows()); }
  int token_dim() const { return static_cast<int>(query.rows()); }
  std::size_t parameter_count() const;

  // Throws ConfigError on inconsistent shapes, NumericError on non-finite entries.
  void validate() const;

  // Flat view in the order (query, key, value, head), each column-major.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  AttentionParams& operator+=(const AttentionParams& other);
  AttentionParams& operator*=(double factor);
  bool operator==(const AttentionParams& other) const;
};

// Zero-mean Gaussian entries with standard deviation `scale`.
AttentionParams init_params(const ModelShape& shape, Activation activation, double scale, Rng& rng);

// A model input: one-hot rows for `tokens`, plus an optional dense
// perturbation and an optional extra perturbation of a single row.
struct SequenceView {
  std::span<const int> tokens;
  const Eigen::MatrixXd* noise = nullptr;
  int extra_row = -1;
  const Eigen::RowVectorXd* extra = nullptr;

  explicit SequenceView(const synth::TokenSequence& seq)
      : tokens(seq.tokens), noise(seq.has_noise() ? &seq.noise : nullptr) {}
  SequenceView(std::span<const int> t, const Eigen::MatrixXd* n) : tokens(t), noise(n) {}

  SequenceView with_row_noise(int row, const Eigen::RowVectorXd& delta) const {
    SequenceView v = *this;
    v.extra_row = row;
    v.extra = &delta;
    return v;
  }

  // X W for a weight matrix with d_tok rows.
  Eigen::MatrixXd project(const Eigen::MatrixXd& weight) const;
  // grad += X^T upstream
  void accumulate_transpose_product(const Eigen::MatrixXd& upstream, Eigen::MatrixXd& grad) const;
  Eigen::MatrixXd dense(int token_dim) const;
};

struct ForwardCache {
  Eigen::MatrixXd q, k, v;  // projections
  Eigen::MatrixXd scores;   // X W_Q W_K^T X^T
  Eigen::MatrixXd attn;     // act(scores)
  Eigen::MatrixXd output;   // attn V
  double score = 0.0;
};

// Scale applied to scores by the linear_scaled activation: (T d_tok)^{-1/2}.
double linear_attention_scale(int seq_len, int token_dim);

// Throws NumericError naming the stage that produced a non-finite value.
ForwardCache forward(const AttentionParams& params, SequenceView x);
double score(const AttentionParams& params, SequenceView x);
inline double score(const AttentionParams& params, const synth::TokenSequence& seq) {
  return score(params, SequenceView(seq));
}
// sign with sign(0) = +1
inline int predict(double s) { return s >= 0.0 ? 1 : -1; }

// grad += weight * d score / d params
void accumulate_score_gradient(const AttentionParams& params, SequenceView x, const ForwardCache& cache,
                               double weight, AttentionParams& grad);

using Batch = std::vector<const synth::TokenSequence*>;

// log(1 + exp(-margin)), stable for large |margin|.
double logistic_loss(double margin);
// d/d score of logistic_loss(label * score).
double logistic_loss_derivative(double score, int label);

struct LossAndGradient {
  double loss = 0.0;
  AttentionParams grad;
};

// Mean logistic loss over the batch and its exact gradient.
LossAndGradient loss_and_gradients(const AttentionParams& params, const Batch& batch);

double accuracy(const AttentionParams& params, const synth::Dataset& data);

struct AlignmentMetrics {
  double sparse = 0.0;
  double sparse_literal = 0.0;
  double frequent = 0.0;
  double irrelevant = 0.0;
  int excluded_rows = 0;  // zero-norm rows of U W_V^T
};

// Mean cosine similarity between the rows of U W_V^T and the reference vectors.
AlignmentMetrics alignment_metrics(const AttentionParams& params, const synth::SyntheticParams& p);

struct AttentionMass {
  double sparse = 0.0;
  double frequent = 0.0;
  double irrelevant = 0.0;
};

// Attention weight landing on each role (summed over query rows), averaged over examples.
AttentionMass attention_mass(const AttentionParams& params, const synth::Dataset& data);

// Scores a sequence after replacing one row, reusing the cached forward pass.
// Cost per query is O(T (d_h + d_v)) instead of a full O(T^2 (d_h + d_v)) pass.
class ReplacementProbe {
 public:
  ReplacementProbe(const AttentionParams& params, SequenceView x);

  double base_score() const { return base_; }
  // Row `position` becomes e_token + noise (noise may be null).
  double score_replaced(int position, int token, const Eigen::RowVectorXd* noise);

 private:
  double act(double s) const;
  double full_row(int t, const Eigen::RowVectorXd& srow, const Eigen::RowVectorXd& grow) const;

  const AttentionParams& params_;
  int seq_len_;
  double linear_scale_;
  Eigen::MatrixXd q_, k_, v_;
  Eigen::MatrixXd scores_;
  Eigen::MatrixXd gain_;  // U V^T
  // Per row: softmax max, normalizer and weighted numerator (softmax), or
  // weighted sum (relu / linear).
  Eigen::VectorXd row_max_, row_norm_, row_sum_;
  Eigen::MatrixXd weights_;  // exp(s - max) for softmax, act(s) otherwise
  double base_ = 0.0;
};

}  // namespace senslab::model
