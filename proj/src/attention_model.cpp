#include "senslab/attention_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "senslab/error.hpp"

namespace senslab::model {
namespace {

void require_finite(const Eigen::MatrixXd& m, const char* stage) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite value in attention ") + stage);
}

template <typename F>
void for_each_matrix(AttentionParams& p, F&& f) {
  f(p.query);
  f(p.key);
  f(p.value);
  f(p.head);
}

template <typename F>
void for_each_matrix(const AttentionParams& p, F&& f) {
  f(p.query);
  f(p.key);
  f(p.value);
  f(p.head);
}

void softmax_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    const double mx = m.row(t).maxCoeff();
    m.row(t) = (m.row(t).array() - mx).exp().matrix();
    m.row(t) /= m.row(t).sum();
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::softmax:
      return "softmax";
    case Activation::relu:
      return "relu";
    case Activation::linear_scaled:
      return "linear";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "softmax") return Activation::softmax;
  if (name == "relu") return Activation::relu;
  if (name == "linear" || name == "linear_scaled") return Activation::linear_scaled;
  throw ConfigError("unknown attention activation '" + std::string(name) + "'");
}

AttentionParams AttentionParams::zeros(const ModelShape& s, Activation activation) {
  if (s.seq_len < 1 || s.token_dim < 1 || s.head_dim < 1 || s.value_dim < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  AttentionParams p;
  p.query = Eigen::MatrixXd::Zero(s.token_dim, s.head_dim);
  p.key = Eigen::MatrixXd::Zero(s.token_dim, s.head_dim);
  p.value = Eigen::MatrixXd::Zero(s.token_dim, s.value_dim);
  p.head = Eigen::MatrixXd::Zero(s.seq_len, s.value_dim);
  p.activation = activation;
  return p;
}

ModelShape AttentionParams::shape() const {
  return {static_cast<int>(head.rows()), static_cast<int>(query.rows()), static_cast<int>(query.cols()),
          static_cast<int>(value.cols())};
}

std::size_t AttentionParams::parameter_count() const {
  std::size_t n = 0;
  for_each_matrix(*this, [&](const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void AttentionParams::validate() const {
  if (query.rows() != key.rows() || query.rows() != value.rows() || query.cols() != key.cols() ||
      value.cols() != head.cols() || query.size() == 0 || head.size() == 0) {
    throw ConfigError("attention parameter shapes are inconsistent");
  }
  for_each_matrix(*this, [](const Eigen::MatrixXd& m) { require_finite(m, "parameters"); });
}

std::vector<double> AttentionParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for_each_matrix(*this, [&](const Eigen::MatrixXd& m) { flat.insert(flat.end(), m.data(), m.data() + m.size()); });
  return flat;
}

void AttentionParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ConfigError("flat parameter vector has the wrong length");
  std::size_t offset = 0;
  for_each_matrix(*this, [&](Eigen::MatrixXd& m) {
    std::copy_n(flat.data() + offset, m.size(), m.data());
    offset += static_cast<std::size_t>(m.size());
  });
}

AttentionParams& AttentionParams::operator+=(const AttentionParams& other) {
  query += other.query;
  key += other.key;
  value += other.value;
  head += other.head;
  return *this;
}

AttentionParams& AttentionParams::operator*=(double factor) {
  for_each_matrix(*this, [&](Eigen::MatrixXd& m) { m *= factor; });
  return *this;
}

bool AttentionParams::operator==(const AttentionParams& o) const {
  return activation == o.activation && query == o.query && key == o.key && value == o.value && head == o.head;
}

AttentionParams init_params(const ModelShape& shape, Activation activation, double scale, Rng& rng) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("init scale must be positive and finite");
  AttentionParams p = AttentionParams::zeros(shape, activation);
  std::normal_distribution<double> normal(0.0, scale);
  for_each_matrix(p, [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  });
  return p;
}

Eigen::MatrixXd SequenceView::project(const Eigen::MatrixXd& weight) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(tokens.size()), weight.cols());
  for (std::size_t t = 0; t < tokens.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = weight.row(tokens[t] - 1);
  if (noise) out.noalias() += (*noise) * weight;
  if (extra) out.row(extra_row).noalias() += (*extra) * weight;
  return out;
}

void SequenceView::accumulate_transpose_product(const Eigen::MatrixXd& upstream, Eigen::MatrixXd& grad) const {
  for (std::size_t t = 0; t < tokens.size(); ++t) grad.row(tokens[t] - 1) += upstream.row(static_cast<Eigen::Index>(t));
  if (noise) grad.noalias() += noise->transpose() * upstream;
  if (extra) grad.noalias() += extra->transpose() * upstream.row(extra_row);
}

Eigen::MatrixXd SequenceView::dense(int token_dim) const {
  Eigen::MatrixXd x = noise ? *noise : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), token_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) x(static_cast<Eigen::Index>(t), tokens[t] - 1) += 1.0;
  if (extra) x.row(extra_row) += *extra;
  return x;
}

double linear_attention_scale(int seq_len, int token_dim) {
  return 1.0 / std::sqrt(static_cast<double>(seq_len) * token_dim);
}

ForwardCache forward(const AttentionParams& params, SequenceView x) {
  if (static_cast<Eigen::Index>(x.tokens.size()) != params.head.rows()) {
    throw ConfigError("sequence length " + std::to_string(x.tokens.size()) + " does not match the head's " +
                      std::to_string(params.head.rows()) + " rows");
  }
  ForwardCache c;
  c.q = x.project(params.query);
  c.k = x.project(params.key);
  c.v = x.project(params.value);
  require_finite(c.q, "query projection");
  require_finite(c.k, "key projection");
  require_finite(c.v, "value projection");
  c.scores.noalias() = c.q * c.k.transpose();
  require_finite(c.scores, "scores");
  switch (params.activation) {
    case Activation::softmax:
      c.attn = c.scores;
      softmax_rows(c.attn);
      break;
    case Activation::relu:
      c.attn = c.scores.cwiseMax(0.0);
      break;
    case Activation::linear_scaled:
      c.attn = c.scores * linear_attention_scale(params.seq_len(), params.token_dim());
      break;
  }
  require_finite(c.attn, "attention map");
  c.output.noalias() = c.attn * c.v;
  c.score = params.head.cwiseProduct(c.output).sum();
  if (!std::isfinite(c.score)) throw NumericError("non-finite value in attention head output");
  return c;
}

double score(const AttentionParams& params, SequenceView x) { return forward(params, x).score; }

void accumulate_score_gradient(const AttentionParams& params, SequenceView x, const ForwardCache& c, double weight,
                               AttentionParams& grad) {
  grad.head.noalias() += weight * c.output;
  const Eigen::MatrixXd d_output = weight * params.head;
  const Eigen::MatrixXd d_attn = d_output * c.v.transpose();
  const Eigen::MatrixXd d_value = c.attn.transpose() * d_output;

  Eigen::MatrixXd d_scores;
  switch (params.activation) {
    case Activation::softmax: {
      // Row-wise softmax Jacobian: a * (g - <g, a>).
      const Eigen::VectorXd inner = c.attn.cwiseProduct(d_attn).rowwise().sum();
      d_scores = c.attn.cwiseProduct(d_attn - inner.replicate(1, d_attn.cols()));
      break;
    }
    case Activation::relu:
      d_scores = d_attn.cwiseProduct((c.scores.array() > 0.0).cast<double>().matrix());
      break;
    case Activation::linear_scaled:
      d_scores = d_attn * linear_attention_scale(params.seq_len(), params.token_dim());
      break;
  }
  const Eigen::MatrixXd d_q = d_scores * c.k;
  const Eigen::MatrixXd d_k = d_scores.transpose() * c.q;
  x.accumulate_transpose_product(d_q, grad.query);
  x.accumulate_transpose_product(d_k, grad.key);
  x.accumulate_transpose_product(d_value, grad.value);
}

double logistic_loss(double margin) {
  return margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

double logistic_loss_derivative(double s, int label) {
  const double margin = label * s;
  // sigmoid(-margin)
  const double p = margin > 0.0 ? std::exp(-margin) / (1.0 + std::exp(-margin)) : 1.0 / (1.0 + std::exp(margin));
  return -label * p;
}

LossAndGradient loss_and_gradients(const AttentionParams& params, const Batch& batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  LossAndGradient out;
  out.grad = AttentionParams::zeros(params.shape(), params.activation);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const synth::TokenSequence* ex : batch) {
    const SequenceView x(*ex);
    const ForwardCache c = forward(params, x);
    out.loss += logistic_loss(ex->label * c.score);
    accumulate_score_gradient(params, x, c, logistic_loss_derivative(c.score, ex->label) * inv, out.grad);
  }
  out.loss *= inv;
  return out;
}

double accuracy(const AttentionParams& params, const synth::Dataset& data) {
  if (data.examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data.examples) {
    if (predict(score(params, ex)) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.examples.size());
}

AlignmentMetrics alignment_metrics(const AttentionParams& params, const synth::SyntheticParams& p) {
  const synth::ReferenceVectors ref = synth::reference_vectors(p);
  if (ref.sparse.size() != params.token_dim()) throw ConfigError("token dimension mismatch in alignment metrics");
  const Eigen::MatrixXd rows = params.head * params.value.transpose();
  AlignmentMetrics m;
  int used = 0;
  for (Eigen::Index t = 0; t < rows.rows(); ++t) {
    const double norm = rows.row(t).norm();
    if (norm == 0.0) {
      ++m.excluded_rows;
      continue;
    }
    ++used;
    m.sparse += rows.row(t).dot(ref.sparse) / (norm * ref.sparse.norm());
    m.sparse_literal += rows.row(t).dot(ref.sparse_literal) / (norm * ref.sparse_literal.norm());
    m.frequent += rows.row(t).dot(ref.frequent) / (norm * ref.frequent.norm());
    m.irrelevant += rows.row(t).dot(ref.irrelevant) / (norm * ref.irrelevant.norm());
  }
  if (used > 0) {
    m.sparse /= used;
    m.sparse_literal /= used;
    m.frequent /= used;
    m.irrelevant /= used;
  }
  return m;
}

AttentionMass attention_mass(const AttentionParams& params, const synth::Dataset& data) {
  AttentionMass mass;
  if (data.examples.empty()) return mass;
  for (const auto& ex : data.examples) {
    const ForwardCache c = forward(params, SequenceView(ex));
    const Eigen::VectorXd column_mass = c.attn.colwise().sum().transpose();
    for (std::size_t s = 0; s < ex.roles.size(); ++s) {
      const double w = column_mass(static_cast<Eigen::Index>(s));
      switch (ex.roles[s]) {
        case synth::Role::sparse:
          mass.sparse += w;
          break;
        case synth::Role::frequent_same:
        case synth::Role::frequent_opposite:
          mass.frequent += w;
          break;
        case synth::Role::irrelevant:
          mass.irrelevant += w;
          break;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(data.examples.size());
  mass.sparse *= inv;
  mass.frequent *= inv;
  mass.irrelevant *= inv;
  return mass;
}

ReplacementProbe::ReplacementProbe(const AttentionParams& params, SequenceView x)
    : params_(params),
      seq_len_(params.seq_len()),
      linear_scale_(linear_attention_scale(params.seq_len(), params.token_dim())) {
  if (static_cast<int>(x.tokens.size()) != seq_len_) throw ConfigError("sequence length does not match the model");
  q_ = x.project(params.query);
  k_ = x.project(params.key);
  v_ = x.project(params.value);
  scores_.noalias() = q_ * k_.transpose();
  gain_.noalias() = params.head * v_.transpose();
  require_finite(scores_, "scores");

  row_max_ = Eigen::VectorXd::Zero(seq_len_);
  row_norm_ = Eigen::VectorXd::Zero(seq_len_);
  row_sum_ = Eigen::VectorXd::Zero(seq_len_);
  weights_.resize(seq_len_, seq_len_);
  base_ = 0.0;
  for (int t = 0; t < seq_len_; ++t) {
    if (params.activation == Activation::softmax) {
      row_max_(t) = scores_.row(t).maxCoeff();
      weights_.row(t) = (scores_.row(t).array() - row_max_(t)).exp().matrix();
      row_norm_(t) = weights_.row(t).sum();
      row_sum_(t) = weights_.row(t).dot(gain_.row(t));
      base_ += row_sum_(t) / row_norm_(t);
    } else {
      for (int s = 0; s < seq_len_; ++s) weights_(t, s) = act(scores_(t, s));
      row_sum_(t) = weights_.row(t).dot(gain_.row(t));
      base_ += row_sum_(t);
    }
  }
}

double ReplacementProbe::act(double s) const {
  switch (params_.activation) {
    case Activation::relu:
      return s > 0.0 ? s : 0.0;
    case Activation::linear_scaled:
      return s * linear_scale_;
    case Activation::softmax:
      break;
  }
  return s;
}

double ReplacementProbe::full_row(int, const Eigen::RowVectorXd& srow, const Eigen::RowVectorXd& grow) const {
  if (params_.activation == Activation::softmax) {
    const double mx = srow.maxCoeff();
    const Eigen::RowVectorXd e = (srow.array() - mx).exp().matrix();
    return e.dot(grow) / e.sum();
  }
  double total = 0.0;
  for (Eigen::Index s = 0; s < srow.size(); ++s) total += act(srow(s)) * grow(s);
  return total;
}

double ReplacementProbe::score_replaced(int tau, int token, const Eigen::RowVectorXd* noise) {
  if (tau < 0 || tau >= seq_len_) throw DomainError("replacement position out of range");
  if (token < 1 || token > params_.token_dim()) throw DomainError("replacement token out of range");
  Eigen::RowVectorXd xq = params_.query.row(token - 1);
  Eigen::RowVectorXd xk = params_.key.row(token - 1);
  Eigen::RowVectorXd xv = params_.value.row(token - 1);
  if (noise) {
    xq.noalias() += (*noise) * params_.query;
    xk.noalias() += (*noise) * params_.key;
    xv.noalias() += (*noise) * params_.value;
  }
  const Eigen::VectorXd new_col = q_ * xk.transpose();   // scores(t, tau), t != tau
  Eigen::RowVectorXd new_row = xq * k_.transpose();      // scores(tau, s), s != tau
  new_row(tau) = xq.dot(xk);
  const Eigen::VectorXd new_gain = params_.head * xv.transpose();  // gain(t, tau)

  double total = 0.0;
  for (int t = 0; t < seq_len_; ++t) {
    if (t == tau) continue;
    const double s_new = new_col(t);
    const double g_old = gain_(t, tau);
    const double g_new = new_gain(t);
    if (params_.activation == Activation::softmax) {
      const double w_old = weights_(t, tau);
      const double shift = s_new - row_max_(t);
      if (w_old > 0.5 * row_norm_(t) || shift > 30.0) {
        Eigen::RowVectorXd srow = scores_.row(t);
        Eigen::RowVectorXd grow = gain_.row(t);
        srow(tau) = s_new;
        grow(tau) = g_new;
        total += full_row(t, srow, grow);
        continue;
      }
      const double w_new = std::exp(shift);
      const double norm = row_norm_(t) - w_old + w_new;
      const double num = row_sum_(t) - w_old * g_old + w_new * g_new;
      total += num / norm;
    } else {
      total += row_sum_(t) - weights_(t, tau) * g_old + act(s_new) * g_new;
    }
  }
  Eigen::RowVectorXd grow = gain_.row(tau);
  grow(tau) = new_gain(tau);
  total += full_row(tau, new_row, grow);
  if (!std::isfinite(total)) throw NumericError("non-finite value in attention replacement probe");
  return total;
}

}  // namespace senslab::model
