#include "senslab/interventions.hpp"

#include <cmath>
#include <random>

#include "senslab/error.hpp"
#include "senslab/random.hpp"

namespace senslab::interventions {

void AugmentSpec::validate() const {
  if (!(variance > 0.0)) throw ConfigError("augmentation variance must be positive");
  if (copies < 1) throw ConfigError("augmentation copies must be at least 1");
}

void RegSpec::validate() const {
  if (!(strength >= 0.0)) throw ConfigError("regularization strength must be non-negative");
  if (!(variance > 0.0)) throw ConfigError("regularization noise variance must be positive");
  if (patches < 1) throw ConfigError("regularization patches must be at least 1");
}

void SharpnessSpec::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("sharpness sigma must be positive");
  if (repeats < 1) throw ConfigError("sharpness repeats must be at least 1");
}

synth::Dataset augment_dataset(const synth::Dataset& data, const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  if (data.kind != synth::DataKind::train) throw ConfigError("only training sets are augmented");
  synth::Dataset out = data;
  const int T = data.params.seq_len;
  const int d = data.params.token_dim;
  std::normal_distribution<double> normal(0.0, std::sqrt(spec.variance));
  out.examples.reserve(data.examples.size() * (1 + static_cast<std::size_t>(spec.copies)));
  for (const auto& ex : data.examples) {
    for (int c = 0; c < spec.copies; ++c) {
      synth::TokenSequence copy = ex;
      Eigen::MatrixXd noise(T, d);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
      copy.noise = ex.has_noise() ? Eigen::MatrixXd(ex.noise + noise) : noise;
      out.examples.push_back(std::move(copy));
    }
  }
  return out;
}

RegNoise draw_reg_noise(const model::Batch& batch, int token_dim, const RegSpec& spec, Rng& rng) {
  spec.validate();
  RegNoise noise;
  noise.positions.resize(batch.size());
  noise.deltas.resize(batch.size());
  std::normal_distribution<double> normal(0.0, std::sqrt(spec.variance));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::uniform_int_distribution<int> position(0, static_cast<int>(batch[b]->tokens.size()) - 1);
    for (int j = 0; j < spec.patches; ++j) {
      noise.positions[b].push_back(position(rng));
      Eigen::RowVectorXd delta(token_dim);
      for (Eigen::Index i = 0; i < delta.size(); ++i) delta(i) = normal(rng);
      noise.deltas[b].push_back(std::move(delta));
    }
  }
  return noise;
}

model::LossAndGradient regularized_loss_with_noise(const model::AttentionParams& params, const model::Batch& batch,
                                                   const RegSpec& spec, const RegNoise& noise) {
  if (spec.strength == 0.0) return model::loss_and_gradients(params, batch);
  if (batch.empty()) throw ConfigError("empty batch");
  model::LossAndGradient out;
  out.grad = model::AttentionParams::zeros(params.shape(), params.activation);
  const double inv = 1.0 / static_cast<double>(batch.size());
  double penalty = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const model::SequenceView clean(*batch[b]);
    const model::ForwardCache c = model::forward(params, clean);
    out.loss += model::logistic_loss(batch[b]->label * c.score);
    double w_clean = model::logistic_loss_derivative(c.score, batch[b]->label) * inv;
    for (std::size_t j = 0; j < noise.positions[b].size(); ++j) {
      const model::SequenceView noisy = clean.with_row_noise(noise.positions[b][j], noise.deltas[b][j]);
      const model::ForwardCache cn = model::forward(params, noisy);
      const double diff = c.score - cn.score;
      penalty += diff * diff;
      const double w = 2.0 * spec.strength * diff * inv;
      w_clean += w;
      model::accumulate_score_gradient(params, noisy, cn, -w, out.grad);
    }
    model::accumulate_score_gradient(params, clean, c, w_clean, out.grad);
  }
  out.loss = out.loss * inv + spec.strength * penalty * inv;
  return out;
}

model::LossAndGradient regularized_loss_and_gradients(const model::AttentionParams& params,
                                                      const model::Batch& batch, const RegSpec& spec, Rng& rng) {
  const RegNoise noise = draw_reg_noise(batch, params.token_dim(), spec, rng);
  return regularized_loss_with_noise(params, batch, spec, noise);
}

Sharpness sharpness(const model::AttentionParams& params, const synth::Dataset& data, const SharpnessSpec& spec) {
  spec.validate();
  if (data.examples.empty()) throw ConfigError("sharpness needs a non-empty dataset");
  std::vector<double> base(data.examples.size());
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = model::score(params, data.examples[i]);

  const std::vector<double> flat = params.flatten();
  std::vector<double> shifted(flat.size());
  model::AttentionParams perturbed = params;
  Sharpness out;
  for (int r = 0; r < spec.repeats; ++r) {
    SplitMix64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(r)));
    std::normal_distribution<double> normal(0.0, spec.sigma);
    for (std::size_t j = 0; j < flat.size(); ++j) shifted[j] = flat[j] + normal(rng);
    perturbed.assign_flat(shifted);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double s = model::score(perturbed, data.examples[i]);
      out.output_change += std::abs(base[i] - s);
      if ((base[i] >= 0.0) != (s >= 0.0)) out.prediction_flips += 1.0;
    }
  }
  const double n = static_cast<double>(spec.repeats) * static_cast<double>(base.size());
  out.output_change /= n;
  out.prediction_flips /= n;
  return out;
}

double sh_op(const model::AttentionParams& params, const synth::Dataset& data, const SharpnessSpec& spec) {
  return sharpness(params, data, spec).output_change;
}

double sh_pred(const model::AttentionParams& params, const synth::Dataset& data, const SharpnessSpec& spec) {
  return sharpness(params, data, spec).prediction_flips;
}

Eigen::VectorXd equivalent_weight_shift(const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& dx) {
  if (theta.size() != x.size() || x.size() != dx.size()) throw DomainError("vector dimensions differ");
  const double norm2 = x.squaredNorm();
  if (norm2 == 0.0) throw DomainError("input vector has zero norm");
  return (theta.dot(dx) / norm2) * x;
}

double linear_equivalence_check(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, const Eigen::VectorXd& dx) {
  const Eigen::VectorXd dtheta = equivalent_weight_shift(theta, x, dx);
  return std::abs(theta.dot(x + dx) - (theta + dtheta).dot(x));
}

}  // namespace senslab::interventions
