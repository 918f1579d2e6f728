#pragma once

// Sensitivity-lowering training interventions and weight-space sharpness.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "senslab/attention_model.hpp"
#include "senslab/synthetic_data.hpp"

namespace senslab::interventions {

using Rng = synth::Rng;

// Label-preserving noisy copies of every training example.
struct AugmentSpec {
  double variance = 0.1;
  int copies = 1;
  void validate() const;
};

// Output-matching penalty between a clean input and a copy with Gaussian
// noise on randomly chosen positions.
struct RegSpec {
  double strength = 0.25;
  double variance = 1.0;
  int patches = 1;
  void validate() const;
};

struct SharpnessSpec {
  double sigma = 0.005;
  int repeats = 5;
  std::uint64_t seed = 0;
  void validate() const;
};

// Appends `copies` noisy duplicates per example, N(0, variance) on every
// coordinate of every token vector.
synth::Dataset augment_dataset(const synth::Dataset& data, const AugmentSpec& spec, Rng& rng);

// Noise for one regularization step: per example, `patches` positions and
// their additive perturbations.
struct RegNoise {
  std::vector<std::vector<int>> positions;
  std::vector<std::vector<Eigen::RowVectorXd>> deltas;
};

RegNoise draw_reg_noise(const model::Batch& batch, int token_dim, const RegSpec& spec, Rng& rng);

// mean logistic loss + strength * mean (score(X) - score(X~))^2 with the noise held fixed.
model::LossAndGradient regularized_loss_with_noise(const model::AttentionParams& params, const model::Batch& batch,
                                                   const RegSpec& spec, const RegNoise& noise);

// Draws fresh noise from rng, then evaluates regularized_loss_with_noise.
// With strength 0 the result equals loss_and_gradients exactly.
model::LossAndGradient regularized_loss_and_gradients(const model::AttentionParams& params,
                                                      const model::Batch& batch, const RegSpec& spec, Rng& rng);

struct Sharpness {
  double output_change = 0.0;     // ShOp
  double prediction_flips = 0.0;  // ShPred
};

// Both metrics from the same weight perturbations xi ~ N(0, sigma^2 I).
Sharpness sharpness(const model::AttentionParams& params, const synth::Dataset& data, const SharpnessSpec& spec);
double sh_op(const model::AttentionParams& params, const synth::Dataset& data, const SharpnessSpec& spec);
double sh_pred(const model::AttentionParams& params, const synth::Dataset& data, const SharpnessSpec& spec);

// For a linear score theta^T x: |score(theta; x + dx) - score(theta + dtheta; x)|
// with dtheta = (theta^T dx / ||x||^2) x.
double linear_equivalence_check(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, const Eigen::VectorXd& dx);
Eigen::VectorXd equivalent_weight_shift(const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& dx);

}  // namespace senslab::interventions
