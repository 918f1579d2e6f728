#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "senslab/attention_model.hpp"
#include "senslab/interventions.hpp"
#include "senslab/synthetic_data.hpp"

namespace senslab::model {

struct DiagnosticsOptions {
  int every = 1;  // epochs between records; the last epoch is always recorded
  // Examples from the head of the training set used for the per-epoch
  // sensitivity column (0 disables it).
  std::size_t sensitivity_examples = 100;
  int sensitivity_repeats = 0;  // 0 uses the meter's default
};

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 100;
  int epochs = 100;
  double init_scale = 1e-2;
  std::uint64_t seed = 0;
  Activation activation = Activation::softmax;
  int head_dim = 0;  // 0 means d_tok
  std::optional<interventions::RegSpec> regularization;
  DiagnosticsOptions diagnostics;

  void validate() const;
};

struct DiagnosticsRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_id_acc = 0.0;
  double test_ood_acc = 0.0;
  double align_sp = 0.0;
  double align_sp_literal = 0.0;
  double align_freq = 0.0;
  double align_irrel = 0.0;
  double mass_sp = 0.0;
  double mass_freq = 0.0;
  double mass_irrel = 0.0;
  double sensitivity = 0.0;
};

struct TrainResult {
  AttentionParams params;
  std::vector<DiagnosticsRecord> history;
};

ModelShape shape_for(const synth::SyntheticParams& p, const TrainConfig& cfg);

DiagnosticsRecord diagnose(const AttentionParams& params, int epoch, double loss, const synth::Dataset& train,
                           const synth::Dataset& test_id, const synth::Dataset& test_ood,
                           const DiagnosticsOptions& options, std::uint64_t seed);

// Mini-batch SGD on the logistic loss (plus the regularizer when configured).
// Deterministic given cfg.seed. Throws NumericError if the loss diverges.
TrainResult train(const synth::Dataset& train, const synth::Dataset& test_id, const synth::Dataset& test_ood,
                  const TrainConfig& cfg);

}  // namespace senslab::model
