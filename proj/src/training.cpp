#include "senslab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "senslab/error.hpp"
#include "senslab/random.hpp"
#include "senslab/sensitivity.hpp"

namespace senslab::model {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(init_scale > 0.0)) throw ConfigError("init scale must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (head_dim < 0) throw ConfigError("head dimension must be non-negative");
  if (diagnostics.every < 1) throw ConfigError("diagnostics interval must be at least 1");
  if (regularization) regularization->validate();
}

ModelShape shape_for(const synth::SyntheticParams& p, const TrainConfig& cfg) {
  return {p.seq_len, p.token_dim, cfg.head_dim > 0 ? cfg.head_dim : p.token_dim, p.token_dim};
}

DiagnosticsRecord diagnose(const AttentionParams& params, int epoch, double loss, const synth::Dataset& train,
                           const synth::Dataset& test_id, const synth::Dataset& test_ood,
                           const DiagnosticsOptions& options, std::uint64_t seed) {
  DiagnosticsRecord r;
  r.epoch = epoch;
  r.loss = loss;
  r.train_acc = accuracy(params, train);
  r.test_id_acc = accuracy(params, test_id);
  r.test_ood_acc = accuracy(params, test_ood);
  const AlignmentMetrics align = alignment_metrics(params, train.params);
  r.align_sp = align.sparse;
  r.align_sp_literal = align.sparse_literal;
  r.align_freq = align.frequent;
  r.align_irrel = align.irrelevant;
  const AttentionMass mass = attention_mass(params, test_id);
  r.mass_sp = mass.sparse;
  r.mass_freq = mass.frequent;
  r.mass_irrel = mass.irrelevant;
  if (options.sensitivity_examples > 0) {
    synth::Dataset subset;
    subset.params = train.params;
    subset.kind = train.kind;
    const std::size_t n = std::min(options.sensitivity_examples, train.examples.size());
    subset.examples.assign(train.examples.begin(), train.examples.begin() + static_cast<std::ptrdiff_t>(n));
    sensitivity::CorruptionSpec spec;
    spec.repeats = options.sensitivity_repeats;
    spec.seed = seed;
    r.sensitivity = sensitivity::measure_sensitivity(sensitivity::AttentionScorer(params), subset, spec).normalized;
  }
  return r;
}

TrainResult train(const synth::Dataset& train_set, const synth::Dataset& test_id, const synth::Dataset& test_ood,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.examples.empty()) throw ConfigError("training set is empty");
  if (train_set.kind != synth::DataKind::train) throw ConfigError("train() expects a training-kind dataset");

  Rng init_rng(derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  Rng noise_rng(derive_seed(cfg.seed, 3));
  const std::uint64_t diag_seed = derive_seed(cfg.seed, 4);

  TrainResult result;
  result.params = init_params(shape_for(train_set.params, cfg), cfg.activation, cfg.init_scale, init_rng);

  std::vector<std::size_t> order(train_set.examples.size());
  std::iota(order.begin(), order.end(), 0);

  auto full_loss = [&](const AttentionParams& params) {
    double total = 0.0;
    for (const auto& ex : train_set.examples) total += logistic_loss(ex.label * score(params, ex));
    return total / static_cast<double>(train_set.examples.size());
  };

  result.history.push_back(
      diagnose(result.params, 0, full_loss(result.params), train_set, test_id, test_ood, cfg.diagnostics, diag_seed));

  Batch batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set.examples[order[i]]);
      LossAndGradient lg = cfg.regularization
                               ? interventions::regularized_loss_and_gradients(result.params, batch,
                                                                               *cfg.regularization, noise_rng)
                               : loss_and_gradients(result.params, batch);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("training loss diverged at epoch " + std::to_string(epoch));
      }
      lg.grad *= -cfg.learning_rate;
      result.params += lg.grad;
    }
    if (epoch % cfg.diagnostics.every == 0 || epoch == cfg.epochs) {
      result.history.push_back(diagnose(result.params, epoch, full_loss(result.params), train_set,
                                        test_id, test_ood, cfg.diagnostics, diag_seed));
    }
  }
  return result;
}

}  // namespace senslab::model
