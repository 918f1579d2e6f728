#include "senslab/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "senslab/error.hpp"
#include "senslab/random.hpp"

namespace senslab::sensitivity {
namespace {

int role_index(synth::Role r) { return static_cast<int>(r); }

class AttentionProbe final : public ScoringModel::Probe {
 public:
  AttentionProbe(const model::AttentionParams& params, const synth::TokenSequence& seq)
      : probe_(params, model::SequenceView(seq)) {}
  double base_score() const override { return probe_.base_score(); }
  double score_replaced(int position, int token, const Eigen::RowVectorXd* noise) override {
    return probe_.score_replaced(position, token, noise);
  }

 private:
  model::ReplacementProbe probe_;
};

class DenseProbe final : public ScoringModel::Probe {
 public:
  DenseProbe(const FunctionScorer::Fn& fn, Eigen::MatrixXd x) : fn_(fn), x_(std::move(x)), base_(fn_(x_)) {}
  double base_score() const override { return base_; }
  double score_replaced(int position, int token, const Eigen::RowVectorXd* noise) override {
    const Eigen::RowVectorXd saved = x_.row(position);
    if (noise) {
      x_.row(position) = *noise;
    } else {
      x_.row(position).setZero();
    }
    x_(position, token - 1) += 1.0;
    const double s = fn_(x_);
    x_.row(position) = saved;
    return s;
  }

 private:
  const FunctionScorer::Fn& fn_;
  Eigen::MatrixXd x_;
  double base_;
};

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

std::string_view to_string(CorruptionKind kind) {
  return kind == CorruptionKind::token_uniform ? "token" : "gauss";
}

CorruptionKind parse_corruption_kind(std::string_view name) {
  if (name == "token" || name == "token_uniform") return CorruptionKind::token_uniform;
  if (name == "gauss" || name == "gaussian" || name == "gaussian_noise") return CorruptionKind::gaussian_noise;
  throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

void CorruptionSpec::validate() const {
  if (kind == CorruptionKind::gaussian_noise && !(variance > 0.0)) {
    throw ConfigError("gaussian corruption variance must be positive");
  }
  if (repeats < 0) throw ConfigError("corruption repeats must be at least 1");
}

int CorruptionSpec::effective_repeats(int vocab_size) const {
  if (repeats > 0) {
    return kind == CorruptionKind::token_uniform ? std::min(repeats, vocab_size) : repeats;
  }
  return kind == CorruptionKind::gaussian_noise ? 5 : std::min(vocab_size, 32);
}

std::unique_ptr<ScoringModel::Probe> AttentionScorer::probe(const synth::TokenSequence& seq) const {
  return std::make_unique<AttentionProbe>(params_, seq);
}

std::unique_ptr<ScoringModel::Probe> FunctionScorer::probe(const synth::TokenSequence& seq) const {
  return std::make_unique<DenseProbe>(fn_, seq.embedding(token_dim_));
}

SensitivityReport measure_sensitivity(const ScoringModel& model, const synth::Dataset& data,
                                      const CorruptionSpec& spec) {
  spec.validate();
  if (data.examples.empty()) throw ConfigError("sensitivity needs a non-empty dataset");
  const auto& p = data.params;
  const int T = p.seq_len;
  const int repeats = spec.effective_repeats(p.vocab_size);
  const std::size_t n = data.examples.size();

  SensitivityReport report;
  report.spec = spec;
  report.repeats = repeats;
  report.examples = n;

  // flips[i][tau] as a fraction of repeats
  std::vector<std::vector<double>> flips(n, std::vector<double>(T, 0.0));
  std::vector<int> pool(p.vocab_size);
  std::iota(pool.begin(), pool.end(), 1);
  Eigen::RowVectorXd noise(p.token_dim);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = data.examples[i];
    auto probe = model.probe(ex);
    const int base = model::predict(probe->base_score());
    for (int tau = 0; tau < T; ++tau) {
      SplitMix64 rng(derive_seed(spec.seed, i, static_cast<std::uint64_t>(tau)));
      int count = 0;
      if (spec.kind == CorruptionKind::token_uniform) {
        // Partial Fisher-Yates: `repeats` distinct tokens.
        for (int r = 0; r < repeats; ++r) {
          std::uniform_int_distribution<int> pick(r, p.vocab_size - 1);
          std::swap(pool[r], pool[pick(rng)]);
          if (model::predict(probe->score_replaced(tau, pool[r], nullptr)) != base) ++count;
        }
      } else {
        std::normal_distribution<double> normal(0.0, std::sqrt(spec.variance));
        for (int r = 0; r < repeats; ++r) {
          for (Eigen::Index j = 0; j < noise.size(); ++j) noise(j) = normal(rng);
          if (ex.has_noise()) noise += ex.noise.row(tau);
          if (model::predict(probe->score_replaced(tau, ex.tokens[tau], &noise)) != base) ++count;
        }
      }
      flips[i][tau] = static_cast<double>(count) / repeats;
    }
  }

  report.per_position.assign(T, 0.0);
  report.per_position_stderr.assign(T, 0.0);
  report.role_sorted.assign(T, 0.0);
  std::vector<double> column(n);
  for (int tau = 0; tau < T; ++tau) {
    for (std::size_t i = 0; i < n; ++i) column[i] = flips[i][tau];
    report.per_position[tau] = mean(column);
    report.per_position_stderr[tau] = standard_error(column);
  }
  std::vector<double> per_example(n);
  std::array<double, 4> role_total{};
  std::array<std::size_t, 4> role_count{};
  std::vector<int> order(T);
  for (std::size_t i = 0; i < n; ++i) {
    per_example[i] = mean(flips[i]);
    const auto& roles = data.examples[i].roles;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return role_index(roles[a]) < role_index(roles[b]); });
    for (int rank = 0; rank < T; ++rank) report.role_sorted[rank] += flips[i][order[rank]];
    for (int tau = 0; tau < T; ++tau) {
      role_total[role_index(roles[tau])] += flips[i][tau];
      ++role_count[role_index(roles[tau])];
    }
  }
  for (double& v : report.role_sorted) v /= static_cast<double>(n);
  for (int r = 0; r < 4; ++r) {
    report.per_role[r] = role_count[r] ? role_total[r] / static_cast<double>(role_count[r]) : 0.0;
  }
  report.normalized = mean(report.per_position);
  report.stderr_normalized = standard_error(per_example);
  return report;
}

std::vector<std::pair<int, double>> per_position_profile(const SensitivityReport& report, ProfileOrder order) {
  const auto& values = order == ProfileOrder::raw ? report.per_position : report.role_sorted;
  std::vector<std::pair<int, double>> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.emplace_back(static_cast<int>(i) + 1, values[i]);
  return out;
}

std::string_view to_string(RuleKind kind) {
  return kind == RuleKind::sparse_rule ? "sparse_rule" : "frequent_majority";
}

RuleKind parse_rule_kind(std::string_view name) {
  if (name == "sparse_rule" || name == "sparse") return RuleKind::sparse_rule;
  if (name == "frequent_majority" || name == "frequent") return RuleKind::frequent_majority;
  throw ConfigError("unknown rule predictor '" + std::string(name) + "'");
}

std::string_view to_string(TiePolicy tie) { return tie == TiePolicy::positive ? "positive" : "zero"; }

int RulePredictor::vote(int token, const synth::SyntheticParams& p) const {
  if (kind == RuleKind::sparse_rule) {
    if (token == 1) return 1;
    if (token == 2) return -1;
    return 0;
  }
  if (token >= 3 && token <= 2 * p.half_size + 2) return (token % 2 == 1) ? 1 : -1;
  return 0;
}

int RulePredictor::margin(const std::vector<int>& tokens, const synth::SyntheticParams& p) const {
  int m = 0;
  for (int t : tokens) m += vote(t, p);
  return m;
}

int RulePredictor::predict_margin(int m) const {
  if (m > 0) return 1;
  if (m < 0) return -1;
  return tie == TiePolicy::positive ? 1 : 0;
}

int RulePredictor::predict(const std::vector<int>& tokens, const synth::SyntheticParams& p) const {
  return predict_margin(margin(tokens, p));
}

double rule_sensitivity_exact(const RulePredictor& rule, const synth::SyntheticParams& p) {
  p.validate();
  constexpr long long kMaxEnumeration = 1'000'000'000LL;
  if (static_cast<long long>(p.seq_len) * p.vocab_size > kMaxEnumeration) {
    throw CapacityError("rule sensitivity enumeration exceeds the size guard");
  }
  const int m = p.half_size;
  // Replacement classes by representative token and multiplicity.
  const std::array<std::pair<int, long long>, 5> classes{{
      {1, 1},
      {2, 1},
      {3, 1LL * m},
      {4, 1LL * m},
      {2 * m + 3, static_cast<long long>(p.n_irrelevant_tokens())},
  }};
  long long flips = 0;
  for (int label : {1, -1}) {
    const int sparse_token = label > 0 ? 1 : 2;
    const int same_token = label > 0 ? 3 : 4;
    const int opposite_token = label > 0 ? 4 : 3;
    const std::array<std::pair<int, long long>, 4> positions{{
        {sparse_token, p.n_sparse},
        {same_token, p.same_class_frequent()},
        {opposite_token, p.opposite_class_frequent()},
        {2 * m + 3, p.n_irrelevant_positions()},
    }};
    const int base_margin = p.n_sparse * rule.vote(sparse_token, p) + p.same_class_frequent() * rule.vote(same_token, p) +
                            p.opposite_class_frequent() * rule.vote(opposite_token, p);
    const int base = rule.predict_margin(base_margin);
    for (const auto& [old_token, n_positions] : positions) {
      if (n_positions == 0) continue;
      for (const auto& [new_token, weight] : classes) {
        const int changed = base_margin - rule.vote(old_token, p) + rule.vote(new_token, p);
        if (rule.predict_margin(changed) != base) flips += n_positions * weight;
      }
    }
  }
  return static_cast<double>(flips) / (2.0 * p.vocab_size * p.seq_len);
}

Estimate rule_sensitivity_mc(const RulePredictor& rule, const synth::SyntheticParams& p, std::size_t samples,
                             std::uint64_t seed) {
  if (samples == 0) throw ConfigError("Monte Carlo estimate needs at least one sample");
  const synth::Vocabulary vocab = synth::build_vocab(p);
  synth::Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> position(0, p.seq_len - 1);
  std::uniform_int_distribution<int> token(1, p.vocab_size);
  std::size_t flips = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    synth::TokenSequence ex = synth::generate_example(p, vocab, coin(rng) ? 1 : -1, rng);
    const int before = rule.predict(ex.tokens, p);
    const int tau = position(rng);
    ex.tokens[tau] = token(rng);
    if (rule.predict(ex.tokens, p) != before) ++flips;
  }
  Estimate e;
  e.samples = samples;
  e.value = static_cast<double>(flips) / static_cast<double>(samples);
  e.stderr_value = std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(samples));
  return e;
}

}  // namespace senslab::sensitivity
