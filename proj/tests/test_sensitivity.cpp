#include <algorithm>
#include <cmath>
#include <tuple>
#include <numeric>

#include <gtest/gtest.h>

#include "senslab/attention_model.hpp"
#include "senslab/error.hpp"
#include "senslab/sensitivity.hpp"

using namespace senslab;
using namespace senslab::sensitivity;
using synth::SyntheticParams;

namespace {

// Independent rule oracle: counts tokens by id parity directly.
int oracle_margin(RuleKind kind, const std::vector<int>& tokens, int m) {
  int margin = 0;
  for (int id : tokens) {
    if (kind == RuleKind::sparse_rule) {
      margin += id == 1 ? 1 : id == 2 ? -1 : 0;
    } else if (id >= 3 && id <= 2 * m + 2) {
      margin += id % 2 == 1 ? 1 : -1;
    }
  }
  return margin;
}

int oracle_output(int margin, TiePolicy tie) {
  if (margin > 0) return 1;
  if (margin < 0) return -1;
  return tie == TiePolicy::positive ? 1 : 0;
}

// Enumerates every role arrangement and token draw of one label, every
// position and every replacement token.
double brute_rule_sensitivity(RuleKind kind, TiePolicy tie, const SyntheticParams& p) {
  const int T = p.seq_len;
  const int same = p.same_class_frequent();
  double total = 0.0;
  double weight = 0.0;
  for (int label : {1, -1}) {
    std::vector<int> roles(T, 3);
    for (int i = 0; i < p.n_sparse; ++i) roles[i] = 0;
    for (int i = 0; i < same; ++i) roles[p.n_sparse + i] = 1;
    for (int i = 0; i < p.n_frequent - same; ++i) roles[p.n_sparse + same + i] = 2;
    std::sort(roles.begin(), roles.end());
    do {
      // Pools per role for this label.
      std::vector<std::vector<int>> pools(4);
      pools[0] = {label > 0 ? 1 : 2};
      for (int i = 0; i < p.half_size; ++i) {
        pools[1].push_back(label > 0 ? 3 + 2 * i : 4 + 2 * i);
        pools[2].push_back(label > 0 ? 4 + 2 * i : 3 + 2 * i);
      }
      for (int id = 2 * p.half_size + 3; id <= p.vocab_size; ++id) pools[3].push_back(id);
      std::vector<std::size_t> digit(T, 0);
      while (true) {
        std::vector<int> tokens(T);
        for (int t = 0; t < T; ++t) tokens[t] = pools[roles[t]][digit[t]];
        const int base = oracle_output(oracle_margin(kind, tokens, p.half_size), tie);
        for (int t = 0; t < T; ++t) {
          const int keep = tokens[t];
          for (int r = 1; r <= p.vocab_size; ++r) {
            tokens[t] = r;
            total += oracle_output(oracle_margin(kind, tokens, p.half_size), tie) != base;
            weight += 1.0;
          }
          tokens[t] = keep;
        }
        int t = 0;
        while (t < T && ++digit[t] == pools[roles[t]].size()) digit[t++] = 0;
        if (t == T) break;
      }
    } while (std::next_permutation(roles.begin(), roles.end()));
  }
  return total / weight;
}

SyntheticParams small(int T, int m, int ns, int nf, int nd, int M) {
  return SyntheticParams::make(T, m, ns, nf, nd, M);
}

}  // namespace

TEST(RuleExact, MatchesEnumerationOnSmallSettings) {
  const SyntheticParams settings[] = {small(5, 3, 1, 2, 0, 9), small(5, 3, 1, 2, 2, 9), small(6, 4, 1, 3, 1, 11),
                                      small(5, 3, 2, 2, 0, 10), small(4, 4, 0, 3, 1, 12)};
  for (const auto& p : settings)
    for (RuleKind kind : {RuleKind::sparse_rule, RuleKind::frequent_majority})
      for (TiePolicy tie : {TiePolicy::positive, TiePolicy::zero}) {
        const double expect = brute_rule_sensitivity(kind, tie, p);
        EXPECT_NEAR(rule_sensitivity_exact({kind, tie}, p), expect, 1e-12)
            << to_string(kind) << " " << to_string(tie) << " T=" << p.seq_len << " m=" << p.half_size;
      }
}

TEST(RuleExact, SingleSparseTokenClosedForms) {
  // One sparse token and no frequent voter: only sparse positions or sparse
  // replacements can move the margin.
  for (int M : {59, 75}) {
    auto p = small(50, 20, 1, 17, 7, M);
    const double T = 50;
    EXPECT_NEAR(rule_sensitivity_exact({RuleKind::sparse_rule, TiePolicy::zero}, p), (M + T - 2) / (M * T), 1e-15);
    EXPECT_NEAR(rule_sensitivity_exact({RuleKind::sparse_rule, TiePolicy::positive}, p), (M + T - 1) / (2 * M * T),
                1e-15);
  }
}

TEST(RuleExact, ZeroEntriesAreExactlyZero) {
  // Sparse rule with three sparse tokens never reaches a tie after one replacement.
  for (int m : {6, 16, 28}) {
    auto p = small(50, m, 3, m == 6 ? 3 : m == 16 ? 5 : 7, 1, 59);
    for (TiePolicy tie : {TiePolicy::positive, TiePolicy::zero})
      EXPECT_EQ(rule_sensitivity_exact({RuleKind::sparse_rule, tie}, p), 0.0);
  }
  // Frequent majority with n_d = 7 keeps a margin of at least 5.
  for (auto [nf, m, M] : {std::tuple{7, 10, 59}, std::tuple{17, 20, 59}, std::tuple{32, 36, 75}}) {
    auto p = small(50, m, 1, nf, 7, M);
    EXPECT_EQ(rule_sensitivity_exact({RuleKind::frequent_majority, TiePolicy::zero}, p), 0.0);
  }
}

TEST(RuleExact, MonteCarloAgreesWithinThreeSigma) {
  const SyntheticParams settings[] = {small(50, 16, 3, 5, 1, 59), small(50, 20, 1, 17, 7, 59),
                                      small(50, 6, 3, 3, 1, 59)};
  for (const auto& p : settings)
    for (RuleKind kind : {RuleKind::sparse_rule, RuleKind::frequent_majority})
      for (TiePolicy tie : {TiePolicy::positive, TiePolicy::zero}) {
        RulePredictor rule{kind, tie};
        auto est = rule_sensitivity_mc(rule, p, 100000, 77);
        const double exact = rule_sensitivity_exact(rule, p);
        const double tol = std::max(3.0 * est.stderr_value, 3.0 / 100000.0);
        EXPECT_NEAR(est.value, exact, tol) << to_string(kind) << " " << to_string(tie);
      }
}

TEST(RulePredictor, VotesAndTies) {
  auto p = small(50, 16, 3, 5, 1, 59);
  RulePredictor sparse{RuleKind::sparse_rule, TiePolicy::positive};
  RulePredictor freq{RuleKind::frequent_majority, TiePolicy::zero};
  EXPECT_EQ(sparse.vote(1, p), 1);
  EXPECT_EQ(sparse.vote(2, p), -1);
  EXPECT_EQ(sparse.vote(3, p), 0);
  EXPECT_EQ(freq.vote(3, p), 1);
  EXPECT_EQ(freq.vote(34, p), -1);
  EXPECT_EQ(freq.vote(35, p), 0);
  EXPECT_EQ(freq.vote(1, p), 0);
  EXPECT_EQ(sparse.predict_margin(0), 1);
  EXPECT_EQ(freq.predict_margin(0), 0);
  EXPECT_EQ(freq.predict({3, 4, 5, 40}, p), 1);
}

TEST(Meter, FullVocabularyMatchesDirectCount) {
  auto p = small(12, 6, 1, 3, 1, 18);
  auto data = synth::generate_dataset(p, 40, synth::DataKind::train, 5);
  // Sparse-rule score read off the dense input.
  FunctionScorer scorer([](const Eigen::MatrixXd& x) { return x.col(0).sum() - x.col(1).sum(); }, p.token_dim);
  CorruptionSpec spec;
  spec.repeats = p.vocab_size;
  auto report = measure_sensitivity(scorer, data, spec);

  std::vector<double> per_position(12, 0.0);
  for (const auto& ex : data.examples) {
    auto tokens = ex.tokens;
    const int base = oracle_output(oracle_margin(RuleKind::sparse_rule, tokens, 6), TiePolicy::positive);
    for (int t = 0; t < 12; ++t) {
      const int keep = tokens[t];
      for (int r = 1; r <= p.vocab_size; ++r) {
        tokens[t] = r;
        per_position[t] += oracle_output(oracle_margin(RuleKind::sparse_rule, tokens, 6), TiePolicy::positive) != base;
      }
      tokens[t] = keep;
    }
  }
  for (double& v : per_position) v /= 40.0 * p.vocab_size;
  for (int t = 0; t < 12; ++t) EXPECT_NEAR(report.per_position[t], per_position[t], 1e-12);
  const double mean = std::accumulate(per_position.begin(), per_position.end(), 0.0) / 12.0;
  EXPECT_NEAR(report.normalized, mean, 1e-12);
  // All flips happen at the sparse position or when a sparse token is written.
  EXPECT_GT(report.per_role[0], report.per_role[3]);
}

TEST(Meter, AttentionScorerMatchesFunctionScorer) {
  auto p = small(10, 6, 1, 3, 1, 16);
  auto data = synth::generate_dataset(p, 30, synth::DataKind::train, 6);
  model::Rng rng(3);
  auto params = model::init_params({10, p.token_dim, 4, 3}, model::Activation::softmax, 0.8, rng);
  AttentionScorer a(params);
  FunctionScorer f(
      [&](const Eigen::MatrixXd& x) {
        Eigen::MatrixXd s = x * params.query * params.key.transpose() * x.transpose();
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
          s.row(i) = (s.row(i).array() - s.row(i).maxCoeff()).exp().matrix();
          s.row(i) /= s.row(i).sum();
        }
        return (params.head.array() * (s * x * params.value).array()).sum();
      },
      p.token_dim);
  for (auto kind : {CorruptionKind::token_uniform, CorruptionKind::gaussian_noise}) {
    CorruptionSpec spec;
    spec.kind = kind;
    spec.seed = 12;
    spec.variance = 4.0;
    auto ra = measure_sensitivity(a, data, spec);
    auto rf = measure_sensitivity(f, data, spec);
    EXPECT_EQ(ra.normalized, rf.normalized) << to_string(kind);
    for (int t = 0; t < 10; ++t) EXPECT_EQ(ra.per_position[t], rf.per_position[t]);
  }
}

TEST(Meter, ZeroModelNeverFlips) {
  auto p = small(20, 6, 1, 3, 1, 16);
  auto data = synth::generate_dataset(p, 25, synth::DataKind::train, 7);
  auto zero = model::AttentionParams::zeros({20, p.token_dim, 4, 3}, model::Activation::relu);
  AttentionScorer scorer(zero);
  for (auto kind : {CorruptionKind::token_uniform, CorruptionKind::gaussian_noise}) {
    CorruptionSpec spec;
    spec.kind = kind;
    auto report = measure_sensitivity(scorer, data, spec);
    EXPECT_EQ(report.normalized, 0.0);
    for (double v : report.per_position) EXPECT_EQ(v, 0.0);
  }
}

TEST(Meter, GaussianNoiseOnBalancedScore) {
  // Clean score 0; a noisy row adds N(0, d sigma^2), which flips half the time.
  auto p = small(8, 4, 1, 2, 0, 12);
  auto data = synth::generate_dataset(p, 200, synth::DataKind::train, 8);
  const double T = 8;
  FunctionScorer scorer([T](const Eigen::MatrixXd& x) { return x.sum() - T; }, p.token_dim);
  CorruptionSpec spec;
  spec.kind = CorruptionKind::gaussian_noise;
  spec.variance = 0.5;
  spec.repeats = 10;
  auto report = measure_sensitivity(scorer, data, spec);
  EXPECT_NEAR(report.normalized, 0.5, 4.0 * report.stderr_normalized + 1e-3);
  for (double v : report.per_position) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Meter, Profiles) {
  auto p = small(12, 6, 1, 3, 1, 18);
  auto data = synth::generate_dataset(p, 20, synth::DataKind::train, 9);
  FunctionScorer scorer([](const Eigen::MatrixXd& x) { return x.col(0).sum() - x.col(1).sum(); }, p.token_dim);
  CorruptionSpec spec;
  spec.repeats = p.vocab_size;
  auto report = measure_sensitivity(scorer, data, spec);
  auto raw = per_position_profile(report);
  auto sorted = per_position_profile(report, ProfileOrder::role_sorted);
  ASSERT_EQ(raw.size(), 12U);
  ASSERT_EQ(sorted.size(), 12U);
  // Rank 0 holds each example's sparse position. A zero margin reads as +1, so
  // a + example flips only on token 2 and a - example on all but token 2.
  double expect = 0.0;
  for (const auto& ex : data.examples) expect += ex.label > 0 ? 1.0 / 18.0 : 17.0 / 18.0;
  EXPECT_NEAR(sorted[0].second, expect / 20.0, 1e-12);
  double a = 0.0, b = 0.0;
  for (auto& [pos, v] : raw) a += v;
  for (auto& [pos, v] : sorted) b += v;
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(Meter, InvalidSpecs) {
  auto p = small(12, 6, 1, 3, 1, 18);
  auto data = synth::generate_dataset(p, 2, synth::DataKind::train, 9);
  FunctionScorer scorer([](const Eigen::MatrixXd&) { return 1.0; }, p.token_dim);
  CorruptionSpec spec;
  spec.kind = CorruptionKind::gaussian_noise;
  spec.variance = -1.0;
  EXPECT_THROW(measure_sensitivity(scorer, data, spec), ConfigError);
  EXPECT_THROW(parse_corruption_kind("swap"), ConfigError);
  EXPECT_EQ(parse_rule_kind(to_string(RuleKind::frequent_majority)), RuleKind::frequent_majority);
}
