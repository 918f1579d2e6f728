#pragma once

// Prediction-flip sensitivity of sequence models under single-position
// corruption, and exact sensitivities of rule-based reference predictors.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "senslab/attention_model.hpp"
#include "senslab/synthetic_data.hpp"

namespace senslab::sensitivity {

enum class CorruptionKind { token_uniform, gaussian_noise };
std::string_view to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(std::string_view name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::token_uniform;
  double variance = 1.0;  // gaussian only
  int repeats = 0;        // 0 selects the default for the kind
  std::uint64_t seed = 0;

  void validate() const;
  // gaussian: 5; token: min(M, 32) distinct tokens.
  int effective_repeats(int vocab_size) const;
};

struct SensitivityReport {
  double normalized = 0.0;
  double stderr_normalized = 0.0;
  std::vector<double> per_position;  // indexed by raw position
  std::vector<double> per_position_stderr;
  // Indexed by rank after sorting each example's positions by role
  // (sparse, frequent same-class, frequent opposite-class, irrelevant).
  std::vector<double> role_sorted;
  std::array<double, 4> per_role{};  // mean over positions holding each role
  std::size_t examples = 0;
  int repeats = 0;
  CorruptionSpec spec;
};

// The meter's view of a model: score a sequence and score it again with one
// row replaced.
class ScoringModel {
 public:
  class Probe {
   public:
    virtual ~Probe() = default;
    virtual double base_score() const = 0;
    // Row `position` becomes e_token + noise (noise may be null).
    virtual double score_replaced(int position, int token, const Eigen::RowVectorXd* noise) = 0;
  };

  virtual ~ScoringModel() = default;
  virtual std::unique_ptr<Probe> probe(const synth::TokenSequence& seq) const = 0;
};

class AttentionScorer final : public ScoringModel {
 public:
  explicit AttentionScorer(const model::AttentionParams& params) : params_(params) {}
  std::unique_ptr<Probe> probe(const synth::TokenSequence& seq) const override;

 private:
  const model::AttentionParams& params_;
};

// Any function of the dense T x d_tok input matrix.
class FunctionScorer final : public ScoringModel {
 public:
  using Fn = std::function<double(const Eigen::MatrixXd&)>;
  FunctionScorer(Fn fn, int token_dim) : fn_(std::move(fn)), token_dim_(token_dim) {}
  std::unique_ptr<Probe> probe(const synth::TokenSequence& seq) const override;

 private:
  Fn fn_;
  int token_dim_;
};

// Fraction of (example, position, replacement) triples whose sign(score)
// changes, with sign(0) = +1.
SensitivityReport measure_sensitivity(const ScoringModel& model, const synth::Dataset& data,
                                      const CorruptionSpec& spec);

enum class ProfileOrder { raw, role_sorted };
std::vector<std::pair<int, double>> per_position_profile(const SensitivityReport& report,
                                                         ProfileOrder order = ProfileOrder::raw);

enum class RuleKind { sparse_rule, frequent_majority };
// positive: a zero margin predicts +1. zero: a zero margin is its own output,
// so moving to or from a tie counts as a flip.
enum class TiePolicy { positive, zero };

std::string_view to_string(RuleKind kind);
RuleKind parse_rule_kind(std::string_view name);
std::string_view to_string(TiePolicy tie);

struct RulePredictor {
  RuleKind kind = RuleKind::sparse_rule;
  TiePolicy tie = TiePolicy::positive;

  // Signed vote of one token: +1, -1 or 0.
  int vote(int token, const synth::SyntheticParams& p) const;
  int margin(const std::vector<int>& tokens, const synth::SyntheticParams& p) const;
  int predict_margin(int margin) const;
  int predict(const std::vector<int>& tokens, const synth::SyntheticParams& p) const;
};

// Exact sensitivity under uniform token replacement over the M vocabulary
// tokens, averaged over labels, positions and replacement tokens.
double rule_sensitivity_exact(const RulePredictor& rule, const synth::SyntheticParams& p);

struct Estimate {
  double value = 0.0;
  double stderr_value = 0.0;
  std::size_t samples = 0;
};

// Independent sampling estimate: fresh example, uniform position, uniform token.
Estimate rule_sensitivity_mc(const RulePredictor& rule, const synth::SyntheticParams& p, std::size_t samples,
                             std::uint64_t seed);

}  // namespace senslab::sensitivity
