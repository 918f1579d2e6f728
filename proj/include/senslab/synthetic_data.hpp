#pragma once

// Sparse / frequent / irrelevant token datasets.
//
// Token ids are 1-based: id i denotes the basis vector e_i of R^token_dim.
// Ids 1 and 2 are the sparse tokens of the + and - class, odd ids 3..2m+1
// the + frequent tokens, even ids 4..2m+2 the - frequent tokens, and
// 2m+3..M the irrelevant tokens.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace senslab::synth {

using Rng = std::mt19937_64;

struct SyntheticParams {
  int seq_len = 50;       // T
  int vocab_size = 0;     // M
  int half_size = 0;      // m
  int n_sparse = 0;       // n_s
  int n_frequent = 0;     // n_f
  int n_imbalance = 0;    // n_d
  int token_dim = 0;      // d_tok

  // Throws ConfigError naming the first violated inequality.
  void validate() const;

  // Frequent positions carrying a token of the example's own class.
  int same_class_frequent() const { return (n_frequent + n_imbalance) / 2; }
  int opposite_class_frequent() const { return n_frequent - same_class_frequent(); }
  int n_irrelevant_positions() const { return seq_len - n_frequent - n_sparse; }
  int n_irrelevant_tokens() const { return vocab_size - 2 * half_size - 2; }

  // 2m + 2 + ceil(0.2 (2m + 2)).
  static int default_vocab_size(int half_size);
  // Fills vocab_size (default when <= 0) and token_dim = max(M, T).
  static SyntheticParams make(int seq_len, int half_size, int n_sparse, int n_frequent, int n_imbalance,
                              int vocab_size = 0);

  bool operator==(const SyntheticParams&) const = default;
};

enum class Role : std::uint8_t { sparse, frequent_same, frequent_opposite, irrelevant };
char role_code(Role role);
Role parse_role(char code);

struct Vocabulary {
  std::vector<int> sparse_pos;
  std::vector<int> sparse_neg;
  std::vector<int> frequent_pos;
  std::vector<int> frequent_neg;
  std::vector<int> irrelevant;

  const std::vector<int>& sparse(int label) const { return label > 0 ? sparse_pos : sparse_neg; }
  const std::vector<int>& frequent(int label) const { return label > 0 ? frequent_pos : frequent_neg; }
};

struct TokenSequence {
  int label = 1;
  std::vector<int> tokens;
  std::vector<Role> roles;
  // Additive perturbation of the one-hot rows (seq_len x token_dim); empty when clean.
  Eigen::MatrixXd noise;

  bool has_noise() const { return noise.size() != 0; }
  // One-hot rows plus noise.
  Eigen::MatrixXd embedding(int token_dim) const;
};

enum class DataKind { train, test_id, test_ood };
std::string_view to_string(DataKind kind);
DataKind parse_data_kind(std::string_view name);

struct Dataset {
  SyntheticParams params;
  DataKind kind = DataKind::train;
  std::uint64_t seed = 0;
  std::vector<TokenSequence> examples;

  std::size_t size() const { return examples.size(); }
};

Vocabulary build_vocab(const SyntheticParams& p);

// Draws a labelled example; sparse tokens come from the opposite class when ood.
TokenSequence generate_example(const SyntheticParams& p, const Vocabulary& vocab, int label, Rng& rng,
                               bool ood = false);

Dataset generate_dataset(const SyntheticParams& p, std::size_t n, DataKind kind, std::uint64_t seed);

struct ReferenceVectors {
  // e_1 - e_2: the + sparse token against the - sparse token.
  Eigen::VectorXd sparse;
  // e_1 - e_3, the literal published definition. A model symmetric in the
  // label has cosine at most 1/2 with it; kept for reporting.
  Eigen::VectorXd sparse_literal;
  Eigen::VectorXd frequent;
  Eigen::VectorXd irrelevant;
};

ReferenceVectors reference_vectors(const SyntheticParams& p);

// Text format: a '#' metadata line with the parameters, a column header, then
// one example per line as label<TAB>tok_1,...,tok_T<TAB>roles. Noise is not
// serialized.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);

}  // namespace senslab::synth
