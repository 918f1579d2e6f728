#include "senslab/synthetic_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "senslab/error.hpp"

namespace senslab::synth {
namespace {

void require(bool ok, const std::string& inequality, const SyntheticParams& p) {
  if (ok) return;
  std::ostringstream msg;
  msg << "synthetic parameters violate " << inequality << " (T=" << p.seq_len << ", M=" << p.vocab_size
      << ", m=" << p.half_size << ", n_s=" << p.n_sparse << ", n_f=" << p.n_frequent << ", n_d=" << p.n_imbalance
      << ", d_tok=" << p.token_dim << ")";
  throw ConfigError(msg.str());
}

int uniform_pick(const std::vector<int>& pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

}  // namespace

void SyntheticParams::validate() const {
  require(seq_len >= 1, "T >= 1", *this);
  require(half_size >= 1, "m >= 1", *this);
  require(n_sparse >= 0, "n_s >= 0", *this);
  // The published table includes n_s = n_f = 3, so equality is allowed.
  require(n_sparse <= n_frequent, "n_s <= n_f", *this);
  require(n_frequent < half_size, "n_f < m", *this);
  require(n_frequent < seq_len - n_sparse, "n_f < T - n_s", *this);
  require(n_imbalance >= 0, "n_d >= 0", *this);
  require(n_imbalance <= n_frequent, "n_d <= n_f", *this);
  require(2 * half_size + 2 < vocab_size, "2m + 2 < M", *this);
  require(token_dim >= vocab_size, "d_tok >= M", *this);
}

int SyntheticParams::default_vocab_size(int half_size) {
  const int used = 2 * half_size + 2;
  return used + static_cast<int>(std::ceil(0.2 * used));
}

SyntheticParams SyntheticParams::make(int seq_len, int half_size, int n_sparse, int n_frequent, int n_imbalance,
                                      int vocab_size) {
  SyntheticParams p;
  p.seq_len = seq_len;
  p.half_size = half_size;
  p.n_sparse = n_sparse;
  p.n_frequent = n_frequent;
  p.n_imbalance = n_imbalance;
  p.vocab_size = vocab_size > 0 ? vocab_size : default_vocab_size(half_size);
  // The attention head reads one row per position, so d_tok must also cover T.
  p.token_dim = std::max(p.vocab_size, seq_len);
  p.validate();
  return p;
}

char role_code(Role role) {
  switch (role) {
    case Role::sparse:
      return 's';
    case Role::frequent_same:
      return 'f';
    case Role::frequent_opposite:
      return 'o';
    case Role::irrelevant:
      return 'i';
  }
  return '?';
}

Role parse_role(char code) {
  switch (code) {
    case 's':
      return Role::sparse;
    case 'f':
      return Role::frequent_same;
    case 'o':
      return Role::frequent_opposite;
    case 'i':
      return Role::irrelevant;
    default:
      throw ConfigError(std::string("unknown role code '") + code + "'");
  }
}

Eigen::MatrixXd TokenSequence::embedding(int token_dim) const {
  Eigen::MatrixXd x = has_noise() ? noise : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), token_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) x(static_cast<Eigen::Index>(t), tokens[t] - 1) += 1.0;
  return x;
}

std::string_view to_string(DataKind kind) {
  switch (kind) {
    case DataKind::train:
      return "train";
    case DataKind::test_id:
      return "test_id";
    case DataKind::test_ood:
      return "test_ood";
  }
  return "?";
}

DataKind parse_data_kind(std::string_view name) {
  if (name == "train") return DataKind::train;
  if (name == "test_id") return DataKind::test_id;
  if (name == "test_ood") return DataKind::test_ood;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "'");
}

Vocabulary build_vocab(const SyntheticParams& p) {
  p.validate();
  Vocabulary v;
  v.sparse_pos = {1};
  v.sparse_neg = {2};
  for (int i = 0; i < p.half_size; ++i) {
    v.frequent_pos.push_back(3 + 2 * i);
    v.frequent_neg.push_back(4 + 2 * i);
  }
  for (int id = 2 * p.half_size + 3; id <= p.vocab_size; ++id) v.irrelevant.push_back(id);
  return v;
}

TokenSequence generate_example(const SyntheticParams& p, const Vocabulary& vocab, int label, Rng& rng, bool ood) {
  TokenSequence seq;
  seq.label = label;
  seq.tokens.assign(p.seq_len, 0);
  seq.roles.assign(p.seq_len, Role::irrelevant);

  std::vector<int> positions(p.seq_len);
  std::iota(positions.begin(), positions.end(), 0);
  std::shuffle(positions.begin(), positions.end(), rng);

  const auto& sparse_pool = vocab.sparse(ood ? -label : label);
  auto it = positions.begin();
  for (int i = 0; i < p.n_sparse; ++i, ++it) {
    seq.roles[*it] = Role::sparse;
    seq.tokens[*it] = uniform_pick(sparse_pool, rng);
  }
  for (int i = 0; i < p.same_class_frequent(); ++i, ++it) {
    seq.roles[*it] = Role::frequent_same;
    seq.tokens[*it] = uniform_pick(vocab.frequent(label), rng);
  }
  for (int i = 0; i < p.opposite_class_frequent(); ++i, ++it) {
    seq.roles[*it] = Role::frequent_opposite;
    seq.tokens[*it] = uniform_pick(vocab.frequent(-label), rng);
  }
  for (; it != positions.end(); ++it) {
    seq.roles[*it] = Role::irrelevant;
    seq.tokens[*it] = uniform_pick(vocab.irrelevant, rng);
  }
  return seq;
}

Dataset generate_dataset(const SyntheticParams& p, std::size_t n, DataKind kind, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset size must be at least 1");
  const Vocabulary vocab = build_vocab(p);
  Dataset data;
  data.params = p;
  data.kind = kind;
  data.seed = seed;
  data.examples.reserve(n);
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = coin(rng) ? 1 : -1;
    data.examples.push_back(generate_example(p, vocab, label, rng, kind == DataKind::test_ood));
  }
  return data;
}

ReferenceVectors reference_vectors(const SyntheticParams& p) {
  const Vocabulary vocab = build_vocab(p);
  ReferenceVectors r;
  r.sparse = Eigen::VectorXd::Zero(p.token_dim);
  r.frequent = Eigen::VectorXd::Zero(p.token_dim);
  r.irrelevant = Eigen::VectorXd::Zero(p.token_dim);
  r.sparse(vocab.sparse_pos.front() - 1) = 1.0;
  r.sparse(vocab.sparse_neg.front() - 1) = -1.0;
  r.sparse_literal = Eigen::VectorXd::Zero(p.token_dim);
  r.sparse_literal(vocab.sparse_pos.front() - 1) = 1.0;
  r.sparse_literal(vocab.frequent_pos.front() - 1) = -1.0;
  for (int id : vocab.frequent_pos) r.frequent(id - 1) = 1.0;
  for (int id : vocab.frequent_neg) r.frequent(id - 1) = -1.0;
  for (int id : vocab.irrelevant) r.irrelevant(id - 1) = 1.0;
  return r;
}

void write_dataset(std::ostream& out, const Dataset& data) {
  const auto& p = data.params;
  out << "# senslab-synth v1 T=" << p.seq_len << " M=" << p.vocab_size << " m=" << p.half_size
      << " ns=" << p.n_sparse << " nf=" << p.n_frequent << " nd=" << p.n_imbalance << " dtok=" << p.token_dim
      << " kind=" << to_string(data.kind) << " seed=" << data.seed << '\n';
  out << "label\ttokens\troles\n";
  for (const auto& ex : data.examples) {
    out << (ex.label > 0 ? "+1" : "-1") << '\t';
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      if (t) out << ',';
      out << ex.tokens[t];
    }
    out << '\t';
    for (Role r : ex.roles) out << role_code(r);
    out << '\n';
  }
}

namespace {

template <typename T>
T parse_number(std::string_view text, const std::string& what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("cannot parse " + what + " from '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# senslab-synth v1", 0) != 0) {
    throw ConfigError("dataset file lacks the '# senslab-synth v1' header");
  }
  Dataset data;
  SyntheticParams& p = data.params;
  std::istringstream meta(line.substr(18));
  std::string field;
  while (meta >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string_view value = std::string_view(field).substr(eq + 1);
    if (key == "T") p.seq_len = parse_number<int>(value, key);
    else if (key == "M") p.vocab_size = parse_number<int>(value, key);
    else if (key == "m") p.half_size = parse_number<int>(value, key);
    else if (key == "ns") p.n_sparse = parse_number<int>(value, key);
    else if (key == "nf") p.n_frequent = parse_number<int>(value, key);
    else if (key == "nd") p.n_imbalance = parse_number<int>(value, key);
    else if (key == "dtok") p.token_dim = parse_number<int>(value, key);
    else if (key == "kind") data.kind = parse_data_kind(value);
    else if (key == "seed") data.seed = parse_number<std::uint64_t>(value, key);
    else throw ConfigError("unknown header field '" + key + "'");
  }
  p.validate();
  if (!std::getline(in, line) || line != "label\ttokens\troles") {
    throw ConfigError("dataset file lacks the column header line");
  }
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected three tab-separated fields");
    }
    TokenSequence ex;
    const std::string_view label = std::string_view(line).substr(0, tab1);
    if (label == "+1" || label == "1") ex.label = 1;
    else if (label == "-1") ex.label = -1;
    else throw ConfigError("line " + std::to_string(line_no) + ": bad label '" + std::string(label) + "'");
    std::string_view toks = std::string_view(line).substr(tab1 + 1, tab2 - tab1 - 1);
    while (!toks.empty()) {
      const auto comma = toks.find(',');
      const auto piece = toks.substr(0, comma);
      const int id = parse_number<int>(piece, "token id");
      if (id < 1 || id > p.vocab_size) {
        throw ConfigError("line " + std::to_string(line_no) + ": token id " + std::to_string(id) + " out of range");
      }
      ex.tokens.push_back(id);
      if (comma == std::string_view::npos) break;
      toks.remove_prefix(comma + 1);
    }
    for (char c : std::string_view(line).substr(tab2 + 1)) ex.roles.push_back(parse_role(c));
    if (static_cast<int>(ex.tokens.size()) != p.seq_len || ex.roles.size() != ex.tokens.size()) {
      throw ConfigError("line " + std::to_string(line_no) + ": sequence length does not match T");
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace senslab::synth
