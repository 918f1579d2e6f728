#include "senslab/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "senslab/error.hpp"
#include "senslab/kernel_spectra.hpp"
#include "senslab/random.hpp"

#ifndef SENSLAB_VERSION
#define SENSLAB_VERSION "0.0.0"
#endif

namespace senslab::experiment {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream keys below the run seed.
constexpr std::uint64_t kTrainData = 101;
constexpr std::uint64_t kTestIdData = 102;
constexpr std::uint64_t kTestOodData = 103;
constexpr std::uint64_t kTraining = 104;
constexpr std::uint64_t kCorruption = 105;
constexpr std::uint64_t kSharpness = 106;
constexpr std::uint64_t kAugment = 107;

// Shared by every synthetic preset; see the README for the reasoning.
constexpr int kPresetVocab = 59;

}  // namespace

std::string_view version() { return SENSLAB_VERSION; }

std::string_view to_string(Pipeline p) {
  switch (p) {
    case Pipeline::dynamics: return "dynamics";
    case Pipeline::oracle: return "oracle";
    case Pipeline::spectra: return "spectra";
    case Pipeline::sharpness: return "sharpness";
  }
  return "?";
}

Pipeline parse_pipeline(std::string_view name) {
  for (auto p : {Pipeline::dynamics, Pipeline::oracle, Pipeline::spectra, Pipeline::sharpness})
    if (to_string(p) == name) return p;
  throw ConfigError("unknown pipeline '" + std::string(name) + "'");
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::regularized: return "regularized";
    case Variant::augmented: return "augmented";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::vanilla, Variant::regularized, Variant::augmented})
    if (to_string(v) == name) return v;
  throw ConfigError("unknown intervention '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- presets

namespace {

ExperimentConfig synthetic_preset(std::string name, int m, int ns, int nf, int nd) {
  ExperimentConfig cfg;
  cfg.name = std::move(name);
  cfg.pipeline = Pipeline::dynamics;
  cfg.synthetic.params = synth::SyntheticParams::make(50, m, ns, nf, nd, kPresetVocab);
  cfg.train.learning_rate = 0.5;
  cfg.train.epochs = 40;
  cfg.train.batch_size = 100;
  cfg.train.init_scale = 1e-2;
  cfg.train.diagnostics.every = 1;
  cfg.train.diagnostics.sensitivity_examples = 100;
  return cfg;
}

const std::vector<std::string> kPresets = {"fig2-case1",    "fig2-case2",   "table1-oracle",
                                           "table2-oracle", "spectra-demo", "sharpness-compare"};

}  // namespace

std::vector<std::string> preset_names() { return kPresets; }

ExperimentConfig preset_config(std::string_view name) {
  if (name == "fig2-case1") return synthetic_preset("fig2-case1", 16, 3, 5, 1);
  if (name == "fig2-case2") return synthetic_preset("fig2-case2", 20, 1, 17, 7);
  if (name == "table1-oracle" || name == "table2-oracle") {
    ExperimentConfig cfg;
    cfg.name = std::string(name);
    cfg.pipeline = Pipeline::oracle;
    if (name == "table1-oracle") {
      cfg.oracle.settings = {{3, 5, 1, 16, kPresetVocab}, {1, 17, 7, 20, kPresetVocab}};
    } else {
      // m = 36 needs at least 2m + 3 = 75 tokens.
      cfg.oracle.settings = {{3, 3, 1, 6, kPresetVocab},   {3, 5, 1, 16, kPresetVocab},
                             {3, 7, 1, 28, kPresetVocab},  {1, 7, 7, 10, kPresetVocab},
                             {1, 17, 7, 20, kPresetVocab}, {1, 32, 7, 36, 75}};
    }
    return cfg;
  }
  if (name == "spectra-demo") {
    ExperimentConfig cfg;
    cfg.name = "spectra-demo";
    cfg.pipeline = Pipeline::spectra;
    cfg.spectra.stacks = {"attn", "attn,attn", "dense:relu,attn", "dense:erf,attn", "attn,dense:relu,attn"};
    cfg.spectra.dims = {8, 16, 24};
    cfg.spectra.kernels = {"ck", "ntk"};
    cfg.spectra.gram_dim = 8;
    return cfg;
  }
  if (name == "sharpness-compare") {
    ExperimentConfig cfg = synthetic_preset("sharpness-compare", 16, 3, 5, 1);
    cfg.pipeline = Pipeline::sharpness;
    cfg.train.epochs = 15;
    cfg.train.diagnostics.every = cfg.train.epochs;
    cfg.train.diagnostics.sensitivity_examples = 0;
    return cfg;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- config parsing

namespace {

class BlockReader {
 public:
  BlockReader(const json& root, std::string block, bool required) : block_(std::move(block)) {
    auto it = root.find(block_);
    if (it == root.end()) {
      if (required) throw ConfigError("config: missing required block '" + block_ + "'");
      return;
    }
    if (!it->is_object()) throw ConfigError("config: block '" + block_ + "' must be an object");
    node_ = &*it;
  }

  bool present() const { return node_ != nullptr; }

  // Rejects keys outside `allowed`.
  void check_keys(std::initializer_list<std::string_view> allowed) const {
    if (!node_) return;
    for (auto it = node_->begin(); it != node_->end(); ++it) {
      if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
        throw ConfigError("config: unknown key '" + it.key() + "' in block '" + block_ + "'");
    }
  }

  template <class T>
  void read(std::string_view key, T& target) const {
    if (!node_) return;
    auto it = node_->find(std::string(key));
    if (it == node_->end()) return;
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_unsigned() || it->template get<std::int64_t>() >= 0) {
            target = it->template get<T>();
            return;
          }
          throw ConfigError("");
        }
        target = it->template get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
        target = it->template get<T>();
      } else {
        target = it->template get<T>();
      }
    } catch (const std::exception&) {
      throw ConfigError("config: field '" + block_ + "." + std::string(key) + "' has the wrong type");
    }
  }

  const json* find(std::string_view key) const {
    if (!node_) return nullptr;
    auto it = node_->find(std::string(key));
    return it == node_->end() ? nullptr : &*it;
  }

  const std::string& name() const { return block_; }

 private:
  std::string block_;
  const json* node_ = nullptr;
};

std::string where(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

void apply_blocks(const json& root, ExperimentConfig& cfg) {
  BlockReader synthetic(root, "synthetic", false);
  synthetic.check_keys({"T", "M", "m", "ns", "nf", "nd", "n_train", "n_test"});
  if (synthetic.present()) {
    auto p = cfg.synthetic.params;
    int vocab = synthetic.find("M") ? 0 : p.vocab_size;
    synthetic.read("T", p.seq_len);
    synthetic.read("M", vocab);
    synthetic.read("m", p.half_size);
    synthetic.read("ns", p.n_sparse);
    synthetic.read("nf", p.n_frequent);
    synthetic.read("nd", p.n_imbalance);
    cfg.synthetic.params =
        synth::SyntheticParams::make(p.seq_len, p.half_size, p.n_sparse, p.n_frequent, p.n_imbalance, vocab);
    synthetic.read("n_train", cfg.synthetic.n_train);
    synthetic.read("n_test", cfg.synthetic.n_test);
  }

  BlockReader train(root, "train", false);
  train.check_keys({"learning_rate", "batch_size", "epochs", "init_scale", "activation", "head_dim",
                    "intervention", "diagnostics_every", "diagnostics_examples", "diagnostics_repeats"});
  train.read("learning_rate", cfg.train.learning_rate);
  train.read("batch_size", cfg.train.batch_size);
  train.read("epochs", cfg.train.epochs);
  train.read("init_scale", cfg.train.init_scale);
  train.read("head_dim", cfg.train.head_dim);
  train.read("diagnostics_every", cfg.train.diagnostics.every);
  train.read("diagnostics_examples", cfg.train.diagnostics.sensitivity_examples);
  train.read("diagnostics_repeats", cfg.train.diagnostics.sensitivity_repeats);
  if (train.find("activation")) {
    std::string a;
    train.read("activation", a);
    cfg.train.activation = model::parse_activation(a);
  }
  if (train.find("intervention")) {
    std::string v;
    train.read("intervention", v);
    cfg.intervention = parse_variant(v);
  }

  BlockReader corruption(root, "corruption", false);
  corruption.check_keys({"kind", "variance", "repeats"});
  if (corruption.find("kind")) {
    std::string k;
    corruption.read("kind", k);
    cfg.corruption.kind = sensitivity::parse_corruption_kind(k);
  }
  corruption.read("variance", cfg.corruption.variance);
  corruption.read("repeats", cfg.corruption.repeats);

  BlockReader augment(root, "augment", false);
  augment.check_keys({"variance", "copies"});
  augment.read("variance", cfg.augment.variance);
  augment.read("copies", cfg.augment.copies);

  BlockReader reg(root, "regularization", false);
  reg.check_keys({"strength", "variance", "patches"});
  reg.read("strength", cfg.regularization.strength);
  reg.read("variance", cfg.regularization.variance);
  reg.read("patches", cfg.regularization.patches);

  BlockReader sharp(root, "sharpness", false);
  sharp.check_keys({"sigma", "repeats"});
  sharp.read("sigma", cfg.sharpness.sigma);
  sharp.read("repeats", cfg.sharpness.repeats);

  BlockReader oracle(root, "oracle", false);
  oracle.check_keys({"T", "settings"});
  oracle.read("T", cfg.oracle.seq_len);
  if (const json* settings = oracle.find("settings")) {
    if (!settings->is_array()) throw ConfigError("config: field 'oracle.settings' must be an array");
    cfg.oracle.settings.clear();
    for (std::size_t i = 0; i < settings->size(); ++i) {
      json wrapper = {{"setting", (*settings)[i]}};
      BlockReader row(wrapper, "setting", true);
      row.check_keys({"ns", "nf", "nd", "m", "M"});
      OracleSetting s;
      row.read("ns", s.n_sparse);
      row.read("nf", s.n_frequent);
      row.read("nd", s.n_imbalance);
      row.read("m", s.half_size);
      s.vocab_size = synth::SyntheticParams::default_vocab_size(s.half_size);
      row.read("M", s.vocab_size);
      cfg.oracle.settings.push_back(s);
    }
  }

  BlockReader spectra(root, "spectra", false);
  spectra.check_keys({"stacks", "dims", "kernels", "gram_dim"});
  spectra.read("stacks", cfg.spectra.stacks);
  spectra.read("dims", cfg.spectra.dims);
  spectra.read("kernels", cfg.spectra.kernels);
  spectra.read("gram_dim", cfg.spectra.gram_dim);
}

void validate(const ExperimentConfig& cfg) {
  switch (cfg.pipeline) {
    case Pipeline::dynamics:
    case Pipeline::sharpness:
      cfg.synthetic.params.validate();
      if (cfg.synthetic.n_train == 0 || cfg.synthetic.n_test == 0)
        throw ConfigError("config: synthetic.n_train and synthetic.n_test must be positive");
      cfg.train.validate();
      cfg.corruption.validate();
      cfg.augment.validate();
      cfg.regularization.validate();
      cfg.sharpness.validate();
      break;
    case Pipeline::oracle:
      if (cfg.oracle.settings.empty()) throw ConfigError("config: oracle.settings is empty");
      for (const auto& s : cfg.oracle.settings)
        synth::SyntheticParams::make(cfg.oracle.seq_len, s.half_size, s.n_sparse, s.n_frequent, s.n_imbalance,
                                     s.vocab_size)
            .validate();
      break;
    case Pipeline::spectra:
      if (cfg.spectra.stacks.empty() || cfg.spectra.dims.empty() || cfg.spectra.kernels.empty())
        throw ConfigError("config: spectra needs stacks, dims and kernels");
      for (const auto& s : cfg.spectra.stacks) kernels::parse_layers(s);
      for (const auto& k : cfg.spectra.kernels)
        if (k != "ck" && k != "ntk") throw ConfigError("config: unknown kernel '" + k + "' (ck or ntk)");
      for (int d : cfg.spectra.dims)
        if (d < 1 || d > kernels::kMaxSpectrumDim)
          throw ConfigError("config: spectra dim " + std::to_string(d) + " outside [1, " +
                            std::to_string(kernels::kMaxSpectrumDim) + "]");
      if (cfg.spectra.gram_dim < 0 || cfg.spectra.gram_dim > kernels::kMaxGramDim)
        throw ConfigError("config: spectra.gram_dim outside [0, " + std::to_string(kernels::kMaxGramDim) + "]");
      break;
  }
}

}  // namespace

ExperimentConfig parse_config_text(std::string_view text, std::string_view origin) {
  json root;
  bool blank = std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
  if (blank) {
    root = json::object();
  } else {
    try {
      root = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string(origin) + ": malformed JSON at " + where(text, e.byte) + ": " + e.what());
    }
  }
  if (!root.is_object()) throw ConfigError(std::string(origin) + ": top level must be an object");

  static const std::set<std::string> kBlocks = {"experiment", "synthetic",      "train",     "corruption",
                                                "augment",    "regularization", "sharpness", "oracle",
                                                "spectra"};
  try {
    for (auto it = root.begin(); it != root.end(); ++it)
      if (!kBlocks.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' at top level");
    BlockReader exp(root, "experiment", true);
    exp.check_keys({"preset", "pipeline", "name", "seed", "out_dir"});
    ExperimentConfig cfg;
    if (exp.find("preset")) {
      std::string preset;
      exp.read("preset", preset);
      cfg = preset_config(preset);
    } else if (!exp.find("pipeline")) {
      throw ConfigError("config: block 'experiment' needs 'preset' or 'pipeline'");
    }
    if (exp.find("pipeline")) {
      std::string p;
      exp.read("pipeline", p);
      cfg.pipeline = parse_pipeline(p);
    }
    if (cfg.name.empty()) cfg.name = std::string(to_string(cfg.pipeline));
    exp.read("name", cfg.name);
    exp.read("seed", cfg.seed);
    if (exp.find("out_dir")) {
      std::string dir;
      exp.read("out_dir", dir);
      cfg.out_dir = dir;
    }
    apply_blocks(root, cfg);
    validate(cfg);
    return cfg;
  } catch (const Error& e) {
    throw ConfigError(std::string(origin) + ": " + e.what());
  }
}

ExperimentConfig parse_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

// ---------------------------------------------------------------- hashing

std::string canonical_json(const ExperimentConfig& cfg) {
  const auto& p = cfg.synthetic.params;
  json j;
  j["name"] = cfg.name;
  j["pipeline"] = to_string(cfg.pipeline);
  switch (cfg.pipeline) {
    case Pipeline::dynamics:
    case Pipeline::sharpness:
      j["synthetic"] = {{"T", p.seq_len},        {"M", p.vocab_size},   {"m", p.half_size},
                        {"ns", p.n_sparse},      {"nf", p.n_frequent},  {"nd", p.n_imbalance},
                        {"dtok", p.token_dim},   {"n_train", cfg.synthetic.n_train},
                        {"n_test", cfg.synthetic.n_test}};
      j["train"] = {{"learning_rate", cfg.train.learning_rate},
                    {"batch_size", cfg.train.batch_size},
                    {"epochs", cfg.train.epochs},
                    {"init_scale", cfg.train.init_scale},
                    {"activation", model::to_string(cfg.train.activation)},
                    {"head_dim", cfg.train.head_dim},
                    {"intervention", to_string(cfg.intervention)},
                    {"diagnostics_every", cfg.train.diagnostics.every},
                    {"diagnostics_examples", cfg.train.diagnostics.sensitivity_examples},
                    {"diagnostics_repeats", cfg.train.diagnostics.sensitivity_repeats}};
      j["corruption"] = {{"kind", sensitivity::to_string(cfg.corruption.kind)},
                         {"variance", cfg.corruption.variance},
                         {"repeats", cfg.corruption.repeats}};
      j["augment"] = {{"variance", cfg.augment.variance}, {"copies", cfg.augment.copies}};
      j["regularization"] = {{"strength", cfg.regularization.strength},
                             {"variance", cfg.regularization.variance},
                             {"patches", cfg.regularization.patches}};
      j["sharpness"] = {{"sigma", cfg.sharpness.sigma}, {"repeats", cfg.sharpness.repeats}};
      break;
    case Pipeline::oracle: {
      json rows = json::array();
      for (const auto& s : cfg.oracle.settings)
        rows.push_back({{"ns", s.n_sparse}, {"nf", s.n_frequent}, {"nd", s.n_imbalance}, {"m", s.half_size},
                        {"M", s.vocab_size}});
      j["oracle"] = {{"T", cfg.oracle.seq_len}, {"settings", rows}};
      break;
    }
    case Pipeline::spectra:
      j["spectra"] = {{"stacks", cfg.spectra.stacks},
                      {"dims", cfg.spectra.dims},
                      {"kernels", cfg.spectra.kernels},
                      {"gram_dim", cfg.spectra.gram_dim}};
      break;
  }
  return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical_json(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

// ---------------------------------------------------------------- CSV

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void CsvTable::add(std::vector<Cell> row) {
  if (!header.empty() && row.size() != header.size())
    throw DomainError("csv row has " + std::to_string(row.size()) + " cells for " + std::to_string(header.size()) +
                      " columns");
  rows.push_back(std::move(row));
}

namespace {

void write_field(std::ostream& out, const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) {
    out << s;
    return;
  }
  out << '"';
  for (char c : s) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table) {
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out << ',';
    write_field(out, table.header[i]);
  }
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != table.header.size())
      throw ConfigError("csv row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                        " fields, header has " + std::to_string(table.header.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      if (const auto* d = std::get_if<double>(&row[i])) {
        out << format_double(*d);
      } else if (const auto* n = std::get_if<std::int64_t>(&row[i])) {
        out << *n;
      } else {
        write_field(out, std::get<std::string>(row[i]));
      }
    }
    out << '\n';
  }
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ConfigError("cannot move " + tmp.string() + " to " + path.string());
  }
}

void emit_csv(const CsvTable& table, const fs::path& path) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  write_csv(out, table);
  write_file_atomic(path, out.str());
}

std::string RunManifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  json arts = json::object();
  for (const auto& [name, path] : artifacts) arts[name] = path.string();
  j["artifacts"] = arts;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["version"] = version;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- params files

namespace {

void write_matrix(std::ostream& out, std::string_view name, const Eigen::MatrixXd& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

double parse_double(const std::string& token) {
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw ConfigError("params: bad number '" + token + "'");
  return v;
}

Eigen::MatrixXd read_matrix(std::istream& in, std::string_view name) {
  std::string got;
  long rows = -1, cols = -1;
  if (!(in >> got >> rows >> cols) || got != name || rows < 0 || cols < 0)
    throw ConfigError("params: expected matrix '" + std::string(name) + "'");
  Eigen::MatrixXd m(rows, cols);
  std::string token;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      if (!(in >> token)) throw ConfigError("params: truncated matrix '" + std::string(name) + "'");
      m(r, c) = parse_double(token);
    }
  return m;
}

}  // namespace

void write_params(std::ostream& out, const model::AttentionParams& params) {
  auto s = params.shape();
  out << "# senslab-params v1 activation=" << model::to_string(params.activation) << " T=" << s.seq_len
      << " dtok=" << s.token_dim << " dh=" << s.head_dim << " dv=" << s.value_dim << '\n';
  write_matrix(out, "query", params.query);
  write_matrix(out, "key", params.key);
  write_matrix(out, "value", params.value);
  write_matrix(out, "head", params.head);
}

model::AttentionParams read_params(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("# senslab-params v1", 0) != 0)
    throw ConfigError("params: missing '# senslab-params v1' header");
  model::AttentionParams p;
  std::istringstream fields(header.substr(19));
  std::string kv;
  bool have_activation = false;
  while (fields >> kv) {
    if (kv.rfind("activation=", 0) == 0) {
      p.activation = model::parse_activation(kv.substr(11));
      have_activation = true;
    }
  }
  if (!have_activation) throw ConfigError("params: header lacks activation=");
  p.query = read_matrix(in, "query");
  p.key = read_matrix(in, "key");
  p.value = read_matrix(in, "value");
  p.head = read_matrix(in, "head");
  p.validate();
  return p;
}

void save_params(const model::AttentionParams& params, const fs::path& path) {
  std::ostringstream out;
  write_params(out, params);
  write_file_atomic(path, out.str());
}

model::AttentionParams load_params(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read params file " + path.string());
  return read_params(in);
}

// ---------------------------------------------------------------- pipelines

DataSplits make_splits(const SyntheticBlock& block, std::uint64_t seed) {
  return {synth::generate_dataset(block.params, block.n_train, synth::DataKind::train, derive_seed(seed, kTrainData)),
          synth::generate_dataset(block.params, block.n_test, synth::DataKind::test_id, derive_seed(seed, kTestIdData)),
          synth::generate_dataset(block.params, block.n_test, synth::DataKind::test_ood,
                                  derive_seed(seed, kTestOodData))};
}

model::TrainResult train_with(const ExperimentConfig& cfg, const DataSplits& splits, Variant variant) {
  model::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, kTraining);
  if (variant == Variant::regularized) tc.regularization = cfg.regularization;
  if (variant == Variant::augmented) {
    synth::Rng rng(derive_seed(cfg.seed, kAugment));
    auto augmented = interventions::augment_dataset(splits.train, cfg.augment, rng);
    return model::train(augmented, splits.test_id, splits.test_ood, tc);
  }
  return model::train(splits.train, splits.test_id, splits.test_ood, tc);
}

namespace {

struct TrainedRun {
  DataSplits splits;
  model::TrainResult result;
};

TrainedRun train_variant(const ExperimentConfig& cfg, Variant variant) {
  TrainedRun run{make_splits(cfg.synthetic, cfg.seed), {}};
  run.result = train_with(cfg, run.splits, variant);
  return run;
}

sensitivity::SensitivityReport measure(const ExperimentConfig& cfg, const model::AttentionParams& params,
                                       const synth::Dataset& data) {
  auto spec = cfg.corruption;
  spec.seed = derive_seed(cfg.seed, kCorruption);
  return sensitivity::measure_sensitivity(sensitivity::AttentionScorer(params), data, spec);
}

double rule_exact(sensitivity::RuleKind kind, sensitivity::TiePolicy tie, const synth::SyntheticParams& p) {
  return sensitivity::rule_sensitivity_exact({kind, tie}, p);
}

}  // namespace

DynamicsOutcome run_dynamics(const ExperimentConfig& cfg) {
  auto run = train_variant(cfg, cfg.intervention);
  DynamicsOutcome out;
  out.report = measure(cfg, run.result.params, run.splits.train);
  out.result = std::move(run.result);
  const auto& p = cfg.synthetic.params;
  out.rule_sparse = rule_exact(sensitivity::RuleKind::sparse_rule, sensitivity::TiePolicy::zero, p);
  out.rule_frequent = rule_exact(sensitivity::RuleKind::frequent_majority, sensitivity::TiePolicy::zero, p);
  return out;
}

VariantOutcome run_variant(const ExperimentConfig& cfg, Variant variant) {
  auto run = train_variant(cfg, variant);
  VariantOutcome out;
  out.variant = variant;
  out.train_acc = model::accuracy(run.result.params, run.splits.train);
  auto report = measure(cfg, run.result.params, run.splits.train);
  out.sensitivity = report.normalized;
  out.sensitivity_stderr = report.stderr_normalized;
  auto spec = cfg.sharpness;
  spec.seed = derive_seed(cfg.seed, kSharpness);
  out.sharpness = interventions::sharpness(run.result.params, run.splits.train, spec);
  return out;
}

CsvTable history_table(const std::vector<model::DiagnosticsRecord>& history) {
  CsvTable t;
  t.header = {"epoch",      "train_acc", "test_id_acc", "test_ood_acc", "align_sp",   "align_freq",
              "align_irrel", "mass_sp",  "mass_freq",   "mass_irrel",   "sensitivity"};
  for (const auto& r : history)
    t.add({std::int64_t{r.epoch}, r.train_acc, r.test_id_acc, r.test_ood_acc, r.align_sp, r.align_freq,
           r.align_irrel, r.mass_sp, r.mass_freq, r.mass_irrel, r.sensitivity});
  return t;
}

CsvTable oracle_table(const OracleBlock& block) {
  using sensitivity::RuleKind;
  using sensitivity::TiePolicy;
  CsvTable t;
  t.header = {"ns", "nf", "nd", "m", "T", "M", "rule", "sensitivity_tie_zero", "sensitivity_tie_positive"};
  for (const auto& s : block.settings) {
    auto p = synth::SyntheticParams::make(block.seq_len, s.half_size, s.n_sparse, s.n_frequent, s.n_imbalance,
                                          s.vocab_size);
    p.validate();
    for (auto kind : {RuleKind::sparse_rule, RuleKind::frequent_majority})
      t.add({std::int64_t{s.n_sparse}, std::int64_t{s.n_frequent}, std::int64_t{s.n_imbalance},
             std::int64_t{s.half_size}, std::int64_t{p.seq_len}, std::int64_t{p.vocab_size},
             std::string(sensitivity::to_string(kind)), rule_exact(kind, TiePolicy::zero, p),
             rule_exact(kind, TiePolicy::positive, p)});
  }
  return t;
}

namespace {

kernels::KernelPsi compose(const std::string& kernel, const std::string& stack) {
  auto layers = kernels::parse_layers(stack);
  return kernel == "ck" ? kernels::compose_ck(layers) : kernels::compose_ntk(layers);
}

}  // namespace

CsvTable spectra_table(const SpectraBlock& block) {
  CsvTable t;
  t.header = {"kernel", "stack", "d", "k", "mu"};
  for (const auto& kernel : block.kernels)
    for (const auto& stack : block.stacks) {
      auto psi = compose(kernel, stack);
      for (int d : block.dims) {
        auto s = kernels::spectrum(psi, d);
        for (int k = 0; k <= d; ++k) t.add({kernel, stack, std::int64_t{d}, std::int64_t{k}, s.mu[k]});
      }
    }
  return t;
}

CsvTable ordering_table(const SpectraBlock& block) {
  CsvTable t;
  t.header = {"kernel", "stack", "d", "holds", "violation_low", "violation_high", "gram_residual"};
  for (const auto& kernel : block.kernels)
    for (const auto& stack : block.stacks) {
      auto psi = compose(kernel, stack);
      double residual = block.gram_dim > 0 ? kernels::gram_eigencheck(psi, block.gram_dim) : 0.0;
      for (int d : block.dims) {
        auto verdict = kernels::verify_weak_spectral_bias(kernels::spectrum(psi, d));
        std::int64_t lo = verdict.violation ? verdict.violation->first : -1;
        std::int64_t hi = verdict.violation ? verdict.violation->second : -1;
        t.add({kernel, stack, std::int64_t{d}, std::int64_t{verdict.holds ? 1 : 0}, lo, hi, residual});
      }
    }
  return t;
}

RunManifest run(const ExperimentConfig& cfg) {
  validate(cfg);
  auto start = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec || !fs::is_directory(cfg.out_dir)) throw ConfigError("cannot create output directory " + cfg.out_dir.string());

  RunManifest manifest;
  manifest.config_hash = config_hash(cfg);
  manifest.seed = cfg.seed;
  manifest.version = std::string(version());
  auto emit = [&](const std::string& label, const CsvTable& table) {
    fs::path path = cfg.out_dir / (cfg.name + "_" + label + ".csv");
    emit_csv(table, path);
    manifest.artifacts.emplace_back(label, path);
  };

  switch (cfg.pipeline) {
    case Pipeline::dynamics: {
      auto out = run_dynamics(cfg);
      emit("history", history_table(out.result.history));

      CsvTable profile;
      profile.header = {"position", "sensitivity", "stderr"};
      for (std::size_t i = 0; i < out.report.per_position.size(); ++i)
        profile.add({std::to_string(i), out.report.per_position[i], out.report.per_position_stderr[i]});
      profile.add({std::string("all"), out.report.normalized, out.report.stderr_normalized});
      emit("sensitivity", profile);

      const auto& last = out.result.history.back();
      CsvTable summary;
      summary.header = {"metric", "value"};
      summary.add({std::string("train_acc"), last.train_acc});
      summary.add({std::string("test_id_acc"), last.test_id_acc});
      summary.add({std::string("test_ood_acc"), last.test_ood_acc});
      summary.add({std::string("align_sp"), last.align_sp});
      summary.add({std::string("align_sp_literal"), last.align_sp_literal});
      summary.add({std::string("align_freq"), last.align_freq});
      summary.add({std::string("align_irrel"), last.align_irrel});
      summary.add({std::string("mass_sp"), last.mass_sp});
      summary.add({std::string("mass_freq"), last.mass_freq});
      summary.add({std::string("mass_irrel"), last.mass_irrel});
      summary.add({std::string("sensitivity"), out.report.normalized});
      summary.add({std::string("sensitivity_stderr"), out.report.stderr_normalized});
      summary.add({std::string("sensitivity_role_sparse"), out.report.per_role[0]});
      summary.add({std::string("sensitivity_role_frequent_same"), out.report.per_role[1]});
      summary.add({std::string("sensitivity_role_frequent_opposite"), out.report.per_role[2]});
      summary.add({std::string("sensitivity_role_irrelevant"), out.report.per_role[3]});
      summary.add({std::string("rule_sparse_exact"), out.rule_sparse});
      summary.add({std::string("rule_frequent_exact"), out.rule_frequent});
      emit("summary", summary);

      fs::path params_path = cfg.out_dir / (cfg.name + "_params.txt");
      save_params(out.result.params, params_path);
      manifest.artifacts.emplace_back("params", params_path);
      break;
    }
    case Pipeline::oracle:
      emit("oracle", oracle_table(cfg.oracle));
      break;
    case Pipeline::spectra:
      emit("spectra", spectra_table(cfg.spectra));
      emit("ordering", ordering_table(cfg.spectra));
      break;
    case Pipeline::sharpness: {
      CsvTable t;
      t.header = {"variant", "train_acc", "sensitivity", "sensitivity_stderr", "sh_op", "sh_pred"};
      for (auto v : {Variant::vanilla, Variant::regularized, Variant::augmented}) {
        auto o = run_variant(cfg, v);
        t.add({std::string(to_string(v)), o.train_acc, o.sensitivity, o.sensitivity_stderr,
               o.sharpness.output_change, o.sharpness.prediction_flips});
      }
      emit("variants", t);
      break;
    }
  }

  manifest.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fs::path manifest_path = cfg.out_dir / (cfg.name + "_manifest.json");
  write_file_atomic(manifest_path, manifest.to_json());
  return manifest;
}

RunManifest run_preset(std::string_view name, std::uint64_t seed, const fs::path& out_dir) {
  auto cfg = preset_config(name);
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  return run(cfg);
}

}  // namespace senslab::experiment
