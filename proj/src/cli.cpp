#include "senslab/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "senslab/boolean_fourier.hpp"
#include "senslab/error.hpp"
#include "senslab/experiment.hpp"
#include "senslab/kernel_spectra.hpp"

namespace senslab::cli {

namespace fs = std::filesystem;
using experiment::Cell;
using experiment::CsvTable;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config;
  // Explicit --seed / --out-dir take precedence over a config file.
  bool seed_given = false;
  bool out_dir_given = false;

  void apply_to(experiment::ExperimentConfig& cfg) const {
    if (seed_given || config.empty()) cfg.seed = seed;
    if (out_dir_given || config.empty()) cfg.out_dir = out_dir;
  }
};

// Writes the table to `path`, or to `out` when the path is empty.
void deliver(const CsvTable& table, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    experiment::write_csv(out, table);
  } else {
    experiment::emit_csv(table, path);
  }
}

std::vector<double> split_numbers(const std::string& text, std::size_t expected, const std::string& flag) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError(flag + ": '" + part + "' is not a number");
    }
  }
  if (values.size() != expected)
    throw ConfigError(flag + " expects " + std::to_string(expected) + " comma-separated values");
  return values;
}

synth::Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read dataset " + path);
  return synth::read_dataset(in);
}

void check_compatible(const model::AttentionParams& params, const synth::Dataset& data) {
  if (params.seq_len() != data.params.seq_len || params.token_dim() != data.params.token_dim)
    throw ConfigError("model expects T=" + std::to_string(params.seq_len()) + ", dtok=" +
                      std::to_string(params.token_dim()) + " but the data has T=" +
                      std::to_string(data.params.seq_len) + ", dtok=" + std::to_string(data.params.token_dim));
}

// ---------------------------------------------------------------- fourier

struct FourierArgs {
  std::string source;
  int dim = 0;
  std::string report = "coeffs";
  std::string out;
};

boolean::BooleanFunction fourier_source(const FourierArgs& a) {
  if (a.source == "parity" || a.source == "dictator" || a.source == "majority") {
    if (a.dim < 1) throw ConfigError("--d is required for builtin functions");
    if (a.source == "parity") return boolean::BooleanFunction::parity(a.dim);
    if (a.source == "dictator") return boolean::BooleanFunction::dictator(a.dim);
    return boolean::BooleanFunction::majority(a.dim);
  }
  std::ifstream in(a.source);
  if (!in) throw ConfigError("'" + a.source + "' is neither a builtin (parity, dictator, majority) nor a readable file");
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("truth table: '" + token + "' is not a number");
    }
  }
  int dim = 0;
  while ((std::size_t{1} << dim) < values.size()) ++dim;
  if (values.empty() || (std::size_t{1} << dim) != values.size())
    throw ConfigError("truth table has " + std::to_string(values.size()) + " values, not a power of two");
  if (a.dim > 0 && a.dim != dim)
    throw ConfigError("--d " + std::to_string(a.dim) + " does not match a table of " + std::to_string(values.size()) +
                      " values");
  return boolean::BooleanFunction(dim, std::move(values));
}

void run_fourier(const FourierArgs& a, std::ostream& out) {
  auto f = fourier_source(a);
  auto coeffs = boolean::fourier_transform(f);
  CsvTable t;
  if (a.report == "coeffs") {
    t.header = {"subset_mask", "coefficient"};
    for (std::uint32_t u = 0; u < coeffs.size(); ++u) t.add({std::int64_t{u}, coeffs[u]});
  } else {
    t.header = {"metric", "value"};
    if (!f.is_pm_one() && a.report != "degree")
      throw DomainError("report '" + a.report + "' needs a +-1 valued function");
    if (a.report == "sensitivity") {
      t.add({std::string("average_sensitivity"), boolean::average_sensitivity(f)});
      t.add({std::string("normalized_sensitivity"), boolean::normalized_sensitivity(f)});
      t.add({std::string("max_sensitivity"), std::int64_t{boolean::max_sensitivity(f)}});
      t.add({std::string("total_influence"), boolean::total_influence(coeffs)});
    } else if (a.report == "degree") {
      t.add({std::string("degree"), std::int64_t{boolean::degree(coeffs)}});
    } else {
      int deg = boolean::degree(coeffs);
      int smax = boolean::max_sensitivity(f);
      t.add({std::string("degree"), std::int64_t{deg}});
      t.add({std::string("max_sensitivity"), std::int64_t{smax}});
      t.add({std::string("huang_bound_holds"), std::int64_t{boolean::huang_bound_holds(f) ? 1 : 0}});
    }
  }
  deliver(t, a.out, out);
}

// ---------------------------------------------------------------- spectra

struct SpectraArgs {
  std::string layers;
  std::string kernel = "ntk";
  int dim = 0;
  bool check_ordering = false;
  bool gram_check = false;
  std::string out;
};

void run_spectra(const SpectraArgs& a, std::ostream& out) {
  auto layers = kernels::parse_layers(a.layers);
  auto psi = a.kernel == "ck" ? kernels::compose_ck(layers) : kernels::compose_ntk(layers);
  auto s = kernels::spectrum(psi, a.dim);
  CsvTable t;
  t.header = {"k", "mu_k"};
  for (int k = 0; k <= a.dim; ++k) t.add({std::int64_t{k}, s.mu[k]});
  deliver(t, a.out, out);
  if (a.check_ordering) {
    auto v = kernels::verify_weak_spectral_bias(s);
    if (v.holds) {
      out << "# ordering: holds\n";
    } else {
      out << "# ordering: violated at mu_" << v.violation->first << " < mu_" << v.violation->second << "\n";
    }
  }
  if (a.gram_check) {
    if (a.dim > kernels::kMaxGramDim)
      throw CapacityError("--gram-check supports d <= " + std::to_string(kernels::kMaxGramDim));
    out << "# gram residual: " << experiment::format_double(kernels::gram_eigencheck(psi, a.dim)) << "\n";
  }
}

// ---------------------------------------------------------------- synth-gen

struct SynthArgs {
  int seq_len = 50;
  int vocab = 0;
  int m = 0, ns = 0, nf = 0, nd = 0;
  std::size_t n = 1000;
  std::string kind = "train";
  std::string out;
};

void run_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  auto p = synth::SyntheticParams::make(a.seq_len, a.m, a.ns, a.nf, a.nd, a.vocab);
  p.validate();
  auto data = synth::generate_dataset(p, a.n, synth::parse_data_kind(a.kind), g.seed);
  if (a.out.empty()) {
    synth::write_dataset(out, data);
  } else {
    std::ostringstream buf;
    synth::write_dataset(buf, data);
    experiment::write_file_atomic(a.out, buf.str());
  }
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string preset = "fig2-case1";
  std::string data;
  std::string augment;
  std::string reg;
  std::string out_diagnostics;
  std::string save_params;
};

void run_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  auto cfg = g.config.empty() ? experiment::preset_config(a.preset) : experiment::parse_config(g.config);
  if (cfg.pipeline != experiment::Pipeline::dynamics && cfg.pipeline != experiment::Pipeline::sharpness)
    throw ConfigError("train needs a config with synthetic and train blocks");
  g.apply_to(cfg);
  if (!a.augment.empty()) {
    auto v = split_numbers(a.augment, 2, "--augment");
    cfg.augment.variance = v[0];
    if (v[1] < 1 || v[1] != std::floor(v[1])) throw ConfigError("--augment copies must be a positive integer");
    cfg.augment.copies = static_cast<int>(v[1]);
    cfg.augment.validate();
  }
  if (!a.reg.empty()) {
    auto v = split_numbers(a.reg, 2, "--reg");
    cfg.regularization.strength = v[0];
    cfg.regularization.variance = v[1];
    cfg.regularization.validate();
  }
  if (!a.augment.empty() && !a.reg.empty()) throw ConfigError("--augment and --reg are exclusive");

  auto splits = experiment::make_splits(cfg.synthetic, cfg.seed);
  if (!a.data.empty()) {
    splits.train = load_dataset(a.data);
    if (splits.train.params != cfg.synthetic.params)
      throw ConfigError("dataset " + a.data + " was generated with different synthetic parameters");
  }
  auto variant = experiment::Variant::vanilla;
  if (!a.reg.empty()) variant = experiment::Variant::regularized;
  if (!a.augment.empty()) variant = experiment::Variant::augmented;
  auto result = experiment::train_with(cfg, splits, variant);

  fs::path dir = g.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  fs::path diag = a.out_diagnostics.empty() ? dir / "train_history.csv" : fs::path(a.out_diagnostics);
  fs::path params = a.save_params.empty() ? dir / "train_params.txt" : fs::path(a.save_params);
  experiment::emit_csv(experiment::history_table(result.history), diag);
  experiment::save_params(result.params, params);
  const auto& last = result.history.back();
  out << "epochs " << last.epoch << " train_acc " << experiment::format_double(last.train_acc) << " test_ood_acc "
      << experiment::format_double(last.test_ood_acc) << "\n";
  out << "diagnostics " << diag.string() << "\nparams " << params.string() << "\n";
}

// ---------------------------------------------------------------- sensitivity / sharpness

struct SensArgs {
  std::string params;
  std::string data;
  std::string kind = "token";
  double sigma2 = 1.0;
  int repeats = 0;
  std::string out;
};

void run_sensitivity(const SensArgs& a, const Globals& g, std::ostream& out) {
  auto params = experiment::load_params(a.params);
  auto data = load_dataset(a.data);
  check_compatible(params, data);
  sensitivity::CorruptionSpec spec;
  spec.kind = sensitivity::parse_corruption_kind(a.kind);
  spec.variance = a.sigma2;
  spec.repeats = a.repeats;
  spec.seed = g.seed;
  spec.validate();
  auto report = sensitivity::measure_sensitivity(sensitivity::AttentionScorer(params), data, spec);
  CsvTable t;
  t.header = {"position", "sensitivity", "stderr"};
  for (std::size_t i = 0; i < report.per_position.size(); ++i)
    t.add({std::to_string(i), report.per_position[i], report.per_position_stderr[i]});
  t.add({std::string("all"), report.normalized, report.stderr_normalized});
  deliver(t, a.out, out);
}

struct SharpArgs {
  std::string params;
  std::string data;
  double sigma = 0.005;
  int repeats = 5;
  std::string out;
};

void run_sharpness(const SharpArgs& a, const Globals& g, std::ostream& out) {
  auto params = experiment::load_params(a.params);
  auto data = load_dataset(a.data);
  check_compatible(params, data);
  interventions::SharpnessSpec spec;
  spec.sigma = a.sigma;
  spec.repeats = a.repeats;
  spec.seed = g.seed;
  spec.validate();
  auto sh = interventions::sharpness(params, data, spec);
  CsvTable t;
  t.header = {"metric", "value"};
  t.add({std::string("sh_op"), sh.output_change});
  t.add({std::string("sh_pred"), sh.prediction_flips});
  deliver(t, a.out, out);
}

// ---------------------------------------------------------------- preset

void run_preset_cmd(const std::string& name, bool list, const Globals& g, std::ostream& out) {
  if (list) {
    for (const auto& n : experiment::preset_names()) out << n << "\n";
    return;
  }
  experiment::ExperimentConfig cfg;
  if (!name.empty()) {
    cfg = experiment::preset_config(name);
    cfg.seed = g.seed;
    cfg.out_dir = g.out_dir;
  } else if (!g.config.empty()) {
    cfg = experiment::parse_config(g.config);
    g.apply_to(cfg);
  } else {
    throw ConfigError("preset: give a preset name, --list, or --config");
  }
  auto manifest = experiment::run(cfg);
  out << "config_hash " << manifest.config_hash << "\n";
  for (const auto& [label, path] : manifest.artifacts) out << label << " " << path.string() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sensitivity, Fourier spectra and attention-model experiments", "senslab"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(experiment::version()));
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  auto* out_dir_opt = app.add_option("--out-dir", g.out_dir, "Directory for generated artifacts")->capture_default_str();
  app.add_option("--config", g.config, "JSON experiment config");

  FourierArgs fa;
  auto* fourier = app.add_subcommand("fourier", "Fourier coefficients and sensitivity of a Boolean function");
  fourier->add_option("source", fa.source, "Builtin (parity, dictator, majority) or truth-table file")->required();
  fourier->add_option("--d", fa.dim, "Input dimension");
  fourier->add_option("--report", fa.report, "What to report")
      ->check(CLI::IsMember({"coeffs", "sensitivity", "degree", "huang"}))
      ->capture_default_str();
  fourier->add_option("--out", fa.out, "Output CSV (default: stdout)");

  SpectraArgs sa;
  auto* spectra = app.add_subcommand("spectra", "Eigenvalues of CK/NTK dot-product kernels on the cube");
  spectra->add_option("--layers", sa.layers, "Layer stack, e.g. dense:relu,attn")->required();
  spectra->add_option("--kernel", sa.kernel, "ck or ntk")->check(CLI::IsMember({"ck", "ntk"}))->capture_default_str();
  spectra->add_option("--d", sa.dim, "Cube dimension")->required()->check(CLI::Range(1, kernels::kMaxSpectrumDim));
  spectra->add_flag("--check-ordering", sa.check_ordering, "Check the even/odd eigenvalue chains");
  spectra->add_flag("--gram-check", sa.gram_check, "Verify eigenpairs against the explicit Gram matrix");
  spectra->add_option("--out", sa.out, "Output CSV (default: stdout)");

  SynthArgs ya;
  auto* synth_gen = app.add_subcommand("synth-gen", "Generate a synthetic token dataset");
  synth_gen->add_option("--T", ya.seq_len, "Sequence length")->capture_default_str();
  synth_gen->add_option("--M", ya.vocab, "Vocabulary size (0: default for m)")->capture_default_str();
  synth_gen->add_option("--m", ya.m, "Frequent tokens per class")->required();
  synth_gen->add_option("--ns", ya.ns, "Sparse positions")->required();
  synth_gen->add_option("--nf", ya.nf, "Frequent positions")->required();
  synth_gen->add_option("--nd", ya.nd, "Frequent imbalance")->required();
  synth_gen->add_option("--n", ya.n, "Number of examples")->capture_default_str()->check(CLI::PositiveNumber);
  synth_gen->add_option("--kind", ya.kind, "train, test_id or test_ood")
      ->check(CLI::IsMember({"train", "test_id", "test_ood"}))
      ->capture_default_str();
  synth_gen->add_option("--out", ya.out, "Output file (default: stdout)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the attention model");
  train->add_option("--preset", ta.preset, "Base settings when --config is absent")->capture_default_str();
  train->add_option("--data", ta.data, "Training set file (default: generated from the config)");
  train->add_option("--augment", ta.augment, "Gaussian augmentation: sigma2,copies");
  train->add_option("--reg", ta.reg, "Output-matching regularizer: lambda,sigma2");
  train->add_option("--out-diagnostics", ta.out_diagnostics, "Per-epoch diagnostics CSV");
  train->add_option("--save-params", ta.save_params, "Parameter file");

  SensArgs ea;
  auto* sens = app.add_subcommand("sensitivity", "Measure prediction-flip sensitivity of a trained model");
  sens->add_option("--model-params", ea.params, "Parameter file")->required();
  sens->add_option("--data", ea.data, "Dataset file")->required();
  sens->add_option("--kind", ea.kind, "token or gauss")->check(CLI::IsMember({"token", "gauss"}))->capture_default_str();
  sens->add_option("--sigma2", ea.sigma2, "Gaussian variance")->capture_default_str();
  sens->add_option("--repeats", ea.repeats, "Draws per position (0: default)")->capture_default_str();
  sens->add_option("--out", ea.out, "Output CSV (default: stdout)");

  SharpArgs ha;
  auto* sharp = app.add_subcommand("sharpness", "Weight-perturbation sharpness of a trained model");
  sharp->add_option("--model-params", ha.params, "Parameter file")->required();
  sharp->add_option("--data", ha.data, "Dataset file")->required();
  sharp->add_option("--sigma", ha.sigma, "Weight noise std")->capture_default_str();
  sharp->add_option("--repeats", ha.repeats, "Noise draws")->capture_default_str();
  sharp->add_option("--out", ha.out, "Output CSV (default: stdout)");

  std::string preset_name;
  bool list = false;
  auto* preset = app.add_subcommand("preset", "Run a named experiment preset or a --config file");
  preset->add_option("name", preset_name, "Preset name");
  preset->add_flag("--list", list, "List presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  g.seed_given = seed_opt->count() > 0;
  g.out_dir_given = out_dir_opt->count() > 0;

  try {
    if (*fourier) run_fourier(fa, out);
    else if (*spectra) run_spectra(sa, out);
    else if (*synth_gen) run_synth(ya, g, out);
    else if (*train) run_train(ta, g, out);
    else if (*sens) run_sensitivity(ea, g, out);
    else if (*sharp) run_sharpness(ha, g, out);
    else if (*preset) run_preset_cmd(preset_name, list, g, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace senslab::cli
