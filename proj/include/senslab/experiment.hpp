#pragma once

// Experiment plumbing: strict JSON configs, named presets, CSV emission and
// run manifests.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "senslab/attention_model.hpp"
#include "senslab/interventions.hpp"
#include "senslab/sensitivity.hpp"
#include "senslab/synthetic_data.hpp"
#include "senslab/training.hpp"

namespace senslab::experiment {

std::string_view version();

enum class Pipeline { dynamics, oracle, spectra, sharpness };
std::string_view to_string(Pipeline p);
Pipeline parse_pipeline(std::string_view name);

struct SyntheticBlock {
  synth::SyntheticParams params;
  std::size_t n_train = 1000;
  std::size_t n_test = 500;
};

// One (n_s, n_f, n_d, m, M) row of an oracle table.
struct OracleSetting {
  int n_sparse = 0;
  int n_frequent = 0;
  int n_imbalance = 0;
  int half_size = 0;
  int vocab_size = 0;
};

struct OracleBlock {
  int seq_len = 50;
  std::vector<OracleSetting> settings;
};

struct SpectraBlock {
  std::vector<std::string> stacks;
  std::vector<int> dims;
  std::vector<std::string> kernels;  // "ck" and/or "ntk"
  int gram_dim = 8;                   // 0 skips the Gram check
};

// Training variants for the intervention comparison.
enum class Variant { vanilla, regularized, augmented };
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ExperimentConfig {
  std::string name;  // artifact prefix
  Pipeline pipeline = Pipeline::dynamics;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";

  SyntheticBlock synthetic;
  model::TrainConfig train;
  Variant intervention = Variant::vanilla;  // dynamics pipeline only
  sensitivity::CorruptionSpec corruption;
  interventions::AugmentSpec augment;
  interventions::RegSpec regularization;
  interventions::SharpnessSpec sharpness;
  OracleBlock oracle;
  SpectraBlock spectra;
};

std::vector<std::string> preset_names();
// Throws ConfigError for unknown names.
ExperimentConfig preset_config(std::string_view name);

// Strict parsing: unknown keys and wrong types are ConfigErrors naming the
// offending field; malformed JSON reports the line.
ExperimentConfig parse_config_text(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

// Canonical JSON of everything that affects numeric output (seed and output
// directory excluded). Keys are sorted, so the hash ignores input order.
std::string canonical_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Shortest decimal that reads back to the same double; locale independent.
std::string format_double(double v);

using Cell = std::variant<double, std::int64_t, std::string>;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

void write_csv(std::ostream& out, const CsvTable& table);
// Throws ConfigError if any row width differs from the header.
void emit_csv(const CsvTable& table, const std::filesystem::path& path);
// Writes via a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::filesystem::path>> artifacts;
  double wall_clock_seconds = 0.0;
  std::string version;

  std::string to_json() const;
};

// Plain-text parameter files: a header line, then each matrix as
// "name rows cols" followed by its rows.
void write_params(std::ostream& out, const model::AttentionParams& params);
model::AttentionParams read_params(std::istream& in);
void save_params(const model::AttentionParams& params, const std::filesystem::path& path);
model::AttentionParams load_params(const std::filesystem::path& path);

// Fig. 2 style run: datasets, training history, final sensitivity and the
// rule references for the same setting.
struct DynamicsOutcome {
  model::TrainResult result;
  sensitivity::SensitivityReport report;
  double rule_sparse = 0.0;    // exact, tie = zero
  double rule_frequent = 0.0;  // exact, tie = zero
};

struct DataSplits {
  synth::Dataset train;
  synth::Dataset test_id;
  synth::Dataset test_ood;
};

DataSplits make_splits(const SyntheticBlock& block, std::uint64_t seed);
// Trains on splits.train (augmented or regularized per `variant`) with the
// run's keyed random streams.
model::TrainResult train_with(const ExperimentConfig& cfg, const DataSplits& splits, Variant variant);
DynamicsOutcome run_dynamics(const ExperimentConfig& cfg);

struct VariantOutcome {
  Variant variant = Variant::vanilla;
  double train_acc = 0.0;
  double sensitivity = 0.0;
  double sensitivity_stderr = 0.0;
  interventions::Sharpness sharpness;
};

VariantOutcome run_variant(const ExperimentConfig& cfg, Variant variant);

CsvTable history_table(const std::vector<model::DiagnosticsRecord>& history);
CsvTable oracle_table(const OracleBlock& block);
// kernel,stack,d,k,mu
CsvTable spectra_table(const SpectraBlock& block);
// kernel,stack,d,holds,violation_low,violation_high,gram_residual
CsvTable ordering_table(const SpectraBlock& block);

// Executes the pipeline, writes its artifacts and the manifest into
// cfg.out_dir. Throws ConfigError if the directory cannot be written.
RunManifest run(const ExperimentConfig& cfg);
RunManifest run_preset(std::string_view name, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace senslab::experiment
