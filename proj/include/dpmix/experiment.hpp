#pragma once

// Config-driven experiment runner.
//
// A config is a JSON document. Sweep axes (topology.m, topology.p,
// privacy.theta, privacy.gamma, methods, seeds) accept a scalar or a list;
// every combination is one run. Results land in <output>/results.csv and
// <output>/manifest.json. The manifest embeds the resolved config and can be
// passed back to validate_config to repeat the experiment.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dpmix/data.hpp"
#include "dpmix/metrics.hpp"
#include "dpmix/objective.hpp"
#include "dpmix/optimizer.hpp"
#include "dpmix/topology.hpp"

namespace dpmix {

/// Invalid config document. The message starts with the key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A results file lacks a required column or is malformed.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  enum class Kind { libsvm, synthetic };
  Kind kind = Kind::synthetic;

  // libsvm
  std::filesystem::path path;
  std::optional<std::filesystem::path> test_path;
  std::optional<std::size_t> dim;

  // synthetic
  std::size_t n = 2000;
  std::size_t d = 20;
  double margin = 0.1;
  double flip_rate = 0.05;
  std::uint64_t seed = 1;

  double test_fraction = 0.2;  // used when there is no separate test file
  std::uint64_t split_seed = 0;
  bool unit_scale = true;
  ShardMode shard_mode = ShardMode::iid;
};

struct HyperSpec {
  enum class Preset { manual, theorem1 };
  Preset preset = Preset::manual;

  double eta_x = 0.1;
  double eta_y = 0.1;
  double beta_x = 0.1;
  double beta_y = 0.1;
  std::optional<std::size_t> b0;  // unset: the whole shard
  std::size_t batch = 20;
  std::optional<double> clip;

  double epsilon = 0.1;  // theorem1 only
};

struct PrivacySpec {
  std::vector<double> theta{1.0};
  std::vector<double> gamma{1e-5};
  double c = 1.0;
  std::optional<double> L_g;    // overrides the problem's bound
  std::optional<double> sigma;  // overrides calibration
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  std::vector<Method> methods{Method::dpmixsgd};
  std::vector<std::size_t> m{10};
  std::vector<double> p{0.5};
  std::uint64_t topology_seed = 0;
  HyperSpec hyper;
  PrivacySpec privacy;
  RobustLogRegParams objective;

  // Exactly one of epochs / iterations sets T; with neither, theorem1 uses
  // its own T and the manual preset defaults to 10 epochs.
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> iterations;
  std::size_t log_every_epochs = 1;  // 0: final row only

  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output = "results";
  std::size_t jobs = 1;
  std::size_t threads = 1;
  bool record_wall_time = false;
  bool compute_stationarity = true;
  StationarityConfig stationarity;

  /// beta_x of the theorem1 schedule for m agents.
  double theorem1_beta_x(std::size_t agents) const;

  /// Resolved config as JSON text; feeding it back to validate_config
  /// yields an equal config.
  std::string to_json_text(int indent = 2) const;
};

/// Parses and checks a config (or a manifest, whose embedded config is
/// used). Throws ConfigError naming the key path on any violation,
/// including unknown keys.
ExperimentConfig validate_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct PreparedData {
  Dataset train;
  Dataset test;
  double scale = 1.0;
};

PreparedData prepare_data(const DatasetSpec& spec);

/// One fully resolved sweep point.
struct RunPlan {
  Method method = Method::dpmixsgd;
  std::uint64_t seed = 0;
  std::size_t m = 0;
  double p = 0.0;
  double theta = 0.0;
  double gamma = 0.0;
  double sigma = 0.0;
  double L_g = 0.0;
  HyperParams hp;
  std::size_t epoch_len = 1;  // iterations per epoch
  std::size_t log_every = 0;  // iterations
  Graph graph{1};
  double lambda = 0.0;
};

/// Expands the sweep in (method, seed, m, p, theta, gamma) order.
std::vector<RunPlan> plan_runs(const ExperimentConfig& cfg, const PreparedData& data);

struct ResultRow {
  Method method = Method::dpmixsgd;
  std::uint64_t seed = 0;
  std::size_t m = 0;
  double p = 0.0;
  double theta = 0.0;
  double gamma = 0.0;
  double sigma = 0.0;
  std::size_t iter = 0;
  double epoch = 0.0;
  double auroc_test = 0.0;
  double grad_norm = 0.0;
  double consensus_x = 0.0;
  double consensus_y = 0.0;
  double wall_ms = 0.0;
};

inline constexpr std::string_view kResultsHeader =
    "method,seed,m,p,theta,gamma,sigma,iter,epoch,auroc_test,grad_norm,consensus_x,"
    "consensus_y,wall_ms";

/// Shortest text that parses back to the same double; "nan", "inf", "-inf"
/// for non-finite values.
std::string format_double(double v);

std::string format_row(const ResultRow& r);

struct ExperimentResult {
  std::vector<ResultRow> rows;  // sorted
  std::vector<RunPlan> plans;
  std::filesystem::path csv_path;
  std::filesystem::path manifest_path;
};

/// Runs every sweep point and writes results.csv and manifest.json under
/// cfg.output. Rows are sorted by (method, seed, m, p, theta, gamma, iter).
/// If a run diverges the rows produced so far are still written and a
/// std::runtime_error naming the sweep point is thrown.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SummaryRow {
  std::string method;
  std::string m, p, theta, gamma;  // as written in the results file
  std::size_t seeds = 0;
  double mean_auroc = 0.0;
  double min_auroc = 0.0;
  double max_auroc = 0.0;
};

/// Final-iteration AUROC per (method, m, p, theta, gamma), aggregated over
/// seeds. Throws SchemaError when a file lacks a required column.
std::vector<SummaryRow> summarize(const std::vector<std::filesystem::path>& csv_paths);
std::vector<SummaryRow> summarize_text(const std::vector<std::string>& csv_texts);

std::string summary_table(const std::vector<SummaryRow>& rows);
std::string summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace dpmix
