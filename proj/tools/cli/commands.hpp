#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace seqoed::cli {

/// Overrides given on the command line; unset fields keep the config values.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> out;
  std::optional<models::Engine> engine;

  void apply(RunConfig& config) const;
};

struct RunReport {
  std::string command;
  std::string problem;
  std::string mode;
  std::uint64_t seed = 0;
  int episodes = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  design::Histogram histogram;
  std::optional<bool> batch_identical_designs;  // batch mode only
  std::filesystem::path trace;
  std::filesystem::path policy_checkpoint;
  std::filesystem::path q_checkpoint;
  std::filesystem::path episodes_csv;
  std::filesystem::path histogram_csv;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;

  void write_json(const std::filesystem::path& path) const;
  static RunReport read_json(const std::filesystem::path& path);
};

/// episode,k,d_0..,y_0..,g_k,total. Rows k = 0..N-1 carry the stage reward;
/// the row k = N carries the terminal reward with empty design and observation.
void write_episodes_csv(const std::filesystem::path& path, const std::vector<Episode>& episodes, int design_dim,
                        int obs_dim);
/// bin_lo,bin_hi,count
void write_histogram_csv(const std::filesystem::path& path, const design::Histogram& histogram);

/// True when every episode used the same design at each stage.
bool designs_identical_per_stage(const std::vector<Episode>& episodes);

RunReport cmd_train(const RunConfig& config, std::ostream& log);
RunReport cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, std::optional<int> episodes,
                   std::ostream& log);

struct ComparisonRow {
  std::string label;
  double mean = 0.0;
  double standard_error = 0.0;
};
struct PairwiseDifference {
  std::string a;
  std::string b;
  double difference = 0.0;        // mean(a) - mean(b)
  double combined_se = 0.0;       // sqrt(se_a^2 + se_b^2)
};
struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<PairwiseDifference> pairs;
};

/// Needs at least two reports; ConfigError otherwise.
Comparison cmd_compare(const std::vector<std::filesystem::path>& reports, const std::optional<std::filesystem::path>& out,
                       std::ostream& log);

struct SurrogateSummary {
  std::vector<double> train_mse;
  std::vector<double> test_mse;
  double fv_seconds_per_query = 0.0;
  double surrogate_seconds_per_query = 0.0;
  double speedup() const { return fv_seconds_per_query / surrogate_seconds_per_query; }
};

/// Builds the dataset with the finite-volume solver, fits the networks and
/// writes surrogate.json, dataset.csv and surrogate_report.json.
SurrogateSummary cmd_surrogate(const RunConfig& config, std::ostream& log);

/// Solves the PDE at theta (default: prior mean) and writes one CSV of cell
/// values per experiment time (x,y,c) plus fields.json with the masses.
void cmd_fv_dump(const RunConfig& config, const std::optional<std::vector<double>>& theta, std::ostream& log);

}  // namespace seqoed::cli
