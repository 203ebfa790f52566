#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "seqoed/core.hpp"
#include "seqoed/design.hpp"
#include "seqoed/models/source_inversion.hpp"
#include "seqoed/models/surrogate.hpp"

namespace seqoed::cli {

inline constexpr int kSchemaVersion = 1;

/// One run, as read from a JSON config file. See README for the schema.
struct RunConfig {
  std::string problem;  // linear_gaussian | source_case1 | source_case2 | source_case3 | custom
  std::filesystem::path custom_file;  // problem == custom
  design::DesignMode mode = design::DesignMode::soed;
  design::TrainConfig train;
  std::optional<int> train_grid_nodes;
  std::optional<int> eval_grid_nodes;
  models::Engine engine = models::Engine::fv;
  std::filesystem::path surrogate_path;
  models::SolverProfile solver_profile = models::SolverProfile::desk;
  int eval_episodes = 10000;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "seqoed-out";
  int threads = 0;
  models::SurrogateTrainOptions surrogate;

  bool is_source_problem() const { return problem != "linear_gaussian"; }
};

/// Training defaults for a problem before the config's "train" block is applied.
design::TrainConfig default_train_config(const std::string& problem);

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Throws ConfigError naming the offending field; unknown keys are errors.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Source-inversion case description for problem == custom.
models::CaseConfig load_case_file(const std::filesystem::path& path);

models::CaseConfig case_for(const RunConfig& config);
ProblemSpec build_problem(const RunConfig& config);

std::string to_string(models::Engine engine);
models::Engine parse_engine(const std::string& name);

}  // namespace seqoed::cli
