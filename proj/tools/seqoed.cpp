#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cli/commands.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3 };

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw seqoed::ConfigError("--theta: cannot parse '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace seqoed;
  CLI::App app{"Sequential optimal experimental design by policy gradient"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<std::string> engine;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    cmd->add_option("--seed", seed, "root seed; overrides the config");
    cmd->add_option("--threads", threads, "worker cap; 1 runs serially");
    cmd->add_option("--out", out, "output directory; overrides the config");
    cmd->add_option("--engine", engine, "forward model engine")->check(CLI::IsMember({"fv", "surrogate"}));
  };

  auto* train = app.add_subcommand("train", "train a policy, then evaluate it");
  add_common(train);

  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint without exploration");
  add_common(eval);
  std::string checkpoint;
  std::optional<int> episodes;
  eval->add_option("--checkpoint", checkpoint, "policy checkpoint from train")->required();
  eval->add_option("--episodes", episodes, "number of evaluation episodes; overrides the config");

  auto* compare = app.add_subcommand("compare", "tabulate run reports with pairwise differences");
  std::vector<std::string> reports;
  std::optional<std::string> compare_out;
  compare->add_option("reports", reports, "report.json files")->required();
  compare->add_option("--out", compare_out, "write comparison.json and comparison.csv here");

  auto* surrogate = app.add_subcommand("surrogate", "build a dataset with the solver and fit the surrogate");
  add_common(surrogate);

  auto* dump = app.add_subcommand("fv-dump", "write concentration snapshots at every experiment time");
  add_common(dump);
  std::optional<std::string> theta;
  dump->add_option("--theta", theta, "comma-separated source parameters (default: prior mean)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (compare->parsed()) {
      std::vector<std::filesystem::path> paths(reports.begin(), reports.end());
      std::optional<std::filesystem::path> dir;
      if (compare_out) dir = *compare_out;
      cli::cmd_compare(paths, dir, std::cout);
      return kOk;
    }

    cli::RunConfig config = cli::load_run_config(config_path);
    cli::Overrides ov;
    ov.seed = seed;
    ov.threads = threads;
    if (out) ov.out = std::filesystem::path(*out);
    if (engine) ov.engine = cli::parse_engine(*engine);
    ov.apply(config);

    if (train->parsed()) {
      const auto r = cli::cmd_train(config, std::cout);
      std::cout << "report: " << (config.output_dir / "report.json").string() << '\n';
      if (r.batch_identical_designs && !*r.batch_identical_designs) {
        std::cerr << "warning: batch designs differ across episodes\n";
      }
    } else if (eval->parsed()) {
      cli::cmd_eval(config, checkpoint, episodes, std::cout);
      std::cout << "report: " << (config.output_dir / "report.json").string() << '\n';
    } else if (surrogate->parsed()) {
      cli::cmd_surrogate(config, std::cout);
    } else if (dump->parsed()) {
      std::optional<std::vector<double>> th;
      if (theta) th = parse_list(*theta);
      cli::cmd_fv_dump(config, th, std::cout);
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ArchMismatch& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const ModelFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
