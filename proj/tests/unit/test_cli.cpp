#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cli/commands.hpp"

using namespace seqoed;
using namespace seqoed::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "seqoed-unit-cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunConfig small_benchmark(const fs::path& out) {
  RunConfig c = parse_run_config(R"({
    "schema_version": 1, "problem": "linear_gaussian", "seed": 3,
    "train": {"iterations": 2, "episodes": 40, "q_fit_steps": 5},
    "grid": {"train_nodes": 20, "eval_nodes": 20},
    "eval_episodes": 60
  })");
  c.output_dir = out;
  return c;
}

// Mean of the per-episode totals in episodes.csv (one value per episode).
double mean_from_episodes_csv(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  std::map<long, double> totals;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    totals[std::stol(cells.front())] = std::stod(cells.back());
  }
  double s = 0.0;
  for (const auto& [_, t] : totals) s += t;
  return totals.empty() ? 0.0 : s / static_cast<double>(totals.size());
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("minimal config and defaults") {
    const RunConfig c = parse_run_config(R"({"schema_version": 1, "problem": "source_case2", "seed": 7})");
    CHECK(c.seed == 7);
    CHECK(c.mode == design::DesignMode::soed);
    CHECK(c.solver_profile == models::SolverProfile::desk);
    CHECK(c.eval_episodes == 10000);
    CHECK(c.train.optimizer == default_train_config("source_case2").optimizer);
  }

  TEST_CASE("config errors name the field") {
    CHECK(error_of(R"({"schema_version": 1, "problem": "linear_gaussian"})").find("seed") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "problem": "linear_gaussian", "seed": 1, "sead": 2})").find("sead") !=
          std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "problem": "linear_gaussian", "seed": 1, "train": {"alpah": 1}})")
              .find("train.alpah") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "problem": "linear_gaussian", "seed": 1, "mode": "x"})").find("mode") !=
          std::string::npos);
    CHECK(error_of(R"({"schema_version": 2, "problem": "linear_gaussian", "seed": 1})").find("schema_version") !=
          std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "problem": "source_case9", "seed": 1})").find("problem") !=
          std::string::npos);
    CHECK(error_of("{\n  \"schema_version\": 1,\n  \"seed\": 1 oops\n}").find("line 3") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "problem": "custom", "seed": 1, "custom_file": "/nonexistent.json"})")
              .find("custom_file") != std::string::npos);
  }

  TEST_CASE("command-line overrides") {
    RunConfig c = parse_run_config(R"({"schema_version": 1, "problem": "linear_gaussian", "seed": 1})");
    Overrides o;
    o.seed = 9;
    o.threads = 1;
    o.out = "elsewhere";
    o.apply(c);
    CHECK(c.seed == 9);
    CHECK(c.threads == 1);
    CHECK(c.output_dir == "elsewhere");
  }

  TEST_CASE("custom case files") {
    const auto dir = scratch("custom");
    std::ofstream(dir / "case.json") << R"({
      "name": "tiny", "horizon": 1,
      "prior_x": {"kind": "uniform", "lo": 0.2, "hi": 0.8},
      "prior_y": {"kind": "uniform", "lo": 0.2, "hi": 0.8},
      "constraint": {"kind": "box", "lo": [-0.2, -0.2], "hi": [0.2, 0.2]},
      "domain": [0, 1], "times": [0.1], "noise_sigma": 0.1,
      "cost": {"kind": "squared_norm", "coefficient": 0.1}
    })";
    const auto cfg = load_case_file(dir / "case.json");
    CHECK(cfg.name == "tiny");
    CHECK(cfg.horizon == 1);
    CHECK(cfg.prior_x.a == 0.2);
    std::ofstream(dir / "bad.json") << R"({"name": "tiny", "horizon": 1, "colour": 3})";
    CHECK_THROWS_AS(load_case_file(dir / "bad.json"), ConfigError);
  }

  TEST_CASE("train, eval and compare on a small benchmark") {
    const auto dir = scratch("run");
    std::ostringstream log;
    const RunConfig cfg = small_benchmark(dir / "train");
    const RunReport r = cmd_train(cfg, log);
    CHECK(r.episodes == 60);
    CHECK(fs::exists(dir / "train" / "trace.csv"));
    CHECK(fs::exists(dir / "train" / "policy.json"));
    CHECK(mean_from_episodes_csv(dir / "train" / "episodes.csv") == doctest::Approx(r.mean).epsilon(1e-9));

    const RunReport back = RunReport::read_json(dir / "train" / "report.json");
    CHECK(back.mean == r.mean);
    CHECK(back.standard_error == r.standard_error);
    CHECK(back.histogram.counts == r.histogram.counts);
    CHECK(fs::equivalent(back.policy_checkpoint, r.policy_checkpoint));

    RunConfig e1 = cfg, e2 = cfg;
    e1.output_dir = dir / "e1";
    e2.output_dir = dir / "e2";
    const auto a = cmd_eval(e1, r.policy_checkpoint, std::nullopt, log);
    const auto b = cmd_eval(e2, r.policy_checkpoint, std::nullopt, log);
    CHECK(a.mean == r.mean);
    CHECK(read_file(dir / "e1" / "episodes.csv") == read_file(dir / "e2" / "episodes.csv"));

    const auto cmp = cmd_compare({dir / "e1" / "report.json", dir / "e2" / "report.json"}, dir / "cmp", log);
    REQUIRE(cmp.pairs.size() == 1);
    CHECK(cmp.pairs[0].difference == 0.0);
    CHECK(fs::exists(dir / "cmp" / "comparison.csv"));
    CHECK_THROWS_AS(cmd_compare({dir / "e1" / "report.json"}, std::nullopt, log), ConfigError);

    RunConfig z = cfg;
    z.output_dir = dir / "zero";
    const auto empty = cmd_eval(z, r.policy_checkpoint, 0, log);
    CHECK(empty.episodes == 0);

    RunConfig wrong = cfg;
    wrong.output_dir = dir / "wrong";
    wrong.mode = design::DesignMode::batch;
    CHECK_THROWS_AS(cmd_eval(wrong, r.policy_checkpoint, 5, log), ArchMismatch);
  }

  TEST_CASE("batch designs per stage") {
    Episode a, b;
    a.designs = {Vector::Constant(1, 0.5), Vector::Constant(1, 1.0)};
    b.designs = a.designs;
    CHECK(designs_identical_per_stage({a, b}));
    b.designs[1][0] = std::nextafter(1.0, 2.0);
    CHECK(!designs_identical_per_stage({a, b}));
  }
}
