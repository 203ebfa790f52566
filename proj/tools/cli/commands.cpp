#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <nlohmann/json.hpp>

#include "seqoed/models/fv_solver.hpp"
#include "seqoed/nnet.hpp"
#include "seqoed/parallel.hpp"

namespace seqoed::cli {

using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(17);
  return os;
}

void write_json_file(const fs::path& path, const Json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

Json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(is);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string rel(const fs::path& p, const fs::path& base) { return p.empty() ? "" : p.lexically_relative(base).string(); }

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

void finish_eval(RunReport& report, const RunConfig& config, const ProblemSpec& problem,
                 const design::Policy& policy, int n, std::ostream& log) {
  const auto t0 = Clock::now();
  report.episodes = n;
  std::vector<Episode> episodes;
  if (n > 0) {
    design::EvalOptions opt;
    opt.threads = config.threads;
    auto ev = design::evaluate_policy(policy, problem, n, config.seed, opt);
    report.mean = ev.mean;
    report.standard_error = ev.standard_error;
    report.histogram = std::move(ev.histogram);
    episodes = std::move(ev.episodes);
  }
  report.eval_seconds = seconds_since(t0);
  if (config.mode == design::DesignMode::batch) report.batch_identical_designs = designs_identical_per_stage(episodes);
  report.episodes_csv = config.output_dir / "episodes.csv";
  report.histogram_csv = config.output_dir / "histogram.csv";
  write_episodes_csv(report.episodes_csv, episodes, problem.design_dim, problem.obs_dim);
  write_histogram_csv(report.histogram_csv, report.histogram);
  log << "eval: " << n << " episodes, mean " << report.mean << " +- " << report.standard_error << '\n';
}

RunReport base_report(const std::string& command, const RunConfig& config) {
  RunReport r;
  r.command = command;
  r.problem = config.problem;
  r.mode = design::to_string(config.mode);
  r.seed = config.seed;
  return r;
}

}  // namespace

void Overrides::apply(RunConfig& config) const {
  if (seed) {
    config.seed = *seed;
    config.train.seed = *seed;
  }
  if (threads) {
    if (*threads < 0) throw ConfigError("--threads must be >= 0");
    config.threads = *threads;
  }
  if (out) config.output_dir = *out;
  if (engine) {
    if (*engine == models::Engine::surrogate && !config.is_source_problem()) {
      throw ConfigError("--engine surrogate applies to source-inversion problems only");
    }
    config.engine = *engine;
  }
  config.train.threads = config.threads;
}

// --- report I/O -------------------------------------------------------------

void RunReport::write_json(const fs::path& path) const {
  const fs::path base = path.parent_path();
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  j["problem"] = problem;
  j["mode"] = mode;
  j["seed"] = seed;
  j["episodes"] = episodes;
  j["mean"] = mean;
  j["standard_error"] = standard_error;
  j["histogram"] = {{"edges", histogram.edges}, {"counts", histogram.counts}};
  if (batch_identical_designs) j["batch_identical_designs"] = *batch_identical_designs;
  j["files"] = {{"trace", rel(trace, base)},
                {"policy_checkpoint", rel(policy_checkpoint, base)},
                {"q_checkpoint", rel(q_checkpoint, base)},
                {"episodes", rel(episodes_csv, base)},
                {"histogram", rel(histogram_csv, base)}};
  j["timings"] = {{"train_seconds", train_seconds}, {"eval_seconds", eval_seconds}};
  write_json_file(path, j);
}

RunReport RunReport::read_json(const fs::path& path) {
  const Json j = read_json_file(path);
  RunReport r;
  try {
    r.command = j.at("command").get<std::string>();
    r.problem = j.at("problem").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.episodes = j.at("episodes").get<int>();
    r.mean = j.at("mean").get<double>();
    r.standard_error = j.at("standard_error").get<double>();
    r.histogram.edges = j.at("histogram").at("edges").get<std::vector<double>>();
    r.histogram.counts = j.at("histogram").at("counts").get<std::vector<int>>();
    if (j.contains("batch_identical_designs")) r.batch_identical_designs = j.at("batch_identical_designs").get<bool>();
    const fs::path base = path.parent_path();
    auto file = [&](const char* key) {
      const auto s = j.at("files").at(key).get<std::string>();
      return s.empty() ? fs::path{} : base / s;
    };
    r.trace = file("trace");
    r.policy_checkpoint = file("policy_checkpoint");
    r.q_checkpoint = file("q_checkpoint");
    r.episodes_csv = file("episodes");
    r.histogram_csv = file("histogram");
    r.train_seconds = j.at("timings").at("train_seconds").get<double>();
    r.eval_seconds = j.at("timings").at("eval_seconds").get<double>();
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": not a run report (" + e.what() + ")");
  }
  return r;
}

void write_episodes_csv(const fs::path& path, const std::vector<Episode>& episodes, int design_dim, int obs_dim) {
  auto os = open_out(path);
  os << "episode,k";
  for (int j = 0; j < design_dim; ++j) os << ",d_" << j;
  for (int j = 0; j < obs_dim; ++j) os << ",y_" << j;
  os << ",g_k,total\n";
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& e = episodes[i];
    const double total = e.total_reward();
    for (std::size_t k = 0; k < e.designs.size(); ++k) {
      os << i << ',' << k;
      for (int j = 0; j < design_dim; ++j) os << ',' << e.designs[k][j];
      for (int j = 0; j < obs_dim; ++j) os << ',' << e.observations[k][j];
      os << ',' << e.stage_rewards[k] << ',' << total << '\n';
    }
    os << i << ',' << e.designs.size();
    for (int j = 0; j < design_dim + obs_dim; ++j) os << ',';
    os << ',' << e.terminal_reward << ',' << total << '\n';
  }
}

void write_histogram_csv(const fs::path& path, const design::Histogram& h) {
  auto os = open_out(path);
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
  }
}

bool designs_identical_per_stage(const std::vector<Episode>& episodes) {
  if (episodes.empty()) return true;
  const auto& ref = episodes.front().designs;
  for (const auto& e : episodes) {
    if (e.designs.size() != ref.size()) return false;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      if (e.designs[k].size() != ref[k].size()) return false;
      for (Eigen::Index j = 0; j < ref[k].size(); ++j) {
        if (e.designs[k][j] != ref[k][j]) return false;  // bitwise, on purpose
      }
    }
  }
  return true;
}

// --- train / eval -------------------------------------------------------------

RunReport cmd_train(const RunConfig& config, std::ostream& log) {
  prepare_dir(config.output_dir);
  const ProblemSpec problem = build_problem(config);
  design::TrainConfig tc = config.train;
  tc.mode = config.mode;
  tc.seed = config.seed;
  tc.threads = config.threads;

  RunReport report = base_report("train", config);
  const auto t0 = Clock::now();
  auto progress = [&](const design::TraceRow& row, const design::Policy&) {
    if (row.iter % 10 == 0 || row.iter + 1 == tc.iterations) {
      log << "iter " << row.iter << ": U_hat " << row.u_hat << ", q_loss " << row.q_loss << ", grad_norm "
          << row.grad_norm << (row.alpha_halved ? " (alpha halved)" : "") << '\n';
    }
  };
  const auto result = design::train(tc, problem, progress);
  report.train_seconds = seconds_since(t0);

  report.trace = config.output_dir / "trace.csv";
  result.trace.write_csv(report.trace);
  report.policy_checkpoint = config.output_dir / "policy.json";
  report.q_checkpoint = config.output_dir / "qnet.json";
  nnet::save_checkpoint(report.policy_checkpoint, {"policy", result.policy.net, result.policy.encoder});
  nnet::save_checkpoint(report.q_checkpoint, {"q", result.qnet, result.q_spec});

  finish_eval(report, config, problem, result.policy, config.eval_episodes, log);
  report.write_json(config.output_dir / "report.json");
  return report;
}

RunReport cmd_eval(const RunConfig& config, const fs::path& checkpoint, std::optional<int> episodes,
                   std::ostream& log) {
  const int n = episodes.value_or(config.eval_episodes);
  if (n < 0) throw ConfigError("--episodes must be >= 0");
  prepare_dir(config.output_dir);
  const ProblemSpec problem = build_problem(config);
  const auto ck = nnet::load_checkpoint(checkpoint);
  const auto expected = design::policy_encoder(problem, config.mode);
  if (!(ck.encoder == expected) || ck.net.input_size() != expected.length() ||
      ck.net.output_size() != problem.design_dim) {
    throw ArchMismatch("checkpoint " + checkpoint.string() + " does not fit problem '" + config.problem +
                       "' in mode " + design::to_string(config.mode));
  }
  design::Policy policy;
  policy.net = ck.net;
  policy.encoder = ck.encoder;

  RunReport report = base_report("eval", config);
  report.policy_checkpoint = checkpoint;
  finish_eval(report, config, problem, policy, n, log);
  report.write_json(config.output_dir / "report.json");
  return report;
}

// --- compare --------------------------------------------------------------------

Comparison cmd_compare(const std::vector<fs::path>& reports, const std::optional<fs::path>& out, std::ostream& log) {
  if (reports.size() < 2) throw ConfigError("compare needs at least two reports");
  Comparison c;
  for (const auto& p : reports) {
    const auto r = RunReport::read_json(p);
    c.rows.push_back({r.problem + "/" + r.mode + " (" + p.parent_path().filename().string() + ")", r.mean,
                      r.standard_error});
  }
  for (std::size_t a = 0; a < c.rows.size(); ++a) {
    for (std::size_t b = a + 1; b < c.rows.size(); ++b) {
      const auto& ra = c.rows[a];
      const auto& rb = c.rows[b];
      c.pairs.push_back({ra.label, rb.label, ra.mean - rb.mean,
                         std::sqrt(ra.standard_error * ra.standard_error + rb.standard_error * rb.standard_error)});
    }
  }

  log << std::fixed << std::setprecision(4);
  for (const auto& r : c.rows) log << r.label << ": " << r.mean << " +- " << r.standard_error << '\n';
  for (const auto& p : c.pairs) {
    log << p.a << " - " << p.b << ": " << p.difference << " (combined SE " << p.combined_se << ")\n";
  }
  log << std::defaultfloat;

  if (out) {
    prepare_dir(*out);
    Json j;
    j["schema_version"] = kSchemaVersion;
    for (const auto& r : c.rows) j["rows"].push_back({{"label", r.label}, {"mean", r.mean}, {"standard_error", r.standard_error}});
    for (const auto& p : c.pairs) {
      j["pairs"].push_back({{"a", p.a}, {"b", p.b}, {"difference", p.difference}, {"combined_se", p.combined_se}});
    }
    write_json_file(*out / "comparison.json", j);
    auto os = open_out(*out / "comparison.csv");
    os << "label,mean,standard_error\n";
    for (const auto& r : c.rows) os << '"' << r.label << "\"," << r.mean << ',' << r.standard_error << '\n';
  }
  return c;
}

// --- surrogate --------------------------------------------------------------------

SurrogateSummary cmd_surrogate(const RunConfig& config, std::ostream& log) {
  if (!config.is_source_problem()) throw ConfigError("surrogate: problem must be a source-inversion case");
  prepare_dir(config.output_dir);
  const models::CaseConfig cc = case_for(config);
  const auto grid = models::make_fv_grid(cc.z_lo, cc.z_hi, cc.velocity, config.solver_profile);
  const models::SourceInversionModel fv(cc, grid, models::Engine::fv, nullptr, config.threads);

  Rng rng = substream(config.seed, "surrogate");
  const auto t0 = Clock::now();
  const auto fit = models::train_surrogate(fv, config.surrogate, rng, config.threads);
  log << "surrogate: fitted in " << seconds_since(t0) << " s\n";
  fit.model.save(config.output_dir / "surrogate.json");
  models::write_surrogate_dataset_csv(config.output_dir / "dataset.csv", fit.dataset);

  SurrogateSummary s;
  s.train_mse = fit.report.train_mse;
  s.test_mse = fit.report.test_mse;

  // Per-query cost: a direct solve for a fresh theta versus one network call.
  Rng qrng = substream(config.seed, "surrogate-timing");
  const auto prior = cc.prior();
  const Box region = cc.sensor_region();
  constexpr int kSolves = 3;
  std::vector<Vector> thetas;
  for (int i = 0; i < kSolves; ++i) thetas.push_back(inference::sample_prior(prior, qrng));
  const Vector pos = 0.5 * (region.lo + region.hi);
  double sink = 0.0;
  auto t1 = Clock::now();
  for (const auto& th : thetas) sink += fv.solve_fields(th).back().at(pos[0], pos[1]);
  s.fv_seconds_per_query = seconds_since(t1) / kSolves;
  constexpr int kQueries = 20000;
  t1 = Clock::now();
  for (int i = 0; i < kQueries; ++i) {
    sink += fit.model.predict(i % fit.model.stages(), pos, thetas[static_cast<std::size_t>(i % kSolves)]);
  }
  s.surrogate_seconds_per_query = seconds_since(t1) / kQueries;
  if (!std::isfinite(sink)) throw NumericalFailure("surrogate timing produced a non-finite value");

  Json j;
  j["schema_version"] = kSchemaVersion;
  j["problem"] = config.problem;
  j["seed"] = config.seed;
  j["train_mse"] = s.train_mse;
  j["test_mse"] = s.test_mse;
  j["train_samples"] = fit.report.train_samples;
  j["test_samples"] = fit.report.test_samples;
  j["fv_seconds_per_query"] = s.fv_seconds_per_query;
  j["surrogate_seconds_per_query"] = s.surrogate_seconds_per_query;
  j["speedup"] = s.speedup();
  j["files"] = {{"surrogate", "surrogate.json"}, {"dataset", "dataset.csv"}};
  write_json_file(config.output_dir / "surrogate_report.json", j);
  for (std::size_t k = 0; k < s.test_mse.size(); ++k) {
    log << "stage " << k << ": train MSE " << s.train_mse[k] << ", test MSE " << s.test_mse[k] << '\n';
  }
  log << "per-query speedup over the solver: " << s.speedup() << "x\n";
  return s;
}

// --- fv-dump -----------------------------------------------------------------------

void cmd_fv_dump(const RunConfig& config, const std::optional<std::vector<double>>& theta, std::ostream& log) {
  if (!config.is_source_problem()) throw ConfigError("fv-dump: problem must be a source-inversion case");
  prepare_dir(config.output_dir);
  const models::CaseConfig cc = case_for(config);
  const auto grid = models::make_fv_grid(cc.z_lo, cc.z_hi, cc.velocity, config.solver_profile);
  const models::SourceInversionModel fv(cc, grid, models::Engine::fv, nullptr, config.threads);

  Vector th(cc.theta_dim());
  if (theta) {
    if (static_cast<int>(theta->size()) != cc.theta_dim()) {
      throw ConfigError("--theta needs " + std::to_string(cc.theta_dim()) + " values");
    }
    for (int j = 0; j < th.size(); ++j) th[j] = (*theta)[static_cast<std::size_t>(j)];
  } else {
    const auto prior = cc.prior();
    for (int j = 0; j < th.size(); ++j) {
      const auto& p = prior[static_cast<std::size_t>(j)];
      th[j] = p.kind == PriorDim::Kind::uniform ? 0.5 * (p.a + p.b) : p.a;
    }
  }
  const auto fields = fv.solve_fields(th);
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["problem"] = config.problem;
  j["theta"] = std::vector<double>(th.data(), th.data() + th.size());
  j["dz"] = grid.dz;
  j["dt"] = grid.dt;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    const auto& f = fields[k];
    const std::string name = "field_t" + std::to_string(k) + ".csv";
    auto os = open_out(config.output_dir / name);
    os << "x,y,c\n";
    for (int jj = 0; jj < f.n(); ++jj) {
      for (int i = 0; i < f.n(); ++i) {
        os << grid.cell_center(i) << ',' << grid.cell_center(jj) << ',' << f(i, jj) << '\n';
      }
    }
    j["snapshots"].push_back({{"time", cc.times[k]}, {"file", name}, {"mass", f.mass()}});
  }
  write_json_file(config.output_dir / "fields.json", j);
  log << "fv-dump: " << fields.size() << " snapshots written to " << config.output_dir.string() << '\n';
}

}  // namespace seqoed::cli
