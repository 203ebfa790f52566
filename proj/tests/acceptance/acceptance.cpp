// Acceptance suite. Usage: seqoed_acceptance [criterion ...]; with no
// arguments every criterion runs. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli/commands.hpp"
#include "seqoed/design.hpp"
#include "seqoed/inference.hpp"
#include "seqoed/models/fv_solver.hpp"
#include "seqoed/models/linear_gaussian.hpp"
#include "seqoed/models/source_inversion.hpp"
#include "test_support.hpp"

using namespace seqoed;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using seqoed::test::v1;

namespace {

const fs::path kConfigDir = SEQOED_CONFIG_DIR;
const fs::path kRunDir = SEQOED_ACCEPTANCE_RUN_DIR;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [fail]");
  }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// --- 1 -------------------------------------------------------------------------

void benchmark_optimum(Outcome& out) {
  const auto t0 = Clock::now();
  const auto opt = models::lg_optimal_utility();
  double best = -1e300;
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 200; ++j) {
      const double d0 = 0.1 + 2.9 * i / 199.0;
      const double d1 = 0.1 + 2.9 * j / 199.0;
      best = std::max(best, models::lg_expected_utility_of_variance(1.0 / (1.0 / 9.0 + d0 * d0 + d1 * d1)));
    }
  }
  const double secs = seconds_since(t0);
  out.require(std::abs(opt.utility - 0.783) <= 1e-3, "U* = " + fmt("%.5f", opt.utility));
  out.require(std::abs(best - opt.utility) <= 1e-4, "grid search gap " + fmt("%.2e", std::abs(best - opt.utility)));
  out.require(secs < 1.0, "runtime " + fmt("%.3f s", secs));
}

// --- 2 -------------------------------------------------------------------------

void benchmark_training(Outcome& out) {
  const auto t0 = Clock::now();
  const cli::RunConfig rc = cli::load_run_config(kConfigDir / "benchmark.json");
  const ProblemSpec problem = cli::build_problem(rc);
  design::TrainConfig tc = rc.train;
  tc.mode = rc.mode;
  tc.seed = rc.seed;
  const double u_star = models::lg_optimal_utility().utility;
  const std::uint64_t eval_seed = 4242;
  auto eval = [&](const design::Policy& p) { return design::evaluate_policy(p, problem, 10000, eval_seed).mean; };

  design::TrainConfig untrained = tc;
  untrained.iterations = 0;
  const double resid0 = std::abs(u_star - eval(design::train(untrained, problem).policy));
  double resid30 = std::nan("");
  const auto result = design::train(tc, problem, [&](const design::TraceRow& row, const design::Policy& p) {
    if (row.iter + 1 == 30) resid30 = std::abs(u_star - eval(p));
  });
  const auto final_eval = design::evaluate_policy(result.policy, problem, 10000, eval_seed);
  out.require(final_eval.mean >= 0.755 && final_eval.mean <= 0.795,
              "U = " + fmt("%.4f", final_eval.mean) + " +- " + fmt("%.4f", final_eval.standard_error));
  out.require(resid0 / resid30 >= 100.0, "residual " + fmt("%.3g", resid0) + " -> " + fmt("%.3g", resid30) +
                                             " after 30 updates (x" + fmt("%.0f", resid0 / resid30) + ")");
  out.detail << "; runtime " << fmt("%.0f s", seconds_since(t0));
}

// --- 3 -------------------------------------------------------------------------

void mlp_finite_differences(Outcome& out) {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Rng rng = substream(31, "fd", {trial});
    std::uniform_int_distribution<int> width(2, 9);
    const int in = width(rng), outs = width(rng) % 3 + 1;
    std::vector<int> hidden(static_cast<std::size_t>(width(rng) % 3 + 1));
    for (int& h : hidden) h = width(rng);
    const nnet::Mlp net(nnet::make_arch(in, hidden, outs), rng);
    Eigen::MatrixXd x(in, 3), up(outs, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
    for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = standard_normal(rng);
    const Eigen::VectorXd analytic = nnet::mlp_grad(net, x, up).params.flatten();
    auto f = [&](const Eigen::VectorXd& w) {
      nnet::Mlp n = net;
      n.assign(w);
      return (up.array() * n.forward(x).array()).sum();
    };
    const Eigen::VectorXd w = net.flatten();
    Eigen::VectorXd fd(w.size());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      Eigen::VectorXd a = w, b = w;
      a[i] += h;
      b[i] -= h;
      fd[i] = (f(a) - f(b)) / (2 * h);
    }
    worst = std::max(worst, (analytic - fd).norm() / fd.norm());
  }
  out.require(worst <= 1e-5, "(a) max relative error " + fmt("%.2e", worst));
}

// Total reward of one frozen-noise episode when design `d` replaces the
// policy's choice at stage k; later stages follow the policy.
double frozen_return(const design::Policy& pol, const ProblemSpec& p, const inference::BeliefGrid& grid,
                     const Episode& ep, const design::EpisodeDraws& draws, int i, int k, double d) {
  State s = ep.states[static_cast<std::size_t>(k)];
  double total = 0.0;
  for (int l = 0; l < k; ++l) total += ep.stage_rewards[static_cast<std::size_t>(l)];
  const double theta = draws.theta[static_cast<std::size_t>(i)][0];
  for (int l = k; l < p.horizon; ++l) {
    const Vector dl = l == k ? v1(d) : pol.design(p, s);
    const Vector y = v1(theta * dl[0] + p.noise.sigma * draws.noise[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)][0]);
    total += design::stage_reward(p, s, dl, y);
    s = advance(p, s, dl, y);
  }
  return total + design::terminal_reward(p, grid, s.history);
}

void pathwise_policy_gradient(Outcome& out) {
  const ProblemSpec p = models::linear_gaussian_problem();
  const auto grid = inference::init_belief_grid(p.prior, 50);
  Rng rng = substream(32, "policy");
  design::Policy pol = design::Policy::create(p, design::DesignMode::soed, {16, 16}, rng);
  // Keep every design strictly inside the box so that the clamp is inactive.
  pol.net.weights.back() *= 0.1;
  pol.net.biases.back().setConstant(1.2);

  const int m = 200;
  const auto draws = design::draw_episodes(p, m, 33, 0);
  design::SimulationOptions opt;
  opt.grid = &grid;
  auto utility = [&](const design::Policy& q) {
    double s = 0.0;
    for (const auto& e : design::simulate_episodes(q, p, draws, 0.0, opt)) s += e.total_reward();
    return s / m;
  };
  const auto eps = design::simulate_episodes(pol, p, draws, 0.0, opt);
  double lo = 1e9, hi = -1e9;
  for (const auto& e : eps)
    for (const auto& d : e.designs) lo = std::min(lo, d[0]), hi = std::max(hi, d[0]);

  // Exact Q on the frozen set: the design derivative of the return-to-go.
  Eigen::MatrixXd dq(1, m * p.horizon);
  const double hd = 1e-5;
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < p.horizon; ++k) {
      const double d = eps[static_cast<std::size_t>(i)].designs[static_cast<std::size_t>(k)][0];
      dq(0, i * p.horizon + k) = (frozen_return(pol, p, grid, eps[static_cast<std::size_t>(i)], draws, i, k, d + hd) -
                                  frozen_return(pol, p, grid, eps[static_cast<std::size_t>(i)], draws, i, k, d - hd)) /
                                 (2 * hd);
    }
  }
  const Eigen::VectorXd g = design::policy_gradient_from_dq(pol, eps, dq).flatten();

  Rng dir_rng = substream(34, "direction");
  Eigen::VectorXd v(g.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = standard_normal(dir_rng);
  v.normalize();
  const double h = 1e-4;
  design::Policy a = pol, b = pol;
  a.net.assign(pol.net.flatten() + h * v);
  b.net.assign(pol.net.flatten() - h * v);
  const double fd = (utility(a) - utility(b)) / (2 * h);
  const double est = g.dot(v);
  const double rel = std::abs(est - fd) / std::abs(fd);
  out.require(lo > 0.1 && hi < 3.0, "designs in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "]");
  out.require(rel <= 0.05, "(b) estimate " + fmt("%.5g", est) + " vs pathwise " + fmt("%.5g", fd) + " (rel " +
                               fmt("%.2e", rel) + ")");
}

void gradient_fidelity(Outcome& out) {
  mlp_finite_differences(out);
  pathwise_policy_gradient(out);
}

// --- 4 -------------------------------------------------------------------------

struct Moments {
  double sum = 0.0, sq = 0.0;
  int n = 0;
  void add(double x) { sum += x, sq += x * x, ++n; }
  double mean() const { return sum / n; }
  double se() const { return std::sqrt(std::max(0.0, sq / n - mean() * mean()) / n); }
};

void kl_equivalence(Outcome& out) {
  const ProblemSpec p = models::linear_gaussian_problem();
  // Fine enough that the narrowest posterior (d = 3 twice) is resolved.
  const auto grid = inference::init_belief_grid(p.prior, 100);
  std::vector<std::pair<std::string, design::Policy>> policies;
  auto constant = [&](double d) {
    design::Policy pol;
    pol.encoder = design::policy_encoder(p, design::DesignMode::soed);
    pol.net = nnet::Mlp::zeros(nnet::make_arch(pol.encoder.length(), {4}, 1));
    pol.net.biases.back()[0] = d;
    return pol;
  };
  policies.emplace_back("d=0.5", constant(0.5));
  policies.emplace_back("d=3", constant(3.0));
  Rng rng = substream(41, "adaptive");
  design::Policy adaptive = design::Policy::create(p, design::DesignMode::soed, {16, 16}, rng);
  adaptive.net.biases.back()[0] = 1.5;
  policies.emplace_back("adaptive", adaptive);

  design::SimulationOptions opt;
  opt.grid = &grid;
  opt.incremental_kl = true;
  for (const auto& [name, pol] : policies) {
    const auto eps = design::simulate_episodes(pol, p, design::draw_episodes(p, 10000, 42, 0), 0.0, opt);
    Moments inc, term, exact;
    for (const auto& e : eps) {
      double s = 0.0;
      for (double kl : e.incremental_kl) s += kl;
      inc.add(s);
      term.add(inference::kl_divergence(inference::posterior_from_history(grid, p, e.states.back().history), grid));
      exact.add(std::log(3.0 / std::sqrt(models::lg_analytic_posterior(e.states.back().history).variance)));
    }
    const double z_inc = std::abs(inc.mean() - exact.mean()) / std::hypot(inc.se(), exact.se());
    const double z_term = std::abs(term.mean() - exact.mean()) / std::hypot(term.se(), exact.se());
    out.require(z_inc <= 3.0 && z_term <= 3.0, name + ": incremental " + fmt("%.4f", inc.mean()) + ", terminal " +
                                                    fmt("%.4f", term.mean()) + ", ln(s0/sN) " +
                                                    fmt("%.4f", exact.mean()) + " (" + fmt("%.2f", z_inc) + ", " +
                                                    fmt("%.2f", z_term) + " SE)");
  }
}

// --- 5 -------------------------------------------------------------------------

void inference_accuracy(Outcome& out) {
  const ProblemSpec p = models::linear_gaussian_problem();
  const auto prior = inference::init_belief_grid(p.prior, 50);
  double moment_err = 0.0, kl_err = 0.0;
  Rng rng = substream(51, "histories");
  std::uniform_real_distribution<double> dist(0.1, 1.5);
  std::vector<History> histories;
  History fixed(2);
  histories.push_back(fixed.append(v1(1), v1(3)));
  histories.push_back(histories.back().append(v1(1), v1(3)));
  for (int t = 0; t < 100; ++t) {
    const double theta = 3.0 * standard_normal(rng);
    History h(2);
    for (int k = 0; k < 2; ++k) {
      const double d = dist(rng);
      h = h.append(v1(d), v1(theta * d + standard_normal(rng)));
    }
    histories.push_back(h);
  }
  for (const auto& h : histories) {
    const auto a = models::lg_analytic_posterior(h);
    const auto g = inference::posterior_from_history(prior, p, h);
    moment_err = std::max({moment_err, std::abs(g.mean()[0] - a.mean), std::abs(g.covariance()(0, 0) - a.variance)});
    kl_err = std::max(kl_err, std::abs(inference::kl_divergence(g, prior) -
                                       test::gaussian_kl(a.mean, a.variance, 0.0, 9.0)));
  }
  out.require(moment_err <= 1e-3, "max moment error " + fmt("%.2e", moment_err));
  out.require(kl_err <= 1e-3, "max KL error " + fmt("%.2e", kl_err));
}

// --- 6 -------------------------------------------------------------------------

models::Field gaussian_bump(int n, double dz) {
  models::Field f(n, 0.0, dz);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = (i + 0.5) * dz, y = (j + 0.5) * dz;
      f(i, j) = std::exp(-((x - 0.4) * (x - 0.4) + (y - 0.45) * (y - 0.45)) / (2 * 0.08 * 0.08));
    }
  }
  return f;
}

models::Field convect_diffuse(int n) {
  models::FvGridSpec g;
  g.dz = 1.0 / n;
  g.dt = 5e-5;
  g.velocity = RampVelocity{20.0, 20.0};
  const models::FvSolver s(g);
  const auto init = gaussian_bump(n, g.dz);
  const double t[] = {0.05};
  return s.solve(&init, nullptr, [](double) { return 0.0; }, t)[0];
}

void pde_solver(Outcome& out) {
  // Conservation, step by step.
  {
    models::FvGridSpec g;
    const models::FvSolver s(g);
    const auto init = gaussian_bump(g.cells(), g.dz);
    std::vector<double> times;
    for (int k = 1; k <= 100; ++k) times.push_back(k * g.dt);
    const auto fields = s.solve(&init, nullptr, nullptr, times);
    double worst = 0.0, prev = init.mass();
    for (const auto& f : fields) {
      worst = std::max(worst, std::abs(f.mass() - prev));
      prev = f.mass();
    }
    out.require(worst <= 1e-10, "mass drift per step " + fmt("%.1e", worst));
  }
  // Source mass growth before the plume reaches the walls.
  {
    models::FvGridSpec g;
    g.dz = 0.01;
    g.dt = 5e-4;
    const models::FvSolver s(g);
    models::SourceParams src;
    src.strength = 2.0;
    const double t[] = {0.01, 0.02};
    const auto fields = s.solve(src, t);
    double worst = 0.0;
    for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(fields[static_cast<std::size_t>(k)].mass() / (2.0 * t[k]) - 1.0));
    out.require(worst <= 0.01, "source mass error " + fmt("%.2e", worst));
  }
  // Richardson: each level against a reference with a quarter of the cell size.
  {
    std::vector<double> errors;
    for (int n : {20, 40, 80}) {
      const auto f = convect_diffuse(n);
      const auto ref = convect_diffuse(4 * n);
      double e = 0.0;
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          double avg = 0.0;
          for (int b = 0; b < 4; ++b)
            for (int c = 0; c < 4; ++c) avg += ref(4 * i + c, 4 * j + b);
          e += std::pow(f(i, j) - avg / 16.0, 2);
        }
      }
      errors.push_back(std::sqrt(e / (n * n)));
    }
    const double o1 = std::log2(errors[0] / errors[1]);
    const double o2 = std::log2(errors[1] / errors[2]);
    out.require(std::min(o1, o2) >= 1.9, "convergence orders " + fmt("%.2f", o1) + ", " + fmt("%.2f", o2));
  }
  // One desk-profile solve of case 2.
  {
    const auto cfg = models::case_config(2);
    const models::FvSolver s(models::make_fv_grid(cfg.z_lo, cfg.z_hi, cfg.velocity, models::SolverProfile::desk));
    models::SourceParams src;
    const auto t0 = Clock::now();
    s.solve(src, cfg.times);
    const double secs = seconds_since(t0);
    out.require(secs < 5.0, "desk solve " + fmt("%.3f s", secs));
  }
}

// --- 7 -------------------------------------------------------------------------

cli::RunReport run_case(const std::string& name) {
  cli::RunConfig c = cli::load_run_config(kConfigDir / (name + ".json"));
  c.output_dir = kRunDir / name;
  std::ostringstream log;
  const auto t0 = Clock::now();
  auto r = cli::cmd_train(c, log);
  std::cout << "  " << name << ": " << fmt("%.4f", r.mean) << " +- " << fmt("%.4f", r.standard_error) << " ("
            << fmt("%.0f s", seconds_since(t0)) << ")" << std::endl;
  return r;
}

std::string gap(const cli::RunReport& a, const cli::RunReport& b, double* z) {
  *z = (a.mean - b.mean) / std::hypot(a.standard_error, b.standard_error);
  return a.mode + " - " + b.mode + " = " + fmt("%.4f", a.mean - b.mean) + " (" + fmt("%.1f", *z) + " SE)";
}

void design_mode_orderings(Outcome& out) {
  double z = 0.0;
  {
    const auto s = run_case("case1_soed"), g = run_case("case1_greedy");
    const auto txt = gap(s, g, &z);
    out.require(z > 2.0, "case 1 " + txt);
  }
  {
    const auto s = run_case("case2_soed"), g = run_case("case2_greedy"), b = run_case("case2_batch");
    auto txt = gap(s, g, &z);
    out.require(z > 2.0, "case 2 " + txt);
    txt = gap(s, b, &z);
    out.require(z > 2.0, "case 2 " + txt);
  }
  {
    const auto s = run_case("case3_soed"), g = run_case("case3_greedy"), b = run_case("case3_batch");
    auto txt = gap(s, g, &z);
    out.require(z >= -2.0, "case 3 " + txt);
    txt = gap(s, b, &z);
    out.require(z >= -2.0, "case 3 " + txt);
    out.require(b.batch_identical_designs.value_or(false), "case 3 batch designs identical");
  }
}

// --- 8 -------------------------------------------------------------------------

void reduction_invariants(Outcome& out) {
  // Batch: a briefly trained case-2 policy and an untrained benchmark policy.
  {
    const ProblemSpec p = models::source_inversion_problem(models::case_config(2), models::SolverProfile::desk);
    design::TrainConfig tc = cli::default_train_config("source_case2");
    tc.mode = design::DesignMode::batch;
    tc.iterations = 3;
    tc.episodes = 100;
    const auto r = design::train(tc, p);
    const auto ev = design::evaluate_policy(r.policy, p, 2000, 81);
    out.require(cli::designs_identical_per_stage(ev.episodes), "case 2 batch designs identical over 2000 episodes");

    const ProblemSpec lg = models::linear_gaussian_problem();
    Rng rng = substream(82, "batch");
    const auto pol = design::Policy::create(lg, design::DesignMode::batch, {80, 80}, rng);
    const auto ev2 = design::evaluate_policy(pol, lg, 2000, 83);
    out.require(cli::designs_identical_per_stage(ev2.episodes), "benchmark batch designs identical");
  }
  // Greedy: inspect every Q-target on a 2-stage problem.
  {
    const ProblemSpec p = models::linear_gaussian_problem();
    const auto grid = inference::init_belief_grid(p.prior, 50);
    Rng rng = substream(84, "greedy");
    const auto pol = design::Policy::create(p, design::DesignMode::greedy, {80, 80}, rng);
    const nnet::Mlp q(nnet::make_arch(design::q_encoder(p).length(), {80, 80}, 1), rng);
    design::SimulationOptions opt;
    opt.grid = &grid;
    opt.incremental_kl = true;
    const auto eps = design::simulate_episodes(pol, p, design::draw_episodes(p, 500, 85, 0), 0.2, opt);
    const auto batch = design::make_q_batch(pol, design::q_encoder(p), p, eps, design::DesignMode::greedy);
    const auto targets = design::q_targets(q, batch);
    int bad = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const int k = static_cast<int>(r % 2);
      const auto& e = eps[r / 2];
      const auto& t = targets[r];
      const double g_k = e.stage_rewards[static_cast<std::size_t>(k)] + e.incremental_kl[static_cast<std::size_t>(k)];
      if (t.bootstrapped || t.first_reward_stage != k || t.last_reward_stage != k || t.value != g_k) ++bad;
    }
    out.require(bad == 0, std::to_string(targets.size()) + " greedy targets, " + std::to_string(bad) +
                              " with terms beyond their stage");
  }
}

// --- 9 -------------------------------------------------------------------------

void surrogate_accuracy(Outcome& out) {
  cli::RunConfig c = cli::load_run_config(kConfigDir / "case2_surrogate.json");
  c.output_dir = kRunDir / "case2_surrogate";
  std::ostringstream log;
  const auto t0 = Clock::now();
  const auto s = cli::cmd_surrogate(c, log);
  double worst = 0.0;
  for (double m : s.test_mse) worst = std::max(worst, m);
  out.require(worst <= 1e-5, "test MSE " + fmt("%.2e", worst));
  out.require(s.speedup() >= 1e3, "speedup x" + fmt("%.3g", s.speedup()));
  out.detail << "; runtime " << fmt("%.0f s", seconds_since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {1, {"benchmark optimum", benchmark_optimum}},
      {2, {"benchmark training", benchmark_training}},
      {3, {"gradient fidelity", gradient_fidelity}},
      {4, {"incremental/terminal KL equivalence", kl_equivalence}},
      {5, {"inference accuracy", inference_accuracy}},
      {6, {"PDE solver", pde_solver}},
      {7, {"design-mode orderings", design_mode_orderings}},
      {8, {"batch and greedy reductions", reduction_invariants}},
      {9, {"surrogate", surrogate_accuracy}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (!criteria.count(id)) {
      std::cerr << "unknown criterion " << argv[i] << " (expected 1-9)\n";
      return 2;
    }
    selected.push_back(id);
  }
  if (selected.empty())
    for (const auto& [id, _] : criteria) selected.push_back(id);

  fs::create_directories(kRunDir);
  int failures = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << (o.detail.tellp() > 0 ? "; " : "") << "error: " << e.what();
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << " (" << name << "): " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail.str()
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
