#include "seqoed/design.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "seqoed/parallel.hpp"

namespace seqoed::design {

std::string to_string(DesignMode mode) {
  switch (mode) {
    case DesignMode::soed: return "soed";
    case DesignMode::batch: return "batch";
    case DesignMode::greedy: return "greedy";
  }
  return "soed";
}

DesignMode parse_mode(const std::string& name) {
  if (name == "soed") return DesignMode::soed;
  if (name == "batch") return DesignMode::batch;
  if (name == "greedy") return DesignMode::greedy;
  throw ConfigError("unknown design mode '" + name + "' (expected soed, batch or greedy)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train: " + what); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (episodes < 1) fail("episodes must be >= 1");
  if (!(alpha > 0.0)) fail("alpha must be positive");
  if (!(sigma_explore >= 0.0)) fail("sigma_explore must be >= 0");
  if (!(explore_decay > 0.0 && explore_decay <= 1.0)) fail("explore_decay must lie in (0, 1]");
  if (!(alpha_decay > 0.0 && alpha_decay <= 1.0)) fail("alpha_decay must lie in (0, 1]");
  if (q_fit.steps < 0) fail("q_fit.steps must be >= 0");
  if (!(max_grad_norm >= 0.0)) fail("max_grad_norm must be >= 0");
  if (!(q_fit.learning_rate > 0.0)) fail("q_fit.learning_rate must be positive");
  if (policy_hidden.empty() || q_hidden.empty()) fail("networks need at least one hidden layer");
  for (int h : policy_hidden)
    if (h < 1) fail("hidden layer sizes must be >= 1");
  for (int h : q_hidden)
    if (h < 1) fail("hidden layer sizes must be >= 1");
}

void TrainTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(10);
  os << "iter,U_hat,q_loss,grad_norm,sigma_explore,wall_ms\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << r.u_hat << ',' << r.q_loss << ',' << r.grad_norm << ',' << r.sigma_explore << ','
       << r.wall_ms << '\n';
  }
}

nnet::EncoderSpec q_encoder(const ProblemSpec& problem) {
  return {problem.horizon, problem.design_dim, problem.obs_dim, true, false};
}

nnet::EncoderSpec policy_encoder(const ProblemSpec& problem, DesignMode mode) {
  return {problem.horizon, problem.design_dim, problem.obs_dim, false, mode == DesignMode::batch};
}

Policy Policy::create(const ProblemSpec& problem, DesignMode mode, const std::vector<int>& hidden, Rng& rng) {
  Policy p;
  p.encoder = policy_encoder(problem, mode);
  p.net = nnet::Mlp(nnet::make_arch(p.encoder.length(), hidden, problem.design_dim), rng);
  return p;
}

Vector Policy::raw(const State& state) const {
  const Vector mu = net.forward(nnet::encode_policy_input(state.stage, state.history, encoder));
  if (!mu.allFinite()) {
    throw NonFinitePolicyOutput("policy output is not finite at stage " + std::to_string(state.stage));
  }
  return mu;
}

Vector Policy::design(const ProblemSpec& problem, const State& state) const {
  return clamp_design(raw(state), problem, state);
}

// --- rewards -------------------------------------------------------------

double stage_reward(const ProblemSpec& problem, const State& state, const Vector& design, const Vector&) {
  const auto& c = problem.cost;
  if (c.kind == CostSpec::Kind::none || c.coefficient == 0.0) return 0.0;
  double f = 0.0;
  if (c.kind == CostSpec::Kind::squared_norm) {
    f = design.squaredNorm();
  } else {
    const double t = problem.experiment_times.empty()
                         ? 0.0
                         : problem.experiment_times[static_cast<std::size_t>(state.stage)];
    f = design.norm() - std::numbers::sqrt2 / 40.0 * design.dot(c.wind.at(t));
  }
  return -c.coefficient * f;
}

double terminal_reward(const ProblemSpec& problem, const inference::BeliefGrid& posterior,
                       const inference::BeliefGrid& prior) {
  double g = inference::kl_divergence(posterior, prior);
  if (problem.terminal.kind == TerminalSpec::Kind::kl_variance_penalty) {
    const double var = posterior.covariance()(0, 0);
    const double r = std::log(var) - std::log(problem.terminal.penalty_target_variance);
    g -= problem.terminal.penalty_weight * r * r;
  }
  return g;
}

double terminal_reward(const ProblemSpec& problem, const inference::BeliefGrid& prior, const History& history) {
  return terminal_reward(problem, inference::posterior_from_history(prior, problem, history), prior);
}

// --- episodes ------------------------------------------------------------

namespace {

Vector normals(Rng& rng, int n) {
  Vector v(n);
  for (int j = 0; j < n; ++j) v[j] = standard_normal(rng);
  return v;
}

void allocate(EpisodeDraws& d, int count) {
  d.theta.resize(static_cast<std::size_t>(count));
  d.noise.resize(static_cast<std::size_t>(count));
  d.explore.resize(static_cast<std::size_t>(count));
}

}  // namespace

EpisodeDraws draw_episodes(const ProblemSpec& problem, int count, std::uint64_t root_seed, std::uint64_t stream) {
  EpisodeDraws d;
  d.root_seed = root_seed;
  d.stream = stream;
  allocate(d, count);
  for (int i = 0; i < count; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const auto si = static_cast<std::size_t>(i);
    Rng rp = substream(root_seed, "prior", {stream, ui});
    d.theta[si] = inference::sample_prior(problem.prior, rp);
    Rng rn = substream(root_seed, "noise", {stream, ui});
    Rng re = substream(root_seed, "explore", {stream, ui});
    for (int k = 0; k < problem.horizon; ++k) {
      d.noise[si].push_back(normals(rn, problem.obs_dim));
      d.explore[si].push_back(normals(re, problem.design_dim));
    }
  }
  return d;
}

EpisodeDraws draw_episodes(const ProblemSpec& problem, int count, Rng& rng) {
  EpisodeDraws d;
  d.root_seed = rng();
  d.stream = 0;
  allocate(d, count);
  for (int i = 0; i < count; ++i) {
    const auto si = static_cast<std::size_t>(i);
    d.theta[si] = inference::sample_prior(problem.prior, rng);
    for (int k = 0; k < problem.horizon; ++k) {
      d.noise[si].push_back(normals(rng, problem.obs_dim));
      d.explore[si].push_back(normals(rng, problem.design_dim));
    }
  }
  return d;
}

namespace {

Vector sample_from_grid(const inference::BeliefGrid& grid, Rng& rng) {
  const Eigen::VectorXd m = grid.masses();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng) * m.sum();
  Eigen::Index idx = m.size() - 1;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    u -= m[i];
    if (u <= 0.0) {
      idx = i;
      break;
    }
  }
  Vector theta = grid.nodes().col(idx);
  for (int j = 0; j < grid.dim(); ++j) {
    const auto& ax = grid.axes()[static_cast<std::size_t>(j)];
    theta[j] += (unit(rng) - 0.5) * (ax[1] - ax[0]);
  }
  return theta;
}

Episode simulate_one(const Policy& policy, const ProblemSpec& problem, const EpisodeDraws& draws, int i,
                     double sigma_explore, const SimulationOptions& opt) {
  const auto si = static_cast<std::size_t>(i);
  Episode ep;
  ep.theta_true = draws.theta[si];
  State s = initial_state(problem);
  ep.states.push_back(s);
  auto bound = problem.model->bind(ep.theta_true);
  Rng resample = substream(draws.root_seed, "resample", {draws.stream, static_cast<std::uint64_t>(i)});
  Eigen::VectorXd loglik;
  if (opt.resample_theta_per_stage) {
    if (!opt.grid) throw ConfigError("per-stage resampling needs a belief grid");
    loglik = Eigen::VectorXd::Zero(opt.grid->size());
  }
  for (int k = 0; k < problem.horizon; ++k) {
    // Perturb the feasible design rather than the raw output, so exploration
    // survives when the raw output has left the box.
    Vector d = policy.design(problem, s);
    if (sigma_explore > 0.0) {
      d = clamp_design(d + sigma_explore * draws.explore[si][static_cast<std::size_t>(k)], problem, s);
    }
    if (opt.resample_theta_per_stage) {
      bound = problem.model->bind(sample_from_grid(opt.grid->updated(loglik), resample));
    }
    const Vector g = bound->predict(d, s);
    Vector y(g.size());
    const Vector& z = draws.noise[si][static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < g.size(); ++j) y[j] = g[j] + problem.noise.stddev(g[j]) * z[j];
    if (opt.resample_theta_per_stage) loglik += inference::grid_log_likelihood(*opt.grid, problem, s, d, y);
    ep.stage_rewards.push_back(stage_reward(problem, s, d, y));
    ep.designs.push_back(d);
    ep.observations.push_back(y);
    s = advance(problem, s, d, y);
    ep.states.push_back(s);
  }
  if (opt.terminal_reward || opt.incremental_kl) {
    if (!opt.grid) throw ConfigError("terminal rewards need a belief grid");
    const auto& prior = *opt.grid;
    if (opt.incremental_kl) {
      const auto seq = inference::posterior_sequence(prior, problem, s.history);
      for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
        ep.incremental_kl.push_back(inference::kl_divergence(seq[k + 1], seq[k]));
      }
      ep.terminal_reward = terminal_reward(problem, seq.back(), prior);
    } else {
      ep.terminal_reward = terminal_reward(problem, prior, s.history);
    }
  }
  return ep;
}

}  // namespace

std::vector<Episode> simulate_episodes(const Policy& policy, const ProblemSpec& problem, const EpisodeDraws& draws,
                                       double sigma_explore, const SimulationOptions& options) {
  if (policy.encoder.length() != policy.net.input_size()) {
    throw ShapeMismatch("policy network input does not match its encoder");
  }
  std::vector<Episode> out(static_cast<std::size_t>(draws.size()));
  parallel_for(out.size(), options.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      out[i] = simulate_one(policy, problem, draws, static_cast<int>(i), sigma_explore, options);
    }
  });
  return out;
}

std::vector<Episode> simulate_episodes(const Policy& policy, const ProblemSpec& problem, int count,
                                       double sigma_explore, Rng& rng, const SimulationOptions& options) {
  return simulate_episodes(policy, problem, draw_episodes(problem, count, rng), sigma_explore, options);
}

// --- critic --------------------------------------------------------------

QBatch make_q_batch(const Policy& policy, const nnet::EncoderSpec& q_spec, const ProblemSpec& problem,
                    const std::vector<Episode>& episodes, DesignMode mode) {
  QBatch b;
  b.episodes = static_cast<int>(episodes.size());
  b.horizon = problem.horizon;
  b.mode = mode;
  const int n = problem.horizon;
  const Eigen::Index rows = static_cast<Eigen::Index>(b.episodes) * n;
  b.taken.resize(q_spec.length(), rows);
  b.next.resize(q_spec.length(), static_cast<Eigen::Index>(b.episodes) * (n - 1));
  b.reward.resize(rows);
  b.terminal.resize(b.episodes);
  for (int i = 0; i < b.episodes; ++i) {
    const auto& ep = episodes[static_cast<std::size_t>(i)];
    if (static_cast<int>(ep.designs.size()) != n || static_cast<int>(ep.states.size()) != n + 1) {
      throw ShapeMismatch("episode is not complete");
    }
    if (mode == DesignMode::greedy && static_cast<int>(ep.incremental_kl.size()) != n) {
      throw ShapeMismatch("greedy mode needs incremental KL rewards");
    }
    for (int k = 0; k < n; ++k) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * n + k;
      const auto& st = ep.states[static_cast<std::size_t>(k)];
      nnet::encode_into(k, st.history, &ep.designs[static_cast<std::size_t>(k)], q_spec, b.taken.col(r));
      double g = ep.stage_rewards[static_cast<std::size_t>(k)];
      if (mode == DesignMode::greedy) g += ep.incremental_kl[static_cast<std::size_t>(k)];
      b.reward[r] = g;
      if (k + 1 < n) {
        const auto& nx = ep.states[static_cast<std::size_t>(k + 1)];
        const Vector d_next = policy.design(problem, nx);
        nnet::encode_into(k + 1, nx.history, &d_next, q_spec,
                          b.next.col(static_cast<Eigen::Index>(i) * (n - 1) + k));
      }
    }
    b.terminal[i] = ep.terminal_reward;
  }
  return b;
}

std::vector<QTarget> q_targets(const nnet::Mlp& qnet, const QBatch& b) {
  const int n = b.horizon;
  std::vector<QTarget> out(static_cast<std::size_t>(b.episodes) * static_cast<std::size_t>(n));
  const bool greedy = b.mode == DesignMode::greedy;
  Eigen::MatrixXd next_q;
  if (!greedy && b.next.cols() > 0) next_q = qnet.forward(b.next);
  for (int i = 0; i < b.episodes; ++i) {
    for (int k = 0; k < n; ++k) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * n + k;
      QTarget& t = out[static_cast<std::size_t>(r)];
      t.value = b.reward[r];
      t.first_reward_stage = k;
      t.last_reward_stage = k;
      if (greedy) continue;
      if (k + 1 < n) {
        t.value += next_q(0, static_cast<Eigen::Index>(i) * (n - 1) + k);
        t.bootstrapped = true;
      } else {
        t.value += b.terminal[i];
        t.last_reward_stage = n;
      }
    }
  }
  return out;
}

QLoss q_loss_and_grads(const nnet::Mlp& qnet, const QBatch& b) {
  if (qnet.input_size() != b.taken.rows() || qnet.output_size() != 1) {
    throw ShapeMismatch("Q-network shape does not match the batch encoding");
  }
  const auto targets = q_targets(qnet, b);
  const auto pass = nnet::forward_pass(qnet, b.taken);
  Eigen::MatrixXd upstream(1, b.taken.cols());
  double loss = 0.0;
  const double inv_m = 1.0 / std::max(1, b.episodes);
  for (Eigen::Index r = 0; r < b.taken.cols(); ++r) {
    const double res = pass.output()(0, r) - targets[static_cast<std::size_t>(r)].value;
    loss += res * res;
    upstream(0, r) = 2.0 * res * inv_m;
  }
  QLoss out;
  out.loss = loss * inv_m;
  out.grads = nnet::backward(qnet, pass, upstream).params;
  return out;
}

double fit_q(nnet::Mlp& qnet, const QBatch& batch, const QFitConfig& config) {
  if (config.steps == 0) return q_loss_and_grads(qnet, batch).loss;
  double loss = 0.0;
  for (int s = 0; s < config.steps; ++s) {
    auto q = q_loss_and_grads(qnet, batch);
    loss = q.loss;
    if (!std::isfinite(loss)) throw NumericalFailure("Q-loss is not finite");
    nnet::adam_step(qnet, q.grads, config.learning_rate, nnet::Sense::minimize);
  }
  return loss;
}

// --- actor ---------------------------------------------------------------

namespace {

Eigen::MatrixXd policy_inputs(const Policy& policy, const std::vector<Episode>& episodes) {
  const int n = policy.encoder.horizon;
  Eigen::MatrixXd x(policy.encoder.length(), static_cast<Eigen::Index>(episodes.size()) * n);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    for (int k = 0; k < n; ++k) {
      const auto& st = episodes[i].states[static_cast<std::size_t>(k)];
      nnet::encode_into(k, st.history, nullptr, policy.encoder, x.col(static_cast<Eigen::Index>(i) * n + k));
    }
  }
  return x;
}

}  // namespace

nnet::Gradients policy_gradient_from_dq(const Policy& policy, const std::vector<Episode>& episodes,
                                        const Eigen::MatrixXd& dq) {
  const Eigen::MatrixXd x = policy_inputs(policy, episodes);
  if (dq.rows() != policy.net.output_size() || dq.cols() != x.cols()) {
    throw ShapeMismatch("design gradients do not match the episodes");
  }
  const auto pass = nnet::forward_pass(policy.net, x);
  auto g = nnet::backward(policy.net, pass, dq).params;
  g *= 1.0 / static_cast<double>(std::max<std::size_t>(1, episodes.size()));
  if (!g.all_finite()) throw NonFiniteGradient("policy gradient is not finite");
  return g;
}

Eigen::MatrixXd q_design_gradients(const Policy& policy, const nnet::Mlp& qnet, const nnet::EncoderSpec& q_spec,
                                   const ProblemSpec& problem, const std::vector<Episode>& episodes) {
  const int n = problem.horizon;
  const Eigen::MatrixXd x = policy_inputs(policy, episodes);
  const Eigen::MatrixXd mu = policy.net.forward(x);
  if (!mu.allFinite()) throw NonFinitePolicyOutput("policy output is not finite");
  Eigen::MatrixXd qin(q_spec.length(), x.cols());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    for (int k = 0; k < n; ++k) {
      const Eigen::Index c = static_cast<Eigen::Index>(i) * n + k;
      const auto& st = episodes[i].states[static_cast<std::size_t>(k)];
      const Vector d = clamp_design(mu.col(c), problem, st);
      nnet::encode_into(k, st.history, &d, q_spec, qin.col(c));
    }
  }
  const auto pass = nnet::forward_pass(qnet, qin);
  const auto bp = nnet::backward(qnet, pass, Eigen::MatrixXd::Ones(1, qin.cols()));
  return bp.input.bottomRows(problem.design_dim);
}

nnet::Gradients policy_gradient(const Policy& policy, const nnet::Mlp& qnet, const nnet::EncoderSpec& q_spec,
                                const ProblemSpec& problem, const std::vector<Episode>& episodes) {
  return policy_gradient_from_dq(policy, episodes, q_design_gradients(policy, qnet, q_spec, problem, episodes));
}

// --- training ------------------------------------------------------------

TrainResult train(const TrainConfig& config, const ProblemSpec& problem, const TrainCallback& callback) {
  config.validate();
  problem.validate();
  TrainResult result;
  Rng init = substream(config.seed, "init");
  result.policy = Policy::create(problem, config.mode, config.policy_hidden, init);
  result.q_spec = q_encoder(problem);
  result.qnet = nnet::Mlp(nnet::make_arch(result.q_spec.length(), config.q_hidden, 1), init);
  if (config.iterations == 0) return result;

  const auto grid = inference::init_belief_grid(problem.prior, problem.train_grid_nodes);
  SimulationOptions sim;
  sim.grid = &grid;
  sim.incremental_kl = config.mode == DesignMode::greedy;
  sim.threads = config.threads;

  double sigma = config.sigma_explore;
  double alpha = config.alpha;
  double u0 = 0.0;
  bool halved = false;
  using Clock = std::chrono::steady_clock;
  for (int l = 0; l < config.iterations; ++l) {
    const auto start = Clock::now();
    const auto draws = draw_episodes(problem, config.episodes, config.seed, static_cast<std::uint64_t>(l));
    const auto episodes = simulate_episodes(result.policy, problem, draws, sigma, sim);
    double u_hat = 0.0;
    for (const auto& ep : episodes) u_hat += ep.total_reward();
    u_hat /= static_cast<double>(episodes.size());

    const QBatch batch = make_q_batch(result.policy, result.q_spec, problem, episodes, config.mode);
    const double q_loss = fit_q(result.qnet, batch, config.q_fit);
    if (!std::isfinite(q_loss) || !std::isfinite(u_hat)) {
      std::ostringstream os;
      os << "training diverged at iteration " << l << " (U_hat = " << u_hat << ", q_loss = " << q_loss << ")";
      throw NumericalFailure(os.str());
    }
    nnet::Gradients grads;
    try {
      grads = policy_gradient(result.policy, result.qnet, result.q_spec, problem, episodes);
    } catch (const NonFiniteGradient& e) {
      throw NonFiniteGradient(std::string(e.what()) + " at iteration " + std::to_string(l));
    }
    const double grad_norm = grads.norm();
    if (config.max_grad_norm > 0.0 && grad_norm > config.max_grad_norm) grads *= config.max_grad_norm / grad_norm;
    if (config.optimizer == Optimizer::sgd) {
      nnet::sgd_step(result.policy.net, grads, alpha, nnet::Sense::maximize);
    } else {
      nnet::adam_step(result.policy.net, grads, alpha, nnet::Sense::maximize);
    }

    TraceRow row;
    row.iter = l;
    row.u_hat = u_hat;
    row.q_loss = q_loss;
    row.grad_norm = grad_norm;
    row.sigma_explore = sigma;
    row.alpha = alpha;
    if (l == 0) {
      u0 = u_hat;
    } else if (config.divergence_guard && !halved) {
      // "10x worse" read on the signed scale.
      const double floor = u0 < 0.0 ? 10.0 * u0 : u0 / 10.0;
      if (u_hat < floor) {
        alpha *= 0.5;
        halved = true;
        row.alpha_halved = true;
      }
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    result.trace.rows.push_back(row);
    if (callback) callback(row, result.policy);
    sigma *= config.explore_decay;
    alpha *= config.alpha_decay;
  }
  return result;
}

// --- evaluation ----------------------------------------------------------

Histogram make_histogram(const std::vector<double>& values, int bins) {
  Histogram h;
  if (values.empty() || bins < 1) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn;
  const double hi = *mx;
  const double width = hi > lo ? (hi - lo) / bins : 0.0;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + b * width);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    int b = width > 0.0 ? static_cast<int>((v - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

EvalResult evaluate_policy(const Policy& policy, const ProblemSpec& problem, int n, std::uint64_t seed,
                           const EvalOptions& options) {
  if (n < 0) throw ConfigError("evaluation episode count must be >= 0");
  EvalResult r;
  if (n == 0) return r;
  const auto grid = inference::init_belief_grid(problem.prior, problem.eval_grid_nodes);
  SimulationOptions sim;
  sim.grid = &grid;
  sim.threads = options.threads;
  auto episodes = simulate_episodes(policy, problem, draw_episodes(problem, n, seed, kEvalStream), 0.0, sim);
  for (const auto& ep : episodes) r.totals.push_back(ep.total_reward());
  double sum = 0.0;
  for (double t : r.totals) sum += t;
  r.mean = sum / n;
  if (n > 1) {
    double ss = 0.0;
    for (double t : r.totals) ss += (t - r.mean) * (t - r.mean);
    r.standard_error = std::sqrt(ss / (n - 1) / n);
  }
  r.histogram = make_histogram(r.totals, options.histogram_bins);
  if (options.keep_episodes) r.episodes = std::move(episodes);
  return r;
}

}  // namespace seqoed::design
