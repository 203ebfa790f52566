#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "seqoed/core.hpp"
#include "seqoed/inference.hpp"
#include "seqoed/nnet.hpp"

namespace seqoed::design {

/// soed: full actor-critic. batch: the policy sees only the stage index.
/// greedy: incremental rewards, Q regresses the immediate reward only.
enum class DesignMode { soed, batch, greedy };

std::string to_string(DesignMode mode);
/// Throws ConfigError for unknown names.
DesignMode parse_mode(const std::string& name);

enum class Optimizer { sgd, adam };

struct QFitConfig {
  int steps = 800;  // full-batch Adam steps per outer iteration, warm-started
  double learning_rate = 3e-4;
};

struct TrainConfig {
  int iterations = 100;  // L
  int episodes = 1000;   // M
  double alpha = 0.15;
  Optimizer optimizer = Optimizer::sgd;
  double sigma_explore = 0.2;
  double explore_decay = 0.95;
  double alpha_decay = 0.92;
  QFitConfig q_fit;
  std::vector<int> policy_hidden{80, 80};
  std::vector<int> q_hidden{80, 80};
  std::uint64_t seed = 0;
  DesignMode mode = DesignMode::soed;
  bool divergence_guard = true;
  double max_grad_norm = 0.5;  // > 0: rescale larger policy gradients to this norm; 0 disables
  int threads = 0;  // 0: default_threads()

  /// Throws ConfigError.
  void validate() const;
};

struct TraceRow {
  int iter = 0;
  double u_hat = 0.0;  // mean training total reward (terminal formulation, with exploration)
  double q_loss = 0.0;
  double grad_norm = 0.0;
  double sigma_explore = 0.0;
  double alpha = 0.0;
  double wall_ms = 0.0;
  bool alpha_halved = false;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  /// Columns: iter,U_hat,q_loss,grad_norm,sigma_explore,wall_ms
  void write_csv(const std::filesystem::path& path) const;
};

/// Deterministic policy mu_w(k, x_k); designs are the clamped outputs.
struct Policy {
  nnet::Mlp net;
  nnet::EncoderSpec encoder;

  static Policy create(const ProblemSpec& problem, DesignMode mode, const std::vector<int>& hidden, Rng& rng);
  /// Unclamped network output. Throws NonFinitePolicyOutput.
  Vector raw(const State& state) const;
  Vector design(const ProblemSpec& problem, const State& state) const;
};

nnet::EncoderSpec q_encoder(const ProblemSpec& problem);
nnet::EncoderSpec policy_encoder(const ProblemSpec& problem, DesignMode mode);

// --- rewards -------------------------------------------------------------

/// g_k = -c_q f_c(d); zero when the problem has no cost.
double stage_reward(const ProblemSpec& problem, const State& state, const Vector& design, const Vector& observation);

/// g_N: KL(p(.|I_N) || p(.|I_0)) on the grid, minus the variance penalty when configured.
double terminal_reward(const ProblemSpec& problem, const inference::BeliefGrid& posterior,
                       const inference::BeliefGrid& prior);
double terminal_reward(const ProblemSpec& problem, const inference::BeliefGrid& prior, const History& history);

// --- episodes ------------------------------------------------------------

/// Every random quantity an episode consumes, drawn up front so that episodes
/// can be replayed with frozen noise.
struct EpisodeDraws {
  std::vector<Vector> theta;                // per episode
  std::vector<std::vector<Vector>> noise;   // [episode][stage], standard normal, obs_dim
  std::vector<std::vector<Vector>> explore; // [episode][stage], standard normal, design_dim
  std::uint64_t root_seed = 0;
  std::uint64_t stream = 0;

  int size() const { return static_cast<int>(theta.size()); }
};

/// Draws from named substreams of `root_seed`: "prior", "noise" and
/// "explore", each indexed by (stream, episode). Using the same seed and
/// stream across design modes gives common random numbers.
EpisodeDraws draw_episodes(const ProblemSpec& problem, int count, std::uint64_t root_seed, std::uint64_t stream);

/// Same layout, drawn sequentially from one generator.
EpisodeDraws draw_episodes(const ProblemSpec& problem, int count, Rng& rng);

struct SimulationOptions {
  const inference::BeliefGrid* grid = nullptr;  // required for terminal rewards
  bool terminal_reward = true;
  bool incremental_kl = false;  // fill Episode::incremental_kl
  /// Resample theta from p(theta | I_k) at each stage instead of keeping the
  /// episode's draw fixed (sampled on the grid with uniform jitter inside the cell).
  bool resample_theta_per_stage = false;
  int threads = 0;
};

/// d_k = clamp(clamp(mu_w(k, x_k)) + sigma_explore * explore), y_k = G + noise.
std::vector<Episode> simulate_episodes(const Policy& policy, const ProblemSpec& problem, const EpisodeDraws& draws,
                                       double sigma_explore, const SimulationOptions& options);

std::vector<Episode> simulate_episodes(const Policy& policy, const ProblemSpec& problem, int count,
                                       double sigma_explore, Rng& rng, const SimulationOptions& options);

// --- critic --------------------------------------------------------------

/// Q-regression data for one batch of episodes, laid out stage-major per
/// episode: row r = i * N + k.
struct QBatch {
  int episodes = 0;
  int horizon = 0;
  DesignMode mode = DesignMode::soed;
  Eigen::MatrixXd taken;   // Q inputs at (x_k, d_k actually applied)
  Eigen::MatrixXd next;    // Q inputs at (x_{k+1}, clamp(mu_w(k+1, x_{k+1}))), for k < N-1
  Eigen::VectorXd reward;  // immediate reward of each row (incremental KL added in greedy mode)
  Eigen::VectorXd terminal;  // g_N per episode
};

QBatch make_q_batch(const Policy& policy, const nnet::EncoderSpec& q_spec, const ProblemSpec& problem,
                    const std::vector<Episode>& episodes, DesignMode mode);

/// One regression target with a record of what went into it.
struct QTarget {
  double value = 0.0;
  int first_reward_stage = 0;  // rewards g_first .. g_last are summed into value
  int last_reward_stage = 0;   // N for the terminal reward
  bool bootstrapped = false;   // value includes Q_eta at the next stage
};

std::vector<QTarget> q_targets(const nnet::Mlp& qnet, const QBatch& batch);

struct QLoss {
  double loss = 0.0;
  nnet::Gradients grads;
};

/// (1/M) sum_i sum_k (Q_eta(k, x_k, d_k) - target)^2 with targets held fixed.
QLoss q_loss_and_grads(const nnet::Mlp& qnet, const QBatch& batch);

/// Runs config.steps Adam steps; returns the loss before the final step.
double fit_q(nnet::Mlp& qnet, const QBatch& batch, const QFitConfig& config);

// --- actor ---------------------------------------------------------------

/// (1/M) sum_i sum_k grad_w mu_w(k, x_k) . dq[:, i*N + k], where dq holds
/// grad_d Q at d = clamp(mu_w(k, x_k)). The clamp is treated as the identity.
nnet::Gradients policy_gradient_from_dq(const Policy& policy, const std::vector<Episode>& episodes,
                                        const Eigen::MatrixXd& dq);

/// grad_d Q_eta(k, x_k, d) at d = clamp(mu_w(k, x_k)); one column per (episode, stage).
Eigen::MatrixXd q_design_gradients(const Policy& policy, const nnet::Mlp& qnet, const nnet::EncoderSpec& q_spec,
                                   const ProblemSpec& problem, const std::vector<Episode>& episodes);

/// Monte Carlo policy gradient with grad_d Q from the Q-network. Throws NonFiniteGradient.
nnet::Gradients policy_gradient(const Policy& policy, const nnet::Mlp& qnet, const nnet::EncoderSpec& q_spec,
                                const ProblemSpec& problem, const std::vector<Episode>& episodes);

// --- training and evaluation ------------------------------------------------

struct TrainResult {
  Policy policy;
  nnet::Mlp qnet;
  nnet::EncoderSpec q_spec;
  TrainTrace trace;
};

/// Called after every policy update with the updated policy.
using TrainCallback = std::function<void(const TraceRow&, const Policy&)>;

TrainResult train(const TrainConfig& config, const ProblemSpec& problem, const TrainCallback& callback = {});

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<int> counts;
};

/// Uniform bins over [min, max] of the values.
Histogram make_histogram(const std::vector<double>& values, int bins = 50);

struct EvalResult {
  double mean = 0.0;
  double standard_error = 0.0;
  Histogram histogram;
  std::vector<double> totals;
  std::vector<Episode> episodes;
};

struct EvalOptions {
  int threads = 0;
  bool keep_episodes = true;
  int histogram_bins = 50;
};

/// Simulates n episodes without exploration, scoring each with the terminal
/// formulation on the problem's evaluation grid. Draws come from stream
/// "eval" of `seed`, so policies evaluated with one seed see the same
/// parameters and noise.
EvalResult evaluate_policy(const Policy& policy, const ProblemSpec& problem, int n, std::uint64_t seed,
                           const EvalOptions& options = {});

/// Stream index used by evaluate_policy.
inline constexpr std::uint64_t kEvalStream = 0xE7A1ULL;

}  // namespace seqoed::design
