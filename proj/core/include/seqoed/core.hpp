#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqoed/errors.hpp"

namespace seqoed {

using Vector = Eigen::VectorXd;

namespace inference {
class BeliefGrid;
}

/// Axis-aligned box [lo, hi] in R^n.
struct Box {
  Vector lo;
  Vector hi;

  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
  bool contains(const Vector& v, double tol = 0.0) const;
  Vector project(const Vector& v) const;
};

/// One independent prior factor.
struct PriorDim {
  enum class Kind { uniform, gaussian };
  Kind kind = Kind::uniform;
  // uniform: [a, b]; gaussian: mean a, standard deviation b.
  double a = 0.0;
  double b = 1.0;

  static PriorDim uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static PriorDim gaussian(double mean, double stddev) { return {Kind::gaussian, mean, stddev}; }
};

/// Additive Gaussian observation noise. With `signal_scaled` the standard
/// deviation becomes sigma * (1 + |G|).
struct NoiseModel {
  double sigma = 1.0;
  bool signal_scaled = false;

  double stddev(double prediction) const {
    return signal_scaled ? sigma * (1.0 + std::abs(prediction)) : sigma;
  }
};

struct Stage {
  Vector design;
  Vector observation;
};

/// The information set I_k: designs and observations of the experiments
/// performed so far. Value type; appending returns a new history.
class History {
 public:
  explicit History(int horizon);

  int horizon() const { return horizon_; }
  int size() const { return static_cast<int>(stages_.size()); }
  bool empty() const { return stages_.empty(); }
  bool complete() const { return size() == horizon_; }
  const Stage& operator[](int k) const { return stages_[static_cast<std::size_t>(k)]; }
  std::span<const Stage> stages() const { return stages_; }

  /// Unchecked except for the horizon.
  History append(Vector design, Vector observation) const;

 private:
  int horizon_;
  std::vector<Stage> stages_;
};

struct PhysicalState {
  Vector position;  // empty when the problem has no physical state
};

struct State {
  int stage = 0;
  History history{1};
  PhysicalState physical;
};

/// Feasible set for designs. `box` constrains d directly; `state_box`
/// constrains position + d, for problems whose physical state must stay in a
/// region (the design is then a displacement).
struct DesignConstraint {
  enum class Kind { box, state_box };
  Kind kind = Kind::box;
  Box region;
};

struct RampVelocity {
  // u(t) = (rate_x * t, rate_y * t)
  double rate_x = 0.0;
  double rate_y = 0.0;

  Vector at(double t) const {
    Vector u(2);
    u << rate_x * t, rate_y * t;
    return u;
  }
  bool zero() const { return rate_x == 0.0 && rate_y == 0.0; }
};

/// Movement/experiment cost g_k = -coefficient * f_c(d).
struct CostSpec {
  enum class Kind {
    none,           // g_k = 0
    squared_norm,   // f_c = |d|^2
    wind_adjusted,  // f_c = |d| - (sqrt(2)/40) d . u(t_k)
  };
  Kind kind = Kind::none;
  double coefficient = 0.0;
  RampVelocity wind;
};

struct TerminalSpec {
  enum class Kind {
    kl,                    // D_KL(posterior || prior)
    kl_variance_penalty,   // KL - weight * (ln var_N - ln target_var)^2, 1-D theta only
  };
  Kind kind = Kind::kl;
  double penalty_weight = 2.0;
  double penalty_target_variance = 2.0;
};

struct ProblemSpec;

/// Model bound to one parameter value; may cache work across stages.
class BoundModel {
 public:
  virtual ~BoundModel() = default;
  virtual Vector predict(const Vector& design, const State& state) const = 0;
};

/// Forward model G(theta, d; I_k). The stage index and physical state are
/// taken from `state`.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual int obs_dim() const = 0;
  virtual Vector predict(const Vector& theta, const Vector& design, const State& state) const = 0;

  /// Binds theta for a whole episode. The default forwards to predict().
  virtual std::unique_ptr<BoundModel> bind(const Vector& theta) const;

  /// Predictions at every node of a belief grid; out is (nodes x obs_dim).
  /// The default evaluates predict() node by node.
  virtual void predict_on_grid(const inference::BeliefGrid& grid, const Vector& design,
                               const State& state, Eigen::Ref<Eigen::MatrixXd> out) const;
};

/// Everything that defines one sequential design problem.
struct ProblemSpec {
  std::string name;
  int horizon = 1;
  int theta_dim = 1;
  int design_dim = 1;
  int obs_dim = 1;
  std::vector<PriorDim> prior;
  DesignConstraint constraint;
  Vector initial_position;  // empty: no physical state
  std::shared_ptr<const ForwardModel> model;
  NoiseModel noise;
  CostSpec cost;
  TerminalSpec terminal;
  std::vector<double> experiment_times;  // one per stage, PDE problems only
  int train_grid_nodes = 50;
  int eval_grid_nodes = 50;

  bool has_physical_state() const { return initial_position.size() > 0; }
  /// Throws ConfigError when a field is inconsistent.
  void validate() const;
};

/// One simulated trajectory under a fixed true parameter.
struct Episode {
  Vector theta_true;
  std::vector<State> states;  // N + 1
  std::vector<Vector> designs;
  std::vector<Vector> observations;
  std::vector<double> stage_rewards;
  double terminal_reward = 0.0;
  // Per-stage D_KL(p(.|I_{k+1}) || p(.|I_k)); filled only when requested.
  std::vector<double> incremental_kl;

  double total_reward() const;
};

State initial_state(const ProblemSpec& problem);

/// State after performing (d, y) in `state`: stage + 1, history extended and
/// the physical state moved by the displacement when the problem has one.
State advance(const ProblemSpec& problem, const State& state, const Vector& design,
              const Vector& observation);

/// Rebuilds x_0..x_k from a history.
std::vector<State> replay(const ProblemSpec& problem, const History& history);

/// Checked append: HorizonExceeded when full, BoundsViolation when d lies
/// outside `bounds`.
History append_stage(const History& history, const Vector& design, const Vector& observation,
                     const std::optional<Box>& bounds = std::nullopt);

/// Projects a design onto the feasible set of `state`.
Vector clamp_design(const Vector& design, const ProblemSpec& problem, const State& state);

}  // namespace seqoed
