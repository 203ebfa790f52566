#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "seqoed/core.hpp"
#include "seqoed/inference.hpp"
#include "seqoed/models/fv_solver.hpp"

namespace seqoed::models {

class SurrogateModel;

/// One contaminant-source inversion setup. The uncertain parameter vector is
/// (theta_x, theta_y[, theta_h][, theta_s]); width and strength are fixed
/// unless a prior is given for them.
struct CaseConfig {
  int id = 0;  // 1..3 for the built-in cases, 0 for custom
  std::string name = "custom";
  int horizon = 2;
  PriorDim prior_x = PriorDim::uniform(0.0, 1.0);
  PriorDim prior_y = PriorDim::uniform(0.0, 1.0);
  std::optional<PriorDim> prior_width;
  double width = 0.05;
  std::optional<PriorDim> prior_strength;
  double strength = 2.0;
  double source_on_time = 0.0;  // source off for t < on_time
  Vector initial_position = Vector::Constant(2, 0.5);
  DesignConstraint constraint;
  double z_lo = 0.0;
  double z_hi = 1.0;
  std::vector<double> times;
  RampVelocity velocity;
  double noise_sigma = 0.1;
  CostSpec cost;
  int train_grid_nodes = 50;
  int eval_grid_nodes = 50;

  int theta_dim() const;
  std::vector<PriorDim> prior() const;
  /// Every position the sensor can occupy at a measurement.
  Box sensor_region() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Built-in cases 1..3; ConfigError otherwise.
CaseConfig case_config(int id);

enum class Engine { fv, surrogate };

/// Concentration sensor: G(x_k + d_k, t_k; theta) for stage k.
///
/// With the finite-volume engine, predictions come from exact discrete
/// response kernels of the solver (one adjoint solve per receiver cell and
/// experiment time), which makes both single predictions and whole-grid
/// evaluations cheap. Grid tables are cached per grid geometry.
class SourceInversionModel final : public ForwardModel {
 public:
  SourceInversionModel(CaseConfig config, FvGridSpec grid, Engine engine = Engine::fv,
                       std::shared_ptr<const SurrogateModel> surrogate = nullptr, int threads = 0);
  ~SourceInversionModel() override;

  const CaseConfig& config() const { return config_; }
  const FvSolver& solver() const { return solver_; }
  Engine engine() const { return engine_; }

  int obs_dim() const override { return 1; }
  Vector predict(const Vector& theta, const Vector& design, const State& state) const override;
  std::unique_ptr<BoundModel> bind(const Vector& theta) const override;
  void predict_on_grid(const inference::BeliefGrid& grid, const Vector& design, const State& state,
                       Eigen::Ref<Eigen::MatrixXd> out) const override;

  SourceParams source_params(const Vector& theta) const;
  /// G(position, t_stage; theta) via the configured engine.
  double concentration(const Vector& theta, int stage, const Vector& position) const;
  /// Reference path: one direct solve, fields at every experiment time.
  std::vector<Field> solve_fields(const Vector& theta) const;

  /// Forces kernel precomputation (otherwise done on first use).
  void prepare() const;

  struct Kernels;
  struct GridTable;

 private:
  Vector sensor_position(const Vector& design, const State& state) const;
  const Kernels& kernels() const;
  std::shared_ptr<const GridTable> table_for(const inference::BeliefGrid& grid) const;

  CaseConfig config_;
  FvSolver solver_;
  Engine engine_;
  std::shared_ptr<const SurrogateModel> surrogate_;
  int threads_;
  mutable std::once_flag kernels_once_;
  mutable std::unique_ptr<Kernels> kernels_;
  mutable std::mutex tables_mutex_;
  mutable std::vector<std::shared_ptr<const GridTable>> tables_;
};

/// cd_forward: concentration observed after moving by d from the state.
double cd_forward(const SourceInversionModel& model, const Vector& theta, const Vector& design,
                  const State& state);

ProblemSpec source_inversion_problem(const CaseConfig& config, SolverProfile profile,
                                     Engine engine = Engine::fv,
                                     std::shared_ptr<const SurrogateModel> surrogate = nullptr,
                                     int threads = 0);

}  // namespace seqoed::models
