#include "seqoed/core.hpp"

#include "seqoed/inference.hpp"

#include <sstream>

namespace seqoed {

bool Box::contains(const Vector& v, double tol) const {
  if (v.size() != lo.size()) return false;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= lo[i] - tol && v[i] <= hi[i] + tol)) return false;
  }
  return true;
}

Vector Box::project(const Vector& v) const {
  if (v.size() != lo.size()) throw ShapeMismatch("Box::project: dimension mismatch");
  return v.cwiseMax(lo).cwiseMin(hi);
}

History::History(int horizon) : horizon_(horizon) {
  if (horizon < 1) throw ConfigError("History: horizon must be >= 1");
  stages_.reserve(static_cast<std::size_t>(horizon));
}

History History::append(Vector design, Vector observation) const {
  if (complete()) {
    throw HorizonExceeded("History already holds " + std::to_string(horizon_) + " stages");
  }
  History next = *this;
  next.stages_.push_back(Stage{std::move(design), std::move(observation)});
  return next;
}

std::unique_ptr<BoundModel> ForwardModel::bind(const Vector& theta) const {
  struct Forwarding final : BoundModel {
    const ForwardModel* model;
    Vector theta;
    Vector predict(const Vector& design, const State& state) const override {
      return model->predict(theta, design, state);
    }
  };
  auto bound = std::make_unique<Forwarding>();
  bound->model = this;
  bound->theta = theta;
  return bound;
}

void ForwardModel::predict_on_grid(const inference::BeliefGrid& grid, const Vector& design,
                                   const State& state, Eigen::Ref<Eigen::MatrixXd> out) const {
  const auto& nodes = grid.nodes();
  for (Eigen::Index i = 0; i < nodes.cols(); ++i) {
    out.row(i) = predict(nodes.col(i), design, state).transpose();
  }
}

void ProblemSpec::validate() const {
  auto fail = [&](const std::string& what) { throw ConfigError(name + ": " + what); };
  if (horizon < 1) fail("horizon must be >= 1");
  if (theta_dim < 1 || design_dim < 1 || obs_dim < 1) fail("dimensions must be >= 1");
  if (static_cast<int>(prior.size()) != theta_dim) fail("prior has wrong dimension");
  for (const auto& p : prior) {
    if (!std::isfinite(p.a) || !std::isfinite(p.b)) fail("prior parameters must be finite");
    if (p.kind == PriorDim::Kind::uniform && !(p.b > p.a)) fail("uniform prior needs lo < hi");
    if (p.kind == PriorDim::Kind::gaussian && !(p.b > 0)) fail("gaussian prior needs stddev > 0");
  }
  if (!model) fail("missing forward model");
  if (model->obs_dim() != obs_dim) fail("forward model observation dimension mismatch");
  if (!(noise.sigma >= 0)) fail("noise sigma must be >= 0");
  const auto& r = constraint.region;
  if (static_cast<int>(r.dim()) != (constraint.kind == DesignConstraint::Kind::box
                                        ? design_dim
                                        : static_cast<int>(initial_position.size()))) {
    fail("design constraint has wrong dimension");
  }
  for (std::size_t i = 0; i < r.dim(); ++i) {
    if (!(r.hi[static_cast<Eigen::Index>(i)] >= r.lo[static_cast<Eigen::Index>(i)])) {
      fail("design constraint is empty");
    }
  }
  if (constraint.kind == DesignConstraint::Kind::state_box) {
    if (!has_physical_state()) fail("state constraint without a physical state");
    if (initial_position.size() != design_dim) fail("displacement designs must match position");
  }
  if (!experiment_times.empty() && static_cast<int>(experiment_times.size()) != horizon) {
    fail("need one experiment time per stage");
  }
  if (terminal.kind == TerminalSpec::Kind::kl_variance_penalty && theta_dim != 1) {
    fail("variance penalty needs a scalar parameter");
  }
  if (train_grid_nodes < 2 || eval_grid_nodes < 2) fail("grid needs at least 2 nodes per dimension");
}

double Episode::total_reward() const {
  double total = terminal_reward;
  for (double g : stage_rewards) total += g;
  return total;
}

State initial_state(const ProblemSpec& problem) {
  State s{0, History(problem.horizon), PhysicalState{problem.initial_position}};
  return s;
}

State advance(const ProblemSpec& problem, const State& state, const Vector& design,
              const Vector& observation) {
  State next;
  next.stage = state.stage + 1;
  next.history = state.history.append(design, observation);
  next.physical = state.physical;
  if (problem.has_physical_state()) next.physical.position = state.physical.position + design;
  return next;
}

std::vector<State> replay(const ProblemSpec& problem, const History& history) {
  std::vector<State> states;
  states.reserve(static_cast<std::size_t>(history.size()) + 1);
  states.push_back(initial_state(problem));
  for (const auto& st : history.stages()) {
    states.push_back(advance(problem, states.back(), st.design, st.observation));
  }
  return states;
}

History append_stage(const History& history, const Vector& design, const Vector& observation,
                     const std::optional<Box>& bounds) {
  if (history.complete()) {
    throw HorizonExceeded("append_stage: horizon " + std::to_string(history.horizon()) +
                          " already reached");
  }
  if (bounds && !bounds->contains(design)) {
    std::ostringstream os;
    os << "append_stage: design [" << design.transpose() << "] outside bounds";
    throw BoundsViolation(os.str());
  }
  return history.append(design, observation);
}

Vector clamp_design(const Vector& design, const ProblemSpec& problem, const State& state) {
  const auto& c = problem.constraint;
  if (c.kind == DesignConstraint::Kind::box) return c.region.project(design);
  const Vector& x = state.physical.position;
  return c.region.project(x + design) - x;
}

}  // namespace seqoed
