#include "seqoed/models/linear_gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "seqoed/inference.hpp"

namespace seqoed::models {

double linear_gaussian_forward(double theta, double design) { return theta * design; }

Vector LinearGaussianModel::predict(const Vector& theta, const Vector& design, const State&) const {
  if (theta.size() != 1 || design.size() != 1) throw ShapeMismatch("linear-Gaussian model is scalar");
  return Vector::Constant(1, linear_gaussian_forward(theta[0], design[0]));
}

void LinearGaussianModel::predict_on_grid(const inference::BeliefGrid& grid, const Vector& design,
                                          const State&, Eigen::Ref<Eigen::MatrixXd> out) const {
  out.col(0) = grid.nodes().row(0).transpose() * design[0];
}

ProblemSpec linear_gaussian_problem(const LinearGaussianSpec& spec) {
  ProblemSpec p;
  p.name = "linear_gaussian";
  p.horizon = spec.horizon;
  p.theta_dim = p.design_dim = p.obs_dim = 1;
  p.prior = {PriorDim::gaussian(spec.prior_mean, spec.prior_std)};
  p.constraint.kind = DesignConstraint::Kind::box;
  p.constraint.region = Box{Vector::Constant(1, spec.design_lo), Vector::Constant(1, spec.design_hi)};
  p.model = std::make_shared<LinearGaussianModel>();
  p.noise = NoiseModel{spec.noise_std, false};
  p.cost = CostSpec{};
  if (spec.penalty_weight > 0) {
    p.terminal.kind = TerminalSpec::Kind::kl_variance_penalty;
    p.terminal.penalty_weight = spec.penalty_weight;
    p.terminal.penalty_target_variance = spec.penalty_target_variance;
  } else {
    p.terminal.kind = TerminalSpec::Kind::kl;
  }
  p.train_grid_nodes = p.eval_grid_nodes = 50;
  p.validate();
  return p;
}

GaussianMoments lg_analytic_posterior(const History& history, const LinearGaussianSpec& spec) {
  const double prior_prec = 1.0 / (spec.prior_std * spec.prior_std);
  const double noise_prec = 1.0 / (spec.noise_std * spec.noise_std);
  double precision = prior_prec;
  double weighted = spec.prior_mean * prior_prec;
  for (const auto& st : history.stages()) {
    precision += st.design[0] * st.design[0] * noise_prec;
    weighted += st.design[0] * st.observation[0] * noise_prec;
  }
  const double var = 1.0 / precision;
  return {var * weighted, var};
}

double lg_expected_utility_of_variance(double variance, const LinearGaussianSpec& spec) {
  const double info = std::log(spec.prior_std) - 0.5 * std::log(variance);
  const double dev = std::log(variance) - std::log(spec.penalty_target_variance);
  return info - spec.penalty_weight * dev * dev;
}

LinearGaussianOptimum lg_optimal_utility(const LinearGaussianSpec& spec) {
  const double prior_prec = 1.0 / (spec.prior_std * spec.prior_std);
  const double noise_prec = 1.0 / (spec.noise_std * spec.noise_std);
  const double s_min = spec.horizon * spec.design_lo * spec.design_lo;
  const double s_max = spec.horizon * spec.design_hi * spec.design_hi;
  auto variance_of = [&](double s) { return 1.0 / (prior_prec + s * noise_prec); };
  // U(ln v) = ln s0 - ln(v)/2 - w (ln v - ln target)^2 is concave in ln v, so the
  // stationary point clipped to the feasible interval is the maximizer.
  double log_v = std::log(spec.penalty_target_variance);
  if (spec.penalty_weight > 0) log_v -= 1.0 / (4.0 * spec.penalty_weight);
  const double v_lo = variance_of(s_max), v_hi = variance_of(s_min);
  const double v = spec.penalty_weight > 0 ? std::clamp(std::exp(log_v), v_lo, v_hi) : v_lo;
  LinearGaussianOptimum opt;
  opt.variance = v;
  opt.design_sum_squares = (1.0 / v - prior_prec) / noise_prec;
  opt.utility = lg_expected_utility_of_variance(v, spec);
  return opt;
}

}  // namespace seqoed::models
