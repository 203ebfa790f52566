#pragma once

#include "seqoed/core.hpp"

namespace seqoed::models {

/// y = theta * d + eps, the conjugate benchmark.
struct LinearGaussianSpec {
  double prior_mean = 0.0;
  double prior_std = 3.0;
  double noise_std = 1.0;
  double design_lo = 0.1;
  double design_hi = 3.0;
  int horizon = 2;
  // Terminal reward KL - weight * (ln var_N - ln target)^2; weight 0 disables it.
  double penalty_weight = 2.0;
  double penalty_target_variance = 2.0;
};

double linear_gaussian_forward(double theta, double design);

class LinearGaussianModel final : public ForwardModel {
 public:
  int obs_dim() const override { return 1; }
  Vector predict(const Vector& theta, const Vector& design, const State& state) const override;
  void predict_on_grid(const inference::BeliefGrid& grid, const Vector& design, const State& state,
                       Eigen::Ref<Eigen::MatrixXd> out) const override;
};

ProblemSpec linear_gaussian_problem(const LinearGaussianSpec& spec = {});

struct GaussianMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Conjugate posterior: variance = (1/s0^2 + sum d^2/se^2)^-1,
/// mean = variance * (m0/s0^2 + sum d y / se^2).
GaussianMoments lg_analytic_posterior(const History& history, const LinearGaussianSpec& spec = {});

/// Expected total reward of any policy whose final posterior variance is v:
/// E[KL] = ln(s0 / sqrt(v)) minus the variance penalty.
double lg_expected_utility_of_variance(double variance, const LinearGaussianSpec& spec = {});

struct LinearGaussianOptimum {
  double utility = 0.0;
  double variance = 0.0;          // optimal final posterior variance
  double design_sum_squares = 0.0;  // sum_k d_k^2 achieving it
};

/// Closed-form optimum over the reachable range of sum d_k^2.
LinearGaussianOptimum lg_optimal_utility(const LinearGaussianSpec& spec = {});

}  // namespace seqoed::models
