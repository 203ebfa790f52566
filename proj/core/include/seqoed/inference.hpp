#pragma once

#include <memory>
#include <vector>

#include "seqoed/core.hpp"
#include "seqoed/rng.hpp"

namespace seqoed::inference {

/// Tensor-product grid over parameter space carrying normalized log masses.
///
/// Node i has multi-index (i_0, i_1, ...) with the first axis varying
/// fastest. The geometry (axes, node coordinates) is shared between grids
/// derived from one another, so posteriors are cheap to copy and compare.
class BeliefGrid {
 public:
  struct Geometry {
    std::vector<std::vector<double>> axes;
    std::vector<int> shape;
    Eigen::MatrixXd nodes;  // dim x size
    double cell_volume = 1.0;
  };

  /// log_mass is normalized on construction.
  BeliefGrid(std::shared_ptr<const Geometry> geometry, Eigen::VectorXd log_mass);

  static std::shared_ptr<const Geometry> make_geometry(std::vector<std::vector<double>> axes);

  int dim() const { return static_cast<int>(geometry_->axes.size()); }
  Eigen::Index size() const { return log_mass_.size(); }
  const std::vector<std::vector<double>>& axes() const { return geometry_->axes; }
  const std::vector<int>& shape() const { return geometry_->shape; }
  const Eigen::MatrixXd& nodes() const { return geometry_->nodes; }
  double cell_volume() const { return geometry_->cell_volume; }
  const std::shared_ptr<const Geometry>& geometry() const { return geometry_; }

  const Eigen::VectorXd& log_mass() const { return log_mass_; }
  Eigen::VectorXd masses() const { return log_mass_.array().exp().matrix(); }

  bool same_axes(const BeliefGrid& other) const;

  Vector mean() const;
  Eigen::MatrixXd covariance() const;

  /// Adds a per-node log-likelihood and renormalizes. Throws
  /// DegeneratePosterior when every node underflows.
  BeliefGrid updated(const Eigen::VectorXd& log_likelihood) const;

 private:
  std::shared_ptr<const Geometry> geometry_;
  Eigen::VectorXd log_mass_;
};

/// Grid with prior masses at the nodes. Uniform priors span their support;
/// Gaussian priors span mean +- 5 sd.
BeliefGrid init_belief_grid(const std::vector<PriorDim>& prior, int nodes_per_dim);

/// log N(y; G, s^2 I) with s from the noise model.
double log_likelihood(const Vector& prediction, const Vector& observation, const NoiseModel& noise);

double log_likelihood(const ForwardModel& model, const Vector& theta, const Vector& design,
                      const Vector& observation, const State& state, const NoiseModel& noise);

/// Per-node log-likelihood of one experiment.
Eigen::VectorXd grid_log_likelihood(const BeliefGrid& grid, const ProblemSpec& problem,
                                    const State& state, const Vector& design,
                                    const Vector& observation);

/// p(theta | I) on the grid of `prior`, from a single accumulated update.
BeliefGrid posterior_from_history(const BeliefGrid& prior, const ProblemSpec& problem,
                                  const History& history);

/// p(theta | I_0), ..., p(theta | I_k) for every prefix of the history.
std::vector<BeliefGrid> posterior_sequence(const BeliefGrid& prior, const ProblemSpec& problem,
                                           const History& history);

/// D_KL(post || prior) with node masses as the discrete measure. Nodes with
/// zero posterior mass contribute nothing.
double kl_divergence(const BeliefGrid& post, const BeliefGrid& prior);

Vector sample_prior(const std::vector<PriorDim>& prior, Rng& rng);

/// y = G + noise.
Vector sample_observation(const Vector& prediction, const NoiseModel& noise, Rng& rng);
Vector sample_observation(const ForwardModel& model, const Vector& theta, const Vector& design,
                          const State& state, const NoiseModel& noise, Rng& rng);

}  // namespace seqoed::inference
