#include "seqoed/inference.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace seqoed::inference {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)
constexpr double kGaussianSpan = 5.0;

Eigen::VectorXd normalize_log(Eigen::VectorXd log_mass) {
  const double peak = log_mass.maxCoeff();
  if (!(peak > -std::numeric_limits<double>::infinity()) || std::isnan(peak)) {
    throw DegeneratePosterior("all grid masses underflowed to zero");
  }
  const double total = (log_mass.array() - peak).exp().sum();
  log_mass.array() -= peak + std::log(total);
  return log_mass;
}

}  // namespace

BeliefGrid::BeliefGrid(std::shared_ptr<const Geometry> geometry, Eigen::VectorXd log_mass)
    : geometry_(std::move(geometry)), log_mass_(std::move(log_mass)) {
  if (log_mass_.size() != geometry_->nodes.cols()) {
    throw ShapeMismatch("BeliefGrid: mass count does not match node count");
  }
  log_mass_ = normalize_log(std::move(log_mass_));
}

std::shared_ptr<const BeliefGrid::Geometry> BeliefGrid::make_geometry(
    std::vector<std::vector<double>> axes) {
  auto g = std::make_shared<Geometry>();
  Eigen::Index total = 1;
  for (const auto& a : axes) {
    if (a.size() < 2) throw ShapeMismatch("BeliefGrid: each axis needs >= 2 nodes");
    g->shape.push_back(static_cast<int>(a.size()));
    g->cell_volume *= (a.back() - a.front()) / static_cast<double>(a.size() - 1);
    total *= static_cast<Eigen::Index>(a.size());
  }
  const auto d = static_cast<Eigen::Index>(axes.size());
  g->nodes.resize(d, total);
  for (Eigen::Index i = 0; i < total; ++i) {
    Eigen::Index rem = i;
    for (Eigen::Index j = 0; j < d; ++j) {
      const auto n = static_cast<Eigen::Index>(axes[static_cast<std::size_t>(j)].size());
      g->nodes(j, i) = axes[static_cast<std::size_t>(j)][static_cast<std::size_t>(rem % n)];
      rem /= n;
    }
  }
  g->axes = std::move(axes);
  return g;
}

bool BeliefGrid::same_axes(const BeliefGrid& other) const {
  return geometry_ == other.geometry_ || geometry_->axes == other.geometry_->axes;
}

Vector BeliefGrid::mean() const { return nodes() * masses(); }

Eigen::MatrixXd BeliefGrid::covariance() const {
  const Eigen::VectorXd w = masses();
  const Eigen::MatrixXd centered = nodes().colwise() - mean();
  return centered * w.asDiagonal() * centered.transpose();
}

BeliefGrid BeliefGrid::updated(const Eigen::VectorXd& log_likelihood) const {
  if (log_likelihood.size() != size()) throw ShapeMismatch("BeliefGrid::updated: size mismatch");
  return BeliefGrid(geometry_, log_mass_ + log_likelihood);
}

BeliefGrid init_belief_grid(const std::vector<PriorDim>& prior, int nodes_per_dim) {
  if (nodes_per_dim < 2) throw ShapeMismatch("init_belief_grid: need at least 2 nodes per dimension");
  if (prior.empty()) throw UnsupportedPrior("init_belief_grid: empty prior");
  std::vector<std::vector<double>> axes;
  for (const auto& p : prior) {
    double lo = 0, hi = 0;
    switch (p.kind) {
      case PriorDim::Kind::uniform:
        if (!(p.b > p.a) || !std::isfinite(p.a) || !std::isfinite(p.b)) {
          throw UnsupportedPrior("uniform prior needs finite lo < hi");
        }
        lo = p.a;
        hi = p.b;
        break;
      case PriorDim::Kind::gaussian:
        if (!(p.b > 0) || !std::isfinite(p.a) || !std::isfinite(p.b)) {
          throw UnsupportedPrior("gaussian prior needs finite mean and stddev > 0");
        }
        lo = p.a - kGaussianSpan * p.b;
        hi = p.a + kGaussianSpan * p.b;
        break;
      default:
        throw UnsupportedPrior("unknown prior kind");
    }
    std::vector<double> axis(static_cast<std::size_t>(nodes_per_dim));
    const double step = (hi - lo) / (nodes_per_dim - 1);
    for (int i = 0; i < nodes_per_dim; ++i) axis[static_cast<std::size_t>(i)] = lo + step * i;
    axis.back() = hi;
    axes.push_back(std::move(axis));
  }
  auto geometry = BeliefGrid::make_geometry(std::move(axes));
  Eigen::VectorXd log_mass = Eigen::VectorXd::Zero(geometry->nodes.cols());
  for (std::size_t j = 0; j < prior.size(); ++j) {
    if (prior[j].kind != PriorDim::Kind::gaussian) continue;
    const double mu = prior[j].a, sd = prior[j].b;
    log_mass.array() +=
        -0.5 * ((geometry->nodes.row(static_cast<Eigen::Index>(j)).array() - mu) / sd).square().transpose();
  }
  return BeliefGrid(std::move(geometry), std::move(log_mass));
}

double log_likelihood(const Vector& prediction, const Vector& observation, const NoiseModel& noise) {
  if (prediction.size() != observation.size()) {
    throw ShapeMismatch("log_likelihood: observation dimension mismatch");
  }
  double ll = 0.0;
  for (Eigen::Index j = 0; j < prediction.size(); ++j) {
    const double s = noise.stddev(prediction[j]);
    const double r = (observation[j] - prediction[j]) / s;
    ll += -0.5 * r * r - std::log(s) - kHalfLog2Pi;
  }
  return ll;
}

double log_likelihood(const ForwardModel& model, const Vector& theta, const Vector& design,
                      const Vector& observation, const State& state, const NoiseModel& noise) {
  return log_likelihood(model.predict(theta, design, state), observation, noise);
}

Eigen::VectorXd grid_log_likelihood(const BeliefGrid& grid, const ProblemSpec& problem,
                                    const State& state, const Vector& design,
                                    const Vector& observation) {
  Eigen::MatrixXd g(grid.size(), problem.obs_dim);
  problem.model->predict_on_grid(grid, design, state, g);
  Eigen::VectorXd ll = Eigen::VectorXd::Zero(grid.size());
  const auto& noise = problem.noise;
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    auto pred = g.col(j).array();
    if (noise.signal_scaled) {
      const Eigen::ArrayXd s = noise.sigma * (1.0 + pred.abs());
      ll.array() += -0.5 * ((observation[j] - pred) / s).square() - s.log();
    } else {
      ll.array() += -0.5 * ((observation[j] - pred) / noise.sigma).square() - std::log(noise.sigma);
    }
  }
  // The Gaussian constant is shared by every node and drops out on normalization.
  return ll;
}

BeliefGrid posterior_from_history(const BeliefGrid& prior, const ProblemSpec& problem,
                                  const History& history) {
  if (history.empty()) return prior;
  const auto states = replay(problem, history);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(prior.size());
  for (int k = 0; k < history.size(); ++k) {
    total += grid_log_likelihood(prior, problem, states[static_cast<std::size_t>(k)],
                                 history[k].design, history[k].observation);
  }
  return prior.updated(total);
}

std::vector<BeliefGrid> posterior_sequence(const BeliefGrid& prior, const ProblemSpec& problem,
                                           const History& history) {
  std::vector<BeliefGrid> out{prior};
  const auto states = replay(problem, history);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(prior.size());
  for (int k = 0; k < history.size(); ++k) {
    total += grid_log_likelihood(prior, problem, states[static_cast<std::size_t>(k)],
                                 history[k].design, history[k].observation);
    out.push_back(prior.updated(total));
  }
  return out;
}

double kl_divergence(const BeliefGrid& post, const BeliefGrid& prior) {
  if (!post.same_axes(prior)) throw GridMismatch("kl_divergence: grids have different axes");
  const auto& lp = post.log_mass();
  const auto& lq = prior.log_mass();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    const double p = std::exp(lp[i]);
    if (p > 0.0) kl += p * (lp[i] - lq[i]);
  }
  return std::max(kl, 0.0);
}

Vector sample_prior(const std::vector<PriorDim>& prior, Rng& rng) {
  Vector theta(static_cast<Eigen::Index>(prior.size()));
  for (std::size_t j = 0; j < prior.size(); ++j) {
    const auto& p = prior[j];
    if (p.kind == PriorDim::Kind::uniform) {
      std::uniform_real_distribution<double> u(p.a, p.b);
      theta[static_cast<Eigen::Index>(j)] = u(rng);
    } else {
      theta[static_cast<Eigen::Index>(j)] = p.a + p.b * standard_normal(rng);
    }
  }
  return theta;
}

Vector sample_observation(const Vector& prediction, const NoiseModel& noise, Rng& rng) {
  Vector y = prediction;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double eps = standard_normal(rng);
    y[j] += noise.stddev(prediction[j]) * eps;
  }
  return y;
}

Vector sample_observation(const ForwardModel& model, const Vector& theta, const Vector& design,
                          const State& state, const NoiseModel& noise, Rng& rng) {
  return sample_observation(model.predict(theta, design, state), noise, rng);
}

}  // namespace seqoed::inference
