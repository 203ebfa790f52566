#include "seqoed/models/source_inversion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "seqoed/models/surrogate.hpp"
#include "seqoed/parallel.hpp"

namespace seqoed::models {

namespace {

Box square(double lo, double hi) {
  return Box{Vector::Constant(2, lo), Vector::Constant(2, hi)};
}

void check_prior(const PriorDim& p, const std::string& field, double min_lo) {
  if (p.kind != PriorDim::Kind::uniform) {
    throw ConfigError(field + ": source parameters need a uniform prior");
  }
  if (!(p.b > p.a) || p.a < min_lo) {
    std::ostringstream os;
    os << field << ": need " << min_lo << " <= lo < hi, got [" << p.a << ", " << p.b << "]";
    throw ConfigError(os.str());
  }
}

}  // namespace

int CaseConfig::theta_dim() const {
  return 2 + (prior_width ? 1 : 0) + (prior_strength ? 1 : 0);
}

std::vector<PriorDim> CaseConfig::prior() const {
  std::vector<PriorDim> p{prior_x, prior_y};
  if (prior_width) p.push_back(*prior_width);
  if (prior_strength) p.push_back(*prior_strength);
  return p;
}

Box CaseConfig::sensor_region() const {
  if (constraint.kind == DesignConstraint::Kind::state_box) return constraint.region;
  Box b{initial_position + horizon * constraint.region.lo.cwiseMin(0.0),
        initial_position + horizon * constraint.region.hi.cwiseMax(0.0)};
  return b;
}

void CaseConfig::validate() const {
  auto fail = [&](const std::string& what) { throw ConfigError(name + ": " + what); };
  if (horizon < 1) fail("horizon must be >= 1");
  if (!(z_hi > z_lo)) fail("domain needs z_lo < z_hi");
  if (static_cast<int>(times.size()) != horizon) fail("experiment_times needs one entry per stage");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] > 0.0) || (k > 0 && !(times[k] > times[k - 1]))) {
      fail("experiment_times must be positive and increasing");
    }
  }
  check_prior(prior_x, name + ": prior_x", -1e300);
  check_prior(prior_y, name + ": prior_y", -1e300);
  if (prior_width) check_prior(*prior_width, name + ": prior_width", 1e-12);
  else if (!(width > 0.0)) fail("width must be positive");
  if (prior_strength) check_prior(*prior_strength, name + ": prior_strength", 0.0);
  else if (!(strength >= 0.0)) fail("strength must be non-negative");
  if (initial_position.size() != 2) fail("initial_position must have 2 entries");
  if (constraint.region.dim() != 2) fail("design constraint must be 2-D");
  if ((constraint.region.hi - constraint.region.lo).minCoeff() < 0.0) fail("design constraint is empty");
  const Box domain = square(z_lo, z_hi);
  if (!domain.contains(initial_position)) fail("initial_position outside the domain");
  const Box region = sensor_region();
  if (!domain.contains(region.lo, 1e-12) || !domain.contains(region.hi, 1e-12)) {
    fail("reachable sensor positions leave the computational domain");
  }
  if (constraint.kind == DesignConstraint::Kind::state_box && !constraint.region.contains(initial_position)) {
    fail("initial_position violates the state constraint");
  }
  if (!(noise_sigma > 0.0)) fail("noise_sigma must be positive");
  if (!(cost.coefficient >= 0.0)) fail("cost coefficient must be non-negative");
  if (train_grid_nodes < 2 || eval_grid_nodes < 2) fail("grid nodes must be >= 2");
}

CaseConfig case_config(int id) {
  CaseConfig c;
  c.id = id;
  c.initial_position = Vector::Constant(2, 0.5);
  c.prior_x = PriorDim::uniform(0.0, 1.0);
  c.prior_y = PriorDim::uniform(0.0, 1.0);
  const RampVelocity ramp{50.0, 50.0};  // 10 t / 0.2
  switch (id) {
    case 1:
      c.name = "source_case1";
      c.horizon = 2;
      c.width = 0.05;
      c.strength = 2.0;
      c.source_on_time = 0.16;
      c.constraint = {DesignConstraint::Kind::box, square(-0.25, 0.25)};
      c.z_lo = 0.0;
      c.z_hi = 1.0;
      c.times = {0.15, 0.32};
      c.velocity = RampVelocity{};
      c.noise_sigma = 0.1;
      c.cost = {CostSpec::Kind::squared_norm, 0.5, c.velocity};
      break;
    case 2:
      c.name = "source_case2";
      c.horizon = 2;
      c.width = 0.05;
      c.strength = 2.0;
      c.constraint = {DesignConstraint::Kind::box, square(-0.25, 0.25)};
      c.z_lo = -1.0;
      c.z_hi = 2.0;
      c.times = {0.05, 0.2};
      c.velocity = ramp;
      c.noise_sigma = 0.05;
      c.cost = {CostSpec::Kind::squared_norm, 0.0, ramp};
      break;
    case 3:
      c.name = "source_case3";
      c.horizon = 4;
      c.prior_width = PriorDim::uniform(0.02, 0.1);
      c.prior_strength = PriorDim::uniform(0.0, 5.0);
      c.constraint = {DesignConstraint::Kind::state_box, square(0.0, 1.0)};
      c.z_lo = -1.0;
      c.z_hi = 2.0;
      c.times = {0.05, 0.1, 0.15, 0.2};
      c.velocity = ramp;
      c.noise_sigma = 0.05;
      c.cost = {CostSpec::Kind::wind_adjusted, 0.2, ramp};
      // A 50^4 grid does not fit the tables in memory.
      c.train_grid_nodes = 20;
      c.eval_grid_nodes = 20;
      break;
    default:
      throw ConfigError("unknown source-inversion case " + std::to_string(id) + " (expected 1, 2 or 3)");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

struct SourceInversionModel::Kernels {
  Field geometry;  // only for stencils
  int i0 = 0, j0 = 0, nx = 0, ny = 0;
  std::vector<Eigen::MatrixXd> w;  // per stage: cells x receivers

  int receiver(int cell) const {
    const int n = geometry.n();
    const int i = cell % n - i0;
    const int j = cell / n - j0;
    if (i < 0 || i >= nx || j < 0 || j >= ny) return -1;
    return j * nx + i;
  }
  int receivers() const { return nx * ny; }
};

struct SourceInversionModel::GridTable {
  std::vector<std::vector<double>> axes;
  Eigen::Index unit_nodes = 0;
  std::vector<double> strengths;  // empty when the strength is fixed (folded in)
  std::vector<Eigen::MatrixXd> t;  // per stage: unit_nodes x receivers
};

SourceInversionModel::SourceInversionModel(CaseConfig config, FvGridSpec grid, Engine engine,
                                           std::shared_ptr<const SurrogateModel> surrogate, int threads)
    : config_(std::move(config)), solver_(grid), engine_(engine), surrogate_(std::move(surrogate)),
      threads_(threads) {
  config_.validate();
  solver_.check_stability(config_.times.back());
  for (double t : config_.times) solver_.steps_to(t);
  if (engine_ == Engine::surrogate) {
    if (!surrogate_) throw ConfigError("surrogate engine selected but no surrogate model given");
    if (surrogate_->stages() != config_.horizon || surrogate_->input_dim() != 2 + config_.theta_dim()) {
      throw ArchMismatch("surrogate does not match the case (stages or input dimension)");
    }
  }
}

SourceInversionModel::~SourceInversionModel() = default;

SourceParams SourceInversionModel::source_params(const Vector& theta) const {
  if (theta.size() != config_.theta_dim()) throw ShapeMismatch("source parameter vector has wrong size");
  SourceParams p;
  p.x = theta[0];
  p.y = theta[1];
  Eigen::Index next = 2;
  p.width = config_.prior_width ? theta[next++] : config_.width;
  p.strength = config_.prior_strength ? theta[next++] : config_.strength;
  p.on_time = config_.source_on_time;
  return p;
}

Vector SourceInversionModel::sensor_position(const Vector& design, const State& state) const {
  if (state.stage < 0 || state.stage >= config_.horizon) throw HorizonExceeded("stage outside the horizon");
  if (design.size() != 2 || state.physical.position.size() != 2) {
    throw ShapeMismatch("source inversion expects 2-D designs and positions");
  }
  return state.physical.position + design;
}

void SourceInversionModel::prepare() const {
  if (engine_ == Engine::fv) kernels();
}

const SourceInversionModel::Kernels& SourceInversionModel::kernels() const {
  std::call_once(kernels_once_, [this] {
    auto k = std::make_unique<Kernels>();
    const auto& g = solver_.grid();
    const int n = solver_.cells();
    k->geometry = Field(n, g.z_lo, g.dz);
    const Box region = config_.sensor_region();
    const auto lo = k->geometry.stencil(region.lo[0], region.lo[1]);
    const auto hi = k->geometry.stencil(region.hi[0], region.hi[1]);
    const int i_lo = std::max(0, lo.cells[0] % n - 1), j_lo = std::max(0, lo.cells[0] / n - 1);
    const int i_hi = std::min(n - 1, hi.cells[3] % n + 1), j_hi = std::min(n - 1, hi.cells[3] / n + 1);
    k->i0 = i_lo;
    k->j0 = j_lo;
    k->nx = i_hi - i_lo + 1;
    k->ny = j_hi - j_lo + 1;
    std::vector<int> cells;
    for (int j = j_lo; j <= j_hi; ++j)
      for (int i = i_lo; i <= i_hi; ++i) cells.push_back(j * n + i);
    const auto size = static_cast<Eigen::Index>(n) * n;
    for (double t : config_.times) {
      Eigen::MatrixXd w(size, static_cast<Eigen::Index>(cells.size()));
      parallel_for(cells.size(), threads_, [&](std::size_t b, std::size_t e) {
        const Eigen::MatrixXd rows = solver_.response_kernels(
            std::span<const int>(cells.data() + b, e - b), t, config_.source_on_time);
        w.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) = rows.transpose();
      });
      k->w.push_back(std::move(w));
    }
    kernels_ = std::move(k);
  });
  return *kernels_;
}

namespace {

double kernel_read(const SourceInversionModel::Kernels& k, const Eigen::MatrixXd& w,
                   const Vector& position, const Eigen::VectorXd& source);

}  // namespace

double SourceInversionModel::concentration(const Vector& theta, int stage, const Vector& position) const {
  if (stage < 0 || stage >= config_.horizon) throw HorizonExceeded("stage outside the horizon");
  if (engine_ == Engine::surrogate) return surrogate_->predict(stage, position, theta);
  const Field s = source_profile(source_params(theta), solver_.grid());
  const auto& k = kernels();
  return kernel_read(k, k.w[static_cast<std::size_t>(stage)], position,
                     Eigen::Map<const Eigen::VectorXd>(s.values().data(), static_cast<Eigen::Index>(s.values().size())));
}

namespace {

double kernel_read(const SourceInversionModel::Kernels& k, const Eigen::MatrixXd& w,
                   const Vector& position, const Eigen::VectorXd& source) {
  const auto st = k.geometry.stencil(position[0], position[1]);
  double g = 0.0;
  for (int c = 0; c < 4; ++c) {
    if (st.weights[static_cast<std::size_t>(c)] == 0.0) continue;
    const int r = k.receiver(st.cells[static_cast<std::size_t>(c)]);
    if (r < 0) throw OutOfDomain("sensor position outside the reachable region");
    g += st.weights[static_cast<std::size_t>(c)] * w.col(r).dot(source);
  }
  return g;
}

}  // namespace

Vector SourceInversionModel::predict(const Vector& theta, const Vector& design, const State& state) const {
  Vector out(1);
  out[0] = concentration(theta, state.stage, sensor_position(design, state));
  return out;
}

std::unique_ptr<BoundModel> SourceInversionModel::bind(const Vector& theta) const {
  if (engine_ == Engine::surrogate) return ForwardModel::bind(theta);
  struct Bound final : BoundModel {
    const SourceInversionModel* model;
    const Kernels* k;
    Eigen::VectorXd source;
    Vector predict(const Vector& design, const State& state) const override {
      const Vector pos = model->sensor_position(design, state);
      Vector out(1);
      out[0] = kernel_read(*k, k->w[static_cast<std::size_t>(state.stage)], pos, source);
      return out;
    }
  };
  auto b = std::make_unique<Bound>();
  b->model = this;
  b->k = &kernels();
  const Field s = source_profile(source_params(theta), solver_.grid());
  b->source = Eigen::Map<const Eigen::VectorXd>(s.values().data(), static_cast<Eigen::Index>(s.values().size()));
  return b;
}

std::shared_ptr<const SourceInversionModel::GridTable> SourceInversionModel::table_for(
    const inference::BeliefGrid& grid) const {
  {
    std::lock_guard lock(tables_mutex_);
    for (const auto& t : tables_)
      if (t->axes == grid.axes()) return t;
  }
  if (grid.dim() != config_.theta_dim()) throw GridMismatch("belief grid dimension does not match the case");
  const auto& k = kernels();
  auto table = std::make_shared<GridTable>();
  table->axes = grid.axes();
  const auto& xs = grid.axes()[0];
  const auto& ys = grid.axes()[1];
  std::vector<double> widths{config_.width};
  std::size_t next = 2;
  if (config_.prior_width) widths = grid.axes()[next++];
  double folded = config_.strength;
  if (config_.prior_strength) {
    table->strengths = grid.axes()[next++];
    folded = 1.0;
  }
  const auto nxa = static_cast<Eigen::Index>(xs.size());
  const auto nya = static_cast<Eigen::Index>(ys.size());
  const Eigen::Index block = nxa * nya;
  table->unit_nodes = block * static_cast<Eigen::Index>(widths.size());

  const int n = solver_.cells();
  const auto& g = solver_.grid();
  // Separable source: S = c(h) gx(z_x) gy(z_y), so each block is Gx^T W Gy.
  std::vector<Eigen::MatrixXd> gx(widths.size()), gy(widths.size());
  std::vector<double> scale(widths.size());
  for (std::size_t c = 0; c < widths.size(); ++c) {
    const double h = widths[c];
    const double inv = 1.0 / (2.0 * h * h);
    scale[c] = folded * inv / std::numbers::pi;
    gx[c].resize(n, nxa);
    gy[c].resize(n, nya);
    for (int i = 0; i < n; ++i) {
      const double z = g.cell_center(i);
      for (Eigen::Index a = 0; a < nxa; ++a) gx[c](i, a) = std::exp(-(z - xs[static_cast<std::size_t>(a)]) * (z - xs[static_cast<std::size_t>(a)]) * inv);
      for (Eigen::Index b = 0; b < nya; ++b) gy[c](i, b) = std::exp(-(z - ys[static_cast<std::size_t>(b)]) * (z - ys[static_cast<std::size_t>(b)]) * inv);
    }
  }
  const int receivers = k.receivers();
  for (std::size_t stage = 0; stage < k.w.size(); ++stage) {
    Eigen::MatrixXd t(table->unit_nodes, receivers);
    const Eigen::MatrixXd& w = k.w[stage];
    parallel_for(static_cast<std::size_t>(receivers), threads_, [&](std::size_t b, std::size_t e) {
      Eigen::MatrixXd tmp, res;
      for (std::size_t r = b; r < e; ++r) {
        Eigen::Map<const Eigen::MatrixXd> m(w.col(static_cast<Eigen::Index>(r)).data(), n, n);
        for (std::size_t c = 0; c < widths.size(); ++c) {
          tmp.noalias() = gx[c].transpose() * m;
          res.noalias() = tmp * gy[c];
          t.col(static_cast<Eigen::Index>(r)).segment(static_cast<Eigen::Index>(c) * block, block) =
              scale[c] * Eigen::Map<const Eigen::VectorXd>(res.data(), block);
        }
      }
    });
    table->t.push_back(std::move(t));
  }
  std::lock_guard lock(tables_mutex_);
  for (const auto& t : tables_)
    if (t->axes == grid.axes()) return t;
  if (tables_.size() >= 4) tables_.erase(tables_.begin());
  tables_.push_back(table);
  return table;
}

void SourceInversionModel::predict_on_grid(const inference::BeliefGrid& grid, const Vector& design,
                                           const State& state, Eigen::Ref<Eigen::MatrixXd> out) const {
  const Vector pos = sensor_position(design, state);
  if (out.rows() != grid.size() || out.cols() != 1) throw ShapeMismatch("predict_on_grid: output shape");
  if (engine_ == Engine::surrogate) {
    Eigen::MatrixXd inputs(2 + grid.dim(), grid.size());
    inputs.topRows(2) = pos.replicate(1, grid.size());
    inputs.bottomRows(grid.dim()) = grid.nodes();
    out.col(0) = surrogate_->predict_batch(state.stage, inputs);
    return;
  }
  const auto table = table_for(grid);
  const auto& k = kernels();
  const Eigen::MatrixXd& t = table->t[static_cast<std::size_t>(state.stage)];
  const auto st = k.geometry.stencil(pos[0], pos[1]);
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(table->unit_nodes);
  for (int c = 0; c < 4; ++c) {
    const double w = st.weights[static_cast<std::size_t>(c)];
    if (w == 0.0) continue;
    const int r = k.receiver(st.cells[static_cast<std::size_t>(c)]);
    if (r < 0) throw OutOfDomain("sensor position outside the reachable region");
    unit.noalias() += w * t.col(r);
  }
  if (table->strengths.empty()) {
    out.col(0) = unit;
  } else {
    for (std::size_t s = 0; s < table->strengths.size(); ++s) {
      out.col(0).segment(static_cast<Eigen::Index>(s) * table->unit_nodes, table->unit_nodes) =
          table->strengths[s] * unit;
    }
  }
}

std::vector<Field> SourceInversionModel::solve_fields(const Vector& theta) const {
  return solver_.solve(source_params(theta), config_.times);
}

double cd_forward(const SourceInversionModel& model, const Vector& theta, const Vector& design,
                  const State& state) {
  return model.predict(theta, design, state)[0];
}

ProblemSpec source_inversion_problem(const CaseConfig& config, SolverProfile profile, Engine engine,
                                     std::shared_ptr<const SurrogateModel> surrogate, int threads) {
  config.validate();
  ProblemSpec p;
  p.name = config.name;
  p.horizon = config.horizon;
  p.theta_dim = config.theta_dim();
  p.design_dim = 2;
  p.obs_dim = 1;
  p.prior = config.prior();
  p.constraint = config.constraint;
  p.initial_position = config.initial_position;
  p.model = std::make_shared<SourceInversionModel>(
      config, make_fv_grid(config.z_lo, config.z_hi, config.velocity, profile), engine,
      std::move(surrogate), threads);
  p.noise = NoiseModel{config.noise_sigma, true};
  p.cost = config.cost;
  p.terminal = TerminalSpec{};
  p.experiment_times = config.times;
  p.train_grid_nodes = config.train_grid_nodes;
  p.eval_grid_nodes = config.eval_grid_nodes;
  p.validate();
  return p;
}

}  // namespace seqoed::models
