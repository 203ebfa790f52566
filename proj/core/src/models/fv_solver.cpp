#include "seqoed/models/fv_solver.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

namespace seqoed::models {

int FvGridSpec::cells() const {
  if (!(dz > 0.0) || !(z_hi > z_lo) || !(dt > 0.0)) {
    throw ConfigError("fv grid: need z_hi > z_lo, dz > 0 and dt > 0");
  }
  const double ratio = (z_hi - z_lo) / dz;
  const long n = std::lround(ratio);
  if (std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio) || n < 3) {
    std::ostringstream msg;
    msg << "fv grid: dz = " << dz << " does not divide [" << z_lo << ", " << z_hi
        << "] into at least 3 cells";
    throw ConfigError(msg.str());
  }
  return static_cast<int>(n);
}

FvGridSpec make_fv_grid(double z_lo, double z_hi, RampVelocity velocity, SolverProfile profile) {
  FvGridSpec g;
  g.z_lo = z_lo;
  g.z_hi = z_hi;
  g.velocity = velocity;
  if (profile == SolverProfile::fine) {
    g.dz = 0.01;
    g.dt = 5e-4;
  } else {
    g.dz = 0.04;
    g.dt = 2e-3;
  }
  g.cells();
  return g;
}

Field::Field(int n, double z_lo, double dz)
    : n_(n), z_lo_(z_lo), dz_(dz), values_(static_cast<std::size_t>(n) * n, 0.0) {}

Field::Stencil Field::stencil(double zx, double zy) const {
  const double hi = z_lo_ + n_ * dz_;
  const double tol = 1e-12 * std::max(1.0, std::abs(hi));
  if (!(zx >= z_lo_ - tol && zx <= hi + tol && zy >= z_lo_ - tol && zy <= hi + tol)) {
    std::ostringstream msg;
    msg << "point (" << zx << ", " << zy << ") outside the domain [" << z_lo_ << ", " << hi << "]^2";
    throw OutOfDomain(msg.str());
  }
  auto locate = [&](double z, int& i0, double& w) {
    double f = (z - z_lo_) / dz_ - 0.5;
    f = std::clamp(f, 0.0, static_cast<double>(n_ - 1));
    i0 = std::min(static_cast<int>(std::floor(f)), n_ - 2);
    w = f - i0;
  };
  int i0 = 0, j0 = 0;
  double wx = 0.0, wy = 0.0;
  locate(zx, i0, wx);
  locate(zy, j0, wy);
  Stencil s;
  s.cells = {j0 * n_ + i0, j0 * n_ + i0 + 1, (j0 + 1) * n_ + i0, (j0 + 1) * n_ + i0 + 1};
  s.weights = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
  return s;
}

double Field::at(double zx, double zy) const {
  const Stencil s = stencil(zx, zy);
  double v = 0.0;
  for (int c = 0; c < 4; ++c) v += s.weights[c] * values_[static_cast<std::size_t>(s.cells[c])];
  return v;
}

double Field::mass() const {
  double sum = 0.0;
  for (double v : values_) sum += v;
  return sum * dz_ * dz_;
}

Field source_profile(const SourceParams& source, const FvGridSpec& grid) {
  if (!(source.width > 0.0)) throw ModelFailure("source width must be positive");
  const int n = grid.cells();
  Field f(n, grid.z_lo, grid.dz);
  const double inv2w2 = 1.0 / (2.0 * source.width * source.width);
  const double scale = source.strength * inv2w2 / std::numbers::pi;
  std::vector<double> gx(static_cast<std::size_t>(n)), gy(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double dx = grid.cell_center(i) - source.x;
    const double dy = grid.cell_center(i) - source.y;
    gx[static_cast<std::size_t>(i)] = std::exp(-dx * dx * inv2w2);
    gy[static_cast<std::size_t>(i)] = std::exp(-dy * dy * inv2w2);
  }
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) f(i, j) = scale * gx[static_cast<std::size_t>(i)] * gy[static_cast<std::size_t>(j)];
  return f;
}

// ---------------------------------------------------------------------------

namespace {

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// One Fromm update along a line with closed walls: q_i - nu (F_{i+1/2} - F_{i-1/2}).
// Interior face values use mirrored ghosts; wall fluxes are zero.
void fromm_line(const double* q, double* out, int n, double nu) {
  auto at = [&](int i) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return q[i];
  };
  std::vector<double> flux(static_cast<std::size_t>(n + 1), 0.0);
  for (int f = 1; f < n; ++f) {
    const int i = f - 1;  // face between i and i + 1
    double face;
    if (nu >= 0.0) {
      face = at(i) + 0.25 * (1.0 - nu) * (at(i + 1) - at(i - 1));
    } else {
      face = at(i + 1) - 0.25 * (1.0 + nu) * (at(i + 2) - at(i));
    }
    flux[static_cast<std::size_t>(f)] = nu * face;
  }
  for (int i = 0; i < n; ++i) out[i] = q[i] - (flux[static_cast<std::size_t>(i + 1)] - flux[static_cast<std::size_t>(i)]);
}

// Pentadiagonal operator; row i holds coefficients of columns i-2 .. i+2.
struct Band {
  int n = 0;
  std::vector<std::array<double, 5>> rows;
};

Band fromm_band(int n, double nu) {
  Band b{n, std::vector<std::array<double, 5>>(static_cast<std::size_t>(n))};
  std::vector<double> probe(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
  for (int colour = 0; colour < 5; ++colour) {
    for (int j = 0; j < n; ++j) probe[static_cast<std::size_t>(j)] = (j % 5 == colour) ? 1.0 : 0.0;
    fromm_line(probe.data(), out.data(), n, nu);
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < 5; ++o) {
        const int j = i + o - 2;
        if (j >= 0 && j < n && j % 5 == colour) b.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(o)] = out[static_cast<std::size_t>(i)];
      }
    }
  }
  return b;
}

// Along x (contiguous index).
void apply_x(const Band& b, const std::vector<double>& in, std::vector<double>& out, bool transpose) {
  const int n = b.n;
  std::fill(out.begin(), out.end(), 0.0);
  for (int j = 0; j < n; ++j) {
    const double* q = in.data() + static_cast<std::ptrdiff_t>(j) * n;
    double* r = out.data() + static_cast<std::ptrdiff_t>(j) * n;
    for (int i = 0; i < n; ++i) {
      const auto& row = b.rows[static_cast<std::size_t>(i)];
      for (int o = 0; o < 5; ++o) {
        const int c = i + o - 2;
        if (c < 0 || c >= n) continue;
        if (transpose) {
          r[c] += row[static_cast<std::size_t>(o)] * q[i];
        } else {
          r[i] += row[static_cast<std::size_t>(o)] * q[c];
        }
      }
    }
  }
}

// Along y (stride n); inner loop runs over x.
void apply_y(const Band& b, const std::vector<double>& in, std::vector<double>& out, bool transpose) {
  const int n = b.n;
  std::fill(out.begin(), out.end(), 0.0);
  for (int j = 0; j < n; ++j) {
    const auto& row = b.rows[static_cast<std::size_t>(j)];
    for (int o = 0; o < 5; ++o) {
      const int c = j + o - 2;
      if (c < 0 || c >= n) continue;
      const double w = row[static_cast<std::size_t>(o)];
      if (w == 0.0) continue;
      const double* src = in.data() + static_cast<std::ptrdiff_t>(transpose ? j : c) * n;
      double* dst = out.data() + static_cast<std::ptrdiff_t>(transpose ? c : j) * n;
      for (int i = 0; i < n; ++i) dst[i] += w * src[i];
    }
  }
}

}  // namespace

struct FvSolver::Plans {
  fftw_plan forward = nullptr;  // DCT-II in both directions
  fftw_plan inverse = nullptr;  // DCT-III in both directions (unnormalized)

  explicit Plans(int n) {
    std::lock_guard lock(fftw_planner_mutex());
    const std::size_t size = static_cast<std::size_t>(n) * n;
    double* a = fftw_alloc_real(size);
    double* b = fftw_alloc_real(size);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward = fftw_plan_r2r_2d(n, n, a, b, FFTW_REDFT10, FFTW_REDFT10, flags);
    inverse = fftw_plan_r2r_2d(n, n, a, b, FFTW_REDFT01, FFTW_REDFT01, flags);
    fftw_free(a);
    fftw_free(b);
    if (!forward || !inverse) throw ModelFailure("fftw planning failed");
  }
  ~Plans() {
    std::lock_guard lock(fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (inverse) fftw_destroy_plan(inverse);
  }
  Plans(const Plans&) = delete;
  Plans& operator=(const Plans&) = delete;

  void dct(const std::vector<double>& in, std::vector<double>& out) const {
    fftw_execute_r2r(forward, const_cast<double*>(in.data()), out.data());
  }
  void idct(const std::vector<double>& in, std::vector<double>& out) const {
    fftw_execute_r2r(inverse, const_cast<double*>(in.data()), out.data());
  }
};

FvSolver::FvSolver(FvGridSpec grid) : grid_(grid), n_(grid.cells()) {
  plans_ = std::make_shared<const Plans>(n_);
  const int n = n_;
  Eigen::ArrayXd lam1(n);
  for (int p = 0; p < n; ++p) {
    const double s = std::sin(std::numbers::pi * p / (2.0 * n));
    lam1(p) = -4.0 / (grid_.dz * grid_.dz) * s * s;
  }
  const double norm = 1.0 / (4.0 * n * n);
  const double h = 0.5 * grid_.dt;
  cn_multiplier_.resize(n * n);
  source_multiplier_.resize(n * n);
  // FFTW's 2-D layout is row-major with the first dimension slow: index q*n + p.
  for (int q = 0; q < n; ++q) {
    for (int p = 0; p < n; ++p) {
      const double lam = lam1(p) + lam1(q);
      cn_multiplier_(q * n + p) = (1.0 + h * lam) / (1.0 - h * lam) * norm;
      source_multiplier_(q * n + p) = grid_.dt / (1.0 - h * lam) * norm;
    }
  }
}

int FvSolver::steps_to(double t) const {
  const double ratio = t / grid_.dt;
  const long k = std::lround(ratio);
  if (k < 0 || std::abs(ratio - static_cast<double>(k)) > 1e-6) {
    std::ostringstream msg;
    msg << "time " << t << " is not a non-negative multiple of dt = " << grid_.dt;
    throw ConfigError(msg.str());
  }
  return static_cast<int>(k);
}

void FvSolver::check_stability(double t_end) const {
  const double umax =
      std::max(std::abs(grid_.velocity.rate_x), std::abs(grid_.velocity.rate_y)) * std::max(t_end, 0.0);
  const double courant = umax * 0.5 * grid_.dt / grid_.dz;
  if (courant > 1.0 + 1e-12) {
    std::ostringstream msg;
    msg << "convective Courant number " << courant << " exceeds 1 (dt = " << grid_.dt
        << ", dz = " << grid_.dz << ", t = " << t_end << ")";
    throw StabilityViolation(msg.str());
  }
}

namespace {

struct Workspace {
  std::vector<double> a, b;
  explicit Workspace(std::size_t size) : a(size), b(size) {}
};

// state <- Cy Cx state (or Cx^T Cy^T state) for a half step at time t.
void convect(const FvGridSpec& grid, int n, double t, std::vector<double>& state, Workspace& w,
             bool transpose) {
  const Vector u = grid.velocity.at(t);
  const double scale = 0.5 * grid.dt / grid.dz;
  const double nux = u(0) * scale;
  const double nuy = u(1) * scale;
  if (!transpose) {
    if (nux != 0.0) {
      apply_x(fromm_band(n, nux), state, w.a, false);
      state.swap(w.a);
    }
    if (nuy != 0.0) {
      apply_y(fromm_band(n, nuy), state, w.a, false);
      state.swap(w.a);
    }
  } else {
    if (nuy != 0.0) {
      apply_y(fromm_band(n, nuy), state, w.a, true);
      state.swap(w.a);
    }
    if (nux != 0.0) {
      apply_x(fromm_band(n, nux), state, w.a, true);
      state.swap(w.a);
    }
  }
}

}  // namespace

std::vector<Field> FvSolver::solve(const Field* initial, const Field* source, const Amplitude& amplitude,
                                   std::span<const double> times) const {
  const int n = n_;
  const std::size_t size = static_cast<std::size_t>(n) * n;
  std::vector<int> targets;
  targets.reserve(times.size());
  for (double t : times) {
    const int k = steps_to(t);
    if (k <= 0 || (!targets.empty() && k <= targets.back())) {
      throw ConfigError("solve times must be positive and strictly increasing");
    }
    targets.push_back(k);
  }
  if (targets.empty()) return {};
  check_stability(targets.back() * grid_.dt);
  auto check_field = [&](const Field* f) {
    if (f && f->n() != n) throw ShapeMismatch("field size does not match the solver grid");
  };
  check_field(initial);
  check_field(source);

  std::vector<double> state(size, 0.0);
  if (initial) state = initial->values();
  std::vector<double> src_hat(size, 0.0);
  if (source) {
    plans_->dct(source->values(), src_hat);
    for (std::size_t c = 0; c < size; ++c) src_hat[c] *= source_multiplier_(static_cast<Eigen::Index>(c));
  }
  Workspace w(size);
  std::vector<double> hat(size);

  std::vector<Field> out;
  out.reserve(targets.size());
  int step = 0;
  for (int target : targets) {
    for (; step < target; ++step) {
      const double t0 = step * grid_.dt;
      convect(grid_, n, t0 + 0.25 * grid_.dt, state, w, false);
      plans_->dct(state, hat);
      const double a = source ? amplitude(t0 + 0.5 * grid_.dt) : 0.0;
      for (std::size_t c = 0; c < size; ++c) {
        hat[c] = cn_multiplier_(static_cast<Eigen::Index>(c)) * hat[c] + a * src_hat[c];
      }
      plans_->idct(hat, state);
      convect(grid_, n, t0 + 0.75 * grid_.dt, state, w, false);
    }
    Field f(n, grid_.z_lo, grid_.dz);
    f.values() = state;
    for (double v : state) {
      if (!std::isfinite(v)) throw ModelFailure("non-finite concentration in fv solve");
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<Field> FvSolver::solve(const SourceParams& source, std::span<const double> times) const {
  const Field s = source_profile(source, grid_);
  const double on = source.on_time;
  return solve(nullptr, &s, [on](double t) { return t >= on ? 1.0 : 0.0; }, times);
}

Field FvSolver::response_kernel(int cell, double t, double on_time) const {
  const int c = cell;
  const Eigen::MatrixXd rows = response_kernels(std::span<const int>(&c, 1), t, on_time);
  Field f(n_, grid_.z_lo, grid_.dz);
  for (std::size_t i = 0; i < f.values().size(); ++i) f.values()[i] = rows(0, static_cast<Eigen::Index>(i));
  return f;
}

Eigen::MatrixXd FvSolver::response_kernels(std::span<const int> cells, double t, double on_time) const {
  const int n = n_;
  const std::size_t size = static_cast<std::size_t>(n) * n;
  const int steps = steps_to(t);
  check_stability(steps * grid_.dt);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(size));
  Workspace w(size);
  std::vector<double> lambda(size), hat(size), acc(size), kernel(size);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const int cell = cells[r];
    if (cell < 0 || static_cast<std::size_t>(cell) >= size) throw OutOfDomain("receiver cell index out of range");
    std::fill(lambda.begin(), lambda.end(), 0.0);
    std::fill(acc.begin(), acc.end(), 0.0);
    lambda[static_cast<std::size_t>(cell)] = 1.0;
    for (int s = steps - 1; s >= 0; --s) {
      const double t0 = s * grid_.dt;
      convect(grid_, n, t0 + 0.75 * grid_.dt, lambda, w, true);
      plans_->dct(lambda, hat);
      if (t0 + 0.5 * grid_.dt >= on_time) {
        for (std::size_t c = 0; c < size; ++c) acc[c] += source_multiplier_(static_cast<Eigen::Index>(c)) * hat[c];
      }
      for (std::size_t c = 0; c < size; ++c) hat[c] *= cn_multiplier_(static_cast<Eigen::Index>(c));
      plans_->idct(hat, lambda);
      convect(grid_, n, t0 + 0.25 * grid_.dt, lambda, w, true);
    }
    plans_->idct(acc, kernel);
    for (std::size_t c = 0; c < size; ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = kernel[c];
  }
  return out;
}

std::vector<Field> fv_solve(const SourceParams& source, std::span<const double> times, const FvGridSpec& grid) {
  return FvSolver(grid).solve(source, times);
}

}  // namespace seqoed::models
