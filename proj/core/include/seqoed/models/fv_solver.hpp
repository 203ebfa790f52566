#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "seqoed/core.hpp"

namespace seqoed::models {

/// Uniform cell-centered grid on [z_lo, z_hi]^2 with a fixed time step.
struct FvGridSpec {
  double z_lo = 0.0;
  double z_hi = 1.0;
  double dz = 0.04;
  double dt = 2e-3;
  RampVelocity velocity;

  /// Number of cells per side; throws ConfigError unless dz divides the domain.
  int cells() const;
  double cell_center(int i) const { return z_lo + (i + 0.5) * dz; }
};

/// Resolution profiles: `fine` uses dz = 0.01, dt = 5e-4; `desk` uses
/// dz = 0.04, dt = 2e-3 for runs that must finish on a laptop core.
enum class SolverProfile { fine, desk };

FvGridSpec make_fv_grid(double z_lo, double z_hi, RampVelocity velocity, SolverProfile profile);

/// Gaussian plume source
///   S(z) = strength / (2 pi width^2) exp(-|z - (x, y)|^2 / (2 width^2)),
/// active for t >= on_time.
struct SourceParams {
  double x = 0.5;
  double y = 0.5;
  double width = 0.05;
  double strength = 1.0;
  double on_time = 0.0;
};

/// Cell-centered scalar field, row-major with y as the slow index.
class Field {
 public:
  Field() = default;
  Field(int n, double z_lo, double dz);

  int n() const { return n_; }
  double z_lo() const { return z_lo_; }
  double dz() const { return dz_; }
  double& operator()(int i, int j) { return values_[static_cast<std::size_t>(j * n_ + i)]; }
  double operator()(int i, int j) const { return values_[static_cast<std::size_t>(j * n_ + i)]; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  /// The four cells and weights used to interpolate at z. Between the outermost
  /// cell centers and the wall the field is extended as a constant.
  struct Stencil {
    std::array<int, 4> cells{};  // linear indices
    std::array<double, 4> weights{};
  };
  Stencil stencil(double zx, double zy) const;

  /// Bilinear interpolation; OutOfDomain outside the grid.
  double at(double zx, double zy) const;
  /// Integral over the domain (midpoint rule).
  double mass() const;

 private:
  int n_ = 0;
  double z_lo_ = 0.0;
  double dz_ = 1.0;
  std::vector<double> values_;
};

Field source_profile(const SourceParams& source, const FvGridSpec& grid);

/// Solver for dG/dt = lap G - u(t) . grad G + S on a square with homogeneous
/// Neumann walls and G(z, 0) = 0.
///
/// Each step of length dt is Strang split: half a step of convection, a
/// Crank-Nicolson diffusion step that also absorbs the source (evaluated at
/// the step midpoint), and another half step of convection. Convection uses
/// Fromm's scheme (unlimited, second order, stable for Courant number <= 1)
/// with mirrored ghost cells; diffusion is solved exactly in the cosine basis
/// that diagonalizes the Neumann Laplacian, so it conserves mass to rounding.
class FvSolver {
 public:
  explicit FvSolver(FvGridSpec grid);

  const FvGridSpec& grid() const { return grid_; }
  int cells() const { return n_; }

  /// Step count reaching time t; throws ConfigError unless t is a multiple of dt.
  int steps_to(double t) const;

  /// Throws StabilityViolation when the half-step Courant number exceeds 1
  /// for the largest velocity on [0, t_end].
  void check_stability(double t_end) const;

  using Amplitude = std::function<double(double)>;

  /// General solve. `initial` and `source` may be null (zero). The source
  /// is multiplied by amplitude(t) at each step midpoint. Returns the field at
  /// every requested time (sorted, > 0).
  std::vector<Field> solve(const Field* initial, const Field* source, const Amplitude& amplitude,
                           std::span<const double> times) const;

  std::vector<Field> solve(const SourceParams& source, std::span<const double> times) const;

  /// Discrete adjoint of solve(): returns W with
  ///   G_cell(t) = sum_c W[c] S[c]
  /// for zero initial data and the source S switched on for t >= on_time.
  Field response_kernel(int cell, double t, double on_time) const;

  /// response_kernel for several cells at once; one row per cell.
  Eigen::MatrixXd response_kernels(std::span<const int> cells, double t, double on_time) const;

  struct Plans;

 private:
  FvGridSpec grid_;
  int n_ = 0;
  std::shared_ptr<const Plans> plans_;
  Eigen::ArrayXd cn_multiplier_;      // (1 + dt/2 lambda) / (1 - dt/2 lambda) / (4 n^2)
  Eigen::ArrayXd source_multiplier_;  // dt / (1 - dt/2 lambda) / (4 n^2)
};

std::vector<Field> fv_solve(const SourceParams& source, std::span<const double> times,
                            const FvGridSpec& grid);

}  // namespace seqoed::models
