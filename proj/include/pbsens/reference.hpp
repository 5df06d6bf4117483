#pragma once

// Reference sensitivities: forward sensitivity on the augmented system
// (x, S) and central finite differences in p. Plus the per-step relative
// error used to compare methods.

#include "pbsens/linalg.hpp"
#include "pbsens/ode.hpp"
#include "pbsens/sensitivity.hpp"

#include <cmath>
#include <future>
#include <utility>
#include <vector>

namespace pbsens {

/// Augmented state [x; vec(S)] with S flattened one parameter column after
/// another (column-major), length n_x * (n_p + 1).
struct AugmentedState {
  int n_x = 0;
  int n_p = 0;

  Vector flatten(const Vector& x, const DenseMatrix& s) const {
    Vector y(static_cast<Eigen::Index>(n_x) * (n_p + 1));
    y.head(n_x) = x;
    y.tail(static_cast<Eigen::Index>(n_x) * n_p) = Eigen::Map<const Vector>(s.data(), s.size());
    return y;
  }
  Vector state(const Vector& y) const { return y.head(n_x); }
  DenseMatrix sensitivity(const Vector& y) const {
    return Eigen::Map<const DenseMatrix>(y.data() + n_x, n_x, n_p);
  }
};

/// Integrates x' = f and S' = df/dx S + df/dp together from S(t0) = 0.
inline std::pair<Trajectory, SensitivityTrajectory> run_forward_sensitivity(
    const OdeSystem& system, const Vector& p, const Vector& x0, const TimeGrid& grid,
    const IntegratorOptions& opts = {}) {
  if (x0.size() != system.n_x || p.size() != system.n_p) {
    throw DimensionError("run_forward_sensitivity: x0 or p has the wrong length");
  }
  const AugmentedState layout{system.n_x, system.n_p};
  const Eigen::Index nx = system.n_x;
  const Eigen::Index np = system.n_p;

  auto rhs = [&](double t, const Vector& y) {
    const Vector u = system.u(t);
    const Vector x = y.head(nx);
    Vector dy(y.size());
    dy.head(nx) = system.f(x, u, p);
    Eigen::Map<const DenseMatrix> s(y.data() + nx, nx, np);
    Eigen::Map<DenseMatrix> ds(dy.data() + nx, nx, np);
    ds = system.jac_p(x, u, p);
    ds.noalias() += system.jac_x(x, u, p) * s;
    return dy;
  };
  // The augmented Jacobian is block lower triangular with df/dx on the
  // diagonal, so its spectrum is that of df/dx.
  auto stiffness = [&](double t, const Vector& y) {
    return frobenius_norm(system.dfdx(t, Vector(y.head(nx)), p));
  };

  const Vector y0 = layout.flatten(x0, DenseMatrix::Zero(nx, np));
  const std::vector<Vector> ys = rk4_on_grid(rhs, stiffness, y0, grid, opts);

  Trajectory traj;
  traj.times = grid;
  traj.parameters = p;
  traj.states.reserve(ys.size());
  SensitivityTrajectory sens;
  sens.times = grid;
  sens.method = Method::Fs;
  sens.matrices.reserve(ys.size());
  for (const Vector& y : ys) {
    traj.states.push_back(layout.state(y));
    sens.matrices.push_back(layout.sensitivity(y));
  }
  sens.equilibrium_flags.assign(ys.size(), false);
  sens.singular_flags.assign(ys.size(), false);
  return {std::move(traj), std::move(sens)};
}

/// Perturbation for parameter i: h * max(1, |p_i|).
inline double fd_step(double h, double p_i) { return h * std::max(1.0, std::abs(p_i)); }

/// Central differences in each parameter; column i is
/// (x(t; p + h_i e_i) - x(t; p - h_i e_i)) / (2 h_i). With `parallel` the
/// 2 n_p integrations run as async tasks.
inline SensitivityTrajectory finite_difference_sensitivity(const OdeSystem& system, const Vector& p,
                                                           const Vector& x0, const TimeGrid& grid,
                                                           double h = 1e-5,
                                                           const IntegratorOptions& opts = {},
                                                           bool parallel = false) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_sensitivity: h must be positive");
  if (p.size() != system.n_p) throw DimensionError("finite_difference_sensitivity: p has the wrong length");
  validate_grid(grid);

  auto column = [&](int i) {
    const double step = fd_step(h, p[i]);
    Vector plus = p;
    Vector minus = p;
    plus[i] += step;
    minus[i] -= step;
    const Trajectory up = integrate(system, plus, x0, grid, opts);
    const Trajectory down = integrate(system, minus, x0, grid, opts);
    // Divide by the realised difference so rounding of p +- step cancels.
    const double width = plus[i] - minus[i];
    std::vector<Vector> col(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) col[k] = (up.states[k] - down.states[k]) / width;
    return col;
  };

  std::vector<std::vector<Vector>> columns(static_cast<std::size_t>(system.n_p));
  if (parallel) {
    std::vector<std::future<std::vector<Vector>>> jobs;
    for (int i = 0; i < system.n_p; ++i) jobs.push_back(std::async(std::launch::async, column, i));
    for (int i = 0; i < system.n_p; ++i) columns[static_cast<std::size_t>(i)] = jobs[static_cast<std::size_t>(i)].get();
  } else {
    for (int i = 0; i < system.n_p; ++i) columns[static_cast<std::size_t>(i)] = column(i);
  }

  SensitivityTrajectory out;
  out.times = grid;
  out.method = Method::Fd;
  out.matrices.assign(grid.size(), DenseMatrix::Zero(system.n_x, system.n_p));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (int i = 0; i < system.n_p; ++i) out.matrices[k].col(i) = columns[static_cast<std::size_t>(i)][k];
  }
  // S(t0) = 0 exactly: both perturbed runs start from the same x0.
  out.matrices.front().setZero();
  out.equilibrium_flags.assign(grid.size(), false);
  out.singular_flags.assign(grid.size(), false);
  return out;
}

/// re_k = ||S_cand - S_ref||_F / ||S_ref||_F, or the absolute error where the
/// reference is exactly zero.
inline std::vector<double> relative_error(const SensitivityTrajectory& candidate,
                                          const SensitivityTrajectory& reference) {
  if (candidate.times != reference.times || candidate.matrices.size() != reference.matrices.size()) {
    throw std::invalid_argument("relative_error: candidate and reference grids differ");
  }
  std::vector<double> re(reference.matrices.size());
  for (std::size_t k = 0; k < re.size(); ++k) {
    const DenseMatrix& c = candidate.matrices[k];
    const DenseMatrix& r = reference.matrices[k];
    if (c.rows() != r.rows() || c.cols() != r.cols()) {
      throw DimensionError("relative_error: sensitivity shapes differ at step " + std::to_string(k));
    }
    const double denom = frobenius_norm(r);
    const double diff = frobenius_norm(c - r);
    re[k] = denom == 0.0 ? diff : diff / denom;
  }
  return re;
}

}  // namespace pbsens
