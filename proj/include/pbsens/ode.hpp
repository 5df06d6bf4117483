#pragma once

// ODE model abstraction, time grids, a classical RK4 integrator with
// internal sub-stepping, and linear interpolation of the stored solution.

#include "pbsens/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pbsens {

/// Parametrised vector field x' = f(x, u(t), p) with analytic Jacobians.
struct OdeSystem {
  std::string name;
  int n_x = 0;
  int n_u = 0;
  int n_p = 0;
  std::function<Vector(const Vector& x, const Vector& u, const Vector& p)> f;
  std::function<DenseMatrix(const Vector& x, const Vector& u, const Vector& p)> jac_x;
  std::function<DenseMatrix(const Vector& x, const Vector& u, const Vector& p)> jac_p;
  std::function<Vector(double t)> input;

  Vector u(double t) const { return input ? input(t) : Vector(n_u); }
  Vector rhs(double t, const Vector& x, const Vector& p) const { return f(x, u(t), p); }
  DenseMatrix dfdx(double t, const Vector& x, const Vector& p) const { return jac_x(x, u(t), p); }
  DenseMatrix dfdp(double t, const Vector& x, const Vector& p) const { return jac_p(x, u(t), p); }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double time, long step = -1)
      : std::runtime_error(what), time_(time), step_(step) {}
  double time() const noexcept { return time_; }
  long step() const noexcept { return step_; }

 private:
  double time_;
  long step_;
};

class OutOfRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

using TimeGrid = std::vector<double>;

inline void validate_grid(const TimeGrid& grid) {
  if (grid.size() < 2) {
    throw std::invalid_argument("time grid needs at least two points");
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!std::isfinite(grid[k])) {
      throw std::invalid_argument("time grid contains a non-finite value");
    }
    if (k > 0 && !(grid[k] > grid[k - 1])) {
      std::ostringstream msg;
      msg << "time grid not strictly increasing at index " << k;
      throw std::invalid_argument(msg.str());
    }
  }
}

/// t0, t0 + dt, ..., t1. The step count is rounded so the last node is t1.
inline TimeGrid uniform_grid(double t0, double t1, double dt) {
  if (!(t1 > t0) || !(dt > 0.0)) {
    throw std::invalid_argument("uniform_grid: need t1 > t0 and dt > 0");
  }
  const auto steps = std::max<long>(1, std::lround((t1 - t0) / dt));
  TimeGrid grid(static_cast<std::size_t>(steps) + 1);
  for (long k = 0; k <= steps; ++k) {
    grid[static_cast<std::size_t>(k)] = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(steps);
  }
  grid.back() = t1;
  return grid;
}

/// Uniform grid with every interior node moved by up to +-jitter*dt.
inline TimeGrid jittered_grid(double t0, double t1, double dt, std::uint64_t seed, double jitter = 0.2) {
  TimeGrid grid = uniform_grid(t0, t1, dt);
  if (jitter < 0.0 || jitter >= 0.5) {
    throw std::invalid_argument("jittered_grid: jitter must lie in [0, 0.5)");
  }
  const double h = grid[1] - grid[0];
  std::mt19937_64 gen(seed);
  for (std::size_t k = 1; k + 1 < grid.size(); ++k) {
    const double unit = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    grid[k] += (2.0 * unit - 1.0) * jitter * h;
  }
  return grid;
}

struct Trajectory {
  TimeGrid times;
  std::vector<Vector> states;
  Vector parameters;

  std::size_t size() const { return times.size(); }
  double dt_max() const {
    double m = 0.0;
    for (std::size_t k = 1; k < times.size(); ++k) m = std::max(m, times[k] - times[k - 1]);
    return m;
  }
  double dt_min() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < times.size(); ++k) m = std::min(m, times[k] - times[k - 1]);
    return m;
  }
};

struct IntegratorOptions {
  /// Upper bound on the internal RK4 step.
  double h_target = 1e-2;
  /// Each sub-step also satisfies h * ||df/dx||_F <= stability_limit, which
  /// keeps RK4 inside its real-axis stability interval (|z| <= 2.78).
  double stability_limit = 2.0;
};

namespace detail {

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace detail

/// Generic fixed-grid RK4 driver. `rhs(t, y)` is the vector field and
/// `stiffness(t, y)` an upper estimate of the Jacobian norm used to bound
/// the sub-step; it is evaluated once per output interval.
template <class Rhs, class Stiffness>
std::vector<Vector> rk4_on_grid(Rhs&& rhs, Stiffness&& stiffness, const Vector& y0,
                                const TimeGrid& grid, const IntegratorOptions& opts = {}) {
  validate_grid(grid);
  if (!detail::all_finite(y0)) {
    throw DivergenceError("non-finite initial state", grid.front(), 0);
  }
  std::vector<Vector> out;
  out.reserve(grid.size());
  out.push_back(y0);
  Vector y = y0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double ta = grid[k];
    const double span = grid[k + 1] - ta;
    double count = std::ceil(span / opts.h_target);
    const double stiff = stiffness(ta, y);
    if (std::isfinite(stiff) && stiff > 0.0) {
      count = std::max(count, std::ceil(span * stiff / opts.stability_limit));
    }
    const long sub = std::max<long>(1, static_cast<long>(count));
    const double h = span / static_cast<double>(sub);
    for (long s = 0; s < sub; ++s) {
      const double t = ta + h * static_cast<double>(s);
      const Vector k1 = rhs(t, y);
      const Vector k2 = rhs(t + 0.5 * h, Vector(y + (0.5 * h) * k1));
      const Vector k3 = rhs(t + 0.5 * h, Vector(y + (0.5 * h) * k2));
      const Vector k4 = rhs(t + h, Vector(y + h * k3));
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!detail::all_finite(y)) {
        const double when = t + h;
        std::ostringstream msg;
        msg << "integration diverged at t = " << when;
        throw DivergenceError(msg.str(), when, static_cast<long>(k + 1));
      }
    }
    out.push_back(y);
  }
  return out;
}

/// Integrates `system` from x0 and returns the states at exactly the grid
/// points.
inline Trajectory integrate(const OdeSystem& system, const Vector& p, const Vector& x0,
                            const TimeGrid& grid, const IntegratorOptions& opts = {}) {
  if (x0.size() != system.n_x) {
    throw DimensionError("integrate: x0 has length " + std::to_string(x0.size()) + ", expected " +
                         std::to_string(system.n_x));
  }
  if (p.size() != system.n_p) {
    throw DimensionError("integrate: p has length " + std::to_string(p.size()) + ", expected " +
                         std::to_string(system.n_p));
  }
  auto rhs = [&](double t, const Vector& x) { return system.rhs(t, x, p); };
  auto stiffness = [&](double t, const Vector& x) { return frobenius_norm(system.dfdx(t, x, p)); };
  Trajectory traj;
  traj.times = grid;
  traj.states = rk4_on_grid(rhs, stiffness, x0, grid, opts);
  traj.parameters = p;
  return traj;
}

/// Index k with times[k] <= t <= times[k+1].
inline std::size_t bracket(const TimeGrid& times, double t) {
  if (times.empty() || t < times.front() || t > times.back() || std::isnan(t)) {
    std::ostringstream msg;
    msg << "time " << t << " outside the trajectory span";
    throw OutOfRangeError(msg.str());
  }
  if (times.size() == 1) return 0;
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.end()) return times.size() - 2;
  return static_cast<std::size_t>(std::distance(times.begin(), it)) - 1;
}

/// Piecewise linear interpolant of the stored states; exact at grid nodes.
inline Vector interpolate(const Trajectory& traj, double t) {
  const std::size_t k = bracket(traj.times, t);
  const double ta = traj.times[k];
  if (t == ta) return traj.states[k];
  if (k + 1 >= traj.times.size()) return traj.states.back();
  const double tb = traj.times[k + 1];
  if (t == tb) return traj.states[k + 1];
  const double theta = (t - ta) / (tb - ta);
  return traj.states[k] + theta * (traj.states[k + 1] - traj.states[k]);
}

}  // namespace pbsens
