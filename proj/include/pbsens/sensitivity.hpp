#pragma once

// Sensitivity propagation S' = A(t) S + B(t), S(t0) = 0, on the grid of a
// precomputed state trajectory. Two single-interval updates are provided:
//
//   * the truncated Peano-Baker step, where the state-transition matrix is
//     I + I1 + I2 with trapezoidal approximations of the first two iterated
//     integrals, and the forcing integral is also trapezoidal;
//   * the exponential step, exact when A and B are constant on the interval.
//
// run_pbsr switches between them per interval and refines intervals where
// the Jacobian moves; run_exp always uses the exponential step.

#include "pbsens/linalg.hpp"
#include "pbsens/ode.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace pbsens {

enum class Method { Pbsr, Exp, Pbs, Fs, Fd };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Pbsr: return "pbsr";
    case Method::Exp: return "exp";
    case Method::Pbs: return "pbs";
    case Method::Fs: return "fs";
    case Method::Fd: return "fd";
  }
  return "?";
}

struct SensitivityTrajectory {
  TimeGrid times;
  std::vector<DenseMatrix> matrices;
  Method method = Method::Pbsr;
  /// Per step: the exponential update produced matrices[k]. Entry 0 is false.
  std::vector<bool> equilibrium_flags;
  /// Per step: the exponential update saw a Jacobian singular to precision.
  std::vector<bool> singular_flags;

  std::size_t size() const { return times.size(); }
};

struct PbsrConfig {
  double eps_tol = 1e-4;
  int n_max = 10;
  double refine_mult = 10.0;
  bool force_pbs = false;
  /// Drivers also require df/dp to be nearly constant before taking the
  /// exponential branch. With false only the df/dx test is applied.
  bool check_forcing = true;

  void validate() const {
    if (!(eps_tol > 0.0)) throw std::invalid_argument("PbsrConfig: eps_tol must be positive");
    if (n_max < 1) throw std::invalid_argument("PbsrConfig: n_max must be at least 1");
    if (!(refine_mult > 0.0)) throw std::invalid_argument("PbsrConfig: refine_mult must be positive");
  }
};

/// Jacobians at the two ends of one (sub-)interval of length dt.
struct StepJacobians {
  DenseMatrix j_a, j_b;  // df/dx, n_x x n_x
  DenseMatrix b_a, b_b;  // df/dp, n_x x n_p
  double dt = 0.0;

  void validate() const {
    const auto n = j_a.rows();
    if (j_a.cols() != n || j_b.rows() != n || j_b.cols() != n) {
      throw DimensionError("StepJacobians: df/dx blocks must be square and equal-sized");
    }
    if (b_a.rows() != n || b_b.rows() != n || b_a.cols() != b_b.cols()) {
      throw DimensionError("StepJacobians: df/dp blocks must be n_x x n_p and equal-sized");
    }
    if (!(dt >= 0.0)) throw std::invalid_argument("StepJacobians: dt must be non-negative");
  }
};

namespace detail {

// I1 = dt/2 (J_a + J_b), I2 = dt^2/4 J_b (J_a + J_b)
inline void pbs_integrals(const StepJacobians& sj, DenseMatrix& i1, DenseMatrix& i2) {
  const DenseMatrix sum = sj.j_a + sj.j_b;
  i1 = (0.5 * sj.dt) * sum;
  i2.noalias() = (0.25 * sj.dt * sj.dt) * (sj.j_b * sum);
}

}  // namespace detail

/// Forward transition approximation Phi(t_b; t_a) ~ I + I1 + I2.
inline DenseMatrix pbs_phi_forward(const StepJacobians& sj) {
  sj.validate();
  DenseMatrix i1, i2;
  detail::pbs_integrals(sj, i1, i2);
  DenseMatrix phi = i1 + i2;
  phi.diagonal().array() += 1.0;
  return phi;
}

/// Backward transition approximation Phi(t_a; t_b) ~ I - I1 + I2.
inline DenseMatrix pbs_phi_backward(const StepJacobians& sj) {
  sj.validate();
  DenseMatrix i1, i2;
  detail::pbs_integrals(sj, i1, i2);
  DenseMatrix phi = i2 - i1;
  phi.diagonal().array() += 1.0;
  return phi;
}

/// S(t_b) ~ Phi(t_b;t_a) (S(t_a) + dt/2 (B_a + Phi(t_a;t_b) B_b)).
inline DenseMatrix pbs_step(const DenseMatrix& s_k, const StepJacobians& sj) {
  sj.validate();
  if (s_k.rows() != sj.j_a.rows() || s_k.cols() != sj.b_a.cols()) {
    throw DimensionError("pbs_step: S has shape " + std::to_string(s_k.rows()) + "x" +
                         std::to_string(s_k.cols()) + ", expected n_x x n_p");
  }
  DenseMatrix i1, i2;
  detail::pbs_integrals(sj, i1, i2);
  DenseMatrix fwd = i1 + i2;
  fwd.diagonal().array() += 1.0;
  DenseMatrix bwd = i2 - i1;
  bwd.diagonal().array() += 1.0;

  DenseMatrix inner = sj.b_a;
  inner.noalias() += bwd * sj.b_b;
  inner *= 0.5 * sj.dt;
  inner += s_k;
  DenseMatrix out(s_k.rows(), s_k.cols());
  out.noalias() = fwd * inner;
  return out;
}

struct ExpStepResult {
  DenseMatrix s;
  bool singular_jacobian = false;
};

/// e^{dt J} (S + (I - e^{-dt J}) J^{-1} B), evaluated as
/// e^{dt J} S + e^{dt J} phi1(dt J) dt B so that singular J is allowed.
inline ExpStepResult exp_step_checked(const DenseMatrix& s_k, const DenseMatrix& j,
                                      const DenseMatrix& b, double dt) {
  detail::require_square(j, "exp_step");
  if (b.rows() != j.rows() || s_k.rows() != j.rows() || s_k.cols() != b.cols()) {
    throw DimensionError("exp_step: inconsistent shapes for S, J and B");
  }
  const DenseMatrix scaled = dt * j;
  const DenseMatrix e = mat_exp(scaled);
  DenseMatrix inner = s_k;
  inner.noalias() += phi1(scaled) * (dt * b);
  ExpStepResult result;
  result.s.noalias() = e * inner;
  result.singular_jacobian = is_singular_to_precision(j);
  return result;
}

inline DenseMatrix exp_step(const DenseMatrix& s_k, const DenseMatrix& j, const DenseMatrix& b,
                            double dt) {
  return exp_step_checked(s_k, j, b, dt).s;
}

/// ceil(refine_mult * dt * ||J||), floored at one sub-interval.
inline int refinement_count(double dt, double j_norm, const PbsrConfig& cfg) {
  if (!(dt > 0.0)) throw std::invalid_argument("refinement_count: dt must be positive");
  const double raw = std::ceil(cfg.refine_mult * dt * j_norm);
  if (!(raw >= 1.0)) return 1;
  // Saturate rather than overflow; anything this large exceeds any n_max.
  if (raw > 1e9) return 1'000'000'000;
  return static_cast<int>(raw);
}

/// Relative change ||J_b - J_a||_F / ||J_a||_F, with 0 when J_a = 0.
inline double relative_jacobian_change(const DenseMatrix& j_a, const DenseMatrix& j_b) {
  if (j_a.rows() != j_b.rows() || j_a.cols() != j_b.cols()) {
    throw DimensionError("relative_jacobian_change: shape mismatch");
  }
  const double base = frobenius_norm(j_a);
  const double diff = frobenius_norm(j_b - j_a);
  if (base == 0.0) return 0.0;
  return diff / base;
}

/// Exponential branch test: ||J_b - J_a|| / ||J_a|| < eps_tol OR n_int > n_max.
/// Always false with cfg.force_pbs.
inline bool switch_to_exp(const DenseMatrix& j_a, const DenseMatrix& j_b, int n_int,
                          const PbsrConfig& cfg) {
  const double change = relative_jacobian_change(j_a, j_b);
  if (cfg.force_pbs) return false;
  return change < cfg.eps_tol || n_int > cfg.n_max;
}

/// Relative change of the forcing df/dp. A zero left value counts as constant
/// only when the right value is zero too.
inline double relative_forcing_change(const DenseMatrix& b_a, const DenseMatrix& b_b) {
  if (b_a.rows() != b_b.rows() || b_a.cols() != b_b.cols()) {
    throw DimensionError("relative_forcing_change: shape mismatch");
  }
  const double diff = frobenius_norm(b_b - b_a);
  if (diff == 0.0) return 0.0;
  const double base = frobenius_norm(b_a);
  return base == 0.0 ? std::numeric_limits<double>::infinity() : diff / base;
}

/// Switch test used by the trajectory drivers: both df/dx and (unless
/// cfg.check_forcing is off) df/dp must be nearly constant, or n_int > n_max.
inline bool switch_to_exp(const DenseMatrix& j_a, const DenseMatrix& j_b, const DenseMatrix& b_a,
                          const DenseMatrix& b_b, int n_int, const PbsrConfig& cfg) {
  if (cfg.force_pbs) return false;
  if (n_int > cfg.n_max) return true;
  if (!(relative_jacobian_change(j_a, j_b) < cfg.eps_tol)) return false;
  return !cfg.check_forcing || relative_forcing_change(b_a, b_b) < cfg.eps_tol;
}

namespace detail {

inline void check_pair(const OdeSystem& system, const Trajectory& traj) {
  if (traj.times.size() != traj.states.size() || traj.times.size() < 2) {
    throw std::invalid_argument("trajectory must hold at least two time points and one state per time");
  }
  if (traj.parameters.size() != system.n_p) {
    throw DimensionError("trajectory parameters do not match the system's n_p");
  }
  if (traj.states.front().size() != system.n_x) {
    throw DimensionError("trajectory states do not match the system's n_x");
  }
}

inline SensitivityTrajectory start_output(const OdeSystem& system, const Trajectory& traj,
                                          Method method) {
  SensitivityTrajectory out;
  out.times = traj.times;
  out.method = method;
  out.matrices.reserve(traj.size());
  out.matrices.push_back(DenseMatrix::Zero(system.n_x, system.n_p));
  out.equilibrium_flags.assign(traj.size(), false);
  out.singular_flags.assign(traj.size(), false);
  return out;
}

inline void check_finite(const DenseMatrix& s, std::size_t step, double t) {
  if (!s.allFinite()) {
    std::ostringstream msg;
    msg << "sensitivity diverged at step " << step << " (t = " << t << ")";
    throw DivergenceError(msg.str(), t, static_cast<long>(step));
  }
}

}  // namespace detail

/// Peano-Baker series with refinement. Per interval: n_int from the left
/// Jacobian; exponential step when the Jacobians are nearly constant or
/// n_int exceeds n_max; otherwise n_int chained PBS steps on a uniform sub-grid with
/// states interpolated linearly between the stored nodes.
inline SensitivityTrajectory run_pbsr(const OdeSystem& system, const Trajectory& traj,
                                      const PbsrConfig& cfg = {}) {
  cfg.validate();
  detail::check_pair(system, traj);
  const Vector& p = traj.parameters;
  SensitivityTrajectory out = detail::start_output(system, traj, Method::Pbsr);

  DenseMatrix j_k = system.dfdx(traj.times[0], traj.states[0], p);
  DenseMatrix b_k = system.dfdp(traj.times[0], traj.states[0], p);
  DenseMatrix s = out.matrices.front();

  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double t_k = traj.times[k];
    const double t_next = traj.times[k + 1];
    const double dt = t_next - t_k;
    const Vector& x_k = traj.states[k];
    const Vector& x_next = traj.states[k + 1];
    DenseMatrix j_next = system.dfdx(t_next, x_next, p);
    DenseMatrix b_next = system.dfdp(t_next, x_next, p);

    const int n_int = refinement_count(dt, frobenius_norm(j_k), cfg);
    if (switch_to_exp(j_k, j_next, b_k, b_next, n_int, cfg)) {
      ExpStepResult r = exp_step_checked(s, j_k, b_k, dt);
      s = std::move(r.s);
      out.equilibrium_flags[k + 1] = true;
      out.singular_flags[k + 1] = r.singular_jacobian;
    } else if (n_int == 1) {
      s = pbs_step(s, StepJacobians{j_k, j_next, b_k, b_next, dt});
    } else {
      StepJacobians sj;
      sj.j_a = j_k;
      sj.b_a = b_k;
      const Vector dx = x_next - x_k;
      for (int h = 0; h < n_int; ++h) {
        const double frac_a = static_cast<double>(h) / n_int;
        const double frac_b = static_cast<double>(h + 1) / n_int;
        const double t_a = t_k + frac_a * dt;
        const double t_b = t_k + frac_b * dt;
        if (h + 1 == n_int) {
          sj.j_b = j_next;
          sj.b_b = b_next;
        } else {
          const Vector x_b = x_k + frac_b * dx;
          sj.j_b = system.dfdx(t_b, x_b, p);
          sj.b_b = system.dfdp(t_b, x_b, p);
        }
        sj.dt = t_b - t_a;
        s = pbs_step(s, sj);
        std::swap(sj.j_a, sj.j_b);
        std::swap(sj.b_a, sj.b_b);
      }
    }
    detail::check_finite(s, k + 1, t_next);
    out.matrices.push_back(s);
    j_k = std::move(j_next);
    b_k = std::move(b_next);
  }
  return out;
}

/// Exponential algorithm: every interval uses the constant-coefficient
/// solution with the left-endpoint Jacobians. Never refines.
inline SensitivityTrajectory run_exp(const OdeSystem& system, const Trajectory& traj) {
  detail::check_pair(system, traj);
  const Vector& p = traj.parameters;
  SensitivityTrajectory out = detail::start_output(system, traj, Method::Exp);
  DenseMatrix s = out.matrices.front();
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double t_k = traj.times[k];
    const double dt = traj.times[k + 1] - t_k;
    const DenseMatrix j = system.dfdx(t_k, traj.states[k], p);
    const DenseMatrix b = system.dfdp(t_k, traj.states[k], p);
    ExpStepResult r = exp_step_checked(s, j, b, dt);
    s = std::move(r.s);
    out.equilibrium_flags[k + 1] = true;
    out.singular_flags[k + 1] = r.singular_jacobian;
    detail::check_finite(s, k + 1, traj.times[k + 1]);
    out.matrices.push_back(s);
  }
  return out;
}

/// Plain PBS: one PBS step per stored interval, no refinement. The
/// exponential branch fires only on the relative-change test (n_int is taken
/// as 1), and never with cfg.force_pbs.
inline SensitivityTrajectory run_pbs_plain(const OdeSystem& system, const Trajectory& traj,
                                           const PbsrConfig& cfg = {}) {
  cfg.validate();
  detail::check_pair(system, traj);
  const Vector& p = traj.parameters;
  SensitivityTrajectory out = detail::start_output(system, traj, Method::Pbs);
  DenseMatrix j_k = system.dfdx(traj.times[0], traj.states[0], p);
  DenseMatrix b_k = system.dfdp(traj.times[0], traj.states[0], p);
  DenseMatrix s = out.matrices.front();
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const double t_next = traj.times[k + 1];
    const double dt = t_next - traj.times[k];
    DenseMatrix j_next = system.dfdx(t_next, traj.states[k + 1], p);
    DenseMatrix b_next = system.dfdp(t_next, traj.states[k + 1], p);
    if (switch_to_exp(j_k, j_next, b_k, b_next, 1, cfg)) {
      ExpStepResult r = exp_step_checked(s, j_k, b_k, dt);
      s = std::move(r.s);
      out.equilibrium_flags[k + 1] = true;
      out.singular_flags[k + 1] = r.singular_jacobian;
    } else {
      s = pbs_step(s, StepJacobians{j_k, j_next, b_k, b_next, dt});
    }
    detail::check_finite(s, k + 1, t_next);
    out.matrices.push_back(s);
    j_k = std::move(j_next);
    b_k = std::move(b_next);
  }
  return out;
}

}  // namespace pbsens
