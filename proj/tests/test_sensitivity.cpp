#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pbsens;
using pbsens::testing::random_matrix;
using pbsens::testing::rel_diff;

namespace {

StepJacobians constant_step(const DenseMatrix& j, const DenseMatrix& b, double dt) {
  return StepJacobians{j, j, b, b, dt};
}

DenseMatrix taylor2(const DenseMatrix& a, double dt) {
  return DenseMatrix::Identity(a.rows(), a.cols()) + dt * a + (0.5 * dt * dt) * (a * a);
}

double max_error_vs_closed_form(const Model& m, const SensitivityTrajectory& s) {
  double worst = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    worst = std::max(worst, frobenius_norm(s.matrices[k] - m.exact_sensitivity(s.times[k])));
  }
  return worst;
}

OdeSystem zero_system(int n_x, int n_p) {
  OdeSystem sys;
  sys.name = "zero";
  sys.n_x = n_x;
  sys.n_p = n_p;
  sys.f = [n_x](const Vector&, const Vector&, const Vector&) -> Vector { return Vector::Zero(n_x); };
  sys.jac_x = [n_x](const Vector&, const Vector&, const Vector&) -> DenseMatrix {
    return DenseMatrix::Zero(n_x, n_x);
  };
  sys.jac_p = [n_x, n_p](const Vector&, const Vector&, const Vector&) -> DenseMatrix {
    return DenseMatrix::Zero(n_x, n_p);
  };
  return sys;
}

}  // namespace

TEST(PbsPhi, ZeroJacobianGivesIdentity) {
  const StepJacobians sj = constant_step(DenseMatrix::Zero(3, 3), DenseMatrix::Zero(3, 2), 0.1);
  EXPECT_EQ(pbs_phi_forward(sj), DenseMatrix::Identity(3, 3));
  EXPECT_EQ(pbs_phi_backward(sj), DenseMatrix::Identity(3, 3));
}

TEST(PbsPhi, ScalarHandValues) {
  const StepJacobians sj = constant_step(DenseMatrix{{-2.0}}, DenseMatrix{{0.0}}, 0.1);
  EXPECT_NEAR(pbs_phi_forward(sj)(0, 0), 0.82, 1e-15);
  EXPECT_NEAR(pbs_phi_backward(sj)(0, 0), 1.22, 1e-15);
}

TEST(PbsPhi, ZeroStepIsIdentity) {
  std::mt19937_64 gen(1);
  const StepJacobians sj{random_matrix(4, 4, gen), random_matrix(4, 4, gen), random_matrix(4, 2, gen),
                         random_matrix(4, 2, gen), 0.0};
  EXPECT_EQ(pbs_phi_forward(sj), DenseMatrix::Identity(4, 4));
  EXPECT_EQ(pbs_phi_backward(sj), DenseMatrix::Identity(4, 4));
}

TEST(PbsPhi, ConstantJacobianIsSecondOrderTaylor) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const DenseMatrix a = random_matrix(4, 4, gen, -3.0, 3.0);
    const double dt = 0.01 * (trial + 1);
    const StepJacobians sj = constant_step(a, DenseMatrix::Zero(4, 1), dt);
    const DenseMatrix expected = taylor2(a, dt);
    EXPECT_LT(frobenius_norm(pbs_phi_forward(sj) - expected), 8.0 * 2.2e-16 * frobenius_norm(expected));
    EXPECT_LT(frobenius_norm(pbs_phi_backward(sj) - taylor2(a, -dt)), 8.0 * 2.2e-16 * frobenius_norm(expected));
  }
}

TEST(PbsPhi, NearInverseForRandomJacobian) {
  std::mt19937_64 gen(3);
  const double dt = 1e-2;
  for (int trial = 0; trial < 10; ++trial) {
    const DenseMatrix j = random_matrix(4, 4, gen, -2.0, 2.0);
    const DenseMatrix d = random_matrix(4, 4, gen, -2.0, 2.0);
    const double bound = 10.0 * dt * dt * dt * std::pow(1.0 + frobenius_norm(j) + frobenius_norm(d), 3);
    for (const StepJacobians& sj : {constant_step(j, DenseMatrix::Zero(4, 1), dt),
                                    StepJacobians{j, j + dt * d, DenseMatrix::Zero(4, 1), DenseMatrix::Zero(4, 1), dt}}) {
      const DenseMatrix prod = pbs_phi_forward(sj) * pbs_phi_backward(sj);
      EXPECT_LE(frobenius_norm(prod - DenseMatrix::Identity(4, 4)), bound);
    }
  }
}

TEST(PbsPhi, NearInverseConstantStableUnderHalving) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseMatrix j = random_matrix(4, 4, gen);
    const DenseMatrix d = random_matrix(4, 4, gen);
    std::vector<double> c;
    for (double dt : {0.04, 0.02, 0.01}) {
      const StepJacobians sj{j, j + dt * d, DenseMatrix::Zero(4, 1), DenseMatrix::Zero(4, 1), dt};
      const DenseMatrix dev = pbs_phi_forward(sj) * pbs_phi_backward(sj) - DenseMatrix::Identity(4, 4);
      c.push_back(frobenius_norm(dev) / (dt * dt * dt));
    }
    EXPECT_LE(std::abs(c[1] / c[0] - 1.0), 0.5) << "trial " << trial;
    EXPECT_LE(std::abs(c[2] / c[0] - 1.0), 0.5) << "trial " << trial;
  }
}

TEST(PbsStep, NoForcingNoChange) {
  std::mt19937_64 gen(5);
  const DenseMatrix s = random_matrix(3, 2, gen);
  const DenseMatrix out = pbs_step(s, constant_step(DenseMatrix::Zero(3, 3), DenseMatrix::Zero(3, 2), 0.3));
  EXPECT_EQ(out, s);
}

TEST(PbsStep, ScalarRelaxation) {
  const DenseMatrix s = pbs_step(DenseMatrix::Zero(1, 1), constant_step(DenseMatrix{{-1.0}}, DenseMatrix{{1.0}}, 0.1));
  EXPECT_NEAR(s(0, 0), 1.0 - std::exp(-0.1), 1e-4);
  EXPECT_NEAR(s(0, 0), 0.09516, 1e-4);
}

TEST(PbsStep, OneStepOfScalarDecayMatchesFiniteDifferences) {
  const Model m = make_scalar_decay();
  for (double dt : {0.1, 0.05, 0.025}) {
    const TimeGrid grid{0.0, dt};
    const Trajectory traj = integrate(m.system, m.p, m.x0, grid);
    const SensitivityTrajectory fd = finite_difference_sensitivity(m.system, m.p, m.x0, grid);
    const StepJacobians sj{m.system.dfdx(0.0, traj.states[0], m.p), m.system.dfdx(dt, traj.states[1], m.p),
                           m.system.dfdp(0.0, traj.states[0], m.p), m.system.dfdp(dt, traj.states[1], m.p), dt};
    const DenseMatrix s = pbs_step(DenseMatrix::Zero(1, 1), sj);
    EXPECT_LE(std::abs(s(0, 0) - fd.matrices[1](0, 0)), dt * dt) << dt;
  }
}

TEST(PbsStep, ConstantCoefficientsAgreeWithExpStepToThirdOrder) {
  std::mt19937_64 gen(6);
  const DenseMatrix j = random_matrix(3, 3, gen) - 2.0 * DenseMatrix::Identity(3, 3);
  const DenseMatrix b = random_matrix(3, 2, gen);
  const DenseMatrix s0 = random_matrix(3, 2, gen);
  std::vector<double> diffs;
  for (double dt : {0.08, 0.04, 0.02, 0.01}) {
    diffs.push_back(frobenius_norm(pbs_step(s0, constant_step(j, b, dt)) - exp_step(s0, j, b, dt)));
  }
  for (std::size_t i = 1; i < diffs.size(); ++i) {
    EXPECT_GE(diffs[i - 1] / diffs[i], 8.0 * 0.7);
    EXPECT_LE(diffs[i - 1] / diffs[i], 8.0 * 1.3);
  }
}

TEST(PbsStep, ShapeErrors) {
  const StepJacobians sj = constant_step(DenseMatrix::Zero(2, 2), DenseMatrix::Zero(2, 1), 0.1);
  EXPECT_THROW((void)pbs_step(DenseMatrix::Zero(3, 1), sj), DimensionError);
  StepJacobians bad = sj;
  bad.b_b = DenseMatrix::Zero(2, 3);
  EXPECT_THROW((void)pbs_step(DenseMatrix::Zero(2, 1), bad), DimensionError);
  bad = sj;
  bad.dt = -1.0;
  EXPECT_THROW((void)pbs_phi_forward(bad), std::invalid_argument);
}

TEST(ExpStep, ScalarRelaxation) {
  const DenseMatrix s = exp_step(DenseMatrix::Zero(1, 1), DenseMatrix{{-1.0}}, DenseMatrix{{1.0}}, 1.0);
  EXPECT_NEAR(s(0, 0), 1.0 - std::exp(-1.0), 1e-15);
  EXPECT_NEAR(s(0, 0), 0.6321206, 1e-7);
}

TEST(ExpStep, NoForcingNoChange) {
  std::mt19937_64 gen(7);
  const DenseMatrix s = random_matrix(3, 2, gen);
  const ExpStepResult r = exp_step_checked(s, DenseMatrix::Zero(3, 3), DenseMatrix::Zero(3, 2), 0.4);
  EXPECT_EQ(r.s, s);
  EXPECT_TRUE(r.singular_jacobian);
}

TEST(ExpStep, ConstantCoefficientClosedForm) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseMatrix j = random_matrix(2, 2, gen) - 1.5 * DenseMatrix::Identity(2, 2);
    const DenseMatrix b = random_matrix(2, 3, gen);
    const DenseMatrix s0 = random_matrix(2, 3, gen);
    for (double dt : {0.01, 0.3, 1.0, 4.0}) {
      // e^{dt J} S0 + (e^{dt J} - I) J^{-1} B
      DenseMatrix e = mat_exp(dt * j);
      const DenseMatrix expected = e * s0 + (e - DenseMatrix::Identity(2, 2)) * solve_linear(j, b);
      const ExpStepResult r = exp_step_checked(s0, j, b, dt);
      EXPECT_LT(frobenius_norm(r.s - expected), 1e-12 * std::max(1.0, frobenius_norm(expected)));
      EXPECT_FALSE(r.singular_jacobian);
    }
  }
}

TEST(ExpStep, SingularJacobianIsFlagged) {
  const DenseMatrix j{{0.0, 1.0}, {0.0, 0.0}};
  const DenseMatrix b{{0.0}, {1.0}};
  const ExpStepResult r = exp_step_checked(DenseMatrix::Zero(2, 1), j, b, 2.0);
  EXPECT_TRUE(r.singular_jacobian);
  // S' = J S + B from 0: S2 = t, S1 = t^2/2.
  EXPECT_NEAR(r.s(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(r.s(1, 0), 2.0, 1e-14);
}

TEST(RefinementCount, Examples) {
  const PbsrConfig cfg;
  EXPECT_EQ(refinement_count(0.5, 3.0, cfg), 15);
  EXPECT_EQ(refinement_count(0.01, 3.0, cfg), 1);
  EXPECT_EQ(refinement_count(0.5, 0.0, cfg), 1);
  EXPECT_EQ(refinement_count(0.1, 1e300, cfg), 1'000'000'000);
  EXPECT_THROW((void)refinement_count(0.0, 1.0, cfg), std::invalid_argument);
}

TEST(SwitchToExp, Examples) {
  const PbsrConfig cfg;
  const DenseMatrix j{{1.0, 2.0}, {3.0, 4.0}};
  EXPECT_TRUE(switch_to_exp(j, j, 3, cfg));
  EXPECT_FALSE(switch_to_exp(j, 1.5 * j, 3, cfg));
  EXPECT_TRUE(switch_to_exp(j, 1.5 * j, 11, cfg));
  EXPECT_TRUE(switch_to_exp(DenseMatrix::Zero(2, 2), DenseMatrix::Zero(2, 2), 1, cfg));
}

TEST(SwitchToExp, Properties) {
  std::mt19937_64 gen(9);
  PbsrConfig forced;
  forced.force_pbs = true;
  const PbsrConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const DenseMatrix j = random_matrix(n, n, gen, -5.0, 5.0);
    if (frobenius_norm(j) == 0.0) continue;
    DenseMatrix dir = random_matrix(n, n, gen);
    dir *= 0.5 * frobenius_norm(j) / frobenius_norm(dir);
    const DenseMatrix jb = j + dir;
    ASSERT_NEAR(relative_jacobian_change(j, jb), 0.5, 1e-12);
    const int n_int = 1 + trial % 10;
    EXPECT_TRUE(switch_to_exp(j, j, n_int, cfg));
    EXPECT_FALSE(switch_to_exp(j, jb, n_int, cfg));
    EXPECT_TRUE(switch_to_exp(j, jb, 11, cfg));
    EXPECT_TRUE(switch_to_exp(j, jb, 11 + trial, cfg));
    for (int m : {1, n_int, 11, 1000}) {
      EXPECT_FALSE(switch_to_exp(j, j, m, forced));
      EXPECT_FALSE(switch_to_exp(j, jb, m, forced));
    }
  }
}

TEST(SwitchToExp, ForcingCheckInDriverRule) {
  const PbsrConfig cfg;
  PbsrConfig no_forcing = cfg;
  no_forcing.check_forcing = false;
  const DenseMatrix j{{-1.0}};
  const DenseMatrix b{{1.0}};
  EXPECT_TRUE(switch_to_exp(j, j, b, b, 1, cfg));
  EXPECT_FALSE(switch_to_exp(j, j, b, 2.0 * b, 1, cfg));
  EXPECT_TRUE(switch_to_exp(j, j, b, 2.0 * b, 1, no_forcing));
  EXPECT_TRUE(switch_to_exp(j, 2.0 * j, b, 2.0 * b, 11, cfg));
  EXPECT_EQ(relative_forcing_change(DenseMatrix::Zero(1, 1), DenseMatrix::Zero(1, 1)), 0.0);
  EXPECT_TRUE(std::isinf(relative_forcing_change(DenseMatrix::Zero(1, 1), b)));
}

TEST(RunPbsr, ConstantLinearEqualsExp) {
  const Model m = make_const_linear(4, 3, 1);
  const Trajectory traj = integrate(m.system, m.p, m.x0, uniform_grid(m.t0, m.t1, m.dt));
  const SensitivityTrajectory pbsr = run_pbsr(m.system, traj);
  const SensitivityTrajectory exp = run_exp(m.system, traj);
  ASSERT_EQ(pbsr.size(), exp.size());
  for (std::size_t k = 0; k < pbsr.size(); ++k) {
    EXPECT_EQ(pbsr.matrices[k], exp.matrices[k]) << "step " << k;
    if (k > 0) EXPECT_TRUE(pbsr.equilibrium_flags[k]);
  }
}

TEST(RunPbsr, ScalarDecayFineGrid) {
  const Model m = make_scalar_decay();
  const TimeGrid grid = uniform_grid(m.t0, m.t1, 1e-2);
  const Trajectory traj = integrate(m.system, m.p, m.x0, grid);
  const SensitivityTrajectory s = run_pbsr(m.system, traj);
  double worst = 0.0;
  for (std::size_t k = 1; k < s.size(); ++k) {
    const DenseMatrix exact = m.exact_sensitivity(grid[k]);
    worst = std::max(worst, frobenius_norm(s.matrices[k] - exact) / frobenius_norm(exact));
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(RunPbsr, ForcedPbsConvergesToExpLimit) {
  const Model m = make_random_linear(4, 3);
  const Trajectory traj = integrate(m.system, m.p, m.x0, uniform_grid(m.t0, m.t1, m.dt));
  const SensitivityTrajectory exact = run_exp(m.system, traj);
  PbsrConfig cfg;
  cfg.force_pbs = true;
  double prev = std::numeric_limits<double>::infinity();
  for (double mult : {10.0, 20.0, 40.0, 80.0, 160.0}) {
    cfg.refine_mult = mult;
    const SensitivityTrajectory s = run_pbsr(m.system, traj, cfg);
    double worst = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      worst = std::max(worst, frobenius_norm(s.matrices[k] - exact.matrices[k]));
      if (k > 0) EXPECT_FALSE(s.equilibrium_flags[k]);
    }
    EXPECT_LT(worst, prev) << "mult " << mult;
    prev = worst;
  }
  EXPECT_LT(prev, 1e-3 * frobenius_norm(exact.matrices.back()));
}

TEST(RunPbsr, SubIntervalsUseInterpolatedStates) {
  // J depends on x; with a single stored interval the sub-grid must see the
  // linear interpolant between the two stored states.
  OdeSystem sys;
  sys.name = "probe";
  sys.n_x = 1;
  sys.n_p = 1;
  std::vector<double> seen;
  sys.f = [](const Vector& x, const Vector&, const Vector& p) { return Vector{{-p[0] * x[0]}}; };
  sys.jac_x = [&seen](const Vector& x, const Vector&, const Vector& p) {
    seen.push_back(x[0]);
    return DenseMatrix{{-p[0] * (1.0 + x[0])}};
  };
  sys.jac_p = [](const Vector& x, const Vector&, const Vector&) { return DenseMatrix{{-x[0]}}; };
  Trajectory traj;
  traj.times = {0.0, 1.0};
  traj.states = {Vector{{1.0}}, Vector{{0.0}}};
  traj.parameters = Vector{{0.4}};
  PbsrConfig cfg;
  cfg.refine_mult = 4.9;  // n_int = ceil(4.9 * 0.8) = 4
  (void)run_pbsr(sys, traj, cfg);
  std::sort(seen.begin(), seen.end());
  const std::vector<double> expected{0.0, 0.25, 0.5, 0.75, 1.0};
  ASSERT_EQ(seen.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(seen[i], expected[i]);
}

TEST(RunPbsr, ShapeMismatchRejected) {
  const Model m = make_chua();
  Trajectory traj = integrate(m.system, m.p, m.x0, uniform_grid(0.0, 1.0, 0.1));
  traj.parameters = Vector::Ones(3);
  EXPECT_THROW((void)run_pbsr(m.system, traj), DimensionError);
  PbsrConfig bad;
  bad.n_max = 0;
  traj.parameters = m.p;
  EXPECT_THROW((void)run_pbsr(m.system, traj, bad), std::invalid_argument);
}

TEST(RunExp, ConstantCoefficientExact) {
  const Model m = make_const_linear(5, 2, 4);
  const TimeGrid grid = jittered_grid(m.t0, m.t1, m.dt, 9);
  const Trajectory traj = integrate(m.system, m.p, m.x0, grid);
  const SensitivityTrajectory s = run_exp(m.system, traj);
  EXPECT_LE(max_error_vs_closed_form(m, s), 1e-10);
}

TEST(RunExp, ZeroSystemStaysZero) {
  const OdeSystem sys = zero_system(3, 2);
  const Trajectory traj = integrate(sys, Vector::Ones(2), Vector::Ones(3), uniform_grid(0.0, 1.0, 0.1));
  for (const auto& s : {run_exp(sys, traj), run_pbsr(sys, traj), run_pbs_plain(sys, traj)}) {
    for (const DenseMatrix& mtx : s.matrices) EXPECT_EQ(frobenius_norm(mtx), 0.0);
  }
}

TEST(RunExp, FirstOrderOnScalarDecay) {
  const Model m = make_scalar_decay();
  std::vector<double> dts, errors;
  for (double dt : {0.1, 0.05, 0.025, 0.0125}) {
    const Trajectory traj = integrate(m.system, m.p, m.x0, uniform_grid(m.t0, m.t1, dt));
    dts.push_back(dt);
    errors.push_back(max_error_vs_closed_form(m, run_exp(m.system, traj)));
  }
  for (std::size_t i = 1; i < errors.size(); ++i) EXPECT_LT(errors[i], errors[i - 1]);
  EXPECT_GE(fit_log2_slope(dts, errors), 1.0);
}

TEST(RunPbsPlain, HalvingReducesErrorByAboutFour) {
  const Model m = make_scalar_decay();
  std::vector<double> finals;
  for (double dt : {0.1, 0.05, 0.025, 0.0125}) {
    const Trajectory traj = integrate(m.system, m.p, m.x0, uniform_grid(m.t0, m.t1, dt));
    const SensitivityTrajectory s = run_pbs_plain(m.system, traj);
    finals.push_back(std::abs(s.matrices.back()(0, 0) - m.exact_sensitivity(m.t1)(0, 0)));
  }
  for (std::size_t i = 1; i < finals.size(); ++i) {
    const double factor = finals[i - 1] / finals[i];
    EXPECT_GE(factor, 3.2);
    EXPECT_LE(factor, 4.9);
  }
}

TEST(RunPbsPlain, GlobalOrderTwo) {
  PbsrConfig forced;
  forced.force_pbs = true;
  for (const Model& m : {make_scalar_decay(), make_const_linear(4, 3, 1), make_const_linear(3, 2, 8)}) {
    for (bool jitter : {false, true}) {
      std::vector<double> dts, errors;
      for (int level = 0; level < 5; ++level) {
        const double dt = 0.1 / std::ldexp(1.0, level);
        const TimeGrid grid = jitter ? jittered_grid(m.t0, m.t1, dt, 100 + level) : uniform_grid(m.t0, m.t1, dt);
        const Trajectory traj = integrate(m.system, m.p, m.x0, grid);
        dts.push_back(traj.dt_max());
        errors.push_back(max_error_vs_closed_form(m, run_pbs_plain(m.system, traj, forced)));
      }
      const double slope = fit_log2_slope(dts, errors);
      EXPECT_GE(slope, 1.7) << m.system.name << " jitter " << jitter;
      EXPECT_LE(slope, 2.3) << m.system.name << " jitter " << jitter;
    }
  }
}

TEST(AllMethods, InitialSensitivityIsZero) {
  for (const Model& m : {make_scalar_decay(), make_chua(), make_const_linear(3, 2, 5), make_random_linear(6, 2)}) {
    const TimeGrid grid = uniform_grid(m.t0, std::min(m.t1, m.t0 + 1.0), 0.1);
    for (Method method : {Method::Pbsr, Method::Exp, Method::Pbs, Method::Fs, Method::Fd}) {
      const MethodResult r = compute_sensitivity(m, method, grid);
      ASSERT_EQ(r.sensitivity.size(), grid.size());
      EXPECT_EQ(r.sensitivity.matrices.front(), DenseMatrix::Zero(m.system.n_x, m.system.n_p))
          << m.system.name << " " << to_string(method);
      for (const DenseMatrix& s : r.sensitivity.matrices) {
        EXPECT_EQ(s.rows(), m.system.n_x);
        EXPECT_EQ(s.cols(), m.system.n_p);
        EXPECT_TRUE(s.allFinite());
      }
    }
  }
}

TEST(Divergence, UnstablePbsReportsStep) {
  const Model m = make_random_linear(40, 7);
  const Trajectory traj = integrate(m.system, m.p, m.x0, uniform_grid(0.0, 100.0, 0.1));
  PbsrConfig cfg;
  cfg.force_pbs = true;
  cfg.refine_mult = 0.01;
  try {
    (void)run_pbsr(m.system, traj, cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1);
    EXPECT_GT(e.time(), 0.0);
  }
}
