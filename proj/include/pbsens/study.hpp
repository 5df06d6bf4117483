#pragma once

// Experiment harness: method dispatch, accuracy comparison, convergence-order
// studies and runtime-scaling studies with a power-law fit.

#include "pbsens/linalg.hpp"
#include "pbsens/models.hpp"
#include "pbsens/ode.hpp"
#include "pbsens/reference.hpp"
#include "pbsens/sensitivity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace pbsens {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Method parse_method(const std::string& name) {
  if (name == "pbsr") return Method::Pbsr;
  if (name == "exp") return Method::Exp;
  if (name == "pbs") return Method::Pbs;
  if (name == "fs") return Method::Fs;
  if (name == "fd") return Method::Fd;
  throw UsageError("unknown method '" + name + "' (expected pbsr, exp, pbs, fs or fd)");
}

/// Harness concurrency: PBS_SENS_THREADS if set and positive, otherwise the
/// hardware concurrency.
inline unsigned harness_threads() {
  if (const char* env = std::getenv("PBS_SENS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `jobs` with at most `threads` in flight; results keep input order.
template <class Result>
std::vector<Result> run_jobs(std::vector<std::function<Result()>> jobs, unsigned threads) {
  std::vector<Result> out(jobs.size());
  if (threads <= 1 || jobs.size() <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) out[i] = jobs[i]();
    return out;
  }
  std::size_t next = 0;
  while (next < jobs.size()) {
    std::vector<std::pair<std::size_t, std::future<Result>>> batch;
    for (unsigned t = 0; t < threads && next < jobs.size(); ++t, ++next) {
      batch.emplace_back(next, std::async(std::launch::async, jobs[next]));
    }
    for (auto& [index, fut] : batch) out[index] = fut.get();
  }
  return out;
}

struct MethodResult {
  Trajectory trajectory;
  SensitivityTrajectory sensitivity;
};

struct ComputeOptions {
  PbsrConfig pbsr;
  IntegratorOptions integrator;
  double fd_h = 1e-5;
};

/// Full pipeline for one method on `grid`. Trajectory-based methods
/// integrate the state first; FS integrates the augmented system; FD
/// integrates 2 n_p perturbed systems and reports the unperturbed states.
inline MethodResult compute_sensitivity(const Model& model, Method method, const TimeGrid& grid,
                                        const ComputeOptions& opts = {}) {
  const OdeSystem& sys = model.system;
  switch (method) {
    case Method::Fs: {
      auto [traj, sens] = run_forward_sensitivity(sys, model.p, model.x0, grid, opts.integrator);
      return {std::move(traj), std::move(sens)};
    }
    case Method::Fd: {
      Trajectory traj = integrate(sys, model.p, model.x0, grid, opts.integrator);
      SensitivityTrajectory sens =
          finite_difference_sensitivity(sys, model.p, model.x0, grid, opts.fd_h, opts.integrator);
      return {std::move(traj), std::move(sens)};
    }
    default: break;
  }
  Trajectory traj = integrate(sys, model.p, model.x0, grid, opts.integrator);
  SensitivityTrajectory sens;
  if (method == Method::Pbsr) {
    sens = run_pbsr(sys, traj, opts.pbsr);
  } else if (method == Method::Exp) {
    sens = run_exp(sys, traj);
  } else {
    sens = run_pbs_plain(sys, traj, opts.pbsr);
  }
  return {std::move(traj), std::move(sens)};
}

struct PowerLawFit {
  double a = 0.0;
  double b = 0.0;
};

/// Least-squares fit of log(runtime) = log(a) + b log(n).
inline PowerLawFit fit_power_law(std::span<const std::pair<double, double>> samples) {
  if (samples.size() < 5) {
    throw DataError("fit_power_law: need at least 5 samples, got " + std::to_string(samples.size()));
  }
  double sx = 0.0, sy = 0.0;
  for (const auto& [n, runtime] : samples) {
    if (!(n > 0.0) || !(runtime > 0.0) || !std::isfinite(n) || !std::isfinite(runtime)) {
      throw DataError("fit_power_law: dimensions and runtimes must be positive and finite");
    }
    sx += std::log(n);
    sy += std::log(runtime);
  }
  const double m = static_cast<double>(samples.size());
  const double mx = sx / m;
  const double my = sy / m;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [n, runtime] : samples) {
    const double dx = std::log(n) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(runtime) - my);
  }
  if (sxx == 0.0) throw DataError("fit_power_law: all dimensions are equal");
  const double b = sxy / sxx;
  return {std::exp(my - b * mx), b};
}

/// Least-squares slope of log2(error) against log2(dt).
inline double fit_log2_slope(std::span<const double> dts, std::span<const double> errors) {
  if (dts.size() != errors.size() || dts.size() < 2) {
    throw DataError("fit_log2_slope: need matching samples, at least two");
  }
  const double m = static_cast<double>(dts.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    if (!(dts[i] > 0.0) || !(errors[i] > 0.0)) throw DataError("fit_log2_slope: values must be positive");
    mx += std::log2(dts[i]);
    my += std::log2(errors[i]);
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    const double dx = std::log2(dts[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log2(errors[i]) - my);
  }
  return sxy / sxx;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty sample");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (values.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

// Reports

struct CompareSeries {
  std::string method;
  std::vector<double> relative_error;
  std::vector<bool> equilibrium;
};

struct ConvergenceRecord {
  double dt_max = 0.0;
  double max_error = 0.0;
};

struct ScalingRecord {
  int n = 0;
  std::map<std::string, double> runtime;  // median seconds per algorithm
};

struct StudyReport {
  std::map<std::string, std::string> metadata;

  TimeGrid times;
  std::vector<CompareSeries> compare;

  std::vector<ConvergenceRecord> convergence;
  std::optional<double> slope;

  std::vector<ScalingRecord> scaling;
  std::map<std::string, PowerLawFit> fits;

  const CompareSeries* series(const std::string& method) const {
    for (const auto& s : compare)
      if (s.method == method) return &s;
    return nullptr;
  }
};

inline std::string config_summary(const PbsrConfig& cfg) {
  return "eps_tol=" + std::to_string(cfg.eps_tol) + " n_max=" + std::to_string(cfg.n_max) +
         " refine_mult=" + std::to_string(cfg.refine_mult) + " force_pbs=" + (cfg.force_pbs ? "1" : "0") +
         " check_forcing=" + (cfg.check_forcing ? "1" : "0");
}

/// Runs `reference` and each candidate on the same grid and records the
/// per-step relative error of every candidate against the reference.
inline StudyReport run_compare(const Model& model, const TimeGrid& grid, const ComputeOptions& opts = {},
                               Method reference = Method::Fs,
                               std::vector<Method> candidates = {Method::Pbsr, Method::Exp},
                               unsigned threads = 1) {
  std::vector<std::function<MethodResult()>> jobs;
  jobs.emplace_back([&] { return compute_sensitivity(model, reference, grid, opts); });
  for (Method c : candidates) jobs.emplace_back([&, c] { return compute_sensitivity(model, c, grid, opts); });
  std::vector<MethodResult> results = run_jobs(std::move(jobs), threads);

  StudyReport report;
  report.metadata["study"] = "compare";
  report.metadata["model"] = model.system.name;
  report.metadata["reference"] = to_string(reference);
  report.metadata["config"] = config_summary(opts.pbsr);
  report.times = results.front().sensitivity.times;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const SensitivityTrajectory& cand = results[i + 1].sensitivity;
    if (cand.times != report.times) throw std::logic_error("candidate grid differs from reference grid");
    CompareSeries series;
    series.method = to_string(candidates[i]);
    series.relative_error = relative_error(cand, results.front().sensitivity);
    series.equilibrium = cand.equilibrium_flags;
    report.compare.push_back(std::move(series));
  }
  return report;
}

/// Errors below this at every level are treated as round-off / integrator
/// noise and no slope is fitted.
inline constexpr double kConvergenceFloor = 1e-8;

/// Max-over-steps Frobenius error of `method` on uniform grids with
/// dt = base_dt / 2^l, l = 0..levels-1. The reference is the model's closed
/// form when it has one, otherwise FS on the same grid.
inline StudyReport run_convergence(const Model& model, int levels, double base_dt, Method method = Method::Pbs,
                                   ComputeOptions opts = {}) {
  if (levels < 3) throw UsageError("convergence study needs at least 3 grid levels");
  if (!(base_dt > 0.0)) throw UsageError("convergence study needs a positive base dt");
  StudyReport report;
  report.metadata["study"] = "convergence";
  report.metadata["model"] = model.system.name;
  report.metadata["method"] = to_string(method);
  report.metadata["config"] = config_summary(opts.pbsr);
  report.metadata["reference"] = model.exact_sensitivity ? "closed_form" : "fs";

  std::vector<double> dts, errors;
  for (int level = 0; level < levels; ++level) {
    const double dt = base_dt / std::ldexp(1.0, level);
    const TimeGrid grid = uniform_grid(model.t0, model.t1, dt);
    const MethodResult result = compute_sensitivity(model, method, grid, opts);
    std::vector<DenseMatrix> reference;
    if (model.exact_sensitivity) {
      for (double t : grid) reference.push_back(model.exact_sensitivity(t));
    } else {
      reference = run_forward_sensitivity(model.system, model.p, model.x0, grid, opts.integrator).second.matrices;
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      worst = std::max(worst, frobenius_norm(result.sensitivity.matrices[k] - reference[k]));
    }
    report.convergence.push_back({result.trajectory.dt_max(), worst});
    dts.push_back(result.trajectory.dt_max());
    errors.push_back(worst);
  }
  const bool at_floor = std::all_of(errors.begin(), errors.end(), [](double e) { return e <= kConvergenceFloor; });
  if (!at_floor) report.slope = fit_log2_slope(dts, errors);
  return report;
}

struct ScalingOptions {
  std::vector<int> dims = {5, 10, 20, 40, 60, 80};
  int seeds = 1;
  std::uint64_t first_seed = 1;
  int reps = 10;
  double t1 = 1.0;
  double dt = 0.1;
  ComputeOptions compute;
};

inline ScalingOptions default_scaling_options() {
  ScalingOptions opts;
  opts.compute.pbsr.force_pbs = true;
  return opts;
}

/// Wall-clock seconds of `fn`, monotonic clock.
template <class Fn>
double time_call(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

/// Runtime of FS, PBSR and Exp on random_linear systems of each dimension.
/// Every timing covers the whole pipeline from model to sensitivities (state
/// integration included). Runs are sequential; exponents are fitted with at
/// least 5 dimensions.
inline StudyReport run_scaling(const ScalingOptions& opts) {
  if (opts.seeds < 1 || opts.reps < 1) throw UsageError("scaling study needs seeds >= 1 and reps >= 1");
  if (opts.dims.empty()) throw UsageError("scaling study needs at least one dimension");
  static const std::vector<std::pair<std::string, Method>> kAlgorithms = {
      {"fs", Method::Fs}, {"pbsr", Method::Pbsr}, {"exp", Method::Exp}};

  StudyReport report;
  report.metadata["study"] = "scaling";
  report.metadata["model"] = "random_linear";
  report.metadata["config"] = config_summary(opts.compute.pbsr);
  report.metadata["seeds"] = std::to_string(opts.seeds) + " from " + std::to_string(opts.first_seed);
  report.metadata["reps"] = std::to_string(opts.reps);
  report.metadata["grid"] = "uniform [0, " + std::to_string(opts.t1) + "] dt=" + std::to_string(opts.dt);
  report.metadata["environment"] = "single-threaded, steady_clock, median over seeds x reps";

  for (int n : opts.dims) {
    if (n < 1) throw UsageError("scaling dimensions must be >= 1");
    ScalingRecord record;
    record.n = n;
    std::map<std::string, std::vector<double>> samples;
    for (int s = 0; s < opts.seeds; ++s) {
      const Model model = make_random_linear(n, opts.first_seed + static_cast<std::uint64_t>(s));
      const TimeGrid grid = uniform_grid(model.t0, opts.t1, opts.dt);
      for (int r = 0; r < opts.reps; ++r) {
        for (const auto& [name, method] : kAlgorithms) {
          samples[name].push_back(time_call([&] { (void)compute_sensitivity(model, method, grid, opts.compute); }));
        }
      }
    }
    for (auto& [name, values] : samples) record.runtime[name] = median(values);
    report.scaling.push_back(std::move(record));
  }
  if (opts.dims.size() >= 5) {
    for (const auto& [name, method] : kAlgorithms) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& rec : report.scaling) pts.emplace_back(rec.n, rec.runtime.at(name));
      report.fits[name] = fit_power_law(pts);
    }
  }
  return report;
}

}  // namespace pbsens
