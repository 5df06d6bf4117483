// pbsens: compute and compare ODE parameter sensitivities from the command line.
//
// Exit codes: 0 success, 2 usage error, 3 numerical divergence.

#include "pbsens/pbsens.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct Options {
  std::string model = "scalar_decay";
  std::string method = "pbsr";
  std::optional<double> t0, t1, dt;
  std::string grid_file;
  bool jitter = false;
  double eps_tol = 1e-4;
  int n_max = 10;
  double refine_mult = 10.0;
  bool force_pbs = false;
  bool no_forcing_check = false;
  std::uint64_t seed = 1;
  std::string out = ".";
  std::string format = "csv";
  std::string config;

  // compare
  std::string reference = "fs";
  std::vector<std::string> candidates = {"pbsr", "exp"};
  // convergence
  int levels = 5;
  // scaling
  std::vector<int> dims = {5, 10, 20, 40, 60, 80};
  int seeds = 1;
  int reps = 10;
};

pbsens::PbsrConfig pbsr_config(const Options& o) {
  pbsens::PbsrConfig cfg;
  cfg.eps_tol = o.eps_tol;
  cfg.n_max = o.n_max;
  cfg.refine_mult = o.refine_mult;
  cfg.force_pbs = o.force_pbs;
  cfg.check_forcing = !o.no_forcing_check;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw pbsens::UsageError(e.what());
  }
  return cfg;
}

pbsens::TimeGrid make_grid(const Options& o, const pbsens::Model& model) {
  if (!o.grid_file.empty()) return pbsens::read_grid_file(o.grid_file);
  const double t0 = o.t0.value_or(model.t0);
  const double t1 = o.t1.value_or(model.t1);
  const double dt = o.dt.value_or(model.dt);
  if (!(t1 > t0) || !(dt > 0.0)) throw pbsens::UsageError("need --t1 > --t0 and --dt > 0");
  return o.jitter ? pbsens::jittered_grid(t0, t1, dt, o.seed) : pbsens::uniform_grid(t0, t1, dt);
}

std::filesystem::path output_path(const Options& o, const std::string& stem) {
  std::filesystem::create_directories(o.out);
  return std::filesystem::path(o.out) / (stem + "." + o.format);
}

void write_table(const Options& o, const std::string& stem, const pbsens::CsvTable& table) {
  const auto path = output_path(o, stem);
  std::ofstream out(path);
  if (!out) throw pbsens::FormatError("cannot write " + path.string());
  pbsens::write_csv(out, table);
  std::cout << "wrote " << path.string() << '\n';
}

void write_json(const Options& o, const std::string& stem, const nlohmann::json& j) {
  const auto path = output_path(o, stem);
  std::ofstream out(path);
  if (!out) throw pbsens::FormatError("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
  std::cout << "wrote " << path.string() << '\n';
}

int cmd_compute(const Options& o) {
  const pbsens::Method method = pbsens::parse_method(o.method);
  const pbsens::Model model = pbsens::make_model(o.model);
  const pbsens::TimeGrid grid = make_grid(o, model);
  pbsens::ComputeOptions opts;
  opts.pbsr = pbsr_config(o);
  const pbsens::MethodResult result = pbsens::compute_sensitivity(model, method, grid, opts);
  const pbsens::CsvTable table = pbsens::sensitivity_table(result.trajectory, result.sensitivity);
  const std::string stem = "compute_" + o.method;
  if (o.format == "json") {
    nlohmann::json j;
    j["model"] = model.system.name;
    j["method"] = o.method;
    j["columns"] = table.header;
    j["rows"] = table.rows;
    write_json(o, stem, j);
  } else {
    write_table(o, stem, table);
  }
  return kExitOk;
}

int cmd_compare(const Options& o) {
  const pbsens::Model model = pbsens::make_model(o.model);
  const pbsens::TimeGrid grid = make_grid(o, model);
  pbsens::ComputeOptions opts;
  opts.pbsr = pbsr_config(o);
  std::vector<pbsens::Method> candidates;
  for (const auto& c : o.candidates) candidates.push_back(pbsens::parse_method(c));
  const pbsens::StudyReport report = pbsens::run_compare(model, grid, opts, pbsens::parse_method(o.reference),
                                                         candidates, pbsens::harness_threads());
  for (const auto& s : report.compare) {
    std::vector<double> tail(s.relative_error.begin() + 1, s.relative_error.end());
    std::size_t eq = 0;
    for (bool f : s.equilibrium) eq += f ? 1 : 0;
    std::cout << s.method << ": median re = " << pbsens::median(tail)
              << ", max re = " << *std::max_element(tail.begin(), tail.end()) << ", exponential steps = " << eq
              << '\n';
  }
  if (o.format == "json") {
    write_json(o, "compare", pbsens::to_json(report));
  } else {
    write_table(o, "compare", pbsens::compare_table(report));
  }
  return kExitOk;
}

int cmd_convergence(const Options& o) {
  const pbsens::Model model = pbsens::make_model(o.model);
  pbsens::ComputeOptions opts;
  opts.pbsr = pbsr_config(o);
  const double base_dt = o.dt.value_or(0.1);
  const pbsens::StudyReport report =
      pbsens::run_convergence(model, o.levels, base_dt, pbsens::parse_method(o.method), opts);
  for (const auto& r : report.convergence) {
    std::cout << "dt_max = " << r.dt_max << "  max error = " << r.max_error << '\n';
  }
  if (report.slope) {
    std::cout << "fitted order: " << *report.slope << '\n';
  } else {
    std::cout << "errors at the noise floor (<= " << pbsens::kConvergenceFloor << "); no order fitted\n";
  }
  if (o.format == "json") {
    write_json(o, "convergence", pbsens::to_json(report));
  } else {
    write_table(o, "convergence", pbsens::convergence_table(report));
  }
  return kExitOk;
}

int cmd_scaling(const Options& o) {
  pbsens::ScalingOptions opts = pbsens::default_scaling_options();
  opts.dims = o.dims;
  opts.seeds = o.seeds;
  opts.first_seed = o.seed;
  opts.reps = o.reps;
  if (o.t1) opts.t1 = *o.t1;
  if (o.dt) opts.dt = *o.dt;
  opts.compute.pbsr = pbsr_config(o);
  // Scaling always runs PBS on every interval.
  opts.compute.pbsr.force_pbs = true;
  const pbsens::StudyReport report = pbsens::run_scaling(opts);
  for (const auto& r : report.scaling) {
    std::cout << "n = " << std::setw(4) << r.n;
    for (const auto& [name, seconds] : r.runtime) std::cout << "  " << name << " = " << seconds << " s";
    std::cout << '\n';
  }
  for (const auto& [name, fit] : report.fits) {
    std::cout << name << ": runtime ~ " << fit.a << " * n^" << fit.b << '\n';
  }
  if (o.format == "json") {
    write_json(o, "scaling", pbsens::to_json(report));
  } else {
    write_table(o, "scaling", pbsens::scaling_table(report));
    if (!report.fits.empty()) write_table(o, "scaling_fits", pbsens::fits_table(report));
  }
  return kExitOk;
}

int cmd_list_models() {
  for (const auto& info : pbsens::list_models()) {
    std::cout << std::left << std::setw(16) << info.name << std::setw(34) << info.usage << info.description << '\n';
  }
  return kExitOk;
}

/// Fills options that were not given on the command line from a JSON object
/// whose keys are the long flag names without dashes.
void apply_config(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw pbsens::UsageError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw pbsens::UsageError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw pbsens::UsageError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw pbsens::UsageError("unknown config key '" + key + "' for subcommand " + sub.get_name());
    }
    if (opt->count() > 0) continue;  // command line wins
    std::vector<std::string> results;
    auto as_text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      for (const auto& v : value) results.push_back(as_text(v));
    } else if (value.is_boolean()) {
      if (!value.get<bool>()) continue;
      results.push_back("true");
    } else {
      results.push_back(as_text(value));
    }
    opt->add_result(results);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter sensitivities of ODE systems via truncated Peano-Baker series"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "Model name, e.g. chua or random_linear:n=40:seed=7");
    sub->add_option("--t0", o.t0, "Start time (default: model)");
    sub->add_option("--t1", o.t1, "End time (default: model)");
    sub->add_option("--dt", o.dt, "Uniform grid step (default: model)");
    sub->add_option("--grid-file", o.grid_file, "Plain-text grid, one ascending time per line");
    sub->add_flag("--jitter", o.jitter, "Perturb interior grid nodes by up to 20% (seeded by --seed)");
    sub->add_option("--eps-tol", o.eps_tol, "Relative Jacobian change below which the exponential step is used");
    sub->add_option("--n-max", o.n_max, "Largest refinement before falling back to the exponential step");
    sub->add_option("--refine-mult", o.refine_mult, "Multiplier in n_int = ceil(mult * dt * ||df/dx||)");
    sub->add_flag("--force-pbs", o.force_pbs, "Never take the exponential branch");
    sub->add_flag("--no-forcing-check", o.no_forcing_check,
                  "Switch on the df/dx change alone, ignoring changes in df/dp");
    sub->add_option("--seed", o.seed, "Seed for grid jitter / first scaling seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--config", o.config, "JSON file with option values (command line wins)");
  };

  CLI::App* compute = app.add_subcommand("compute", "Sensitivities of one model with one method");
  add_common(compute);
  compute->add_option("--method", o.method, "pbsr | exp | pbs | fs | fd");

  CLI::App* compare = app.add_subcommand("compare", "Relative error of candidate methods against a reference");
  add_common(compare);
  compare->add_option("--reference", o.reference, "Reference method");
  compare->add_option("--candidates", o.candidates, "Candidate methods")->delimiter(',');

  CLI::App* convergence = app.add_subcommand("convergence", "Empirical order under grid halving");
  add_common(convergence);
  convergence->add_option("--method", o.method, "Method under test");
  convergence->add_option("--levels", o.levels, "Number of grid levels (>= 3)");

  CLI::App* scaling = app.add_subcommand("scaling", "Runtime vs dimension on random linear systems");
  add_common(scaling);
  scaling->add_option("--dims", o.dims, "Dimensions")->delimiter(',');
  scaling->add_option("--seeds", o.seeds, "Number of random systems per dimension");
  scaling->add_option("--reps", o.reps, "Timed repetitions per system");

  CLI::App* list = app.add_subcommand("list-models", "Show the built-in models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    for (CLI::App* sub : {compute, compare, convergence, scaling}) {
      if (sub->parsed() && !o.config.empty()) apply_config(*sub, o.config);
    }
    if (compute->parsed()) return cmd_compute(o);
    if (compare->parsed()) return cmd_compare(o);
    if (convergence->parsed()) {
      if (convergence->get_option("--method")->count() == 0) o.method = "pbs";
      // Plain PBS is studied without the exponential branch.
      if (o.method == "pbs") o.force_pbs = true;
      return cmd_convergence(o);
    }
    if (scaling->parsed()) return cmd_scaling(o);
    if (list->parsed()) return cmd_list_models();
  } catch (const pbsens::DivergenceError& e) {
    std::cerr << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kExitDivergence;
  } catch (const pbsens::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const pbsens::UnknownModelError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const pbsens::FormatError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const pbsens::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
