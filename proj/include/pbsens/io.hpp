#pragma once

// CSV and JSON serialisation of trajectories and study reports.
//
// Sensitivity CSV: t, x_1..x_nx, S_1_1, S_2_1, .., S_nx_1, S_1_2, .., equilibrium, singular
// i.e. S is flattened column-major, S_l_i = dx_l/dp_i with 1-based l, i.
// Values are written with 17 significant digits so parsing restores them
// exactly.

#include "pbsens/ode.hpp"
#include "pbsens/sensitivity.hpp"
#include "pbsens/study.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pbsens {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("missing CSV column '" + name + "'");
  }
  bool operator==(const CsvTable&) const = default;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& os, const CsvTable& table) {
  for (std::size_t i = 0; i < table.header.size(); ++i) os << (i ? "," : "") << table.header[i];
  os << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) throw FormatError("CSV row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << '\n';
  }
}

inline std::string to_csv(const CsvTable& table) {
  std::ostringstream os;
  write_csv(os, table);
  return os.str();
}

inline CsvTable parse_csv(std::istream& is) {
  CsvTable table;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (table.header.empty()) {
      table.header = split(line);
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != table.header.size()) {
      throw FormatError("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(table.header.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || std::isspace(static_cast<unsigned char>(c.front())) || end != c.c_str() + c.size()) {
        throw FormatError("malformed CSV number '" + c + "'");
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw FormatError("CSV has no header row");
  return table;
}

inline CsvTable parse_csv(const std::string& text) {
  std::istringstream is(text);
  return parse_csv(is);
}

inline std::string sensitivity_column(int l, int i) {
  return "S_" + std::to_string(l + 1) + "_" + std::to_string(i + 1);
}

/// One row per time point: t, states, flattened S, equilibrium, singular.
inline CsvTable sensitivity_table(const Trajectory& traj, const SensitivityTrajectory& sens) {
  if (traj.times != sens.times) throw FormatError("state and sensitivity grids differ");
  const int n_x = static_cast<int>(traj.states.front().size());
  const int n_p = static_cast<int>(sens.matrices.front().cols());
  CsvTable table;
  table.header.push_back("t");
  for (int l = 0; l < n_x; ++l) table.header.push_back("x_" + std::to_string(l + 1));
  for (int i = 0; i < n_p; ++i)
    for (int l = 0; l < n_x; ++l) table.header.push_back(sensitivity_column(l, i));
  table.header.push_back("equilibrium");
  table.header.push_back("singular");
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    std::vector<double> row;
    row.reserve(table.header.size());
    row.push_back(traj.times[k]);
    for (int l = 0; l < n_x; ++l) row.push_back(traj.states[k][l]);
    for (int i = 0; i < n_p; ++i)
      for (int l = 0; l < n_x; ++l) row.push_back(sens.matrices[k](l, i));
    row.push_back(k < sens.equilibrium_flags.size() && sens.equilibrium_flags[k] ? 1.0 : 0.0);
    row.push_back(k < sens.singular_flags.size() && sens.singular_flags[k] ? 1.0 : 0.0);
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Inverse of sensitivity_table. Dimensions are recovered from the header.
inline std::pair<Trajectory, SensitivityTrajectory> sensitivity_from_table(const CsvTable& table,
                                                                           Method method = Method::Pbsr) {
  int n_x = 0;
  while (std::find(table.header.begin(), table.header.end(), "x_" + std::to_string(n_x + 1)) != table.header.end()) ++n_x;
  int n_p = 0;
  while (n_x > 0 && std::find(table.header.begin(), table.header.end(), sensitivity_column(0, n_p)) != table.header.end()) ++n_p;
  if (n_x == 0 || n_p == 0) throw FormatError("sensitivity CSV lacks state or S columns");
  if (table.header.size() != static_cast<std::size_t>(1 + n_x + n_x * n_p + 2)) {
    throw FormatError("sensitivity CSV has unexpected column count");
  }
  if (table.header[0] != "t") throw FormatError("sensitivity CSV must start with a t column");
  for (int i = 0; i < n_p; ++i)
    for (int l = 0; l < n_x; ++l)
      if (table.header[static_cast<std::size_t>(1 + n_x + i * n_x + l)] != sensitivity_column(l, i))
        throw FormatError("sensitivity CSV columns are not in column-major S order");
  const std::size_t c_eq = table.column("equilibrium");
  const std::size_t c_sg = table.column("singular");
  Trajectory traj;
  SensitivityTrajectory sens;
  sens.method = method;
  for (const auto& row : table.rows) {
    traj.times.push_back(row[0]);
    Vector x(n_x);
    for (int l = 0; l < n_x; ++l) x[l] = row[static_cast<std::size_t>(1 + l)];
    traj.states.push_back(std::move(x));
    DenseMatrix s(n_x, n_p);
    for (int i = 0; i < n_p; ++i)
      for (int l = 0; l < n_x; ++l) s(l, i) = row[static_cast<std::size_t>(1 + n_x + i * n_x + l)];
    sens.matrices.push_back(std::move(s));
    sens.equilibrium_flags.push_back(row[c_eq] != 0.0);
    sens.singular_flags.push_back(row[c_sg] != 0.0);
  }
  sens.times = traj.times;
  return {std::move(traj), std::move(sens)};
}

// Study report tables

/// t, re_<m>..., eq_<m>... for each compared method.
inline CsvTable compare_table(const StudyReport& report) {
  CsvTable table;
  table.header.push_back("t");
  for (const auto& s : report.compare) table.header.push_back("re_" + s.method);
  for (const auto& s : report.compare) table.header.push_back("eq_" + s.method);
  for (std::size_t k = 0; k < report.times.size(); ++k) {
    std::vector<double> row{report.times[k]};
    for (const auto& s : report.compare) row.push_back(s.relative_error[k]);
    for (const auto& s : report.compare) row.push_back(s.equilibrium[k] ? 1.0 : 0.0);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline void compare_from_table(const CsvTable& table, StudyReport& report) {
  report.times.clear();
  report.compare.clear();
  for (const auto& name : table.header) {
    if (name.rfind("re_", 0) == 0) report.compare.push_back({name.substr(3), {}, {}});
  }
  const std::size_t c_t = table.column("t");
  for (const auto& row : table.rows) {
    report.times.push_back(row[c_t]);
    for (auto& s : report.compare) {
      s.relative_error.push_back(row[table.column("re_" + s.method)]);
      s.equilibrium.push_back(row[table.column("eq_" + s.method)] != 0.0);
    }
  }
}

inline CsvTable convergence_table(const StudyReport& report) {
  CsvTable table;
  table.header = {"dt_max", "max_error"};
  for (const auto& r : report.convergence) table.rows.push_back({r.dt_max, r.max_error});
  return table;
}

inline void convergence_from_table(const CsvTable& table, StudyReport& report) {
  report.convergence.clear();
  const std::size_t c_dt = table.column("dt_max");
  const std::size_t c_err = table.column("max_error");
  for (const auto& row : table.rows) report.convergence.push_back({row[c_dt], row[c_err]});
}

/// n, then one runtime column per algorithm (seconds).
inline CsvTable scaling_table(const StudyReport& report) {
  CsvTable table;
  table.header.push_back("n");
  if (report.scaling.empty()) return table;
  for (const auto& [name, _] : report.scaling.front().runtime) table.header.push_back("runtime_" + name);
  for (const auto& rec : report.scaling) {
    std::vector<double> row{static_cast<double>(rec.n)};
    for (const auto& [name, seconds] : rec.runtime) row.push_back(seconds);
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline void scaling_from_table(const CsvTable& table, StudyReport& report) {
  report.scaling.clear();
  const std::size_t c_n = table.column("n");
  for (const auto& row : table.rows) {
    ScalingRecord rec;
    rec.n = static_cast<int>(row[c_n]);
    for (std::size_t i = 0; i < table.header.size(); ++i) {
      if (table.header[i].rfind("runtime_", 0) == 0) rec.runtime[table.header[i].substr(8)] = row[i];
    }
    report.scaling.push_back(std::move(rec));
  }
}

/// Power-law fits as rows: algorithm index is implicit in the header order.
inline CsvTable fits_table(const StudyReport& report) {
  CsvTable table;
  for (const auto& [name, _] : report.fits) {
    table.header.push_back("a_" + name);
    table.header.push_back("b_" + name);
  }
  std::vector<double> row;
  for (const auto& [_, fit] : report.fits) {
    row.push_back(fit.a);
    row.push_back(fit.b);
  }
  if (!row.empty()) table.rows.push_back(std::move(row));
  return table;
}

// JSON

inline nlohmann::json to_json(const StudyReport& report) {
  nlohmann::json j;
  j["metadata"] = report.metadata;
  if (!report.compare.empty()) {
    j["times"] = report.times;
    nlohmann::json series = nlohmann::json::array();
    for (const auto& s : report.compare) {
      series.push_back({{"method", s.method},
                        {"relative_error", s.relative_error},
                        {"equilibrium", std::vector<bool>(s.equilibrium)}});
    }
    j["compare"] = series;
  }
  if (!report.convergence.empty()) {
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& r : report.convergence) levels.push_back({{"dt_max", r.dt_max}, {"max_error", r.max_error}});
    j["convergence"] = levels;
    j["slope"] = report.slope ? nlohmann::json(*report.slope) : nlohmann::json(nullptr);
  }
  if (!report.scaling.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.scaling) rows.push_back({{"n", r.n}, {"runtime", r.runtime}});
    j["scaling"] = rows;
    nlohmann::json fits = nlohmann::json::object();
    for (const auto& [name, fit] : report.fits) fits[name] = {{"a", fit.a}, {"b", fit.b}};
    j["fits"] = fits;
  }
  return j;
}

inline StudyReport report_from_json(const nlohmann::json& j) {
  StudyReport report;
  report.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  if (j.contains("compare")) {
    report.times = j.at("times").get<std::vector<double>>();
    for (const auto& s : j.at("compare")) {
      CompareSeries series;
      series.method = s.at("method").get<std::string>();
      series.relative_error = s.at("relative_error").get<std::vector<double>>();
      series.equilibrium = s.at("equilibrium").get<std::vector<bool>>();
      report.compare.push_back(std::move(series));
    }
  }
  if (j.contains("convergence")) {
    for (const auto& r : j.at("convergence")) {
      report.convergence.push_back({r.at("dt_max").get<double>(), r.at("max_error").get<double>()});
    }
    if (!j.at("slope").is_null()) report.slope = j.at("slope").get<double>();
  }
  if (j.contains("scaling")) {
    for (const auto& r : j.at("scaling")) {
      report.scaling.push_back({r.at("n").get<int>(), r.at("runtime").get<std::map<std::string, double>>()});
    }
    for (const auto& [name, fit] : j.at("fits").items()) {
      report.fits[name] = {fit.at("a").get<double>(), fit.at("b").get<double>()};
    }
  }
  return report;
}

/// One ascending time per line; blank lines and '#' comments ignored.
inline TimeGrid read_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open grid file '" + path + "'");
  TimeGrid grid;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(line.substr(first), &used);
    } catch (const std::exception&) {
      throw FormatError("grid file line " + std::to_string(lineno) + ": not a number");
    }
    const auto rest = line.substr(first + used).find_first_not_of(" \t\r");
    if (rest != std::string::npos) throw FormatError("grid file line " + std::to_string(lineno) + ": trailing text");
    grid.push_back(v);
  }
  try {
    validate_grid(grid);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("grid file: ") + e.what());
  }
  return grid;
}

}  // namespace pbsens
