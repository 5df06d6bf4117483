#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <unistd.h>

using namespace pbsens;

namespace {

double random_double(std::mt19937_64& gen) {
  // Mix of magnitudes, signs and exact specials.
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> exponent(-300, 300);
  switch (kind(gen)) {
    case 0: return 0.0;
    case 1: return -0.0;
    case 2: return unit(gen);
    case 3: return std::ldexp(unit(gen), exponent(gen));
    case 4: return std::numeric_limits<double>::denorm_min() * (1 + exponent(gen) % 7);
    default: return std::nextafter(1.0, 2.0) * unit(gen) * 1e15;
  }
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pbsens_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Csv, RandomRoundTrip) {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 50; ++trial) {
    CsvTable t;
    const int cols = 1 + trial % 9;
    for (int c = 0; c < cols; ++c) t.header.push_back("c" + std::to_string(c));
    for (int r = 0; r < trial; ++r) {
      std::vector<double> row;
      for (int c = 0; c < cols; ++c) row.push_back(random_double(gen));
      t.rows.push_back(row);
    }
    const CsvTable back = parse_csv(to_csv(t));
    ASSERT_EQ(back.header, t.header);
    ASSERT_EQ(back.rows.size(), t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      for (std::size_t c = 0; c < t.rows[r].size(); ++c) {
        EXPECT_EQ(back.rows[r][c], t.rows[r][c]);
        EXPECT_EQ(std::signbit(back.rows[r][c]), std::signbit(t.rows[r][c]));
      }
  }
}

TEST(Csv, MalformedInput) {
  EXPECT_THROW((void)parse_csv(""), FormatError);
  EXPECT_THROW((void)parse_csv("a,b\n1\n"), FormatError);
  EXPECT_THROW((void)parse_csv("a,b\n1,x\n"), FormatError);
  EXPECT_THROW((void)parse_csv("a,b\n1,2abc\n"), FormatError);
  EXPECT_THROW((void)parse_csv("a,b\n1,\n"), FormatError);
  const CsvTable crlf = parse_csv("a,b\r\n1,2\r\n\r\n");
  EXPECT_EQ(crlf.rows, (std::vector<std::vector<double>>{{1.0, 2.0}}));
  EXPECT_THROW((void)crlf.column("c"), FormatError);
}

TEST(Csv, SensitivityTableShapeAndRoundTrip) {
  const Model m = make_chua();
  const TimeGrid grid = uniform_grid(0.0, 2.0, m.dt);
  const MethodResult r = compute_sensitivity(m, Method::Pbsr, grid);
  const CsvTable table = sensitivity_table(r.trajectory, r.sensitivity);
  ASSERT_EQ(table.rows.size(), grid.size());
  ASSERT_EQ(table.header.size(), 1u + 3u + 6u + 2u);
  EXPECT_EQ(table.header[0], "t");
  EXPECT_EQ(table.header[4], "S_1_1");
  EXPECT_EQ(table.header[6], "S_3_1");
  EXPECT_EQ(table.header[7], "S_1_2");
  EXPECT_EQ(table.rows[5][7], r.sensitivity.matrices[5](0, 1));

  const auto [traj, sens] = sensitivity_from_table(parse_csv(to_csv(table)), Method::Pbsr);
  EXPECT_EQ(traj.times, r.trajectory.times);
  EXPECT_EQ(sens.times, r.sensitivity.times);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_EQ(traj.states[k], r.trajectory.states[k]);
    EXPECT_EQ(sens.matrices[k], r.sensitivity.matrices[k]);
  }
  EXPECT_EQ(sens.equilibrium_flags, r.sensitivity.equilibrium_flags);
  EXPECT_EQ(sens.singular_flags, r.sensitivity.singular_flags);
  EXPECT_EQ(sensitivity_table(traj, sens), table);
}

TEST(Csv, SensitivityTableRejectsReorderedColumns) {
  const Model m = make_const_linear(2, 2, 1);
  const MethodResult r = compute_sensitivity(m, Method::Exp, uniform_grid(0.0, 0.5, 0.1));
  CsvTable table = sensitivity_table(r.trajectory, r.sensitivity);
  std::swap(table.header[3], table.header[4]);
  EXPECT_THROW((void)sensitivity_from_table(table), FormatError);
}

TEST(Csv, ReportTablesRoundTrip) {
  const Model m = make_chua();
  StudyReport report = run_compare(m, uniform_grid(0.0, 1.0, m.dt));
  StudyReport back;
  compare_from_table(parse_csv(to_csv(compare_table(report))), back);
  EXPECT_EQ(back.times, report.times);
  ASSERT_EQ(back.compare.size(), report.compare.size());
  for (std::size_t i = 0; i < back.compare.size(); ++i) {
    EXPECT_EQ(back.compare[i].method, report.compare[i].method);
    EXPECT_EQ(back.compare[i].relative_error, report.compare[i].relative_error);
    EXPECT_EQ(back.compare[i].equilibrium, report.compare[i].equilibrium);
  }

  report.convergence = {{0.1, 3e-3}, {0.05, 7.5e-4}, {0.025, 1.9e-4}};
  convergence_from_table(parse_csv(to_csv(convergence_table(report))), back);
  ASSERT_EQ(back.convergence.size(), 3u);
  EXPECT_EQ(back.convergence[2].max_error, 1.9e-4);

  report.scaling = {{5, {{"fs", 0.1}, {"pbsr", 0.2}, {"exp", 0.01}}}, {10, {{"fs", 0.4}, {"pbsr", 0.5}, {"exp", 0.03}}}};
  scaling_from_table(parse_csv(to_csv(scaling_table(report))), back);
  ASSERT_EQ(back.scaling.size(), 2u);
  EXPECT_EQ(back.scaling[1].n, 10);
  EXPECT_EQ(back.scaling[1].runtime, report.scaling[1].runtime);
}

TEST(Json, ReportRoundTrip) {
  const Model m = make_scalar_decay();
  StudyReport report = run_compare(m, uniform_grid(0.0, 1.0, 0.1));
  report.convergence = {{0.1, 1e-3}, {0.05, 2.5e-4}};
  report.slope = 2.0;
  report.scaling = {{5, {{"fs", 0.1}, {"pbsr", 0.2}, {"exp", 0.01}}}};
  report.fits["fs"] = {1e-5, 4.2};
  const StudyReport back = report_from_json(nlohmann::json::parse(to_json(report).dump()));
  EXPECT_EQ(back.metadata, report.metadata);
  EXPECT_EQ(back.times, report.times);
  ASSERT_EQ(back.compare.size(), report.compare.size());
  EXPECT_EQ(back.compare[0].relative_error, report.compare[0].relative_error);
  EXPECT_EQ(back.slope, report.slope);
  EXPECT_EQ(back.scaling[0].runtime, report.scaling[0].runtime);
  EXPECT_EQ(back.fits.at("fs").b, 4.2);

  StudyReport no_slope;
  no_slope.convergence = {{0.1, 1e-12}};
  EXPECT_FALSE(report_from_json(to_json(no_slope)).slope.has_value());
}

TEST(GridFile, ReadsCommentsAndValidates) {
  const auto path = temp_file("grid.txt");
  {
    std::ofstream out(path);
    out << "# times\n0\n\n0.25\n  0.5 \n1.0\n";
  }
  EXPECT_EQ(read_grid_file(path.string()), (TimeGrid{0.0, 0.25, 0.5, 1.0}));
  {
    std::ofstream out(path);
    out << "0\n0.5\n0.4\n";
  }
  EXPECT_THROW((void)read_grid_file(path.string()), FormatError);
  {
    std::ofstream out(path);
    out << "0\nhalf\n";
  }
  EXPECT_THROW((void)read_grid_file(path.string()), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW((void)read_grid_file(path.string()), FormatError);
}
