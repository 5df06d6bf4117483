#pragma once

// Built-in test systems and a small name-addressable registry.
//
//   scalar_decay                    x' = -p x
//   const_linear:nx=..:np=..:seed=  x' = A x + B p, A stable, B constant
//   random_linear:n=..:seed=..      x' = A x + p.^2 + u, A = -M^T M, u = 1
//   chua                            Chua's circuit with a cubic nonlinearity
//
// Random entries come from std::mt19937_64 seeded with `seed`, mapped to
// [0, 1) as (g() >> 11) * 2^-53. Matrices are filled in column-major order,
// followed by the parameter vector. Example numbers therefore depend on the
// seed; only structural properties are stable across seeds.

#include "pbsens/linalg.hpp"
#include "pbsens/ode.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pbsens {

struct Model {
  OdeSystem system;
  Vector p;
  Vector x0;
  double t0 = 0.0;
  double t1 = 1.0;
  double dt = 0.1;
  /// Exact S(t) for the default p and x0, when known in closed form.
  std::function<DenseMatrix(double t)> exact_sensitivity;
};

class UnknownModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

class UnitUniform {
 public:
  explicit UnitUniform(std::uint64_t seed) : gen_(seed) {}
  double operator()() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace detail

inline Model make_scalar_decay() {
  Model m;
  m.system.name = "scalar_decay";
  m.system.n_x = 1;
  m.system.n_u = 0;
  m.system.n_p = 1;
  m.system.f = [](const Vector& x, const Vector&, const Vector& p) {
    return Vector{{-p[0] * x[0]}};
  };
  m.system.jac_x = [](const Vector&, const Vector&, const Vector& p) {
    return DenseMatrix{{-p[0]}};
  };
  m.system.jac_p = [](const Vector& x, const Vector&, const Vector&) {
    return DenseMatrix{{-x[0]}};
  };
  m.system.input = [](double) { return Vector(0); };
  m.p = Vector{{1.0}};
  m.x0 = Vector{{1.0}};
  m.t0 = 0.0;
  m.t1 = 5.0;
  m.dt = 0.1;
  const double p = m.p[0];
  const double x0 = m.x0[0];
  // x(t) = x0 e^{-pt}  =>  dx/dp = -t x0 e^{-pt}
  m.exact_sensitivity = [p, x0](double t) { return DenseMatrix{{-t * x0 * std::exp(-p * t)}}; };
  return m;
}

/// x' = A x + B p with A = -M^T M - 0.1 I (M, B entries uniform on [-1, 1]).
/// df/dp = B is constant, so S(t) = (e^{tA} - I) A^{-1} B.
inline Model make_const_linear(int n_x, int n_p, std::uint64_t seed) {
  if (n_x < 1 || n_p < 1) throw std::invalid_argument("const_linear: dimensions must be >= 1");
  detail::UnitUniform uni(seed);
  DenseMatrix mm(n_x, n_x);
  for (Eigen::Index j = 0; j < n_x; ++j)
    for (Eigen::Index i = 0; i < n_x; ++i) mm(i, j) = 2.0 * uni() - 1.0;
  DenseMatrix b(n_x, n_p);
  for (Eigen::Index j = 0; j < n_p; ++j)
    for (Eigen::Index i = 0; i < n_x; ++i) b(i, j) = 2.0 * uni() - 1.0;
  DenseMatrix a = -(mm.transpose() * mm);
  a.diagonal().array() -= 0.1;

  Model m;
  m.system.name = "const_linear:nx=" + std::to_string(n_x) + ":np=" + std::to_string(n_p) +
                  ":seed=" + std::to_string(seed);
  m.system.n_x = n_x;
  m.system.n_u = 0;
  m.system.n_p = n_p;
  m.system.f = [a, b](const Vector& x, const Vector&, const Vector& p) -> Vector { return a * x + b * p; };
  m.system.jac_x = [a](const Vector&, const Vector&, const Vector&) { return a; };
  m.system.jac_p = [b](const Vector&, const Vector&, const Vector&) { return b; };
  m.system.input = [](double) { return Vector(0); };
  m.p = Vector::Ones(n_p);
  m.x0 = Vector::Ones(n_x);
  m.t0 = 0.0;
  m.t1 = 5.0;
  m.dt = 0.1;
  const DenseMatrix a_inv_b = solve_linear(a, b);
  m.exact_sensitivity = [a, a_inv_b](double t) -> DenseMatrix {
    DenseMatrix e = mat_exp(t * a);
    e.diagonal().array() -= 1.0;
    return e * a_inv_b;
  };
  return m;
}

/// x' = A x + p.^2 + u with A = -B^T B, B and p uniform on [0, 1], u = 1.
/// df/dx = A, df/dp = diag(2 p); n_x = n_u = n_p = n.
inline Model make_random_linear(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("random_linear: n must be >= 1");
  detail::UnitUniform uni(seed);
  DenseMatrix bm(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) bm(i, j) = uni();
  Vector p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = uni();
  const DenseMatrix a = -(bm.transpose() * bm);

  Model m;
  m.system.name = "random_linear:n=" + std::to_string(n) + ":seed=" + std::to_string(seed);
  m.system.n_x = n;
  m.system.n_u = n;
  m.system.n_p = n;
  m.system.f = [a](const Vector& x, const Vector& u, const Vector& q) -> Vector {
    return a * x + q.cwiseAbs2() + u;
  };
  m.system.jac_x = [a](const Vector&, const Vector&, const Vector&) { return a; };
  m.system.jac_p = [](const Vector&, const Vector&, const Vector& q) -> DenseMatrix {
    return (2.0 * q).asDiagonal();
  };
  m.system.input = [n](double) { return Vector::Ones(n); };
  m.p = p;
  m.x0 = Vector::Zero(n);
  m.t0 = 0.0;
  m.t1 = 1.0;
  m.dt = 0.1;
  return m;
}

/// Chua's circuit:
///   x1' = p1 (x2 - x1 - g(x1)),  g(x1) = -(8/7) x1 + (4/63) x1^3
///   x2' = x1 - x2 + x3
///   x3' = -p2 x2
/// with p = (7, 15), x0 = (0, 0, -0.1) over [0, 10].
inline Model make_chua() {
  Model m;
  m.system.name = "chua";
  m.system.n_x = 3;
  m.system.n_u = 0;
  m.system.n_p = 2;
  auto g = [](double x1) { return -8.0 / 7.0 * x1 + 4.0 / 63.0 * x1 * x1 * x1; };
  m.system.f = [g](const Vector& x, const Vector&, const Vector& p) {
    return Vector{{p[0] * (x[1] - x[0] - g(x[0])), x[0] - x[1] + x[2], -p[1] * x[1]}};
  };
  m.system.jac_x = [](const Vector& x, const Vector&, const Vector& p) {
    const double dg = -8.0 / 7.0 + 12.0 / 63.0 * x[0] * x[0];
    return DenseMatrix{{p[0] * (-1.0 - dg), p[0], 0.0}, {1.0, -1.0, 1.0}, {0.0, -p[1], 0.0}};
  };
  m.system.jac_p = [g](const Vector& x, const Vector&, const Vector&) {
    return DenseMatrix{{x[1] - x[0] - g(x[0]), 0.0}, {0.0, 0.0}, {0.0, -x[1]}};
  };
  m.system.input = [](double) { return Vector(0); };
  m.p = Vector{{7.0, 15.0}};
  m.x0 = Vector{{0.0, 0.0, -0.1}};
  m.t0 = 0.0;
  m.t1 = 10.0;
  m.dt = 0.05;
  return m;
}

struct ModelInfo {
  std::string name;
  std::string usage;
  std::string description;
};

inline std::vector<ModelInfo> list_models() {
  return {
      {"chua", "chua", "Chua circuit, n_x = 3, n_p = 2, p = (7, 15), t in [0, 10]"},
      {"random_linear", "random_linear:n=40:seed=7", "x' = -B^T B x + p^2 + 1, n_x = n_p = n"},
      {"scalar_decay", "scalar_decay", "x' = -p x, closed-form sensitivity -t x0 e^{-pt}"},
      {"const_linear", "const_linear:nx=4:np=3:seed=1", "x' = A x + B p with constant stable A"},
  };
}

/// Parses "name[:key=value]*" and builds the model.
inline Model make_model(const std::string& descriptor) {
  std::vector<std::string> parts;
  {
    std::stringstream ss(descriptor);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
  }
  if (parts.empty() || parts.front().empty()) throw UnknownModelError("empty model name");
  const std::string name = parts.front();
  std::map<std::string, std::string> opts;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UnknownModelError("malformed model option '" + parts[i] + "' in '" + descriptor + "'");
    }
    opts[parts[i].substr(0, eq)] = parts[i].substr(eq + 1);
  }

  auto take_int = [&](const std::string& key, long fallback) -> long {
    const auto it = opts.find(key);
    if (it == opts.end()) return fallback;
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(it->second, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != it->second.size()) {
      throw UnknownModelError("option " + key + " of model " + name + " is not an integer");
    }
    opts.erase(it);
    return v;
  };
  auto finish = [&](Model m) {
    if (!opts.empty()) {
      throw UnknownModelError("unknown option '" + opts.begin()->first + "' for model " + name);
    }
    return m;
  };

  if (name == "chua") return finish(make_chua());
  if (name == "scalar_decay") return finish(make_scalar_decay());
  if (name == "random_linear") {
    const long n = take_int("n", 10);
    const long seed = take_int("seed", 1);
    if (n < 1) throw UnknownModelError("random_linear: n must be >= 1");
    return finish(make_random_linear(static_cast<int>(n), static_cast<std::uint64_t>(seed)));
  }
  if (name == "const_linear") {
    const long nx = take_int("nx", 4);
    const long np = take_int("np", 3);
    const long seed = take_int("seed", 1);
    if (nx < 1 || np < 1) throw UnknownModelError("const_linear: nx and np must be >= 1");
    return finish(make_const_linear(static_cast<int>(nx), static_cast<int>(np),
                                    static_cast<std::uint64_t>(seed)));
  }
  throw UnknownModelError("unknown model '" + name + "'");
}

}  // namespace pbsens
