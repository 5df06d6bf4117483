#pragma once

// Dense kernels used by the sensitivity algorithms: matrix exponential,
// the phi_1 function, Frobenius norm and a pivoted linear solve.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pbsens {

using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(double pivot)
      : std::runtime_error("singular matrix: pivot magnitude " + std::to_string(pivot)),
        pivot_(pivot) {}
  double pivot() const noexcept { return pivot_; }

 private:
  double pivot_;
};

namespace detail {

inline void require_square(const DenseMatrix& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

inline double one_norm(const DenseMatrix& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

}  // namespace detail

inline double frobenius_norm(const DenseMatrix& a) { return a.norm(); }

/// Matrix exponential by scaling and squaring with a diagonal Pade core
/// (degrees 3, 5, 7, 9, 13 selected by the 1-norm, Higham 2005 thresholds).
inline DenseMatrix mat_exp(const DenseMatrix& a) {
  detail::require_square(a, "mat_exp");
  const Eigen::Index n = a.rows();
  const DenseMatrix ident = DenseMatrix::Identity(n, n);
  const double norm1 = detail::one_norm(a);

  static constexpr std::array<double, 4> kTheta = {1.495585217958292e-2, 2.539398330063230e-1,
                                                   9.504178996162932e-1, 2.097847961257068e0};
  static constexpr double kTheta13 = 5.371920351148152e0;

  auto pade_solve = [&](const DenseMatrix& u, const DenseMatrix& v) -> DenseMatrix {
    return (v - u).partialPivLu().solve(v + u);
  };

  if (norm1 <= kTheta[3]) {
    const DenseMatrix a2 = a * a;
    if (norm1 <= kTheta[0]) {
      static constexpr double b[] = {120.0, 60.0, 12.0, 1.0};
      DenseMatrix u = a * (b[3] * a2 + b[1] * ident);
      DenseMatrix v = b[2] * a2 + b[0] * ident;
      return pade_solve(u, v);
    }
    const DenseMatrix a4 = a2 * a2;
    if (norm1 <= kTheta[1]) {
      static constexpr double b[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
      DenseMatrix u = a * (b[5] * a4 + b[3] * a2 + b[1] * ident);
      DenseMatrix v = b[4] * a4 + b[2] * a2 + b[0] * ident;
      return pade_solve(u, v);
    }
    const DenseMatrix a6 = a4 * a2;
    if (norm1 <= kTheta[2]) {
      static constexpr double b[] = {17297280.0, 8648640.0, 1995840.0, 277200.0,
                                     25200.0,    1512.0,    56.0,      1.0};
      DenseMatrix u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
      DenseMatrix v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
      return pade_solve(u, v);
    }
    const DenseMatrix a8 = a6 * a2;
    static constexpr double b[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                                   30270240.0,    2162160.0,    110880.0,     3960.0,
                                   90.0,          1.0};
    DenseMatrix u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
    DenseMatrix v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
    return pade_solve(u, v);
  }

  int squarings = 0;
  if (norm1 > kTheta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / kTheta13))));
  }
  const DenseMatrix as = a / std::ldexp(1.0, squarings);
  static constexpr double b[] = {64764752532480000.0,
                                 32382376266240000.0,
                                 7771770303897600.0,
                                 1187353796428800.0,
                                 129060195264000.0,
                                 10559470521600.0,
                                 670442572800.0,
                                 33522128640.0,
                                 1323241920.0,
                                 40840800.0,
                                 960960.0,
                                 16380.0,
                                 182.0,
                                 1.0};
  const DenseMatrix a2 = as * as;
  const DenseMatrix a4 = a2 * a2;
  const DenseMatrix a6 = a4 * a2;
  DenseMatrix u = as * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                        b[3] * a2 + b[1] * ident);
  DenseMatrix v =
      a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
  DenseMatrix r = pade_solve(u, v);
  for (int s = 0; s < squarings; ++s) {
    r = r * r;
  }
  return r;
}

/// phi1(A) = sum_h (-1)^h A^h / (h+1)!, i.e. (I - e^{-A}) A^{-1} when A is
/// invertible. Evaluated by a Taylor series on A / 2^s followed by the
/// doubling relation g(2A) = (I + e^{-A}) g(A) / 2, so no inverse is formed.
inline DenseMatrix phi1(const DenseMatrix& a) {
  detail::require_square(a, "phi1");
  const Eigen::Index n = a.rows();
  const DenseMatrix ident = DenseMatrix::Identity(n, n);

  const double norm = frobenius_norm(a);
  int squarings = 0;
  if (norm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  }
  const DenseMatrix neg = -a / std::ldexp(1.0, squarings);

  // With ||neg|| <= 1/2 the tail after 18 terms is below 2^-18 / 18! ~ 6e-22.
  constexpr int kTerms = 18;
  DenseMatrix power = ident;  // neg^h / h!
  DenseMatrix expo = ident;   // e^{neg}
  DenseMatrix g = ident;      // sum neg^h / (h+1)!
  for (int h = 1; h <= kTerms; ++h) {
    power = (power * neg) / static_cast<double>(h);
    expo += power;
    g += power / static_cast<double>(h + 1);
  }
  for (int s = 0; s < squarings; ++s) {
    g = 0.5 * ((ident + expo) * g);
    expo = expo * expo;
  }
  return g;
}

/// True when the partial-pivot LU of `a` has a pivot below 1e-14 * ||a||_F
/// (or `a` is identically zero).
inline bool is_singular_to_precision(const DenseMatrix& a, double* min_pivot = nullptr) {
  detail::require_square(a, "is_singular_to_precision");
  const double norm = frobenius_norm(a);
  if (norm == 0.0) {
    if (min_pivot != nullptr) *min_pivot = 0.0;
    return true;
  }
  Eigen::PartialPivLU<DenseMatrix> lu(a);
  const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (min_pivot != nullptr) *min_pivot = pivot;
  return !(pivot >= 1e-14 * norm);
}

/// Solves A X = B with partial-pivot LU. Throws SingularMatrixError when the
/// smallest pivot falls below 1e-14 * ||A||_F.
inline DenseMatrix solve_linear(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_square(a, "solve_linear");
  if (b.rows() != a.rows()) {
    throw DimensionError("solve_linear: right-hand side has " + std::to_string(b.rows()) +
                         " rows, expected " + std::to_string(a.rows()));
  }
  const double norm = frobenius_norm(a);
  Eigen::PartialPivLU<DenseMatrix> lu(a);
  const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (!(pivot >= 1e-14 * norm) || norm == 0.0) {
    throw SingularMatrixError(pivot);
  }
  return lu.solve(b);
}

}  // namespace pbsens
