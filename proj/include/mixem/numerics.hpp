#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mixem/matrix.hpp"

namespace mixem {

struct CholFactor {
  Matrix l;             // lower triangular, positive diagonal
  double log_det = 0.0; // log-determinant of the factored matrix

  std::size_t dim() const noexcept { return l.rows; }
};

/// Lower Cholesky factor. Throws NotPositiveDefinite when a pivot is <= 1e-300,
/// InvalidArgument when the input is not square or not symmetric within 1e-12.
CholFactor cholesky(const Matrix& s);

/// Solves L z = r in place (forward substitution).
void forward_solve(const Matrix& l, std::span<double> r);
/// Solves L' x = r in place (back substitution).
void back_solve_transposed(const Matrix& l, std::span<double> r);

/// (y - mu)' S^{-1} (y - mu) for S = L L'.
double mahalanobis(std::span<const double> y, std::span<const double> mu, const CholFactor& chol);

/// S^{-1} for S = L L'.
Matrix chol_inverse(const CholFactor& chol);

double log_gamma_fn(double x);
double digamma(double x);

/// Bisection on a sign change of f over [lo, hi]; stops once the bracket is
/// no wider than tol and returns its midpoint. Throws NoBracket.
double find_root(const std::function<double(double)>& f, double lo, double hi, double tol);

double normal_cdf(double x);
double normal_quantile(double p);
/// Univariate Student-t CDF with df degrees of freedom.
double student_t_cdf(double x, double df);

/// Rank-1 lattice used for the multivariate t CDF.
struct QmcSpec {
  std::size_t n_points = 4096;
};

/// Fixed generating vector (first three coordinates of an embedded lattice
/// sequence for base-2 point counts).
inline constexpr std::size_t kLatticeGenerator[3] = {1, 182667, 469891};

/// Centered q-variate t CDF P(T <= x), T ~ t_q(0, scale, df), q in {1,2,3}.
///
/// Construction cost (chi quantiles and Cholesky of the scale) is paid once,
/// so evaluating many points with the same scale and df is cheap. q = 1 uses
/// the incomplete-beta form; q = 2, 3 transform the integral by separation of
/// variables (a chi mixing variable plus q - 1 conditional normals) and average
/// over the unshifted-but-centered lattice with a baker's periodization. No
/// randomization: repeated calls return identical bits.
class MvtCdf {
 public:
  /// Throws Domain for df <= 0, q outside [1,3], or a non-PD scale;
  /// InvalidArgument for a point count that is not a power of two in [2^10, 2^16].
  MvtCdf(const Matrix& scale, double df, QmcSpec qmc = {});

  double operator()(std::span<const double> x) const;

  std::size_t dim() const noexcept { return q_; }
  double df() const noexcept { return df_; }

 private:
  std::size_t q_ = 0;
  double df_ = 0.0;
  double sd1_ = 1.0;             // sqrt(scale) for q = 1
  Matrix chol_;                  // q >= 2
  std::vector<double> chi_;      // per point: sqrt(W / df)
  std::vector<double> uniform_;  // per point: q - 1 periodized coordinates
};

double mvt_cdf(std::span<const double> x, const Matrix& scale, double df, QmcSpec qmc = {});

}  // namespace mixem
