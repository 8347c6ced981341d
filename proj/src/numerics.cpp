#include "mixem/numerics.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "mixem/error.hpp"
#include "mixem/kernels.hpp"

namespace mixem {

CholFactor cholesky(const Matrix& s) {
  if (s.rows != s.cols || s.rows == 0) throw Error(Errc::InvalidArgument, "cholesky: matrix must be square");
  const std::size_t n = s.rows;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double a = s(i, j);
      const double b = s(j, i);
      if (!(std::abs(a - b) <= 1e-12 * std::max(1.0, std::max(std::abs(a), std::abs(b)))))
        throw Error(Errc::InvalidArgument, "cholesky: matrix is not symmetric");
    }
  }

  CholFactor out{Matrix(n, n), 0.0};
  Matrix& l = out.l;
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = s(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 1e-300)) throw Error(Errc::NotPositiveDefinite, "cholesky: non-positive pivot");
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double acc = s(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      l(i, j) = acc / ljj;
    }
    out.log_det += 2.0 * std::log(ljj);
  }
  return out;
}

void forward_solve(const Matrix& l, std::span<double> r) {
  const std::size_t n = l.rows;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = r[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * r[k];
    r[i] = acc / l(i, i);
  }
}

void back_solve_transposed(const Matrix& l, std::span<double> r) {
  const std::size_t n = l.rows;
  for (std::size_t ii = n; ii-- > 0;) {
    double acc = r[ii];
    for (std::size_t k = ii + 1; k < n; ++k) acc -= l(k, ii) * r[k];
    r[ii] = acc / l(ii, ii);
  }
}

double mahalanobis(std::span<const double> y, std::span<const double> mu, const CholFactor& chol) {
  const std::size_t p = chol.dim();
  if (y.size() != p || mu.size() != p) throw Error(Errc::DimensionMismatch, "mahalanobis: dimension mismatch");
  double d = 0.0;
  kernels::scalar::mahalanobis_batch(y.data(), 1, p, mu.data(), chol.l.data.data(), &d);
  return d;
}

Matrix chol_inverse(const CholFactor& chol) {
  const std::size_t n = chol.dim();
  Matrix inv(n, n);
  std::vector<double> col(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::fill(col.begin(), col.end(), 0.0);
    col[c] = 1.0;
    forward_solve(chol.l, col);
    back_solve_transposed(chol.l, col);
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

double log_gamma_fn(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw Error(Errc::Domain, "log_gamma_fn: argument must be positive");
  return boost::math::lgamma(x);
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw Error(Errc::Domain, "digamma: argument must be positive");
  return boost::math::digamma(x);
}

double find_root(const std::function<double(double)>& f, double lo, double hi, double tol) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if (std::signbit(flo) == std::signbit(fhi) || std::isnan(flo) || std::isnan(fhi))
    throw Error(Errc::NoBracket, "find_root: no sign change on the bracket");
  for (int iter = 0; iter < 2000 && hi - lo > tol; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if (std::signbit(fm) == std::signbit(flo)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double student_t_cdf(double x, double df) {
  if (!(df > 0.0)) throw Error(Errc::Domain, "student_t_cdf: df must be positive");
  if (std::isnan(x)) return x;
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return boost::math::cdf(boost::math::students_t_distribution<double>(df), x);
}

namespace {

// Lattice coordinate with the fixed half-cell shift, then baker's periodization.
// Both steps are exact rationals over n, so the values never touch 0 or 1.
double lattice_coordinate(std::size_t k, std::size_t generator, std::size_t n) {
  const std::size_t j = static_cast<std::size_t>((static_cast<unsigned __int128>(k) * generator) % n);
  const auto odd = static_cast<double>(2 * j + 1) - static_cast<double>(n);
  return (static_cast<double>(n) - std::abs(odd)) / static_cast<double>(n);
}

}  // namespace

MvtCdf::MvtCdf(const Matrix& scale, double df, QmcSpec qmc) {
  if (scale.rows != scale.cols || scale.rows < 1 || scale.rows > 3)
    throw Error(Errc::Domain, "mvt_cdf: dimension must be 1, 2 or 3");
  if (!(df > 0.0) || !std::isfinite(df)) throw Error(Errc::Domain, "mvt_cdf: df must be positive");
  const std::size_t n = qmc.n_points;
  if (!std::has_single_bit(n) || n < (std::size_t{1} << 10) || n > (std::size_t{1} << 16))
    throw Error(Errc::InvalidArgument, "mvt_cdf: point count must be a power of two in [2^10, 2^16]");

  q_ = scale.rows;
  df_ = df;
  if (q_ == 1) {
    if (!(scale(0, 0) > 0.0)) throw Error(Errc::Domain, "mvt_cdf: scale is not positive definite");
    sd1_ = std::sqrt(scale(0, 0));
    return;
  }
  try {
    chol_ = cholesky(scale).l;
  } catch (const Error&) {
    throw Error(Errc::Domain, "mvt_cdf: scale is not positive definite");
  }

  chi_.resize(n);
  uniform_.resize(n * (q_ - 1));
  const double half_df = 0.5 * df;
  for (std::size_t k = 0; k < n; ++k) {
    const double u0 = lattice_coordinate(k, kLatticeGenerator[0], n);
    chi_[k] = std::sqrt(boost::math::gamma_p_inv(half_df, u0) / half_df);
    for (std::size_t d = 1; d < q_; ++d) uniform_[k * (q_ - 1) + d - 1] = lattice_coordinate(k, kLatticeGenerator[d], n);
  }
}

double MvtCdf::operator()(std::span<const double> x) const {
  if (x.size() != q_) throw Error(Errc::DimensionMismatch, "mvt_cdf: point has the wrong dimension");
  if (q_ == 1) return student_t_cdf(x[0] / sd1_, df_);

  const std::size_t n = chi_.size();
  std::array<double, 3> z{};
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = chi_[k];
    const double* u = uniform_.data() + k * (q_ - 1);
    double prod = 1.0;
    for (std::size_t i = 0; i < q_; ++i) {
      double acc = s * x[i];
      for (std::size_t j = 0; j < i; ++j) acc -= chol_(i, j) * z[j];
      const double e = normal_cdf(acc / chol_(i, i));
      prod *= e;
      if (prod == 0.0) break;
      if (i + 1 < q_) z[i] = normal_quantile(u[i] * e);
    }
    total += prod;
  }
  return total / static_cast<double>(n);
}

double mvt_cdf(std::span<const double> x, const Matrix& scale, double df, QmcSpec qmc) {
  return MvtCdf(scale, df, qmc)(x);
}

}  // namespace mixem
