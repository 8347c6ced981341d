#include "mixem/densities.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mixem/error.hpp"
#include "mixem/kernels.hpp"

namespace mixem {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kUnderflow = 1e-300;

double mvn_log_const(std::size_t p, double log_det) {
  return -0.5 * static_cast<double>(p) * kLog2Pi - 0.5 * log_det;
}

double mvt_log_const(std::size_t p, double nu, double log_det) {
  if (!(nu > 0.0) || !std::isfinite(nu)) throw Error(Errc::Domain, "degrees of freedom must be positive");
  const double dp = static_cast<double>(p);
  return log_gamma_fn(0.5 * (nu + dp)) - log_gamma_fn(0.5 * nu) - 0.5 * dp * std::log(nu * std::numbers::pi) -
         0.5 * log_det;
}

double mvt_from_d(double log_const, std::size_t p, double nu, double d) {
  return log_const - 0.5 * (nu + static_cast<double>(p)) * std::log1p(d / nu);
}

// q ln 2 + ln T, formed as ln(2^q T) so the delta = 0 case (T = 2^-q) is exact.
double skew_log_factor(double t, unsigned q) { return std::log(std::ldexp(t, static_cast<int>(q))); }

}  // namespace

CfustDerived make_cfust_derived(const ComponentParams& params, QmcSpec qmc) {
  const std::size_t p = params.mu.size();
  const std::size_t q = params.delta.cols;
  if (params.delta.rows != p || q < 1 || q > kMaxSkewDim)
    throw Error(Errc::DimensionMismatch, "cfust: skewness matrix must be p x q with q in [1, 3]");
  if (!(params.nu > 0.0) || !std::isfinite(params.nu)) throw Error(Errc::Domain, "cfust: nu must be positive");

  Matrix omega = params.sigma;
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < q; ++t) acc += params.delta(r, t) * params.delta(c, t);
      omega(r, c) += acc;
    }
  CholFactor omega_chol = cholesky(omega);

  // B = L^{-1} delta, column by column.
  Matrix b(p, q);
  Matrix a(q, p);
  std::vector<double> col(p);
  for (std::size_t t = 0; t < q; ++t) {
    for (std::size_t r = 0; r < p; ++r) col[r] = params.delta(r, t);
    forward_solve(omega_chol.l, col);
    for (std::size_t r = 0; r < p; ++r) b(r, t) = col[r];
    back_solve_transposed(omega_chol.l, col);
    for (std::size_t r = 0; r < p; ++r) a(t, r) = col[r];
  }
  Matrix lambda = Matrix::identity(q);
  for (std::size_t s = 0; s < q; ++s)
    for (std::size_t t = 0; t < q; ++t) {
      double acc = 0.0;
      for (std::size_t r = 0; r < p; ++r) acc += b(r, s) * b(r, t);
      lambda(s, t) -= acc;
    }

  std::optional<MvtCdf> cdf;
  try {
    cdf.emplace(lambda, params.nu + static_cast<double>(p), qmc);
  } catch (const Error& e) {
    if (e.code() == Errc::Domain) throw Error(Errc::NotPositiveDefinite, "cfust: lambda is not positive definite");
    throw;
  }
  return CfustDerived{std::move(omega), std::move(omega_chol), std::move(lambda), std::move(a), std::move(*cdf)};
}

double log_mvn_pdf(std::span<const double> y, std::span<const double> mu, const CholFactor& sigma_chol) {
  return mvn_log_const(mu.size(), sigma_chol.log_det) - 0.5 * mahalanobis(y, mu, sigma_chol);
}

double log_mvt_pdf(std::span<const double> y, std::span<const double> mu, const CholFactor& omega_chol, double nu) {
  const double c = mvt_log_const(mu.size(), nu, omega_chol.log_det);
  return mvt_from_d(c, mu.size(), nu, mahalanobis(y, mu, omega_chol));
}

double cfust_log_pdf(std::span<const double> y, const ComponentParams& params, const CfustDerived& derived) {
  const std::size_t p = params.mu.size();
  const std::size_t q = derived.a.rows;
  const double d = mahalanobis(y, params.mu, derived.omega_chol);
  std::array<double, kMaxSkewDim> proj{};
  kernels::scalar::project_batch(y.data(), 1, p, params.mu.data(), derived.a.data.data(), q, proj.data());
  const double scale = std::sqrt((params.nu + static_cast<double>(p)) / (params.nu + d));
  for (std::size_t t = 0; t < q; ++t) proj[t] *= scale;
  const double tail = derived.t_cdf(std::span<const double>(proj.data(), q));
  if (!(tail >= kUnderflow)) throw Error(Errc::DensityUnderflow, "cfust: skewing factor underflow");
  const double c = mvt_log_const(p, params.nu, derived.omega_chol.log_det);
  return mvt_from_d(c, p, params.nu, d) + skew_log_factor(tail, static_cast<unsigned>(q));
}

ComponentDensity::ComponentDensity(ComponentFamily family, const ComponentParams& params, QmcSpec qmc)
    : family_(family), params_(params) {
  const std::size_t p = params_.mu.size();
  switch (family_.kind) {
    case ComponentFamily::Kind::Gaussian:
      chol_ = cholesky(params_.sigma);
      log_const_ = mvn_log_const(p, chol_.log_det);
      break;
    case ComponentFamily::Kind::StudentT:
      chol_ = cholesky(params_.sigma);
      log_const_ = mvt_log_const(p, params_.nu, chol_.log_det);
      break;
    case ComponentFamily::Kind::Cfust:
      cfust_.emplace(make_cfust_derived(params_, qmc));
      chol_ = cfust_->omega_chol;
      log_const_ = mvt_log_const(p, params_.nu, chol_.log_det);
      break;
  }
}

double ComponentDensity::from_mahalanobis(double d) const {
  if (family_.kind == ComponentFamily::Kind::Gaussian) return log_const_ - 0.5 * d;
  return mvt_from_d(log_const_, params_.mu.size(), params_.nu, d);
}

double ComponentDensity::log_pdf(std::span<const double> y) const {
  if (cfust_) return cfust_log_pdf(y, params_, *cfust_);
  return from_mahalanobis(mahalanobis(y, params_.mu, chol_));
}

void ComponentDensity::mahalanobis_batch(std::span<const double> rows, std::span<double> out) const {
  kernels::mahalanobis_batch(rows, params_.mu.size(), params_.mu, chol_.l, out);
}

void ComponentDensity::log_pdf_batch(std::span<const double> rows, std::span<double> out,
                                     std::span<double> mahalanobis_out) const {
  const std::size_t p = params_.mu.size();
  const std::size_t n_rows = rows.size() / p;
  if (out.size() < n_rows) throw Error(Errc::DimensionMismatch, "log_pdf_batch: output too small");

  std::vector<double> local_d;
  std::span<double> d = mahalanobis_out;
  if (d.size() < n_rows) {
    local_d.resize(n_rows);
    d = local_d;
  }
  mahalanobis_batch(rows, d.first(n_rows));

  if (!cfust_) {
    for (std::size_t r = 0; r < n_rows; ++r) out[r] = from_mahalanobis(d[r]);
    return;
  }

  const std::size_t q = cfust_->a.rows;
  std::vector<double> proj(n_rows * q);
  kernels::project_batch(rows, p, params_.mu, cfust_->a, proj);
  const double dfp = params_.nu + static_cast<double>(p);
  for (std::size_t r = 0; r < n_rows; ++r) {
    std::span<double> x(proj.data() + r * q, q);
    const double scale = std::sqrt(dfp / (params_.nu + d[r]));
    for (auto& v : x) v *= scale;
    const double tail = cfust_->t_cdf(x);
    out[r] = tail >= kUnderflow ? from_mahalanobis(d[r]) + skew_log_factor(tail, static_cast<unsigned>(q)) : kNegInf;
  }
}

LabeledSample sample_mixture(const MixtureParams& params, std::size_t n, RngStream& rng) {
  validate_params(params, params.p());
  const std::size_t g = params.g();
  const std::size_t p = params.p();
  const auto kind = params.family.kind;

  std::vector<Matrix> factors;
  factors.reserve(g);
  for (const auto& c : params.components) factors.push_back(cholesky(c.sigma).l);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(n * p);
  std::vector<int> labels(n);
  std::vector<double> eps(p);
  std::array<double, kMaxSkewDim> u{};

  for (std::size_t j = 0; j < n; ++j) {
    const double pick = rng.uniform();
    std::size_t label = g - 1;
    double cumulative = 0.0;
    for (std::size_t i = 0; i + 1 < g; ++i) {
      cumulative += params.pi[i];
      if (pick < cumulative) {
        label = i;
        break;
      }
    }
    labels[j] = static_cast<int>(label);
    const auto& comp = params.components[label];
    const Matrix& l = factors[label];

    double inv_sqrt_w = 1.0;
    if (kind != ComponentFamily::Kind::Gaussian) {
      std::gamma_distribution<double> gamma(0.5 * comp.nu, 2.0 / comp.nu);
      inv_sqrt_w = 1.0 / std::sqrt(gamma(rng));
    }
    const std::size_t q = kind == ComponentFamily::Kind::Cfust ? comp.delta.cols : 0;
    for (std::size_t t = 0; t < q; ++t) u[t] = std::abs(normal(rng));
    for (auto& e : eps) e = normal(rng);

    double* y = values.data() + j * p;
    for (std::size_t r = 0; r < p; ++r) {
      double acc = 0.0;
      for (std::size_t t = 0; t < q; ++t) acc += comp.delta(r, t) * u[t];
      for (std::size_t k = 0; k <= r; ++k) acc += l(r, k) * eps[k];
      y[r] = comp.mu[r] + acc * inv_sqrt_w;
    }
  }
  return {DataSet(n, p, std::move(values)), std::move(labels)};
}

}  // namespace mixem
