#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mixem/model.hpp"
#include "mixem/numerics.hpp"
#include "mixem/rng.hpp"

namespace mixem {

/// Per-component quantities of a CFUST density that depend only on the
/// parameters: built once per component per iteration, shared by all rows.
struct CfustDerived {
  Matrix omega;          // sigma + delta delta'
  CholFactor omega_chol;
  Matrix lambda;         // I_q - delta' omega^{-1} delta
  Matrix a;              // q x p, delta' omega^{-1}
  MvtCdf t_cdf;          // T_q(.; 0, lambda, nu + p)
};

/// Throws NotPositiveDefinite (omega or lambda) and Domain (nu).
CfustDerived make_cfust_derived(const ComponentParams& params, QmcSpec qmc = {});

double log_mvn_pdf(std::span<const double> y, std::span<const double> mu, const CholFactor& sigma_chol);
/// Throws Domain for nu <= 0.
double log_mvt_pdf(std::span<const double> y, std::span<const double> mu, const CholFactor& omega_chol, double nu);
/// Throws DensityUnderflow when the skewing CDF factor falls below 1e-300.
double cfust_log_pdf(std::span<const double> y, const ComponentParams& params, const CfustDerived& derived);

/// A component density prepared for repeated evaluation.
///
/// Gaussian and t use the Cholesky factor of sigma; CFUST uses that of omega
/// plus the derived skew terms. Batch evaluation goes through the SIMD
/// kernels and returns bit-identical values to the single-point functions.
class ComponentDensity {
 public:
  ComponentDensity(ComponentFamily family, const ComponentParams& params, QmcSpec qmc = {});

  /// Single point; CFUST underflow throws DensityUnderflow.
  double log_pdf(std::span<const double> y) const;

  /// rows is n_rows x p. Writes log densities (CFUST underflow becomes -inf)
  /// and, when requested, the squared Mahalanobis distances under the
  /// component's scale matrix.
  void log_pdf_batch(std::span<const double> rows, std::span<double> out,
                     std::span<double> mahalanobis_out = {}) const;

  /// Squared Mahalanobis distances only.
  void mahalanobis_batch(std::span<const double> rows, std::span<double> out) const;

  const CholFactor& scale_chol() const noexcept { return chol_; }
  const ComponentParams& params() const noexcept { return params_; }
  ComponentFamily family() const noexcept { return family_; }

 private:
  double from_mahalanobis(double d) const;

  ComponentFamily family_;
  ComponentParams params_;
  CholFactor chol_;
  double log_const_ = 0.0;
  std::optional<CfustDerived> cfust_;
};

struct LabeledSample {
  DataSet data;
  std::vector<int> labels;
};

/// Draws n labeled observations. CFUST draws use the constructive form
/// y = mu + (delta |u| + L eps) / sqrt(w), L L' = sigma, u ~ N(0, I_q),
/// w ~ Gamma(nu/2, rate nu/2).
LabeledSample sample_mixture(const MixtureParams& params, std::size_t n, RngStream& rng);

}  // namespace mixem
