#pragma once

// Serial reference EM: E-step with partial sums, closed-form M-steps for the
// Gaussian and t families, log-likelihood, the Aitken stopping rule, and the
// iteration driver shared by the serial, threaded and networked runners.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mixem/densities.hpp"
#include "mixem/exact_sum.hpp"
#include "mixem/model.hpp"

namespace mixem {

/// Half-open row range [begin, end).
struct BlockRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const BlockRange&, const BlockRange&) = default;
};

/// Responsibility-weighted sums for one component over one block of rows.
/// w is the latent-gamma weight (nu + p) / (nu + d) for t components and 1
/// for Gaussian ones; CFUST blocks carry s1 only.
struct ComponentSums {
  ExactSum s1;               // sum tau
  ExactSum sw;               // sum tau w
  ExactSum s4;               // sum tau (ln w - w)
  std::vector<ExactSum> s2;  // sum tau w y, length p
  std::vector<ExactSum> s3;  // sum tau w y y', packed lower triangle (r >= c)

  friend bool operator==(const ComponentSums&, const ComponentSums&) = default;
};

inline std::size_t packed_index(std::size_t r, std::size_t c) { return r * (r + 1) / 2 + c; }

/// What a block of the E-step hands to the M-step.
struct PartialSums {
  std::size_t block = 0;
  std::vector<ComponentSums> components;
  ExactSum loglik;  // sum over the block of ln f(y_j)

  /// Empty sums shaped for the family (moments only for fittable families).
  static PartialSums zero(ComponentFamily family, std::size_t g, std::size_t p, std::size_t block = 0);

  /// Exact, so the result is independent of how rows were split into blocks.
  void merge(const PartialSums& other);

  friend bool operator==(const PartialSums&, const PartialSums&) = default;
};

/// Rounded totals that the M-step consumes.
struct SumTotals {
  std::vector<double> s1;
  std::vector<double> sw;
  std::vector<double> s4;
  std::vector<Vector> s2;
  std::vector<Matrix> s3;  // full symmetric p x p
  double loglik = 0.0;
};

SumTotals round_totals(const PartialSums& sums);

struct EStepOutput {
  Matrix tau;                          // n x g (may be empty for remote runs)
  std::vector<PartialSums> partials;   // one per block, ascending block order
  double loglik_prev = 0.0;            // log-likelihood at the parameters used
};

/// Component densities and log mixing weights prepared once per iteration.
struct PreparedMixture {
  ComponentFamily family;
  std::vector<double> log_pi;
  std::vector<ComponentDensity> components;

  std::size_t g() const noexcept { return components.size(); }
  std::size_t p() const noexcept { return components.empty() ? 0 : components.front().params().mu.size(); }
};

PreparedMixture prepare_mixture(const MixtureParams& params, QmcSpec qmc = {});

/// Turns the g values ln(pi_i) + ln f_ij for one observation into
/// responsibilities; returns ln f_j. Throws DensityUnderflow if every term is -inf.
double responsibilities_from_log_terms(std::span<const double> log_terms, std::span<double> tau);

/// E-step over rows [block.begin, block.end).
///
/// tau_rows receives block.size() x g responsibilities. If reuse_tau (full
/// n x g) is given, responsibilities are copied from it instead of being
/// recomputed and the block log-likelihood is left at zero; t weights are
/// still evaluated since they depend on the current distances only.
PartialSums e_step_block(const DataSet& data, const PreparedMixture& mixture, BlockRange block,
                         std::span<double> tau_rows, const Matrix* reuse_tau = nullptr, std::size_t block_index = 0);

struct BlockEStep {
  PartialSums sums;
  Matrix tau;  // block.size() x g
};

BlockEStep e_step(const DataSet& data, const MixtureParams& params, BlockRange block);

/// sum_j ln sum_i pi_i f_i(y_j), via log-sum-exp and exact accumulation.
double log_likelihood(const DataSet& data, const MixtureParams& params, QmcSpec qmc = {});

/// Mixing proportions s1 / n, floored at 1e-10 and renormalized.
std::vector<double> m_step_weights(const SumTotals& totals, std::size_t n);

/// Single-component updates (what one M-step worker computes).
/// Throw EmptyComponent when s1 < 1e-10.
ComponentParams m_step_gaussian_component(const SumTotals& totals, std::size_t i);
ComponentParams m_step_student_t_component(const SumTotals& totals, std::size_t i, const ComponentParams& prev);

MixtureParams m_step_gaussian(const SumTotals& totals, std::size_t n);
MixtureParams m_step_student_t(const SumTotals& totals, std::size_t n, const MixtureParams& prev);
/// Dispatch on prev.family; Cfust throws Unsupported.
MixtureParams m_step(const SumTotals& totals, std::size_t n, const MixtureParams& prev);

/// Symmetrize and, if Cholesky fails, add a growing ridge (1e-8 x mean
/// diagonal, then x10) until it succeeds. Throws NotPositiveDefinite.
Matrix repair_scale(Matrix sigma);

/// Root of the t degrees-of-freedom score, clamped to [0.1, 1000].
double update_nu(double s1, double s4, double nu_prev, std::size_t p);

enum class StopDecision { Stop, Continue };

/// Aitken limit estimate l_inf from three successive values; empty when the
/// acceleration is >= 1 (or the step is flat) and no extrapolation exists.
std::optional<double> aitken_limit(double l_km2, double l_km1, double l_k);

StopDecision aitken_should_stop(double l_km2, double l_km1, double l_k, double epsilon);

/// Starting point for the iterations: parameters, their log-likelihood and
/// the responsibilities already computed from them.
struct InitCandidate {
  MixtureParams psi0;
  double loglik0 = 0.0;
  Matrix tau1;
  std::size_t index = 0;
  InitStrategy strategy = InitStrategy::KMeansPlusRandom;
  std::uint64_t seed = 0;
};

/// Builds the candidate for given starting parameters (one full-data E-step).
InitCandidate candidate_from_params(const DataSet& data, MixtureParams params);

/// E-step over all rows at the given parameters; reuse_tau as in e_step_block.
using EStepFn = std::function<EStepOutput(const MixtureParams& params, const Matrix* reuse_tau)>;
/// M-step from the E-step's partial sums: new parameters and the
/// log-likelihood of the previous ones.
using MStepFn = std::function<std::pair<MixtureParams, double>(const std::vector<PartialSums>& partials,
                                                               std::size_t n, const MixtureParams& prev)>;

struct RunHooks {
  /// Called after every completed iteration with (iteration, current trace).
  std::function<void(std::size_t, const std::vector<double>&)> on_iteration;
  /// Final hard labels; when unset they come from e_step_fn's responsibilities.
  std::function<std::vector<int>(const MixtureParams&)> labeler;
};

/// Serial M-step: merge in block order, round, update.
std::pair<MixtureParams, double> serial_m_step(const std::vector<PartialSums>& partials, std::size_t n,
                                               const MixtureParams& prev);

/// The EM iteration shared by every execution mode.
///
/// Iteration k runs the E-step at Psi^(k-1) (the first one reuses tau^(1)
/// from the candidate) and the M-step to Psi^(k), which also yields
/// l^(k-1). Stops at the first Aitken Stop or after max_iter iterations and
/// returns Psi^(k); labels come from one more E-step at the returned
/// parameters.
FitResult run_em(const DataSet& data, const FitConfig& config, const InitCandidate& start, const EStepFn& e_step_fn,
                 const MStepFn& m_step_fn, const RunHooks& hooks = {});

/// Hard labels at the given parameters, from a serial full-data E-step.
std::vector<int> labels_at(const DataSet& data, const MixtureParams& params);

/// Single-block reference fit from the given starting parameters.
FitResult fit_serial(const DataSet& data, const FitConfig& config, const MixtureParams& init);

}  // namespace mixem
