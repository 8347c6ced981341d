#include "mixem/em.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>

#include "mixem/error.hpp"

namespace mixem {
namespace {

constexpr std::size_t kChunkRows = 128;
constexpr double kNuLo = 0.1;
constexpr double kNuHi = 1000.0;

bool has_moments(ComponentFamily family) { return family.kind != ComponentFamily::Kind::Cfust; }

PartialSums e_step_impl(const DataSet& data, const PreparedMixture& mixture, BlockRange block,
                        std::span<double> tau_rows, const Matrix* reuse_tau, std::size_t block_index,
                        bool with_moments) {
  const std::size_t g = mixture.g();
  const std::size_t p = data.p();
  if (mixture.p() != p) throw Error(Errc::DimensionMismatch, "e_step: parameters do not match the data");
  if (block.end > data.n() || block.begin > block.end) throw Error(Errc::InvalidArgument, "e_step: block out of range");
  if (tau_rows.size() < block.size() * g) throw Error(Errc::DimensionMismatch, "e_step: tau buffer too small");
  if (reuse_tau && (reuse_tau->rows != data.n() || reuse_tau->cols != g))
    throw Error(Errc::DimensionMismatch, "e_step: reused responsibilities have the wrong shape");

  const auto kind = mixture.family.kind;
  const bool student = kind == ComponentFamily::Kind::StudentT;
  with_moments = with_moments && has_moments(mixture.family);
  PartialSums sums = PartialSums::zero(mixture.family, g, with_moments ? p : 0, block_index);
  if (!with_moments)
    for (auto& c : sums.components) {
      c.s2.clear();
      c.s3.clear();
    }

  std::vector<double> logf(kChunkRows * g);
  std::vector<double> dist(kChunkRows * g);
  std::vector<double> terms(g);
  std::vector<double> weighted_y(p);
  const double dp = static_cast<double>(p);

  for (std::size_t start = block.begin; start < block.end; start += kChunkRows) {
    const std::size_t count = std::min(kChunkRows, block.end - start);
    const auto rows = data.values().subspan(start * p, count * p);
    for (std::size_t i = 0; i < g; ++i) {
      std::span<double> logf_i(logf.data() + i * kChunkRows, count);
      std::span<double> dist_i(dist.data() + i * kChunkRows, count);
      if (!reuse_tau) mixture.components[i].log_pdf_batch(rows, logf_i, dist_i);
      else if (student && with_moments) mixture.components[i].mahalanobis_batch(rows, dist_i);
    }

    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t j = start + r;
      const std::span<double> tau(tau_rows.data() + (j - block.begin) * g, g);
      if (reuse_tau) {
        const auto src = reuse_tau->row(j);
        std::copy(src.begin(), src.end(), tau.begin());
      } else {
        for (std::size_t i = 0; i < g; ++i) terms[i] = mixture.log_pi[i] + logf[i * kChunkRows + r];
        sums.loglik.add(responsibilities_from_log_terms(terms, tau));
      }

      const auto y = data.row(j);
      for (std::size_t i = 0; i < g; ++i) {
        auto& cs = sums.components[i];
        const double t = tau[i];
        cs.s1.add(t);
        if (!with_moments) continue;
        double tw = t;
        if (student) {
          const double nu = mixture.components[i].params().nu;
          const double w = (nu + dp) / (nu + dist[i * kChunkRows + r]);
          tw = t * w;
          cs.sw.add(tw);
          cs.s4.add(t * (std::log(w) - w));
        }
        for (std::size_t a = 0; a < p; ++a) {
          weighted_y[a] = tw * y[a];
          cs.s2[a].add(weighted_y[a]);
        }
        for (std::size_t a = 0; a < p; ++a)
          for (std::size_t b = 0; b <= a; ++b) cs.s3[packed_index(a, b)].add(weighted_y[a] * y[b]);
      }
    }
  }
  return sums;
}

void check_nonempty(const SumTotals& totals, std::size_t i) {
  if (!(totals.s1[i] >= kPiFloor)) throw Error(Errc::EmptyComponent, "component " + std::to_string(i) + " is empty");
}

}  // namespace

PartialSums PartialSums::zero(ComponentFamily family, std::size_t g, std::size_t p, std::size_t block) {
  PartialSums out;
  out.block = block;
  out.components.resize(g);
  if (has_moments(family))
    for (auto& c : out.components) {
      c.s2.resize(p);
      c.s3.resize(p * (p + 1) / 2);
    }
  return out;
}

void PartialSums::merge(const PartialSums& other) {
  if (other.components.size() != components.size()) throw Error(Errc::DimensionMismatch, "merge: component counts differ");
  for (std::size_t i = 0; i < components.size(); ++i) {
    auto& dst = components[i];
    const auto& src = other.components[i];
    if (dst.s2.size() != src.s2.size() || dst.s3.size() != src.s3.size())
      throw Error(Errc::DimensionMismatch, "merge: moment shapes differ");
    dst.s1.merge(src.s1);
    dst.sw.merge(src.sw);
    dst.s4.merge(src.s4);
    for (std::size_t a = 0; a < dst.s2.size(); ++a) dst.s2[a].merge(src.s2[a]);
    for (std::size_t a = 0; a < dst.s3.size(); ++a) dst.s3[a].merge(src.s3[a]);
  }
  loglik.merge(other.loglik);
}

SumTotals round_totals(const PartialSums& sums) {
  SumTotals t;
  const std::size_t g = sums.components.size();
  t.s1.resize(g);
  t.sw.resize(g);
  t.s4.resize(g);
  t.s2.resize(g);
  t.s3.resize(g);
  for (std::size_t i = 0; i < g; ++i) {
    const auto& c = sums.components[i];
    t.s1[i] = c.s1.value();
    t.sw[i] = c.sw.value();
    t.s4[i] = c.s4.value();
    const std::size_t p = c.s2.size();
    t.s2[i].resize(p);
    for (std::size_t a = 0; a < p; ++a) t.s2[i][a] = c.s2[a].value();
    t.s3[i] = Matrix(p, p);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b <= a; ++b) {
        const double v = c.s3[packed_index(a, b)].value();
        t.s3[i](a, b) = v;
        t.s3[i](b, a) = v;
      }
  }
  t.loglik = sums.loglik.value();
  return t;
}

PreparedMixture prepare_mixture(const MixtureParams& params, QmcSpec qmc) {
  PreparedMixture out{params.family, {}, {}};
  out.log_pi.reserve(params.g());
  out.components.reserve(params.g());
  for (std::size_t i = 0; i < params.g(); ++i) {
    out.log_pi.push_back(std::log(params.pi[i]));
    out.components.emplace_back(params.family, params.components[i], qmc);
  }
  return out;
}

double responsibilities_from_log_terms(std::span<const double> log_terms, std::span<double> tau) {
  double top = -std::numeric_limits<double>::infinity();
  for (const double v : log_terms)
    if (v > top) top = v;
  if (!std::isfinite(top)) throw Error(Errc::DensityUnderflow, "every component density underflows at an observation");
  double acc = 0.0;
  for (const double v : log_terms) acc += std::exp(v - top);
  const double lse = top + std::log(acc);
  for (std::size_t i = 0; i < log_terms.size(); ++i) tau[i] = std::exp(log_terms[i] - lse);
  return lse;
}

PartialSums e_step_block(const DataSet& data, const PreparedMixture& mixture, BlockRange block,
                         std::span<double> tau_rows, const Matrix* reuse_tau, std::size_t block_index) {
  return e_step_impl(data, mixture, block, tau_rows, reuse_tau, block_index, true);
}

BlockEStep e_step(const DataSet& data, const MixtureParams& params, BlockRange block) {
  const PreparedMixture mixture = prepare_mixture(params);
  Matrix tau(block.size(), params.g());
  PartialSums sums = e_step_block(data, mixture, block, tau.data);
  return {std::move(sums), std::move(tau)};
}

double log_likelihood(const DataSet& data, const MixtureParams& params, QmcSpec qmc) {
  const PreparedMixture mixture = prepare_mixture(params, qmc);
  std::vector<double> tau(data.n() * params.g());
  return e_step_impl(data, mixture, {0, data.n()}, tau, nullptr, 0, false).loglik.value();
}

std::vector<double> m_step_weights(const SumTotals& totals, std::size_t n) {
  const std::size_t g = totals.s1.size();
  std::vector<double> pi(g);
  double total = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    pi[i] = std::max(totals.s1[i] / static_cast<double>(n), kPiFloor);
    total += pi[i];
  }
  for (auto& v : pi) v /= total;
  return pi;
}

Matrix repair_scale(Matrix sigma) {
  const std::size_t p = sigma.rows;
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < a; ++b) {
      const double v = 0.5 * (sigma(a, b) + sigma(b, a));
      sigma(a, b) = v;
      sigma(b, a) = v;
    }
  double mean_diag = 0.0;
  for (std::size_t a = 0; a < p; ++a) mean_diag += sigma(a, a);
  mean_diag /= static_cast<double>(p);
  double ridge = 1e-8 * (mean_diag > 0.0 ? mean_diag : 1.0);
  Matrix trial = sigma;
  for (int attempt = 0; attempt < 12; ++attempt) {
    try {
      cholesky(trial);
      return trial;
    } catch (const Error& e) {
      if (e.code() != Errc::NotPositiveDefinite) throw;
    }
    trial = sigma;
    for (std::size_t a = 0; a < p; ++a) trial(a, a) += ridge;
    ridge *= 10.0;
  }
  throw Error(Errc::NotPositiveDefinite, "scale matrix could not be repaired");
}

ComponentParams m_step_gaussian_component(const SumTotals& totals, std::size_t i) {
  check_nonempty(totals, i);
  const double s1 = totals.s1[i];
  const std::size_t p = totals.s2[i].size();
  ComponentParams out;
  out.mu.resize(p);
  for (std::size_t a = 0; a < p; ++a) out.mu[a] = totals.s2[i][a] / s1;
  Matrix sigma(p, p);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b) sigma(a, b) = totals.s3[i](a, b) / s1 - out.mu[a] * out.mu[b];
  out.sigma = repair_scale(std::move(sigma));
  return out;
}

double update_nu(double s1, double s4, double nu_prev, std::size_t p) {
  const double shifted = 0.5 * (nu_prev + static_cast<double>(p));
  const double c = 1.0 + s4 / s1 + digamma(shifted) - std::log(shifted);
  const auto score = [c](double nu) { return std::log(0.5 * nu) - digamma(0.5 * nu) + c; };
  // ln(x) - psi(x) decreases in x, so the score is decreasing in nu.
  if (score(kNuHi) >= 0.0) return kNuHi;
  if (score(kNuLo) <= 0.0) return kNuLo;
  return find_root(score, kNuLo, kNuHi, 1e-8);
}

ComponentParams m_step_student_t_component(const SumTotals& totals, std::size_t i, const ComponentParams& prev) {
  check_nonempty(totals, i);
  const double s1 = totals.s1[i];
  const double sw = totals.sw[i];
  const auto& s2 = totals.s2[i];
  const std::size_t p = s2.size();
  ComponentParams out;
  out.mu.resize(p);
  for (std::size_t a = 0; a < p; ++a) out.mu[a] = s2[a] / sw;
  Matrix sigma(p, p);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b)
      sigma(a, b) = (totals.s3[i](a, b) - out.mu[a] * s2[b] - s2[a] * out.mu[b] + sw * out.mu[a] * out.mu[b]) / s1;
  out.sigma = repair_scale(std::move(sigma));
  out.nu = update_nu(s1, totals.s4[i], prev.nu, p);
  return out;
}

MixtureParams m_step_gaussian(const SumTotals& totals, std::size_t n) {
  MixtureParams out;
  out.family = ComponentFamily::gaussian();
  for (std::size_t i = 0; i < totals.s1.size(); ++i) out.components.push_back(m_step_gaussian_component(totals, i));
  out.pi = m_step_weights(totals, n);
  return out;
}

MixtureParams m_step_student_t(const SumTotals& totals, std::size_t n, const MixtureParams& prev) {
  if (prev.g() != totals.s1.size()) throw Error(Errc::DimensionMismatch, "m_step: previous parameters disagree");
  MixtureParams out;
  out.family = ComponentFamily::student_t();
  for (std::size_t i = 0; i < totals.s1.size(); ++i)
    out.components.push_back(m_step_student_t_component(totals, i, prev.components[i]));
  out.pi = m_step_weights(totals, n);
  return out;
}

MixtureParams m_step(const SumTotals& totals, std::size_t n, const MixtureParams& prev) {
  switch (prev.family.kind) {
    case ComponentFamily::Kind::Gaussian: return m_step_gaussian(totals, n);
    case ComponentFamily::Kind::StudentT: return m_step_student_t(totals, n, prev);
    case ComponentFamily::Kind::Cfust: break;
  }
  throw Error(Errc::Unsupported, "cfust: density evaluation only");
}

std::optional<double> aitken_limit(double l_km2, double l_km1, double l_k) {
  const double step = l_km1 - l_km2;
  if (!(std::abs(step) >= 1e-300)) return std::nullopt;
  const double accel = (l_k - l_km1) / step;
  if (!(accel < 1.0)) return std::nullopt;
  return l_km1 + (l_k - l_km1) / (1.0 - accel);
}

StopDecision aitken_should_stop(double l_km2, double l_km1, double l_k, double epsilon) {
  if (std::abs(l_km1 - l_km2) < 1e-300) return StopDecision::Stop;
  const auto limit = aitken_limit(l_km2, l_km1, l_k);
  if (!limit) return StopDecision::Continue;
  return std::abs(*limit - l_k) < epsilon ? StopDecision::Stop : StopDecision::Continue;
}

InitCandidate candidate_from_params(const DataSet& data, MixtureParams params) {
  validate_params(params, data.p());
  const PreparedMixture mixture = prepare_mixture(params);
  InitCandidate out;
  out.tau1 = Matrix(data.n(), params.g());
  const PartialSums sums = e_step_impl(data, mixture, {0, data.n()}, out.tau1.data, nullptr, 0, false);
  out.loglik0 = sums.loglik.value();
  out.psi0 = std::move(params);
  return out;
}

std::pair<MixtureParams, double> serial_m_step(const std::vector<PartialSums>& partials, std::size_t n,
                                               const MixtureParams& prev) {
  if (partials.empty()) throw Error(Errc::InvalidArgument, "m_step: no partial sums");
  PartialSums merged = partials.front();
  for (std::size_t l = 1; l < partials.size(); ++l) merged.merge(partials[l]);
  const SumTotals totals = round_totals(merged);
  return {m_step(totals, n, prev), totals.loglik};
}

std::vector<int> labels_at(const DataSet& data, const MixtureParams& params) {
  return hard_partition(e_step(data, params, {0, data.n()}).tau);
}

FitResult run_em(const DataSet& data, const FitConfig& config, const InitCandidate& start, const EStepFn& e_step_fn,
                 const MStepFn& m_step_fn, const RunHooks& hooks) {
  if (!start.psi0.family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");

  FitResult result;
  result.loglik_trace.push_back(start.loglik0);
  MixtureParams current = start.psi0;
  std::size_t iter = 0;
  while (iter < config.max_iter) {
    const EStepOutput e = e_step_fn(current, iter == 0 ? &start.tau1 : nullptr);
    auto [next, loglik_prev] = m_step_fn(e.partials, data.n(), current);
    ++iter;
    if (iter > 1) result.loglik_trace.push_back(loglik_prev);
    current = std::move(next);
    if (hooks.on_iteration) hooks.on_iteration(iter, result.loglik_trace);

    const auto& tr = result.loglik_trace;
    if (tr.size() >= 3 &&
        aitken_should_stop(tr[tr.size() - 3], tr[tr.size() - 2], tr.back(), config.epsilon) == StopDecision::Stop) {
      result.converged = true;
      break;
    }
  }
  result.n_iter = iter;
  if (hooks.labeler) {
    result.hard_labels = hooks.labeler(current);
  } else {
    result.hard_labels = hard_partition(e_step_fn(current, nullptr).tau);
  }
  result.params = std::move(current);
  return result;
}

FitResult fit_serial(const DataSet& data, const FitConfig& config, const MixtureParams& init) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_config(config, data.p());
  if (!init.family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
  const InitCandidate start = candidate_from_params(data, init);

  const EStepFn e_step_fn = [&data](const MixtureParams& params, const Matrix* reuse) {
    const PreparedMixture mixture = prepare_mixture(params);
    EStepOutput out;
    out.tau = Matrix(data.n(), params.g());
    out.partials.push_back(e_step_block(data, mixture, {0, data.n()}, out.tau.data, reuse, 0));
    out.loglik_prev = out.partials.front().loglik.value();
    return out;
  };
  FitResult result = run_em(data, config, start, e_step_fn, serial_m_step);
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mixem
