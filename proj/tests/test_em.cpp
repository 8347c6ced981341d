#include <doctest.h>

#include <cmath>

#include <boost/math/special_functions/digamma.hpp>

#include "mixem/em.hpp"
#include "mixem/error.hpp"
#include "support.hpp"

using namespace mixem;

namespace {

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::InvalidArgument;
}

MixtureParams shifted(MixtureParams params, double by) {
  for (auto& c : params.components)
    for (auto& v : c.mu) v += by;
  return params;
}

}  // namespace

TEST_CASE("responsibilities sum to one and s1 matches their column sums") {
  const auto truth = testing::line_mixture(ComponentFamily::student_t(), 3, 2, 3.0);
  const auto sample = testing::draw(truth, 500, 1);
  const auto e = e_step(sample.data, truth, {0, 500});
  std::vector<double> col(3, 0.0);
  for (std::size_t j = 0; j < 500; ++j) {
    double row = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      row += e.tau(j, i);
      col[i] += e.tau(j, i);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-14));
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(e.sums.components[i].s1.value() == doctest::Approx(col[i]).epsilon(1e-12));
}

TEST_CASE("partial sums do not depend on how rows are split into blocks") {
  for (auto family : {ComponentFamily::gaussian(), ComponentFamily::student_t()}) {
    const auto truth = testing::line_mixture(family, 2, 4, 2.0);
    const auto sample = testing::draw(truth, 700, 2);
    const auto whole = e_step(sample.data, truth, {0, 700}).sums;
    for (std::size_t cut : {1u, 128u, 129u, 350u, 699u}) {
      auto a = e_step(sample.data, truth, {0, cut}).sums;
      const auto b = e_step(sample.data, truth, {cut, 700}).sums;
      a.merge(b);
      CHECK(a == whole);
    }
  }
}

TEST_CASE("reusing responsibilities yields the same moments") {
  const auto truth = testing::line_mixture(ComponentFamily::student_t(), 2, 3, 2.5);
  const auto sample = testing::draw(truth, 300, 3);
  const auto mixture = prepare_mixture(truth);
  Matrix tau(300, 2), tau2(300, 2);
  auto fresh = e_step_block(sample.data, mixture, {0, 300}, tau.data);
  auto reused = e_step_block(sample.data, mixture, {0, 300}, tau2.data, &tau);
  CHECK(testing::same_bits(tau, tau2));
  reused.loglik = fresh.loglik;  // reuse leaves the log-likelihood unset
  CHECK(reused == fresh);
}

TEST_CASE("Gaussian M-step matches weighted moments computed directly") {
  const auto truth = testing::line_mixture(ComponentFamily::gaussian(), 2, 3, 2.0);
  const auto sample = testing::draw(truth, 400, 4);
  const auto e = e_step(sample.data, truth, {0, 400});
  const auto next = m_step(round_totals(e.sums), 400, truth);
  for (std::size_t i = 0; i < 2; ++i) {
    double w = 0;
    std::vector<double> mean(3, 0.0);
    for (std::size_t j = 0; j < 400; ++j) {
      w += e.tau(j, i);
      for (std::size_t a = 0; a < 3; ++a) mean[a] += e.tau(j, i) * sample.data.row(j)[a];
    }
    for (auto& v : mean) v /= w;
    CHECK(next.pi[i] == doctest::Approx(w / 400).epsilon(1e-12));
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(next.components[i].mu[a] == doctest::Approx(mean[a]).epsilon(1e-10));
      for (std::size_t b = 0; b < 3; ++b) {
        double cov = 0;
        for (std::size_t j = 0; j < 400; ++j) {
          const auto y = sample.data.row(j);
          cov += e.tau(j, i) * (y[a] - mean[a]) * (y[b] - mean[b]);
        }
        CHECK(next.components[i].sigma(a, b) == doctest::Approx(cov / w).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("t M-step matches the weighted formulas and the nu equation") {
  const auto truth = testing::line_mixture(ComponentFamily::student_t(), 2, 2, 3.0, 4.0);
  const auto sample = testing::draw(truth, 600, 5);
  const auto e = e_step(sample.data, truth, {0, 600});
  const auto next = m_step(round_totals(e.sums), 600, truth);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto chol = cholesky(truth.components[i].sigma);
    const double nu = truth.components[i].nu;
    double s1 = 0, sw = 0, s4 = 0;
    std::vector<double> num(2, 0.0);
    std::vector<double> wts(600);
    for (std::size_t j = 0; j < 600; ++j) {
      const auto y = sample.data.row(j);
      const double d = mahalanobis(y, truth.components[i].mu, chol);
      wts[j] = (nu + 2) / (nu + d);
      const double t = e.tau(j, i);
      s1 += t;
      sw += t * wts[j];
      s4 += t * (std::log(wts[j]) - wts[j]);
      for (std::size_t a = 0; a < 2; ++a) num[a] += t * wts[j] * y[a];
    }
    const std::vector<double> mu{num[0] / sw, num[1] / sw};
    for (std::size_t a = 0; a < 2; ++a) {
      CHECK(next.components[i].mu[a] == doctest::Approx(mu[a]).epsilon(1e-10));
      for (std::size_t b = 0; b < 2; ++b) {
        double cov = 0;
        for (std::size_t j = 0; j < 600; ++j) {
          const auto y = sample.data.row(j);
          cov += e.tau(j, i) * wts[j] * (y[a] - mu[a]) * (y[b] - mu[b]);
        }
        CHECK(next.components[i].sigma(a, b) == doctest::Approx(cov / s1).epsilon(1e-9));
      }
    }
    using boost::math::digamma;
    const double v = next.components[i].nu;
    const double score = std::log(v / 2) - digamma(v / 2) + 1 + s4 / s1 + digamma((nu + 2) / 2) - std::log((nu + 2) / 2);
    CHECK(std::abs(score) < 1e-7);
  }
}

TEST_CASE("degrees of freedom stay within the clamp") {
  // Unit weights make the previous value (shifted by p) a fixed point...
  CHECK(update_nu(10.0, -10.0, 50.0, 2) == doctest::Approx(52.0).epsilon(1e-7));
  // ...so a huge previous value lands on the upper bound.
  CHECK(update_nu(10.0, -10.0, 1e7, 2) == 1000.0);
  // Very negative ln w - w pulls it down to the lower bound.
  CHECK(update_nu(10.0, -1e4, 5.0, 2) == 0.1);
}

TEST_CASE("Aitken limit on a geometric sequence") {
  const auto l = [](int k) { return 100.0 - 10.0 * std::pow(0.5, k); };
  const auto lim = aitken_limit(l(0), l(1), l(2));
  REQUIRE(lim.has_value());
  CHECK(*lim == doctest::Approx(100.0).epsilon(1e-14));
  // |l_inf - l_2| = 2.5
  CHECK(aitken_should_stop(l(0), l(1), l(2), 3.0) == StopDecision::Stop);
  CHECK(aitken_should_stop(l(0), l(1), l(2), 2.0) == StopDecision::Continue);
  // No extrapolation when the steps grow; a flat step stops.
  CHECK_FALSE(aitken_limit(0.0, 1.0, 3.0).has_value());
  CHECK(aitken_should_stop(0.0, 1.0, 3.0, 1e9) == StopDecision::Continue);
  CHECK(aitken_should_stop(5.0, 5.0, 5.0, 1e-6) == StopDecision::Stop);
}

TEST_CASE("the log-likelihood never decreases along the iterations") {
  for (auto family : {ComponentFamily::gaussian(), ComponentFamily::student_t()}) {
    const auto truth = testing::line_mixture(family, 3, 2, 2.0);
    const auto sample = testing::draw(truth, 900, 6);
    FitConfig config;
    config.family = family;
    config.g = 3;
    config.epsilon = 1e-10;
    config.max_iter = 60;
    const auto r = fit_serial(sample.data, config, shifted(truth, 0.7));
    REQUIRE(r.loglik_trace.size() == r.n_iter);
    for (std::size_t k = 1; k < r.loglik_trace.size(); ++k)
      CHECK(r.loglik_trace[k] >= r.loglik_trace[k - 1] - 1e-9 * std::abs(r.loglik_trace[k - 1]));
  }
}

TEST_CASE("serial fit recovers well-separated clusters") {
  const auto truth = testing::line_mixture(ComponentFamily::gaussian(), 3, 3, 12.0);
  const auto sample = testing::draw(truth, 1500, 7);
  FitConfig config;
  config.g = 3;
  const auto r = fit_serial(sample.data, config, shifted(truth, 1.0));
  CHECK(r.converged);
  CHECK(adjusted_rand_index(r.hard_labels, sample.labels) == 1.0);
  CHECK_NOTHROW(validate_params(r.params, 3));
}

TEST_CASE("hitting the iteration cap is reported as not converged") {
  const auto truth = testing::line_mixture(ComponentFamily::gaussian(), 2, 2, 1.0);
  const auto sample = testing::draw(truth, 400, 8);
  FitConfig config;
  config.epsilon = 1e-300;
  config.max_iter = 3;
  const auto r = fit_serial(sample.data, config, shifted(truth, 0.5));
  CHECK_FALSE(r.converged);
  CHECK(r.n_iter == 3);
  CHECK(r.loglik_trace.size() == 3);
}

TEST_CASE("empty components and unsupported families are errors") {
  SumTotals totals;
  totals.s1 = {5.0, 1e-12};
  totals.sw = totals.s1;
  totals.s4 = {0.0, 0.0};
  totals.s2 = {Vector{1.0}, Vector{0.0}};
  totals.s3 = {Matrix::identity(1), Matrix::identity(1)};
  CHECK(code_of([&] { m_step_gaussian(totals, 5); }) == Errc::EmptyComponent);

  const auto skew = testing::line_mixture(ComponentFamily::cfust(1), 2, 2, 3.0);
  const auto sample = testing::draw(skew, 100, 9);
  FitConfig config;
  config.family = ComponentFamily::cfust(1);
  CHECK(code_of([&] { fit_serial(sample.data, config, skew); }) == Errc::Unsupported);
}

TEST_CASE("mixing weights are floored and renormalized") {
  SumTotals totals;
  totals.s1 = {10.0, 0.0};
  const auto pi = m_step_weights(totals, 10);
  CHECK(pi[1] == doctest::Approx(1e-10 / (1 + 1e-10)).epsilon(1e-12));
  CHECK(pi[0] + pi[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("repair adds a ridge to a singular scale") {
  Matrix s(2, 2);
  s.data = {1, 1, 1, 1};
  const Matrix fixed = repair_scale(s);
  CHECK_NOTHROW(cholesky(fixed));
  CHECK(fixed(0, 1) == 1.0);
  CHECK(fixed(0, 0) > 1.0);
  CHECK(fixed(0, 0) < 1.0 + 1e-4);
}

TEST_CASE("log-likelihood agrees with a naive sum") {
  for (auto family : {ComponentFamily::gaussian(), ComponentFamily::student_t(), ComponentFamily::cfust(2)}) {
    const auto params = testing::line_mixture(family, 2, 3, 2.0);
    const auto sample = testing::draw(params, 250, 10);
    double naive = 0;
    for (std::size_t j = 0; j < 250; ++j) {
      double f = 0;
      for (std::size_t i = 0; i < 2; ++i) {
        const ComponentDensity d(family, params.components[i]);
        f += params.pi[i] * std::exp(d.log_pdf(sample.data.row(j)));
      }
      naive += std::log(f);
    }
    CHECK(log_likelihood(sample.data, params) == doctest::Approx(naive).epsilon(1e-11));
  }
}

TEST_CASE("responsibilities of an all-underflow row are an error") {
  const double terms[] = {-INFINITY, -INFINITY};
  double tau[2];
  CHECK(code_of([&] { responsibilities_from_log_terms(terms, tau); }) == Errc::DensityUnderflow);
}

TEST_CASE("t fit on t data lands on the grid maximizer of the likelihood in nu") {
  const auto truth = testing::line_mixture(ComponentFamily::student_t(), 1, 2, 0.0, 5.0);
  const auto sample = testing::draw(truth, 10000, 21);
  FitConfig config;
  config.family = ComponentFamily::student_t();
  config.g = 1;
  config.epsilon = 1e-9;
  config.max_iter = 2000;
  const auto r = fit_serial(sample.data, config, truth);
  const double nu_hat = r.params.components[0].nu;
  CHECK(nu_hat >= 4.0);
  CHECK(nu_hat <= 6.5);

  // Profile over nu with location and scale held at the fit.
  auto probe = r.params;
  double best_nu = 0, best = -INFINITY;
  for (double nu = 2.0; nu <= 15.0; nu += 0.01) {
    probe.components[0].nu = nu;
    const double l = log_likelihood(sample.data, probe);
    if (l > best) best = l, best_nu = nu;
  }
  CHECK(std::abs(nu_hat - best_nu) <= 0.02);
}

TEST_CASE("t fit on Gaussian data pushes nu to the upper bound") {
  // The bound is the maximizer only when the sample's tails are no heavier
  // than normal, so that is checked on the profile likelihood. The profile
  // is nearly flat out there and EM crawls along it, hence the high start.
  const auto truth = testing::line_mixture(ComponentFamily::gaussian(), 1, 2, 0.0);
  const auto sample = testing::draw(truth, 20000, 2);
  FitConfig config;
  config.family = ComponentFamily::student_t();
  config.g = 1;
  config.epsilon = 1e-10;
  config.max_iter = 5000;
  const auto r = fit_serial(sample.data, config, testing::line_mixture(config.family, 1, 2, 0.0, 900.0));
  auto probe = r.params;
  probe.components[0].nu = 500.0;
  const double at_500 = log_likelihood(sample.data, probe);
  probe.components[0].nu = 1000.0;
  REQUIRE(log_likelihood(sample.data, probe) > at_500);
  CHECK(r.params.components[0].nu == 1000.0);
}

TEST_CASE("a start at a fixed point stops almost at once") {
  const auto truth = testing::line_mixture(ComponentFamily::gaussian(), 2, 2, 8.0);
  const auto sample = testing::draw(truth, 1000, 23);
  FitConfig config;
  config.epsilon = 1e-12;
  config.max_iter = 5000;
  const auto converged = fit_serial(sample.data, config, shifted(truth, 0.3));
  REQUIRE(converged.converged);
  config.epsilon = 1e-6;
  const auto again = fit_serial(sample.data, config, converged.params);
  CHECK(again.converged);
  CHECK(again.n_iter <= 3);
  const auto& tr = again.loglik_trace;
  CHECK(std::abs(tr.back() - tr[tr.size() - 2]) < 1e-6);
}

TEST_CASE("the same run twice gives the same trace bit for bit") {
  const auto truth = testing::line_mixture(ComponentFamily::student_t(), 2, 3, 2.5);
  const auto sample = testing::draw(truth, 800, 24);
  FitConfig config;
  config.family = ComponentFamily::student_t();
  const auto a = fit_serial(sample.data, config, shifted(truth, 0.4));
  const auto b = fit_serial(sample.data, config, shifted(truth, 0.4));
  CHECK(testing::same_bits(a.loglik_trace, b.loglik_trace));
  CHECK(testing::same_bits(a.params, b.params));
}
