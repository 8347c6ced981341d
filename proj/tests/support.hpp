#pragma once

// Shared fixtures for the test binaries: bitwise comparisons, canned
// mixtures and a small subprocess runner for the CLI tests.

#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixem/densities.hpp"
#include "mixem/model.hpp"

namespace testing {

inline bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

inline bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

inline bool same_bits(const mixem::Matrix& a, const mixem::Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && same_bits(a.data, b.data);
}

inline bool same_bits(const mixem::MixtureParams& a, const mixem::MixtureParams& b) {
  if (a.family != b.family || !same_bits(a.pi, b.pi) || a.g() != b.g()) return false;
  for (std::size_t i = 0; i < a.g(); ++i) {
    const auto& x = a.components[i];
    const auto& y = b.components[i];
    if (!same_bits(x.mu, y.mu) || !same_bits(x.sigma, y.sigma) || !same_bits(x.delta, y.delta) ||
        !same_bits(x.nu, y.nu))
      return false;
  }
  return true;
}

/// g components in p dimensions, means on a line `gap` apart along the first
/// axis, identity scales, equal weights.
inline mixem::MixtureParams line_mixture(mixem::ComponentFamily family, std::size_t g, std::size_t p, double gap,
                                         double nu = 5.0) {
  mixem::MixtureParams params;
  params.family = family;
  params.pi.assign(g, 1.0 / static_cast<double>(g));
  for (std::size_t i = 0; i < g; ++i) {
    mixem::ComponentParams c;
    c.mu.assign(p, 0.0);
    c.mu[0] = gap * static_cast<double>(i);
    c.sigma = mixem::Matrix::identity(p);
    if (family.kind == mixem::ComponentFamily::Kind::Cfust) {
      c.delta = mixem::Matrix(p, family.q);
      for (auto& v : c.delta.data) v = 1.0;
    }
    if (family.has_nu()) c.nu = nu;
    params.components.push_back(std::move(c));
  }
  return params;
}

inline mixem::LabeledSample draw(const mixem::MixtureParams& params, std::size_t n, std::uint64_t seed) {
  mixem::RngStream rng = mixem::rng_stream(seed, 0);
  return mixem::sample_mixture(params, n, rng);
}

/// A random SPD matrix: A A' + p I with A uniform in [-1, 1).
inline mixem::Matrix random_spd(std::size_t p, mixem::RngStream& rng) {
  mixem::Matrix a(p, p);
  for (auto& v : a.data) v = 2.0 * rng.uniform() - 1.0;
  mixem::Matrix s(p, p);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) {
      double acc = r == c ? static_cast<double>(p) : 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += a(r, k) * a(c, k);
      s(r, c) = acc;
    }
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < r; ++c) s(c, r) = s(r, c);
  return s;
}

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs argv[0] with the given arguments and waits, capturing both streams.
ProcessResult run_process(const std::vector<std::string>& argv, const std::vector<std::string>& env = {});

/// A child that keeps running; stdout is readable line by line.
class Child {
 public:
  explicit Child(const std::vector<std::string>& argv);
  ~Child();
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  /// Next stdout line, or nothing at EOF or after timeout_ms.
  std::optional<std::string> read_line(int timeout_ms);
  void kill_now();
  /// Exit status (-1 for a signal) after waiting.
  int wait();
  int pid() const { return pid_; }

 private:
  int pid_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
  bool reaped_ = false;
  int status_ = -1;
};

/// "listening on host:port" from a worker child; returns host:port.
std::string await_listening(Child& child, int timeout_ms = 10000);

std::string temp_path(const std::string& name);

}  // namespace testing
