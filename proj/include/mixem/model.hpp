#pragma once

// Domain types shared by every layer: data, parameters, fit configuration
// and results, plus the small validation helpers that go with them.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixem/matrix.hpp"

namespace mixem {

inline constexpr std::size_t kMaxDim = 64;
inline constexpr std::size_t kMaxComponents = 32;
inline constexpr unsigned kMaxSkewDim = 3;
inline constexpr double kPiFloor = 1e-10;

/// n x p observations, row-major.
class DataSet {
 public:
  DataSet() = default;
  /// Throws InvalidArgument on empty shape, size mismatch or non-finite entries.
  DataSet(std::size_t n, std::size_t p, std::vector<double> values);

  std::size_t n() const noexcept { return n_; }
  std::size_t p() const noexcept { return p_; }
  std::span<const double> row(std::size_t j) const { return {values_.data() + j * p_, p_}; }
  std::span<const double> values() const noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }

  friend bool operator==(const DataSet&, const DataSet&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t p_ = 0;
  std::vector<double> values_;
};

struct ComponentFamily {
  enum class Kind : std::uint8_t { Gaussian = 0, StudentT = 1, Cfust = 2 };

  Kind kind = Kind::Gaussian;
  unsigned q = 0;  // skew dimension, Cfust only

  static ComponentFamily gaussian() { return {Kind::Gaussian, 0}; }
  static ComponentFamily student_t() { return {Kind::StudentT, 0}; }
  static ComponentFamily cfust(unsigned q) { return {Kind::Cfust, q}; }

  bool has_nu() const noexcept { return kind != Kind::Gaussian; }
  bool is_fittable() const noexcept { return kind != Kind::Cfust; }

  friend bool operator==(const ComponentFamily&, const ComponentFamily&) = default;
};

std::string family_name(ComponentFamily family);
/// Accepts "gaussian", "t"/"student-t", "cfust"; q applies to cfust only.
ComponentFamily parse_family(const std::string& name, unsigned q = 1);

struct ComponentParams {
  Vector mu;
  Matrix sigma;
  Matrix delta;     // p x q, empty unless Cfust
  double nu = 0.0;  // ignored for Gaussian

  friend bool operator==(const ComponentParams&, const ComponentParams&) = default;
};

struct MixtureParams {
  ComponentFamily family;
  std::vector<double> pi;
  std::vector<ComponentParams> components;

  std::size_t g() const noexcept { return components.size(); }
  std::size_t p() const noexcept { return components.empty() ? 0 : components.front().mu.size(); }

  friend bool operator==(const MixtureParams&, const MixtureParams&) = default;
};

enum class InitStrategy : std::uint8_t { KMeansPlusRandom = 0, AllRandom = 1, GivenPartition = 2 };

struct FitConfig {
  ComponentFamily family = ComponentFamily::gaussian();
  std::size_t g = 2;
  std::size_t m = 1;        // workers (threads, or network cores)
  std::size_t n_starts = 0; // initial partitions tried; 0 means one per worker
  double epsilon = 1e-6;
  std::size_t burn_in_r = 0;
  std::size_t max_iter = 1000;
  std::uint64_t seed = 0;
  std::vector<std::string> nodes;
  InitStrategy init_strategy = InitStrategy::KMeansPlusRandom;
  std::vector<int> given_labels;  // GivenPartition only

  std::size_t starts() const noexcept { return n_starts == 0 ? m : n_starts; }
};

/// Throws InvalidArgument when a FitConfig field is out of range for data of dimension p.
void validate_config(const FitConfig& config, std::size_t p);

struct FitResult {
  MixtureParams params;
  std::vector<double> loglik_trace;
  std::size_t n_iter = 0;
  bool converged = false;
  std::vector<int> hard_labels;
  double wall_time_s = 0.0;
};

/// Succeeds iff every MixtureParams invariant holds for dimension p.
/// Errors: MixingProportion, NotPositiveDefinite, DimensionMismatch, Domain (nu).
void validate_params(const MixtureParams& params, std::size_t p);

/// argmax over each row of an n x g responsibility matrix, ties to the lowest index.
std::vector<int> hard_partition(const Matrix& tau);

/// Adjusted Rand index between two labelings of the same points.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace mixem
