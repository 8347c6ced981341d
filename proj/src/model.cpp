#include "mixem/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mixem/error.hpp"
#include "mixem/numerics.hpp"

namespace mixem {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "invalid_argument";
    case Errc::DimensionMismatch: return "dimension_mismatch";
    case Errc::MixingProportion: return "mixing_proportion";
    case Errc::NotPositiveDefinite: return "not_positive_definite";
    case Errc::Domain: return "domain_error";
    case Errc::NoBracket: return "no_bracket";
    case Errc::DensityUnderflow: return "density_underflow";
    case Errc::EmptyComponent: return "empty_component";
    case Errc::PartitionInfeasible: return "partition_infeasible";
    case Errc::AllCandidatesFailed: return "all_candidates_failed";
    case Errc::Unsupported: return "unsupported";
    case Errc::Protocol: return "protocol_error";
    case Errc::TruncatedFrame: return "truncated_frame";
    case Errc::OversizeFrame: return "oversize_frame";
    case Errc::NodeUnreachable: return "node_unreachable";
    case Errc::WorkerAborted: return "worker_aborted";
    case Errc::Io: return "io_error";
    case Errc::Parse: return "parse_error";
    case Errc::BaselineMissing: return "baseline_missing";
  }
  return "unknown";
}

DataSet::DataSet(std::size_t n, std::size_t p, std::vector<double> values)
    : n_(n), p_(p), values_(std::move(values)) {
  if (n_ == 0 || p_ == 0) throw Error(Errc::InvalidArgument, "data set must have at least one row and column");
  if (values_.size() != n_ * p_) throw Error(Errc::DimensionMismatch, "data set size does not match n x p");
  for (const double v : values_)
    if (!std::isfinite(v)) throw Error(Errc::InvalidArgument, "data set contains a non-finite value");
}

std::string family_name(ComponentFamily family) {
  switch (family.kind) {
    case ComponentFamily::Kind::Gaussian: return "gaussian";
    case ComponentFamily::Kind::StudentT: return "t";
    case ComponentFamily::Kind::Cfust: return "cfust";
  }
  return "unknown";
}

ComponentFamily parse_family(const std::string& name, unsigned q) {
  if (name == "gaussian" || name == "normal") return ComponentFamily::gaussian();
  if (name == "t" || name == "student-t" || name == "studentt") return ComponentFamily::student_t();
  if (name == "cfust") {
    if (q < 1 || q > kMaxSkewDim) throw Error(Errc::InvalidArgument, "cfust skew dimension q must be in [1, 3]");
    return ComponentFamily::cfust(q);
  }
  throw Error(Errc::InvalidArgument, "unknown family '" + name + "'");
}

void validate_config(const FitConfig& config, std::size_t p) {
  if (config.g < 1 || config.g > kMaxComponents) throw Error(Errc::InvalidArgument, "component count must be in [1, 32]");
  if (p < 1 || p > kMaxDim) throw Error(Errc::InvalidArgument, "dimension must be in [1, 64]");
  if (config.family.kind == ComponentFamily::Kind::Cfust &&
      (config.family.q < 1 || config.family.q > kMaxSkewDim))
    throw Error(Errc::InvalidArgument, "cfust skew dimension q must be in [1, 3]");
  if (config.m < 1) throw Error(Errc::InvalidArgument, "worker count must be at least 1");
  if (!(config.epsilon > 0.0)) throw Error(Errc::InvalidArgument, "tolerance must be positive");
  if (config.max_iter < 3) throw Error(Errc::InvalidArgument, "max_iter must be at least 3");
  if (config.init_strategy == InitStrategy::GivenPartition && config.given_labels.empty())
    throw Error(Errc::InvalidArgument, "given-partition initialization needs labels");
}

void validate_params(const MixtureParams& params, std::size_t p) {
  const std::size_t g = params.g();
  if (g == 0 || params.pi.size() != g) throw Error(Errc::DimensionMismatch, "mixing proportions do not match components");
  double total = 0.0;
  for (const double pi : params.pi) {
    if (!(pi > 0.0)) throw Error(Errc::MixingProportion, "mixing proportions must be positive");
    total += pi;
  }
  if (!(std::abs(total - 1.0) <= 1e-12)) throw Error(Errc::MixingProportion, "mixing proportions must sum to 1");

  const bool cfust = params.family.kind == ComponentFamily::Kind::Cfust;
  const std::size_t q = cfust ? params.family.q : 0;
  for (const auto& comp : params.components) {
    if (comp.mu.size() != p || comp.sigma.rows != p || comp.sigma.cols != p)
      throw Error(Errc::DimensionMismatch, "component dimensions do not match the data");
    for (const double v : comp.mu)
      if (!std::isfinite(v)) throw Error(Errc::Domain, "location must be finite");
    if (cfust) {
      if (comp.delta.rows != p || comp.delta.cols != q)
        throw Error(Errc::DimensionMismatch, "skewness matrix must be p x q");
      for (const double v : comp.delta.data)
        if (!std::isfinite(v)) throw Error(Errc::Domain, "skewness entries must be finite");
    } else if (!comp.delta.empty()) {
      throw Error(Errc::DimensionMismatch, "skewness matrix given for a symmetric family");
    }
    if (params.family.has_nu() && !(comp.nu > 0.0 && std::isfinite(comp.nu)))
      throw Error(Errc::Domain, "degrees of freedom must be positive");
    try {
      cholesky(comp.sigma);
    } catch (const Error& e) {
      throw Error(Errc::NotPositiveDefinite, std::string("scale matrix: ") + e.what());
    }
  }
}

std::vector<int> hard_partition(const Matrix& tau) {
  std::vector<int> labels(tau.rows);
  for (std::size_t j = 0; j < tau.rows; ++j) {
    const auto row = tau.row(j);
    double sum = 0.0;
    for (const double t : row) sum += t;
    if (!(std::abs(sum - 1.0) <= 1e-9)) throw Error(Errc::InvalidArgument, "responsibility row does not sum to 1");
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
      if (row[i] > row[best]) best = i;
    labels[j] = static_cast<int>(best);
  }
  return labels;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "labelings differ in length");
  if (a.size() < 2) return 1.0;
  const auto n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> count_a;
  std::map<int, double> count_b;
  for (std::size_t j = 0; j < a.size(); ++j) {
    joint[{a[j], b[j]}] += 1.0;
    count_a[a[j]] += 1.0;
    count_b[b[j]] += 1.0;
  }
  const auto pairs = [](double k) { return 0.5 * k * (k - 1.0); };
  double index = 0.0;
  for (const auto& [key, k] : joint) index += pairs(k);
  double sum_a = 0.0;
  for (const auto& [key, k] : count_a) sum_a += pairs(k);
  double sum_b = 0.0;
  for (const auto& [key, k] : count_b) sum_b += pairs(k);
  const double expected = sum_a * sum_b / pairs(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace mixem
