#include "mixem/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "mixem/error.hpp"
#include "mixem/rng.hpp"

namespace mixem {

WorkerPool::WorkerPool(std::size_t m) {
  if (m == 0) throw Error(Errc::InvalidArgument, "worker pool needs at least one worker");
  threads_.reserve(m - 1);
  for (std::size_t i = 1; i < m; ++i) threads_.emplace_back([this] { worker_loop(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  wake_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::drain() {
  for (;;) {
    std::size_t task;
    {
      std::lock_guard lock(mu_);
      if (next_ >= tasks_) return;
      task = next_++;
    }
    try {
      if (hook_) hook_(task);
      (*fn_)(task);
    } catch (...) {
      errors_[task] = std::current_exception();
    }
    std::lock_guard lock(mu_);
    if (++finished_ == tasks_) done_.notify_all();
  }
}

void WorkerPool::worker_loop() {
  std::size_t seen = 0;
  for (;;) {
    {
      std::unique_lock lock(mu_);
      wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
    }
    drain();
  }
}

void WorkerPool::run(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
  if (tasks == 0) return;
  {
    std::lock_guard lock(mu_);
    fn_ = &fn;
    errors_.assign(tasks, nullptr);
    tasks_ = tasks;
    next_ = 0;
    finished_ = 0;
    ++generation_;
  }
  wake_.notify_all();
  drain();
  {
    std::unique_lock lock(mu_);
    done_.wait(lock, [&] { return finished_ == tasks_; });
    fn_ = nullptr;
  }
  for (auto& e : errors_)
    if (e) std::rethrow_exception(e);
}

BlockPlan partition_indices(std::size_t n, std::size_t m) {
  if (m == 0) throw Error(Errc::InvalidArgument, "partition_indices: m must be at least 1");
  BlockPlan plan;
  plan.blocks.reserve(m);
  const std::size_t base = n / m;
  const std::size_t extra = n % m;
  std::size_t at = 0;
  for (std::size_t l = 0; l < m; ++l) {
    const std::size_t len = base + (l < extra ? 1 : 0);
    plan.blocks.push_back({at, at + len});
    at += len;
  }
  return plan;
}

BlockPlan proportional_plan(std::size_t n, const std::vector<std::size_t>& weights) {
  std::size_t total = 0;
  for (const auto w : weights) total += w;
  if (weights.empty() || total == 0) throw Error(Errc::InvalidArgument, "proportional_plan: weights must be positive");
  BlockPlan plan;
  std::size_t cumulative = 0;
  std::size_t at = 0;
  for (const auto w : weights) {
    cumulative += w;
    // 128-bit product keeps n * cumulative exact for any realistic n.
    const auto end = static_cast<std::size_t>(static_cast<unsigned __int128>(n) * cumulative / total);
    plan.blocks.push_back({at, end});
    at = end;
  }
  return plan;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

std::size_t nearest(std::span<const double> y, const Matrix& centers, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.rows; ++c) {
    const double d = squared_distance(y, centers.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

void check_feasible(const DataSet& data, std::size_t g) {
  if (g == 0) throw Error(Errc::InvalidArgument, "need at least one component");
  if (data.n() < g * (data.p() + 1))
    throw Error(Errc::PartitionInfeasible, "need at least " + std::to_string(g * (data.p() + 1)) +
                                               " observations for " + std::to_string(g) + " components");
}

}  // namespace

std::vector<int> kmeans_partition(const DataSet& data, std::size_t g, std::uint64_t seed) {
  if (g == 0 || data.n() < g) throw Error(Errc::PartitionInfeasible, "k-means needs at least g observations");
  const std::size_t n = data.n();
  const std::size_t p = data.p();
  RngStream rng = rng_stream(seed, 0);

  Matrix centers(g, p);
  const auto first = std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)), n - 1);
  std::copy_n(data.row(first).begin(), p, centers.row(0).begin());
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < g; ++c) {
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      closest[j] = std::min(closest[j], squared_distance(data.row(j), centers.row(c - 1)));
      if (closest[j] > far_d) {
        far_d = closest[j];
        far = j;
      }
    }
    std::copy_n(data.row(far).begin(), p, centers.row(c).begin());
  }

  std::vector<int> labels(n, -1);
  std::vector<double> dist(n);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (std::size_t j = 0; j < n; ++j) {
      const int c = static_cast<int>(nearest(data.row(j), centers, &dist[j]));
      if (c != labels[j]) {
        labels[j] = c;
        changed = true;
      }
    }
    if (!changed) break;

    Matrix sums(g, p);
    std::vector<std::size_t> counts(g, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto y = data.row(j);
      auto s = sums.row(static_cast<std::size_t>(labels[j]));
      for (std::size_t k = 0; k < p; ++k) s[k] += y[k];
      ++counts[static_cast<std::size_t>(labels[j])];
    }
    for (std::size_t c = 0; c < g; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(data.row(far).begin(), p, centers.row(c).begin());
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t k = 0; k < p; ++k) centers(c, k) = sums(c, k) / static_cast<double>(counts[c]);
    }
  }
  return labels;
}

std::vector<int> random_partition(const DataSet& data, std::size_t g, std::uint64_t seed, std::uint64_t stream) {
  check_feasible(data, g);
  const std::size_t need = data.p() + 1;
  RngStream rng = rng_stream(seed, stream);
  std::vector<int> labels(data.n());
  std::vector<std::size_t> counts(g);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::fill(counts.begin(), counts.end(), 0);
    for (auto& l : labels) {
      const auto c = std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(g)), g - 1);
      l = static_cast<int>(c);
      ++counts[c];
    }
    if (std::all_of(counts.begin(), counts.end(), [need](std::size_t c) { return c >= need; })) return labels;
  }
  throw Error(Errc::PartitionInfeasible, "no random partition with enough members per component after 1000 attempts");
}

std::vector<std::vector<int>> make_initial_partitions(const DataSet& data, std::size_t g, std::size_t count,
                                                      std::uint64_t seed) {
  check_feasible(data, g);
  std::vector<std::vector<int>> out;
  out.reserve(count);
  for (std::size_t l = 0; l < count; ++l)
    out.push_back(l == 0 ? kmeans_partition(data, g, seed) : random_partition(data, g, seed, l));
  return out;
}

std::vector<int> initial_partition(const DataSet& data, const FitConfig& config, std::size_t index) {
  switch (config.init_strategy) {
    case InitStrategy::KMeansPlusRandom:
      if (index == 0) {
        check_feasible(data, config.g);
        return kmeans_partition(data, config.g, config.seed);
      }
      return random_partition(data, config.g, config.seed, index);
    case InitStrategy::AllRandom:
      return random_partition(data, config.g, config.seed, index);
    case InitStrategy::GivenPartition:
      if (index == 0) {
        if (config.given_labels.size() != data.n())
          throw Error(Errc::DimensionMismatch, "given partition has the wrong length");
        return config.given_labels;
      }
      return random_partition(data, config.g, config.seed, index);
  }
  throw Error(Errc::InvalidArgument, "unknown initialization strategy");
}

MixtureParams params_from_partition(const DataSet& data, std::span<const int> labels, ComponentFamily family,
                                    std::size_t g) {
  if (labels.size() != data.n()) throw Error(Errc::DimensionMismatch, "partition length differs from n");
  if (!family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
  const std::size_t p = data.p();
  PartialSums sums = PartialSums::zero(ComponentFamily::gaussian(), g, p);
  for (std::size_t j = 0; j < data.n(); ++j) {
    const int label = labels[j];
    if (label < 0 || static_cast<std::size_t>(label) >= g)
      throw Error(Errc::InvalidArgument, "partition label out of range");
    auto& cs = sums.components[static_cast<std::size_t>(label)];
    const auto y = data.row(j);
    cs.s1.add(1.0);
    for (std::size_t a = 0; a < p; ++a) {
      cs.s2[a].add(y[a]);
      for (std::size_t b = 0; b <= a; ++b) cs.s3[packed_index(a, b)].add(y[a] * y[b]);
    }
  }
  MixtureParams params = m_step_gaussian(round_totals(sums), data.n());
  params.family = family;
  if (family.has_nu())
    for (auto& c : params.components) c.nu = kInitialNu;
  return params;
}

InitCandidate compute_init_candidate(const DataSet& data, const FitConfig& config, std::size_t index) {
  const auto labels = initial_partition(data, config, index);
  MixtureParams params = params_from_partition(data, labels, config.family, config.g);
  InitCandidate candidate = candidate_from_params(data, std::move(params));
  for (std::size_t r = 0; r < config.burn_in_r; ++r) {
    const PreparedMixture mixture = prepare_mixture(candidate.psi0);
    Matrix tau(data.n(), config.g);
    std::vector<PartialSums> partials;
    partials.push_back(e_step_block(data, mixture, {0, data.n()}, tau.data, r == 0 ? &candidate.tau1 : nullptr));
    MixtureParams next = serial_m_step(partials, data.n(), candidate.psi0).first;
    candidate = candidate_from_params(data, std::move(next));
  }
  if (!std::isfinite(candidate.loglik0)) throw Error(Errc::DensityUnderflow, "initial log-likelihood is not finite");
  candidate.index = index;
  candidate.strategy = config.init_strategy;
  candidate.seed = config.seed;
  return candidate;
}

InitCandidate select_candidate(std::vector<std::optional<InitCandidate>> candidates, const std::string& first_error) {
  std::optional<std::size_t> best;
  for (std::size_t l = 0; l < candidates.size(); ++l) {
    if (!candidates[l]) continue;
    if (!best || candidates[l]->loglik0 > candidates[*best]->loglik0) best = l;
  }
  if (!best)
    throw Error(Errc::AllCandidatesFailed,
                "every initial candidate failed" + (first_error.empty() ? std::string() : ": " + first_error));
  return std::move(*candidates[*best]);
}

InitCandidate parallel_init(const DataSet& data, const FitConfig& config, WorkerPool& pool) {
  validate_config(config, data.p());
  const std::size_t count = config.starts();
  std::vector<std::optional<InitCandidate>> candidates(count);
  std::vector<std::string> errors(count);
  pool.run(count, [&](std::size_t l) {
    try {
      candidates[l] = compute_init_candidate(data, config, l);
    } catch (const Error& e) {
      errors[l] = e.what();
    }
  });
  std::string first;
  for (const auto& e : errors)
    if (!e.empty()) {
      first = e;
      break;
    }
  return select_candidate(std::move(candidates), first);
}

EStepOutput parallel_e_step(const DataSet& data, const PreparedMixture& mixture, const BlockPlan& plan,
                            WorkerPool& pool, const Matrix* reuse_tau) {
  EStepOutput out;
  const std::size_t g = mixture.g();
  out.tau = Matrix(data.n(), g);
  out.partials.resize(plan.blocks.size());
  pool.run(plan.blocks.size(), [&](std::size_t l) {
    const BlockRange block = plan.blocks[l];
    std::span<double> rows(out.tau.data.data() + block.begin * g, block.size() * g);
    out.partials[l] = e_step_block(data, mixture, block, rows, reuse_tau, l);
  });
  ExactSum total;
  for (const auto& part : out.partials) total.merge(part.loglik);
  out.loglik_prev = total.value();
  return out;
}

EStepOutput parallel_e_step(const DataSet& data, const MixtureParams& params, const BlockPlan& plan,
                            WorkerPool& pool, const Matrix* reuse_tau) {
  const PreparedMixture mixture = prepare_mixture(params);
  return parallel_e_step(data, mixture, plan, pool, reuse_tau);
}

std::pair<MixtureParams, double> parallel_m_step(const std::vector<PartialSums>& partials, std::size_t n,
                                                 const MixtureParams& prev, WorkerPool& pool) {
  if (partials.empty()) throw Error(Errc::InvalidArgument, "m_step: no partial sums");
  if (!prev.family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
  PartialSums merged = partials.front();
  for (std::size_t l = 1; l < partials.size(); ++l) merged.merge(partials[l]);
  const SumTotals totals = round_totals(merged);
  if (prev.g() != totals.s1.size()) throw Error(Errc::DimensionMismatch, "m_step: previous parameters disagree");

  const std::size_t g = totals.s1.size();
  const bool student = prev.family.kind == ComponentFamily::Kind::StudentT;
  MixtureParams out;
  out.family = prev.family;
  out.components.resize(g);
  double loglik = 0.0;
  pool.run(g + 1, [&](std::size_t i) {
    if (i == g) {
      ExactSum acc;
      for (const auto& part : partials) acc.merge(part.loglik);
      loglik = acc.value();
      return;
    }
    out.components[i] = student ? m_step_student_t_component(totals, i, prev.components[i])
                                : m_step_gaussian_component(totals, i);
  });
  out.pi = m_step_weights(totals, n);
  return {std::move(out), loglik};
}

FitResult fit_parallel(const DataSet& data, const FitConfig& config, const RunHooks& hooks) {
  WorkerPool pool(config.m == 0 ? 1 : config.m);
  return fit_parallel(data, config, pool, hooks);
}

FitResult fit_parallel(const DataSet& data, const FitConfig& config, WorkerPool& pool, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_config(config, data.p());
  if (!config.family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
  const InitCandidate start = parallel_init(data, config, pool);
  const BlockPlan plan = partition_indices(data.n(), config.m);

  const EStepFn e_step_fn = [&](const MixtureParams& params, const Matrix* reuse) {
    return parallel_e_step(data, params, plan, pool, reuse);
  };
  const MStepFn m_step_fn = [&](const std::vector<PartialSums>& partials, std::size_t n, const MixtureParams& prev) {
    return parallel_m_step(partials, n, prev, pool);
  };
  FitResult result = run_em(data, config, start, e_step_fn, m_step_fn, hooks);
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<double> parallel_log_density(const DataSet& data, const MixtureParams& params, WorkerPool& pool,
                                         QmcSpec qmc) {
  validate_params(params, data.p());
  const PreparedMixture mixture = prepare_mixture(params, qmc);
  const std::size_t g = mixture.g();
  const BlockPlan plan = partition_indices(data.n(), pool.size());
  std::vector<double> out(data.n());
  pool.run(plan.blocks.size(), [&](std::size_t l) {
    const BlockRange block = plan.blocks[l];
    const std::size_t len = block.size();
    if (len == 0) return;
    const auto rows = data.values().subspan(block.begin * data.p(), len * data.p());
    std::vector<double> logf(g * len);
    for (std::size_t i = 0; i < g; ++i)
      mixture.components[i].log_pdf_batch(rows, std::span<double>(logf.data() + i * len, len));
    std::vector<double> terms(g), tau(g);
    for (std::size_t r = 0; r < len; ++r) {
      for (std::size_t i = 0; i < g; ++i) terms[i] = mixture.log_pi[i] + logf[i * len + r];
      out[block.begin + r] = responsibilities_from_log_terms(terms, tau);
    }
  });
  return out;
}

}  // namespace mixem
