#pragma once

// Single-process parallel execution: a small fixed pool, block plans,
// multi-start initialization, the block-parallel E-step and the
// component-parallel M-step. Every reduction happens on the calling thread
// in a fixed order, so results never depend on which worker finished first.

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "mixem/em.hpp"

namespace mixem {

/// m - 1 background threads plus the calling thread.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t m);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const noexcept { return threads_.size() + 1; }

  /// Runs fn(0..tasks-1) across the pool and waits for all of them. If any
  /// task throws, the exception of the lowest task index is rethrown after
  /// every task has finished.
  void run(std::size_t tasks, const std::function<void(std::size_t)>& fn);

  /// Called before every task with its index; tests use it to inject delays.
  void set_task_hook(std::function<void(std::size_t)> hook) { hook_ = std::move(hook); }

 private:
  void worker_loop();
  void drain();

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* fn_ = nullptr;
  std::function<void(std::size_t)> hook_;
  std::vector<std::exception_ptr> errors_;
  std::size_t tasks_ = 0;
  std::size_t next_ = 0;
  std::size_t finished_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
};

struct BlockPlan {
  std::vector<BlockRange> blocks;
};

/// m contiguous blocks; the first n mod m hold one extra row, and blocks past
/// the n-th are empty.
BlockPlan partition_indices(std::size_t n, std::size_t m);

/// Contiguous blocks sized in proportion to weights (cumulative floor), used
/// to split rows across machines by core count.
BlockPlan proportional_plan(std::size_t n, const std::vector<std::size_t>& weights);

/// Lloyd's k-means: farthest-point seeding from rng_stream(seed, 0), at most
/// 50 iterations, empty clusters re-seeded at the farthest point.
std::vector<int> kmeans_partition(const DataSet& data, std::size_t g, std::uint64_t seed);

/// Uniform random labels from rng_stream(seed, stream) with at least p + 1
/// members per component (rejection, at most 1000 attempts).
/// Throws PartitionInfeasible.
std::vector<int> random_partition(const DataSet& data, std::size_t g, std::uint64_t seed, std::uint64_t stream);

/// Partition 0 is k-means, the rest random (streams 1..count-1).
std::vector<std::vector<int>> make_initial_partitions(const DataSet& data, std::size_t g, std::size_t count,
                                                      std::uint64_t seed);

/// The partition the given candidate index starts from under config's strategy.
std::vector<int> initial_partition(const DataSet& data, const FitConfig& config, std::size_t index);

/// Sample proportions, means and covariances of a hard partition; t
/// components start at nu = 30.
MixtureParams params_from_partition(const DataSet& data, std::span<const int> labels, ComponentFamily family,
                                    std::size_t g);

inline constexpr double kInitialNu = 30.0;

/// One candidate: partition, moments, one E-step, then burn_in_r plain EM
/// iterations when requested.
InitCandidate compute_init_candidate(const DataSet& data, const FitConfig& config, std::size_t index);

/// The best candidate (maximum initial log-likelihood, ties to the lowest
/// index). Failed slots are empty; throws AllCandidatesFailed if all are.
InitCandidate select_candidate(std::vector<std::optional<InitCandidate>> candidates,
                               const std::string& first_error = {});

/// Computes config.starts() candidates on the pool and selects one.
InitCandidate parallel_init(const DataSet& data, const FitConfig& config, WorkerPool& pool);

/// E-step over the plan's blocks on the pool; partials come back in block order.
EStepOutput parallel_e_step(const DataSet& data, const PreparedMixture& mixture, const BlockPlan& plan,
                            WorkerPool& pool, const Matrix* reuse_tau = nullptr);
EStepOutput parallel_e_step(const DataSet& data, const MixtureParams& params, const BlockPlan& plan,
                            WorkerPool& pool, const Matrix* reuse_tau = nullptr);

/// One task per component plus one for the log-likelihood. Bitwise equal
/// to serial_m_step.
std::pair<MixtureParams, double> parallel_m_step(const std::vector<PartialSums>& partials, std::size_t n,
                                                 const MixtureParams& prev, WorkerPool& pool);

/// Init, then EM with config.m workers. Wall time includes initialization.
FitResult fit_parallel(const DataSet& data, const FitConfig& config, const RunHooks& hooks = {});

/// Same, on an existing pool (so tests can inject task delays).
FitResult fit_parallel(const DataSet& data, const FitConfig& config, WorkerPool& pool, const RunHooks& hooks = {});

/// ln sum_i pi_i f_i(y_j) for every row, evaluated block-parallel. Works for
/// every family including CFUST.
std::vector<double> parallel_log_density(const DataSet& data, const MixtureParams& params, WorkerPool& pool,
                                         QmcSpec qmc = {});

}  // namespace mixem
