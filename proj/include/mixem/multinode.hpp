#pragma once

// Coordinator and worker for running the EM iterations across processes.
// Workers own contiguous row blocks and run the E-step; the coordinator
// owns initialization selection, the M-step and the stopping rule.

#include <chrono>
#include <cstddef>
#include <functional>
#include <string>

#include "mixem/em.hpp"
#include "mixem/net.hpp"

namespace mixem {

using LogFn = std::function<void(const std::string&)>;

struct WorkerOptions {
  std::string listen = "127.0.0.1:0";
  std::size_t cores = 0;  // 0: std::thread::hardware_concurrency()
  std::chrono::milliseconds idle_timeout{60000};
  /// Called once the socket is bound (port 0 resolves to the real port).
  std::function<void(const net::Endpoint&)> on_listening;
  LogFn log;  // one line per message received
};

enum class SessionEnd { Stopped, Aborted };

/// Serves one coordinator over an accepted connection. Any protocol or
/// computation error is answered with ABORT; silence longer than
/// idle_timeout also ends the session with ABORT.
SessionEnd serve_session(net::Socket& conn, std::size_t cores, std::chrono::milliseconds idle_timeout,
                         const LogFn& log = {});

/// Binds, accepts a single coordinator and serves it. Throws Io when the
/// endpoint cannot be bound or nobody connects within idle_timeout.
SessionEnd run_worker(const WorkerOptions& options);

struct CoordinatorOptions {
  std::chrono::milliseconds timeout{60000};  // connect and per-reply limit
  std::size_t local_threads = 1;             // M-step pool on the coordinator
  LogFn transcript;                          // "send PARAMS 0", "recv ERESULT 1", ...
  RunHooks hooks;                            // labeler is always set internally
};

/// Fits over the workers in config.nodes. Rows are split in proportion to
/// advertised cores; the number of starting candidates is config.n_starts,
/// or the total advertised core count when that is 0.
/// Errors: NodeUnreachable, Protocol, WorkerAborted, plus the fit's own.
FitResult coordinate_fit(const DataSet& data, const FitConfig& config, const CoordinatorOptions& options = {});

}  // namespace mixem
