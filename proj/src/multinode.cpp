#include "mixem/multinode.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <thread>

#include "mixem/error.hpp"
#include "mixem/scheduler.hpp"
#include "mixem/wire.hpp"

namespace mixem {
namespace {

using wire::Frame;
using wire::MsgType;

FitConfig config_from_msg(const wire::ConfigMsg& msg, std::size_t cores) {
  FitConfig config;
  config.family = msg.family;
  config.g = msg.g;
  config.m = cores;
  config.n_starts = msg.n_starts;
  config.epsilon = msg.epsilon;
  config.burn_in_r = msg.burn_in_r;
  config.max_iter = msg.max_iter;
  config.seed = msg.seed;
  config.init_strategy = msg.strategy;
  config.given_labels = msg.given_labels;
  return config;
}

class WorkerSession {
 public:
  WorkerSession(net::Socket& conn, std::size_t cores, const LogFn& log) : conn_(conn), cores_(cores), log_(log) {}

  /// Returns once the session is over; true on STOP.
  bool handle(const Frame& frame) {
    if (log_) log_(std::string("recv ") + wire::msg_name(frame.type));
    switch (frame.type) {
      case MsgType::Config: on_config(frame); return false;
      case MsgType::Data: on_data(frame); return false;
      case MsgType::InitTask: on_init_task(frame); return false;
      case MsgType::Params: on_params(frame); return false;
      case MsgType::Stop: wire::decode_stop(frame); return true;
      case MsgType::Abort: throw PeerAbort(wire::decode_abort(frame));
      default: throw Error(Errc::Protocol, std::string("unexpected ") + wire::msg_name(frame.type) + " from coordinator");
    }
  }

  struct PeerAbort {
    std::string reason;
  };

 private:
  void on_config(const Frame& frame) {
    if (config_) throw Error(Errc::Protocol, "duplicate CONFIG");
    config_ = wire::decode_config(frame);
  }

  void on_data(const Frame& frame) {
    if (!config_) throw Error(Errc::Protocol, "DATA before CONFIG");
    if (data_) throw Error(Errc::Protocol, "duplicate DATA");
    DataSet data = wire::decode_data(frame);
    if (data.n() != config_->n || data.p() != config_->p)
      throw Error(Errc::Protocol, "DATA shape disagrees with CONFIG");
    data_ = std::move(data);
    pool_.emplace(cores_);
    const auto local = partition_indices(config_->block.size(), cores_);
    plan_.blocks.clear();
    for (const auto& b : local.blocks) plan_.blocks.push_back({b.begin + config_->block.begin, b.end + config_->block.begin});
  }

  void on_init_task(const Frame& frame) {
    if (!data_) throw Error(Errc::Protocol, "no data");
    const auto task = wire::decode_init_task(frame);
    FitConfig config = config_from_msg(*config_, cores_);
    config.seed = task.seed;
    config.init_strategy = task.strategy;
    wire::InitResult result;
    result.index = task.index;
    try {
      InitCandidate c = compute_init_candidate(*data_, config, task.index);
      result.ok = true;
      result.loglik0 = c.loglik0;
      result.psi0 = std::move(c.psi0);
    } catch (const Error& e) {
      result.error = e.what();
    }
    conn_.send_frame(wire::encode_init_result(result));
  }

  void on_params(const Frame& frame) {
    if (!data_) throw Error(Errc::Protocol, "no data");
    const MixtureParams params = wire::decode_params(frame);
    if (params.family != config_->family || params.g() != config_->g || params.p() != config_->p)
      throw Error(Errc::Protocol, "PARAMS disagree with CONFIG");
    validate_params(params, data_->p());
    const EStepOutput out = parallel_e_step(*data_, params, plan_, *pool_);
    PartialSums merged = out.partials.front();
    for (std::size_t l = 1; l < out.partials.size(); ++l) merged.merge(out.partials[l]);
    merged.block = 0;
    conn_.send_frame(wire::encode_eresult(merged));
  }

  net::Socket& conn_;
  std::size_t cores_;
  const LogFn& log_;
  std::optional<wire::ConfigMsg> config_;
  std::optional<DataSet> data_;
  std::optional<WorkerPool> pool_;
  BlockPlan plan_;
};

void try_abort(net::Socket& conn, const std::string& reason) {
  try {
    conn.send_frame(wire::encode_abort(reason));
  } catch (const Error&) {
    // The peer may already be gone; nothing else to tell it.
  }
}

std::size_t resolve_cores(std::size_t cores) {
  if (cores != 0) return cores;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace

SessionEnd serve_session(net::Socket& conn, std::size_t cores, std::chrono::milliseconds idle_timeout,
                         const LogFn& log) {
  cores = resolve_cores(cores);
  WorkerSession session(conn, cores, log);
  try {
    conn.send_frame(wire::encode_hello({wire::kVersion, static_cast<std::uint32_t>(cores)}));
    for (;;) {
      Frame frame;
      const auto status = conn.recv_frame(frame, idle_timeout);
      if (status == net::RecvStatus::TimedOut) {
        try_abort(conn, "idle timeout");
        return SessionEnd::Aborted;
      }
      if (status == net::RecvStatus::Closed) return SessionEnd::Aborted;
      if (session.handle(frame)) return SessionEnd::Stopped;
    }
  } catch (const WorkerSession::PeerAbort& abort) {
    if (log) log("coordinator aborted: " + abort.reason);
    return SessionEnd::Aborted;
  } catch (const Error& e) {
    if (log) log(std::string("abort: ") + e.what());
    try_abort(conn, e.what());
    return SessionEnd::Aborted;
  }
}

SessionEnd run_worker(const WorkerOptions& options) {
  net::Endpoint ep = net::parse_endpoint(options.listen);
  net::Listener listener(ep);
  ep.port = listener.port();
  if (options.on_listening) options.on_listening(ep);
  net::Socket conn = listener.accept(options.idle_timeout);
  return serve_session(conn, options.cores, options.idle_timeout, options.log);
}

namespace {

class Coordinator {
 public:
  Coordinator(const DataSet& data, const FitConfig& config, const CoordinatorOptions& options)
      : data_(data), config_(config), options_(options), pool_(std::max<std::size_t>(1, options.local_threads)) {}

  FitResult run() {
    connect();
    try {
      FitResult result = fit();
      for (std::size_t w = 0; w < workers_.size(); ++w) send(w, wire::encode_stop(result.params));
      return result;
    } catch (const Error& e) {
      for (auto& conn : workers_) try_abort(conn, e.what());
      throw;
    }
  }

 private:
  void note(const char* dir, MsgType type, std::size_t w) const {
    if (options_.transcript) options_.transcript(std::string(dir) + " " + wire::msg_name(type) + " " + std::to_string(w));
  }

  void send(std::size_t w, const Frame& frame) {
    note("send", frame.type, w);
    workers_[w].send_frame(frame);
  }

  Frame expect(std::size_t w, MsgType type) {
    Frame frame;
    const auto status = workers_[w].recv_frame(frame, options_.timeout);
    const std::string who = "worker " + std::to_string(w) + " (" + config_.nodes[w] + ")";
    if (status == net::RecvStatus::Closed) throw Error(Errc::WorkerAborted, who + " closed the connection");
    if (status == net::RecvStatus::TimedOut) throw Error(Errc::WorkerAborted, who + " timed out");
    note("recv", frame.type, w);
    if (frame.type == MsgType::Abort) throw Error(Errc::WorkerAborted, who + " aborted: " + wire::decode_abort(frame));
    if (frame.type != type)
      throw Error(Errc::Protocol, who + " sent " + wire::msg_name(frame.type) + ", expected " + wire::msg_name(type));
    return frame;
  }

  void connect() {
    if (config_.nodes.empty()) throw Error(Errc::InvalidArgument, "no worker nodes given");
    for (const auto& node : config_.nodes) workers_.push_back(net::connect_to(net::parse_endpoint(node), options_.timeout));
    for (std::size_t w = 0; w < workers_.size(); ++w) {
      const auto hello = wire::decode_hello(expect(w, MsgType::Hello));
      if (hello.version != wire::kVersion)
        throw Error(Errc::Protocol, "worker " + std::to_string(w) + " speaks protocol version " +
                                        std::to_string(hello.version));
      cores_.push_back(hello.cores);
    }
  }

  InitCandidate initialize(std::size_t total_cores) {
    const std::size_t count = config_.n_starts != 0 ? config_.n_starts : total_cores;
    const std::size_t n_workers = workers_.size();
    for (std::size_t c = 0; c < count; ++c)
      send(c % n_workers, wire::encode_init_task({static_cast<std::uint32_t>(c), config_.seed, config_.init_strategy}));

    std::vector<std::optional<InitCandidate>> candidates(count);
    std::string first_error;
    for (std::size_t w = 0; w < n_workers; ++w) {
      for (std::size_t c = w; c < count; c += n_workers) {
        auto result = wire::decode_init_result(expect(w, MsgType::InitResult));
        if (result.index != c) throw Error(Errc::Protocol, "INIT_RESULT for an unexpected candidate");
        if (!result.ok) {
          if (first_error.empty()) first_error = result.error;
          continue;
        }
        if (result.psi0.family != config_.family || result.psi0.g() != config_.g || result.psi0.p() != data_.p())
          throw Error(Errc::Protocol, "INIT_RESULT parameters disagree with the configuration");
        InitCandidate cand;
        cand.psi0 = std::move(result.psi0);
        cand.loglik0 = result.loglik0;
        cand.index = c;
        cand.strategy = config_.init_strategy;
        cand.seed = config_.seed;
        candidates[c] = std::move(cand);
      }
    }
    // Candidates are computed remotely in a fixed order; the selection rule
    // is shared with the threaded runner.
    return select_candidate(std::move(candidates), first_error);
  }

  FitResult fit() {
    validate_config(config_, data_.p());
    if (!config_.family.is_fittable()) throw Error(Errc::Unsupported, "cfust: density evaluation only");
    std::size_t total_cores = 0;
    for (const auto c : cores_) total_cores += c;
    const BlockPlan plan = proportional_plan(data_.n(), cores_);

    for (std::size_t w = 0; w < workers_.size(); ++w) {
      wire::ConfigMsg msg;
      msg.family = config_.family;
      msg.g = static_cast<std::uint32_t>(config_.g);
      msg.p = static_cast<std::uint32_t>(data_.p());
      msg.n = data_.n();
      msg.block = plan.blocks[w];
      msg.epsilon = config_.epsilon;
      msg.burn_in_r = static_cast<std::uint32_t>(config_.burn_in_r);
      msg.max_iter = static_cast<std::uint32_t>(config_.max_iter);
      msg.seed = config_.seed;
      msg.n_starts = static_cast<std::uint32_t>(config_.n_starts);
      msg.strategy = config_.init_strategy;
      msg.given_labels = config_.given_labels;
      send(w, wire::encode_config(msg));
    }
    const Frame data_frame = wire::encode_data(data_);
    for (std::size_t w = 0; w < workers_.size(); ++w) send(w, data_frame);

    const InitCandidate start = initialize(total_cores);

    const EStepFn e_step_fn = [&](const MixtureParams& params, const Matrix*) {
      // Responsibilities are always recomputed remotely; they match the
      // candidate's bit for bit, so the first-iteration shortcut is moot.
      const Frame frame = wire::encode_params(params);
      for (std::size_t w = 0; w < workers_.size(); ++w) send(w, frame);
      EStepOutput out;
      for (std::size_t w = 0; w < workers_.size(); ++w) {
        PartialSums part = wire::decode_eresult(expect(w, MsgType::EResult));
        if (part.components.size() != params.g()) throw Error(Errc::Protocol, "ERESULT has the wrong component count");
        for (const auto& c : part.components)
          if (c.s2.size() != params.p()) throw Error(Errc::Protocol, "ERESULT has the wrong dimension");
        part.block = w;
        out.partials.push_back(std::move(part));
      }
      ExactSum total;
      for (const auto& part : out.partials) total.merge(part.loglik);
      out.loglik_prev = total.value();
      return out;
    };
    const MStepFn m_step_fn = [&](const std::vector<PartialSums>& partials, std::size_t n, const MixtureParams& prev) {
      return parallel_m_step(partials, n, prev, pool_);
    };
    RunHooks hooks = options_.hooks;
    hooks.labeler = [&](const MixtureParams& params) { return labels_at(data_, params); };
    return run_em(data_, config_, start, e_step_fn, m_step_fn, hooks);
  }

  const DataSet& data_;
  const FitConfig& config_;
  const CoordinatorOptions& options_;
  WorkerPool pool_;
  std::vector<net::Socket> workers_;
  std::vector<std::size_t> cores_;
};

}  // namespace

FitResult coordinate_fit(const DataSet& data, const FitConfig& config, const CoordinatorOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  Coordinator coordinator(data, config, options);
  FitResult result = coordinator.run();
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mixem
