#pragma once

// Thin blocking TCP wrappers with poll-based timeouts, enough for the
// coordinator/worker protocol and nothing more.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>

#include "mixem/wire.hpp"

namespace mixem::net {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

/// "host:port"; throws InvalidArgument.
Endpoint parse_endpoint(const std::string& text);

using Timeout = std::chrono::milliseconds;

/// Outcome of a receive that did not yield a frame.
enum class RecvStatus { Ok, Closed, TimedOut };

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) noexcept : fd_(fd) {}
  ~Socket();
  Socket(Socket&& other) noexcept;
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  bool valid() const noexcept { return fd_ >= 0; }
  int fd() const noexcept { return fd_; }
  void close() noexcept;

  /// Writes every byte; throws WorkerAborted when the peer is gone.
  void send_all(std::span<const std::uint8_t> bytes);
  void send_frame(const wire::Frame& frame);

  /// Reads one frame. Closed means the peer hung up before a header began;
  /// a frame cut off mid-way throws TruncatedFrame. Header errors propagate
  /// from wire::decode_header.
  RecvStatus recv_frame(wire::Frame& out, Timeout timeout);

 private:
  RecvStatus recv_exact(std::span<std::uint8_t> out, Timeout timeout, bool at_boundary);

  int fd_ = -1;
};

/// Throws NodeUnreachable.
Socket connect_to(const Endpoint& endpoint, Timeout timeout);

class Listener {
 public:
  /// Binds and listens; port 0 picks a free port. Throws Io.
  explicit Listener(const Endpoint& endpoint);

  std::uint16_t port() const noexcept { return port_; }
  /// Throws Io on timeout or failure.
  Socket accept(Timeout timeout);

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

}  // namespace mixem::net
