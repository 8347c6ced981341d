#include "mixem/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "mixem/error.hpp"

namespace mixem::net {
namespace {

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

// Waits for readability (or writability); returns false on timeout.
bool wait_fd(int fd, short events, Timeout timeout) {
  pollfd pfd{fd, events, 0};
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<Timeout>(deadline - std::chrono::steady_clock::now());
    const int rc = ::poll(&pfd, 1, static_cast<int>(std::max<long long>(left.count(), 0)));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw Error(Errc::Io, sys_error("poll"));
  }
}

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  const char* host = ep.host.empty() || ep.host == "*" ? nullptr : ep.host.c_str();
  const int rc = ::getaddrinfo(host, port.c_str(), &hints, &res);
  if (rc != 0) return nullptr;
  return res;
}

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size())
    throw Error(Errc::InvalidArgument, "endpoint must be host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.empty()) ep.host = "127.0.0.1";
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, "bad port in '" + text + "'");
  }
  if (port > 65535) throw Error(Errc::InvalidArgument, "port out of range in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

Socket::~Socket() { close(); }

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

void Socket::close() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::send_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t rc = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::WorkerAborted, sys_error("send"));
    }
    done += static_cast<std::size_t>(rc);
  }
}

void Socket::send_frame(const wire::Frame& frame) { send_all(wire::encode_frame(frame)); }

RecvStatus Socket::recv_exact(std::span<std::uint8_t> out, Timeout timeout, bool at_boundary) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (!wait_fd(fd_, POLLIN, timeout)) return RecvStatus::TimedOut;
    const ssize_t rc = ::recv(fd_, out.data() + done, out.size() - done, 0);
    if (rc < 0) {
      if (errno == EINTR) continue;
      if (errno == ECONNRESET && at_boundary && done == 0) return RecvStatus::Closed;
      throw Error(Errc::WorkerAborted, sys_error("recv"));
    }
    if (rc == 0) {
      if (at_boundary && done == 0) return RecvStatus::Closed;
      throw Error(Errc::TruncatedFrame, "connection closed in the middle of a frame");
    }
    done += static_cast<std::size_t>(rc);
  }
  return RecvStatus::Ok;
}

RecvStatus Socket::recv_frame(wire::Frame& out, Timeout timeout) {
  std::uint8_t header[wire::kHeaderSize];
  const auto status = recv_exact(header, timeout, true);
  if (status != RecvStatus::Ok) return status;
  const auto [type, len] = wire::decode_header(header);
  out.type = type;
  out.payload.assign(len, 0);
  const auto body = recv_exact(out.payload, timeout, false);
  if (body == RecvStatus::TimedOut) throw Error(Errc::TruncatedFrame, "timed out in the middle of a frame");
  return RecvStatus::Ok;
}

Socket connect_to(const Endpoint& endpoint, Timeout timeout) {
  addrinfo* res = resolve(endpoint, false);
  if (!res) throw Error(Errc::NodeUnreachable, "cannot resolve " + endpoint.str());
  std::string last = "no address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Socket sock(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!sock.valid()) continue;
    const int flags = ::fcntl(sock.fd(), F_GETFL);
    ::fcntl(sock.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(sock.fd(), ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      if (!wait_fd(sock.fd(), POLLOUT, timeout)) {
        last = "timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      errno = err;
      rc = err == 0 ? 0 : -1;
    }
    if (rc < 0) {
      last = std::strerror(errno);
      continue;
    }
    ::fcntl(sock.fd(), F_SETFL, flags);
    int one = 1;
    ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    ::freeaddrinfo(res);
    return sock;
  }
  ::freeaddrinfo(res);
  throw Error(Errc::NodeUnreachable, "cannot connect to " + endpoint.str() + ": " + last);
}

Listener::Listener(const Endpoint& endpoint) {
  addrinfo* res = resolve(endpoint, true);
  if (!res) throw Error(Errc::Io, "cannot resolve " + endpoint.str());
  sock_ = Socket(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!sock_.valid()) {
    ::freeaddrinfo(res);
    throw Error(Errc::Io, sys_error("socket"));
  }
  int one = 1;
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const int rc = ::bind(sock_.fd(), res->ai_addr, res->ai_addrlen);
  const int err = errno;
  ::freeaddrinfo(res);
  errno = err;
  if (rc < 0 && err == EADDRINUSE) throw Error(Errc::Io, "address in use: " + endpoint.str());
  if (rc < 0) throw Error(Errc::Io, sys_error("bind " + endpoint.str()));
  if (::listen(sock_.fd(), 4) < 0) throw Error(Errc::Io, sys_error("listen"));
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Socket Listener::accept(Timeout timeout) {
  if (!wait_fd(sock_.fd(), POLLIN, timeout)) throw Error(Errc::Io, "no coordinator connected before the timeout");
  Socket conn(::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC));
  if (!conn.valid()) throw Error(Errc::Io, sys_error("accept"));
  int one = 1;
  ::setsockopt(conn.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return conn;
}

}  // namespace mixem::net
