#pragma once

// Minimal RAII wrapper over a POSIX IPv4 UDP socket.

#include <arpa/inet.h>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <netinet/in.h>
#include <optional>
#include <utility>
#include <poll.h>
#include <span>
#include <stdexcept>
#include <string>
#include <sys/socket.h>
#include <unistd.h>
#include <vector>

namespace mfcaas {

class SocketError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

class UdpSocket {
public:
  /// Binds to host:port; port 0 picks an ephemeral port.
  explicit UdpSocket(const Endpoint& bind_to) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw SocketError(errno_message("socket"));
    sockaddr_in addr = make_addr(bind_to);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) < 0) {
      const std::string msg = errno_message("bind " + bind_to.host + ":" + std::to_string(bind_to.port));
      ::close(fd_);
      throw SocketError(msg);
    }
  }

  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;
  UdpSocket(UdpSocket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  UdpSocket& operator=(UdpSocket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~UdpSocket() { reset(); }

  std::uint16_t local_port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) < 0) {
      throw SocketError(errno_message("getsockname"));
    }
    return ntohs(addr.sin_port);
  }

  void send_to(std::span<const std::uint8_t> bytes, const Endpoint& to) {
    sockaddr_in addr = make_addr(to);
    const auto n = ::sendto(fd_, bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&addr),
                            sizeof(addr));
    if (n < 0) throw SocketError(errno_message("sendto"));
  }

  /// Waits up to timeout_ms (0 = poll only) for one datagram.
  std::optional<std::vector<std::uint8_t>> receive(int timeout_ms) {
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, timeout_ms);
    if (r < 0) {
      if (errno == EINTR) return std::nullopt;
      throw SocketError(errno_message("poll"));
    }
    if (r == 0) return std::nullopt;
    std::vector<std::uint8_t> buf(512);
    const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return std::nullopt;
      throw SocketError(errno_message("recv"));
    }
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }

  /// Everything currently queued, without blocking.
  std::vector<std::vector<std::uint8_t>> drain() {
    std::vector<std::vector<std::uint8_t>> out;
    while (auto d = receive(0)) out.push_back(std::move(*d));
    return out;
  }

private:
  static sockaddr_in make_addr(const Endpoint& ep) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
      throw SocketError("invalid IPv4 address '" + ep.host + "'");
    }
    return addr;
  }

  static std::string errno_message(const std::string& what) { return what + ": " + std::strerror(errno); }

  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  int fd_ = -1;
};

}  // namespace mfcaas
