#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>

#include "fedacross/messages.hpp"

namespace fedacross {

/// Bidirectional message pipe. Every message crosses as an encoded frame, so
/// byte counts are identical for every transport. receive() throws
/// Error(Transport) on timeout or when the peer has gone away.
class Channel {
 public:
  virtual ~Channel() = default;

  void send(const Message& msg);
  Message receive();

  std::uint64_t bytes_sent() const noexcept { return bytes_sent_; }
  std::uint64_t bytes_received() const noexcept { return bytes_received_; }

  virtual void close() = 0;

 protected:
  virtual void send_frame(const Bytes& frame) = 0;
  virtual Bytes receive_frame() = 0;

 private:
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
};

using Timeout = std::chrono::milliseconds;

/// Two connected in-memory endpoints.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair(Timeout timeout);

class SocketListener {
 public:
  /// Port 0 binds an ephemeral port; see port().
  SocketListener(const std::string& host, std::uint16_t port);
  ~SocketListener();
  SocketListener(const SocketListener&) = delete;
  SocketListener& operator=(const SocketListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<Channel> accept(Timeout accept_timeout, Timeout io_timeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Retries until the listener is reachable or connect_timeout elapses.
std::unique_ptr<Channel> connect_socket(const std::string& host, std::uint16_t port,
                                        Timeout connect_timeout, Timeout io_timeout);

}  // namespace fedacross
