#include "fedacross/transport.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>

namespace fedacross {

void Channel::send(const Message& msg) {
  const Bytes frame = encode_frame(msg);
  send_frame(frame);
  bytes_sent_ += frame.size();
}

Message Channel::receive() {
  const Bytes frame = receive_frame();
  bytes_received_ += frame.size();
  return decode_frame(frame);
}

namespace {

struct Mailbox {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<Bytes> frames;
  bool closed = false;
};

class InProcessChannel final : public Channel {
 public:
  InProcessChannel(std::shared_ptr<Mailbox> inbox, std::shared_ptr<Mailbox> outbox, Timeout timeout)
      : inbox_(std::move(inbox)), outbox_(std::move(outbox)), timeout_(timeout) {}
  ~InProcessChannel() override { close(); }

  void close() override {
    for (auto* box : {inbox_.get(), outbox_.get()}) {
      std::lock_guard lock(box->mutex);
      box->closed = true;
      box->ready.notify_all();
    }
  }

 protected:
  void send_frame(const Bytes& frame) override {
    std::lock_guard lock(outbox_->mutex);
    if (outbox_->closed) throw Error(ErrorCode::Transport, "in-process peer closed");
    outbox_->frames.push_back(frame);
    outbox_->ready.notify_one();
  }

  Bytes receive_frame() override {
    std::unique_lock lock(inbox_->mutex);
    if (!inbox_->ready.wait_for(lock, timeout_,
                                [&] { return !inbox_->frames.empty() || inbox_->closed; }))
      throw Error(ErrorCode::Transport, "in-process receive timed out");
    if (inbox_->frames.empty()) throw Error(ErrorCode::Transport, "in-process peer closed");
    Bytes frame = std::move(inbox_->frames.front());
    inbox_->frames.pop_front();
    return frame;
  }

 private:
  std::shared_ptr<Mailbox> inbox_;
  std::shared_ptr<Mailbox> outbox_;
  Timeout timeout_;
};

[[noreturn]] void sys_error(const std::string& what) {
  throw Error(ErrorCode::Transport, what + ": " + std::strerror(errno));
}

void set_io_timeout(int fd, Timeout timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw Error(ErrorCode::Transport, "cannot resolve host " + host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

class SocketChannel final : public Channel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {}
  ~SocketChannel() override { close(); }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 protected:
  void send_frame(const Bytes& frame) override {
    if (fd_ < 0) throw Error(ErrorCode::Transport, "socket closed");
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        sys_error("send");
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  Bytes receive_frame() override {
    if (fd_ < 0) throw Error(ErrorCode::Transport, "socket closed");
    Bytes frame(kFrameHeaderSize);
    read_exact(frame.data(), kFrameHeaderSize);
    const std::uint32_t length = read_frame_length(std::span<const std::uint8_t, 4>(frame.data(), 4));
    if (length == 0 || length > kMaxFrameLength)
      throw Error(ErrorCode::Transport, "invalid frame length " + std::to_string(length));
    frame.resize(kFrameHeaderSize + length);
    read_exact(frame.data() + kFrameHeaderSize, length);
    return frame;
  }

 private:
  void read_exact(std::uint8_t* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r == 0) throw Error(ErrorCode::Transport, "peer closed the connection");
      if (r < 0) {
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK)
          throw Error(ErrorCode::Transport, "socket receive timed out");
        sys_error("recv");
      }
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
};

}  // namespace

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair(Timeout timeout) {
  auto a_to_b = std::make_shared<Mailbox>();
  auto b_to_a = std::make_shared<Mailbox>();
  return {std::make_unique<InProcessChannel>(b_to_a, a_to_b, timeout),
          std::make_unique<InProcessChannel>(a_to_b, b_to_a, timeout)};
}

SocketListener::SocketListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) sys_error("socket");
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    const std::string msg = "bind " + host + ":" + std::to_string(port);
    ::close(fd_);
    sys_error(msg);
  }
  if (::listen(fd_, 64) < 0) {
    ::close(fd_);
    sys_error("listen");
  }
  socklen_t len = sizeof addr;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

SocketListener::~SocketListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> SocketListener::accept(Timeout accept_timeout, Timeout io_timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  const int ready = ::poll(&pfd, 1, static_cast<int>(accept_timeout.count()));
  if (ready < 0) sys_error("poll");
  if (ready == 0) throw Error(ErrorCode::Transport, "no client connected before the accept timeout");
  const int client = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (client < 0) sys_error("accept");
  set_io_timeout(client, io_timeout);
  return std::make_unique<SocketChannel>(client);
}

std::unique_ptr<Channel> connect_socket(const std::string& host, std::uint16_t port,
                                        Timeout connect_timeout, Timeout io_timeout) {
  const sockaddr_in addr = resolve(host, port);
  const auto deadline = std::chrono::steady_clock::now() + connect_timeout;
  while (true) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) sys_error("socket");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
      set_io_timeout(fd, io_timeout);
      return std::make_unique<SocketChannel>(fd);
    }
    const int err = errno;
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      errno = err;
      sys_error("connect " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace fedacross
