// Copyright 2026 The teleop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Stream transport between two node processes.
//
// Frames are `type u8 | length u32 LE | body`. Link messages travel inside
// kMessage frames unchanged. After its tick k a node sends kTick(k); the
// peer does not run a tick that depends on k until it has seen that frame.
// Simulated time therefore advances in lockstep and a two-process run
// reproduces the in-process loopback exactly, at any link delay.
//
// A reader thread per channel decodes frames into a queue; the control
// thread only pops from it.

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <csignal>
#include <cstring>
#include <deque>
#include <iostream>
#include <mutex>
#include <sstream>
#include <span>
#include <string>
#include <thread>
#include <utility>

#include "teleop/session.hpp"

namespace teleop {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FrameType : std::uint8_t { kHello = 1, kMessage = 2, kTick = 3, kError = 4, kDone = 5 };

struct WireFrame {
  FrameType type = FrameType::kMessage;
  Bytes body;
};

inline constexpr std::size_t kMaxFrameBody = 1 << 20;

/// Owning file descriptor for a connected stream socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() { return std::exchange(fd_, -1); }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdownBoth() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void writeAll(std::span<const std::uint8_t> data) {
    std::size_t done = 0;
    while (done < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  /// False on orderly shutdown before the first byte.
  bool readExact(std::uint8_t* out, std::size_t n) {
    std::size_t done = 0;
    while (done < n) {
      const ssize_t r = ::recv(fd_, out + done, n - done, 0);
      if (r == 0) {
        if (done == 0) return false;
        throw TransportError("peer closed mid-frame");
      }
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("recv failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(r);
    }
    return true;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::string port;

  /// "host:port" or a bare port.
  static Endpoint parse(const std::string& text) {
    Endpoint e;
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) {
      e.port = text;
    } else {
      e.host = text.substr(0, colon);
      e.port = text.substr(colon + 1);
    }
    if (e.host.empty()) e.host = "127.0.0.1";
    if (e.port.empty() || e.port.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("bad endpoint '" + text + "', expected host:port");
    }
    return e;
  }
};

namespace detail {

inline void setNoDelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) ::freeaddrinfo(list);
  }
};

inline AddrInfo resolve(const Endpoint& e, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo info;
  const int rc = ::getaddrinfo(e.host.c_str(), e.port.c_str(), &hints, &info.list);
  if (rc != 0) throw TransportError("cannot resolve " + e.host + ":" + e.port + ": " + ::gai_strerror(rc));
  return info;
}

}  // namespace detail

/// Listening socket; `port()` reports the bound port (useful with port 0).
class Listener {
 public:
  explicit Listener(const Endpoint& e) {
    const detail::AddrInfo info = detail::resolve(e, true);
    for (addrinfo* a = info.list; a; a = a->ai_next) {
      Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
      if (!s.valid()) continue;
      int one = 1;
      ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) == 0 && ::listen(s.fd(), 1) == 0) {
        socket_ = std::move(s);
        break;
      }
    }
    if (!socket_.valid()) throw TransportError("cannot listen on " + e.host + ":" + e.port);
  }

  int port() const {
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    if (addr.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
    return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  }

  Socket accept(std::chrono::milliseconds timeout) {
    pollfd p{socket_.fd(), POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc <= 0) throw TransportError("no peer connected within " + std::to_string(timeout.count()) + " ms");
    Socket s(::accept(socket_.fd(), nullptr, nullptr));
    if (!s.valid()) throw TransportError(std::string("accept failed: ") + std::strerror(errno));
    detail::setNoDelay(s.fd());
    return s;
  }

 private:
  Socket socket_;
};

/// Connects, retrying until the peer listens or the timeout expires.
inline Socket connectTo(const Endpoint& e, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const detail::AddrInfo info = detail::resolve(e, false);
    for (addrinfo* a = info.list; a; a = a->ai_next) {
      Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
      if (!s.valid()) continue;
      if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) == 0) {
        detail::setNoDelay(s.fd());
        return s;
      }
    }
    if (std::chrono::steady_clock::now() > deadline) {
      throw TransportError("cannot connect to " + e.host + ":" + e.port);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

inline std::pair<Socket, Socket> socketPair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
    throw TransportError(std::string("socketpair failed: ") + std::strerror(errno));
  }
  return {Socket(fds[0]), Socket(fds[1])};
}

/// Framed, bidirectional channel with a background reader.
class FrameChannel {
 public:
  explicit FrameChannel(Socket socket, std::chrono::milliseconds receive_timeout = std::chrono::seconds(30))
      : socket_(std::move(socket)), timeout_(receive_timeout) {
    reader_ = std::thread([this] { readLoop(); });
  }
  FrameChannel(const FrameChannel&) = delete;
  FrameChannel& operator=(const FrameChannel&) = delete;
  ~FrameChannel() {
    socket_.shutdownBoth();
    if (reader_.joinable()) reader_.join();
  }

  void send(FrameType type, std::span<const std::uint8_t> body) {
    Bytes frame(5 + body.size());
    frame[0] = static_cast<std::uint8_t>(type);
    wire::putU32(frame.data() + 1, static_cast<std::uint32_t>(body.size()));
    std::copy(body.begin(), body.end(), frame.begin() + 5);
    socket_.writeAll(frame);
    bytes_sent_ += frame.size();
  }
  void send(FrameType type, std::string_view text) {
    send(type, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  void sendTick(std::uint64_t k) {
    std::uint8_t body[8];
    wire::putU64(body, k);
    send(FrameType::kTick, body);
  }

  /// Next frame; empty once the peer has closed. Throws on timeout.
  std::optional<WireFrame> next() {
    std::unique_lock lock(mutex_);
    if (!ready_.wait_for(lock, timeout_, [this] { return !queue_.empty() || closed_; })) {
      throw TransportError("peer silent for " + std::to_string(timeout_.count()) + " ms");
    }
    if (queue_.empty()) {
      if (!error_.empty()) throw TransportError(error_);
      return std::nullopt;
    }
    WireFrame f = std::move(queue_.front());
    queue_.pop_front();
    return f;
  }

  std::uint64_t bytesSent() const { return bytes_sent_; }

 private:
  void readLoop() {
    try {
      for (;;) {
        std::uint8_t head[5];
        if (!socket_.readExact(head, 5)) break;
        const std::uint32_t len = wire::getU32(head + 1);
        if (head[0] < 1 || head[0] > 5) throw TransportError("unknown frame type " + std::to_string(head[0]));
        if (len > kMaxFrameBody) throw TransportError("oversized frame");
        WireFrame f{static_cast<FrameType>(head[0]), Bytes(len)};
        if (len && !socket_.readExact(f.body.data(), len)) throw TransportError("peer closed mid-frame");
        std::lock_guard lock(mutex_);
        queue_.push_back(std::move(f));
        ready_.notify_one();
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      error_ = e.what();
    }
    std::lock_guard lock(mutex_);
    closed_ = true;
    ready_.notify_one();
  }

  Socket socket_;
  std::chrono::milliseconds timeout_;
  std::thread reader_;
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<WireFrame> queue_;
  bool closed_ = false;
  std::string error_;
  std::uint64_t bytes_sent_ = 0;
};

enum class NodeRole : std::uint8_t { kOperator = 1, kAvatar = 2 };

struct SideResult {
  std::uint64_t ticks_run = 0;
  std::optional<std::string> failure;
  std::string peer_summary;  // text the peer sent with its kDone frame
};

inline Bytes helloBody(NodeRole role, const Scenario& s) {
  Bytes b(9);
  b[0] = static_cast<std::uint8_t>(role);
  wire::putU64(b.data() + 1, s.ticks());
  b.insert(b.end(), s.name.begin(), s.name.end());
  return b;
}

/// Drives one node against its peer in simulated-time lockstep.
/// `finish` renders this side's summary, sent to the peer at the end.
template <typename Node, typename Finish>
SideResult runLockstep(Node& node, NodeRole role, const Scenario& s, FrameChannel& channel, Finish finish,
                       std::optional<std::uint64_t> ticks = {}) {
  const std::uint64_t n = ticks.value_or(s.ticks());
  SideResult result;
  channel.send(FrameType::kHello, helloBody(role, s));

  bool hello_seen = false;
  bool peer_done = false;
  std::optional<std::uint64_t> peer_tick;

  // Pops frames until `until` holds. Link messages go straight to the node.
  auto pump = [&](auto until) {
    while (!until()) {
      std::optional<WireFrame> f = channel.next();
      if (!f) throw TransportError("peer closed the connection");
      switch (f->type) {
        case FrameType::kHello: {
          if (f->body.size() < 9) throw TransportError("short hello");
          const auto peer_role = static_cast<NodeRole>(f->body[0]);
          const std::uint64_t peer_ticks = wire::getU64(f->body.data() + 1);
          const std::string peer_name(f->body.begin() + 9, f->body.end());
          if (peer_role == role) throw TransportError("both nodes claim the same role");
          if (peer_ticks != s.ticks() || peer_name != s.name) {
            throw TransportError("peer runs scenario '" + peer_name + "' (" + std::to_string(peer_ticks) +
                                 " ticks), expected '" + s.name + "' (" + std::to_string(s.ticks()) + ")");
          }
          hello_seen = true;
          break;
        }
        case FrameType::kMessage:
          node.receive(f->body);
          break;
        case FrameType::kTick:
          if (f->body.size() != 8) throw TransportError("bad tick frame");
          peer_tick = wire::getU64(f->body.data());
          break;
        case FrameType::kError:
          if (!result.failure) result.failure = std::string(f->body.begin(), f->body.end());
          break;
        case FrameType::kDone:
          result.peer_summary.assign(f->body.begin(), f->body.end());
          peer_done = true;
          break;
      }
      if (peer_done && !until()) throw TransportError("peer finished early");
    }
  };

  pump([&] { return hello_seen; });
  for (std::uint64_t k = 0; k < n && !result.failure; ++k) {
    // The operator at k needs the avatar's k-1; the avatar at k needs the operator's k.
    if (role == NodeRole::kAvatar || k > 0) {
      const std::uint64_t need = role == NodeRole::kAvatar ? k : k - 1;
      pump([&] { return result.failure.has_value() || (peer_tick && *peer_tick >= need); });
      if (result.failure) break;
    }
    try {
      for (const Bytes& b : node.tick(k)) channel.send(FrameType::kMessage, b);
    } catch (const NumericalBlowup& e) {
      result.failure = std::string("NumericalBlowup: ") + e.what();
      channel.send(FrameType::kError, *result.failure);
      break;
    }
    channel.sendTick(k);
    result.ticks_run = k + 1;
  }
  channel.send(FrameType::kDone, finish());
  pump([&] { return peer_done; });
  return result;
}

inline std::string formatOperatorSummary(const OperatorSummary& s) {
  std::ostringstream o;
  o << "operator.ticks " << s.ticks << "\n"
    << "operator.rms_human_force_N " << s.rms_human_force << "\n"
    << "operator.peak_human_force_N " << s.peak_human_force << "\n"
    << "operator.rms_human_torque_Nm " << s.rms_human_torque << "\n"
    << "operator.saturated_ticks " << s.saturated_ticks << "\n"
    << "operator.mirror_hold_ticks " << s.hold_ticks << "\n"
    << "operator.mirror_singular_ticks " << s.singular_ticks << "\n"
    << "operator.peak_tau_la_Nm " << s.peak_tau_la << "\n"
    << "operator.brake_engagements " << s.brake_engagements << "\n"
    << "operator.limit_contacts " << s.limit_contacts << "\n"
    << "operator.calibrated_mass_kg " << s.calibration_mass << "\n"
    << "operator.bytes_sent " << s.bytes_sent << "\n"
    << "operator.link_in accepted=" << s.incoming.accepted << " dropped=" << s.incoming.dropped
    << " stale=" << s.incoming.stale << " corrupt=" << s.incoming.corrupt << "\n";
  return o.str();
}

inline std::string formatAvatarSummary(const AvatarSummary& s) {
  std::ostringstream o;
  o << "avatar.ticks " << s.ticks << "\n"
    << "avatar.final_mode " << modeName(s.final_mode) << "\n"
    << "avatar.final_pose_error_m " << s.final_pose_error << "\n"
    << "avatar.peak_torque_Nm " << s.peak_torque << "\n"
    << "avatar.safety_stops " << s.safety_stops << "\n"
    << "avatar.restarts " << s.restarts << "\n"
    << "avatar.stale_goal_ticks " << s.stale_goal_ticks << "\n"
    << "avatar.limit_contacts " << s.limit_contacts << "\n"
    << "avatar.calibrated_mass_kg " << s.calibration_mass << "\n"
    << "avatar.bytes_sent " << s.bytes_sent << "\n"
    << "avatar.link_in accepted=" << s.incoming.accepted << " dropped=" << s.incoming.dropped
    << " stale=" << s.incoming.stale << " corrupt=" << s.incoming.corrupt << "\n";
  o << "avatar.transitions";
  for (const auto& [t, m] : s.transitions) o << " " << t << ":" << modeName(m);
  o << "\n";
  return o.str();
}

struct ForkedRunResult {
  OperatorSummary op;
  std::string avatar_summary;  // as rendered by the avatar process
  std::optional<std::string> failure;
  std::uint64_t ticks_run = 0;
  int avatar_exit = 0;
};

/// Runs the avatar in a forked child over a socket pair, the operator in
/// this process, both in lockstep.
inline ForkedRunResult runForked(const Scenario& s, const RunOptions& opt = {}) {
  auto [mine, theirs] = socketPair();
  std::cout.flush();
  std::cerr.flush();
  const pid_t pid = ::fork();
  if (pid < 0) throw TransportError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    mine.close();
    int code = 0;
    try {
      AvatarNode av(s, s.forward, opt.avatar_trace);
      FrameChannel channel(std::move(theirs));
      const SideResult r = runLockstep(
          av, NodeRole::kAvatar, s, channel, [&] { return formatAvatarSummary(av.summary()); }, opt.ticks);
      av.flush();
      code = r.failure ? 3 : 0;
    } catch (const std::exception& e) {
      std::cerr << "avatar process: " << e.what() << "\n";
      code = 1;
    }
    std::_Exit(code);
  }
  theirs.close();
  ForkedRunResult result;
  try {
    OperatorNode op(s, s.back, opt.operator_trace);
    FrameChannel channel(std::move(mine));
    const SideResult r = runLockstep(
        op, NodeRole::kOperator, s, channel, [&] { return formatOperatorSummary(op.summary()); }, opt.ticks);
    op.flush();
    result.op = op.summary();
    result.avatar_summary = r.peer_summary;
    result.failure = r.failure;
    result.ticks_run = r.ticks_run;
  } catch (...) {
    ::kill(pid, SIGTERM);
    ::waitpid(pid, nullptr, 0);
    throw;
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  result.avatar_exit = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return result;
}

}  // namespace teleop
