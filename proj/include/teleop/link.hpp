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

// Wire messages between the operator and avatar nodes.
//
// Layout, all integers and doubles little-endian:
//
//   offset  size  field
//   0       2     magic "TL"
//   2       1     kind
//   3       8     sequence (u64)
//   11      8     sim time in microseconds (i64)
//   19      8n    payload, n doubles, n fixed per kind
//   19+8n   4     CRC-32 (zlib polynomial) of bytes [0, 19+8n)
//
// Payloads:
//   HandGoal         7   x y z qw qx qy qz, torso frame, qw >= 0
//   HandCommand      9   actuator positions in [0, 1], unused slots 0
//   AvatarTelemetry  7   joint positions
//   AvatarWrench     6   fx fy fz tx ty tz, hand frame
//   HandFeedback     9   motor currents, unused slots 0

#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "teleop/sim_world.hpp"
#include "teleop/types.hpp"

namespace teleop {

enum class MessageKind : std::uint8_t {
  kHandGoal = 1,
  kHandCommand = 2,
  kAvatarTelemetry = 3,
  kAvatarWrench = 4,
  kHandFeedback = 5,
};
inline constexpr int kMessageKinds = 5;

inline constexpr std::size_t payloadDoubles(MessageKind k) {
  switch (k) {
    case MessageKind::kHandGoal: return 7;
    case MessageKind::kHandCommand: return 9;
    case MessageKind::kAvatarTelemetry: return 7;
    case MessageKind::kAvatarWrench: return 6;
    case MessageKind::kHandFeedback: return 9;
  }
  return 0;
}

inline std::string_view kindName(MessageKind k) {
  switch (k) {
    case MessageKind::kHandGoal: return "HandGoal";
    case MessageKind::kHandCommand: return "HandCommand";
    case MessageKind::kAvatarTelemetry: return "AvatarTelemetry";
    case MessageKind::kAvatarWrench: return "AvatarWrench";
    case MessageKind::kHandFeedback: return "HandFeedback";
  }
  return "?";
}

inline constexpr std::size_t kHeaderBytes = 19;
inline constexpr std::size_t kCrcBytes = 4;
inline constexpr std::size_t kMaxPayload = 9;

inline constexpr std::size_t encodedSize(MessageKind k) {
  return kHeaderBytes + 8 * payloadDoubles(k) + kCrcBytes;
}

struct LinkMessage {
  MessageKind kind = MessageKind::kHandGoal;
  std::uint64_t sequence = 0;
  std::int64_t sim_time_us = 0;
  std::array<double, kMaxPayload> payload{};

  double simTime() const { return static_cast<double>(sim_time_us) * 1e-6; }

  bool operator==(const LinkMessage& o) const {
    if (kind != o.kind || sequence != o.sequence || sim_time_us != o.sim_time_us) return false;
    for (std::size_t i = 0; i < payloadDoubles(kind); ++i) {
      if (std::bit_cast<std::uint64_t>(payload[i]) != std::bit_cast<std::uint64_t>(o.payload[i])) return false;
    }
    return true;
  }
};

inline std::int64_t toMicros(double seconds) { return static_cast<std::int64_t>(std::llround(seconds * 1e6)); }

inline LinkMessage handGoalMessage(std::uint64_t seq, std::int64_t t_us, const Pose6D& pose) {
  const Pose6D p = pose.canonical();
  LinkMessage m{MessageKind::kHandGoal, seq, t_us, {}};
  m.payload = {p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.w(),
               p.rotation.x(),    p.rotation.y(),    p.rotation.z(),    0.0, 0.0};
  return m;
}

inline Pose6D poseFromMessage(const LinkMessage& m) {
  const auto& v = m.payload;
  return {Vector3(v[0], v[1], v[2]), Quaternion(v[3], v[4], v[5], v[6])};
}

inline LinkMessage vectorMessage(MessageKind kind, std::uint64_t seq, std::int64_t t_us,
                                 std::span<const double> values) {
  LinkMessage m{kind, seq, t_us, {}};
  const std::size_t n = payloadDoubles(kind);
  if (values.size() > n) throw std::invalid_argument("payload too long for " + std::string(kindName(kind)));
  std::copy(values.begin(), values.end(), m.payload.begin());
  return m;
}

namespace wire {

inline void putU64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint64_t getU64(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}
inline void putU32(std::uint8_t* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint32_t getU32(const std::uint8_t* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}
inline std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace wire

inline std::vector<std::uint8_t> encode(const LinkMessage& m) {
  const std::size_t n = payloadDoubles(m.kind);
  if (n == 0) throw std::invalid_argument("encode: unknown message kind");
  std::vector<std::uint8_t> out(encodedSize(m.kind));
  out[0] = 'T';
  out[1] = 'L';
  out[2] = static_cast<std::uint8_t>(m.kind);
  wire::putU64(&out[3], m.sequence);
  wire::putU64(&out[11], static_cast<std::uint64_t>(m.sim_time_us));
  for (std::size_t i = 0; i < n; ++i) wire::putU64(&out[kHeaderBytes + 8 * i], std::bit_cast<std::uint64_t>(m.payload[i]));
  const std::size_t body = kHeaderBytes + 8 * n;
  wire::putU32(&out[body], wire::crc(out.data(), body));
  return out;
}

enum class DecodeError : std::uint8_t { kTruncated, kBadMagic, kUnknownKind, kLengthMismatch, kChecksumError };

inline std::string_view decodeErrorName(DecodeError e) {
  switch (e) {
    case DecodeError::kTruncated: return "truncated";
    case DecodeError::kBadMagic: return "bad magic";
    case DecodeError::kUnknownKind: return "unknown kind";
    case DecodeError::kLengthMismatch: return "length mismatch";
    case DecodeError::kChecksumError: return "checksum error";
  }
  return "?";
}

using DecodeResult = std::variant<LinkMessage, DecodeError>;

inline DecodeResult decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + kCrcBytes) return DecodeError::kTruncated;
  if (bytes[0] != 'T' || bytes[1] != 'L') return DecodeError::kBadMagic;
  const auto kind = static_cast<MessageKind>(bytes[2]);
  const std::size_t n = payloadDoubles(kind);
  if (n == 0) return DecodeError::kUnknownKind;
  if (bytes.size() != encodedSize(kind)) return DecodeError::kLengthMismatch;
  const std::size_t body = kHeaderBytes + 8 * n;
  if (wire::crc(bytes.data(), body) != wire::getU32(&bytes[body])) return DecodeError::kChecksumError;
  LinkMessage m;
  m.kind = kind;
  m.sequence = wire::getU64(&bytes[3]);
  m.sim_time_us = static_cast<std::int64_t>(wire::getU64(&bytes[11]));
  for (std::size_t i = 0; i < n; ++i) m.payload[i] = std::bit_cast<double>(wire::getU64(&bytes[kHeaderBytes + 8 * i]));
  return m;
}

struct LinkConfig {
  double delay = 0.0;   // s, one way
  double jitter = 0.0;  // s, uniform in [0, jitter] added to the delay
  double drop = 0.0;    // probability
  std::uint64_t seed = 1;

  void validate() const {
    if (!(delay >= 0.0) || !(jitter >= 0.0)) throw std::invalid_argument("link delay and jitter must be >= 0");
    if (!(drop >= 0.0 && drop < 1.0)) throw std::invalid_argument("link drop rate must be in [0, 1)");
  }
};

struct LinkStats {
  std::uint64_t accepted = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t stale = 0;
  std::uint64_t corrupt = 0;
  std::uint64_t bytes = 0;
};

/// Receiving end of one direction. Messages are scheduled in simulated time
/// from their own timestamp, so the outcome does not depend on when the
/// bytes physically arrived. Drop and jitter draws come from a seeded
/// stream, two draws per accepted message.
class DelayLine {
 public:
  explicit DelayLine(LinkConfig config = {}) : config_(config), rng_(config.seed) { config_.validate(); }

  const LinkConfig& config() const { return config_; }
  const LinkStats& stats() const { return stats_; }
  std::size_t pending() const { return queue_.size(); }

  void accept(std::span<const std::uint8_t> bytes) {
    stats_.bytes += bytes.size();
    const DecodeResult r = decode(bytes);
    if (std::holds_alternative<DecodeError>(r)) {
      ++stats_.corrupt;
      return;
    }
    const LinkMessage& m = std::get<LinkMessage>(r);
    ++stats_.accepted;
    const double u_drop = rng_.uniform();
    const double u_jitter = rng_.uniform();
    if (u_drop < config_.drop) {
      ++stats_.dropped;
      return;
    }
    const std::int64_t due = m.sim_time_us + toMicros(config_.delay) + toMicros(config_.jitter * u_jitter);
    queue_.push({due, order_++, m});
  }

  /// Messages due at or before `now_us`, in delivery order, stale ones removed.
  std::vector<LinkMessage> poll(std::int64_t now_us) {
    std::vector<LinkMessage> out;
    while (!queue_.empty() && queue_.top().due <= now_us) {
      const LinkMessage m = queue_.top().message;
      queue_.pop();
      auto& last = last_sequence_[static_cast<int>(m.kind) - 1];
      if (last.has_value() && m.sequence <= *last) {
        ++stats_.stale;
        continue;
      }
      last = m.sequence;
      ++stats_.delivered;
      out.push_back(m);
    }
    return out;
  }

 private:
  struct Pending {
    std::int64_t due;
    std::uint64_t order;
    LinkMessage message;
    bool operator>(const Pending& o) const { return due != o.due ? due > o.due : order > o.order; }
  };

  LinkConfig config_;
  SimRandom rng_;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<Pending>> queue_;
  std::uint64_t order_ = 0;
  std::array<std::optional<std::uint64_t>, kMessageKinds> last_sequence_{};
  LinkStats stats_;
};

/// Per-kind sequence counters for one sending node.
class Sequencer {
 public:
  std::uint64_t next(MessageKind k) { return ++seq_[static_cast<int>(k) - 1]; }

 private:
  std::array<std::uint64_t, kMessageKinds> seq_{};
};

inline std::string toHex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

inline std::vector<std::uint8_t> fromHex(std::string_view hex) {
  std::vector<std::uint8_t> out;
  int hi = -1;
  for (char c : hex) {
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else continue;
    if (hi < 0) {
      hi = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(hi * 16 + v));
      hi = -1;
    }
  }
  if (hi >= 0) throw std::invalid_argument("odd number of hex digits");
  return out;
}

}  // namespace teleop
