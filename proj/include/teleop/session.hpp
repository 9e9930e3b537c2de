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

// The two nodes of a run and the in-process driver.
//
// Both nodes tick at 1 kHz in simulated time. The operator ticks at k ms,
// the avatar half a tick later, so the strict order is
//
//   operator k, avatar k, operator k+1, ...
//
// A node only sees messages the link has released by its own tick time.
// With zero delay a goal sent at operator tick k is used at avatar tick k
// and telemetry sent at avatar tick k is used at operator tick k+1.

#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "teleop/avatar_controller.hpp"
#include "teleop/hand_channel.hpp"
#include "teleop/link.hpp"
#include "teleop/operator_controller.hpp"
#include "teleop/predictive_mirror.hpp"
#include "teleop/scenario.hpp"
#include "teleop/sim_world.hpp"
#include "teleop/wrench_calib.hpp"

namespace teleop {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::int64_t kTickMicros = 1000;
inline constexpr std::int64_t kAvatarPhaseMicros = 500;

/// CSV writer with a fixed number format, so equal runs give equal bytes.
class TraceWriter {
 public:
  TraceWriter() = default;
  explicit TraceWriter(const std::filesystem::path& path) { open(path); }

  void open(const std::filesystem::path& path) {
    out_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*out_) throw std::runtime_error("cannot write trace '" + path.string() + "'");
  }
  bool enabled() const { return out_ != nullptr; }

  void header(const std::vector<std::string>& columns) {
    if (!out_) return;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) line_ += ',';
      line_ += columns[i];
    }
    endRow();
  }

  TraceWriter& num(double v) {
    if (!out_) return *this;
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.12g", v);
    sep();
    line_.append(buf, n);
    return *this;
  }
  TraceWriter& integer(std::int64_t v) {
    if (!out_) return *this;
    sep();
    line_ += std::to_string(v);
    return *this;
  }
  TraceWriter& text(std::string_view s) {
    if (!out_) return *this;
    sep();
    line_ += s;
    return *this;
  }
  template <typename Derived>
  TraceWriter& vec(const Eigen::MatrixBase<Derived>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) num(v(i));
    return *this;
  }
  void endRow() {
    if (!out_) return;
    line_ += '\n';
    out_->write(line_.data(), static_cast<std::streamsize>(line_.size()));
    line_.clear();
    first_ = true;
  }
  void flush() {
    if (out_) out_->flush();
  }

  static std::vector<std::string> indexed(const std::string& prefix, int n, int first = 1) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + first));
    return out;
  }
  static std::vector<std::string> named(const std::string& prefix, std::initializer_list<const char*> names) {
    std::vector<std::string> out;
    for (const char* n : names) out.push_back(prefix + n);
    return out;
  }

 private:
  void sep() {
    if (!first_) line_ += ',';
    first_ = false;
  }

  std::unique_ptr<std::ofstream> out_;
  std::string line_;
  bool first_ = true;
};

inline void append(std::vector<std::string>& a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

inline std::string sha256File(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  return toHex(std::span<const std::uint8_t>(digest, len));
}

/// Operator-side mapping so that both hands start at the same goal: the
/// translation offset is applied in the torso frame, the orientation offset
/// in the hand frame.
inline std::pair<Pose6D, Pose6D> alignedGoalFrame(const Scenario& s) {
  const Pose6D op = s.operator_arm.mount * forwardKinematics(s.operator_arm, s.operator_start);
  const Pose6D av = s.avatar_arm.mount * forwardKinematics(s.avatar_arm, s.avatar_start);
  return {Pose6D(av.translation - op.translation), Pose6D(Vector3::Zero(), op.rotation.conjugate() * av.rotation)};
}

struct OperatorSummary {
  std::uint64_t ticks = 0;
  double rms_human_force = 0.0;   // N, norm of the torso-frame force
  double peak_human_force = 0.0;
  double rms_human_torque = 0.0;  // N·m
  double peak_human_torque = 0.0;
  std::uint64_t saturated_ticks = 0;
  std::uint64_t hold_ticks = 0;
  std::uint64_t singular_ticks = 0;
  std::uint64_t brake_engagements = 0;
  std::uint64_t limit_contacts = 0;
  double peak_tau_la = 0.0;
  double calibration_mass = 0.0;
  double calibration_rms_force = 0.0;
  std::uint64_t bytes_sent = 0;
  LinkStats incoming;
};

class OperatorNode {
 public:
  OperatorNode(const Scenario& s, LinkConfig incoming, const std::filesystem::path& trace = {})
      : scenario_(s),
        arm_(s.operator_arm, s.operator_start),
        sensor_(s.operator_sensor),
        mirror_(s.avatar_arm, s.avatar_start, s.mirror),
        intent_(arm_.handPose(), s.waypoints, s.human),
        link_(incoming),
        brakes_(s.brake_thresholds) {
    const CalibrationResult cal = selfCalibrate(s.operator_arm, sensor_, s.streamSeed(3), s.calibration_poses,
                                                s.calibration_readings);
    profile_ = cal.profile;
    summary_.calibration_mass = cal.profile.attached_mass;
    summary_.calibration_rms_force = cal.rms_force_residual;
    const auto [frame, offset] = s.auto_goal_frame ? alignedGoalFrame(s) : std::pair<Pose6D, Pose6D>{};
    controller_.emplace(s.operator_arm, s.operator_gains, frame, offset);
    // The mirror has not heard from the avatar yet; treat its start pose as fresh.
    JointState initial;
    initial.positions = s.avatar_start;
    mirror_.sync(initial);
    telemetry_ = initial;
    if (!trace.empty()) {
      trace_.open(trace);
      std::vector<std::string> cols{"tick", "t"};
      for (const char* p : {"q", "qd", "tau", "alpha", "dp", "dv", "tau_cmd", "tau_h", "tau_lo", "tau_la",
                            "tau_no", "tau_co", "q_hat", "v_hat", "telemetry_q"}) {
        append(cols, TraceWriter::indexed(p, kJointCount));
      }
      append(cols, {"telemetry_t", "hold", "singular", "saturated"});
      append(cols, TraceWriter::named("human_", {"fx", "fy", "fz", "tx", "ty", "tz"}));
      append(cols, TraceWriter::named("f_op_", {"fx", "fy", "fz", "tx", "ty", "tz"}));
      append(cols, TraceWriter::named("f_av_", {"fx", "fy", "fz", "tx", "ty", "tz"}));
      append(cols, TraceWriter::named("goal_", {"x", "y", "z", "qw", "qx", "qy", "qz"}));
      append(cols, TraceWriter::indexed("brake", kFingers));
      trace_.header(cols);
    }
  }

  void receive(std::span<const std::uint8_t> bytes) { link_.accept(bytes); }

  /// One control tick at k ms; returns the encoded outgoing messages.
  std::vector<Bytes> tick(std::uint64_t k) {
    const std::int64_t now_us = static_cast<std::int64_t>(k) * kTickMicros;
    const double now = static_cast<double>(now_us) * 1e-6;
    const double dt = arm_.dt();

    for (const LinkMessage& m : link_.poll(now_us)) {
      switch (m.kind) {
        case MessageKind::kAvatarTelemetry: {
          JointState measured;
          for (int i = 0; i < kJointCount; ++i) measured.positions(i) = m.payload[i];
          measured.timestamp = m.simTime();
          mirror_.sync(measured);
          telemetry_ = measured;
          break;
        }
        case MessageKind::kAvatarWrench:
          f_avatar_ = {Vector3(m.payload[0], m.payload[1], m.payload[2]),
                       Vector3(m.payload[3], m.payload[4], m.payload[5]), Frame::kHand, m.simTime()};
          break;
        case MessageKind::kHandFeedback: {
          HandFeedback fb;
          fb.count = scenario_.hand_mapping.actuators();
          std::copy_n(m.payload.begin(), kMaxActuators, fb.motor_currents.begin());
          const auto before = brakes_.flags();
          const auto after = brakes_.update(fb, scenario_.hand_mapping);
          for (int f = 0; f < kFingers; ++f) summary_.brake_engagements += (!before[f] && after[f]) ? 1 : 0;
          break;
        }
        default:
          break;
      }
    }

    JointState state = arm_.state();
    state.timestamp = now;
    const Pose6D hand = arm_.handPose();
    const Wrench human = intent_.push(hand, arm_.handTwist(), now);
    const Pose6D sensor_world = arm_.sensorPoseInWorld();
    const Wrench raw = sensor_.update(now, sensor_world.rotation, human, scenario_.operator_arm.sensor_to_hand);
    Wrench f_op = compensate(profile_, raw, sensor_world.rotation, scenario_.operator_arm.sensor_to_hand);

    const HandFrameCommand goal = controller_->handGoal(state.positions, now);
    mirror_.predict(goal, dt);
    const Jacobian j_o = bodyJacobian(scenario_.operator_arm, state.positions);
    const TorqueVector tau_la = mirror_.avatarLimitTorque(j_o, controller_->gains(), now, dt);
    if (!scenario_.assist) f_op = Wrench{};
    const OperatorOutput out = controller_->step(state, f_op, f_avatar_, tau_la);

    const Wrench human_torso = intent_.pushInTorso(hand, human);
    accumulate(human_torso, out, tau_la);
    if (trace_.enabled()) writeRow(k, now, state, out, human_torso, f_op, goal);

    arm_.integrate(out.torque_command, human);
    summary_.limit_contacts += arm_.anyLimitContact() ? 1 : 0;

    std::vector<Bytes> sent;
    sent.push_back(encode(handGoalMessage(seq_.next(MessageKind::kHandGoal), now_us, goal.pose)));
    if (scenario_.hand_mapping.actuators() > 0) {
      const HandCommand cmd = retarget(gloveFromClosure(scenario_.closureAt(now), now), scenario_.hand_mapping);
      sent.push_back(encode(vectorMessage(MessageKind::kHandCommand, seq_.next(MessageKind::kHandCommand), now_us,
                                          std::span<const double>(cmd.actuated_positions.data(), cmd.count))));
    }
    for (const auto& b : sent) summary_.bytes_sent += b.size();
    return sent;
  }

  OperatorSummary summary() const {
    OperatorSummary s = summary_;
    if (s.ticks) {
      s.rms_human_force = std::sqrt(force_sq_ / s.ticks);
      s.rms_human_torque = std::sqrt(torque_sq_ / s.ticks);
    }
    s.incoming = link_.stats();
    return s;
  }

  const SimArm& arm() const { return arm_; }
  const AvatarMirror& mirror() const { return mirror_; }
  const OperatorController& controller() const { return *controller_; }
  const CalibrationProfile& profile() const { return profile_; }
  void flush() { trace_.flush(); }

 private:
  void accumulate(const Wrench& human, const OperatorOutput& out, const TorqueVector& tau_la) {
    ++summary_.ticks;
    const double f = human.force.norm(), t = human.torque.norm();
    force_sq_ += f * f;
    torque_sq_ += t * t;
    summary_.peak_human_force = std::max(summary_.peak_human_force, f);
    summary_.peak_human_torque = std::max(summary_.peak_human_torque, t);
    summary_.saturated_ticks += out.saturated ? 1 : 0;
    summary_.hold_ticks += mirror_.hold() ? 1 : 0;
    summary_.singular_ticks += mirror_.diagnostics().singular ? 1 : 0;
    summary_.peak_tau_la = std::max(summary_.peak_tau_la, tau_la.cwiseAbs().maxCoeff());
  }

  void writeRow(std::uint64_t k, double now, const JointState& state, const OperatorOutput& out,
                const Wrench& human, const Wrench& f_op, const HandFrameCommand& goal) {
    const OperatorTerms& t = out.terms;
    trace_.integer(static_cast<std::int64_t>(k)).num(now);
    trace_.vec(state.positions).vec(state.velocities).vec(out.torque_command).vec(t.alpha);
    trace_.vec(t.distances.position).vec(t.distances.velocity);
    trace_.vec(t.cmd).vec(t.haptic).vec(t.limit_operator).vec(t.limit_avatar).vec(t.nullspace).vec(t.coriolis);
    trace_.vec(mirror_.qHat()).vec(mirror_.vHat()).vec(telemetry_.positions).num(telemetry_.timestamp);
    trace_.integer(mirror_.hold()).integer(mirror_.diagnostics().singular).integer(out.saturated);
    trace_.vec(human.stacked()).vec(f_op.stacked()).vec(f_avatar_.stacked());
    const Pose6D g = goal.pose.canonical();
    trace_.vec(g.translation).num(g.rotation.w()).num(g.rotation.x()).num(g.rotation.y()).num(g.rotation.z());
    for (bool b : brakes_.flags()) trace_.integer(b);
    trace_.endRow();
  }

  const Scenario& scenario_;
  SimArm arm_;
  VirtualSensor sensor_;
  CalibrationProfile profile_;
  AvatarMirror mirror_;
  OperatorIntent intent_;
  std::optional<OperatorController> controller_;
  DelayLine link_;
  BrakeLatch brakes_;
  Sequencer seq_;
  Wrench f_avatar_;
  JointState telemetry_;
  TraceWriter trace_;
  OperatorSummary summary_;
  double force_sq_ = 0.0;
  double torque_sq_ = 0.0;
};

struct AvatarSummary {
  std::uint64_t ticks = 0;
  std::uint64_t safety_stops = 0;
  std::uint64_t restarts = 0;
  std::vector<std::pair<double, AvatarMode>> transitions;
  AvatarMode final_mode = AvatarMode::kHolding;
  double final_pose_error = 0.0;  // m, translation
  double peak_torque = 0.0;
  std::uint64_t stale_goal_ticks = 0;
  std::uint64_t limit_contacts = 0;
  double calibration_mass = 0.0;
  std::uint64_t bytes_sent = 0;
  LinkStats incoming;
};

class AvatarNode {
 public:
  AvatarNode(const Scenario& s, LinkConfig incoming, const std::filesystem::path& trace = {})
      : scenario_(s),
        arm_(s.avatar_arm, s.avatar_start),
        sensor_(s.avatar_sensor),
        controller_(s.avatar_arm, s.avatar, s.avatar_start),
        link_(incoming),
        hand_(s.hand_mapping.actuators(), s.grasp_objects) {
    const CalibrationResult cal =
        selfCalibrate(s.avatar_arm, sensor_, s.streamSeed(4), s.calibration_poses, s.calibration_readings);
    profile_ = cal.profile;
    summary_.calibration_mass = cal.profile.attached_mass;
    summary_.transitions.emplace_back(0.0, AvatarMode::kHolding);
    if (!trace.empty()) {
      trace_.open(trace);
      std::vector<std::string> cols{"tick", "t", "mode", "progress"};
      for (const char* p : {"q", "qd", "tau", "tau_cmd", "tau_init", "tau_na", "tau_ca"}) {
        append(cols, TraceWriter::indexed(p, kJointCount));
      }
      append(cols, TraceWriter::named("dp_", {"x", "y", "z", "rx", "ry", "rz"}));
      append(cols, TraceWriter::named("cmd_", {"x", "y", "z", "qw", "qx", "qy", "qz"}));
      append(cols, TraceWriter::named("f_meas_", {"fx", "fy", "fz", "tx", "ty", "tz"}));
      append(cols, TraceWriter::named("f_ext_", {"fx", "fy", "fz", "tx", "ty", "tz"}));
      append(cols, {"goal_stale", "safety_stop"});
      append(cols, TraceWriter::indexed("finger", kMaxActuators));
      append(cols, TraceWriter::indexed("current", kMaxActuators));
      trace_.header(cols);
    }
  }

  void receive(std::span<const std::uint8_t> bytes) { link_.accept(bytes); }

  /// One control tick at k ms + 0.5 ms.
  std::vector<Bytes> tick(std::uint64_t k) {
    const std::int64_t now_us = static_cast<std::int64_t>(k) * kTickMicros + kAvatarPhaseMicros;
    const double now = static_cast<double>(now_us) * 1e-6;

    std::optional<HandFrameCommand> goal;
    for (const LinkMessage& m : link_.poll(now_us)) {
      if (m.kind == MessageKind::kHandGoal) {
        goal = HandFrameCommand{poseFromMessage(m), m.simTime()};
      } else if (m.kind == MessageKind::kHandCommand) {
        std::copy_n(m.payload.begin(), kMaxActuators, hand_command_.begin());
      }
    }

    JointState state = arm_.state();
    state.timestamp = now;
    const Wrench external = scheduledWrench(scenario_.avatar_wrench_events, now);
    const Pose6D sensor_world = arm_.sensorPoseInWorld();
    bool fresh = false;
    const Wrench raw =
        sensor_.update(now, sensor_world.rotation, external, scenario_.avatar_arm.sensor_to_hand, &fresh);
    const Wrench measured = compensate(profile_, raw, sensor_world.rotation, scenario_.avatar_arm.sensor_to_hand);

    const AvatarMode before = controller_.state().mode;
    const AvatarOutput out = controller_.step(state, goal, measured, now);
    record(now, before, out);
    if (trace_.enabled()) writeRow(k, now, state, out, measured, external);

    arm_.setBrakes(out.mode == AvatarMode::kStopped);
    arm_.integrate(out.torque, external);
    summary_.limit_contacts += arm_.anyLimitContact() ? 1 : 0;
    hand_.step(hand_command_, now, arm_.dt());

    std::vector<Bytes> sent;
    const std::span<const double> q(state.positions.data(), kJointCount);
    sent.push_back(encode(vectorMessage(MessageKind::kAvatarTelemetry, seq_.next(MessageKind::kAvatarTelemetry),
                                        now_us, q)));
    if (fresh) {
      const Vector6 w = measured.stacked();
      sent.push_back(encode(vectorMessage(MessageKind::kAvatarWrench, seq_.next(MessageKind::kAvatarWrench), now_us,
                                          std::span<const double>(w.data(), 6))));
    }
    if (hand_.actuators() > 0) {
      sent.push_back(encode(vectorMessage(MessageKind::kHandFeedback, seq_.next(MessageKind::kHandFeedback), now_us,
                                          std::span<const double>(hand_.currents().data(), hand_.actuators()))));
    }
    for (const auto& b : sent) summary_.bytes_sent += b.size();
    return sent;
  }

  AvatarSummary summary() const {
    AvatarSummary s = summary_;
    s.final_mode = controller_.state().mode;
    s.incoming = link_.stats();
    return s;
  }

  const SimArm& arm() const { return arm_; }
  const AvatarController& controller() const { return controller_; }
  void flush() { trace_.flush(); }

 private:
  void record(double now, AvatarMode before, const AvatarOutput& out) {
    ++summary_.ticks;
    if (out.safety_stop) ++summary_.safety_stops;
    if (before == AvatarMode::kStopped && out.mode != AvatarMode::kStopped) ++summary_.restarts;
    if (out.mode != summary_.transitions.back().second) summary_.transitions.emplace_back(now, out.mode);
    summary_.final_pose_error = out.pose_error.head<3>().norm();
    summary_.peak_torque = std::max(summary_.peak_torque, out.torque.cwiseAbs().maxCoeff());
    summary_.stale_goal_ticks += out.goal_stale ? 1 : 0;
  }

  void writeRow(std::uint64_t k, double now, const JointState& state, const AvatarOutput& out,
                const Wrench& measured, const Wrench& external) {
    trace_.integer(static_cast<std::int64_t>(k)).num(now).text(modeName(out.mode)).num(out.progress);
    trace_.vec(state.positions).vec(state.velocities).vec(out.torque);
    trace_.vec(out.terms.cmd).vec(out.terms.init).vec(out.terms.nullspace).vec(out.terms.coriolis);
    trace_.vec(out.pose_error);
    const Pose6D c = out.commanded_pose.canonical();
    trace_.vec(c.translation).num(c.rotation.w()).num(c.rotation.x()).num(c.rotation.y()).num(c.rotation.z());
    trace_.vec(measured.stacked()).vec(external.stacked());
    trace_.integer(out.goal_stale).integer(out.safety_stop);
    for (int i = 0; i < kMaxActuators; ++i) trace_.num(hand_.positions()[i]);
    for (int i = 0; i < kMaxActuators; ++i) trace_.num(hand_.currents()[i]);
    trace_.endRow();
  }

  const Scenario& scenario_;
  SimArm arm_;
  VirtualSensor sensor_;
  CalibrationProfile profile_;
  AvatarController controller_;
  DelayLine link_;
  SimHand hand_;
  std::array<double, kMaxActuators> hand_command_{};
  Sequencer seq_;
  TraceWriter trace_;
  AvatarSummary summary_;
};

struct RunOptions {
  std::filesystem::path operator_trace;
  std::filesystem::path avatar_trace;
  std::optional<std::uint64_t> ticks;  // defaults to the scenario duration
};

struct RunResult {
  OperatorSummary op;
  AvatarSummary av;
  std::optional<std::string> failure;  // e.g. a numerical blowup, with its tick
  std::uint64_t ticks_run = 0;
  double duration = 0.0;

  double bandwidth() const {
    return duration > 0.0 ? static_cast<double>(op.bytes_sent + av.bytes_sent) / duration : 0.0;
  }
};

/// Runs both nodes in one process over the in-memory loopback link.
inline RunResult runLoopback(const Scenario& s, const RunOptions& opt = {}) {
  OperatorNode op(s, s.back, opt.operator_trace);
  AvatarNode av(s, s.forward, opt.avatar_trace);
  RunResult r;
  const std::uint64_t n = opt.ticks.value_or(s.ticks());
  try {
    for (std::uint64_t k = 0; k < n; ++k) {
      for (const Bytes& b : op.tick(k)) av.receive(b);
      for (const Bytes& b : av.tick(k)) op.receive(b);
      r.ticks_run = k + 1;
    }
  } catch (const NumericalBlowup& e) {
    r.failure = std::string("NumericalBlowup: ") + e.what();
  }
  op.flush();
  av.flush();
  r.op = op.summary();
  r.av = av.summary();
  r.duration = static_cast<double>(r.ticks_run) * 1e-3;
  return r;
}

}  // namespace teleop
