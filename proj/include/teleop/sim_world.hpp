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

// Fixed-step simulation used in place of hardware.
//
// Arms follow M qdd = tau + J^T F_ext - B qd with the diagonal M and B of the
// arm description. Gravity torques are not simulated and no controller adds
// them: both are assumed handled below the torque interface. The wrist
// sensor does see the weight of its attached load.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "teleop/arm_model.hpp"
#include "teleop/wrench_calib.hpp"

namespace teleop {

class NumericalBlowup : public std::runtime_error {
 public:
  NumericalBlowup(const std::string& what, std::uint64_t tick) : std::runtime_error(what), tick_(tick) {}
  std::uint64_t tick() const { return tick_; }

 private:
  std::uint64_t tick_;
};

/// Portable seeded sources: the standard distributions are not specified
/// bit-for-bit across library implementations.
class SimRandom {
 public:
  explicit SimRandom(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = uniform();
    while (u <= 0.0) u = uniform();
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    spare_ = r * std::sin(2.0 * M_PI * v);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * v);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct WrenchEvent {
  double start = 0.0;
  double end = 0.0;
  Wrench wrench;  // hand frame
};

/// Sum of all scheduled wrenches active at t (start inclusive, end exclusive).
inline Wrench scheduledWrench(const std::vector<WrenchEvent>& events, double t) {
  Wrench w;
  for (const auto& e : events) {
    if (t >= e.start && t < e.end) {
      w.force += e.wrench.force;
      w.torque += e.wrench.torque;
    }
  }
  w.timestamp = t;
  return w;
}

class SimArm {
 public:
  SimArm(ArmModel model, const Vector7& q0, double dt = 1e-3) : model_(std::move(model)), dt_(dt) {
    model_.validate();
    state_.positions = model_.clampToLimits(q0);
  }

  const ArmModel& model() const { return model_; }
  const JointState& state() const { return state_; }
  double dt() const { return dt_; }
  std::uint64_t tick() const { return tick_; }
  /// Joints that touched a position limit during the last step.
  const std::array<bool, kJointCount>& limitContact() const { return contact_; }
  bool anyLimitContact() const {
    return std::any_of(contact_.begin(), contact_.end(), [](bool b) { return b; });
  }

  Pose6D handPose() const { return model_.mount * forwardKinematics(model_, state_.positions); }
  Pose6D sensorPoseInWorld() const { return model_.mount * sensorPose(model_, state_.positions); }

  /// Hand twist [v; w] in the torso frame.
  Vector6 handTwist() const {
    const Vector6 local = zeroJacobian(model_, state_.positions) * state_.velocities;
    const Matrix3 r = model_.mount.rotationMatrix();
    Vector6 out;
    out << r * local.head<3>(), r * local.tail<3>();
    return out;
  }

  double kineticEnergy() const {
    return 0.5 * state_.velocities.dot(model_.effective_inertia.cwiseProduct(state_.velocities));
  }

  /// Holding brakes. While engaged the joints do not move, whatever the load.
  void setBrakes(bool engaged) {
    brakes_ = engaged;
    if (engaged) state_.velocities.setZero();
  }
  bool brakes() const { return brakes_; }

  /// Semi-implicit Euler step. `external` is a hand-frame wrench acting on the arm.
  void integrate(const TorqueVector& tau, const Wrench& external = {}) {
    if (brakes_) {
      contact_.fill(false);
      ++tick_;
      state_.timestamp = static_cast<double>(tick_) * dt_;
      return;
    }
    TorqueVector total = tau;
    if (external.force.squaredNorm() + external.torque.squaredNorm() > 0.0) {
      total += bodyJacobian(model_, state_.positions).transpose() * external.stacked();
    }
    const Vector7 acc = (total - model_.viscous_damping.cwiseProduct(state_.velocities))
                            .cwiseQuotient(model_.effective_inertia);
    state_.velocities += dt_ * acc;
    for (int i = 0; i < kJointCount; ++i) {
      if (!std::isfinite(state_.velocities(i)) || std::abs(state_.velocities(i)) > kBlowupVelocity) {
        throw NumericalBlowup(model_.name + ": joint " + std::to_string(i + 1) + " velocity exceeded " +
                                  std::to_string(static_cast<int>(kBlowupVelocity)) + " rad/s at tick " + std::to_string(tick_),
                              tick_);
      }
    }
    state_.positions += dt_ * state_.velocities;
    for (int i = 0; i < kJointCount; ++i) {
      contact_[i] = false;
      if (state_.positions(i) < model_.lower_limits(i) || state_.positions(i) > model_.upper_limits(i)) {
        state_.positions(i) = std::clamp(state_.positions(i), model_.lower_limits(i), model_.upper_limits(i));
        state_.velocities(i) = 0.0;
        contact_[i] = true;
      }
    }
    ++tick_;
    state_.timestamp = static_cast<double>(tick_) * dt_;
  }

  static constexpr double kBlowupVelocity = 100.0;

 private:
  ArmModel model_;
  double dt_;
  JointState state_;
  std::uint64_t tick_ = 0;
  std::array<bool, kJointCount> contact_{};
  bool brakes_ = false;
};

struct SensorConfig {
  CalibrationProfile truth;  // actual bias and attached load
  double force_noise = 0.0;   // N, per axis standard deviation
  double torque_noise = 0.0;  // N·m
  double sample_rate = 500.0;
  double cutoff = 15.0;
  std::uint64_t seed = 1;
};

/// Wrist F/T sensor: samples at its own rate, holds between samples, and
/// low-pass filters on the device.
class VirtualSensor {
 public:
  explicit VirtualSensor(SensorConfig config)
      : config_(config), rng_(config.seed), period_(1.0 / config.sample_rate),
        factor_(lowPassFactor(config.cutoff, period_)) {}

  const SensorConfig& config() const { return config_; }

  /// Raw unfiltered reading in the sensor frame.
  Wrench rawReading(const Quaternion& sensor_orientation, const Wrench& external_hand,
                    const Pose6D& sensor_to_hand) {
    Wrench w = staticReading(config_.truth, gravityInSensor(sensor_orientation));
    const Wrench ext = handToSensor(external_hand, sensor_to_hand);
    w.force += ext.force;
    w.torque += ext.torque;
    if (config_.force_noise > 0.0 || config_.torque_noise > 0.0) {
      for (int i = 0; i < 3; ++i) w.force(i) += config_.force_noise * rng_.gaussian();
      for (int i = 0; i < 3; ++i) w.torque(i) += config_.torque_noise * rng_.gaussian();
    }
    return w;
  }

  /// Called every control tick; returns the current (held, filtered) output
  /// and whether a fresh sample was taken at `t`.
  Wrench update(double t, const Quaternion& sensor_orientation, const Wrench& external_hand,
                const Pose6D& sensor_to_hand, bool* fresh = nullptr) {
    const bool due = !primed_ || t + 1e-9 >= next_sample_;
    if (due) {
      const Wrench raw = rawReading(sensor_orientation, external_hand, sensor_to_hand);
      if (!primed_) {
        filtered_ = raw.stacked();
        primed_ = true;
        next_sample_ = t;
      } else {
        filtered_ += factor_ * (raw.stacked() - filtered_);
      }
      next_sample_ += period_;
      last_sample_time_ = t;
    }
    if (fresh) *fresh = due;
    return Wrench::fromStacked(filtered_, Frame::kSensor, last_sample_time_);
  }

  /// Averaged static reading, as taken during calibration.
  CalibrationSample staticSample(const Quaternion& sensor_orientation, int readings) {
    Vector6 sum = Vector6::Zero();
    for (int i = 0; i < readings; ++i) sum += rawReading(sensor_orientation, Wrench{}, Pose6D{}).stacked();
    CalibrationSample s;
    s.gravity_in_sensor = gravityInSensor(sensor_orientation);
    s.mean_wrench = Wrench::fromStacked(sum / readings, Frame::kSensor);
    return s;
  }

 private:
  SensorConfig config_;
  SimRandom rng_;
  double period_;
  double factor_;
  bool primed_ = false;
  double next_sample_ = 0.0;
  double last_sample_time_ = 0.0;
  Vector6 filtered_ = Vector6::Zero();
};

/// Startup calibration: hold `poses` random in-limit configurations and
/// average `readings` samples at each.
inline CalibrationResult selfCalibrate(const ArmModel& model, VirtualSensor& sensor, std::uint64_t seed,
                                       int poses = 20, int readings = 100) {
  SimRandom rng(seed);
  std::vector<CalibrationSample> samples;
  for (int k = 0; k < poses; ++k) {
    Vector7 q;
    for (int i = 0; i < kJointCount; ++i) {
      q(i) = model.lower_limits(i) + rng.uniform() * (model.upper_limits(i) - model.lower_limits(i));
    }
    const Quaternion o = (model.mount * sensorPose(model, q)).rotation;
    samples.push_back(sensor.staticSample(o, readings));
  }
  return calibrate(samples);
}

struct IntentWaypoint {
  double time = 0.0;
  Vector3 offset = Vector3::Zero();  // m, torso frame, relative to the start pose
  Vector3 rpy = Vector3::Zero();     // rad, applied on top of the start orientation
};

struct HumanConfig {
  double translational_stiffness = 1000.0;  // N/m
  double rotational_stiffness = 20.0;       // N·m/rad
  double translational_damping = 40.0;      // N·s/m
  double rotational_damping = 1.0;          // N·m·s/rad
  double force_limit = 30.0;
  double torque_limit = 5.0;
};

/// Scripted operator: a smooth hand trajectory and a spring-damper "human"
/// pulling the operator hand along it.
class OperatorIntent {
 public:
  OperatorIntent(const Pose6D& start, std::vector<IntentWaypoint> waypoints, HumanConfig human = {})
      : start_(start), waypoints_(std::move(waypoints)), human_(human) {
    if (waypoints_.empty() || waypoints_.front().time > 0.0) waypoints_.insert(waypoints_.begin(), IntentWaypoint{});
    for (std::size_t i = 1; i < waypoints_.size(); ++i) {
      if (!(waypoints_[i].time > waypoints_[i - 1].time)) {
        throw std::invalid_argument("intent waypoints must have increasing times");
      }
    }
  }

  const HumanConfig& human() const { return human_; }
  const Pose6D& start() const { return start_; }

  /// Curve pose (torso frame) and its twist [v; w].
  std::pair<Pose6D, Vector6> curve(double t) const {
    std::size_t k = 0;
    while (k + 1 < waypoints_.size() && t >= waypoints_[k + 1].time) ++k;
    const IntentWaypoint& a = waypoints_[k];
    if (k + 1 == waypoints_.size()) return {poseAt(a.offset, a.rpy), Vector6::Zero()};
    const IntentWaypoint& b = waypoints_[k + 1];
    const double span = b.time - a.time;
    const double u = std::clamp((t - a.time) / span, 0.0, 1.0);
    const double s = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
    const double ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / span;
    const Vector3 off = a.offset + s * (b.offset - a.offset);
    const Vector3 rpy = a.rpy + s * (b.rpy - a.rpy);
    Vector6 twist = Vector6::Zero();
    twist.head<3>() = ds * (b.offset - a.offset);
    // Small-angle rate of the orientation offset; adequate for a feed-forward damping term.
    twist.tail<3>() = ds * (b.rpy - a.rpy);
    return {poseAt(off, rpy), twist};
  }

  /// Hand-frame wrench the scripted human applies at `hand` (torso frame pose).
  Wrench push(const Pose6D& hand, const Vector6& hand_twist, double t) const {
    const auto [goal, goal_twist] = curve(t);
    const Vector6 e = poseError(goal, hand);  // points from the hand toward the curve
    Vector3 f = human_.translational_stiffness * e.head<3>() +
                human_.translational_damping * (goal_twist.head<3>() - hand_twist.head<3>());
    Vector3 tau = human_.rotational_stiffness * e.tail<3>() +
                  human_.rotational_damping * (goal_twist.tail<3>() - hand_twist.tail<3>());
    clampNorm(f, human_.force_limit);
    clampNorm(tau, human_.torque_limit);
    const Quaternion to_hand = hand.rotation.conjugate();
    return {to_hand * f, to_hand * tau, Frame::kHand, t};
  }

  /// Same wrench expressed in the torso frame, for reporting.
  Wrench pushInTorso(const Pose6D& hand, const Wrench& hand_frame) const {
    return {hand.rotation * hand_frame.force, hand.rotation * hand_frame.torque, Frame::kBase,
            hand_frame.timestamp};
  }

 private:
  Pose6D poseAt(const Vector3& offset, const Vector3& rpy) const {
    return {start_.translation + offset, (fromRpy(rpy) * start_.rotation).normalized()};
  }

  Pose6D start_;
  std::vector<IntentWaypoint> waypoints_;
  HumanConfig human_;
};

struct GraspObject {
  double start = 0.0;
  double end = 0.0;
  double block = 0.5;  // normalized actuator position where the fingers meet the object
};

/// Robot hand whose fingers follow the command at a bounded rate and stop
/// at a grasped object; motor current grows with the blocked command.
class SimHand {
 public:
  SimHand(int actuators, std::vector<GraspObject> objects, double amps_per_unit = 2.0, double rate = 2.0)
      : n_(actuators), objects_(std::move(objects)), amps_per_unit_(amps_per_unit), rate_(rate) {}

  int actuators() const { return n_; }
  const std::array<double, 9>& positions() const { return position_; }
  const std::array<double, 9>& currents() const { return current_; }

  void step(const std::array<double, 9>& command, double t, double dt) {
    double block = 1.0;
    for (const auto& o : objects_) {
      if (t >= o.start && t < o.end) block = std::min(block, o.block);
    }
    for (int k = 0; k < n_; ++k) {
      const double target = std::clamp(command[k], 0.0, 1.0);
      const double step = std::clamp(target - position_[k], -rate_ * dt, rate_ * dt);
      position_[k] = std::min(position_[k] + step, block);
      current_[k] = amps_per_unit_ * std::max(0.0, target - position_[k]) + kIdleCurrent;
    }
  }

  static constexpr double kIdleCurrent = 0.05;

 private:
  int n_;
  std::vector<GraspObject> objects_;
  double amps_per_unit_;
  double rate_;
  std::array<double, 9> position_{};
  std::array<double, 9> current_{};
};

}  // namespace teleop
