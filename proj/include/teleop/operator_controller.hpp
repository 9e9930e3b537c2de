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

// Operator-station arm controller, one instance per arm, ticked at 1 kHz.
//
//   tau_o = alpha (.) tau_cmd + tau_h + tau_lo + tau_la + tau_no + tau_co
//
// tau_cmd    J^T F of the operator's own (compensated) wrist wrench: movement assist
// tau_h      J^T of the avatar wrench: haptic feedback, never scaled by alpha
// tau_lo     hyperbolic repulsion from this arm's position and velocity limits
// tau_la     avatar limit repulsion mapped in from the predictive mirror
// tau_no     nullspace pull toward the rest pose
// tau_co     velocity-product term of the simplified model
//
// alpha is per joint and drops linearly from 1 at d = t to 0 at d = t/2, so
// close to a limit the sensor-driven assist path can not re-excite the arm.
// J is the body Jacobian of the common hand frame throughout.

#pragma once

#include <cstdint>

#include "teleop/arm_model.hpp"
#include "teleop/kv_config.hpp"

namespace teleop {

inline constexpr double kDegree = M_PI / 180.0;

struct OperatorGains {
  double beta_p = 0.0;  // N·m·rad
  double beta_v = 0.0;  // N·m·rad/s
  double t_p = 10.0 * kDegree;
  double t_v = 40.0 * kDegree;
  double nullspace_gain = 2.0;  // N·m/rad
  double haptic_scale = 1.0;
  double assist_gain = 1.0;
  /// Each avoidance component saturates at this fraction of the torque limit.
  double avoidance_cap_fraction = 0.8;

  /// beta chosen so that the avoidance torque at d = t/2, which is beta/t,
  /// equals a quarter of the smallest joint torque limit of `model`.
  static OperatorGains defaultsFor(const ArmModel& model) {
    OperatorGains g;
    const double quarter = 0.25 * model.torque_limits.minCoeff();
    g.beta_p = quarter * g.t_p;
    g.beta_v = quarter * g.t_v;
    return g;
  }

  void validate() const {
    if (!(t_p > 0.0) || !(t_v > 0.0)) throw ConfigError("operator gains: thresholds must be > 0");
    if (beta_p < 0.0 || beta_v < 0.0) throw ConfigError("operator gains: beta must be >= 0");
    if (haptic_scale < 0.0 || haptic_scale > 1.0) throw ConfigError("operator gains: haptic_scale outside [0, 1]");
    if (nullspace_gain < 0.0) throw ConfigError("operator gains: nullspace_gain < 0");
    if (assist_gain < 0.0) throw ConfigError("operator gains: assist_gain < 0");
    if (avoidance_cap_fraction <= 0.0) throw ConfigError("operator gains: avoidance cap must be > 0");
  }
};

/// Per-joint distances to the nearer position limit and to the velocity
/// limit in the direction of motion, with the sign that points away from each.
struct LimitDistances {
  Vector7 position = Vector7::Zero();
  Vector7 velocity = Vector7::Zero();
  Vector7 position_push = Vector7::Zero();  // +1 toward the upper limit, -1 toward the lower
  Vector7 velocity_push = Vector7::Zero();  // opposes the current velocity, 0 at rest
};

inline LimitDistances limitDistances(const JointState& s, const ArmModel& m) {
  LimitDistances d;
  for (int i = 0; i < kJointCount; ++i) {
    const double to_lower = s.positions(i) - m.lower_limits(i);
    const double to_upper = m.upper_limits(i) - s.positions(i);
    d.position(i) = std::min(to_lower, to_upper);
    d.position_push(i) = to_lower <= to_upper ? 1.0 : -1.0;
    const double v = s.velocities(i);
    d.velocity(i) = m.velocity_limits(i) - std::abs(v);
    d.velocity_push(i) = v > 0.0 ? -1.0 : (v < 0.0 ? 1.0 : 0.0);
  }
  return d;
}

/// beta (1/d - 1/t) inside the threshold, 0 outside, saturated at `cap`.
inline double hyperbolicRepulsion(double d, double t, double beta, double cap) {
  if (d >= t) return 0.0;
  if (d <= 0.0) return cap;
  return std::min(beta * (1.0 / d - 1.0 / t), cap);
}

inline TorqueVector limitAvoidanceTorque(const JointState& s, const OperatorGains& g, const ArmModel& m) {
  const LimitDistances d = limitDistances(s, m);
  TorqueVector tau;
  for (int i = 0; i < kJointCount; ++i) {
    const double cap = g.avoidance_cap_fraction * m.torque_limits(i);
    tau(i) = d.position_push(i) * hyperbolicRepulsion(d.position(i), g.t_p, g.beta_p, cap) +
             d.velocity_push(i) * hyperbolicRepulsion(d.velocity(i), g.t_v, g.beta_v, cap);
  }
  return tau;
}

inline Vector7 alphaScale(const JointState& s, const OperatorGains& g, const ArmModel& m) {
  const LimitDistances d = limitDistances(s, m);
  Vector7 alpha;
  for (int i = 0; i < kJointCount; ++i) {
    const double closest = std::min(d.position(i) / g.t_p, d.velocity(i) / g.t_v);
    alpha(i) = std::clamp(2.0 * closest - 1.0, 0.0, 1.0);
  }
  return alpha;
}

/// J^T [force; torque] for a wrench expressed in the hand frame.
inline TorqueVector assistTorque(const Jacobian& j_body, const Wrench& f_hand) {
  return j_body.transpose() * f_hand.stacked();
}

/// Distance below which beta (1/d - 1/t) exceeds `opposing_torque`.
inline double repulsionDominanceDistance(double beta, double t, double opposing_torque) {
  return 1.0 / (opposing_torque / beta + 1.0 / t);
}

struct OperatorTerms {
  TorqueVector cmd = TorqueVector::Zero();
  TorqueVector haptic = TorqueVector::Zero();
  TorqueVector limit_operator = TorqueVector::Zero();
  TorqueVector limit_avatar = TorqueVector::Zero();
  TorqueVector nullspace = TorqueVector::Zero();
  TorqueVector coriolis = TorqueVector::Zero();
  Vector7 alpha = Vector7::Ones();
  LimitDistances distances;
};

struct OperatorOutput {
  TorqueVector torque_command = TorqueVector::Zero();
  HandFrameCommand hand_goal;
  OperatorTerms terms;
  bool saturated = false;
};

class OperatorController {
 public:
  /// The transmitted goal is goal_frame * (hand pose in the torso frame) *
  /// hand_offset, which lets two differently mounted arms start aligned.
  OperatorController(ArmModel model, OperatorGains gains, Pose6D goal_frame = {}, Pose6D hand_offset = {})
      : model_(std::move(model)), gains_(gains), goal_frame_(goal_frame), hand_offset_(hand_offset) {
    model_.validate();
    gains_.validate();
  }

  const ArmModel& model() const { return model_; }
  const OperatorGains& gains() const { return gains_; }
  OperatorGains& mutableGains() { return gains_; }
  std::uint64_t saturationCount() const { return saturation_count_; }

  HandFrameCommand handGoal(const Vector7& q, double t) const {
    return {goal_frame_ * model_.mount * forwardKinematics(model_, q) * hand_offset_, t};
  }

  OperatorOutput step(const JointState& state, const Wrench& f_operator, const Wrench& f_avatar,
                      const TorqueVector& tau_la) {
    OperatorOutput out;
    OperatorTerms& t = out.terms;
    const Jacobian j = bodyJacobian(model_, state.positions);
    t.distances = limitDistances(state, model_);
    t.alpha = alphaScale(state, gains_, model_);
    t.cmd = gains_.assist_gain * assistTorque(j, f_operator);
    t.haptic = gains_.haptic_scale * assistTorque(j, f_avatar);
    t.limit_operator = limitAvoidanceTorque(state, gains_, model_);
    t.limit_avatar = tau_la;
    t.nullspace = nullspaceTorque(model_, state, j, gains_.nullspace_gain);
    t.coriolis = coriolisTorque(model_, state);

    const TorqueVector raw = t.alpha.cwiseProduct(t.cmd) + t.haptic + t.limit_operator +
                             t.limit_avatar + t.nullspace + t.coriolis;
    out.torque_command = raw.cwiseMax(-model_.torque_limits).cwiseMin(model_.torque_limits);
    out.saturated = out.torque_command != raw;
    if (out.saturated) ++saturation_count_;
    out.hand_goal = handGoal(state.positions, state.timestamp);
    return out;
  }

 private:
  ArmModel model_;
  OperatorGains gains_;
  Pose6D goal_frame_;
  Pose6D hand_offset_;
  std::uint64_t saturation_count_ = 0;
};

}  // namespace teleop
