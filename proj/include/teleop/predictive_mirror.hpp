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

// Kinematic model of the avatar arm kept on the operator side.
//
// Each tick the outgoing hand goal is pushed through IK from the previous
// prediction, so the avatar's limit field can be evaluated without waiting
// for telemetry. Telemetry only re-anchors the prediction (blended), which
// keeps redundant joints from drifting away from the real arm.

#pragma once

#include <cmath>

#include "teleop/arm_model.hpp"
#include "teleop/operator_controller.hpp"

namespace teleop {

struct MirrorConfig {
  double lp_cutoff = 15.0;       // Hz, v_hat filter
  double anchor_gain = 0.2;      // fraction of the telemetry error removed per sync
  double stale_timeout = 0.5;    // s
  double slew_rate = 50.0;       // N·m/s per joint on tau_la
  IkOptions ik;
};

struct MirrorDiagnostics {
  TorqueVector model_torque = TorqueVector::Zero();  // avatar joint space
  Vector6 hand_wrench = Vector6::Zero();             // (J_A^T)^+ model_torque
  double min_singular_value = 0.0;
  bool singular = false;
  bool hold = false;
  bool ik_failed = false;
};

class AvatarMirror {
 public:
  AvatarMirror(ArmModel avatar, const Vector7& q0, MirrorConfig config = {})
      : model_(std::move(avatar)), config_(config), mount_inverse_(model_.mount.inverse()) {
    model_.validate();
    q_hat_ = model_.clampToLimits(q0);
    q_prev_ = q_hat_;
    last_measured_.positions = q_hat_;
  }

  const ArmModel& model() const { return model_; }
  const MirrorConfig& config() const { return config_; }
  const Vector7& qHat() const { return q_hat_; }
  const Vector7& vHat() const { return v_hat_; }
  const JointState& lastMeasured() const { return last_measured_; }
  const MirrorDiagnostics& diagnostics() const { return diag_; }
  const TorqueVector& lastTorque() const { return tau_la_; }
  bool hold() const { return diag_.hold; }

  void sync(const JointState& measured) {
    last_measured_ = measured;
    q_hat_ += config_.anchor_gain * (measured.positions - q_hat_);
  }

  /// Advances q_hat one tick toward `goal` (torso frame) and filters the
  /// resulting joint velocity. The velocity is differenced between successive
  /// predictions so the anchor correction does not show up as motion.
  void predict(const HandFrameCommand& goal, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("predict: dt must be > 0");
    const Pose6D target = mount_inverse_ * goal.pose;
    const IkResult ik = dampedLeastSquaresIk(model_, q_hat_, target, config_.ik);
    diag_.ik_failed = !ik.converged;
    Vector7 raw_velocity = Vector7::Zero();
    if (ik.converged) {
      raw_velocity = (ik.q - q_prev_) / dt;
      q_hat_ = ik.q;
    }
    q_prev_ = q_hat_;
    v_hat_ += lowPassFactor(config_.lp_cutoff, dt) * (raw_velocity - v_hat_);
  }

  /// Avatar limit field on (q_hat, v_hat), mapped through the common hand
  /// frame into operator joint space and slew limited. Zero while the last
  /// telemetry is older than the stale timeout.
  TorqueVector avatarLimitTorque(const Jacobian& j_operator, const OperatorGains& gains, double now,
                                 double dt) {
    diag_.hold = now - last_measured_.timestamp > config_.stale_timeout;
    if (diag_.hold) {
      tau_la_.setZero();
      diag_.model_torque.setZero();
      diag_.hand_wrench.setZero();
      return tau_la_;
    }
    JointState predicted;
    predicted.positions = q_hat_;
    predicted.velocities = v_hat_;
    diag_.model_torque = limitAvoidanceTorque(predicted, gains, model_);
    const Eigen::Matrix<double, kJointCount, 6> ja_t = bodyJacobian(model_, q_hat_).transpose();
    const Eigen::Matrix<double, 6, kJointCount> ja_t_pinv = pseudoInverse(ja_t, &diag_.min_singular_value);
    diag_.singular = diag_.min_singular_value < kSingularValueCutoff;
    diag_.hand_wrench = ja_t_pinv * diag_.model_torque;
    const TorqueVector target = j_operator.transpose() * diag_.hand_wrench;
    const double step = config_.slew_rate * dt;
    tau_la_ += (target - tau_la_).cwiseMax(-step).cwiseMin(step);
    return tau_la_;
  }

 private:
  ArmModel model_;
  MirrorConfig config_;
  Pose6D mount_inverse_;
  Vector7 q_hat_ = Vector7::Zero();
  Vector7 v_hat_ = Vector7::Zero();
  Vector7 q_prev_ = Vector7::Zero();
  JointState last_measured_;
  TorqueVector tau_la_ = TorqueVector::Zero();
  MirrorDiagnostics diag_;
};

}  // namespace teleop
