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

// Avatar-side Cartesian impedance controller with a small state machine:
//
//   HOLDING ──goal──> INITIALIZING ──fade done──> TRACKING
//      ^                    │                        │
//      └── goal lost (1 s) ─┴────────────────────────┘
//   any ──wrench over threshold──> STOPPED ──restart()──> HOLDING
//
// One impedance law tracks the commanded pose. During the fade the
// commanded pose is interpolated from where the arm was told to hold to the
// live goal, and the torque is reported split by fade progress into the
// initialization and command parts.

#pragma once

#include <optional>
#include <stdexcept>
#include <string_view>

#include "teleop/arm_model.hpp"
#include "teleop/kv_config.hpp"
#include "teleop/math.hpp"

namespace teleop {

class InvalidTransition : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct ImpedanceGains {
  Matrix6 stiffness = Matrix6::Zero();
  Matrix6 damping = Matrix6::Zero();

  /// Diagonal stiffness, damping critical against the hand-frame Cartesian
  /// mass of `model` at its rest pose.
  static ImpedanceGains critical(const ArmModel& model, double translational, double rotational) {
    ImpedanceGains g;
    g.stiffness.diagonal() << Vector3::Constant(translational), Vector3::Constant(rotational);
    const Jacobian j = zeroJacobian(model, model.nullspace_rest_pose);
    const Matrix6 lambda = pseudoInverse(
        Matrix6(j * model.effective_inertia.cwiseInverse().asDiagonal() * j.transpose()));
    for (int i = 0; i < 6; ++i) {
      g.damping(i, i) = 2.0 * std::sqrt(g.stiffness(i, i) * std::max(lambda(i, i), 0.0));
    }
    return g;
  }

  void validate() const {
    for (const Matrix6* m : {&stiffness, &damping}) {
      if (!m->isApprox(m->transpose(), 1e-12) && !m->isZero()) {
        throw ConfigError("impedance gains must be symmetric");
      }
      const Eigen::SelfAdjointEigenSolver<Matrix6> eig(*m);
      if (eig.eigenvalues().minCoeff() < -1e-9) throw ConfigError("impedance gains must be PSD");
    }
  }
};

/// tau = J^T (-S dp - D J qdot), with J the zero Jacobian and dp the base
/// frame pose error of the current hand pose relative to the goal.
inline TorqueVector impedanceTorque(const Jacobian& j_zero, const ImpedanceGains& g,
                                    const Vector6& pose_error, const Vector7& qdot) {
  return j_zero.transpose() * (-g.stiffness * pose_error - g.damping * (j_zero * qdot));
}

enum class AvatarMode : std::uint8_t { kHolding = 0, kInitializing = 1, kTracking = 2, kStopped = 3 };

inline std::string_view modeName(AvatarMode m) {
  switch (m) {
    case AvatarMode::kHolding: return "HOLDING";
    case AvatarMode::kInitializing: return "INITIALIZING";
    case AvatarMode::kTracking: return "TRACKING";
    case AvatarMode::kStopped: return "STOPPED";
  }
  return "?";
}

struct AvatarConfig {
  double translational_stiffness = 400.0;  // N/m
  double rotational_stiffness = 30.0;      // N·m/rad
  double fade_duration = 3.0;              // s; 0 jumps straight to TRACKING
  double goal_stale_after = 0.1;           // s, then hold the last commanded pose
  double goal_lost_after = 1.0;            // s, then back to HOLDING
  double force_threshold = 50.0;           // N
  double torque_threshold = 10.0;          // N·m
  bool auto_restart = true;
  double restart_delay = 1.0;  // s in STOPPED before an automatic restart
  double nullspace_gain = 2.0;
};

struct AvatarState {
  AvatarMode mode = AvatarMode::kHolding;
  double progress = 0.0;
  Pose6D hold_pose;
  Pose6D init_start_pose;
  double init_start_time = 0.0;
  double stopped_at = 0.0;
};

struct AvatarTerms {
  TorqueVector cmd = TorqueVector::Zero();
  TorqueVector init = TorqueVector::Zero();
  TorqueVector nullspace = TorqueVector::Zero();
  TorqueVector coriolis = TorqueVector::Zero();
};

struct AvatarOutput {
  TorqueVector torque = TorqueVector::Zero();
  AvatarTerms terms;
  AvatarMode mode = AvatarMode::kHolding;
  double progress = 0.0;
  Pose6D commanded_pose;  // base frame
  Vector6 pose_error = Vector6::Zero();
  bool goal_stale = false;
  bool safety_stop = false;  // true on the tick the stop latched
};

class AvatarController {
 public:
  AvatarController(ArmModel model, AvatarConfig config, const Vector7& q0)
      : AvatarController(model, config, q0,
                         ImpedanceGains::critical(model, config.translational_stiffness,
                                                  config.rotational_stiffness)) {}

  AvatarController(ArmModel model, AvatarConfig config, const Vector7& q0, ImpedanceGains gains)
      : model_(std::move(model)), config_(config), gains_(gains), mount_inverse_(model_.mount.inverse()) {
    model_.validate();
    gains_.validate();
    state_.hold_pose = forwardKinematics(model_, q0);
    commanded_ = state_.hold_pose;
  }

  const ArmModel& model() const { return model_; }
  const AvatarConfig& config() const { return config_; }
  const ImpedanceGains& gains() const { return gains_; }
  const AvatarState& state() const { return state_; }

  /// Leaves STOPPED for HOLDING at `current_q`'s hand pose.
  void restart(const Vector7& current_q) {
    if (state_.mode != AvatarMode::kStopped) {
      throw InvalidTransition(std::string("restart from ") + std::string(modeName(state_.mode)));
    }
    state_.mode = AvatarMode::kHolding;
    state_.progress = 0.0;
    state_.hold_pose = forwardKinematics(model_, current_q);
    commanded_ = state_.hold_pose;
    goal_.reset();
  }

  /// One control tick. `goal` is a newly received hand goal in the torso
  /// frame, if any arrived this tick; `wrench` is the measured hand wrench.
  AvatarOutput step(const JointState& s, const std::optional<HandFrameCommand>& goal, const Wrench& wrench,
                    double now) {
    AvatarOutput out;
    if (goal) {
      goal_ = mount_inverse_ * goal->pose;
      goal_received_at_ = now;
    }

    if (state_.mode != AvatarMode::kStopped &&
        (wrench.force.norm() > config_.force_threshold || wrench.torque.norm() > config_.torque_threshold)) {
      state_.mode = AvatarMode::kStopped;
      state_.stopped_at = now;
      out.safety_stop = true;
    }
    if (state_.mode == AvatarMode::kStopped) {
      if (!out.safety_stop && config_.auto_restart && now - state_.stopped_at >= config_.restart_delay &&
          wrench.force.norm() <= config_.force_threshold && wrench.torque.norm() <= config_.torque_threshold) {
        restart(s.positions);
      } else {
        out.mode = AvatarMode::kStopped;
        out.commanded_pose = commanded_;
        return out;
      }
    }

    const double age = goal_ ? now - goal_received_at_ : 0.0;
    out.goal_stale = goal_ && age > config_.goal_stale_after;
    if (goal_ && age > config_.goal_lost_after && state_.mode != AvatarMode::kHolding) {
      state_.mode = AvatarMode::kHolding;
      state_.hold_pose = commanded_;
      state_.progress = 0.0;
      goal_.reset();
    }

    if (state_.mode == AvatarMode::kHolding && goal_ && goal) {
      state_.mode = AvatarMode::kInitializing;
      state_.init_start_pose = commanded_;
      state_.init_start_time = now;
      state_.progress = 0.0;
    }

    switch (state_.mode) {
      case AvatarMode::kHolding:
        commanded_ = state_.hold_pose;
        state_.progress = 0.0;
        break;
      case AvatarMode::kInitializing: {
        const double p = config_.fade_duration > 0.0 ? (now - state_.init_start_time) / config_.fade_duration : 1.0;
        state_.progress = std::clamp(std::max(p, state_.progress), 0.0, 1.0);
        commanded_ = interpolate(state_.init_start_pose, *goal_, state_.progress);
        if (state_.progress >= 1.0) state_.mode = AvatarMode::kTracking;
        break;
      }
      case AvatarMode::kTracking:
        commanded_ = *goal_;
        state_.progress = 1.0;
        break;
      case AvatarMode::kStopped:
        break;
    }

    const Jacobian j = zeroJacobian(model_, s.positions);
    out.pose_error = poseError(forwardKinematics(model_, s.positions), commanded_);
    const TorqueVector imp = impedanceTorque(j, gains_, out.pose_error, s.velocities);
    out.terms.cmd = state_.progress * imp;
    out.terms.init = imp - out.terms.cmd;
    out.terms.nullspace = nullspaceTorque(model_, s, j, config_.nullspace_gain);
    out.terms.coriolis = coriolisTorque(model_, s);
    const TorqueVector raw = out.terms.cmd + out.terms.init + out.terms.nullspace + out.terms.coriolis;
    out.torque = raw.cwiseMax(-model_.torque_limits).cwiseMin(model_.torque_limits);
    out.mode = state_.mode;
    out.progress = state_.progress;
    out.commanded_pose = commanded_;
    return out;
  }

 private:
  ArmModel model_;
  AvatarConfig config_;
  ImpedanceGains gains_;
  Pose6D mount_inverse_;
  AvatarState state_;
  Pose6D commanded_;
  std::optional<Pose6D> goal_;
  double goal_received_at_ = 0.0;
};

}  // namespace teleop
