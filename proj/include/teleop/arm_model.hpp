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

// Kinematics, differential kinematics and the simplified dynamics terms of a
// 7-DoF serial arm.
//
// The chain is a table of per-joint fixed offsets followed by a revolute
// rotation about a unit axis. After joint 7 come two more fixed transforms:
// flange -> F/T sensor and sensor -> common hand frame (palm centre). All
// kinematic functions report the hand frame relative to the arm base; the
// `mount` pose places the base in the shared torso frame and is applied by
// callers.
//
// Dynamics are deliberately reduced to a constant diagonal inertia plus
// viscous joint damping. Gravity does not appear anywhere: the simulator
// applies no gravity torque and the controllers add none, standing in for a
// vendor interface that compensates gravity perfectly.

#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "teleop/kv_config.hpp"
#include "teleop/math.hpp"
#include "teleop/types.hpp"

namespace teleop {

struct JointSpec {
  Pose6D origin;                   // fixed transform from the previous frame
  Vector3 axis = Vector3::UnitZ();  // rotation axis in the frame after `origin`
};

struct ArmModel {
  std::string name = "arm";
  std::array<JointSpec, kJointCount> joints{};
  Pose6D flange_to_sensor;
  Pose6D sensor_to_hand;
  Pose6D mount;

  Vector7 lower_limits = Vector7::Constant(-M_PI);
  Vector7 upper_limits = Vector7::Constant(M_PI);
  Vector7 velocity_limits = Vector7::Constant(2.0);
  Vector7 torque_limits = Vector7::Constant(50.0);
  Vector7 nullspace_rest_pose = Vector7::Zero();
  Vector7 effective_inertia = Vector7::Constant(0.5);
  Vector7 viscous_damping = Vector7::Constant(0.5);

  /// Damping ratio of the nullspace spring; see nullspaceTorque.
  double nullspace_damping_ratio = 1.0;
  /// Fraction of viscous_damping fed forward as the velocity-product term.
  double coriolis_compensation = 0.5;

  void validate() const {
    for (int i = 0; i < kJointCount; ++i) {
      const std::string j = name + " joint" + std::to_string(i + 1);
      if (!(lower_limits(i) < upper_limits(i))) throw ConfigError(j + ": lower limit >= upper limit");
      if (!(velocity_limits(i) > 0.0)) throw ConfigError(j + ": velocity limit must be > 0");
      if (!(torque_limits(i) > 0.0)) throw ConfigError(j + ": torque limit must be > 0");
      if (!(effective_inertia(i) > 0.0)) throw ConfigError(j + ": inertia must be > 0");
      if (!(viscous_damping(i) > 0.0)) throw ConfigError(j + ": damping must be > 0");
      if (!(nullspace_rest_pose(i) > lower_limits(i) && nullspace_rest_pose(i) < upper_limits(i))) {
        throw ConfigError(j + ": rest pose outside position limits");
      }
      if (std::abs(joints[i].axis.norm() - 1.0) > 1e-9) throw ConfigError(j + ": axis not unit length");
    }
    if (nullspace_damping_ratio < 0.0) throw ConfigError(name + ": nullspace_damping_ratio < 0");
    if (coriolis_compensation < 0.0 || coriolis_compensation > 1.0) {
      throw ConfigError(name + ": coriolis_compensation outside [0, 1]");
    }
  }

  Vector7 clampToLimits(const Vector7& q) const {
    return q.cwiseMax(lower_limits).cwiseMin(upper_limits);
  }

  bool withinLimits(const Vector7& q) const {
    return (q.array() >= lower_limits.array()).all() && (q.array() <= upper_limits.array()).all();
  }

  /// Upper bound on the base-to-hand distance (sum of all offset lengths).
  double reachBound() const {
    double r = flange_to_sensor.translation.norm() + sensor_to_hand.translation.norm();
    for (const auto& j : joints) r += j.origin.translation.norm();
    return r;
  }

  static ArmModel fromConfig(const KeyValueFile& kv);
  static ArmModel load(const std::filesystem::path& path) { return fromConfig(KeyValueFile::load(path)); }
};

namespace detail {

inline Pose6D poseFromNumbers(const std::vector<double>& v) {
  return {Vector3(v[0], v[1], v[2]), fromRpy(v[3], v[4], v[5])};
}

}  // namespace detail

inline ArmModel ArmModel::fromConfig(const KeyValueFile& kv) {
  ArmModel m;
  m.name = kv.string("name", std::string("arm"));
  for (int i = 0; i < kJointCount; ++i) {
    const std::string p = "joint" + std::to_string(i + 1) + ".";
    m.joints[i].origin = detail::poseFromNumbers(kv.numbers(p + "origin", 6));
    const auto axis = kv.numbers(p + "axis", 3);
    const Vector3 a(axis[0], axis[1], axis[2]);
    if (a.norm() < 1e-9) throw ConfigError(kv.where(kv.require(p + "axis").line) + ": zero axis");
    m.joints[i].axis = a.normalized();
    const auto lim = kv.numbers(p + "position_limits", 2);
    m.lower_limits(i) = lim[0];
    m.upper_limits(i) = lim[1];
    m.velocity_limits(i) = kv.number(p + "velocity_limit");
    m.torque_limits(i) = kv.number(p + "torque_limit");
    m.effective_inertia(i) = kv.number(p + "inertia");
    m.viscous_damping(i) = kv.number(p + "damping");
  }
  if (auto v = kv.optionalNumbers("sensor.origin", 6)) m.flange_to_sensor = detail::poseFromNumbers(*v);
  if (auto v = kv.optionalNumbers("hand.origin", 6)) m.sensor_to_hand = detail::poseFromNumbers(*v);
  if (auto v = kv.optionalNumbers("mount", 6)) m.mount = detail::poseFromNumbers(*v);
  const auto rest = kv.numbers("rest_pose", kJointCount);
  for (int i = 0; i < kJointCount; ++i) m.nullspace_rest_pose(i) = rest[i];
  m.nullspace_damping_ratio = kv.number("nullspace_damping_ratio", 1.0);
  m.coriolis_compensation = kv.number("coriolis_compensation", 0.5);
  kv.rejectUnused();
  m.validate();
  return m;
}

/// Joint axes and origins in the base frame, plus the hand pose.
struct ChainFrames {
  std::array<Vector3, kJointCount> axes;
  std::array<Vector3, kJointCount> origins;
  Pose6D hand;
};

inline ChainFrames chainFrames(const ArmModel& model, const Vector7& q) {
  ChainFrames f;
  Pose6D t;
  for (int i = 0; i < kJointCount; ++i) {
    t = t * model.joints[i].origin;
    f.axes[i] = t.rotation * model.joints[i].axis;
    f.origins[i] = t.translation;
    t = t * Pose6D(Vector3::Zero(), Quaternion(Eigen::AngleAxisd(q(i), model.joints[i].axis)));
  }
  f.hand = t * model.flange_to_sensor * model.sensor_to_hand;
  return f;
}

/// Pose of the common hand frame relative to the arm base. Limits are not enforced.
inline Pose6D forwardKinematics(const ArmModel& model, const Vector7& q) {
  return chainFrames(model, q).hand;
}

/// Pose of the F/T sensor frame relative to the arm base.
inline Pose6D sensorPose(const ArmModel& model, const Vector7& q) {
  return forwardKinematics(model, q) * model.sensor_to_hand.inverse();
}

/// Maps joint velocities to the hand twist [v; w] expressed in the base frame.
inline Jacobian zeroJacobian(const ArmModel& model, const Vector7& q) {
  const ChainFrames f = chainFrames(model, q);
  Jacobian j;
  for (int i = 0; i < kJointCount; ++i) {
    j.block<3, 1>(0, i) = f.axes[i].cross(f.hand.translation - f.origins[i]);
    j.block<3, 1>(3, i) = f.axes[i];
  }
  return j;
}

inline Matrix6 blockRotation(const Matrix3& r) {
  Matrix6 m = Matrix6::Zero();
  m.topLeftCorner<3, 3>() = r;
  m.bottomRightCorner<3, 3>() = r;
  return m;
}

/// Maps joint velocities to the hand twist [v; w] expressed in the hand frame.
inline Jacobian bodyJacobian(const ArmModel& model, const Vector7& q) {
  const Matrix3 r = forwardKinematics(model, q).rotationMatrix();
  return blockRotation(r.transpose()) * zeroJacobian(model, q);
}

struct IkOptions {
  int max_iters = 100;
  double tol_translation = 1e-4;  // m
  double tol_rotation = 1e-3;     // rad
  double damping = 1e-2;
  double max_step = 0.5;  // rad per iteration, per joint
};

struct IkResult {
  bool converged = false;  // false means Unreachable
  Vector7 q = Vector7::Zero();
  int iterations = 0;
  double translation_error = 0.0;
  double rotation_error = 0.0;
};

/// Damped least-squares IK toward `target`, starting from `q_seed` and
/// clamping every iterate to the position limits.
inline IkResult dampedLeastSquaresIk(const ArmModel& model, const Vector7& q_seed,
                                     const Pose6D& target, const IkOptions& opt = {}) {
  IkResult r;
  r.q = model.clampToLimits(q_seed);
  if (target.translation.norm() > model.reachBound()) {
    r.translation_error = (target.translation - forwardKinematics(model, r.q).translation).norm();
    return r;
  }
  const double lambda2 = opt.damping * opt.damping;
  for (int it = 0;; ++it) {
    const ChainFrames f = chainFrames(model, r.q);
    Vector6 e;
    e.head<3>() = target.translation - f.hand.translation;
    e.tail<3>() = rotationVector(target.rotation * f.hand.rotation.conjugate());
    r.translation_error = e.head<3>().norm();
    r.rotation_error = e.tail<3>().norm();
    r.iterations = it;
    if (r.translation_error < opt.tol_translation && r.rotation_error < opt.tol_rotation) {
      r.converged = true;
      return r;
    }
    if (it == opt.max_iters) return r;
    Jacobian j;
    for (int i = 0; i < kJointCount; ++i) {
      j.block<3, 1>(0, i) = f.axes[i].cross(f.hand.translation - f.origins[i]);
      j.block<3, 1>(3, i) = f.axes[i];
    }
    // Joints resting on a limit and pushed further out are dropped from the
    // solve; otherwise clamping silently eats part of every step.
    Vector7 dq;
    for (int pass = 0; pass < kJointCount; ++pass) {
      const Matrix6 a = j * j.transpose() + lambda2 * Matrix6::Identity();
      dq = j.transpose() * a.ldlt().solve(e);
      bool dropped = false;
      for (int i = 0; i < kJointCount; ++i) {
        const bool pinned = (r.q(i) <= model.lower_limits(i) && dq(i) < 0.0) ||
                            (r.q(i) >= model.upper_limits(i) && dq(i) > 0.0);
        if (pinned && !j.col(i).isZero()) {
          j.col(i).setZero();
          dropped = true;
        }
      }
      if (!dropped) break;
    }
    const double biggest = dq.cwiseAbs().maxCoeff();
    if (biggest > opt.max_step) dq *= opt.max_step / biggest;
    r.q = model.clampToLimits(r.q + dq);
  }
}

/// Velocity-product term under the diagonal model: a fixed fraction of the
/// viscous joint damping, fed forward as coriolis_compensation * d_i * v_i.
inline TorqueVector coriolisTorque(const ArmModel& model, const JointState& state) {
  return model.coriolis_compensation * model.viscous_damping.cwiseProduct(state.velocities);
}

/// Dynamically consistent nullspace projector N = I - J^T (J M^-1 J^T)^+ J M^-1
/// for the diagonal inertia M. Any torque N*t produces no hand acceleration.
inline Matrix7 nullspaceProjector(const ArmModel& model, const Jacobian& j) {
  const Vector7 m_inv = model.effective_inertia.cwiseInverse();
  const Eigen::Matrix<double, kJointCount, 6> m_inv_jt = m_inv.asDiagonal() * j.transpose();
  const Matrix6 lambda = pseudoInverse(Matrix6(j * m_inv_jt));
  return Matrix7::Identity() - j.transpose() * lambda * m_inv_jt.transpose();
}

/// Spring toward the rest pose with damping ratio `nullspace_damping_ratio`
/// (per joint, against the joint inertia), projected into the nullspace of J.
inline TorqueVector nullspaceTorque(const ArmModel& model, const JointState& state, const Jacobian& j,
                                    double gain) {
  if (gain <= 0.0) return TorqueVector::Zero();
  const Vector7 damping =
      2.0 * model.nullspace_damping_ratio * (gain * model.effective_inertia).cwiseSqrt();
  const Vector7 raw = gain * (model.nullspace_rest_pose - state.positions) -
                      damping.cwiseProduct(state.velocities);
  return nullspaceProjector(model, j) * raw;
}

}  // namespace teleop
