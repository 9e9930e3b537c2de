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

#pragma once

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace teleop {

inline constexpr int kJointCount = 7;

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Vector7 = Eigen::Matrix<double, kJointCount, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Matrix7 = Eigen::Matrix<double, kJointCount, kJointCount>;
using Jacobian = Eigen::Matrix<double, 6, kJointCount>;
using JacobianTransposePinv = Eigen::Matrix<double, 6, kJointCount>;
using Quaternion = Eigen::Quaterniond;

/// Joint torque command, N·m.
using TorqueVector = Vector7;

inline constexpr double kStandardGravity = 9.80665;

/// Rigid pose: translation in metres plus a unit quaternion.
struct Pose6D {
  Vector3 translation = Vector3::Zero();
  Quaternion rotation = Quaternion::Identity();

  static Pose6D Identity() { return {}; }

  Pose6D(const Vector3& t = Vector3::Zero(), const Quaternion& r = Quaternion::Identity())
      : translation(t), rotation(r) {}

  Matrix3 rotationMatrix() const { return rotation.toRotationMatrix(); }

  Pose6D operator*(const Pose6D& rhs) const {
    return {translation + rotation * rhs.translation, (rotation * rhs.rotation).normalized()};
  }

  Pose6D inverse() const {
    const Quaternion inv = rotation.conjugate();
    return {-(inv * translation), inv};
  }

  Vector3 apply(const Vector3& p) const { return translation + rotation * p; }

  /// Scalar part made non-negative; used wherever a pose is serialized.
  Pose6D canonical() const {
    Pose6D out = *this;
    if (out.rotation.w() < 0.0) out.rotation.coeffs() = -out.rotation.coeffs();
    return out;
  }
};

struct JointState {
  Vector7 positions = Vector7::Zero();
  Vector7 velocities = Vector7::Zero();
  double timestamp = 0.0;
};

enum class Frame : std::uint8_t { kSensor = 0, kHand = 1, kBase = 2 };

inline std::string_view frameName(Frame f) {
  switch (f) {
    case Frame::kSensor: return "sensor";
    case Frame::kHand: return "hand";
    case Frame::kBase: return "base";
  }
  return "?";
}

/// 6D force/torque tagged with the frame it is expressed in.
struct Wrench {
  Vector3 force = Vector3::Zero();
  Vector3 torque = Vector3::Zero();
  Frame frame = Frame::kHand;
  double timestamp = 0.0;

  Vector6 stacked() const {
    Vector6 w;
    w << force, torque;
    return w;
  }

  static Wrench fromStacked(const Vector6& w, Frame f, double t = 0.0) {
    return {w.head<3>(), w.tail<3>(), f, t};
  }
};

/// Goal pose of the common hand frame, expressed in the shared torso frame.
struct HandFrameCommand {
  Pose6D pose;
  double timestamp = 0.0;
};

}  // namespace teleop
