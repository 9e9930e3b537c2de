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

#include <algorithm>
#include <cmath>

#include "teleop/types.hpp"

namespace teleop {

/// Singular values below this are treated as zero by every pseudoinverse.
inline constexpr double kSingularValueCutoff = 1e-6;

inline Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

/// Truncated SVD pseudoinverse. `min_singular`, when given, receives the
/// smallest singular value of `m`.
template <typename Derived>
Eigen::Matrix<double, Derived::ColsAtCompileTime, Derived::RowsAtCompileTime> pseudoInverse(
    const Eigen::MatrixBase<Derived>& m, double* min_singular = nullptr) {
  using In = Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>;
  using Out = Eigen::Matrix<double, Derived::ColsAtCompileTime, Derived::RowsAtCompileTime>;
  const Eigen::JacobiSVD<In> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  Out result = Out::Zero(m.cols(), m.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > kSingularValueCutoff) {
      result.noalias() += (1.0 / s(i)) * svd.matrixV().col(i) * svd.matrixU().col(i).transpose();
    }
  }
  if (min_singular) *min_singular = s.size() ? s(s.size() - 1) : 0.0;
  return result;
}

/// Axis-angle vector of a rotation, angle in [0, pi].
inline Vector3 rotationVector(const Quaternion& q_in) {
  Quaternion q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double sin_half = q.vec().norm();
  if (sin_half < 1e-12) return 2.0 * q.vec();
  const double angle = 2.0 * std::atan2(sin_half, q.w());
  return q.vec() * (angle / sin_half);
}

inline Quaternion fromRotationVector(const Vector3& v) {
  const double angle = v.norm();
  if (angle < 1e-12) return Quaternion(1.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z()).normalized();
  return Quaternion(Eigen::AngleAxisd(angle, v / angle));
}

/// Fixed-axis roll/pitch/yaw (URDF convention, R = Rz(yaw) Ry(pitch) Rx(roll)).
inline Quaternion fromRpy(double roll, double pitch, double yaw) {
  return Quaternion(Eigen::AngleAxisd(yaw, Vector3::UnitZ()) *
                    Eigen::AngleAxisd(pitch, Vector3::UnitY()) *
                    Eigen::AngleAxisd(roll, Vector3::UnitX()));
}

inline Quaternion fromRpy(const Vector3& rpy) { return fromRpy(rpy.x(), rpy.y(), rpy.z()); }

/// 6D error of `current` relative to `goal`: translation difference and the
/// rotation vector of current * goal^-1, both in the common base frame.
inline Vector6 poseError(const Pose6D& current, const Pose6D& goal) {
  Vector6 e;
  e.head<3>() = current.translation - goal.translation;
  e.tail<3>() = rotationVector(current.rotation * goal.rotation.conjugate());
  return e;
}

/// Straight-line translation and slerp rotation, s in [0, 1].
inline Pose6D interpolate(const Pose6D& from, const Pose6D& to, double s) {
  Quaternion target = to.rotation;
  if (from.rotation.dot(target) < 0.0) target.coeffs() = -target.coeffs();
  return {from.translation + s * (to.translation - from.translation),
          from.rotation.slerp(s, target).normalized()};
}

template <typename Derived>
void clampNorm(Eigen::MatrixBase<Derived>& v, double limit) {
  const double n = v.norm();
  if (n > limit && n > 0.0) v *= limit / n;
}

/// Smoothing factor of a first-order low-pass sampled every `dt` seconds.
inline double lowPassFactor(double cutoff_hz, double dt) {
  return 1.0 - std::exp(-2.0 * M_PI * cutoff_hz * dt);
}

}  // namespace teleop
