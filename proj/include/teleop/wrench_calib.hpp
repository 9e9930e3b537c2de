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

// F/T sensor calibration and compensation.
//
// Static sensor model, everything in the sensor frame, g = 9.80665 * g_hat:
//
//   force  = force_bias  + m * g
//   torque = torque_bias + c x (m * g)
//
// The model is linear in (force_bias, torque_bias, m, m*c), so calibration is
// a single 10-unknown linear least-squares problem; c is recovered as
// (m*c) / m afterwards. Bias drift is not modelled.

#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "teleop/kv_config.hpp"
#include "teleop/math.hpp"
#include "teleop/types.hpp"

namespace teleop {

class DegenerateSampleSet : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CalibrationSample {
  Vector3 gravity_in_sensor = -Vector3::UnitZ();  // unit vector
  Wrench mean_wrench{Vector3::Zero(), Vector3::Zero(), Frame::kSensor, 0.0};
};

struct CalibrationProfile {
  Vector3 force_bias = Vector3::Zero();
  Vector3 torque_bias = Vector3::Zero();
  double attached_mass = 0.0;  // kg
  Vector3 center_of_mass = Vector3::Zero();  // m, sensor frame

  static CalibrationProfile fromConfig(const KeyValueFile& kv) {
    auto vec3 = [&](const std::string& key) {
      const auto v = kv.numbers(key, 3);
      return Vector3(v[0], v[1], v[2]);
    };
    CalibrationProfile p;
    p.force_bias = vec3("force_bias");
    p.torque_bias = vec3("torque_bias");
    p.attached_mass = kv.number("attached_mass");
    p.center_of_mass = vec3("center_of_mass");
    kv.rejectUnused();
    if (p.attached_mass < 0.0) {
      throw ConfigError(kv.where(kv.require("attached_mass").line) + ": attached_mass < 0");
    }
    return p;
  }

  static CalibrationProfile load(const std::filesystem::path& path) {
    return fromConfig(KeyValueFile::load(path));
  }

  std::string toConfig() const {
    std::ostringstream out;
    out << std::setprecision(17);
    auto vec3 = [&](const char* key, const Vector3& v) {
      out << key << " = " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    };
    vec3("force_bias", force_bias);
    vec3("torque_bias", torque_bias);
    out << "attached_mass = " << attached_mass << '\n';
    vec3("center_of_mass", center_of_mass);
    return out.str();
  }
};

struct CalibrationResult {
  CalibrationProfile profile;
  double rms_force_residual = 0.0;   // N
  double rms_torque_residual = 0.0;  // N·m
  double condition_number = 0.0;
};

/// Gravity direction (unit) seen in a sensor whose orientation relative to
/// the gravity-aligned frame (z up) is `sensor_orientation`.
inline Vector3 gravityInSensor(const Quaternion& sensor_orientation) {
  return sensor_orientation.conjugate() * Vector3(0.0, 0.0, -1.0);
}

/// Bias plus weight of the attached load, in the sensor frame.
inline Wrench staticReading(const CalibrationProfile& p, const Vector3& gravity_in_sensor) {
  const Vector3 weight = p.attached_mass * kStandardGravity * gravity_in_sensor;
  return {p.force_bias + weight, p.torque_bias + p.center_of_mass.cross(weight), Frame::kSensor, 0.0};
}

/// Re-expresses a wrench measured at the sensor origin at the hand origin,
/// in hand axes. `sensor_to_hand` is the hand pose in the sensor frame.
inline Wrench sensorToHand(const Wrench& w, const Pose6D& sensor_to_hand) {
  const Quaternion r_inv = sensor_to_hand.rotation.conjugate();
  const Vector3& p = sensor_to_hand.translation;
  return {r_inv * w.force, r_inv * (w.torque - p.cross(w.force)), Frame::kHand, w.timestamp};
}

inline Wrench handToSensor(const Wrench& w, const Pose6D& sensor_to_hand) {
  const Vector3 f = sensor_to_hand.rotation * w.force;
  const Vector3 t = sensor_to_hand.rotation * w.torque + sensor_to_hand.translation.cross(f);
  return {f, t, Frame::kSensor, w.timestamp};
}

inline CalibrationResult calibrate(std::span<const CalibrationSample> samples) {
  if (samples.size() < 6) {
    throw DegenerateSampleSet("calibration needs at least 6 samples, got " +
                              std::to_string(samples.size()));
  }
  const Eigen::Index rows = 6 * static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 10);
  Eigen::VectorXd b(rows);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    if (std::abs(s.gravity_in_sensor.norm() - 1.0) > 1e-6) {
      throw std::invalid_argument("calibration sample " + std::to_string(k) +
                                  ": gravity direction is not a unit vector");
    }
    const Vector3 g = kStandardGravity * s.gravity_in_sensor;
    const Eigen::Index r = 6 * static_cast<Eigen::Index>(k);
    a.block<3, 3>(r, 0).setIdentity();
    a.block<3, 1>(r, 6) = g;
    a.block<3, 3>(r + 3, 3).setIdentity();
    a.block<3, 3>(r + 3, 7) = -skew(g);  // (m c) x g
    b.segment<3>(r) = s.mean_wrench.force;
    b.segment<3>(r + 3) = s.mean_wrench.torque;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                              : std::numeric_limits<double>::infinity();
  if (!(cond < 1e6)) {
    throw DegenerateSampleSet("calibration samples do not span enough orientations (condition number " +
                              std::to_string(cond) + ")");
  }
  const Eigen::VectorXd x = svd.solve(b);

  CalibrationResult result;
  result.condition_number = cond;
  CalibrationProfile& p = result.profile;
  p.force_bias = x.segment<3>(0);
  p.torque_bias = x.segment<3>(3);
  p.attached_mass = std::max(0.0, x(6));
  p.center_of_mass = p.attached_mass < 1e-6 ? Vector3::Zero() : Vector3(x.segment<3>(7) / x(6));

  const Eigen::VectorXd residual = a * x - b;
  double fsq = 0.0, tsq = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    fsq += residual.segment<3>(6 * k).squaredNorm();
    tsq += residual.segment<3>(6 * k + 3).squaredNorm();
  }
  result.rms_force_residual = std::sqrt(fsq / samples.size());
  result.rms_torque_residual = std::sqrt(tsq / samples.size());
  return result;
}

/// Removes bias and load weight from a raw sensor-frame reading and returns
/// the external wrench at the hand origin, in hand axes.
inline Wrench compensate(const CalibrationProfile& profile, const Wrench& raw,
                         const Quaternion& sensor_orientation, const Pose6D& sensor_to_hand) {
  const Wrench load = staticReading(profile, gravityInSensor(sensor_orientation));
  const Wrench external{raw.force - load.force, raw.torque - load.torque, Frame::kSensor, raw.timestamp};
  return sensorToHand(external, sensor_to_hand);
}

/// Samples CSV: header `gx,gy,gz,fx,fy,fz,tx,ty,tz`, one row per static pose.
inline std::vector<CalibrationSample> loadCalibrationSamples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::vector<CalibrationSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("gx", 0) == 0) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double d = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || !std::isfinite(d)) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      v.push_back(d);
    }
    if (v.size() != 9) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 9 columns, got " +
                        std::to_string(v.size()));
    }
    CalibrationSample s;
    s.gravity_in_sensor = Vector3(v[0], v[1], v[2]);
    s.mean_wrench.force = Vector3(v[3], v[4], v[5]);
    s.mean_wrench.torque = Vector3(v[6], v[7], v[8]);
    out.push_back(s);
  }
  return out;
}

inline void writeCalibrationSamples(std::ostream& out, std::span<const CalibrationSample> samples) {
  out << "gx,gy,gz,fx,fy,fz,tx,ty,tz\n" << std::setprecision(17);
  for (const auto& s : samples) {
    const auto& g = s.gravity_in_sensor;
    const auto& f = s.mean_wrench.force;
    const auto& t = s.mean_wrench.torque;
    out << g.x() << ',' << g.y() << ',' << g.z() << ',' << f.x() << ',' << f.y() << ',' << f.z() << ','
        << t.x() << ',' << t.y() << ',' << t.z() << '\n';
  }
}

}  // namespace teleop
