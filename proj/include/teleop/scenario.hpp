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

// Declarative run description shared by both nodes. Paths are relative to
// the scenario file. See scenarios/*.scenario for the recognised keys.

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "teleop/arm_model.hpp"
#include "teleop/avatar_controller.hpp"
#include "teleop/hand_channel.hpp"
#include "teleop/kv_config.hpp"
#include "teleop/link.hpp"
#include "teleop/operator_controller.hpp"
#include "teleop/predictive_mirror.hpp"
#include "teleop/sim_world.hpp"

namespace teleop {

struct Scenario {
  std::string name = "scenario";
  double duration = 10.0;  // s
  std::uint64_t seed = 1;

  ArmModel operator_arm;
  ArmModel avatar_arm;
  Vector7 operator_start = Vector7::Zero();
  Vector7 avatar_start = Vector7::Zero();
  bool auto_goal_frame = true;

  LinkConfig forward;  // operator -> avatar
  LinkConfig back;     // avatar -> operator
  double bandwidth_budget = 1.0e6;  // bytes/s, both directions together

  std::vector<IntentWaypoint> waypoints;
  HumanConfig human;

  OperatorGains operator_gains;
  bool assist = true;
  MirrorConfig mirror;

  AvatarConfig avatar;
  std::vector<WrenchEvent> avatar_wrench_events;

  SensorConfig operator_sensor;
  SensorConfig avatar_sensor;
  int calibration_poses = 20;
  int calibration_readings = 100;

  HandMapping hand_mapping;
  std::vector<std::pair<double, double>> glove_keyframes;  // (time, closure)
  std::vector<GraspObject> grasp_objects;
  std::array<double, kFingers> brake_thresholds{0.6, 0.6, 0.6, 0.6, 0.6};

  std::uint64_t ticks() const { return static_cast<std::uint64_t>(std::llround(duration * 1000.0)); }

  /// Per-stream seeds derived from the scenario seed.
  std::uint64_t streamSeed(std::uint64_t stream) const { return seed * 0x9E3779B97F4A7C15ull + stream; }

  void applySeed(std::uint64_t s) {
    seed = s;
    operator_sensor.seed = streamSeed(1);
    avatar_sensor.seed = streamSeed(2);
    forward.seed = streamSeed(5);
    back.seed = streamSeed(6);
  }

  double closureAt(double t) const {
    if (glove_keyframes.empty()) return 0.0;
    if (t <= glove_keyframes.front().first) return glove_keyframes.front().second;
    for (std::size_t i = 1; i < glove_keyframes.size(); ++i) {
      const auto& [t1, c1] = glove_keyframes[i];
      if (t < t1) {
        const auto& [t0, c0] = glove_keyframes[i - 1];
        return c0 + (c1 - c0) * (t - t0) / (t1 - t0);
      }
    }
    return glove_keyframes.back().second;
  }

  static Scenario fromConfig(const KeyValueFile& kv);
  static Scenario load(const std::filesystem::path& path) { return fromConfig(KeyValueFile::load(path)); }
};

namespace detail {

inline Vector7 vector7(const KeyValueFile& kv, const std::string& key, const Vector7& fallback) {
  const auto v = kv.optionalNumbers(key, kJointCount);
  if (!v) return fallback;
  Vector7 out;
  for (int i = 0; i < kJointCount; ++i) out(i) = (*v)[i];
  return out;
}

inline SensorConfig sensorConfig(const KeyValueFile& kv, const std::string& prefix) {
  SensorConfig s;
  if (auto v = kv.optionalNumbers(prefix + ".bias", 6)) {
    s.truth.force_bias = Vector3((*v)[0], (*v)[1], (*v)[2]);
    s.truth.torque_bias = Vector3((*v)[3], (*v)[4], (*v)[5]);
  }
  if (auto v = kv.optionalNumbers(prefix + ".load", 4)) {
    if ((*v)[0] < 0.0) throw ConfigError(kv.where(kv.require(prefix + ".load").line) + ": negative mass");
    s.truth.attached_mass = (*v)[0];
    s.truth.center_of_mass = Vector3((*v)[1], (*v)[2], (*v)[3]);
  }
  if (auto v = kv.optionalNumbers(prefix + ".noise", 2)) {
    s.force_noise = (*v)[0];
    s.torque_noise = (*v)[1];
  }
  return s;
}

inline LinkConfig linkConfig(const KeyValueFile& kv, const std::string& prefix) {
  LinkConfig c;
  c.delay = kv.number(prefix + ".delay_ms", 0.0) * 1e-3;
  c.jitter = kv.number(prefix + ".jitter_ms", 0.0) * 1e-3;
  c.drop = kv.number(prefix + ".drop", 0.0);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(kv.source() + ": " + prefix + ": " + e.what());
  }
  return c;
}

}  // namespace detail

inline Scenario Scenario::fromConfig(const KeyValueFile& kv) {
  Scenario s;
  s.name = kv.string("name", kv.source());
  s.duration = kv.number("duration", 10.0);
  if (!(s.duration > 0.0)) throw ConfigError(kv.where(kv.require("duration").line) + ": duration must be > 0");
  const double seed = kv.number("seed", 1.0);
  if (seed < 0.0 || seed != std::floor(seed)) throw ConfigError(kv.where(kv.require("seed").line) + ": bad seed");

  auto loadArm = [&](const std::string& key) {
    const auto& e = kv.require(key);
    try {
      return ArmModel::load(kv.resolve(e.value));
    } catch (const ConfigError& err) {
      throw ConfigError(kv.where(e.line) + ": " + err.what());
    }
  };
  s.operator_arm = loadArm("operator.arm");
  s.avatar_arm = loadArm("avatar.arm");
  if (auto v = kv.optionalNumbers("operator.mount", 6)) s.operator_arm.mount = detail::poseFromNumbers(*v);
  if (auto v = kv.optionalNumbers("avatar.mount", 6)) s.avatar_arm.mount = detail::poseFromNumbers(*v);
  s.operator_start = detail::vector7(kv, "operator.start", s.operator_arm.nullspace_rest_pose);
  s.avatar_start = detail::vector7(kv, "avatar.start", s.avatar_arm.nullspace_rest_pose);
  for (const auto& [key, q, arm] : {std::tuple{"operator.start", s.operator_start, &s.operator_arm},
                                    std::tuple{"avatar.start", s.avatar_start, &s.avatar_arm}}) {
    if (!arm->withinLimits(q)) throw ConfigError(kv.source() + ": " + key + " outside joint limits");
  }
  const std::string frame = kv.string("operator.goal_frame", std::string("auto"));
  if (frame != "auto" && frame != "identity") {
    throw ConfigError(kv.where(kv.require("operator.goal_frame").line) + ": expected auto or identity");
  }
  s.auto_goal_frame = frame == "auto";

  s.forward = detail::linkConfig(kv, "link.forward");
  s.back = detail::linkConfig(kv, "link.return");
  s.bandwidth_budget = kv.number("link.bandwidth_budget", s.bandwidth_budget);

  for (const auto* e : kv.all("intent.waypoint")) {
    const auto v = kv.numbers(*e);
    if (v.size() != 7) throw ConfigError(kv.where(e->line) + ": intent.waypoint expects t dx dy dz roll pitch yaw");
    if (!s.waypoints.empty() && !(v[0] > s.waypoints.back().time)) {
      throw ConfigError(kv.where(e->line) + ": waypoint times must increase");
    }
    s.waypoints.push_back({v[0], Vector3(v[1], v[2], v[3]), Vector3(v[4], v[5], v[6])});
  }
  if (auto v = kv.optionalNumbers("intent.stiffness", 2)) {
    s.human.translational_stiffness = (*v)[0];
    s.human.rotational_stiffness = (*v)[1];
  }
  if (auto v = kv.optionalNumbers("intent.damping", 2)) {
    s.human.translational_damping = (*v)[0];
    s.human.rotational_damping = (*v)[1];
  }
  if (auto v = kv.optionalNumbers("intent.limits", 2)) {
    s.human.force_limit = (*v)[0];
    s.human.torque_limit = (*v)[1];
  }

  OperatorGains& g = s.operator_gains;
  g.t_p = kv.number("operator.t_p_deg", 10.0) * kDegree;
  g.t_v = kv.number("operator.t_v_deg", 40.0) * kDegree;
  const OperatorGains scaled = [&] {
    OperatorGains d = OperatorGains::defaultsFor(s.operator_arm);
    const double quarter = d.beta_p / d.t_p;
    d.beta_p = quarter * g.t_p;
    d.beta_v = quarter * g.t_v;
    return d;
  }();
  g.beta_p = kv.number("operator.beta_p", scaled.beta_p);
  g.beta_v = kv.number("operator.beta_v", scaled.beta_v);
  g.nullspace_gain = kv.number("operator.nullspace_gain", g.nullspace_gain);
  g.haptic_scale = kv.number("operator.haptic_scale", g.haptic_scale);
  g.assist_gain = kv.number("operator.assist_gain", g.assist_gain);
  g.avoidance_cap_fraction = kv.number("operator.avoidance_cap_fraction", g.avoidance_cap_fraction);
  s.assist = kv.boolean("operator.assist", true);
  try {
    g.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(kv.source() + ": " + e.what());
  }

  s.mirror.anchor_gain = kv.number("mirror.anchor_gain", s.mirror.anchor_gain);
  s.mirror.lp_cutoff = kv.number("mirror.cutoff_hz", s.mirror.lp_cutoff);
  s.mirror.stale_timeout = kv.number("mirror.stale_timeout", s.mirror.stale_timeout);
  s.mirror.slew_rate = kv.number("mirror.slew_rate", s.mirror.slew_rate);

  AvatarConfig& a = s.avatar;
  if (auto v = kv.optionalNumbers("avatar.stiffness", 2)) {
    a.translational_stiffness = (*v)[0];
    a.rotational_stiffness = (*v)[1];
  }
  a.fade_duration = kv.number("avatar.fade_duration", a.fade_duration);
  a.force_threshold = kv.number("avatar.force_threshold", a.force_threshold);
  a.torque_threshold = kv.number("avatar.torque_threshold", a.torque_threshold);
  a.auto_restart = kv.boolean("avatar.auto_restart", a.auto_restart);
  a.restart_delay = kv.number("avatar.restart_delay", a.restart_delay);
  a.nullspace_gain = kv.number("avatar.nullspace_gain", a.nullspace_gain);
  for (const auto* e : kv.all("avatar.wrench_event")) {
    const auto v = kv.numbers(*e);
    if (v.size() != 8) throw ConfigError(kv.where(e->line) + ": avatar.wrench_event expects t0 t1 fx fy fz tx ty tz");
    if (!(v[1] > v[0])) throw ConfigError(kv.where(e->line) + ": wrench event must end after it starts");
    s.avatar_wrench_events.push_back(
        {v[0], v[1], {Vector3(v[2], v[3], v[4]), Vector3(v[5], v[6], v[7]), Frame::kHand, 0.0}});
  }

  s.operator_sensor = detail::sensorConfig(kv, "sensor.operator");
  s.avatar_sensor = detail::sensorConfig(kv, "sensor.avatar");
  s.calibration_poses = static_cast<int>(kv.number("calibration.poses", 20));
  s.calibration_readings = static_cast<int>(kv.number("calibration.readings", 100));

  const auto& mapping = kv.string("hand.mapping", std::string());
  if (!mapping.empty()) {
    try {
      s.hand_mapping = HandMapping::load(kv.resolve(mapping));
    } catch (const MalformedMapping& e) {
      throw ConfigError(kv.where(kv.require("hand.mapping").line) + ": " + e.what());
    }
  }
  for (const auto* e : kv.all("hand.glove_keyframe")) {
    const auto v = kv.numbers(*e);
    if (v.size() != 2) throw ConfigError(kv.where(e->line) + ": hand.glove_keyframe expects t closure");
    if (!s.glove_keyframes.empty() && !(v[0] > s.glove_keyframes.back().first)) {
      throw ConfigError(kv.where(e->line) + ": keyframe times must increase");
    }
    s.glove_keyframes.emplace_back(v[0], v[1]);
  }
  for (const auto* e : kv.all("hand.object")) {
    const auto v = kv.numbers(*e);
    if (v.size() != 3) throw ConfigError(kv.where(e->line) + ": hand.object expects t0 t1 block");
    s.grasp_objects.push_back({v[0], v[1], v[2]});
  }
  if (const auto* e = kv.find("hand.brake_threshold")) {
    const auto v = kv.numbers(*e);
    if (v.size() == 1) s.brake_thresholds.fill(v[0]);
    else if (v.size() == kFingers) std::copy(v.begin(), v.end(), s.brake_thresholds.begin());
    else throw ConfigError(kv.where(e->line) + ": hand.brake_threshold expects 1 or 5 numbers");
    for (double t : s.brake_thresholds) {
      if (!(t > 0.0)) throw ConfigError(kv.where(e->line) + ": brake thresholds must be > 0");
    }
  }
  kv.rejectUnused();
  s.applySeed(static_cast<std::uint64_t>(seed));
  return s;
}

}  // namespace teleop
