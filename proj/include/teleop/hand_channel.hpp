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

// Glove to robot hand retargeting and per-finger brake feedback.

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace teleop {

inline constexpr int kGloveJoints = 20;  // four per finger, thumb first
inline constexpr int kFingers = 5;
inline constexpr int kMaxActuators = 9;

class MalformedMapping : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GloveFrame {
  std::array<double, kGloveJoints> joint_angles{};
  double timestamp = 0.0;
};

struct HandCommand {
  std::array<double, kMaxActuators> actuated_positions{};
  int count = 0;
};

struct HandFeedback {
  std::array<double, kMaxActuators> motor_currents{};
  int count = 0;
  std::array<bool, kFingers> brake_flags{};
};

struct MappingRow {
  int glove_index = 0;
  double scale = 1.0;
  double offset = 0.0;
  int finger() const { return glove_index / 4; }
};

struct HandMapping {
  std::vector<MappingRow> rows;

  /// CSV rows `actuator,glove_index,scale,offset`; actuators numbered from 0.
  static HandMapping parse(const std::string& text, const std::string& source = "<memory>") {
    HandMapping m;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::vector<bool> seen;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      if (line.compare(first, 8, "actuator") == 0) continue;
      const std::string where = source + ":" + std::to_string(line_no) + ": ";
      std::vector<std::string> cells;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 4) throw MalformedMapping(where + "expected 4 columns");
      double v[4];
      for (int i = 0; i < 4; ++i) {
        char* end = nullptr;
        v[i] = std::strtod(cells[i].c_str(), &end);
        while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
        if (end == cells[i].c_str() || *end != '\0' || !std::isfinite(v[i])) {
          throw MalformedMapping(where + "bad number '" + cells[i] + "'");
        }
      }
      const int actuator = static_cast<int>(v[0]);
      const int glove = static_cast<int>(v[1]);
      if (actuator != v[0] || actuator < 0 || actuator >= kMaxActuators) {
        throw MalformedMapping(where + "actuator index out of range");
      }
      if (glove != v[1] || glove < 0 || glove >= kGloveJoints) {
        throw MalformedMapping(where + "glove index out of range");
      }
      if (actuator >= static_cast<int>(m.rows.size())) {
        m.rows.resize(actuator + 1);
        seen.resize(actuator + 1, false);
      }
      if (seen[actuator]) throw MalformedMapping(where + "duplicate actuator " + std::to_string(actuator));
      seen[actuator] = true;
      m.rows[actuator] = {glove, v[2], v[3]};
    }
    for (std::size_t k = 0; k < seen.size(); ++k) {
      if (!seen[k]) throw MalformedMapping(source + ": actuator " + std::to_string(k) + " missing");
    }
    if (m.rows.empty()) throw MalformedMapping(source + ": no rows");
    return m;
  }

  static HandMapping load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MalformedMapping("cannot open '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
  }

  int actuators() const { return static_cast<int>(rows.size()); }
};

inline HandCommand retarget(const GloveFrame& frame, const HandMapping& mapping) {
  HandCommand cmd;
  cmd.count = mapping.actuators();
  for (int k = 0; k < cmd.count; ++k) {
    const MappingRow& r = mapping.rows[k];
    cmd.actuated_positions[k] = std::clamp(r.scale * frame.joint_angles[r.glove_index] + r.offset, 0.0, 1.0);
  }
  return cmd;
}

/// Per-finger threshold with a release band: a brake engages above the
/// threshold and releases only below (1 - hysteresis) of it.
class BrakeLatch {
 public:
  BrakeLatch(std::array<double, kFingers> thresholds, double hysteresis = 0.1)
      : thresholds_(thresholds), hysteresis_(hysteresis) {
    for (double t : thresholds_) {
      if (!(t > 0.0)) throw std::invalid_argument("brake thresholds must be > 0");
    }
  }

  const std::array<bool, kFingers>& flags() const { return flags_; }

  std::array<bool, kFingers> update(const HandFeedback& feedback, const HandMapping& mapping) {
    std::array<double, kFingers> peak{};
    for (int k = 0; k < feedback.count && k < mapping.actuators(); ++k) {
      const int f = mapping.rows[k].finger();
      peak[f] = std::max(peak[f], feedback.motor_currents[k]);
    }
    for (int f = 0; f < kFingers; ++f) {
      if (!flags_[f] && peak[f] > thresholds_[f]) flags_[f] = true;
      else if (flags_[f] && peak[f] < (1.0 - hysteresis_) * thresholds_[f]) flags_[f] = false;
    }
    return flags_;
  }

 private:
  std::array<double, kFingers> thresholds_;
  double hysteresis_;
  std::array<bool, kFingers> flags_{};
};

/// Synthetic glove pose for a grip closure in [0, 1]: flexion joints bend
/// from 0 to 1.5 rad, the first (spread) joint of each finger stays at 0.1 rad.
inline GloveFrame gloveFromClosure(double closure, double t = 0.0) {
  GloveFrame g;
  g.timestamp = t;
  const double c = std::clamp(closure, 0.0, 1.0);
  for (int f = 0; f < kFingers; ++f) {
    g.joint_angles[4 * f] = 0.1;
    for (int j = 1; j < 4; ++j) g.joint_angles[4 * f + j] = 1.5 * c;
  }
  return g;
}

}  // namespace teleop
