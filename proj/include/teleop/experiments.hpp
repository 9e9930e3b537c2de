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

// Experiment reproductions run by the CLI: operator arm mounting study,
// delay compensation report and assist comparison.

#pragma once

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "teleop/session.hpp"

namespace teleop {

// ---------------------------------------------------------------------------
// Workspace study

/// Hand targets of a seated person, right hand, in the torso frame. Positions
/// lie on a shell around the right shoulder with a forward bias; orientations
/// scatter around `nominal`.
struct PoseSetConfig {
  int count = 400;
  std::uint64_t seed = 1;
  Vector3 shoulder{0.0, -0.2, 0.0};
  double radius_min = 0.25;  // m
  double radius_max = 0.6;
  double azimuth_mean = -15.0 * kDegree;  // from +x toward +y
  double azimuth_sd = 30.0 * kDegree;
  double elevation_mean = -20.0 * kDegree;
  double elevation_sd = 25.0 * kDegree;
  double orientation_spread = 0.6;  // rad, max rotation away from nominal
};

inline std::vector<Pose6D> syntheticSeatedPoses(const PoseSetConfig& c, const Quaternion& nominal) {
  if (c.count <= 0) throw std::invalid_argument("pose set: count must be > 0");
  SimRandom rng(c.seed);
  std::vector<Pose6D> out;
  out.reserve(static_cast<std::size_t>(c.count));
  for (int i = 0; i < c.count; ++i) {
    const double az = std::clamp(c.azimuth_mean + c.azimuth_sd * rng.gaussian(), -M_PI / 2, M_PI / 3);
    const double el = std::clamp(c.elevation_mean + c.elevation_sd * rng.gaussian(), -M_PI / 3, M_PI / 3);
    const double r = c.radius_min + (c.radius_max - c.radius_min) * rng.uniform();
    const Vector3 p = c.shoulder + r * Vector3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    Vector3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
    axis.normalize();
    const double angle = c.orientation_spread * rng.uniform();
    out.push_back(Pose6D(p, (fromRotationVector(angle * axis) * nominal).normalized()));
  }
  return out;
}

/// CSV `x,y,z,qw,qx,qy,qz`, one pose per row; header and `#` lines skipped.
inline std::vector<Pose6D> loadPoseSet(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pose set '" + path.string() + "'");
  std::vector<Pose6D> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line[0] == 'x') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double v[7];
    for (double& x : v) {
      if (!(ss >> x)) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected 7 numbers");
    }
    out.push_back(Pose6D(Vector3(v[0], v[1], v[2]), Quaternion(v[3], v[4], v[5], v[6]).normalized()));
  }
  if (out.empty()) throw std::invalid_argument("pose set '" + path.string() + "' is empty");
  return out;
}

inline void writePoseSet(std::ostream& out, const std::vector<Pose6D>& poses) {
  out << "x,y,z,qw,qx,qy,qz\n";
  char buf[160];
  for (const Pose6D& p : poses) {
    const Pose6D c = p.canonical();
    std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", c.translation.x(),
                  c.translation.y(), c.translation.z(), c.rotation.w(), c.rotation.x(), c.rotation.y(),
                  c.rotation.z());
    out << buf;
  }
}

struct MountCandidate {
  std::string label;
  Pose6D mount;
};

/// Baseline first, then a grid of base positions and tilts around it.
inline std::vector<MountCandidate> defaultMountGrid(const Pose6D& baseline) {
  std::vector<MountCandidate> out{{"baseline", baseline}};
  const double xs[] = {-0.35, -0.1, 0.15};
  const double ys[] = {-0.45, -0.2};
  const double zs[] = {-0.5, -0.15};
  struct Tilt {
    const char* name;
    double r, p, y;
  };
  const Tilt tilts[] = {{"up", 0, 0, 0},
                        {"fwd", 0, 0.7, 0},
                        {"side", 1.2, 0, 0},
                        {"side-fwd", 1.0, 0.6, 0}};
  char buf[96];
  for (double x : xs) {
    for (double y : ys) {
      for (double z : zs) {
        for (const Tilt& t : tilts) {
          std::snprintf(buf, sizeof buf, "%+.2f %+.2f %+.2f %s", x, y, z, t.name);
          out.push_back({buf, Pose6D(Vector3(x, y, z), fromRpy(t.r, t.p, t.y))});
        }
      }
    }
  }
  return out;
}

/// Lines `label x y z roll pitch yaw`; the first line is taken as the baseline.
inline std::vector<MountCandidate> loadMountCandidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mount candidates '" + path.string() + "'");
  std::vector<MountCandidate> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ss(line);
    std::string label;
    double v[6];
    ss >> label;
    for (double& x : v) {
      if (!(ss >> x)) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected label + 6 numbers");
    }
    out.push_back({label, Pose6D(Vector3(v[0], v[1], v[2]), fromRpy(v[3], v[4], v[5]))});
  }
  if (out.empty()) throw std::invalid_argument("no mount candidates in '" + path.string() + "'");
  return out;
}

struct MountResult {
  MountCandidate candidate;
  int reached = 0;
  int missed = 0;
  double fraction() const { return reached + missed > 0 ? static_cast<double>(reached) / (reached + missed) : 0.0; }
};

struct WorkspaceReport {
  std::vector<MountResult> results;  // in candidate order; [0] is the baseline
  std::size_t best = 0;

  const MountResult& baseline() const { return results.front(); }
  const MountResult& bestResult() const { return results[best]; }
};

struct WorkspaceOptions {
  int ik_seeds = 16;  // the rest pose plus random in-limit seeds
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0 = hardware concurrency
};

/// IK from several seeds; a pose counts as reached if any attempt converges.
inline bool reachable(const ArmModel& arm, const Pose6D& target_in_base, int seeds, SimRandom& rng) {
  for (int s = 0; s < seeds; ++s) {
    Vector7 q0 = arm.nullspace_rest_pose;
    if (s > 0) {
      for (int i = 0; i < kJointCount; ++i) {
        q0(i) = arm.lower_limits(i) + (arm.upper_limits(i) - arm.lower_limits(i)) * rng.uniform();
      }
    }
    if (dampedLeastSquaresIk(arm, q0, target_in_base).converged) return true;
  }
  return false;
}

inline WorkspaceReport workspaceAnalysis(const ArmModel& arm, const std::vector<Pose6D>& poses,
                                         const std::vector<MountCandidate>& mounts,
                                         const WorkspaceOptions& opt = {}) {
  if (poses.empty()) throw std::invalid_argument("workspace analysis: empty pose set");
  if (mounts.empty()) throw std::invalid_argument("workspace analysis: no mount candidates");
  WorkspaceReport report;
  report.results.resize(mounts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t m = next++; m < mounts.size(); m = next++) {
      MountResult r{mounts[m]};
      const Pose6D inv = mounts[m].mount.inverse();
      for (std::size_t i = 0; i < poses.size(); ++i) {
        SimRandom rng(opt.seed * 0x9E3779B97F4A7C15ull + i);
        if (reachable(arm, inv * poses[i], opt.ik_seeds, rng)) ++r.reached;
        else ++r.missed;
      }
      report.results[m] = std::move(r);
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(opt.threads ? opt.threads : std::thread::hardware_concurrency(),
                                                      static_cast<unsigned>(mounts.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t m = 1; m < report.results.size(); ++m) {
    if (report.results[m].reached > report.results[report.best].reached) report.best = m;
  }
  return report;
}

inline std::string workspaceTable(const WorkspaceReport& r) {
  std::ostringstream o;
  o << "| mount | x | y | z | reached | missed | reached % |\n|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (std::size_t m = 0; m < r.results.size(); ++m) {
    const MountResult& x = r.results[m];
    const Vector3& p = x.candidate.mount.translation;
    std::snprintf(buf, sizeof buf, "| %s%s | %.3f | %.3f | %.3f | %d | %d | %.1f |\n", x.candidate.label.c_str(),
                  m == r.best ? " (best)" : "", p.x(), p.y(), p.z(), x.reached, x.missed, 100.0 * x.fraction());
    o << buf;
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Trace files

/// Numeric view of a trace CSV; non-numeric cells read as NaN.
class TraceTable {
 public:
  static TraceTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace '" + path.string() + "'");
    TraceTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace '" + path.string() + "' is empty");
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      t.index_[cell] = t.columns_.size();
      t.columns_.push_back(cell);
    }
    while (std::getline(in, line)) {
      std::vector<double> row;
      row.reserve(t.columns_.size());
      const char* p = line.c_str();
      while (*p) {
        char* end = nullptr;
        const double v = std::strtod(p, &end);
        const char* stop = std::strchr(p, ',');
        row.push_back(end == p || (stop && end != stop) || (!stop && *end) ? std::nan("") : v);
        if (!stop) break;
        p = stop + 1;
      }
      if (row.size() != t.columns_.size()) throw std::runtime_error("trace '" + path.string() + "': ragged row");
      t.rows_.push_back(std::move(row));
    }
    return t;
  }

  std::size_t rows() const { return rows_.size(); }
  bool has(const std::string& column) const { return index_.count(column) > 0; }
  std::size_t column(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("trace has no column '" + name + "'");
    return it->second;
  }
  double at(std::size_t row, std::size_t col) const { return rows_[row][col]; }

  /// `prefix1..prefix7` as joint vectors.
  std::vector<Vector7> joints(const std::string& prefix) const {
    std::size_t c[kJointCount];
    for (int i = 0; i < kJointCount; ++i) c[i] = column(prefix + std::to_string(i + 1));
    std::vector<Vector7> out(rows_.size());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      for (int i = 0; i < kJointCount; ++i) out[r](i) = rows_[r][c[i]];
    }
    return out;
  }

 private:
  std::vector<std::string> columns_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Delay compensation

/// Lag L (in samples, |L| <= max_lag) maximizing the normalized correlation
/// of x(k + L) with y(k), summed over joints after removing each mean.
/// Positive L means x trails y.
inline int crossCorrelationLag(const std::vector<Vector7>& x, const std::vector<Vector7>& y, int max_lag) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) throw std::invalid_argument("cross correlation: need at least two samples");
  max_lag = std::min<int>(max_lag, static_cast<int>(n) - 2);
  Vector7 mx = Vector7::Zero(), my = Vector7::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  int best_lag = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    const std::size_t k0 = lag < 0 ? static_cast<std::size_t>(-lag) : 0;
    const std::size_t k1 = lag > 0 ? n - static_cast<std::size_t>(lag) : n;
    for (std::size_t k = k0; k < k1; ++k) {
      const Vector7 a = x[k + lag] - mx;
      const Vector7 b = y[k] - my;
      sxy += a.dot(b);
      sxx += a.squaredNorm();
      syy += b.squaredNorm();
    }
    const double c = sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
    if (c > best) {
      best = c;
      best_lag = lag;
    }
  }
  return best_lag;
}

struct DelayReport {
  int mirror_lag_ticks = 0;     // q_hat against true avatar q
  int telemetry_lag_ticks = 0;  // raw telemetry against true avatar q
  double tick = 1e-3;           // s
  double mirrorLag() const { return mirror_lag_ticks * tick; }
  double telemetryLag() const { return telemetry_lag_ticks * tick; }
};

/// Operator row k and avatar row k describe the same tick (the avatar logs
/// its start-of-tick joints, which is also what its telemetry carries).
inline DelayReport delayReport(const TraceTable& op, const TraceTable& av, int max_lag = 500) {
  DelayReport r;
  const std::vector<Vector7> truth = av.joints("q");
  r.mirror_lag_ticks = crossCorrelationLag(op.joints("q_hat"), truth, max_lag);
  r.telemetry_lag_ticks = crossCorrelationLag(op.joints("telemetry_q"), truth, max_lag);
  return r;
}

// ---------------------------------------------------------------------------
// Assist comparison

struct AssistComparison {
  RunResult on;
  RunResult off;
  std::optional<RunResult> doubled;  // assist gain x2

  bool assistHelps() const { return on.op.rms_human_force < off.op.rms_human_force; }
  bool monotone() const { return !doubled || doubled->op.rms_human_force <= on.op.rms_human_force; }
};

inline AssistComparison assistComparison(const Scenario& base, bool with_doubled_gain = true) {
  AssistComparison c;
  Scenario s = base;
  s.assist = true;
  c.on = runLoopback(s);
  s.assist = false;
  c.off = runLoopback(s);
  if (with_doubled_gain) {
    s.assist = true;
    s.operator_gains.assist_gain = 2.0 * base.operator_gains.assist_gain;
    c.doubled = runLoopback(s);
  }
  return c;
}

}  // namespace teleop
