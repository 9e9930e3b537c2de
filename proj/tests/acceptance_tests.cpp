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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fail. Tolerances and time budgets are fixed here.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "golden_cases.hpp"
#include "teleop/avatar_controller.hpp"
#include "teleop/experiments.hpp"
#include "teleop/operator_controller.hpp"
#include "teleop/session.hpp"
#include "teleop/wrench_calib.hpp"
#include "test_support.hpp"

extern char** environ;

namespace teleop {
namespace {

namespace fs = std::filesystem;
using testing::sourcePath;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path workDir() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / ("teleop_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return d;
}

Scenario bundled(const std::string& name) { return Scenario::load(sourcePath("scenarios/" + name + ".scenario")); }

JointState midState(const ArmModel& m) {
  JointState s;
  s.positions = 0.5 * (m.lower_limits + m.upper_limits);
  return s;
}

// 1 ------------------------------------------------------------------------

Outcome limitField() {
  const ArmModel& arm = testing::operatorArm();
  const OperatorGains g = OperatorGains::defaultsFor(arm);
  const bool defaults = std::abs(g.t_p - 10.0 * M_PI / 180.0) < 1e-15 && std::abs(g.t_v - 40.0 * M_PI / 180.0) < 1e-15;
  double worst = 0.0;
  for (int i = 0; i < kJointCount; ++i) {
    for (double f : {1.0, 0.75, 0.5, 0.25}) {
      // Position term, from each side, at rest.
      for (int side : {-1, 1}) {
        JointState s = midState(arm);
        s.positions(i) = side < 0 ? arm.lower_limits(i) + f * g.t_p : arm.upper_limits(i) - f * g.t_p;
        const double d = side < 0 ? s.positions(i) - arm.lower_limits(i) : arm.upper_limits(i) - s.positions(i);
        const double expected = (d < g.t_p ? -side * g.beta_p * (1.0 / d - 1.0 / g.t_p) : 0.0);
        const TorqueVector tau = limitAvoidanceTorque(s, g, arm);
        worst = std::max(worst, std::abs(tau(i) - expected));
        for (int k = 0; k < kJointCount; ++k) {
          if (k != i) worst = std::max(worst, std::abs(tau(k)));
        }
      }
      // Velocity term, mid range, moving in either direction.
      for (int dir : {-1, 1}) {
        JointState s = midState(arm);
        s.velocities(i) = dir * (arm.velocity_limits(i) - f * g.t_v);
        const double d = arm.velocity_limits(i) - std::abs(s.velocities(i));
        const double expected = d < g.t_v ? -dir * g.beta_v * (1.0 / d - 1.0 / g.t_v) : 0.0;
        worst = std::max(worst, std::abs(limitAvoidanceTorque(s, g, arm)(i) - expected));
      }
    }
  }
  return {defaults && worst <= 1e-12, fmt("t_p = 10 deg, t_v = 40 deg/s; max deviation %.3g N m (tol 1e-12)", worst)};
}

// 2 ------------------------------------------------------------------------

Outcome alphaProfile() {
  const ArmModel& arm = testing::operatorArm();
  const OperatorGains g = OperatorGains::defaultsFor(arm);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const int joint = n % kJointCount;
    const double d = 1.5 * g.t_p * n / 999.0;
    JointState s = midState(arm);
    s.positions(joint) = arm.lower_limits(joint) + d;
    const double actual_d = s.positions(joint) - arm.lower_limits(joint);
    double expected;
    if (actual_d >= g.t_p) expected = 1.0;
    else if (actual_d <= 0.5 * g.t_p) expected = 0.0;
    else expected = (actual_d - 0.5 * g.t_p) / (0.5 * g.t_p);
    worst = std::max(worst, std::abs(alphaScale(s, g, arm)(joint) - expected));
  }
  return {worst <= 1e-12, fmt("1000 distances; max deviation %.3g (tol 1e-12)", worst)};
}

// 3 ------------------------------------------------------------------------

Outcome jacobianValidity() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  const double h = 1e-6;
  for (const ArmModel* arm : {&testing::operatorArm(), &testing::avatarArm()}) {
    for (int n = 0; n < 100; ++n) {
      const Vector7 q = testing::randomConfiguration(*arm, rng);
      const Jacobian jz = zeroJacobian(*arm, q);
      const Jacobian jb = bodyJacobian(*arm, q);
      const Matrix3 r = forwardKinematics(*arm, q).rotationMatrix();
      for (int i = 0; i < kJointCount; ++i) {
        Vector7 qp = q, qm = q;
        qp(i) += h;
        qm(i) -= h;
        const Pose6D a = forwardKinematics(*arm, qp), b = forwardKinematics(*arm, qm);
        Vector6 zero_fd, body_fd;
        zero_fd.head<3>() = (a.translation - b.translation) / (2 * h);
        zero_fd.tail<3>() = rotationVector(a.rotation * b.rotation.conjugate()) / (2 * h);
        body_fd.head<3>() = r.transpose() * zero_fd.head<3>();
        body_fd.tail<3>() = rotationVector(b.rotation.conjugate() * a.rotation) / (2 * h);
        worst = std::max({worst, (jz.col(i) - zero_fd).cwiseAbs().maxCoeff(),
                          (jb.col(i) - body_fd).cwiseAbs().maxCoeff()});
      }
    }
  }
  return {worst <= 1e-5, fmt("2 arms x 100 configurations; max column error %.3g (tol 1e-5)", worst)};
}

// 4 ------------------------------------------------------------------------

std::vector<CalibrationSample> syntheticSamples(const CalibrationProfile& truth, int n, double force_sigma,
                                                double torque_sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<CalibrationSample> out;
  for (int k = 0; k < n; ++k) {
    Vector3 g(gauss(rng), gauss(rng), gauss(rng));
    g.normalize();
    // Sensor reading of a point mass under gravity plus constant offsets.
    const Vector3 weight = truth.attached_mass * kStandardGravity * g;
    CalibrationSample s;
    s.gravity_in_sensor = g;
    s.mean_wrench.force = truth.force_bias + weight;
    s.mean_wrench.torque = truth.torque_bias + truth.center_of_mass.cross(weight);
    for (int a = 0; a < 3; ++a) s.mean_wrench.force(a) += force_sigma * gauss(rng);
    for (int a = 0; a < 3; ++a) s.mean_wrench.torque(a) += torque_sigma * gauss(rng);
    s.mean_wrench.frame = Frame::kSensor;
    out.push_back(s);
  }
  return out;
}

Outcome calibrationRoundTrip() {
  std::mt19937_64 rng(4);
  CalibrationProfile truth;
  truth.force_bias = Vector3(2.1, -1.3, 0.7);
  truth.torque_bias = Vector3(0.04, -0.08, 0.02);
  truth.attached_mass = 0.85;
  truth.center_of_mass = Vector3(0.004, -0.01, 0.065);
  const CalibrationResult clean = calibrate(syntheticSamples(truth, 20, 0.0, 0.0, rng));
  const double err = std::max({(clean.profile.force_bias - truth.force_bias).cwiseAbs().maxCoeff(),
                               (clean.profile.torque_bias - truth.torque_bias).cwiseAbs().maxCoeff(),
                               std::abs(clean.profile.attached_mass - truth.attached_mass),
                               (clean.profile.center_of_mass - truth.center_of_mass).cwiseAbs().maxCoeff()});
  double worst_mass = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const CalibrationResult r = calibrate(syntheticSamples(truth, 20, 0.05, 0.005, rng));
    worst_mass = std::max(worst_mass, std::abs(r.profile.attached_mass - truth.attached_mass));
  }
  return {err <= 1e-9 && worst_mass <= 0.02,
          fmt("noise-free error %.3g (tol 1e-9); worst mass error over 50 noisy trials %.4f kg (tol 0.02)", err,
              worst_mass)};
}

// 5 ------------------------------------------------------------------------

Outcome delayCompensation() {
  const Scenario s = bundled("delay");
  const fs::path op = workDir() / "delay.operator.csv", av = workDir() / "delay.avatar.csv";
  const RunResult run = runLoopback(s, {op, av, std::nullopt});
  if (run.failure) return {false, *run.failure};
  const DelayReport r = delayReport(TraceTable::load(op), TraceTable::load(av));
  const double mirror_ms = 1e3 * r.mirrorLag(), telemetry_ms = 1e3 * r.telemetryLag();
  // Signed lags: a negative mirror lag means the mirror leads the avatar.
  const bool pass = s.back.delay == 0.2 && mirror_ms <= 2.0 && telemetry_ms >= 180.0;
  return {pass, fmt("injected %.0f ms; mirror lag %+.0f ms (<= +2, negative = leads); telemetry lag %+.0f ms (>= 180)",
                    1e3 * s.back.delay, mirror_ms, telemetry_ms)};
}

// 6 ------------------------------------------------------------------------

Outcome assistEffect() {
  const AssistComparison c = assistComparison(bundled("sweep"), false);
  if (c.on.failure || c.off.failure) return {false, "run failed"};
  return {c.on.op.rms_human_force < c.off.op.rms_human_force,
          fmt("RMS human force %.3f N with assist, %.3f N without", c.on.op.rms_human_force,
              c.off.op.rms_human_force)};
}

// 7 ------------------------------------------------------------------------

Outcome workspaceStudy() {
  const ArmModel& arm = testing::operatorArm();
  const Quaternion nominal = (arm.mount * forwardKinematics(arm, arm.nullspace_rest_pose)).rotation;
  const auto poses = syntheticSeatedPoses(PoseSetConfig{}, nominal);
  const WorkspaceReport r = workspaceAnalysis(arm, poses, defaultMountGrid(arm.mount));
  const double base = 100.0 * r.baseline().fraction(), best = 100.0 * r.bestResult().fraction();
  return {best >= base + 10.0, fmt("%zu poses; baseline %.1f %%, best '%s' %.1f %% (needs >= baseline + 10)",
                                   poses.size(), base, r.bestResult().candidate.label.c_str(), best)};
}

// 8 ------------------------------------------------------------------------

Outcome impedanceBehavior() {
  const ArmModel& arm = testing::avatarArm();
  AvatarController ctl(arm, {}, arm.nullspace_rest_pose);
  SimArm sim(arm, arm.nullspace_rest_pose);
  HandFrameCommand goal{sim.handPose(), 0.0};
  goal.pose.translation += Vector3(0.05, -0.03, 0.04);
  const Pose6D start = forwardKinematics(arm, arm.nullspace_rest_pose);
  const Pose6D goal_base = arm.mount.inverse() * goal.pose;

  double fade_dev = 0.0;
  double settled_at = -1.0;
  int tracking_tick = -1;
  for (int k = 0; k < 5000; ++k) {
    const double t = k * 1e-3;
    const AvatarOutput out = ctl.step(sim.state(), k % 10 == 0 ? std::optional(goal) : std::nullopt, {}, t);
    const double p = std::min(1.0, t / 3.0);
    const Vector3 linear = start.translation + p * (goal_base.translation - start.translation);
    fade_dev = std::max(fade_dev, (out.commanded_pose.translation - linear).norm());
    if (out.mode == AvatarMode::kTracking && tracking_tick < 0) tracking_tick = k;
    sim.integrate(out.torque);
    const double err = (sim.handPose().translation - goal.pose.translation).norm();
    if (err < 2e-3) {
      if (settled_at < 0) settled_at = sim.state().timestamp;
    } else {
      settled_at = -1.0;
    }
  }
  const bool converged = settled_at >= 0.0 && settled_at < 5.0;

  // Latch: the measured force ramps 1 N per tick through the 50 N threshold.
  AvatarController latch(arm, {}, arm.nullspace_rest_pose);
  JointState s;
  s.positions = arm.nullspace_rest_pose;
  int crossing = -1, stop = -1;
  bool zero_torque = false;
  for (int k = 0; k < 100 && stop < 0; ++k) {
    Wrench w;
    w.force = Vector3(0, 0, 20.0 + k);
    if (crossing < 0 && w.force.norm() > 50.0) crossing = k;
    const AvatarOutput out = latch.step(s, std::nullopt, w, k * 1e-3);
    if (out.safety_stop) {
      stop = k;
      zero_torque = out.torque.isZero(0.0);
    }
  }
  const bool latched = crossing >= 0 && stop >= 0 && stop - crossing <= 1 && zero_torque;
  const bool fade_ok = fade_dev <= 1e-6 && std::abs(tracking_tick - 3000) <= 1;
  return {converged && fade_ok && latched,
          fmt("settled below 2 mm at %.3f s (< 5); fade deviation from linear %.2g m (tol 1e-6), tracking at "
              "tick %d; stop %d tick(s) after crossing",
              settled_at, fade_dev, tracking_tick, stop - crossing)};
}

// 9 ------------------------------------------------------------------------

Outcome determinism() {
  std::string detail;
  bool pass = true;
  for (const char* name : {"delay", "grasp", "limits", "safety", "sweep", "unstable"}) {
    const Scenario s = bundled(name);
    std::string sha[2][2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path op = workDir() / fmt("det_%s_%d.op.csv", name, rep);
      const fs::path av = workDir() / fmt("det_%s_%d.av.csv", name, rep);
      runLoopback(s, {op, av, std::nullopt});
      sha[rep][0] = sha256File(op);
      sha[rep][1] = sha256File(av);
    }
    const bool same = sha[0][0] == sha[1][0] && sha[0][1] == sha[1][1];
    pass = pass && same;
    detail += fmt("%s%s %s", detail.empty() ? "" : ", ", name, same ? "identical" : "DIFFER");
  }
  const Scenario g = bundled("grasp");
  detail += fmt(" (grasp jitter %.0f ms, drop %.2f)", 1e3 * g.forward.jitter, g.forward.drop);
  return {pass, detail};
}

// 10 -----------------------------------------------------------------------

pid_t spawn(const std::vector<std::string>& args, const fs::path& log) {
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  return rc == 0 ? pid : -1;
}

int waitExit(pid_t pid) {
  int status = 0;
  if (::waitpid(pid, &status, 0) < 0) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

Outcome protocol() {
  std::mt19937_64 rng(10);
  int lossless = 0;
  for (int i = 0; i < 10000; ++i) {
    const LinkMessage m = testing::randomMessage(rng);
    const DecodeResult r = decode(encode(m));
    if (std::holds_alternative<LinkMessage>(r) && std::get<LinkMessage>(r) == m) ++lossless;
  }
  const auto golden = testing::goldenFixtures();
  int golden_ok = 0;
  const auto cases = testing::goldenCases();
  for (const auto& [name, msg] : cases) {
    if (golden.count(name) && encode(msg) == golden.at(name)) ++golden_ok;
  }

  // Two processes over TCP against the in-process loopback.
  const fs::path scenario = sourcePath("scenarios/sweep.scenario");
  const Scenario s = Scenario::load(scenario);
  const bool zero_latency = s.forward.delay == 0 && s.back.delay == 0 && s.forward.jitter == 0 && s.back.jitter == 0;
  const fs::path lop = workDir() / "loop.op.csv", lav = workDir() / "loop.av.csv";
  runLoopback(s, {lop, lav, std::nullopt});
  const fs::path top = workDir() / "tcp.op.csv", tav = workDir() / "tcp.av.csv", port_file = workDir() / "port";
  fs::remove(port_file);
  const pid_t avatar = spawn({TELEOP_AVATAR_NODE, "--listen", "127.0.0.1:0", "--port-file", port_file.string(),
                              "--scenario", scenario.string(), "--trace", tav.string()},
                             workDir() / "avatar_node.log");
  std::string port;
  for (int i = 0; i < 500 && avatar > 0; ++i) {
    std::ifstream in(port_file);
    if (std::getline(in, port) && !port.empty() && in.good()) break;
    port.clear();
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  bool tcp_same = false;
  int av_exit = -1, op_exit = -1;
  if (!port.empty()) {
    const pid_t op = spawn({TELEOP_OPERATOR_NODE, "--connect", "127.0.0.1:" + port, "--scenario", scenario.string(),
                            "--trace", top.string()},
                           workDir() / "operator_node.log");
    op_exit = op > 0 ? waitExit(op) : -1;
  }
  if (avatar > 0) {
    if (port.empty()) ::kill(avatar, SIGTERM);
    av_exit = waitExit(avatar);
  }
  if (op_exit == 0 && av_exit == 0) {
    tcp_same = sha256File(top) == sha256File(lop) && sha256File(tav) == sha256File(lav);
  }
  return {lossless == 10000 && golden_ok == static_cast<int>(cases.size()) && zero_latency && tcp_same,
          fmt("%d/10000 round trips; %d/%zu golden fixtures; TCP run exit %d/%d, traces %s loopback", lossless,
              golden_ok, cases.size(), op_exit, av_exit, tcp_same ? "equal" : "DIFFER from")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace teleop

int main() {
  using namespace teleop;
  const Criterion criteria[] = {
      {1, "limit field", 1.0, limitField},
      {2, "alpha profile", 1.0, alphaProfile},
      {3, "jacobian validity", 5.0, jacobianValidity},
      {4, "calibration round trip", 10.0, calibrationRoundTrip},
      {5, "delay compensation", 30.0, delayCompensation},
      {6, "assist effect", 30.0, assistEffect},
      {7, "workspace study", 60.0, workspaceStudy},
      {8, "impedance behavior", 30.0, impedanceBehavior},
      {9, "determinism", 60.0, determinism},
      {10, "protocol", 30.0, protocol},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %2d %s: %s; %s (%.2f s, budget %.0f s%s)\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", OVER");
    std::fflush(stdout);
  }
  std::error_code ec;
  fs::remove_all(workDir(), ec);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
