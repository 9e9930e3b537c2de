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

#include <gtest/gtest.h>

#include <fstream>

#include "teleop/experiments.hpp"
#include "teleop/session.hpp"
#include "teleop/transport.hpp"
#include "test_support.hpp"

namespace teleop {
namespace {

namespace fs = std::filesystem;
using testing::sourcePath;

fs::path scratchDir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("teleop_session_test_" + std::to_string(::getpid())) / name;
  fs::create_directories(d);
  return d;
}

Scenario bundled(const std::string& name) { return Scenario::load(sourcePath("scenarios/" + name + ".scenario")); }

std::string arms() {
  return "operator.arm = " + sourcePath("config/panda_operator.arm").string() +
         "\navatar.arm = " + sourcePath("config/panda_avatar.arm").string() + "\n";
}

Scenario parseScenario(const std::string& body) {
  return Scenario::fromConfig(KeyValueFile::parse(arms() + body, "test.scenario"));
}

// ---------------------------------------------------------------- scenario files

TEST(ScenarioFile, BundledScenariosLoad) {
  for (const char* name : {"delay", "grasp", "limits", "safety", "sweep", "unstable"}) {
    SCOPED_TRACE(name);
    const Scenario s = bundled(name);
    EXPECT_EQ(s.name, name);
    EXPECT_GT(s.ticks(), 0u);
  }
  const Scenario g = bundled("grasp");
  EXPECT_DOUBLE_EQ(g.back.delay, 0.2);
  EXPECT_DOUBLE_EQ(g.forward.jitter, 0.002);
  EXPECT_DOUBLE_EQ(g.forward.drop, 0.01);
  EXPECT_EQ(g.hand_mapping.actuators(), 9);
  EXPECT_EQ(g.ticks(), 12000u);
}

TEST(ScenarioFile, DefaultsApply) {
  const Scenario s = parseScenario("");
  EXPECT_DOUBLE_EQ(s.duration, 10.0);
  EXPECT_EQ(s.forward.delay, 0.0);
  EXPECT_TRUE(s.assist);
  EXPECT_EQ(s.avatar_start, s.avatar_arm.nullspace_rest_pose);
}

TEST(ScenarioFile, UnknownKeyIsRejectedWithItsLine) {
  try {
    parseScenario("duration = 2\nlink.fowrard.delay_ms = 5\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("link.fowrard.delay_ms"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("test.scenario:4"), std::string::npos) << e.what();
  }
}

TEST(ScenarioFile, BadValuesAreRejected) {
  const char* bad[] = {
      "duration = -1\n",
      "duration = 0\n",
      "seed = 1.5\n",
      "intent.waypoint = 1 0 0 0\n",
      "intent.waypoint = 2 0 0 0 0 0 0\nintent.waypoint = 1 0 0 0 0 0 0\n",
      "avatar.start = 0 0 0 0 0 0 0\n",  // joint 4 upper limit is below zero
      "operator.goal_frame = sideways\n",
      "link.forward.drop = 1.0\n",
      "link.return.delay_ms = -3\n",
      "avatar.wrench_event = 2 1 0 0 0 0 0 0\n",
      "hand.brake_threshold = 1 2\n",
      "operator.haptic_scale = 1.5\n",
      "duration = ten\n",
  };
  for (const char* text : bad) {
    SCOPED_TRACE(text);
    EXPECT_ANY_THROW(parseScenario(text));
  }
}

TEST(ScenarioFile, SeedReseedsEveryStream) {
  Scenario a = bundled("grasp");
  Scenario b = a;
  b.applySeed(a.seed + 1);
  EXPECT_NE(a.forward.seed, b.forward.seed);
  EXPECT_NE(a.back.seed, b.back.seed);
  EXPECT_NE(a.operator_sensor.seed, b.operator_sensor.seed);
  EXPECT_NE(a.avatar_sensor.seed, b.avatar_sensor.seed);
}

// ---------------------------------------------------------------- sessions

struct Traces {
  RunResult result;
  std::string op_sha, av_sha;
  fs::path op, av;
};

Traces traced(const Scenario& s, const std::string& tag, std::uint64_t ticks) {
  Traces t;
  const fs::path d = scratchDir(tag);
  t.op = d / "op.csv";
  t.av = d / "av.csv";
  t.result = runLoopback(s, {t.op, t.av, ticks});
  t.op_sha = sha256File(t.op);
  t.av_sha = sha256File(t.av);
  return t;
}

TEST(Session, RepeatRunsAreByteIdentical) {
  const Scenario s = bundled("grasp");  // jitter and drop on the command path
  const Traces a = traced(s, "rep_a", 4000);
  const Traces b = traced(s, "rep_b", 4000);
  EXPECT_FALSE(a.result.failure);
  EXPECT_EQ(a.op_sha, b.op_sha);
  EXPECT_EQ(a.av_sha, b.av_sha);
  EXPECT_GT(a.result.av.incoming.dropped, 0u);
  Scenario other = s;
  other.applySeed(s.seed + 100);
  const Traces c = traced(other, "rep_c", 4000);
  EXPECT_NE(a.av_sha, c.av_sha);
}

TEST(Session, TraceHeadersCarryTheDocumentedColumns) {
  const Traces t = traced(bundled("sweep"), "cols", 5);
  const TraceTable op = TraceTable::load(t.op);
  const TraceTable av = TraceTable::load(t.av);
  EXPECT_EQ(op.rows(), 5u);
  EXPECT_EQ(av.rows(), 5u);
  for (const char* c : {"tick", "t", "q1", "tau_la7", "q_hat3", "v_hat2", "telemetry_q1", "hold", "human_fx",
                        "f_av_tz", "goal_qz", "brake5"}) {
    EXPECT_TRUE(op.has(c)) << c;
  }
  for (const char* c : {"tick", "mode", "progress", "tau_cmd1", "f_ext_fz", "safety_stop", "finger9", "current1"}) {
    EXPECT_TRUE(av.has(c)) << c;
  }
  EXPECT_THROW(op.column("nope"), std::runtime_error);
}

TEST(Session, ForkedRunMatchesLoopback) {
  const Scenario s = bundled("grasp");
  const Traces loop = traced(s, "loop", 2500);
  const fs::path d = scratchDir("forked");
  const ForkedRunResult f = runForked(s, {d / "op.csv", d / "av.csv", 2500});
  EXPECT_FALSE(f.failure);
  EXPECT_EQ(f.avatar_exit, 0);
  EXPECT_EQ(f.ticks_run, 2500u);
  EXPECT_EQ(sha256File(d / "op.csv"), loop.op_sha);
  EXPECT_EQ(sha256File(d / "av.csv"), loop.av_sha);
}

TEST(Session, UnstableGainsReportABlowupWithItsTick) {
  const RunResult r = runLoopback(bundled("unstable"));
  ASSERT_TRUE(r.failure);
  EXPECT_NE(r.failure->find("NumericalBlowup"), std::string::npos);
  EXPECT_NE(r.failure->find("tick " + std::to_string(r.ticks_run)), std::string::npos) << *r.failure;
  EXPECT_LT(r.ticks_run, bundled("unstable").ticks());
}

TEST(Session, ZeroDelayTelemetryIsOneTickOld) {
  Scenario s = bundled("delay");
  s.back = LinkConfig{};
  s.forward = LinkConfig{};
  const Traces t = traced(s, "zero", 6000);
  const DelayReport r = delayReport(TraceTable::load(t.op), TraceTable::load(t.av), 300);
  // The avatar runs half a tick after the operator, so its start-of-tick
  // sample reaches the operator on the following tick.
  EXPECT_EQ(r.telemetry_lag_ticks, 1);
}

TEST(Session, ReturnDelayShowsUpInTheTelemetryLag) {
  Scenario s = bundled("delay");
  s.back.delay = 0.1;
  const Traces t = traced(s, "hundred", 6000);
  const DelayReport r = delayReport(TraceTable::load(t.op), TraceTable::load(t.av), 300);
  EXPECT_GE(r.telemetry_lag_ticks, 100);
  EXPECT_LE(r.telemetry_lag_ticks, 101);
  EXPECT_LT(r.mirror_lag_ticks, r.telemetry_lag_ticks - 90);
}

TEST(Session, StillOperatorFeelsAlmostNothing) {
  Scenario s = parseScenario("duration = 2\n");
  const RunResult r = runLoopback(s);
  EXPECT_FALSE(r.failure);
  EXPECT_LT(r.op.rms_human_force, 0.5);
  EXPECT_EQ(r.av.safety_stops, 0u);
}

TEST(Session, BandwidthCountsBothDirections) {
  const RunResult r = runLoopback(bundled("sweep"), {{}, {}, 1000});
  // No hand mapping here: goal and telemetry every tick, wrench at the 500 Hz sensor rate.
  const double per_tick = 79 + 79 + 71 / 2.0;
  EXPECT_NEAR(r.bandwidth(), per_tick * 1000.0, 0.01 * per_tick * 1000.0);
}

// ---------------------------------------------------------------- experiments

TEST(Workspace, ForwardKinematicsImagesAreAllReached) {
  const ArmModel& arm = testing::operatorArm();
  std::mt19937_64 rng(21);
  std::vector<Pose6D> poses;
  for (int i = 0; i < 100; ++i) {
    poses.push_back(arm.mount * forwardKinematics(arm, testing::randomConfiguration(arm, rng, 0.05)));
  }
  const WorkspaceReport r = workspaceAnalysis(arm, poses, {{"baseline", arm.mount}}, {16, 1, 1});
  EXPECT_EQ(r.baseline().reached, 100);
  EXPECT_DOUBLE_EQ(r.baseline().fraction(), 1.0);
}

TEST(Workspace, FacingAwayReachesAlmostNothing) {
  const ArmModel& arm = testing::operatorArm();
  PoseSetConfig cfg;
  cfg.count = 100;
  const auto poses = syntheticSeatedPoses(cfg, forwardKinematics(arm, arm.nullspace_rest_pose).rotation);
  Pose6D away(Vector3(3.0, 0, 0), fromRpy(0, 0, M_PI));
  const WorkspaceReport r = workspaceAnalysis(arm, poses, {{"baseline", arm.mount}, {"away", away}}, {4, 1, 1});
  EXPECT_LT(r.results[1].fraction(), 0.1);
  EXPECT_EQ(r.best, 0u);
}

TEST(Workspace, EmptyInputsThrow) {
  const ArmModel& arm = testing::operatorArm();
  EXPECT_THROW(workspaceAnalysis(arm, {}, {{"b", arm.mount}}), std::invalid_argument);
  EXPECT_THROW(workspaceAnalysis(arm, {Pose6D{}}, {}), std::invalid_argument);
  const fs::path empty = scratchDir("ws") / "empty.csv";
  std::ofstream(empty) << "x,y,z,qw,qx,qy,qz\n";
  EXPECT_THROW(loadPoseSet(empty), std::invalid_argument);
}

TEST(Workspace, PoseSetFileRoundTrip) {
  PoseSetConfig cfg;
  cfg.count = 25;
  const auto poses = syntheticSeatedPoses(cfg, Quaternion::Identity());
  const fs::path p = scratchDir("ws") / "poses.csv";
  {
    std::ofstream out(p);
    writePoseSet(out, poses);
  }
  const auto back = loadPoseSet(p);
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_LT((back[i].translation - poses[i].translation).norm(), 1e-10);
    EXPECT_NEAR(std::abs(back[i].rotation.dot(poses[i].rotation)), 1.0, 1e-10);
  }
  std::ofstream(p) << "1,2,3\n";
  EXPECT_THROW(loadPoseSet(p), std::runtime_error);
}

TEST(Workspace, SyntheticPosesStayInTheShell) {
  PoseSetConfig cfg;
  const auto poses = syntheticSeatedPoses(cfg, Quaternion::Identity());
  ASSERT_EQ(poses.size(), 400u);
  for (const Pose6D& p : poses) {
    const double r = (p.translation - cfg.shoulder).norm();
    EXPECT_GE(r, cfg.radius_min - 1e-12);
    EXPECT_LE(r, cfg.radius_max + 1e-12);
    EXPECT_LE(rotationVector(p.rotation).norm(), cfg.orientation_spread + 1e-12);
  }
}

TEST(Workspace, DefaultGridStartsWithTheBaseline) {
  const Pose6D base(Vector3(1, 2, 3));
  const auto grid = defaultMountGrid(base);
  EXPECT_EQ(grid.size(), 49u);
  EXPECT_EQ(grid.front().label, "baseline");
  EXPECT_EQ(grid.front().mount.translation, base.translation);
}

TEST(CrossCorrelation, RecoversAKnownShift) {
  std::vector<Vector7> y(2000), x(2000);
  for (int k = 0; k < 2000; ++k) {
    y[k] = Vector7::Constant(std::sin(0.01 * k) + 0.3 * std::sin(0.037 * k));
    x[k] = Vector7::Constant(std::sin(0.01 * (k - 37)) + 0.3 * std::sin(0.037 * (k - 37)));
  }
  EXPECT_EQ(crossCorrelationLag(x, y, 200), 37);
  EXPECT_EQ(crossCorrelationLag(y, x, 200), -37);
  EXPECT_EQ(crossCorrelationLag(y, y, 200), 0);
  EXPECT_THROW(crossCorrelationLag({Vector7::Zero()}, {Vector7::Zero()}, 5), std::invalid_argument);
}

}  // namespace
}  // namespace teleop
