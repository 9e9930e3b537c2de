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

#include <Eigen/LU>
#include <Eigen/QR>

#include "teleop/avatar_controller.hpp"
#include "teleop/predictive_mirror.hpp"
#include "teleop/sim_world.hpp"
#include "test_support.hpp"

namespace teleop {
namespace {

using testing::avatarArm;

constexpr double kDt = 1e-3;

Vector7 nearLowerLimit() {
  Vector7 q = avatarArm().nullspace_rest_pose;
  q(3) = avatarArm().lower_limits(3) + 0.04;
  q(5) = avatarArm().upper_limits(5) - 0.06;
  return q;
}

HandFrameCommand goalAt(const Vector7& q, double t = 0.0) {
  return {avatarArm().mount * forwardKinematics(avatarArm(), q), t};
}

// ---------------------------------------------------------------- mirror

TEST(Mirror, SyncRemovesTheAnchorFraction) {
  AvatarMirror m(avatarArm(), avatarArm().nullspace_rest_pose);
  JointState meas;
  meas.positions = avatarArm().nullspace_rest_pose + Vector7::Constant(0.1);
  m.sync(meas);
  const Vector7 err = meas.positions - m.qHat();
  for (int i = 0; i < kJointCount; ++i) EXPECT_NEAR(err(i), 0.1 * (1.0 - 0.2), 1e-12);
  m.sync(meas);
  EXPECT_NEAR((meas.positions - m.qHat())(0), 0.1 * 0.8 * 0.8, 1e-12);
}

TEST(Mirror, SyncAtTheEstimateChangesNothing) {
  AvatarMirror m(avatarArm(), avatarArm().nullspace_rest_pose);
  JointState meas;
  meas.positions = m.qHat();
  m.sync(meas);
  EXPECT_EQ(m.qHat(), avatarArm().nullspace_rest_pose);
}

TEST(Mirror, PredictLandsOnTheGoal) {
  const Vector7 q0 = avatarArm().nullspace_rest_pose;
  AvatarMirror m(avatarArm(), q0);
  Vector7 target_q = q0;
  target_q(0) += 0.05;
  target_q(3) += 0.08;
  const HandFrameCommand goal = goalAt(target_q);
  m.predict(goal, kDt);
  EXPECT_FALSE(m.diagnostics().ik_failed);
  const Pose6D reached = avatarArm().mount * forwardKinematics(avatarArm(), m.qHat());
  EXPECT_LT((reached.translation - goal.pose.translation).norm(), 1e-4);
  EXPECT_LT(rotationVector(reached.rotation * goal.pose.rotation.conjugate()).norm(), 1e-3);
}

TEST(Mirror, StaticGoalGivesZeroVelocity) {
  const Vector7 q0 = avatarArm().nullspace_rest_pose;
  AvatarMirror m(avatarArm(), q0);
  for (int k = 0; k < 50; ++k) m.predict(goalAt(q0), kDt);
  EXPECT_EQ(m.vHat(), Vector7::Zero());
}

TEST(Mirror, VelocityFollowsAMovingGoal) {
  Vector7 q = avatarArm().nullspace_rest_pose;
  AvatarMirror m(avatarArm(), q);
  const double rate = 0.2;  // rad/s on joint 1 only
  for (int k = 0; k < 1000; ++k) {
    q(0) += rate * kDt;
    m.predict(goalAt(q), kDt);
  }
  // The chain is redundant, so only the hand motion is pinned; joint 1 dominates.
  const Jacobian j = zeroJacobian(avatarArm(), m.qHat());
  const Jacobian j_true = zeroJacobian(avatarArm(), q);
  Vector7 e1 = Vector7::Zero();
  e1(0) = rate;
  const Vector6 expected = j_true * e1;
  EXPECT_LT((j * m.vHat() - expected).norm(), 0.1 * expected.norm());
}

TEST(Mirror, HoldsWhenTelemetryIsStale) {
  AvatarMirror m(avatarArm(), nearLowerLimit());
  JointState meas;
  meas.positions = nearLowerLimit();
  meas.timestamp = 1.0;
  m.sync(meas);
  const OperatorGains g = OperatorGains::defaultsFor(avatarArm());
  const Jacobian jo = bodyJacobian(avatarArm(), nearLowerLimit());
  EXPECT_NE(m.avatarLimitTorque(jo, g, 1.4, kDt), TorqueVector::Zero());
  EXPECT_FALSE(m.hold());
  EXPECT_EQ(m.avatarLimitTorque(jo, g, 1.5 + 1e-9, kDt), TorqueVector::Zero());
  EXPECT_TRUE(m.hold());
}

TEST(Mirror, SameArmProjectsOntoTheRangeOfTheJacobianTranspose) {
  MirrorConfig cfg;
  cfg.slew_rate = 1e12;
  AvatarMirror m(avatarArm(), nearLowerLimit(), cfg);
  const OperatorGains g = OperatorGains::defaultsFor(avatarArm());
  const Jacobian j = bodyJacobian(avatarArm(), nearLowerLimit());
  const TorqueVector tau = m.avatarLimitTorque(j, g, 0.0, kDt);
  const TorqueVector model = m.diagnostics().model_torque;
  ASSERT_GT(model.norm(), 1.0);
  // Orthogonal projector onto range(J^T) built from a QR factorisation.
  const Eigen::HouseholderQR<Eigen::Matrix<double, 7, 6>> qr(j.transpose());
  const Eigen::Matrix<double, 7, 6> basis = qr.householderQ() * Eigen::Matrix<double, 7, 6>::Identity();
  const TorqueVector expected = basis * (basis.transpose() * model);
  EXPECT_LT((tau - expected).norm(), 1e-9 * model.norm());
  EXPECT_LT((basis.transpose() * (model - tau)).norm(), 1e-9 * model.norm());
}

TEST(Mirror, TorqueInTheRangeSurvivesUnchanged) {
  MirrorConfig cfg;
  cfg.slew_rate = 1e12;
  AvatarMirror m(avatarArm(), nearLowerLimit(), cfg);
  OperatorGains g = OperatorGains::defaultsFor(avatarArm());
  const Jacobian j = bodyJacobian(avatarArm(), nearLowerLimit());
  m.avatarLimitTorque(j, g, 0.0, kDt);
  const Vector6 w = m.diagnostics().hand_wrench;
  // Mapping the recovered hand wrench through J^T again reproduces tau_la.
  EXPECT_LT((j.transpose() * w - m.lastTorque()).norm(), 1e-9);
}

TEST(Mirror, SlewLimitsTheTorqueStep) {
  AvatarMirror m(avatarArm(), nearLowerLimit());
  const OperatorGains g = OperatorGains::defaultsFor(avatarArm());
  const Jacobian j = bodyJacobian(avatarArm(), nearLowerLimit());
  TorqueVector prev = TorqueVector::Zero();
  for (int k = 0; k < 20; ++k) {
    const TorqueVector tau = m.avatarLimitTorque(j, g, k * kDt, kDt);
    EXPECT_LE((tau - prev).cwiseAbs().maxCoeff(), 50.0 * kDt + 1e-12);
    prev = tau;
  }
  EXPECT_NEAR(prev.cwiseAbs().maxCoeff(), 20 * 50.0 * kDt, 1e-12);
}

TEST(Mirror, RejectsNonPositiveDt) {
  AvatarMirror m(avatarArm(), avatarArm().nullspace_rest_pose);
  EXPECT_THROW(m.predict(goalAt(avatarArm().nullspace_rest_pose), 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------- avatar

TEST(Impedance, DampingIsCriticalAgainstTheTaskInertia) {
  const ArmModel& arm = avatarArm();
  const ImpedanceGains g = ImpedanceGains::critical(arm, 400.0, 30.0);
  const Jacobian j = zeroJacobian(arm, arm.nullspace_rest_pose);
  Matrix7 mass = Matrix7::Zero();
  for (int i = 0; i < 7; ++i) mass(i, i) = arm.effective_inertia(i);
  const Matrix6 lambda = (j * mass.fullPivLu().inverse() * j.transpose()).fullPivLu().inverse();
  for (int i = 0; i < 6; ++i) {
    const double k = i < 3 ? 400.0 : 30.0;
    EXPECT_DOUBLE_EQ(g.stiffness(i, i), k);
    EXPECT_NEAR(g.damping(i, i), 2.0 * std::sqrt(k * lambda(i, i)), 1e-9 * g.damping(i, i));
    // zeta = d / (2 sqrt(k m)) == 1
    EXPECT_NEAR(g.damping(i, i) / (2.0 * std::sqrt(k * lambda(i, i))), 1.0, 1e-9);
  }
}

TEST(Impedance, DampingOnlyDissipates) {
  std::mt19937_64 rng(3);
  const ImpedanceGains g = ImpedanceGains::critical(avatarArm(), 400.0, 30.0);
  for (int n = 0; n < 200; ++n) {
    const Vector7 q = testing::randomConfiguration(avatarArm(), rng);
    const Vector7 qd = testing::randomVector7(rng);
    const TorqueVector tau = impedanceTorque(zeroJacobian(avatarArm(), q), g, Vector6::Zero(), qd);
    EXPECT_LE(tau.dot(qd), 1e-12);
  }
}

TEST(Impedance, SpringPullsTowardTheGoal) {
  const ImpedanceGains g = ImpedanceGains::critical(avatarArm(), 400.0, 30.0);
  const Vector7 q = avatarArm().nullspace_rest_pose;
  const Jacobian j = zeroJacobian(avatarArm(), q);
  Vector6 e = Vector6::Zero();
  e(0) = 0.01;  // hand is 1 cm past the goal along x
  const TorqueVector tau = impedanceTorque(j, g, e, Vector7::Zero());
  const Vector6 wrench_dir = j * tau;  // instantaneous hand motion direction under unit mobility
  EXPECT_LT(wrench_dir(0), 0.0);
  // Loop form of J^T (-K e).
  for (int i = 0; i < 7; ++i) {
    double s = 0.0;
    for (int r = 0; r < 6; ++r) s += j(r, i) * -g.stiffness(r, r) * e(r);
    EXPECT_NEAR(tau(i), s, 1e-12);
  }
}

TEST(Impedance, RejectsAsymmetricGains) {
  ImpedanceGains g;
  g.stiffness(0, 1) = 1.0;
  EXPECT_THROW(g.validate(), ConfigError);
  ImpedanceGains neg;
  neg.damping(2, 2) = -1.0;
  EXPECT_THROW(neg.validate(), ConfigError);
}

struct AvatarRig {
  AvatarController ctl;
  JointState s;
  explicit AvatarRig(AvatarConfig cfg = {})
      : ctl(avatarArm(), cfg, avatarArm().nullspace_rest_pose) {
    s.positions = avatarArm().nullspace_rest_pose;
  }
  AvatarOutput step(double t, std::optional<HandFrameCommand> goal = std::nullopt, Wrench w = {}) {
    return ctl.step(s, goal, w, t);
  }
};

HandFrameCommand offsetGoal(const Vector3& d) {
  HandFrameCommand g = goalAt(avatarArm().nullspace_rest_pose);
  g.pose.translation += d;
  return g;
}

TEST(Avatar, StartsHoldingTheInitialPose) {
  AvatarRig rig;
  const AvatarOutput out = rig.step(0.0);
  EXPECT_EQ(out.mode, AvatarMode::kHolding);
  EXPECT_LT(out.pose_error.norm(), 1e-12);
  EXPECT_LT(out.torque.norm(), 1e-9);
}

TEST(Avatar, FadeIsLinearOverThreeSeconds) {
  AvatarRig rig;
  const HandFrameCommand goal = offsetGoal({0.05, 0, 0});
  const Pose6D start = forwardKinematics(avatarArm(), avatarArm().nullspace_rest_pose);
  const Pose6D goal_base = avatarArm().mount.inverse() * goal.pose;
  double worst = 0.0;
  double worst_pose = 0.0;
  int tracking_at = -1;
  for (int k = 0; k <= 3500; ++k) {
    const double t = 1.0 + k * kDt;
    const AvatarOutput out = rig.step(t, k % 10 == 0 ? std::optional(goal) : std::nullopt);
    const double expected = std::min(1.0, k * kDt / 3.0);
    worst = std::max(worst, std::abs(out.progress - expected));
    const Vector3 expected_x = start.translation + expected * (goal_base.translation - start.translation);
    worst_pose = std::max(worst_pose, (out.commanded_pose.translation - expected_x).norm());
    if (out.mode == AvatarMode::kTracking && tracking_at < 0) tracking_at = k;
    if (k > 0 && k < 2999) {
      EXPECT_EQ(out.mode, AvatarMode::kInitializing) << k;
    }
    // Fade split: the two impedance shares always add to the full term.
    EXPECT_NEAR((out.terms.cmd - expected * (out.terms.cmd + out.terms.init)).norm(), 0.0, 1e-9);
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_LE(worst_pose, 1e-6);
  EXPECT_NEAR(tracking_at, 3000, 1);
}

TEST(Avatar, ZeroFadeJumpsStraightToTracking) {
  AvatarConfig cfg;
  cfg.fade_duration = 0.0;
  AvatarRig rig(cfg);
  const AvatarOutput out = rig.step(0.0, offsetGoal({0.02, 0, 0}));
  EXPECT_EQ(out.mode, AvatarMode::kTracking);
  EXPECT_DOUBLE_EQ(out.progress, 1.0);
}

TEST(Avatar, StaticGoalConvergesInTheSimulator) {
  AvatarController ctl(avatarArm(), {}, avatarArm().nullspace_rest_pose);
  SimArm arm(avatarArm(), avatarArm().nullspace_rest_pose);
  const HandFrameCommand goal = offsetGoal({0.04, -0.03, 0.05});
  double t = 0.0;
  for (int k = 0; k < 5000; ++k) {
    const AvatarOutput out = ctl.step(arm.state(), k % 10 == 0 ? std::optional(goal) : std::nullopt, {}, t);
    arm.integrate(out.torque);
    t = arm.state().timestamp;
  }
  const double err = (arm.handPose().translation - goal.pose.translation).norm();
  EXPECT_LT(err, 2e-3);
  EXPECT_EQ(ctl.state().mode, AvatarMode::kTracking);
}

TEST(Avatar, SafetyStopLatchesOnTheSameTick) {
  AvatarConfig cfg;
  cfg.auto_restart = false;
  AvatarRig rig(cfg);
  rig.step(0.0, offsetGoal({0.02, 0, 0}));
  Wrench push;
  push.force = Vector3(0, 0, 50.5);
  const AvatarOutput out = rig.step(0.001, std::nullopt, push);
  EXPECT_TRUE(out.safety_stop);
  EXPECT_EQ(out.mode, AvatarMode::kStopped);
  EXPECT_EQ(out.torque, TorqueVector::Zero());
  // Stays down with no load, and only an explicit restart leaves.
  const AvatarOutput later = rig.step(5.0);
  EXPECT_EQ(later.mode, AvatarMode::kStopped);
  EXPECT_FALSE(later.safety_stop);
  rig.ctl.restart(rig.s.positions);
  EXPECT_EQ(rig.step(5.001).mode, AvatarMode::kHolding);
}

TEST(Avatar, TorqueThresholdAlsoStops) {
  AvatarRig rig;
  Wrench w;
  w.torque = Vector3(6, 6, 6);  // norm 10.4
  EXPECT_TRUE(rig.step(0.0, std::nullopt, w).safety_stop);
  AvatarRig under;
  Wrench ok;
  ok.force = Vector3(0, 0, 50.0);
  ok.torque = Vector3(10.0, 0, 0);
  EXPECT_FALSE(under.step(0.0, std::nullopt, ok).safety_stop);
}

TEST(Avatar, RestartOutsideStoppedIsInvalid) {
  AvatarRig rig;
  EXPECT_THROW(rig.ctl.restart(rig.s.positions), InvalidTransition);
  rig.step(0.0, offsetGoal({0.02, 0, 0}));
  EXPECT_THROW(rig.ctl.restart(rig.s.positions), InvalidTransition);
}

TEST(Avatar, AutoRestartRunsTheFadeAgain) {
  AvatarRig rig;
  const HandFrameCommand goal = offsetGoal({0.03, 0, 0});
  rig.step(0.0, goal);
  Wrench push;
  push.force = Vector3(80, 0, 0);
  EXPECT_TRUE(rig.step(0.5, std::nullopt, push).safety_stop);
  EXPECT_EQ(rig.step(1.2).mode, AvatarMode::kStopped);    // below the 1 s delay
  EXPECT_EQ(rig.step(1.55, std::nullopt, push).mode, AvatarMode::kStopped);  // still loaded
  EXPECT_EQ(rig.step(1.6).mode, AvatarMode::kHolding);
  const AvatarOutput again = rig.step(1.7, goal);
  EXPECT_EQ(again.mode, AvatarMode::kInitializing);
  EXPECT_NEAR(again.progress, 0.0, 1e-12);
}

TEST(Avatar, LostGoalFallsBackToHolding) {
  AvatarRig rig;
  rig.step(0.0, offsetGoal({0.03, 0, 0}));
  const AvatarOutput stale = rig.step(0.2);
  EXPECT_TRUE(stale.goal_stale);
  EXPECT_EQ(stale.mode, AvatarMode::kInitializing);
  const AvatarOutput lost = rig.step(1.01);
  EXPECT_EQ(lost.mode, AvatarMode::kHolding);
  // The hold pose is wherever the fade had got to, not the original start.
  const Pose6D start = forwardKinematics(avatarArm(), avatarArm().nullspace_rest_pose);
  EXPECT_GT((lost.commanded_pose.translation - start.translation).norm(), 1e-3);
}

TEST(Avatar, OutputTorqueIsClampedToTheLimits) {
  AvatarConfig cfg;
  cfg.fade_duration = 0.0;
  cfg.translational_stiffness = 1e6;
  AvatarRig rig(cfg);
  const AvatarOutput out = rig.step(0.0, offsetGoal({0.3, 0.3, 0}));
  const TorqueVector raw = out.terms.cmd + out.terms.init + out.terms.nullspace + out.terms.coriolis;
  EXPECT_GT((raw.cwiseAbs() - avatarArm().torque_limits).maxCoeff(), 0.0);
  for (int i = 0; i < 7; ++i) EXPECT_LE(std::abs(out.torque(i)), avatarArm().torque_limits(i));
}

}  // namespace
}  // namespace teleop
