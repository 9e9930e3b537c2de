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

// Scenario runner and experiment front end.
//
// Exit status: 0 success, 1 usage or input error, 2 a checked claim failed,
// 3 the simulation failed (for example a numerical blowup).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "teleop/experiments.hpp"
#include "teleop/transport.hpp"

namespace fs = std::filesystem;
using namespace teleop;

namespace {

constexpr int kClaimFailed = 2;
constexpr int kRunFailed = 3;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void printSummaryTable(const std::string& text) {
  std::cout << "| metric | value |\n|---|---|\n";
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    std::cout << "| " << line.substr(0, sp) << " | " << line.substr(sp + 1) << " |\n";
  }
}

Scenario loadScenario(const std::string& path, std::optional<std::uint64_t> seed) {
  Scenario s = Scenario::load(path);
  if (seed) s.applySeed(*seed);
  return s;
}

struct RunArgs {
  std::string scenario;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> ticks;
  bool processes = false;
};

int cmdRun(const RunArgs& a) {
  const Scenario s = loadScenario(a.scenario, a.seed);
  fs::create_directories(a.out_dir);
  RunOptions opt;
  opt.operator_trace = fs::path(a.out_dir) / (s.name + ".operator.csv");
  opt.avatar_trace = fs::path(a.out_dir) / (s.name + ".avatar.csv");
  opt.ticks = a.ticks;

  std::string summary;
  std::optional<std::string> failure;
  std::uint64_t ticks_run = 0;
  std::uint64_t bytes = 0;
  if (a.processes) {
    const ForkedRunResult r = runForked(s, opt);
    summary = formatOperatorSummary(r.op) + r.avatar_summary;
    failure = r.failure;
    ticks_run = r.ticks_run;
    bytes = r.op.bytes_sent;
    // The avatar's own byte count arrives inside its summary text.
    std::istringstream in(r.avatar_summary);
    std::string key;
    while (in >> key) {
      if (key == "avatar.bytes_sent") {
        std::uint64_t b = 0;
        in >> b;
        bytes += b;
      }
    }
    if (r.avatar_exit != 0 && !failure) failure = "avatar process exited with status " + std::to_string(r.avatar_exit);
  } else {
    const RunResult r = runLoopback(s, opt);
    summary = formatOperatorSummary(r.op) + formatAvatarSummary(r.av);
    failure = r.failure;
    ticks_run = r.ticks_run;
    bytes = r.op.bytes_sent + r.av.bytes_sent;
  }
  const double duration = static_cast<double>(ticks_run) * 1e-3;
  const double bandwidth = duration > 0.0 ? static_cast<double>(bytes) / duration : 0.0;

  std::cout << "# run " << s.name << (a.processes ? " (two processes)" : " (loopback)") << "\n\n";
  printSummaryTable(summary + "ticks_run " + std::to_string(ticks_run) + "\n" + "bandwidth_Bps " +
                    fmt("%.0f", bandwidth) + "\nbandwidth_budget_Bps " + fmt("%.0f", s.bandwidth_budget) + "\n");
  std::cout << "\n";
  for (const fs::path& p : {opt.operator_trace, opt.avatar_trace}) {
    std::cout << "sha256 " << sha256File(p) << "  " << p.string() << "\n";
  }
  if (failure) {
    std::cerr << "run failed: " << *failure << "\n";
    return kRunFailed;
  }
  if (bandwidth > s.bandwidth_budget) {
    std::cerr << "bandwidth " << bandwidth << " B/s exceeds the budget of " << s.bandwidth_budget << " B/s\n";
    return kClaimFailed;
  }
  return 0;
}

struct WorkspaceArgs {
  std::string arm;
  std::string poses;
  std::string candidates;
  std::string write_poses;
  std::string out;
  int count = PoseSetConfig{}.count;
  std::uint64_t seed = 1;
  int ik_seeds = WorkspaceOptions{}.ik_seeds;
};

int cmdWorkspace(const WorkspaceArgs& a) {
  const ArmModel arm = ArmModel::load(a.arm);
  std::vector<Pose6D> poses;
  if (!a.poses.empty()) {
    poses = loadPoseSet(a.poses);
  } else {
    PoseSetConfig pc;
    pc.count = a.count;
    pc.seed = a.seed;
    const Quaternion nominal = (arm.mount * forwardKinematics(arm, arm.nullspace_rest_pose)).rotation;
    poses = syntheticSeatedPoses(pc, nominal);
  }
  if (!a.write_poses.empty()) {
    std::ofstream out(a.write_poses);
    writePoseSet(out, poses);
  }
  const std::vector<MountCandidate> mounts =
      a.candidates.empty() ? defaultMountGrid(arm.mount) : loadMountCandidates(a.candidates);
  WorkspaceOptions opt;
  opt.seed = a.seed;
  opt.ik_seeds = a.ik_seeds;
  const WorkspaceReport r = workspaceAnalysis(arm, poses, mounts, opt);
  const std::string table = workspaceTable(r);
  std::cout << "# workspace " << arm.name << ", " << poses.size() << " poses\n\n" << table << "\n";
  std::cout << "baseline " << fmt("%.1f", 100.0 * r.baseline().fraction()) << " %, best '"
            << r.bestResult().candidate.label << "' " << fmt("%.1f", 100.0 * r.bestResult().fraction()) << " %\n";
  if (!a.out.empty()) std::ofstream(a.out) << table;
  return r.bestResult().reached >= r.baseline().reached ? 0 : kClaimFailed;
}

struct DelayArgs {
  std::string scenario;
  std::vector<std::string> traces;
  std::string out_dir = ".";
  int max_lag = 500;
  int mirror_max_ticks = 2;
};

int cmdDelayReport(const DelayArgs& a) {
  fs::path op_trace, av_trace;
  std::optional<double> injected;
  if (!a.scenario.empty()) {
    const Scenario s = Scenario::load(a.scenario);
    fs::create_directories(a.out_dir);
    RunOptions opt;
    opt.operator_trace = op_trace = fs::path(a.out_dir) / (s.name + ".operator.csv");
    opt.avatar_trace = av_trace = fs::path(a.out_dir) / (s.name + ".avatar.csv");
    const RunResult r = runLoopback(s, opt);
    if (r.failure) {
      std::cerr << "run failed: " << *r.failure << "\n";
      return kRunFailed;
    }
    injected = s.back.delay;
  } else {
    op_trace = a.traces.at(0);
    av_trace = a.traces.at(1);
  }
  const DelayReport d = delayReport(TraceTable::load(op_trace), TraceTable::load(av_trace), a.max_lag);
  std::cout << "| signal | lag vs true avatar joints [ticks] | lag [ms] |\n|---|---|---|\n";
  std::cout << "| mirror q_hat | " << d.mirror_lag_ticks << " | " << fmt("%.1f", 1e3 * d.mirrorLag()) << " |\n";
  std::cout << "| raw telemetry | " << d.telemetry_lag_ticks << " | " << fmt("%.1f", 1e3 * d.telemetryLag())
            << " |\n\n";
  std::cout << "positive lag trails the avatar, negative lag leads it\n";
  bool ok = d.mirror_lag_ticks <= a.mirror_max_ticks;
  if (injected) {
    std::cout << "injected return delay " << fmt("%.1f", 1e3 * *injected) << " ms\n";
    ok = ok && d.telemetryLag() >= 0.9 * *injected;
  }
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : kClaimFailed;
}

struct AssistArgs {
  std::string scenario;
  bool doubling = true;
  std::optional<std::uint64_t> seed;
};

int cmdAssistCompare(const AssistArgs& a) {
  const Scenario s = loadScenario(a.scenario, a.seed);
  const AssistComparison c = assistComparison(s, a.doubling);
  for (const RunResult* r : {&c.on, &c.off}) {
    if (r->failure) {
      std::cerr << "run failed: " << *r->failure << "\n";
      return kRunFailed;
    }
  }
  std::cout << "# assist comparison " << s.name << "\n\n";
  std::cout << "| run | RMS human force [N] | peak human force [N] | RMS human torque [N·m] |\n|---|---|---|---|\n";
  auto row = [](const char* name, const RunResult& r) {
    std::cout << "| " << name << " | " << fmt("%.4f", r.op.rms_human_force) << " | "
              << fmt("%.4f", r.op.peak_human_force) << " | " << fmt("%.4f", r.op.rms_human_torque) << " |\n";
  };
  row("assist on", c.on);
  row("assist off", c.off);
  if (c.doubled) row("assist gain x2", *c.doubled);
  std::cout << "\nassist lowers RMS force: " << (c.assistHelps() ? "yes" : "no") << "\n";
  if (c.doubled) std::cout << "doubled gain does not raise RMS force: " << (c.monotone() ? "yes" : "no") << "\n";
  return c.assistHelps() && c.monotone() ? 0 : kClaimFailed;
}

int cmdCalibrate(const std::string& samples_path, const std::string& out_path) {
  const std::vector<CalibrationSample> samples = loadCalibrationSamples(samples_path);
  const CalibrationResult r = calibrate(samples);
  const std::string text = r.profile.toConfig();
  if (out_path == "-") {
    std::cout << text;
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
    out << text;
  }
  std::cerr << "samples " << samples.size() << ", mass " << r.profile.attached_mass << " kg, rms residual "
            << r.rms_force_residual << " N / " << r.rms_torque_residual << " N·m, condition "
            << r.condition_number << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilateral teleoperation simulation and experiments"};
  app.require_subcommand(1);

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run a scenario and write both node traces");
  c_run->add_option("scenario", run.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  c_run->add_option("--out-dir", run.out_dir, "Directory for the trace files");
  c_run->add_option("--seed", run.seed, "Override the scenario seed");
  c_run->add_option("--ticks", run.ticks, "Stop after this many ticks");
  c_run->add_flag("--processes", run.processes, "Run the avatar in a second process over a socket");

  WorkspaceArgs ws;
  ws.arm = std::string(TELEOP_SHARE_DIR) + "/config/panda_operator.arm";
  auto* c_ws = app.add_subcommand("workspace", "Operator arm mounting study on a seated-pose set");
  c_ws->add_option("--arm", ws.arm, "Operator arm config")->check(CLI::ExistingFile);
  c_ws->add_option("--poses", ws.poses, "Pose set CSV (default: synthetic seated set)")->check(CLI::ExistingFile);
  c_ws->add_option("--count", ws.count, "Synthetic pose count");
  c_ws->add_option("--seed", ws.seed, "Seed of the synthetic set and of the IK restarts");
  c_ws->add_option("--candidates", ws.candidates, "Mount candidates, `label x y z roll pitch yaw` per line")
      ->check(CLI::ExistingFile);
  c_ws->add_option("--ik-seeds", ws.ik_seeds, "IK attempts per pose");
  c_ws->add_option("--write-poses", ws.write_poses, "Also write the pose set used");
  c_ws->add_option("--out", ws.out, "Write the Markdown table here");

  DelayArgs delay;
  auto* c_delay = app.add_subcommand("delay-report", "Lag of the mirror and of raw telemetry behind the avatar");
  auto* o_sc = c_delay->add_option("--scenario", delay.scenario, "Run this scenario first")->check(CLI::ExistingFile);
  auto* o_tr = c_delay->add_option("--traces", delay.traces, "Operator and avatar trace CSV")->expected(2);
  o_sc->excludes(o_tr);
  c_delay->add_option("--out-dir", delay.out_dir, "Directory for the traces of --scenario");
  c_delay->add_option("--max-lag", delay.max_lag, "Largest lag searched, in ticks");
  c_delay->add_option("--mirror-max-ticks", delay.mirror_max_ticks, "Accepted mirror lag");

  AssistArgs assist;
  auto* c_assist = app.add_subcommand("assist-compare", "Human effort with and without the operator assist");
  c_assist->add_option("scenario", assist.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  c_assist->add_option("--seed", assist.seed, "Override the scenario seed");
  c_assist->add_flag("!--no-doubling", assist.doubling, "Skip the doubled-gain run");

  std::string samples, profile_out = "-";
  auto* c_cal = app.add_subcommand("calibrate", "Fit a sensor profile to static samples");
  c_cal->add_option("samples", samples, "CSV of static samples")->required()->check(CLI::ExistingFile);
  c_cal->add_option("-o,--output", profile_out, "Profile file to write ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*c_run) return cmdRun(run);
    if (*c_ws) return cmdWorkspace(ws);
    if (*c_delay) {
      if (delay.scenario.empty() && delay.traces.size() != 2) {
        std::cerr << "delay-report needs --scenario or --traces OP AV\n";
        return 1;
      }
      return cmdDelayReport(delay);
    }
    if (*c_assist) return cmdAssistCompare(assist);
    if (*c_cal) return cmdCalibrate(samples, profile_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
