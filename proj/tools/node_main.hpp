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

// Shared entry point of the operator and avatar node binaries.

#pragma once

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "teleop/transport.hpp"

namespace teleop {

template <typename Node>
int nodeMain(NodeRole role, int argc, char** argv) {
  const bool is_operator = role == NodeRole::kOperator;
  CLI::App app{is_operator ? "Operator station node" : "Avatar node"};
  std::string listen, connect, scenario_path, trace, port_file;
  std::optional<double> delay_ms, jitter_ms, drop;
  std::optional<std::uint64_t> seed;
  int timeout_ms = 30000;
  auto* l = app.add_option("--listen", listen, "Wait for the peer on host:port");
  auto* c = app.add_option("--connect", connect, "Connect to the peer at host:port");
  l->excludes(c);
  app.add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
  app.add_option("--delay-ms", delay_ms, "One-way delay of the link into this node (overrides the scenario)");
  app.add_option("--jitter-ms", jitter_ms, "Jitter of the link into this node");
  app.add_option("--drop", drop, "Drop probability of the link into this node");
  app.add_option("--seed", seed, "Scenario seed (overrides the scenario)");
  app.add_option("--trace", trace, "Trace CSV to write");
  app.add_option("--port-file", port_file, "With --listen, write the bound port here");
  app.add_option("--timeout-ms", timeout_ms, "Give up when the peer is silent this long");
  CLI11_PARSE(app, argc, argv);
  if (listen.empty() == connect.empty()) {
    std::cerr << "exactly one of --listen or --connect is required\n";
    return 2;
  }

  try {
    Scenario s = Scenario::load(scenario_path);
    if (seed) s.applySeed(*seed);
    LinkConfig& in = is_operator ? s.back : s.forward;
    if (delay_ms) in.delay = *delay_ms * 1e-3;
    if (jitter_ms) in.jitter = *jitter_ms * 1e-3;
    if (drop) in.drop = *drop;
    in.validate();

    const auto timeout = std::chrono::milliseconds(timeout_ms);
    Socket socket;
    if (!listen.empty()) {
      Listener listener(Endpoint::parse(listen));
      if (!port_file.empty()) {
        std::ofstream(port_file) << listener.port() << "\n";
      }
      socket = listener.accept(timeout);
    } else {
      socket = connectTo(Endpoint::parse(connect), timeout);
    }

    Node node(s, in, trace);
    FrameChannel channel(std::move(socket), timeout);
    auto own = [&] {
      if constexpr (std::is_same_v<Node, OperatorNode>) return formatOperatorSummary(node.summary());
      else return formatAvatarSummary(node.summary());
    };
    const SideResult r = runLockstep(node, role, s, channel, own);
    node.flush();
    std::cout << own();
    std::cout << (is_operator ? "operator" : "avatar") << ".ticks_run " << r.ticks_run << "\n";
    if (!trace.empty()) std::cout << "trace " << trace << " sha256 " << sha256File(trace) << "\n";
    if (r.failure) {
      std::cerr << "run failed: " << *r.failure << "\n";
      return 3;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace teleop
