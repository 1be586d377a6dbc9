// mfcaas: run catalogued scenarios, export traces, serve the steering loop.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "mfcaas/scenario.hpp"
#include "mfcaas/steering.hpp"
#ifdef MFCAAS_WITH_SERVICE
#include "mfcaas/steering_server.hpp"
#endif

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct RunArgs {
  std::string scenario;
  std::string mode = "sim";
  bool realtime = false;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string summary;
  std::string estimator;
  std::string joystick;
  std::string commands;
  std::optional<double> duration;
};

mfcaas::ScenarioSpec prepare(const RunArgs& a) {
  auto spec = mfcaas::build_scenario(a.scenario);
  if (a.seed) spec.reseed(*a.seed);
  if (!a.estimator.empty()) spec.control.estimator = mfcaas::parse_estimator(a.estimator);
  if (a.duration) {
    if (!(*a.duration > 0.0)) throw mfcaas::ValidationError("duration must be positive");
    spec.duration = *a.duration;
  }
  if (!a.joystick.empty()) {
    if (spec.testbed != mfcaas::Testbed::aero) {
      throw mfcaas::ValidationError("joystick scripts drive the aero testbed only");
    }
    if (!spec.joystick) spec.joystick = mfcaas::JoystickConfig{};
    spec.joystick->script = mfcaas::load_axis_script(a.joystick);
  }
  return spec;
}

int cmd_list() {
  for (const auto& e : mfcaas::catalog::entries()) std::printf("%-10s %s\n", e.name, e.summary);
  return 0;
}

int cmd_run(const RunArgs& a) {
  const auto spec = prepare(a);
  const auto mode = mfcaas::parse_link_mode(a.mode);
  mfcaas::Trace trace;
  if (!a.commands.empty()) {
    if (mode != mfcaas::LinkMode::sim || a.realtime) {
      throw mfcaas::ValidationError("--commands replays in virtual time over the in-process link only");
    }
    mfcaas::SteeringSession session(spec);
    trace = session.replay(mfcaas::load_replay(a.commands), mfcaas::tick_count(spec.duration, spec.period()));
  } else {
    trace = mfcaas::run_scenario(spec, mode, a.realtime);
  }
  if (!a.out.empty()) mfcaas::export_csv(trace, a.out);
  const auto metrics = mfcaas::evaluate(trace, spec);
  if (!a.summary.empty()) mfcaas::export_summary(metrics, spec, a.summary);
  mfcaas::write_summary(std::cout, metrics, spec);
  return 0;
}

#ifdef MFCAAS_WITH_SERVICE
struct ServeArgs {
  std::string scenario = "joy-5";
  std::string bind = "127.0.0.1";
  std::uint16_t port = 8080;
  std::string record;
  std::string trace;
  double duration = 0.0;
  std::optional<std::uint64_t> seed;
};

int cmd_serve(const ServeArgs& a) {
  auto spec = mfcaas::build_scenario(a.scenario);
  if (a.seed) spec.reseed(*a.seed);
  mfcaas::SteeringSession session(spec, 5, !a.trace.empty());
  mfcaas::ServerOptions opts;
  opts.bind = a.bind;
  opts.port = a.port;
  opts.log = [](const std::string& line) { std::cerr << line << '\n'; };
  mfcaas::SteeringServer server(session, opts);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << spec.name << " on " << a.bind << ":" << server.port() << '\n';
  server.start();
  const auto started = std::chrono::steady_clock::now();
  while (!g_interrupted && server.running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (a.duration > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() >= a.duration) {
      break;
    }
  }
  server.stop();
  server.check();
  if (!a.record.empty()) mfcaas::save_replay(session.replay_log(), a.record);
  if (!a.trace.empty()) mfcaas::export_csv(session.trace(), a.trace);
  std::cerr << "stopped after " << session.steps() << " ticks\n";
  return 0;
}
#endif

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-free control over a lossy link: scenarios, traces and a steering service"};
  app.require_subcommand(1);

  app.add_subcommand("list", "List catalogued scenarios");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run one scenario and print its metrics");
  run_cmd->add_option("--scenario", run.scenario, "Scenario name (see 'list')")->required();
  run_cmd->add_option("--mode", run.mode, "Link: sim (in-process) or udp (loopback sockets)")
      ->check(CLI::IsMember({"sim", "udp"}));
  run_cmd->add_flag("--realtime", run.realtime, "Pace ticks on the wall clock");
  run_cmd->add_option("--seed", run.seed, "Seed for noise and both loss streams");
  run_cmd->add_option("--out", run.out, "Write the trace CSV here");
  run_cmd->add_option("--summary", run.summary, "Write key=value metrics here");
  run_cmd->add_option("--estimator", run.estimator, "algebraic or closedloop")
      ->check(CLI::IsMember({"algebraic", "closedloop"}));
  run_cmd->add_option("--joystick", run.joystick, "Axis script CSV (t,axis) for the aero testbed");
  run_cmd->add_option("--commands", run.commands, "Replay a recorded command file");
  run_cmd->add_option("--duration", run.duration, "Override the scenario duration in seconds");

#ifdef MFCAAS_WITH_SERVICE
  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the loop in real time behind HTTP + WebSocket");
  serve_cmd->add_option("--scenario", serve.scenario, "Scenario name");
  serve_cmd->add_option("--bind", serve.bind, "Listen address");
  serve_cmd->add_option("--port", serve.port, "Listen port (0 = ephemeral)");
  serve_cmd->add_option("--record", serve.record, "Write the command replay file on exit");
  serve_cmd->add_option("--trace", serve.trace, "Write the full trace CSV on exit");
  serve_cmd->add_option("--duration", serve.duration, "Stop after this many seconds (0 = until interrupted)");
  serve_cmd->add_option("--seed", serve.seed, "Seed for noise and both loss streams");
#endif

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("list")) return cmd_list();
    if (app.got_subcommand("run")) return cmd_run(run);
#ifdef MFCAAS_WITH_SERVICE
    if (app.got_subcommand("serve")) return cmd_serve(serve);
#endif
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
