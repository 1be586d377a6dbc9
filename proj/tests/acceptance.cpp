// Acceptance gate: one PASS/FAIL line per criterion.
//   mfcaas_acceptance [--criterion N] [--workdir DIR]
// Without --criterion all nine run. Exit status is nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mfcaas/scenario.hpp"
#include "mfcaas/steering.hpp"

using namespace mfcaas;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits, pinned.
constexpr double kRampTol = 1e-3;
constexpr double kClosedLoopTol = 1e-9;
constexpr double kDecayRelTol = 0.01;
constexpr double kSteadyStateLimit = 1.0;
constexpr double kSaturationDutyMin = 30.0;  // percent
constexpr double kMfcSegmentLimit = 2.0;
constexpr double kPiSegmentMin = 2.0;
constexpr double kRecoveryWindow = 10.0;  // seconds
constexpr double kRecoveryBand = 1.0;
constexpr double kLossTol = 0.01;
constexpr double kFilterTol = 1e-4;
constexpr int kCodecSamples = 100000;
constexpr int kGateCalls = 100000;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string num(double v) { return format_g9(v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Closed-form reachable ceiling of the tank under valve r with u <= u_max.
double tank_ceiling(double r, const TankParams& p) {
  const double root = p.u_max / (p.outflow_coeff * r);
  return std::min(p.y_max, root * root);
}

// -- 1 ----------------------------------------------------------------------
Verdict estimator_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  UltraLocalConfig cfg;
  cfg.alpha = 1.0;
  cfg.kp = 0.5;
  cfg.ts = 0.001;
  cfg.tau = 0.1;
  SampleWindow ramp(cfg.window_capacity());
  SampleWindow konst(cfg.window_capacity());
  const double c = 0.37;  // constant integrand: ydot* - alpha u - kp e with u = -c
  for (std::size_t i = 0; i < cfg.window_capacity(); ++i) {
    const double t = static_cast<double>(i) * cfg.ts;
    ramp.push({t, t, 0.0, 0.0, 0.0});
    konst.push({t, 0.0, -c, 0.0, 0.0});
  }
  const double f_ramp = estimate_f_algebraic(ramp, cfg);
  const double f_const = estimate_f_closedloop(konst, cfg);
  const double elapsed = seconds_since(t0);
  const bool pass = std::abs(f_ramp - 1.0) <= kRampTol && std::abs(f_const - c) <= kClosedLoopTol && elapsed < 1.0;
  return {pass, "algebraic ramp F=" + num(f_ramp) + " (want 1 +/- 1e-3), closed-loop constant F=" + num(f_const) +
                    " (want " + num(c) + " +/- 1e-9), " + num(elapsed) + " s"};
}

// -- 2 ----------------------------------------------------------------------
Verdict error_dynamics() {
  const auto t0 = std::chrono::steady_clock::now();
  const double kp = 0.5, dt = 0.001, alpha = 0.1;
  UltraLocalConfig cfg;
  cfg.alpha = alpha;
  cfg.kp = kp;
  cfg.ts = dt;
  cfg.tau = 0.1;
  auto f_true = [](double t) { return 2.0 * std::cos(0.7 * t) - 0.5; };
  const double y_star = 3.0;
  double y = 7.0;
  const double e0 = y - y_star;
  const auto n = static_cast<std::size_t>(std::llround(3.0 / kp / dt));
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double u = ip_control(f_true(t), 0.0, y - y_star, cfg);
    y += dt * (f_true(t) + alpha * u);
  }
  const double measured = std::abs(y - y_star);
  const double expected = std::abs(e0) * std::exp(-kp * 3.0 / kp);
  const double rel = std::abs(measured - expected) / expected;
  const double elapsed = seconds_since(t0);
  return {rel <= kDecayRelTol && elapsed < 1.0,
          "|e(3/K_P)|=" + num(measured) + " vs e0*exp(-3)=" + num(expected) + ", relative error " + num(rel) +
              " (limit 0.01), " + num(elapsed) + " s"};
}

// -- 3 ----------------------------------------------------------------------
Verdict tank_scenario_one() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = build_scenario("tank-1");
  const auto m = evaluate(run_scenario(spec), spec);
  bool pass = true;
  std::string detail;
  for (const auto& s : m.segments) {
    detail += " [" + num(s.t_start) + "," + num(s.t_end) + ") y*=" + num(s.setpoint) + ":";
    if (s.setpoint == 55.0) {
      const bool ok = s.saturation_duty > kSaturationDutyMin;
      pass = pass && ok;
      detail += " saturation " + num(s.saturation_duty) + "% " + (ok ? "ok" : "LOW");
    } else {
      const bool ok = s.steady_state_error < kSteadyStateLimit;
      pass = pass && ok;
      detail += " |e|=" + num(s.steady_state_error) + (ok ? " ok" : " HIGH");
      if (!ok) {
        const double r = spec.valve.value_at(s.t_end - 1e-6);
        detail += " (reachable level under valve " + num(r) + " is " + num(tank_ceiling(r, spec.tank)) + ")";
      }
    }
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 5.0;
  return {pass, "tank-1 steady state:" + detail + ", " + num(elapsed) + " s"};
}

// -- 4 ----------------------------------------------------------------------
Verdict mfc_versus_pi() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto mfc_spec = build_scenario("tank-5");
  const auto pi_spec = build_scenario("tank-5-pi");
  const auto mfc = evaluate(run_scenario(mfc_spec), mfc_spec);
  const auto pi = evaluate(run_scenario(pi_spec), pi_spec);
  const bool rmse_ok = mfc.rmse < pi.rmse;
  bool mfc_ok = true;
  std::string mfc_detail;
  for (const auto& s : mfc.segments) {
    const bool ok = s.steady_state_error < kMfcSegmentLimit;
    mfc_ok = mfc_ok && ok;
    if (!ok) mfc_detail += " y*=" + num(s.setpoint) + ":" + num(s.steady_state_error);
  }
  double pi_worst = 0.0;
  for (const auto& s : pi.segments) pi_worst = std::max(pi_worst, s.steady_state_error);
  const bool pi_ok = pi_worst > kPiSegmentMin;
  const double elapsed = seconds_since(t0);
  const bool pass = rmse_ok && mfc_ok && pi_ok && elapsed < 10.0;
  return {pass, "seed " + std::to_string(mfc_spec.seed) + ": RMSE mfc=" + num(mfc.rmse) + " pi=" + num(pi.rmse) +
                    (rmse_ok ? " ok" : " NOT LOWER") + "; MFC segments >= 2:" +
                    (mfc_detail.empty() ? std::string(" none") : mfc_detail) + "; PI worst segment " +
                    num(pi_worst) + (pi_ok ? " ok" : " NOT > 2") + ", " + num(elapsed) + " s"};
}

// -- 5 ----------------------------------------------------------------------
Verdict cut_recovery() {
  const auto spec = build_scenario("tank-2");
  const auto trace = run_scenario(spec);
  const auto& refs = spec.reference.entries();
  bool pass = true;
  std::string detail;
  std::vector<double> cut_ends;
  for (const auto& c : spec.loss.cuts_fault1) cut_ends.push_back(c.end);
  for (const auto& c : spec.loss.cuts_fault2) cut_ends.push_back(c.end);
  std::sort(cut_ends.begin(), cut_ends.end());
  for (double end : cut_ends) {
    double next_change = spec.duration;
    for (const auto& [t, v] : refs) {
      if (t > end) {
        next_change = t;
        break;
      }
    }
    // earliest instant after which |e| stays inside the band until the change
    std::optional<double> settled;
    for (const auto& r : trace) {
      if (r.t < end - 1e-9 || r.t >= next_change - 1e-9) continue;
      if (std::abs(r.y - r.y_star) >= kRecoveryBand) settled.reset();
      else if (!settled) settled = r.t;
    }
    const bool ok = settled && *settled - end <= kRecoveryWindow;
    pass = pass && ok;
    detail += " cut ending " + num(end) + "s: " +
              (settled ? "settled after " + num(*settled - end) + " s" : std::string("never settled")) +
              (ok ? " ok" : " FAIL") + ";";
  }
  return {pass, "tank-2 recovery (|e| < 1 within 10 s, held to next reference change):" + detail};
}

// -- 6 ----------------------------------------------------------------------
Verdict freeze_semantics() {
  const auto spec = build_scenario("tank-2");
  const auto trace = run_scenario(spec);
  std::size_t sensor_cut = 0, control_cut = 0, violations = 0;
  for (std::size_t k = 1; k < trace.size(); ++k) {
    const auto& prev = trace[k - 1];
    const auto& r = trace[k];
    for (const auto& c : spec.loss.cuts_fault1) {
      if (c.contains(r.t) && !r.lost_sensor) ++violations;
    }
    for (const auto& c : spec.loss.cuts_fault2) {
      if (c.contains(r.t) && !r.lost_control) ++violations;
    }
    // the measurement emitted at tick k-1 was lost: controller at k is frozen
    if (prev.lost_sensor) {
      ++sensor_cut;
      if (r.u_sent != prev.u_sent || r.f_est != prev.f_est) ++violations;
    }
    if (r.lost_control) {
      ++control_cut;
      if (r.u_applied != prev.u_applied) ++violations;
    }
  }
  return {violations == 0 && sensor_cut > 0 && control_cut > 0,
          "tank-2: " + std::to_string(sensor_cut) + " frozen controller ticks, " + std::to_string(control_cut) +
              " held plant ticks, " + std::to_string(violations) + " violations"};
}

// -- 7 ----------------------------------------------------------------------
Verdict codec_and_loss() {
  std::mt19937_64 rng(20240601);
  int mismatches = 0;
  for (int i = 0; i < kCodecSamples; ++i) {
    Datagram d;
    d.kind = (rng() & 1) ? DatagramKind::sensor : DatagramKind::control;
    d.seq = static_cast<std::uint32_t>(rng());
    d.timestamp_us = rng();
    std::uniform_real_distribution<double> v(-1e6, 1e6);
    d.value = v(rng);
    const auto r = decode(encode(d));
    const auto* back = std::get_if<Datagram>(&r);
    if (back == nullptr || !(*back == d)) ++mismatches;
  }
  int fuzz_valid = 0, fuzz_errors = 0;
  for (int i = 0; i < kCodecSamples; ++i) {
    std::vector<std::uint8_t> buf(rng() % 65);
    for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
    if (buf.size() >= 2 && (rng() % 4 == 0)) {
      buf[0] = kMagic0;
      buf[1] = kMagic1;
      if (buf.size() >= 3) buf[2] = kWireVersion;
    }
    const auto r = decode(buf);
    (std::holds_alternative<Datagram>(r) ? fuzz_valid : fuzz_errors)++;
  }
  bool loss_ok = true;
  std::string loss_detail;
  for (double p : {0.3, 0.5, 0.7}) {
    LossModel m;
    m.p_fault1 = m.p_fault2 = p;
    m.rng_seed = 42;
    for (Direction d : {Direction::fault1, Direction::fault2}) {
      LossGate g(d, m);
      for (int i = 0; i < kGateCalls; ++i) g.deliver(static_cast<double>(i) * 0.1);
      const double realized = g.realized_loss();
      loss_ok = loss_ok && std::abs(realized - p) <= kLossTol;
      loss_detail += " " + num(realized);
    }
  }
  return {mismatches == 0 && loss_ok,
          std::to_string(kCodecSamples) + " round trips, " + std::to_string(mismatches) + " mismatches; fuzz " +
              std::to_string(fuzz_valid) + " valid / " + std::to_string(fuzz_errors) +
              " rejected, no crash; realized loss for p=0.3,0.5,0.7 (both directions):" + loss_detail};
}

// -- 8 ----------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> column(const std::string& csv, std::size_t index) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::size_t start = 0;
    for (std::size_t i = 0; i < index; ++i) start = line.find(',', start) + 1;
    out.push_back(line.substr(start, line.find(',', start) - start));
  }
  return out;
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MFCAAS_CLI + "\" " + args + " > /dev/null";
  return std::system(cmd.c_str());
}

Verdict determinism(const fs::path& work) {
  const auto a = work / "tank5_a.csv", b = work / "tank5_b.csv", u = work / "tank5_udp.csv";
  const int rc = cli("run --scenario tank-5 --seed 42 --out " + a.string()) |
                 cli("run --scenario tank-5 --seed 42 --out " + b.string()) |
                 cli("run --scenario tank-5 --seed 42 --mode udp --out " + u.string());
  if (rc != 0) return {false, "CLI invocation failed"};
  const auto sa = slurp(a), sb = slurp(b), su = slurp(u);
  const bool identical = !sa.empty() && sa == sb;
  const auto fv = column(sa, 7), fu = column(su, 7);
  const bool faults_equal = !fv.empty() && fv == fu;
  return {identical && faults_equal, std::string("two sim runs ") + (identical ? "byte-identical" : "DIFFER") +
                                         " (" + std::to_string(sa.size()) + " bytes); virtual vs UDP fault column " +
                                         (faults_equal ? "identical" : "DIFFERS") + " over " +
                                         std::to_string(fv.size()) + " ticks"};
}

// -- 9 ----------------------------------------------------------------------
Verdict joystick(const fs::path& work) {
  std::string detail = "step response at T:";
  bool pass = true;
  for (double T : {4.0, 2.0, 0.5}) {
    JoystickFilterState s{0.0, 0.0, T};
    const double dt = T / 1000.0;
    ReferenceSample r;
    for (int k = 0; k < 1000; ++k) r = joystick_filter_step(s, 1.0, dt);
    const double want = 1.0 - 2.0 * std::exp(-1.0);
    const double err = std::abs(r.y_star - want);
    pass = pass && err <= kFilterTol;
    detail += " T=" + num(T) + " err " + num(err);
  }

  // live session paced on the wall clock, commands injected from this thread
  auto spec = build_scenario("joy-8");
  spec.duration = 4.0;
  SteeringSession live(spec);
  const std::uint64_t ticks = tick_count(spec.duration, spec.period());
  std::thread ticker([&] {
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(spec.period()));
    auto next = std::chrono::steady_clock::now();
    while (live.steps() < ticks) {
      next += period;
      std::this_thread::sleep_until(next);
      live.tick();
    }
  });
  const std::vector<Command> script{SetAxis{0.6}, SetT{0.5}, SetLoss{0.7, 0.3}, SetAxis{-0.4},
                                    SetSetpoint{0.25}, SetT{4.0}, SetLoss{0.0, 0.0}};
  for (const auto& c : script) {
    std::this_thread::sleep_for(std::chrono::milliseconds(350));
    live.submit(c);
  }
  ticker.join();

  const auto replay_file = work / "joy8_commands.csv";
  const auto live_csv = work / "joy8_live.csv";
  const auto batch_csv = work / "joy8_replayed.csv";
  save_replay(live.replay_log(), replay_file.string());
  export_csv(live.trace(), live_csv.string());
  const int rc = cli("run --scenario joy-8 --duration " + detail::g17(spec.duration) + " --commands " +
                     replay_file.string() + " --out " + batch_csv.string());
  const bool same = rc == 0 && slurp(live_csv) == slurp(batch_csv);
  pass = pass && same && live.replay_log().size() == script.size();
  detail += "; record/replay of " + std::to_string(live.replay_log().size()) + " live commands over " +
            std::to_string(live.trace().size()) + " ticks: " + (same ? "identical trace" : "traces DIFFER");
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  fs::path work = fs::temp_directory_path() / "mfcaas_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (a == "--workdir" && i + 1 < argc) work = argv[++i];
    else {
      std::fprintf(stderr, "usage: %s [--criterion N] [--workdir DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"estimator exactness", estimator_exactness},
      {"error dynamics", error_dynamics},
      {"tank scenario 1 steady state", tank_scenario_one},
      {"scenario 5 MFC vs PI", mfc_versus_pi},
      {"cut recovery", cut_recovery},
      {"freeze semantics", freeze_semantics},
      {"codec and loss statistics", codec_and_loss},
      {"determinism", [&] { return determinism(work); }},
      {"joystick filter and record/replay", [&] { return joystick(work); }},
  };
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::fprintf(stderr, "no criterion %d\n", only);
    return 2;
  }

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::printf("criterion %zu [%s] %s: %s\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str());
  }
  return all ? 0 : 1;
}
