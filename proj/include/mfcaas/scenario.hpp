#pragma once

// Scenario catalog, run helpers, metrics and trace export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfcaas/control_loop.hpp"

namespace mfcaas {

class ScenarioError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Testbed { tank, aero };

inline const char* to_string(Testbed t) { return t == Testbed::tank ? "tank" : "aero"; }
inline const char* to_string(ControlLaw c) { return c == ControlLaw::mfc ? "mfc" : "pi"; }

/// Angular acceleration acting on the surrogate arm: bias + amplitude * sin(2 pi f t).
struct AeroDisturbance {
  double bias = -0.1;
  double amplitude = 0.05;
  double frequency_hz = 0.02;

  double operator()(double t) const {
    return bias + amplitude * std::sin(2.0 * std::numbers::pi * frequency_hz * t);
  }
};

struct JoystickConfig {
  double T = 2.0;
  double axis_scale = 0.8;  // rad per unit of axis
  AxisScript script;
};

struct ScenarioSpec {
  std::string name;
  std::string description;
  Testbed testbed = Testbed::tank;
  ControllerConfig control;
  LossModel loss;
  ReferenceSchedule reference;
  ValveSchedule valve;
  TankParams tank;
  AeroParams aero;
  AeroDisturbance disturbance;
  std::optional<JoystickConfig> joystick;
  double duration = 200.0;
  std::uint64_t seed = 42;

  double period() const { return control.mfc.ts; }

  /// Re-seeds every random stream of the run (noise and both loss directions).
  void reseed(std::uint64_t s) {
    seed = s;
    loss.rng_seed = s;
    tank.rng_seed = s;
  }
};

// ---------------------------------------------------------------------------
// Catalog

namespace catalog {

inline ReferenceSchedule tank_reference() {
  return {{0.0, 0.0}, {10.0, 15.0}, {80.0, 40.0}, {100.0, 55.0}, {130.0, 10.0}, {180.0, 0.0}};
}
inline ValveSchedule tank_valve() { return {{0.0, 10.0}, {30.0, 50.0}, {120.0, 20.0}}; }

// The AERO reference is not published; +-0.5 rad steps every 50 s.
inline ReferenceSchedule aero_reference() {
  return {{0.0, 0.5}, {50.0, -0.5}, {100.0, 0.5}, {150.0, -0.5}, {200.0, 0.5}};
}

// Two sensor-side cuts and one actuator-side cut; the published runs do not
// give their times.
inline void aero_cuts(LossModel& loss) {
  loss.cuts_fault1 = {{60.0, 70.0}, {160.0, 170.0}};
  loss.cuts_fault2 = {{110.0, 120.0}};
}

/// Scripted joystick motion used when no recorded input is supplied.
inline AxisScript default_axis_script() {
  static constexpr double axis[] = {0.0,  0.5,  0.5,  -0.5, -0.5, 1.0,   0.0,  0.0,  -1.0, -0.25, 0.25, 0.75, 0.0,
                                    -0.75, -0.75, 0.5,  1.0,  0.25, -0.5,  -1.0, 0.0,  0.6,  -0.6,  0.0,  0.0};
  AxisScript s;
  for (std::size_t i = 0; i < std::size(axis); ++i) s.samples.emplace_back(10.0 * static_cast<double>(i), axis[i]);
  return s;
}

inline ScenarioSpec tank_base(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.testbed = Testbed::tank;
  s.control.law = ControlLaw::mfc;
  s.control.mfc = {.alpha = 0.1, .kp = 0.5, .tau = 2.0, .ts = 0.1, .u_min = 0.0, .u_max = 70.0};
  s.control.estimator = Estimator::algebraic;
  s.control.pi_kp = 29.69;
  s.control.pi_ki = 2.27009;
  s.reference = tank_reference();
  s.valve = tank_valve();
  s.duration = 200.0;
  s.reseed(42);
  return s;
}

inline ScenarioSpec to_pi(ScenarioSpec s) {
  s.name += "-pi";
  s.control.law = ControlLaw::pi;
  s.valve = ValveSchedule{{0.0, 30.0}};
  s.description += "; PI baseline with fixed valve opening 30";
  return s;
}

inline ScenarioSpec aero_base(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.testbed = Testbed::aero;
  s.control.law = ControlLaw::mfc;
  s.control.mfc = {.alpha = 5.0, .kp = -10.0, .tau = 0.02, .ts = 0.01, .u_min = -kAeroControlLimit,
                   .u_max = kAeroControlLimit};
  s.control.estimator = Estimator::algebraic;
  s.control.error_convention = ErrorConvention::reference_minus_output;
  s.reference = aero_reference();
  s.aero.dt = 0.01;
  s.duration = 250.0;
  s.reseed(42);
  return s;
}

inline ScenarioSpec joystick_base(const std::string& name, double T) {
  ScenarioSpec s = aero_base(name);
  s.joystick = JoystickConfig{.T = T, .axis_scale = 0.8, .script = default_axis_script()};
  return s;
}

struct Entry {
  const char* name;
  const char* summary;
};

inline const std::vector<Entry>& entries() {
  static const std::vector<Entry> list = {
      {"tank-1", "tank, MFC, no packet loss"},
      {"tank-2", "tank, MFC, sensor cut [140,150) s and actuator cut [50,60) s"},
      {"tank-3", "tank, MFC, 30% loss both directions"},
      {"tank-4", "tank, MFC, 50% loss both directions"},
      {"tank-5", "tank, MFC, 70% loss both directions"},
      {"tank-1-pi", "tank, PI baseline (valve 30), no packet loss"},
      {"tank-2-pi", "tank, PI baseline (valve 30), cuts as tank-2"},
      {"tank-5-pi", "tank, PI baseline (valve 30), 70% loss both directions"},
      {"aero-1", "half-quadrotor surrogate, two sensor cuts and one actuator cut"},
      {"aero-2", "half-quadrotor surrogate, 24.02% / 24.85% loss"},
      {"aero-3", "half-quadrotor surrogate, 39.27004% / 39.64% loss"},
      {"joy-4", "joystick reference, T = 4 s, no loss"},
      {"joy-5", "joystick reference, T = 2 s, no loss"},
      {"joy-6", "joystick reference, T = 0.5 s, no loss"},
      {"joy-7", "joystick reference, T = 2 s, two sensor cuts and one actuator cut"},
      {"joy-8", "joystick reference, T = 2 s, 23.56% / 25.27% loss"},
      {"joy-9", "joystick reference, T = 2 s, 38.79% / 40.50% loss"},
  };
  return list;
}

}  // namespace catalog

inline std::vector<std::string> scenario_names() {
  std::vector<std::string> out;
  for (const auto& e : catalog::entries()) out.emplace_back(e.name);
  return out;
}

inline ScenarioSpec build_scenario(const std::string& name) {
  using namespace catalog;
  auto with = [&](ScenarioSpec s) {
    for (const auto& e : entries()) {
      if (name == e.name) s.description = e.summary;
    }
    s.name = name;
    return s;
  };

  if (name == "tank-1") return with(tank_base(name));
  if (name == "tank-2" || name == "tank-2-pi") {
    ScenarioSpec s = tank_base("tank-2");
    s.loss.cuts_fault1 = {{140.0, 150.0}};
    s.loss.cuts_fault2 = {{50.0, 60.0}};
    return with(name == "tank-2" ? s : to_pi(s));
  }
  for (const auto& [n, p] : {std::pair{"tank-3", 0.3}, {"tank-4", 0.5}, {"tank-5", 0.7}}) {
    if (name == n) {
      ScenarioSpec s = tank_base(name);
      s.loss.p_fault1 = s.loss.p_fault2 = p;
      return with(s);
    }
  }
  if (name == "tank-1-pi") return with(to_pi(tank_base("tank-1")));
  if (name == "tank-5-pi") {
    ScenarioSpec s = tank_base("tank-5");
    s.loss.p_fault1 = s.loss.p_fault2 = 0.7;
    return with(to_pi(s));
  }
  if (name == "aero-1") {
    ScenarioSpec s = aero_base(name);
    aero_cuts(s.loss);
    return with(s);
  }
  if (name == "aero-2" || name == "aero-3") {
    ScenarioSpec s = aero_base(name);
    s.loss.p_fault1 = name == "aero-2" ? 0.2402 : 0.3927004;
    s.loss.p_fault2 = name == "aero-2" ? 0.2485 : 0.3964;
    return with(s);
  }
  if (name == "joy-4") return with(joystick_base(name, 4.0));
  if (name == "joy-5") return with(joystick_base(name, 2.0));
  if (name == "joy-6") return with(joystick_base(name, 0.5));
  if (name == "joy-7") {
    ScenarioSpec s = joystick_base(name, 2.0);
    aero_cuts(s.loss);
    return with(s);
  }
  if (name == "joy-8" || name == "joy-9") {
    ScenarioSpec s = joystick_base(name, 2.0);
    s.loss.p_fault1 = name == "joy-8" ? 0.2356 : 0.3879;
    s.loss.p_fault2 = name == "joy-8" ? 0.2527 : 0.4050;
    return with(s);
  }

  std::string msg = "unknown scenario '" + name + "'; available:";
  for (const auto& n : scenario_names()) msg += " " + n;
  throw ScenarioError(msg);
}

// ---------------------------------------------------------------------------
// Building and running

inline std::uint64_t noise_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 0x6e6f697365ull; }

inline PlantNode make_plant_node(const ScenarioSpec& spec) {
  if (spec.testbed == Testbed::tank) {
    TankParams p = spec.tank;
    p.ts = spec.period();
    return PlantNode(TankPlant(p, spec.valve, noise_seed(spec.seed)));
  }
  AeroParams a = spec.aero;
  a.dt = spec.period();
  if (!a.disturbance) a.disturbance = spec.disturbance;
  return PlantNode(AeroPlant(a));
}

inline ReferenceSource make_reference(const ScenarioSpec& spec) {
  if (spec.joystick) {
    const auto& j = *spec.joystick;
    const double dt = spec.period();
    if (!(j.T > 0.0)) throw ValidationError("joystick T must be positive");
    if (dt > j.T / 10.0 + 1e-12) throw ValidationError("joystick T must be at least 10 sampling periods");
    const double start = j.axis_scale * j.script.axis_at(0.0);
    return JoystickReference{JoystickFilterState::at_rest(start, j.T), j.axis_scale, j.script, std::nullopt};
  }
  return ScheduleReference{spec.reference};
}

inline ControllerNode make_controller_node(const ScenarioSpec& spec) {
  return ControllerNode(spec.control, make_reference(spec));
}

inline LossModel loss_for(const ScenarioSpec& spec) {
  LossModel l = spec.loss;
  l.rng_seed = spec.seed;
  return l;
}

enum class LinkMode { sim, udp };

inline LinkMode parse_link_mode(const std::string& s) {
  if (s == "sim") return LinkMode::sim;
  if (s == "udp") return LinkMode::udp;
  throw ValidationError("unknown mode '" + s + "' (expected sim|udp)");
}

/// Runs a scenario to completion. `realtime` paces ticks on the wall clock;
/// in UDP mode it also puts each node in its own thread.
inline Trace run_scenario(const ScenarioSpec& spec, LinkMode mode = LinkMode::sim, bool realtime = false) {
  spec.loss.validate();
  const TickClock clock(realtime ? ClockMode::realtime : ClockMode::virtual_time, spec.period());
  if (mode == LinkMode::sim) {
    return run_loop<VirtualLink>(make_plant_node(spec), make_controller_node(spec), loss_for(spec), clock,
                                 spec.duration);
  }
  if (realtime) {
    return run_udp_realtime(make_plant_node(spec), make_controller_node(spec), loss_for(spec), spec.period(),
                            spec.duration);
  }
  return run_loop<UdpLoopbackLink>(make_plant_node(spec), make_controller_node(spec), loss_for(spec), clock,
                                   spec.duration, UdpLoopbackLink{});
}

// ---------------------------------------------------------------------------
// Metrics

struct SegmentMetrics {
  double t_start = 0.0;
  double t_end = 0.0;
  double setpoint = 0.0;
  double steady_state_error = 0.0;  // mean |e| over the last 5 s of the segment
  double saturation_duty = 0.0;     // percent of the segment's ticks with u at a bound
};

struct RunMetrics {
  double rmse = 0.0;
  double iae = 0.0;
  std::vector<SegmentMetrics> segments;
  double realized_loss_fault1 = 0.0;  // percent
  double realized_loss_fault2 = 0.0;  // percent
  double saturation_duty = 0.0;       // percent
};

inline constexpr double kSteadyStateWindow = 5.0;

inline bool at_bound(double u, const UltraLocalConfig& cfg) {
  constexpr double eps = 1e-9;
  return std::abs(u - cfg.u_min) <= eps || std::abs(u - cfg.u_max) <= eps;
}

inline RunMetrics evaluate(const Trace& trace, const ScenarioSpec& spec) {
  if (trace.empty()) throw ScenarioError("cannot evaluate an empty trace");
  RunMetrics m;
  double sq = 0.0;
  std::size_t sat = 0, lost1 = 0, lost2 = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    const double e = r.y - r.y_star;
    sq += e * e;
    if (i > 0) {
      const auto& p = trace[i - 1];
      m.iae += 0.5 * (r.t - p.t) * (std::abs(e) + std::abs(p.y - p.y_star));
    }
    if (at_bound(r.u_sent, spec.control.mfc)) ++sat;
    if (r.lost_sensor) ++lost1;
    if (r.lost_control) ++lost2;
  }
  const double n = static_cast<double>(trace.size());
  m.rmse = std::sqrt(sq / n);
  m.saturation_duty = 100.0 * static_cast<double>(sat) / n;
  m.realized_loss_fault1 = 100.0 * static_cast<double>(lost1) / n;
  m.realized_loss_fault2 = 100.0 * static_cast<double>(lost2) / n;

  if (!spec.joystick) {
    const auto& entries = spec.reference.entries();
    const double t_last = trace.back().t + spec.period();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      SegmentMetrics s;
      s.t_start = entries[i].first;
      s.t_end = i + 1 < entries.size() ? entries[i + 1].first : std::max(spec.duration, t_last);
      s.setpoint = entries[i].second;
      double err = 0.0, count = 0.0, seg_ticks = 0.0, seg_sat = 0.0;
      for (const auto& r : trace) {
        if (r.t < s.t_start - 1e-9 || r.t >= s.t_end - 1e-9) continue;
        seg_ticks += 1.0;
        if (at_bound(r.u_sent, spec.control.mfc)) seg_sat += 1.0;
        if (r.t >= s.t_end - kSteadyStateWindow - 1e-9) {
          err += std::abs(r.y - r.y_star);
          count += 1.0;
        }
      }
      if (seg_ticks == 0.0) continue;
      s.steady_state_error = count > 0.0 ? err / count : 0.0;
      s.saturation_duty = 100.0 * seg_sat / seg_ticks;
      m.segments.push_back(s);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Export

inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline constexpr const char* kCsvHeader = "t,y,y_star,ydot_star,u_sent,u_applied,f_est,fault,v1,v2";

inline void write_csv(std::ostream& os, const Trace& trace) {
  os << kCsvHeader << '\n';
  for (const auto& r : trace) {
    os << format_g9(r.t) << ',' << format_g9(r.y) << ',' << format_g9(r.y_star) << ',' << format_g9(r.ydot_star)
       << ',' << format_g9(r.u_sent) << ',' << format_g9(r.u_applied) << ',' << format_g9(r.f_est) << ','
       << r.fault << ',';
    if (r.voltages) os << format_g9(r.voltages->v1) << ',' << format_g9(r.voltages->v2);
    else os << ',';
    os << '\n';
  }
}

inline void export_csv(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ScenarioError("cannot open '" + path + "' for writing");
  write_csv(out, trace);
  if (!out) throw ScenarioError("write to '" + path + "' failed");
}

inline void write_summary(std::ostream& os, const RunMetrics& m, const ScenarioSpec& spec) {
  os << "scenario=" << spec.name << '\n'
     << "seed=" << spec.seed << '\n'
     << "rmse=" << format_g9(m.rmse) << '\n'
     << "iae=" << format_g9(m.iae) << '\n'
     << "saturation_duty_pct=" << format_g9(m.saturation_duty) << '\n'
     << "realized_loss_fault1_pct=" << format_g9(m.realized_loss_fault1) << '\n'
     << "realized_loss_fault2_pct=" << format_g9(m.realized_loss_fault2) << '\n';
  for (std::size_t i = 0; i < m.segments.size(); ++i) {
    const auto& s = m.segments[i];
    os << "segment." << i << "=t_start:" << format_g9(s.t_start) << " t_end:" << format_g9(s.t_end)
       << " setpoint:" << format_g9(s.setpoint) << " steady_state_error:" << format_g9(s.steady_state_error)
       << " saturation_duty_pct:" << format_g9(s.saturation_duty) << '\n';
  }
}

inline void export_summary(const RunMetrics& m, const ScenarioSpec& spec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ScenarioError("cannot open '" + path + "' for writing");
  write_summary(out, m, spec);
  if (!out) throw ScenarioError("write to '" + path + "' failed");
}

/// Key/value description of a spec, one `key: value` per line.
inline std::string describe(const ScenarioSpec& s) {
  std::ostringstream os;
  auto cuts = [](const std::vector<Interval>& v) {
    std::string out;
    for (const auto& c : v) out += (out.empty() ? "" : " ") + ("[" + format_g9(c.start) + "," + format_g9(c.end) + ")");
    return out.empty() ? std::string("none") : out;
  };
  os << "name: " << s.name << '\n'
     << "description: " << s.description << '\n'
     << "testbed: " << to_string(s.testbed) << '\n'
     << "controller: " << to_string(s.control.law) << '\n'
     << "estimator: " << to_string(s.control.estimator) << '\n'
     << "alpha: " << format_g9(s.control.mfc.alpha) << '\n'
     << "kp: " << format_g9(s.control.mfc.kp) << '\n'
     << "tau: " << format_g9(s.control.mfc.tau) << '\n'
     << "ts: " << format_g9(s.control.mfc.ts) << '\n'
     << "u_min: " << format_g9(s.control.mfc.u_min) << '\n'
     << "u_max: " << format_g9(s.control.mfc.u_max) << '\n'
     << "error: " << (s.control.error_convention == ErrorConvention::output_minus_reference ? "y - y*" : "y* - y")
     << '\n';
  if (s.control.law == ControlLaw::pi) {
    os << "pi_kp: " << format_g9(s.control.pi_kp) << '\n'
       << "pi_ki: " << format_g9(s.control.pi_ki) << '\n'
       << "pi_anti_windup: " << (s.control.pi_anti_windup ? "true" : "false") << '\n';
  }
  os << "fault1_reemit: " << (s.control.fault1_reemit ? "true" : "false") << '\n'
     << "p_fault1: " << format_g9(s.loss.p_fault1) << '\n'
     << "p_fault2: " << format_g9(s.loss.p_fault2) << '\n'
     << "cuts_fault1: " << cuts(s.loss.cuts_fault1) << '\n'
     << "cuts_fault2: " << cuts(s.loss.cuts_fault2) << '\n'
     << "duration: " << format_g9(s.duration) << '\n'
     << "seed: " << s.seed << '\n';
  if (s.joystick) {
    os << "joystick_T: " << format_g9(s.joystick->T) << '\n'
       << "joystick_axis_scale: " << format_g9(s.joystick->axis_scale) << '\n';
  } else {
    os << "reference:";
    for (const auto& [t, v] : s.reference.entries()) os << ' ' << format_g9(t) << "->" << format_g9(v);
    os << '\n';
  }
  if (s.testbed == Testbed::tank) {
    os << "valve:";
    for (const auto& [t, v] : s.valve.entries()) os << ' ' << format_g9(t) << "->" << format_g9(v);
    os << '\n' << "noise_stddev: " << format_g9(s.tank.noise_stddev()) << '\n';
  } else {
    os << "aero_gain_b: " << format_g9(s.aero.gain_b) << '\n'
       << "aero_damping_c: " << format_g9(s.aero.damping_c) << '\n'
       << "aero_disturbance: " << format_g9(s.disturbance.bias) << " + " << format_g9(s.disturbance.amplitude)
       << " sin(2 pi " << format_g9(s.disturbance.frequency_hz) << " t)\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Scripted joystick input: "t,axis" lines, optional header.

inline AxisScript parse_axis_script(std::istream& in, const std::string& origin = "<stream>") {
  AxisScript s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line.rfind("t,", 0) == 0) continue;
    const auto comma = line.find(',');
    double t = 0.0, a = 0.0;
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      std::size_t used = 0;
      t = std::stod(line.substr(0, comma), &used);
      a = std::stod(line.substr(comma + 1), &used);
    } catch (const std::exception&) {
      throw ScenarioError(origin + ":" + std::to_string(lineno) + ": expected 't,axis'");
    }
    if (!(a >= -1.0 && a <= 1.0)) throw ScenarioError(origin + ":" + std::to_string(lineno) + ": axis outside [-1, 1]");
    if (!s.samples.empty() && !(t > s.samples.back().first)) {
      throw ScenarioError(origin + ":" + std::to_string(lineno) + ": times must be strictly increasing");
    }
    s.samples.emplace_back(t, a);
  }
  return s;
}

inline AxisScript load_axis_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open '" + path + "'");
  return parse_axis_script(in, path);
}

}  // namespace mfcaas
