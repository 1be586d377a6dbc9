#pragma once

// Human-in-the-loop steering: commands, telemetry frames, replay files and
// the authoritative session that applies commands at tick boundaries.
// Networking lives in steering_server.hpp; this header is transport-free.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mfcaas/scenario.hpp"

namespace mfcaas {

// ---------------------------------------------------------------------------
// Commands

struct SetAxis { double value = 0.0; };
struct SetSetpoint { double value = 0.0; };
struct SetLoss { double p_fault1 = 0.0; double p_fault2 = 0.0; };
struct SetT { double seconds = 1.0; };
struct Pause {};
struct Resume {};
struct Reset { std::uint64_t seed = 0; };

using Command = std::variant<SetAxis, SetSetpoint, SetLoss, SetT, Pause, Resume, Reset>;

class CommandError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline std::string command_name(const Command& c) {
  struct {
    const char* operator()(const SetAxis&) const { return "set_axis"; }
    const char* operator()(const SetSetpoint&) const { return "set_setpoint"; }
    const char* operator()(const SetLoss&) const { return "set_loss"; }
    const char* operator()(const SetT&) const { return "set_T"; }
    const char* operator()(const Pause&) const { return "pause"; }
    const char* operator()(const Resume&) const { return "resume"; }
    const char* operator()(const Reset&) const { return "reset"; }
  } v;
  return std::visit(v, c);
}

namespace detail {

inline double number_field(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) throw CommandError(std::string("missing numeric field '") + key + "'");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw CommandError(std::string("field '") + key + "' must be finite");
  return v;
}

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses a client message such as {"cmd":"set_axis","value":0.5}.
inline Command command_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw CommandError("command must be a JSON object");
  const auto it = j.find("cmd");
  if (it == j.end() || !it->is_string()) throw CommandError("missing string field 'cmd'");
  const std::string cmd = it->get<std::string>();
  if (cmd == "set_axis") return SetAxis{detail::number_field(j, "value")};
  if (cmd == "set_setpoint") return SetSetpoint{detail::number_field(j, "value")};
  if (cmd == "set_loss") return SetLoss{detail::number_field(j, "p_fault1"), detail::number_field(j, "p_fault2")};
  if (cmd == "set_T") return SetT{detail::number_field(j, "value")};
  if (cmd == "pause") return Pause{};
  if (cmd == "resume") return Resume{};
  if (cmd == "reset") {
    const auto s = j.find("seed");
    if (s == j.end() || !s->is_number_unsigned()) throw CommandError("reset needs a non-negative integer 'seed'");
    return Reset{s->get<std::uint64_t>()};
  }
  throw CommandError("unknown command '" + cmd + "'");
}

inline nlohmann::json command_to_json(const Command& c) {
  nlohmann::json j;
  j["cmd"] = command_name(c);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SetAxis> || std::is_same_v<T, SetSetpoint>) j["value"] = v.value;
        else if constexpr (std::is_same_v<T, SetT>) j["value"] = v.seconds;
        else if constexpr (std::is_same_v<T, SetLoss>) {
          j["p_fault1"] = v.p_fault1;
          j["p_fault2"] = v.p_fault2;
        } else if constexpr (std::is_same_v<T, Reset>) j["seed"] = v.seed;
      },
      c);
  return j;
}

// ---------------------------------------------------------------------------
// Replay file: "tick,cmd,value" lines; set_loss packs both rates as "p1;p2",
// pause/resume leave value empty. Values keep 17 significant digits.

struct ReplayEntry {
  std::uint64_t tick = 0;
  Command command;
};

inline std::string replay_line(const ReplayEntry& e) {
  std::string value = std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, SetAxis> || std::is_same_v<T, SetSetpoint>) return detail::g17(v.value);
        else if constexpr (std::is_same_v<T, SetT>) return detail::g17(v.seconds);
        else if constexpr (std::is_same_v<T, SetLoss>) return detail::g17(v.p_fault1) + ";" + detail::g17(v.p_fault2);
        else if constexpr (std::is_same_v<T, Reset>) return std::to_string(v.seed);
        else return "";
      },
      e.command);
  return std::to_string(e.tick) + "," + command_name(e.command) + "," + value;
}

inline ReplayEntry parse_replay_line(const std::string& line) {
  const auto c1 = line.find(',');
  const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
  if (c2 == std::string::npos) throw CommandError("replay line must be 'tick,cmd,value': " + line);
  ReplayEntry e;
  try {
    std::size_t used = 0;
    e.tick = std::stoull(line.substr(0, c1), &used);
    if (used != c1) throw std::invalid_argument("tick");
  } catch (const std::exception&) {
    throw CommandError("bad tick in replay line: " + line);
  }
  const std::string cmd = line.substr(c1 + 1, c2 - c1 - 1);
  const std::string value = line.substr(c2 + 1);
  auto num = [&](const std::string& s) {
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw CommandError("bad value in replay line: " + line);
    }
  };
  if (cmd == "set_axis") e.command = SetAxis{num(value)};
  else if (cmd == "set_setpoint") e.command = SetSetpoint{num(value)};
  else if (cmd == "set_T") e.command = SetT{num(value)};
  else if (cmd == "set_loss") {
    const auto semi = value.find(';');
    if (semi == std::string::npos) throw CommandError("set_loss value must be 'p1;p2': " + line);
    e.command = SetLoss{num(value.substr(0, semi)), num(value.substr(semi + 1))};
  } else if (cmd == "pause") e.command = Pause{};
  else if (cmd == "resume") e.command = Resume{};
  else if (cmd == "reset") {
    try {
      e.command = Reset{std::stoull(value)};
    } catch (const std::exception&) {
      throw CommandError("bad seed in replay line: " + line);
    }
  } else {
    throw CommandError("unknown command in replay line: " + line);
  }
  return e;
}

inline std::vector<ReplayEntry> parse_replay(std::istream& in) {
  std::vector<ReplayEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || line.rfind("tick,", 0) == 0) continue;
    out.push_back(parse_replay_line(line));
    if (out.size() > 1 && out.back().tick < out[out.size() - 2].tick) {
      throw CommandError("replay ticks must be non-decreasing");
    }
  }
  return out;
}

inline std::vector<ReplayEntry> load_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open '" + path + "'");
  return parse_replay(in);
}

inline void save_replay(const std::vector<ReplayEntry>& entries, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ScenarioError("cannot open '" + path + "' for writing");
  out << "tick,cmd,value\n";
  for (const auto& e : entries) out << replay_line(e) << '\n';
  if (!out) throw ScenarioError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Telemetry

struct TelemetryFrame {
  std::uint64_t frame = 0;
  std::uint64_t tick = 0;
  TraceRecord record;
  double loss_realized_1 = 0.0;  // percent of sensor datagrams dropped so far
  double loss_realized_2 = 0.0;  // percent of control datagrams dropped so far
};

inline nlohmann::json to_json(const TelemetryFrame& f) {
  nlohmann::json j;
  j["type"] = "telemetry";
  j["frame"] = f.frame;
  j["t"] = f.record.t;
  j["y"] = f.record.y;
  j["y_star"] = f.record.y_star;
  j["u"] = f.record.u_sent;
  j["f_est"] = f.record.f_est;
  j["fault"] = f.record.fault;
  if (f.record.voltages) {
    j["v1"] = f.record.voltages->v1;
    j["v2"] = f.record.voltages->v2;
  } else {
    j["v1"] = nullptr;
    j["v2"] = nullptr;
  }
  j["loss_realized_1"] = f.loss_realized_1;
  j["loss_realized_2"] = f.loss_realized_2;
  return j;
}

/// Keeps every n-th tick plus every tick whose fault code differs from the
/// previous tick's.
class Decimator {
public:
  explicit Decimator(std::size_t every = 5) : every_(every == 0 ? 1 : every) {}

  bool keep(std::uint64_t tick, int fault) {
    const bool transition = seen_ && last_fault_ != fault;
    last_fault_ = fault;
    seen_ = true;
    return transition || tick % every_ == 0;
  }

  void reset() { seen_ = false; }

private:
  std::size_t every_;
  bool seen_ = false;
  int last_fault_ = 0;
};

// ---------------------------------------------------------------------------
// Session

struct OutputRange {
  double lo = 0.0;
  double hi = 0.0;
};

inline OutputRange output_range(const ScenarioSpec& spec) {
  if (spec.testbed == Testbed::tank) return {spec.tank.y_min, spec.tank.y_max};
  return {-std::numbers::pi / 2.0, std::numbers::pi / 2.0};
}

/// Axis-to-reference mapping used in live mode: reference = offset + scale * axis.
struct AxisMapping {
  double offset = 0.0;
  double scale = 1.0;
};

inline AxisMapping axis_mapping(const ScenarioSpec& spec) {
  if (spec.joystick) return {0.0, spec.joystick->axis_scale};
  if (spec.testbed == Testbed::tank) {
    const OutputRange r = output_range(spec);
    return {0.5 * (r.lo + r.hi), 0.5 * (r.hi - r.lo)};
  }
  return {0.0, 0.8};
}

inline constexpr double kDefaultLiveT = 2.0;

/// The one authoritative loop of a steering service. `submit` may be called
/// from any thread; `tick` belongs to the single ticker thread. Commands are
/// queued and applied at the start of the next tick, in arrival order, and
/// recorded with that tick index.
class SteeringSession {
public:
  struct TickResult {
    std::optional<TraceRecord> record;
    std::optional<TelemetryFrame> frame;
    std::vector<Command> applied;
  };

  explicit SteeringSession(ScenarioSpec spec, std::size_t decimation = 5, bool keep_trace = true)
      : spec_(std::move(spec)), decimator_(decimation), keep_trace_(keep_trace) {
    live_T_ = spec_.joystick ? spec_.joystick->T : kDefaultLiveT;
    rebuild();
  }

  /// Validates against the plant and queues the command. Throws CommandError
  /// without touching the loop if the command is invalid.
  void submit(const Command& c) {
    validate(c);
    std::lock_guard lock(queue_mutex_);
    queue_.push_back(c);
  }

  /// Drains queued commands, then runs one loop tick unless paused.
  TickResult tick() {
    std::vector<Command> pending;
    {
      std::lock_guard lock(queue_mutex_);
      pending.swap(queue_);
    }
    return tick_with(pending);
  }

  /// Batch replay: applies each entry at its recorded tick.
  Trace replay(const std::vector<ReplayEntry>& entries, std::uint64_t ticks) {
    std::size_t next = 0;
    while (steps_ < ticks) {
      std::vector<Command> due;
      while (next < entries.size() && entries[next].tick <= steps_) {
        if (entries[next].tick < steps_) throw CommandError("replay entry in the past");
        due.push_back(entries[next++].command);
      }
      const std::uint64_t before = steps_;
      tick_with(due);
      if (steps_ == before && (next >= entries.size() || entries[next].tick != steps_)) {
        throw CommandError("replay stalls: paused at tick " + std::to_string(steps_.load()));
      }
    }
    return trace_;
  }

  const std::vector<ReplayEntry>& replay_log() const { return log_; }
  const Trace& trace() const { return trace_; }
  std::uint64_t steps() const { return steps_; }
  bool paused() const { return paused_; }
  double period() const { return spec_.period(); }
  const ScenarioSpec& spec() const { return spec_; }

  std::string spec_text() const {
    std::lock_guard lock(text_mutex_);
    return spec_text_;
  }

  const LossGate& gate(Direction d) const { return runner_->gate(d); }
  const LoopRunner<VirtualLink>& runner() const { return *runner_; }

  void validate(const Command& c) const {
    const OutputRange range = output_range(spec_);
    const double period = spec_.period();
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, SetAxis>) {
            if (!(v.value >= -1.0 && v.value <= 1.0)) throw CommandError("axis must lie in [-1, 1]");
          } else if constexpr (std::is_same_v<T, SetSetpoint>) {
            if (!(v.value >= range.lo && v.value <= range.hi)) {
              throw CommandError("setpoint outside plant range [" + format_g9(range.lo) + ", " +
                                 format_g9(range.hi) + "]");
            }
          } else if constexpr (std::is_same_v<T, SetLoss>) {
            for (double p : {v.p_fault1, v.p_fault2}) {
              if (!(p >= 0.0 && p <= 1.0)) throw CommandError("loss probabilities must lie in [0, 1]");
            }
          } else if constexpr (std::is_same_v<T, SetT>) {
            if (!(v.seconds > 0.0) || period > v.seconds / 10.0 + 1e-12) {
              throw CommandError("T must be positive and at least 10 tick periods");
            }
          }
        },
        c);
  }

private:
  TickResult tick_with(const std::vector<Command>& commands) {
    TickResult out;
    for (const auto& c : commands) {
      log_.push_back({steps_.load(), c});
      apply(c);
      out.applied.push_back(c);
    }
    if (paused_) return out;

    TraceRecord rec = runner_->step();
    const std::uint64_t tick = steps_++;
    if (keep_trace_) trace_.push_back(rec);
    if (decimator_.keep(runner_->tick_index() - 1, rec.fault)) {
      TelemetryFrame f;
      f.frame = next_frame_++;
      f.tick = tick;
      f.record = rec;
      f.loss_realized_1 = 100.0 * runner_->gate(Direction::fault1).realized_loss();
      f.loss_realized_2 = 100.0 * runner_->gate(Direction::fault2).realized_loss();
      out.frame = f;
    }
    out.record = rec;
    return out;
  }

  void rebuild() {
    runner_ = std::make_unique<LoopRunner<VirtualLink>>(make_plant_node(spec_), make_controller_node(spec_),
                                                        loss_for(spec_), spec_.period());
    decimator_.reset();
    std::lock_guard lock(text_mutex_);
    spec_text_ = describe(spec_);
  }

  JoystickReference& live_reference() {
    auto& ref = runner_->controller().reference();
    if (auto* j = std::get_if<JoystickReference>(&ref)) return *j;
    // switch from the schedule to a filtered live reference starting at rest
    // on the current setpoint
    const double t = static_cast<double>(runner_->tick_index()) * spec_.period();
    const double start = std::get<ScheduleReference>(ref).schedule.value_at(t);
    const AxisMapping m = axis_mapping(spec_);
    ref = JoystickReference{JoystickFilterState::at_rest(start, live_T_), m.scale, AxisScript{}, start};
    return std::get<JoystickReference>(ref);
  }

  void apply(const Command& c) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, SetAxis>) {
            const AxisMapping m = axis_mapping(spec_);
            live_reference().live_input = m.offset + m.scale * v.value;
          } else if constexpr (std::is_same_v<T, SetSetpoint>) {
            live_reference().live_input = v.value;
          } else if constexpr (std::is_same_v<T, SetLoss>) {
            runner_->gate(Direction::fault1).set_probability(v.p_fault1);
            runner_->gate(Direction::fault2).set_probability(v.p_fault2);
          } else if constexpr (std::is_same_v<T, SetT>) {
            live_T_ = v.seconds;
            if (auto* j = std::get_if<JoystickReference>(&runner_->controller().reference())) j->filter.T = v.seconds;
          } else if constexpr (std::is_same_v<T, Pause>) {
            paused_ = true;
          } else if constexpr (std::is_same_v<T, Resume>) {
            paused_ = false;
          } else if constexpr (std::is_same_v<T, Reset>) {
            spec_.reseed(v.seed);
            live_T_ = spec_.joystick ? spec_.joystick->T : kDefaultLiveT;
            rebuild();
          }
        },
        c);
  }

  ScenarioSpec spec_;
  std::unique_ptr<LoopRunner<VirtualLink>> runner_;
  Decimator decimator_;
  bool keep_trace_;
  bool paused_ = false;
  double live_T_ = kDefaultLiveT;
  std::atomic<std::uint64_t> steps_{0};
  std::uint64_t next_frame_ = 0;
  Trace trace_;
  std::vector<ReplayEntry> log_;

  std::mutex queue_mutex_;
  std::vector<Command> queue_;
  mutable std::mutex text_mutex_;
  std::string spec_text_;
};

}  // namespace mfcaas
