#pragma once

// Plant node and controller node state machines, the links that carry their
// datagrams (in-process or UDP loopback), and the tick driver.
//
// Tick k at time t_k = k * period runs, in this order:
//   controller_tick -> fault-2 gate -> plant_tick -> fault-1 gate
// The sensor datagram emitted by the plant at tick k carries y(t_{k+1}) and is
// what the controller consumes at tick k+1.

#include <chrono>
#include <exception>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "mfcaas/mfc_core.hpp"
#include "mfcaas/net_link.hpp"
#include "mfcaas/plant_models.hpp"
#include "mfcaas/udp_socket.hpp"

namespace mfcaas {

using Packet = std::vector<std::uint8_t>;

inline Packet to_packet(const Datagram& d) {
  const WireBytes b = encode(d);
  return Packet(b.begin(), b.end());
}

// ---------------------------------------------------------------------------
// Plants

struct PlantStepInfo {
  double u = 0.0;                    // control actually applied (after plant-side clamp)
  std::optional<Voltages> voltages;  // motor supplies, AERO only
};

class TankPlant {
public:
  TankPlant(TankParams params, ValveSchedule valve, std::uint64_t noise_seed)
      : params_(params), valve_(std::move(valve)), noise_rng_(noise_seed) {}

  double output() const { return state_.y; }
  double period() const { return params_.ts; }

  double measure() { return state_.y + sample_noise(params_, noise_rng_); }

  PlantStepInfo step(double u, double t) {
    const double applied = std::clamp(u, params_.u_min, params_.u_max);
    const double r = valve_.value_at(t);
    state_.t = t;
    state_ = tank_step(state_, applied, r, params_, 0.0).state;
    return {applied, std::nullopt};
  }

  const TankState& state() const { return state_; }
  const TankParams& params() const { return params_; }

private:
  TankParams params_;
  ValveSchedule valve_;
  TankState state_{};
  std::mt19937_64 noise_rng_;
};

class AeroPlant {
public:
  explicit AeroPlant(AeroParams params, double u_limit = kAeroControlLimit)
      : params_(std::move(params)), u_limit_(u_limit) {}

  double output() const { return state_.theta; }
  double period() const { return params_.dt; }
  double measure() { return state_.theta; }

  PlantStepInfo step(double u, double t) {
    const double applied = std::clamp(u, -u_limit_, u_limit_);
    const Voltages v = aero_voltage_map(applied);
    state_.t = t;
    state_ = aero_step(state_, v, params_.dt, params_);
    return {applied, v};
  }

  const AeroSurrogateState& state() const { return state_; }

private:
  AeroParams params_;
  double u_limit_;
  AeroSurrogateState state_{};
};

using AnyPlant = std::variant<TankPlant, AeroPlant>;

// ---------------------------------------------------------------------------
// Reference sources

struct ScheduleReference {
  ReferenceSchedule schedule;

  ReferenceSample advance(double t, double /*dt*/) const { return {schedule.value_at(t), 0.0}; }
};

/// Axis samples (t, axis in [-1, 1]) held until the next sample.
struct AxisScript {
  std::vector<std::pair<double, double>> samples;

  double axis_at(double t) const {
    double v = 0.0;
    for (const auto& [ts, a] : samples) {
      if (ts > t + 1e-9) break;
      v = a;
    }
    return v;
  }
};

/// Operator input shaped by 1/(T s + 1)^2. The input comes from a script
/// unless a live override (axis or direct setpoint) has been set.
struct JoystickReference {
  JoystickFilterState filter;
  double axis_scale = 1.0;  // output units per unit of axis
  AxisScript script;
  std::optional<double> live_input;

  double input_at(double t) const { return live_input ? *live_input : axis_scale * script.axis_at(t); }

  /// Integrates the input held over one period and reports the new output.
  ReferenceSample advance(double t, double dt) { return joystick_filter_step(filter, input_at(t), dt); }
};

using ReferenceSource = std::variant<ScheduleReference, JoystickReference>;

// ---------------------------------------------------------------------------
// Nodes

enum class ControlLaw { mfc, pi };

enum class ErrorConvention {
  output_minus_reference,  // e = y - y*
  reference_minus_output,  // e = y* - y
};

struct ControllerConfig {
  ControlLaw law = ControlLaw::mfc;
  UltraLocalConfig mfc;
  Estimator estimator = Estimator::algebraic;
  ErrorConvention error_convention = ErrorConvention::output_minus_reference;
  double pi_kp = 0.0;
  double pi_ki = 0.0;
  bool pi_anti_windup = true;
  bool fault1_reemit = true;
};

struct NodeCounters {
  std::uint64_t accepted = 0;
  std::uint64_t stale = 0;
  std::uint64_t malformed = 0;
};

namespace detail {

// Newest in-order datagram of the wanted kind; counts what it skips.
inline std::optional<Datagram> newest_fresh(std::span<const Packet> inbound, DatagramKind want,
                                            StaleGuard& guard, NodeCounters& counters) {
  std::optional<Datagram> newest;
  for (const auto& p : inbound) {
    const DecodeResult r = decode(p);
    const auto* d = std::get_if<Datagram>(&r);
    if (d == nullptr || d->kind != want) {
      ++counters.malformed;
      continue;
    }
    if (!guard.accept(d->seq)) {
      ++counters.stale;
      continue;
    }
    ++counters.accepted;
    newest = *d;
  }
  return newest;
}

}  // namespace detail

struct PlantTickResult {
  double y = 0.0;  // true output at the start of the tick
  double u_applied = 0.0;
  bool fresh_control = false;
  std::optional<Voltages> voltages;
  Packet sensor;  // carries the measurement at the end of the tick
};

class PlantNode {
public:
  explicit PlantNode(AnyPlant plant) : plant_(std::move(plant)) {}

  /// Sensor datagram (seq 0) with the initial measurement, sent once before
  /// the first tick so the controller has something to act on.
  Packet prime(double t0) {
    const double m = std::visit([](auto& p) { return p.measure(); }, plant_);
    return emit(t0, m);
  }

  PlantTickResult tick(std::span<const Packet> inbound, double t) {
    PlantTickResult out;
    if (auto d = detail::newest_fresh(inbound, DatagramKind::control, guard_, counters_)) {
      last_applied_u_ = d->value;
      out.fresh_control = true;
    }
    out.y = std::visit([](const auto& p) { return p.output(); }, plant_);
    const PlantStepInfo info = std::visit([&](auto& p) { return p.step(last_applied_u_, t); }, plant_);
    out.u_applied = last_applied_u_;
    out.voltages = info.voltages;
    const double period = std::visit([](const auto& p) { return p.period(); }, plant_);
    const double m = std::visit([](auto& p) { return p.measure(); }, plant_);
    out.sensor = emit(t + period, m);
    return out;
  }

  double last_applied_u() const { return last_applied_u_; }
  const NodeCounters& counters() const { return counters_; }
  const AnyPlant& plant() const { return plant_; }

private:
  Packet emit(double t, double value) {
    return to_packet({DatagramKind::sensor, next_seq_++, to_microseconds(t), value});
  }

  AnyPlant plant_;
  double last_applied_u_ = 0.0;
  StaleGuard guard_;
  std::uint32_t next_seq_ = 0;
  NodeCounters counters_;
};

struct ControllerTickResult {
  ReferenceSample ref;
  double u = 0.0;
  double f_est = 0.0;
  bool fresh_measurement = false;
  std::optional<Packet> control;
};

class ControllerNode {
public:
  ControllerNode(ControllerConfig cfg, ReferenceSource reference)
      : cfg_(std::move(cfg)), reference_(std::move(reference)), state_(cfg_.mfc.window_capacity()) {
    cfg_.mfc.validate();
    pi_.kp_pi = cfg_.pi_kp;
    pi_.ki_pi = cfg_.pi_ki;
    pi_.u_min = cfg_.mfc.u_min;
    pi_.u_max = cfg_.mfc.u_max;
    pi_.anti_windup = cfg_.pi_anti_windup;
  }

  ControllerTickResult tick(std::span<const Packet> inbound, double t) {
    ControllerTickResult out;
    out.ref = std::visit([&](auto& r) { return r.advance(t, cfg_.mfc.ts); }, reference_);

    const auto fresh = detail::newest_fresh(inbound, DatagramKind::sensor, guard_, counters_);
    if (fresh) {
      out.fresh_measurement = true;
      state_.frozen = false;
      const double t_meas = static_cast<double>(fresh->timestamp_us) * 1e-6;
      if (cfg_.law == ControlLaw::mfc) {
        update_mfc(fresh->value, t_meas, out.ref);
      } else {
        update_pi(fresh->value, t_meas, out.ref);
      }
    } else {
      // sensor-side loss: estimation and control are frozen
      state_.frozen = true;
    }

    out.u = state_.last_u;
    out.f_est = state_.f_est;
    if (fresh || cfg_.fault1_reemit) {
      out.control = to_packet({DatagramKind::control, next_seq_++, to_microseconds(t), state_.last_u});
    }
    return out;
  }

  ReferenceSource& reference() { return reference_; }
  const ReferenceSource& reference() const { return reference_; }
  const ControllerState& state() const { return state_; }
  const PiState& pi_state() const { return pi_; }
  const ControllerConfig& config() const { return cfg_; }
  const NodeCounters& counters() const { return counters_; }

private:
  double tracking_error(double y, double y_star) const {
    return cfg_.error_convention == ErrorConvention::output_minus_reference ? y - y_star : y_star - y;
  }

  void update_mfc(double y, double t_meas, const ReferenceSample& ref) {
    const double e = tracking_error(y, ref.y_star);
    auto& w = state_.window;
    if (!w.empty() && (t_meas - w.back().t) > cfg_.mfc.tau + 1e-9) w.clear();
    if (w.empty() || t_meas > w.back().t) {
      w.push({t_meas, y, state_.last_u, e, ref.ydot_star});
    }
    if (w.full()) state_.f_est = estimate_f(cfg_.estimator, w, cfg_.mfc);
    state_.last_u = cfg_.mfc.saturate(ip_control(state_.f_est, ref.ydot_star, e, cfg_.mfc));
  }

  void update_pi(double y, double t_meas, const ReferenceSample& ref) {
    const double dt = last_meas_t_ ? t_meas - *last_meas_t_ : cfg_.mfc.ts;
    last_meas_t_ = t_meas;
    // the PI works on y* - y so that positive gains raise u when below target
    state_.last_u = pi_control(ref.y_star - y, dt > 0.0 ? dt : cfg_.mfc.ts, pi_);
  }

  ControllerConfig cfg_;
  ReferenceSource reference_;
  ControllerState state_;
  PiState pi_;
  StaleGuard guard_;
  std::uint32_t next_seq_ = 0;
  std::optional<double> last_meas_t_;
  NodeCounters counters_;
};

// ---------------------------------------------------------------------------
// Trace

struct TraceRecord {
  double t = 0.0;
  double y = 0.0;
  double y_star = 0.0;
  double ydot_star = 0.0;
  double u_sent = 0.0;
  double u_applied = 0.0;
  double f_est = 0.0;
  int fault = 0;  // 0 none, 1 sensor datagram lost, 2 control datagram lost
  std::optional<Voltages> voltages;
  bool lost_sensor = false;
  bool lost_control = false;
};

using Trace = std::vector<TraceRecord>;

/// Sensor loss dominates: it is what freezes the controller.
inline int fault_code(bool lost_sensor, bool lost_control) {
  if (lost_sensor) return 1;
  if (lost_control) return 2;
  return 0;
}

inline void check_finite(const TraceRecord& r, std::size_t tick) {
  const double vals[] = {r.t, r.y, r.y_star, r.ydot_star, r.u_sent, r.u_applied, r.f_est};
  for (double v : vals) {
    if (!std::isfinite(v)) {
      throw ContractViolation("non-finite value in trace at tick " + std::to_string(tick) + " (t=" +
                              std::to_string(r.t) + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Links

/// In-process link: two FIFO queues.
class VirtualLink {
public:
  void send_control(Packet p) { to_plant_.push_back(std::move(p)); }
  void send_sensor(Packet p) { to_controller_.push_back(std::move(p)); }
  std::vector<Packet> receive_at_plant() { return take(to_plant_); }
  std::vector<Packet> receive_at_controller() { return take(to_controller_); }

private:
  static std::vector<Packet> take(std::deque<Packet>& q) {
    std::vector<Packet> out(std::make_move_iterator(q.begin()), std::make_move_iterator(q.end()));
    q.clear();
    return out;
  }

  std::deque<Packet> to_plant_;
  std::deque<Packet> to_controller_;
};

/// Lock-step link over two real UDP sockets. Each receive waits for the
/// datagrams the driver knows it sent, then drains whatever else is queued.
class UdpLoopbackLink {
public:
  explicit UdpLoopbackLink(Endpoint plant = {"127.0.0.1", 0}, Endpoint controller = {"127.0.0.1", 0},
                           int timeout_ms = 1000)
      : plant_sock_(plant), controller_sock_(controller), timeout_ms_(timeout_ms) {
    plant_ep_ = {plant.host, plant_sock_.local_port()};
    controller_ep_ = {controller.host, controller_sock_.local_port()};
  }

  void send_control(const Packet& p) {
    controller_sock_.send_to(p, plant_ep_);
    ++pending_to_plant_;
  }
  void send_sensor(const Packet& p) {
    plant_sock_.send_to(p, controller_ep_);
    ++pending_to_controller_;
  }
  std::vector<Packet> receive_at_plant() { return collect(plant_sock_, pending_to_plant_); }
  std::vector<Packet> receive_at_controller() { return collect(controller_sock_, pending_to_controller_); }

  std::uint16_t plant_port() const { return plant_ep_.port; }
  std::uint16_t controller_port() const { return controller_ep_.port; }

private:
  std::vector<Packet> collect(UdpSocket& sock, std::size_t& pending) {
    std::vector<Packet> out;
    while (pending > 0) {
      auto d = sock.receive(timeout_ms_);
      if (!d) throw SocketError("UDP loopback: expected datagram did not arrive");
      out.push_back(std::move(*d));
      --pending;
    }
    for (auto& extra : sock.drain()) out.push_back(std::move(extra));
    return out;
  }

  UdpSocket plant_sock_;
  UdpSocket controller_sock_;
  Endpoint plant_ep_;
  Endpoint controller_ep_;
  int timeout_ms_;
  std::size_t pending_to_plant_ = 0;
  std::size_t pending_to_controller_ = 0;
};

// ---------------------------------------------------------------------------
// Clock and driver

enum class ClockMode { virtual_time, realtime };

class TickClock {
public:
  TickClock(ClockMode mode, double period) : mode_(mode), period_(period) {
    if (!(period > 0.0)) throw ValidationError("tick period must be positive");
  }

  double now() const { return static_cast<double>(index_) * period_; }
  std::uint64_t index() const { return index_; }
  double period() const { return period_; }
  ClockMode mode() const { return mode_; }

  /// In realtime mode, blocks until the wall-clock deadline of the current
  /// tick. Deadlines are computed from the start time, so lateness never
  /// accumulates.
  void wait_for_tick() {
    if (mode_ != ClockMode::realtime) return;
    const auto now_wall = std::chrono::steady_clock::now();
    if (!start_) start_ = now_wall;
    const auto deadline =
        *start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(now()));
    if (deadline > now_wall) std::this_thread::sleep_until(deadline);
  }

  void advance() { ++index_; }

private:
  ClockMode mode_;
  double period_;
  std::uint64_t index_ = 0;
  std::optional<std::chrono::steady_clock::time_point> start_;
};

/// Owns both nodes, both loss gates and a link; `step` runs one tick.
template <class Link>
class LoopRunner {
public:
  LoopRunner(PlantNode plant, ControllerNode controller, const LossModel& loss, double period, Link link = Link{})
      : plant_(std::move(plant)),
        controller_(std::move(controller)),
        gate1_(Direction::fault1, loss),
        gate2_(Direction::fault2, loss),
        period_(period),
        link_(std::move(link)) {
    link_.send_sensor(plant_.prime(0.0));
  }

  TraceRecord step() {
    const double t = static_cast<double>(tick_) * period_;
    TraceRecord rec;
    rec.t = t;

    const auto c = controller_.tick(link_.receive_at_controller(), t);
    rec.y_star = c.ref.y_star;
    rec.ydot_star = c.ref.ydot_star;
    rec.u_sent = c.u;
    rec.f_est = c.f_est;
    if (c.control) {
      if (gate2_.deliver(t)) {
        link_.send_control(*c.control);
      } else {
        rec.lost_control = true;
      }
    }

    auto p = plant_.tick(link_.receive_at_plant(), t);
    rec.y = p.y;
    rec.u_applied = p.u_applied;
    rec.voltages = p.voltages;
    if (gate1_.deliver(t)) {
      link_.send_sensor(std::move(p.sensor));
    } else {
      rec.lost_sensor = true;
    }

    rec.fault = fault_code(rec.lost_sensor, rec.lost_control);
    check_finite(rec, tick_);
    ++tick_;
    return rec;
  }

  std::uint64_t tick_index() const { return tick_; }
  double period() const { return period_; }
  PlantNode& plant() { return plant_; }
  ControllerNode& controller() { return controller_; }
  const PlantNode& plant() const { return plant_; }
  const ControllerNode& controller() const { return controller_; }
  LossGate& gate(Direction d) { return d == Direction::fault1 ? gate1_ : gate2_; }
  const LossGate& gate(Direction d) const { return d == Direction::fault1 ? gate1_ : gate2_; }
  Link& link() { return link_; }

private:
  PlantNode plant_;
  ControllerNode controller_;
  LossGate gate1_;
  LossGate gate2_;
  double period_;
  Link link_;
  std::uint64_t tick_ = 0;
};

inline std::size_t tick_count(double duration, double period) {
  return static_cast<std::size_t>(std::llround(duration / period));
}

template <class Link = VirtualLink>
Trace run_loop(PlantNode plant, ControllerNode controller, const LossModel& loss, TickClock clock, double duration,
               Link link = Link{}) {
  LoopRunner<Link> runner(std::move(plant), std::move(controller), loss, clock.period(), std::move(link));
  const std::size_t n = tick_count(duration, clock.period());
  Trace trace;
  trace.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    clock.wait_for_tick();
    trace.push_back(runner.step());
    clock.advance();
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Realtime UDP: each node runs its own wall-clock ticker in its own thread and
// talks to the other only through its socket. The plant ticks half a period
// after the controller so datagrams land before the receiver's deadline.

struct UdpRealtimeOptions {
  Endpoint plant{"127.0.0.1", 0};
  Endpoint controller{"127.0.0.1", 0};
};

inline Trace run_udp_realtime(PlantNode plant, ControllerNode controller, const LossModel& loss, double period,
                              double duration, const UdpRealtimeOptions& opts = {}) {
  const std::size_t n = tick_count(duration, period);
  UdpSocket plant_sock(opts.plant);
  UdpSocket controller_sock(opts.controller);
  const Endpoint plant_ep{opts.plant.host, plant_sock.local_port()};
  const Endpoint controller_ep{opts.controller.host, controller_sock.local_port()};

  Trace trace(n);
  const auto start = std::chrono::steady_clock::now() + std::chrono::milliseconds(50);
  auto at = [&](double seconds) {
    return start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(seconds));
  };

  plant_sock.send_to(plant.prime(0.0), controller_ep);

  // Each thread writes disjoint fields of the trace records.
  std::exception_ptr controller_error;
  std::exception_ptr plant_error;
  std::thread controller_thread([&] {
    try {
      LossGate gate2(Direction::fault2, loss);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * period;
        std::this_thread::sleep_until(at(t));
        const auto inbound = controller_sock.drain();
        auto c = controller.tick(inbound, t);
        auto& rec = trace[k];
        rec.t = t;
        rec.y_star = c.ref.y_star;
        rec.ydot_star = c.ref.ydot_star;
        rec.u_sent = c.u;
        rec.f_est = c.f_est;
        if (c.control) {
          if (gate2.deliver(t)) {
            controller_sock.send_to(*c.control, plant_ep);
          } else {
            rec.lost_control = true;
          }
        }
      }
    } catch (...) {
      controller_error = std::current_exception();
    }
  });

  std::thread plant_thread([&] {
    try {
      LossGate gate1(Direction::fault1, loss);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * period;
        std::this_thread::sleep_until(at(t + 0.5 * period));
        const auto inbound = plant_sock.drain();
        auto p = plant.tick(inbound, t);
        auto& rec = trace[k];
        rec.y = p.y;
        rec.u_applied = p.u_applied;
        rec.voltages = p.voltages;
        if (gate1.deliver(t)) {
          plant_sock.send_to(p.sensor, controller_ep);
        } else {
          rec.lost_sensor = true;
        }
      }
    } catch (...) {
      plant_error = std::current_exception();
    }
  });

  controller_thread.join();
  plant_thread.join();
  if (controller_error) std::rethrow_exception(controller_error);
  if (plant_error) std::rethrow_exception(plant_error);

  for (std::size_t k = 0; k < n; ++k) {
    trace[k].fault = fault_code(trace[k].lost_sensor, trace[k].lost_control);
    check_finite(trace[k], k);
  }
  return trace;
}

}  // namespace mfcaas
