#pragma once

// Discrete-time plant simulators (single tank, half-quadrotor surrogate),
// step schedules for setpoints and valve openings, and the second-order
// reference filter used in joystick mode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfcaas/mfc_core.hpp"

namespace mfcaas {

// ---------------------------------------------------------------------------
// Tank

struct TankState {
  double y = 0.0;
  double t = 0.0;
};

enum class NoiseConvention {
  power_over_ts,  // per-sample variance = power / ts (simulation-block convention)
  variance,       // per-sample variance = power
};

struct TankParams {
  double outflow_coeff = 0.2700;
  double inertia = 5.0;
  double noise_power = 0.025;
  NoiseConvention noise_convention = NoiseConvention::power_over_ts;
  double ts = 0.1;
  double u_min = 0.0;
  double u_max = 70.0;
  double y_min = 0.0;
  double y_max = 60.0;
  std::uint64_t rng_seed = 1;

  double noise_stddev() const {
    if (noise_power <= 0.0) return 0.0;
    return noise_convention == NoiseConvention::power_over_ts ? std::sqrt(noise_power / ts)
                                                              : std::sqrt(noise_power);
  }
};

struct TankStep {
  TankState state;
  double measured = 0.0;  // state.y plus measurement noise
};

/// Forward-Euler step of  dy/dt = (u - c * r * sqrt(y)) / inertia, with the
/// level clamped to [y_min, y_max]. Noise only corrupts the measurement.
inline TankStep tank_step(const TankState& state, double u, double r, const TankParams& params,
                          double noise_sample) {
  if (!std::isfinite(state.y) || !std::isfinite(u) || !std::isfinite(r)) {
    throw ContractViolation("tank_step: non-finite state or input at t=" + std::to_string(state.t));
  }
  const double outflow = params.outflow_coeff * r * std::sqrt(std::max(state.y, 0.0));
  const double ydot = (u - outflow) / params.inertia;
  TankStep out;
  out.state.y = std::clamp(state.y + params.ts * ydot, params.y_min, params.y_max);
  out.state.t = state.t + params.ts;
  out.measured = out.state.y + noise_sample;
  return out;
}

/// Zero-mean Gaussian measurement noise with the configured convention.
template <class Rng>
double sample_noise(const TankParams& params, Rng& rng) {
  const double sd = params.noise_stddev();
  if (sd == 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sd);
  return dist(rng);
}

// ---------------------------------------------------------------------------
// Step schedules

struct ValveTag {};
struct ReferenceTag {};

/// Right-continuous piecewise-constant signal given by (t_start, value) pairs.
template <class Tag>
class StepSchedule {
public:
  using Entry = std::pair<double, double>;

  StepSchedule() = default;
  StepSchedule(std::initializer_list<Entry> entries) : StepSchedule(std::vector<Entry>(entries)) {}
  explicit StepSchedule(std::vector<Entry> entries) : entries_(std::move(entries)) { validate(); }

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  double value_at(double t) const {
    if (entries_.empty() || t < entries_.front().first - kTimeEps) {
      throw ValidationError("schedule queried at t=" + std::to_string(t) + " before its first entry");
    }
    // last entry whose start is <= t (with tolerance for accumulated tick times)
    auto it = std::upper_bound(entries_.begin(), entries_.end(), t + kTimeEps,
                               [](double v, const Entry& e) { return v < e.first; });
    return std::prev(it)->second;
  }

  static constexpr double kTimeEps = 1e-9;

private:
  void validate() const {
    for (std::size_t i = 1; i < entries_.size(); ++i) {
      if (!(entries_[i].first > entries_[i - 1].first)) {
        throw ValidationError("schedule start times must be strictly increasing");
      }
    }
    if constexpr (std::is_same_v<Tag, ValveTag>) {
      for (const auto& [t, v] : entries_) {
        if (!(v > 0.0 && v < 100.0)) throw ValidationError("valve opening must lie in (0, 100)");
      }
    }
  }

  std::vector<Entry> entries_;
};

using ValveSchedule = StepSchedule<ValveTag>;
using ReferenceSchedule = StepSchedule<ReferenceTag>;

template <class Tag>
double schedule_value(const StepSchedule<Tag>& schedule, double t) {
  return schedule.value_at(t);
}

// ---------------------------------------------------------------------------
// Half-quadrotor surrogate

struct Voltages {
  double v1 = 0.0;
  double v2 = 0.0;
  friend bool operator==(const Voltages&, const Voltages&) = default;
};

inline constexpr double kAeroSupplyLimit = 24.0;
inline constexpr double kAeroBias = 10.0;
inline constexpr double kAeroControlLimit = kAeroSupplyLimit - kAeroBias;

/// Biased differential mapping from the single control u to the two motor
/// supplies. u == 0 takes the positive branch.
inline Voltages aero_voltage_map_raw(double u) {
  if (u >= 0.0) return {kAeroBias + u, -kAeroBias - u};
  return {-kAeroBias + u, kAeroBias - u};
}

inline Voltages aero_voltage_map(double u) {
  const Voltages raw = aero_voltage_map_raw(u);
  return {std::clamp(raw.v1, -kAeroSupplyLimit, kAeroSupplyLimit),
          std::clamp(raw.v2, -kAeroSupplyLimit, kAeroSupplyLimit)};
}

struct AeroParams {
  double gain_b = 0.05;
  double damping_c = 1.0;
  double dt = 0.010;
  std::function<double(double)> disturbance;  // angular acceleration [rad/s^2] vs time

  double disturbance_at(double t) const { return disturbance ? disturbance(t) : 0.0; }
};

struct AeroSurrogateState {
  double theta = 0.0;
  double omega = 0.0;
  double t = 0.0;
};

/// Semi-implicit Euler of  theta'' = b (v1 - v2) - c omega + d(t).
inline AeroSurrogateState aero_step(const AeroSurrogateState& s, Voltages v, double dt,
                                    const AeroParams& params) {
  const double accel = params.gain_b * (v.v1 - v.v2) - params.damping_c * s.omega + params.disturbance_at(s.t);
  AeroSurrogateState out;
  out.omega = s.omega + dt * accel;
  out.theta = s.theta + dt * out.omega;
  out.t = s.t + dt;
  if (!std::isfinite(out.theta) || !std::isfinite(out.omega)) {
    throw ContractViolation("aero_step: non-finite state at t=" + std::to_string(s.t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joystick reference filter 1 / (T s + 1)^2

struct JoystickFilterState {
  double x1 = 0.0;
  double x2 = 0.0;
  double T = 1.0;

  /// Steady state at `value`.
  static JoystickFilterState at_rest(double value, double T) { return {value, value, T}; }
};

struct ReferenceSample {
  double y_star = 0.0;
  double ydot_star = 0.0;
};

/// Two cascaded first-order lags, discretized exactly as one second-order
/// system for an input held over the step (stage-by-stage updates are off by
/// O(dt/T)). Returns y* = x2 and its derivative (x1 - x2) / T.
inline ReferenceSample joystick_filter_step(JoystickFilterState& state, double input, double dt) {
  if (!(state.T > 0.0)) throw ValidationError("joystick filter time constant must be positive");
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  const double h = dt / state.T;
  const double a = std::exp(-h);
  const double d1 = state.x1 - input;
  const double d2 = state.x2 - input;
  state.x1 = input + d1 * a;
  state.x2 = input + (d2 + h * d1) * a;
  return {state.x2, (state.x1 - state.x2) / state.T};
}

}  // namespace mfcaas
