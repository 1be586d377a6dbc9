#pragma once

// Ultra-local model bookkeeping, the intelligent proportional (iP) control
// law, the two data-driven estimators of the lumped term F, and the PI
// baseline with conditional-integration anti-windup.
//
// Everything here is pure given explicit state: no globals, no clocks, no RNG.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>

namespace mfcaas {

/// Raised when an input violates a documented precondition.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the estimators when the window does not yet hold enough data.
class InsufficientSamples : public std::runtime_error {
public:
  InsufficientSamples() : std::runtime_error("insufficient samples") {}
};

/// Raised when an internal invariant breaks (NaN in a plant state, etc).
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw ValidationError(std::string(what) + " must be finite");
  }
}

}  // namespace detail

/// Tuning of the first-order ultra-local model  dy/dt = F + alpha * u  and of
/// the iP controller closing the loop around it.
struct UltraLocalConfig {
  double alpha = 1.0;  ///< scaling of u; sign must match the plant's input gain
  double kp = 1.0;     ///< error-dynamics gain
  double tau = 1.0;    ///< estimation window length [s]
  double ts = 0.1;     ///< sampling period [s]
  double u_min = -std::numeric_limits<double>::infinity();
  double u_max = std::numeric_limits<double>::infinity();

  void validate() const {
    detail::require_finite(alpha, "alpha");
    detail::require_finite(kp, "kp");
    if (alpha == 0.0) throw ValidationError("alpha must be non-zero");
    if (!(tau > 0.0)) throw ValidationError("tau must be positive");
    if (!(ts > 0.0)) throw ValidationError("ts must be positive");
    if (tau < 2.0 * ts - 1e-12) throw ValidationError("tau must cover at least two sampling periods");
    if (!(u_min < u_max)) throw ValidationError("u_min must be below u_max");
  }

  /// Samples in a full window: the window spans tau end to end, so it holds
  /// tau/ts intervals plus one.
  std::size_t window_capacity() const {
    return static_cast<std::size_t>(std::llround(tau / ts)) + 1;
  }

  double saturate(double u) const { return std::clamp(u, u_min, u_max); }
};

/// One estimator input record. `u` is the (saturated) control that was in
/// force while the plant produced `y`.
struct Sample {
  double t = 0.0;
  double y = 0.0;
  double u = 0.0;
  double e = 0.0;
  double ydot_star = 0.0;
};

/// Rolling buffer of the most recent samples. Timestamps are strictly
/// increasing. Without packet loss the spacing is exactly one sampling period;
/// lost measurements leave wider gaps, which the estimators handle through
/// non-uniform trapezoids over the actual span.
class SampleWindow {
public:
  explicit SampleWindow(std::size_t capacity = 2) : capacity_(capacity) {
    if (capacity_ < 2) throw ValidationError("window capacity must be at least 2");
  }

  void push(const Sample& s) {
    if (!samples_.empty() && !(s.t > samples_.back().t)) {
      throw ValidationError("sample timestamps must be strictly increasing");
    }
    samples_.push_back(s);
    if (samples_.size() > capacity_) samples_.pop_front();
  }

  void clear() { samples_.clear(); }

  bool full() const { return samples_.size() == capacity_; }
  bool empty() const { return samples_.empty(); }
  std::size_t size() const { return samples_.size(); }
  std::size_t capacity() const { return capacity_; }

  /// Time between the oldest and newest sample.
  double span() const { return samples_.size() < 2 ? 0.0 : samples_.back().t - samples_.front().t; }

  const Sample& front() const { return samples_.front(); }
  const Sample& back() const { return samples_.back(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }

private:
  std::size_t capacity_;
  std::deque<Sample> samples_;
};

enum class Estimator { algebraic, closed_loop };

inline const char* to_string(Estimator e) {
  return e == Estimator::algebraic ? "algebraic" : "closedloop";
}

inline Estimator parse_estimator(const std::string& s) {
  if (s == "algebraic") return Estimator::algebraic;
  if (s == "closedloop" || s == "closed_loop") return Estimator::closed_loop;
  throw ValidationError("unknown estimator '" + s + "' (expected algebraic|closedloop)");
}

/// iP law: u = -(F_est - ydot* + kp * e) / alpha. Saturation is the caller's job.
inline double ip_control(double f_est, double ydot_star, double e, const UltraLocalConfig& cfg) {
  detail::require_finite(f_est, "f_est");
  detail::require_finite(ydot_star, "ydot_star");
  detail::require_finite(e, "e");
  if (cfg.alpha == 0.0) throw ValidationError("alpha must be non-zero");
  return -(f_est - ydot_star + cfg.kp * e) / cfg.alpha;
}

namespace detail {

// Composite trapezoid of f(sample, sigma) over the window, sigma measured from
// the oldest sample.
template <class Integrand>
double trapezoid(const SampleWindow& w, Integrand&& f) {
  const double t0 = w.front().t;
  double acc = 0.0;
  double prev_sigma = 0.0;
  double prev_f = f(w[0], 0.0);
  for (std::size_t i = 1; i < w.size(); ++i) {
    const double sigma = w[i].t - t0;
    const double cur = f(w[i], sigma);
    acc += 0.5 * (sigma - prev_sigma) * (prev_f + cur);
    prev_sigma = sigma;
    prev_f = cur;
  }
  return acc;
}

}  // namespace detail

/// Algebraic estimator
///   F_est = -(6 / tau^3) * integral_0^tau [(tau - 2s) y(s) + alpha s (tau - s) u(s)] ds
/// with s local to the window. tau is the window's actual span, which equals
/// cfg.tau whenever no measurement inside the window was lost.
inline double estimate_f_algebraic(const SampleWindow& window, const UltraLocalConfig& cfg) {
  if (!window.full()) throw InsufficientSamples();
  const double tau = window.span();
  const double alpha = cfg.alpha;
  const double integral = detail::trapezoid(window, [&](const Sample& s, double sigma) {
    return (tau - 2.0 * sigma) * s.y + alpha * sigma * (tau - sigma) * s.u;
  });
  return -6.0 / (tau * tau * tau) * integral;
}

/// Closed-loop estimator: window average of (ydot* - alpha u - kp e).
inline double estimate_f_closedloop(const SampleWindow& window, const UltraLocalConfig& cfg) {
  if (!window.full()) throw InsufficientSamples();
  const double tau = window.span();
  const double integral = detail::trapezoid(window, [&](const Sample& s, double) {
    return s.ydot_star - cfg.alpha * s.u - cfg.kp * s.e;
  });
  return integral / tau;
}

inline double estimate_f(Estimator which, const SampleWindow& window, const UltraLocalConfig& cfg) {
  return which == Estimator::algebraic ? estimate_f_algebraic(window, cfg)
                                       : estimate_f_closedloop(window, cfg);
}

/// Live state of an MFC controller.
struct ControllerState {
  double f_est = 0.0;
  double last_u = 0.0;
  bool frozen = false;  // set while measurements are missing (sensor-side loss)
  SampleWindow window;

  explicit ControllerState(std::size_t capacity = 2) : window(capacity) {}
};

/// PI baseline  u = kp_pi * e + ki_pi * integral(e dt).
struct PiState {
  double integral = 0.0;
  double kp_pi = 0.0;
  double ki_pi = 0.0;
  double u_min = -std::numeric_limits<double>::infinity();
  double u_max = std::numeric_limits<double>::infinity();
  bool anti_windup = true;
  bool windup_guard_active = false;
};

/// One PI step. The output is clamped to [u_min, u_max]; with anti-windup on,
/// the integral is held whenever the unclamped output is beyond a bound and
/// the current error pushes it further out.
inline double pi_control(double e, double dt, PiState& state) {
  detail::require_finite(e, "e");
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");

  const double raw = state.kp_pi * e + state.ki_pi * state.integral;
  const double push = state.ki_pi * e;  // direction the integral would move raw
  const bool beyond_high = raw > state.u_max && push > 0.0;
  const bool beyond_low = raw < state.u_min && push < 0.0;

  state.windup_guard_active = state.anti_windup && (beyond_high || beyond_low);
  if (!state.windup_guard_active) state.integral += e * dt;
  return std::clamp(raw, state.u_min, state.u_max);
}

}  // namespace mfcaas
