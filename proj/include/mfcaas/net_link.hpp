#pragma once

// Datagram wire codec, seeded lossy-channel emulation and stale-packet
// discard. Loss is decided here, above any socket, so a scenario reproduces
// the same drop pattern over the in-process link and over real UDP.

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mfcaas/mfc_core.hpp"

namespace mfcaas {

enum class DatagramKind : std::uint8_t {
  sensor = 0x01,   // plant -> controller, carries y
  control = 0x02,  // controller -> plant, carries u
};

struct Datagram {
  DatagramKind kind = DatagramKind::sensor;
  std::uint32_t seq = 0;
  std::uint64_t timestamp_us = 0;
  double value = 0.0;

  friend bool operator==(const Datagram&, const Datagram&) = default;
};

inline constexpr std::size_t kDatagramSize = 24;
inline constexpr std::uint8_t kMagic0 = 0x4D;  // 'M'
inline constexpr std::uint8_t kMagic1 = 0x46;  // 'F'
inline constexpr std::uint8_t kWireVersion = 1;

using WireBytes = std::array<std::uint8_t, kDatagramSize>;

enum class DecodeError { truncated, foreign_packet, bad_kind };

inline const char* to_string(DecodeError e) {
  switch (e) {
    case DecodeError::truncated: return "truncated";
    case DecodeError::foreign_packet: return "foreign packet";
    case DecodeError::bad_kind: return "bad kind";
  }
  return "?";
}

using DecodeResult = std::variant<Datagram, DecodeError>;

namespace detail {

template <class T>
void put_le(std::uint8_t* out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

template <class T>
T get_le(const std::uint8_t* in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[i]) << (8 * i);
  return v;
}

}  // namespace detail

// Layout (little-endian):
//   0  magic 'M' 'F'
//   2  version
//   3  kind
//   4  seq          u32
//   8  timestamp_us u64
//   16 value        f64
inline WireBytes encode(const Datagram& d) {
  if (d.kind != DatagramKind::sensor && d.kind != DatagramKind::control) {
    throw ValidationError("datagram kind must be sensor or control");
  }
  WireBytes out{};
  out[0] = kMagic0;
  out[1] = kMagic1;
  out[2] = kWireVersion;
  out[3] = static_cast<std::uint8_t>(d.kind);
  detail::put_le<std::uint32_t>(out.data() + 4, d.seq);
  detail::put_le<std::uint64_t>(out.data() + 8, d.timestamp_us);
  detail::put_le<std::uint64_t>(out.data() + 16, std::bit_cast<std::uint64_t>(d.value));
  return out;
}

inline DecodeResult decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kDatagramSize) return DecodeError::truncated;
  if (bytes[0] != kMagic0 || bytes[1] != kMagic1 || bytes[2] != kWireVersion) return DecodeError::foreign_packet;
  const auto kind = bytes[3];
  if (kind != static_cast<std::uint8_t>(DatagramKind::sensor) &&
      kind != static_cast<std::uint8_t>(DatagramKind::control)) {
    return DecodeError::bad_kind;
  }
  Datagram d;
  d.kind = static_cast<DatagramKind>(kind);
  d.seq = detail::get_le<std::uint32_t>(bytes.data() + 4);
  d.timestamp_us = detail::get_le<std::uint64_t>(bytes.data() + 8);
  d.value = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes.data() + 16));
  return d;
}

inline std::uint64_t to_microseconds(double t) {
  return t <= 0.0 ? 0 : static_cast<std::uint64_t>(std::llround(t * 1e6));
}

// ---------------------------------------------------------------------------
// Loss emulation

enum class Direction : std::uint8_t {
  fault1 = 1,  // sensor -> server
  fault2 = 2,  // server -> plant
};

/// Half-open interval [start, end) in seconds.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  bool contains(double t) const {
    constexpr double eps = 1e-9;
    return t >= start - eps && t < end - eps;
  }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct LossModel {
  double p_fault1 = 0.0;
  double p_fault2 = 0.0;
  std::vector<Interval> cuts_fault1;
  std::vector<Interval> cuts_fault2;
  std::uint64_t rng_seed = 1;

  double probability(Direction d) const { return d == Direction::fault1 ? p_fault1 : p_fault2; }
  const std::vector<Interval>& cuts(Direction d) const {
    return d == Direction::fault1 ? cuts_fault1 : cuts_fault2;
  }

  void validate() const {
    for (double p : {p_fault1, p_fault2}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("loss probability must lie in [0, 1]");
    }
    for (const auto* list : {&cuts_fault1, &cuts_fault2}) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        const auto& c = (*list)[i];
        if (!(c.end > c.start)) throw ValidationError("cut interval must have end > start");
        for (std::size_t j = i + 1; j < list->size(); ++j) {
          const auto& o = (*list)[j];
          if (c.start < o.end && o.start < c.end) throw ValidationError("cut intervals overlap");
        }
      }
    }
  }
};

/// Independent generator per (seed, direction), so tuning one direction never
/// reshuffles the other's drop pattern.
inline std::mt19937_64 make_channel_rng(std::uint64_t seed, Direction d) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(d), 0x6c6f7373u};
  return std::mt19937_64(seq);
}

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Delivery decision for one packet. One uniform draw is consumed on every
/// call, even inside a cut, so the Bernoulli pattern depends only on the
/// packet index.
inline bool loss_gate(Direction direction, double t, const LossModel& model, std::mt19937_64& rng) {
  const double draw = unit_uniform(rng);
  for (const auto& cut : model.cuts(direction)) {
    if (cut.contains(t)) return false;
  }
  return draw >= model.probability(direction);
}

/// Stateful gate for one direction, counting what it decided.
class LossGate {
public:
  LossGate(Direction direction, const LossModel& model)
      : direction_(direction), model_(model), rng_(make_channel_rng(model.rng_seed, direction)) {
    model_.validate();
  }

  bool deliver(double t) {
    const bool ok = loss_gate(direction_, t, model_, rng_);
    ++attempts_;
    if (!ok) ++drops_;
    return ok;
  }

  /// Changes the Bernoulli rate from now on; the draw stream continues.
  void set_probability(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("loss probability must lie in [0, 1]");
    (direction_ == Direction::fault1 ? model_.p_fault1 : model_.p_fault2) = p;
  }

  double probability() const { return model_.probability(direction_); }
  Direction direction() const { return direction_; }
  std::uint64_t attempts() const { return attempts_; }
  std::uint64_t drops() const { return drops_; }
  double realized_loss() const { return attempts_ == 0 ? 0.0 : static_cast<double>(drops_) / attempts_; }

private:
  Direction direction_;
  LossModel model_;
  std::mt19937_64 rng_;
  std::uint64_t attempts_ = 0;
  std::uint64_t drops_ = 0;
};

// ---------------------------------------------------------------------------
// Late-packet discard

/// Accepts a sequence number only if it is strictly newer than the last one
/// accepted. Wraparound at 2^32 is not handled (runs stay far below it).
struct StaleGuard {
  std::optional<std::uint32_t> last_seq_accepted;

  bool accept(std::uint32_t seq) {
    if (last_seq_accepted && seq <= *last_seq_accepted) return false;
    last_seq_accepted = seq;
    return true;
  }
};

inline bool stale_check(StaleGuard& guard, std::uint32_t seq) { return guard.accept(seq); }

}  // namespace mfcaas
