#pragma once

// Waiting-time based adaptive signal control. Every review interval the
// controller computes the average waiting time per vehicle of each movement
// and gives green to the phase holding the worst movement.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string_view>

#include "sybilsim/simcore.hpp"

namespace sybilsim {

enum class Phase : std::uint8_t { EWThrough = 0, EWLeft = 1, NSThrough = 2, NSLeft = 3 };

inline constexpr std::size_t kPhaseCount = 4;
inline constexpr std::array<Phase, kPhaseCount> kPhases{Phase::EWThrough, Phase::EWLeft,
                                                        Phase::NSThrough, Phase::NSLeft};

constexpr std::size_t index(Phase p) noexcept { return static_cast<std::size_t>(p); }

constexpr std::array<Movement, 2> movements_of(Phase p) noexcept {
  switch (p) {
    case Phase::EWThrough: return {Movement::EBT, Movement::WBT};
    case Phase::EWLeft: return {Movement::EBL, Movement::WBL};
    case Phase::NSThrough: return {Movement::NBT, Movement::SBT};
    case Phase::NSLeft: return {Movement::NBL, Movement::SBL};
  }
  return {Movement::EBT, Movement::WBT};
}

constexpr Phase phase_of(Movement m) noexcept {
  const bool ew = approach_of(m) == Approach::East || approach_of(m) == Approach::West;
  if (ew) return is_left_turn(m) ? Phase::EWLeft : Phase::EWThrough;
  return is_left_turn(m) ? Phase::NSLeft : Phase::NSThrough;
}

constexpr bool contains(Phase p, Movement m) noexcept { return phase_of(m) == p; }

constexpr std::string_view to_string(Phase p) noexcept {
  constexpr std::array<std::string_view, kPhaseCount> names{"EBT+WBT", "EBL+WBL", "NBT+SBT",
                                                            "NBL+SBL"};
  return names[index(p)];
}

struct AawtRecord {
  Movement movement = Movement::EBT;
  double awt = 0.0;  // sum of current waiting times
  int n = 0;         // vehicles heading to the stop line
  double aawt = 0.0;
};

using AawtTable = std::array<AawtRecord, kMovementCount>;

inline AawtRecord make_record(Movement m, double awt, int n) {
  return {m, awt, n, n > 0 ? awt / n : 0.0};
}

// Sybils count like any other vehicle: the controller only sees broadcasts.
inline AawtTable compute_aawt(const SimState& state) {
  std::array<double, kMovementCount> awt{};
  std::array<int, kMovementCount> n{};
  for (const auto& v : state.vehicles) {
    if (!state.upstream(v)) continue;
    awt[index(v.movement)] += v.waiting_time;
    ++n[index(v.movement)];
  }
  AawtTable table;
  for (auto m : kMovements) table[index(m)] = make_record(m, awt[index(m)], n[index(m)]);
  return table;
}

// Phase holding the maximum-AAWT movement. Ties keep the current phase when it
// holds a tied movement, otherwise the lowest movement in enum order wins.
inline Phase select_phase(const AawtTable& records, Phase current) {
  double best = records[0].aawt;
  for (const auto& r : records) best = std::max(best, r.aawt);
  for (const auto& r : records)
    if (r.aawt == best && contains(current, r.movement)) return current;
  for (const auto& r : records)
    if (r.aawt == best) return phase_of(r.movement);
  return current;
}

struct ControllerConfig {
  double review_interval = 5.0;
  double yellow = 3.0;
};

inline void validate(const ControllerConfig& c) {
  if (!(c.review_interval > 0.0)) throw std::invalid_argument("review_interval must be positive");
  if (c.yellow < 0.0) throw std::invalid_argument("yellow must be non-negative");
}

enum class Interval : std::uint8_t { Green, Yellow };

struct SignalState {
  Phase current = Phase::EWThrough;
  double phase_age = 0.0;
  double review_timer = 0.0;
  Interval interval = Interval::Green;
  double yellow_remaining = 0.0;
  Phase next = Phase::EWThrough;

  bool operator==(const SignalState&) const = default;
};

inline SignalState initial_signal(Phase p = Phase::EWThrough) {
  SignalState s;
  s.current = p;
  s.next = p;
  return s;
}

inline LightArray lights(const SignalState& s) {
  LightArray out;
  out.fill(Light::Red);
  const Light on = s.interval == Interval::Green ? Light::Green : Light::Yellow;
  for (auto m : movements_of(s.current)) out[index(m)] = on;
  return out;
}

// Seconds until the next review, in [0, review_interval]. A yellow interval
// counts as a fresh interval since the review clock restarts with the next green.
inline double remaining_to_review(const SignalState& s, const ControllerConfig& c) {
  if (s.interval == Interval::Yellow) return c.review_interval;
  return std::clamp(c.review_interval - s.review_timer, 0.0, c.review_interval);
}

struct TickResult {
  bool reviewed = false;
  bool changed = false;  // a yellow began this tick
  bool switched = false; // a new green began this tick
};

inline constexpr double kTimerEpsilon = 1e-9;

// Advances the controller by dt after the traffic has moved.
inline TickResult tick(SignalState& s, const SimState& state, const ControllerConfig& c, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("tick: dt must be positive");
  TickResult result;
  if (s.interval == Interval::Yellow) {
    s.yellow_remaining -= dt;
    if (s.yellow_remaining <= kTimerEpsilon) {
      s.current = s.next;
      s.interval = Interval::Green;
      s.yellow_remaining = 0.0;
      s.phase_age = 0.0;
      s.review_timer = 0.0;
      result.switched = true;
    }
    return result;
  }
  s.phase_age += dt;
  s.review_timer += dt;
  if (s.review_timer + kTimerEpsilon < c.review_interval) return result;
  result.reviewed = true;
  s.review_timer = 0.0;
  const Phase chosen = select_phase(compute_aawt(state), s.current);
  if (chosen == s.current) return result;
  result.changed = true;
  s.next = chosen;
  if (c.yellow <= 0.0) {
    s.current = chosen;
    s.phase_age = 0.0;
    result.switched = true;
  } else {
    s.interval = Interval::Yellow;
    s.yellow_remaining = c.yellow;
  }
  return result;
}

// Traffic-insensitive cycle through the four phases; the last `yellow` seconds
// of each phase duration are shown as yellow.
class FixedTimeController {
 public:
  explicit FixedTimeController(std::array<double, kPhaseCount> durations, double yellow = 3.0)
      : durations_(durations), yellow_(yellow) {
    for (double d : durations_)
      if (!(d > 0.0)) throw std::invalid_argument("FixedTimeController: phase durations must be positive");
    if (yellow_ < 0.0) throw std::invalid_argument("FixedTimeController: negative yellow");
  }

  double cycle_length() const noexcept {
    double total = 0.0;
    for (double d : durations_) total += d;
    return total;
  }

  void tick(double dt) {
    elapsed_ += dt;
    while (elapsed_ + kTimerEpsilon >= durations_[index(phase_)]) {
      elapsed_ -= durations_[index(phase_)];
      phase_ = kPhases[(index(phase_) + 1) % kPhaseCount];
    }
  }

  SignalState state() const {
    SignalState s = initial_signal(phase_);
    s.phase_age = elapsed_;
    const double left = durations_[index(phase_)] - elapsed_;
    if (left <= yellow_ + kTimerEpsilon && yellow_ > 0.0) {
      s.interval = Interval::Yellow;
      s.yellow_remaining = left;
      s.next = kPhases[(index(phase_) + 1) % kPhaseCount];
    }
    return s;
  }

  LightArray lights() const { return sybilsim::lights(state()); }
  Phase phase() const noexcept { return phase_; }

 private:
  std::array<double, kPhaseCount> durations_;
  double yellow_;
  Phase phase_ = Phase::EWThrough;
  double elapsed_ = 0.0;
};

}  // namespace sybilsim
