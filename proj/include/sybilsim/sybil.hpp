#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "sybilsim/atsc.hpp"
#include "sybilsim/simcore.hpp"

namespace sybilsim {

// Attacker action: index into the injection table below. Action 0 does nothing.
class ActionMode {
 public:
  static constexpr int kCount = 11;
  static constexpr int kBaselineCount = 7;

  constexpr ActionMode() = default;
  constexpr explicit ActionMode(int index) : index_(index) {
    if (index < 0 || index >= kCount) throw std::out_of_range("ActionMode: index outside 0..10");
  }
  constexpr int index() const noexcept { return index_; }
  constexpr bool operator==(const ActionMode&) const = default;

 private:
  int index_ = 0;
};

struct InjectionTargets {
  std::array<Movement, 2> movements{};
  int count = 0;
};

// 1-4 single through entries, 5-6 paired through entries, 7-10 left-turn entries.
constexpr InjectionTargets injection_targets(ActionMode action) noexcept {
  using M = Movement;
  switch (action.index()) {
    case 1: return {{M::WBT}, 1};
    case 2: return {{M::EBT}, 1};
    case 3: return {{M::SBT}, 1};
    case 4: return {{M::NBT}, 1};
    case 5: return {{M::WBT, M::EBT}, 2};
    case 6: return {{M::SBT, M::NBT}, 2};
    case 7: return {{M::WBL}, 1};
    case 8: return {{M::EBL}, 1};
    case 9: return {{M::SBL}, 1};
    case 10: return {{M::NBL}, 1};
    default: return {{}, 0};
  }
}

constexpr int injection_size(ActionMode action) noexcept { return injection_targets(action).count; }

struct InjectResult {
  int inserted = 0;
  int skipped = 0;
};

// Sybils enter at position 0 of the through-only or left-only lane. A blocked
// entry wastes the broadcast; nothing is queued.
inline InjectResult inject(ActionMode action, SimState& state) {
  InjectResult result;
  const auto targets = injection_targets(action);
  for (int i = 0; i < targets.count; ++i) {
    const Movement m = targets.movements[static_cast<std::size_t>(i)];
    const LaneClass lane = is_left_turn(m) ? LaneClass::LeftOnly : LaneClass::ThroughOnly;
    Vehicle v = make_vehicle(state, state.next_sybil_id, VehicleKind::Sybil, approach_of(m), lane);
    if (auto speed = entry_speed(state, v)) {
      v.speed = *speed;
      ++state.next_sybil_id;
      state.vehicles.push_back(std::move(v));
      ++result.inserted;
    } else {
      ++result.skipped;
    }
  }
  return result;
}

enum class RemovalDecision { Keep, Remove };

struct RemovalPolicy {
  double threshold = 1.0174;  // m/s^2, deceleration magnitude
  bool enabled = true;
};

inline void validate(const RemovalPolicy& p) {
  if (!(p.threshold > 0.0)) throw std::invalid_argument("removal threshold must be positive");
}

inline RemovalDecision removal_check(const Vehicle& v, const RemovalPolicy& policy) noexcept {
  if (!policy.enabled || !v.is_sybil()) return RemovalDecision::Keep;
  return (v.accel < 0.0 && -v.accel > policy.threshold) ? RemovalDecision::Remove
                                                        : RemovalDecision::Keep;
}

// Drops every sybil whose last deceleration crossed the threshold.
inline int apply_removals(SimState& state, const RemovalPolicy& policy) {
  const auto before = state.vehicles.size();
  std::erase_if(state.vehicles, [&](const Vehicle& v) {
    return removal_check(v, policy) == RemovalDecision::Remove;
  });
  return static_cast<int>(before - state.vehicles.size());
}

struct CalibrationSample {
  std::int64_t vehicle_id = 0;
  std::int64_t step = 0;
  double accel = 0.0;
  bool green = false;
  bool free_leader = false;
};

struct CalibrationTrace {
  std::vector<CalibrationSample> samples;

  // Green light and nothing ahead within the lookahead.
  std::vector<CalibrationSample> isolated() const {
    std::vector<CalibrationSample> out;
    for (const auto& s : samples)
      if (s.green && s.free_leader) out.push_back(s);
    return out;
  }
};

inline constexpr double kFreeLeaderLookahead = 100.0;

// Samples the last applied acceleration of every sybil still on its approach.
// Call after `step` with the lights that were in force during it.
inline void record_calibration(const SimState& state, const LightArray& lights, CalibrationTrace& trace,
                               double lookahead = kFreeLeaderLookahead) {
  const std::int64_t step = state.clock - 1;
  for (const auto& v : state.vehicles) {
    if (!v.is_sybil() || !state.upstream(v)) continue;
    const bool green = lights[index(v.movement)] == Light::Green;
    const Vehicle* leader = find_leader(state, v);
    const bool free = leader == nullptr || leader->rear() - v.position > lookahead;
    trace.samples.push_back({v.id, step, v.accel, green, free});
  }
}

// Linear-interpolated quantile of sorted values, q in [0, 1].
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty set");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deceleration magnitude exceeded by only `percentile` of free-flow decelerations:
// with percentile 0.05, 95% of unobstructed sybils stay below the returned value.
inline double calibrate_threshold(const CalibrationTrace& trace, double percentile) {
  if (!(percentile > 0.0 && percentile < 1.0))
    throw std::invalid_argument("calibrate_threshold: percentile must lie in (0, 1)");
  std::vector<double> decel;
  for (const auto& s : trace.isolated())
    if (s.accel < 0.0) decel.push_back(-s.accel);
  if (decel.empty())
    throw CalibrationError(
        "no free-flow deceleration samples; run a longer calibration episode or inject more sybils");
  std::sort(decel.begin(), decel.end());
  return quantile_sorted(decel, 1.0 - percentile);
}

}  // namespace sybilsim
