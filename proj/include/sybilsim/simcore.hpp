#pragma once

// Discrete-time microsimulation of a single four-way intersection fed by four
// three-lane approaches. Positions are measured along each lane from the
// approach entry; the stop line sits at `approach_length` and vehicles keep
// their lane coordinate through the junction until they leave the exit link.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "sybilsim/common.hpp"

namespace sybilsim {

// Approaches are named by direction of travel: East is the eastbound approach.
enum class Approach : std::uint8_t { East = 0, West = 1, North = 2, South = 3 };
enum class LaneClass : std::uint8_t { LeftOnly = 0, ThroughOnly = 1, ThroughRightShared = 2 };
enum class Turn : std::uint8_t { Left = 0, Through = 1, Right = 2 };
enum class Movement : std::uint8_t { EBT = 0, EBL, WBT, WBL, NBT, NBL, SBT, SBL };
enum class Light : std::uint8_t { Red, Yellow, Green };
enum class VehicleKind : std::uint8_t { Real, Sybil };
// Paper: every vehicle sees every other vehicle. Ghost: real vehicles ignore sybils.
enum class InterferenceMode : std::uint8_t { Paper, Ghost };

inline constexpr std::size_t kApproachCount = 4;
inline constexpr std::size_t kLaneCount = 12;
inline constexpr std::size_t kMovementCount = 8;
inline constexpr std::size_t kRouteCount = 12;

inline constexpr std::array<Approach, kApproachCount> kApproaches{Approach::East, Approach::West,
                                                                  Approach::North, Approach::South};
inline constexpr std::array<Movement, kMovementCount> kMovements{
    Movement::EBT, Movement::EBL, Movement::WBT, Movement::WBL,
    Movement::NBT, Movement::NBL, Movement::SBT, Movement::SBL};

using LightArray = std::array<Light, kMovementCount>;

constexpr std::size_t index(Movement m) noexcept { return static_cast<std::size_t>(m); }
constexpr std::size_t index(Approach a) noexcept { return static_cast<std::size_t>(a); }

constexpr Approach approach_of(Movement m) noexcept {
  return static_cast<Approach>(index(m) / 2);
}
constexpr bool is_left_turn(Movement m) noexcept { return index(m) % 2 == 1; }

constexpr Movement movement_for(Approach a, bool left) noexcept {
  return static_cast<Movement>(index(a) * 2 + (left ? 1 : 0));
}

constexpr Movement movement_for(Approach a, LaneClass lane) noexcept {
  return movement_for(a, lane == LaneClass::LeftOnly);
}

constexpr std::size_t lane_index(Approach a, LaneClass c) noexcept {
  return index(a) * 3 + static_cast<std::size_t>(c);
}

constexpr std::string_view to_string(Movement m) noexcept {
  constexpr std::array<std::string_view, kMovementCount> names{"EBT", "EBL", "WBT", "WBL",
                                                               "NBT", "NBL", "SBT", "SBL"};
  return names[index(m)];
}

constexpr std::string_view to_string(Approach a) noexcept {
  constexpr std::array<std::string_view, kApproachCount> names{"E", "W", "N", "S"};
  return names[index(a)];
}

struct WaitSample {
  std::int64_t step = 0;
  double seconds = 0.0;
};

struct Vehicle {
  std::int64_t id = 0;
  VehicleKind kind = VehicleKind::Real;
  Movement movement = Movement::EBT;
  LaneClass lane_class = LaneClass::ThroughOnly;
  double position = 0.0;
  double speed = 0.0;
  double accel = 0.0;
  double length = 5.0;
  double waiting_time = 0.0;
  // Steps with speed <= 0.1 m/s over the trailing window, oldest first.
  std::deque<WaitSample> wait_history;
  // Stopped time over the whole trip; feeds per-movement delay statistics.
  double trip_waiting = 0.0;
  std::int64_t spawn_step = 0;

  bool is_sybil() const noexcept { return kind == VehicleKind::Sybil; }
  Approach approach() const noexcept { return approach_of(movement); }
  std::size_t lane() const noexcept { return lane_index(approach(), lane_class); }
  double rear() const noexcept { return position - length; }

  bool operator==(const Vehicle& other) const {
    return id == other.id && kind == other.kind && movement == other.movement &&
           lane_class == other.lane_class && position == other.position && speed == other.speed &&
           accel == other.accel && length == other.length && waiting_time == other.waiting_time &&
           trip_waiting == other.trip_waiting && spawn_step == other.spawn_step &&
           std::equal(wait_history.begin(), wait_history.end(), other.wait_history.begin(),
                      other.wait_history.end(), [](const WaitSample& a, const WaitSample& b) {
                        return a.step == b.step && a.seconds == b.seconds;
                      });
  }
};

struct LaneGeometry {
  Approach approach = Approach::East;
  LaneClass lane_class = LaneClass::ThroughOnly;
  double length = 300.0;
  double speed_limit = 13.89;
};

struct KinematicsConfig {
  double accel_max = 2.6;
  double decel_max = 4.5;
  double min_gap = 2.5;
  double vehicle_length = 5.0;
  // Bound of the zero-mean uniform acceleration noise applied in free flow.
  double sigma_accel = 0.5;
  double reaction_time = 1.0;
};

// Arrival rates in vehicles/hour, indexed by route = approach * 3 + turn.
using DemandRates = std::array<double, kRouteCount>;

constexpr std::size_t route_index(Approach a, Turn t) noexcept {
  return index(a) * 3 + static_cast<std::size_t>(t);
}

inline DemandRates default_demand() {
  DemandRates rates{};
  for (auto a : kApproaches) {
    rates[route_index(a, Turn::Left)] = 50.0;
    rates[route_index(a, Turn::Through)] = 120.0;
    rates[route_index(a, Turn::Right)] = 50.0;
  }
  return rates;
}

struct SimConfig {
  double approach_length = 300.0;
  double exit_length = 60.0;
  double speed_limit = 13.89;
  double dt = 1.0;
  double halt_speed = 0.1;
  double accumulation_window = 100.0;
  KinematicsConfig kinematics;
  DemandRates demand = default_demand();
  std::int64_t horizon_steps = 1000;
  std::uint64_t seed = 1;
  InterferenceMode interference = InterferenceMode::Paper;
};

inline void validate(const SimConfig& config) {
  const auto& k = config.kinematics;
  if (!(config.approach_length > 0.0)) throw std::invalid_argument("approach_length must be positive");
  if (!(config.exit_length > 0.0)) throw std::invalid_argument("exit_length must be positive");
  if (!(config.speed_limit > 0.0)) throw std::invalid_argument("speed_limit must be positive");
  if (!(config.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(config.accumulation_window > 0.0)) throw std::invalid_argument("accumulation_window must be positive");
  if (!(k.accel_max > 0.0) || !(k.decel_max > 0.0)) throw std::invalid_argument("accel/decel bounds must be positive");
  if (!(k.vehicle_length > 0.0) || k.min_gap < 0.0) throw std::invalid_argument("invalid vehicle length or min_gap");
  if (k.sigma_accel < 0.0 || !(k.reaction_time > 0.0)) throw std::invalid_argument("invalid noise bound or reaction time");
  if (config.horizon_steps < 0) throw std::invalid_argument("horizon_steps must be non-negative");
  for (double r : config.demand)
    if (r < 0.0 || !std::isfinite(r)) throw std::invalid_argument("demand rates must be finite and non-negative");
}

struct Arrival {
  std::int64_t step = 0;
  std::int64_t vehicle_id = 0;
  Approach approach = Approach::East;
  Turn turn = Turn::Through;
  LaneClass lane_class = LaneClass::ThroughOnly;
};

// Pre-generated real-traffic arrivals: independent Poisson counts per route per
// step. Through traffic splits evenly between the two through-capable lanes.
class DemandSchedule {
 public:
  DemandSchedule() = default;
  DemandSchedule(const DemandRates& rates, std::int64_t horizon_steps, double dt, std::uint64_t seed)
      : rates_(rates), horizon_(horizon_steps), seed_(seed) {
    if (horizon_steps < 0) throw std::invalid_argument("DemandSchedule: negative horizon");
    by_step_.resize(static_cast<std::size_t>(horizon_steps));
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution pick_shared(0.5);
    std::int64_t next_id = 0;
    for (std::int64_t s = 0; s < horizon_steps; ++s) {
      for (auto a : kApproaches) {
        for (Turn t : {Turn::Left, Turn::Through, Turn::Right}) {
          const double mean = rates[route_index(a, t)] * dt / 3600.0;
          if (mean <= 0.0) continue;
          std::poisson_distribution<int> count(mean);
          const int n = count(rng);
          for (int k = 0; k < n; ++k) {
            LaneClass lane = LaneClass::LeftOnly;
            if (t == Turn::Right) lane = LaneClass::ThroughRightShared;
            if (t == Turn::Through)
              lane = pick_shared(rng) ? LaneClass::ThroughRightShared : LaneClass::ThroughOnly;
            by_step_[static_cast<std::size_t>(s)].push_back({s, next_id++, a, t, lane});
          }
        }
      }
    }
    total_ = next_id;
  }

  const std::vector<Arrival>& arrivals_at(std::int64_t step) const {
    static const std::vector<Arrival> none;
    if (step < 0 || step >= horizon_) return none;
    return by_step_[static_cast<std::size_t>(step)];
  }

  std::int64_t horizon() const noexcept { return horizon_; }
  std::int64_t total_arrivals() const noexcept { return total_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const DemandRates& rates() const noexcept { return rates_; }

 private:
  DemandRates rates_{};
  std::int64_t horizon_ = 0;
  std::uint64_t seed_ = 0;
  std::int64_t total_ = 0;
  std::vector<std::vector<Arrival>> by_step_;
};

inline constexpr std::int64_t kSybilIdBase = std::int64_t{1} << 40;

struct MovementDelay {
  std::array<double, kMovementCount> wait_sum{};
  std::array<std::int64_t, kMovementCount> vehicles{};
};

struct SimState {
  SimConfig config;
  std::array<LaneGeometry, kLaneCount> lanes{};
  std::int64_t clock = 0;
  std::vector<Vehicle> vehicles;
  std::array<std::deque<Arrival>, kLaneCount> pending;
  std::int64_t next_sybil_id = kSybilIdBase;
  // Real vehicles that crossed the stop line, with their trip waiting at that moment.
  MovementDelay served;
  std::int64_t real_spawned = 0;
  std::int64_t real_exited = 0;
  std::int64_t sybils_exited = 0;

  double dt() const noexcept { return config.dt; }
  double stop_line() const noexcept { return config.approach_length; }
  double exit_position() const noexcept { return config.approach_length + config.exit_length; }
  bool upstream(const Vehicle& v) const noexcept { return v.position <= config.approach_length; }
};

inline SimState build_network(const SimConfig& config) {
  validate(config);
  SimState state;
  state.config = config;
  for (auto a : kApproaches)
    for (auto c : {LaneClass::LeftOnly, LaneClass::ThroughOnly, LaneClass::ThroughRightShared})
      state.lanes[lane_index(a, c)] = {a, c, config.approach_length, config.speed_limit};
  return state;
}

// Whether `observer` reacts to `other` when following it.
inline bool sees(InterferenceMode mode, const Vehicle& observer, const Vehicle& other) noexcept {
  if (mode == InterferenceMode::Ghost && !observer.is_sybil() && other.is_sybil()) return false;
  return true;
}

// Euler-consistent safe speed: the ego may travel this far in one reaction time
// and still stop within the gap plus the leader's own braking distance. The
// second bound keeps the next-step gap non-negative against a leader braking at
// full rate.
inline double safe_speed(double gap, double leader_speed, const KinematicsConfig& k, double dt) {
  const double b = k.decel_max;
  const double tau = k.reaction_time;
  const double g = std::max(gap, 0.0);
  const double krauss = -tau * b + std::sqrt(tau * b * tau * b + leader_speed * leader_speed + 2.0 * b * g);
  const double one_step = (g + std::max(0.0, leader_speed - b * dt) * dt) / dt;
  return std::max(0.0, std::min(krauss, one_step));
}

// Nearest vehicle in a lane ahead of the given position that `observer` sees.
inline const Vehicle* find_leader(const SimState& state, const Vehicle& observer,
                                  std::optional<double> from_position = std::nullopt) {
  const double pos = from_position.value_or(observer.position);
  const Vehicle* best = nullptr;
  for (const auto& other : state.vehicles) {
    if (&other == &observer || other.lane() != observer.lane()) continue;
    if (!sees(state.config.interference, observer, other)) continue;
    const bool ahead = from_position ? other.position >= pos
                                     : (other.position > pos ||
                                        (other.position == pos && other.id > observer.id));
    if (!ahead) continue;
    if (best == nullptr || other.position < best->position ||
        (other.position == best->position && other.id < best->id))
      best = &other;
  }
  return best;
}

struct SignalView {
  Light light = Light::Green;
  // Distance from the front bumper to the stop line; empty once past it.
  std::optional<double> stop_distance;
};

// Krauss-type car following with the stop line treated as a stationary
// obstacle under red/yellow whenever stopping is still feasible. `noise_unit`
// in [0, 1) drives the free-flow speed perturbation.
inline double car_following_accel(const Vehicle& ego, const Vehicle* leader, const SignalView& signal,
                                  const LaneGeometry& lane, const KinematicsConfig& k, double dt,
                                  double min_gap, double noise_unit) {
  const double v = ego.speed;
  const double v_free = std::min(lane.speed_limit, v + k.accel_max * dt);
  double v_safe = std::numeric_limits<double>::infinity();
  if (leader != nullptr) {
    const double gap = leader->rear() - ego.position - min_gap;
    v_safe = safe_speed(gap, leader->speed, k, dt);
  }
  if (signal.stop_distance && signal.light != Light::Green) {
    const double stop_safe = safe_speed(*signal.stop_distance, 0.0, k, dt);
    // Dilemma zone: a stop that needs more than full braking is abandoned.
    if (stop_safe >= v - k.decel_max * dt - 1e-9) v_safe = std::min(v_safe, stop_safe);
  }
  double accel = 0.0;
  if (v_safe >= v_free + k.sigma_accel * dt) {
    const double noise = k.sigma_accel * (2.0 * noise_unit - 1.0);
    accel = (v_free - v) / dt + noise;
  } else {
    accel = (std::min(v_free, v_safe) - v) / dt;
  }
  accel = std::clamp(accel, -k.decel_max, k.accel_max);
  // Speed never goes negative.
  return std::max(accel, -v / dt);
}

inline double noise_unit_for(std::uint64_t seed, std::int64_t vehicle_id, std::int64_t step) noexcept {
  return unit_interval(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(vehicle_id)),
                                    static_cast<std::uint64_t>(step)));
}

inline SignalView signal_view_for(const SimState& state, const Vehicle& v, const LightArray& lights) {
  SignalView view;
  view.light = lights[index(v.movement)];
  if (state.upstream(v)) view.stop_distance = state.stop_line() - v.position;
  return view;
}

inline std::int64_t window_steps(const SimConfig& config) {
  return std::max<std::int64_t>(1, std::llround(config.accumulation_window / config.dt));
}

// Waiting bookkeeping for one step: a vehicle at or below the halt speed
// accrues dt, anything faster resets the uninterrupted wait to zero.
inline void update_waiting(Vehicle& v, double dt, std::int64_t step, std::int64_t window = 100,
                           double halt_speed = 0.1) {
  if (v.speed <= halt_speed) {
    v.waiting_time += dt;
    v.trip_waiting += dt;
    v.wait_history.push_back({step, dt});
  } else {
    v.waiting_time = 0.0;
  }
  while (!v.wait_history.empty() && v.wait_history.front().step <= step - window)
    v.wait_history.pop_front();
}

// Sum of waits inside the trailing window; movement never resets it.
inline double accumulated_waiting(const Vehicle& v) noexcept {
  double total = 0.0;
  for (const auto& s : v.wait_history) total += s.seconds;
  return total;
}

// Upstream lane occupancy check and insertion at position 0.
inline std::optional<double> entry_speed(const SimState& state, const Vehicle& candidate) {
  const Vehicle* leader = find_leader(state, candidate, 0.0);
  const auto& k = state.config.kinematics;
  const double limit = state.lanes[candidate.lane()].speed_limit;
  if (leader == nullptr) return limit;
  const double gap = leader->rear() - state.config.kinematics.min_gap;
  if (gap < 0.0) return std::nullopt;
  return std::min(limit, safe_speed(gap, leader->speed, k, state.dt()));
}

inline Vehicle make_vehicle(const SimState& state, std::int64_t id, VehicleKind kind, Approach a,
                            LaneClass lane) {
  Vehicle v;
  v.id = id;
  v.kind = kind;
  v.movement = movement_for(a, lane);
  v.lane_class = lane;
  v.length = state.config.kinematics.vehicle_length;
  v.spawn_step = state.clock;
  return v;
}

// Queues this step's arrivals and releases at most one pending vehicle per
// lane when the entry has room. Blocked arrivals wait; nothing is dropped.
inline void spawn_real_traffic(SimState& state, const DemandSchedule& schedule) {
  for (const auto& arrival : schedule.arrivals_at(state.clock))
    state.pending[lane_index(arrival.approach, arrival.lane_class)].push_back(arrival);
  for (std::size_t lane = 0; lane < kLaneCount; ++lane) {
    auto& queue = state.pending[lane];
    if (queue.empty()) continue;
    const Arrival& next = queue.front();
    Vehicle v = make_vehicle(state, next.vehicle_id, VehicleKind::Real, next.approach, next.lane_class);
    if (auto speed = entry_speed(state, v)) {
      v.speed = *speed;
      state.vehicles.push_back(std::move(v));
      ++state.real_spawned;
      queue.pop_front();
    }
  }
}

inline std::int64_t pending_count(const SimState& state) {
  std::int64_t n = 0;
  for (const auto& q : state.pending) n += static_cast<std::int64_t>(q.size());
  return n;
}

// One synchronous update: all accelerations are computed from the pre-step
// state, then applied. Vehicles past the exit despawn.
inline void step(SimState& state, const LightArray& lights) {
  const auto& cfg = state.config;
  const double dt = cfg.dt;
  const auto n = state.vehicles.size();

  // Per-lane order by (position, id) for leader lookup.
  std::array<std::vector<std::size_t>, kLaneCount> order;
  for (std::size_t i = 0; i < n; ++i) order[state.vehicles[i].lane()].push_back(i);
  for (auto& lane : order)
    std::sort(lane.begin(), lane.end(), [&](std::size_t a, std::size_t b) {
      const auto& va = state.vehicles[a];
      const auto& vb = state.vehicles[b];
      return va.position != vb.position ? va.position < vb.position : va.id < vb.id;
    });

  std::vector<double> accel(n, 0.0);
  for (const auto& lane : order) {
    for (std::size_t r = 0; r < lane.size(); ++r) {
      const Vehicle& ego = state.vehicles[lane[r]];
      const Vehicle* leader = nullptr;
      for (std::size_t q = r + 1; q < lane.size(); ++q) {
        const Vehicle& cand = state.vehicles[lane[q]];
        if (sees(cfg.interference, ego, cand)) {
          leader = &cand;
          break;
        }
      }
      accel[lane[r]] = car_following_accel(ego, leader, signal_view_for(state, ego, lights),
                                           state.lanes[ego.lane()], cfg.kinematics, dt,
                                           cfg.kinematics.min_gap,
                                           noise_unit_for(cfg.seed, ego.id, state.clock));
    }
  }

  const auto window = window_steps(cfg);
  for (std::size_t i = 0; i < n; ++i) {
    Vehicle& v = state.vehicles[i];
    const bool was_upstream = state.upstream(v);
    const double old_speed = v.speed;
    v.speed = std::max(0.0, v.speed + accel[i] * dt);
    v.accel = (v.speed - old_speed) / dt;
    v.position += v.speed * dt;
    update_waiting(v, dt, state.clock, window, cfg.halt_speed);
    if (was_upstream && !state.upstream(v) && !v.is_sybil()) {
      state.served.wait_sum[index(v.movement)] += v.trip_waiting;
      ++state.served.vehicles[index(v.movement)];
    }
  }

  const double exit = state.exit_position();
  std::erase_if(state.vehicles, [&](const Vehicle& v) {
    if (v.position <= exit) return false;
    if (v.is_sybil())
      ++state.sybils_exited;
    else
      ++state.real_exited;
    return true;
  });
  ++state.clock;
}

// Vehicles (real and sybil) on an approach that have not yet crossed its stop line.
inline int count_vehicles(const SimState& state, Approach approach) {
  int n = 0;
  for (const auto& v : state.vehicles)
    if (v.approach() == approach && state.upstream(v)) ++n;
  return n;
}

inline std::uint64_t state_hash(const SimState& state) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(state.clock));
  auto fold = [&h](double x) {
    std::uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(x));
    h = hash_combine(h, bits);
  };
  for (const auto& v : state.vehicles) {
    h = hash_combine(h, static_cast<std::uint64_t>(v.id));
    fold(v.position);
    fold(v.speed);
    fold(v.waiting_time);
  }
  return h;
}

}  // namespace sybilsim
