#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "sybilsim/dqn.hpp"
#include "support.hpp"

using namespace sybilsim;
using namespace testsupport;

TEST(BuildNetwork, DefaultTopology) {
  const SimState s = build_network(SimConfig{});
  EXPECT_EQ(s.lanes.size(), 12u);
  EXPECT_EQ(kMovements.size(), 8u);
  EXPECT_TRUE(s.vehicles.empty());
  EXPECT_EQ(s.clock, 0);
  for (auto a : kApproaches) {
    int classes = 0;
    for (const auto& l : s.lanes) classes += l.approach == a ? 1 : 0;
    EXPECT_EQ(classes, 3);
  }
}

TEST(BuildNetwork, RejectsBadGeometry) {
  SimConfig c;
  c.approach_length = 0.0;
  EXPECT_THROW(build_network(c), std::invalid_argument);
  c = SimConfig{};
  c.dt = -1.0;
  EXPECT_THROW(build_network(c), std::invalid_argument);
}

TEST(BuildNetwork, RepeatableStructure) {
  const SimState a = build_network(SimConfig{});
  const SimState b = build_network(SimConfig{});
  for (std::size_t i = 0; i < kLaneCount; ++i) {
    EXPECT_EQ(a.lanes[i].approach, b.lanes[i].approach);
    EXPECT_EQ(a.lanes[i].lane_class, b.lanes[i].lane_class);
    EXPECT_EQ(a.lanes[i].length, b.lanes[i].length);
  }
}

TEST(MovementTable, EachMovementHasOneApproachAndTurn) {
  std::array<int, kApproachCount> per_approach{};
  int left = 0;
  for (auto m : kMovements) {
    ++per_approach[index(approach_of(m))];
    left += is_left_turn(m) ? 1 : 0;
    EXPECT_EQ(movement_for(approach_of(m), is_left_turn(m)), m);
  }
  for (int n : per_approach) EXPECT_EQ(n, 2);
  EXPECT_EQ(left, 4);
  EXPECT_EQ(movement_for(Approach::North, LaneClass::ThroughRightShared), Movement::NBT);
}

TEST(Demand, ZeroRateSpawnsNothing) {
  SimConfig c;
  c.demand.fill(0.0);
  const DemandSchedule sched(c.demand, 1000, c.dt, 7);
  EXPECT_EQ(sched.total_arrivals(), 0);
  SimState s = build_network(c);
  for (int t = 0; t < 200; ++t) {
    spawn_real_traffic(s, sched);
    step(s, all_lights(Light::Green));
  }
  EXPECT_EQ(s.real_spawned, 0);
}

TEST(Demand, SameSeedSameSchedule) {
  const auto rates = default_demand();
  const DemandSchedule a(rates, 1000, 1.0, 42), b(rates, 1000, 1.0, 42);
  ASSERT_EQ(a.total_arrivals(), b.total_arrivals());
  for (int t = 0; t < 1000; ++t) {
    const auto& x = a.arrivals_at(t);
    const auto& y = b.arrivals_at(t);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(x[i].vehicle_id, y[i].vehicle_id);
      EXPECT_EQ(x[i].lane_class, y[i].lane_class);
    }
  }
}

TEST(Demand, PoissonCountMatchesDirectSampling) {
  // One left-turn route at 360 veh/h: the schedule draws only that route's
  // counts, so an independent Poisson stream with the same seed must agree.
  DemandRates rates{};
  rates[route_index(Approach::East, Turn::Left)] = 360.0;
  const std::uint64_t seed = 2024;
  const DemandSchedule sched(rates, 1000, 1.0, seed);
  std::mt19937_64 rng(seed);
  std::int64_t oracle = 0;
  for (int t = 0; t < 1000; ++t) oracle += std::poisson_distribution<int>(0.1)(rng);
  EXPECT_EQ(sched.total_arrivals(), oracle);
  EXPECT_NEAR(static_cast<double>(sched.total_arrivals()), 100.0, 3.0 * std::sqrt(100.0));
}

TEST(Demand, BlockedSpawnsAreDeferredNotDropped) {
  SimConfig c;
  c.demand.fill(0.0);
  c.demand[route_index(Approach::West, Turn::Left)] = 3600.0 * 3.0;  // ~3 per step, one lane
  const DemandSchedule sched(c.demand, 50, c.dt, 3);
  SimState s = build_network(c);
  for (int t = 0; t < 50; ++t) {
    spawn_real_traffic(s, sched);
    step(s, all_lights(Light::Green));
    EXPECT_EQ(s.real_spawned + pending_count(s), count_arrivals_until(sched, t));
  }
  EXPECT_GT(pending_count(s), 0);
}

TEST(CarFollowing, FreeFlowJitterIsBounded) {
  const KinematicsConfig k;
  const LaneGeometry lane;
  Vehicle ego;
  ego.speed = lane.speed_limit;
  for (double u : {0.0, 0.25, 0.5, 0.75, 0.999}) {
    const double a = car_following_accel(ego, nullptr, SignalView{Light::Green, 100.0}, lane, k, 1.0, k.min_gap, u);
    EXPECT_LE(std::abs(a), k.sigma_accel + 1e-12);
  }
}

TEST(CarFollowing, StoppedLeaderCloseAheadForcesFullBraking) {
  const KinematicsConfig k;
  const LaneGeometry lane;
  Vehicle ego, leader;
  ego.position = 100.0;
  ego.speed = 13.9;
  leader.position = ego.position + 5.0 + leader.length;  // 5 m bumper to bumper
  leader.speed = 0.0;
  // Hand evaluation: gap 5 - 2.5 = 2.5 m, safe speed = -4.5 + sqrt(4.5^2 + 2*4.5*2.5) ~ 2.04 m/s,
  // so the requested change is about -11.9 m/s^2 and the clamp applies.
  const double v_safe = -4.5 + std::sqrt(4.5 * 4.5 + 2.0 * 4.5 * 2.5);
  EXPECT_NEAR(v_safe, 2.0383, 1e-4);
  const double a = car_following_accel(ego, &leader, SignalView{Light::Green, 200.0}, lane, k, 1.0, k.min_gap, 0.5);
  EXPECT_DOUBLE_EQ(a, -k.decel_max);
}

// A lone vehicle facing red stops short of the line whenever the line is beyond
// the kinematic stopping distance v^2 / (2 b) plus one step of travel.
TEST(CarFollowing, RedLightFeasibleStopHoldsTheLine) {
  const KinematicsConfig k;
  const LaneGeometry lane;
  for (double v0 : {8.0, 11.0, 13.89}) {
    const double stopping = v0 * v0 / (2.0 * k.decel_max) + v0;
    for (double extra : {0.0, 3.0, 20.0}) {
      Vehicle ego;
      ego.speed = v0;
      ego.position = 0.0;
      const double line = stopping + extra;
      for (int t = 0; t < 100; ++t) {
        const double a = car_following_accel(ego, nullptr, SignalView{Light::Red, line - ego.position}, lane, k, 1.0,
                                             k.min_gap, 0.5);
        ASSERT_LE(a, k.accel_max);
        ASSERT_GE(a, -k.decel_max);
        ego.speed = std::max(0.0, ego.speed + a);
        ego.position += ego.speed;
        ASSERT_LE(ego.position, line + 1e-9) << "v0=" << v0 << " line=" << line;
      }
      EXPECT_LE(ego.speed, 0.1);
    }
  }
}

TEST(CarFollowing, InfeasibleStopProceedsThroughDilemmaZone) {
  // 2 m at 8 m/s would need 16 m/s^2; with 4.5 m/s^2 available the vehicle keeps going.
  const KinematicsConfig k;
  Vehicle ego;
  ego.speed = 8.0;
  const double a = car_following_accel(ego, nullptr, SignalView{Light::Red, 2.0}, LaneGeometry{}, k, 1.0, k.min_gap, 0.5);
  EXPECT_GE(a, -k.sigma_accel);
}

TEST(Step, EmptyNetworkOnlyAdvancesClock) {
  SimState s = build_network(SimConfig{});
  step(s, all_lights(Light::Red));
  EXPECT_EQ(s.clock, 1);
  EXPECT_TRUE(s.vehicles.empty());
}

TEST(Step, OpenRoadPositionAdvancesBySpeed) {
  SimState s = build_network(SimConfig{});
  Vehicle v = make_vehicle(s, 1, VehicleKind::Real, Approach::East, LaneClass::ThroughOnly);
  v.speed = s.config.speed_limit;
  v.position = 10.0;
  s.vehicles.push_back(v);
  step(s, all_lights(Light::Green));
  const Vehicle& after = s.vehicles.front();
  EXPECT_NEAR(after.position, 10.0 + after.speed * s.dt(), 1e-12);
  EXPECT_NEAR(after.position - 10.0, s.config.speed_limit, s.config.kinematics.sigma_accel + 1e-9);
}

TEST(Step, SameSeedSameActionsSameTrajectory) {
  auto run = [] {
    const SimConfig c;
    const DemandSchedule sched(c.demand, 1000, c.dt, c.seed);
    Environment env(EnvironmentConfig{c, {}, {}, {}, RewardKind::Attack, std::nullopt}, sched);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pick(0, 10);
    std::vector<std::uint64_t> hashes;
    for (int t = 0; t < 1000; ++t) {
      env.advance(ActionMode(pick(rng)));
      hashes.push_back(state_hash(env.state()));
    }
    return hashes;
  };
  EXPECT_EQ(run(), run());
}

TEST(Step, NoCollisionsAndNoTeleportingUnderAttack) {
  const SimConfig c;
  const DemandSchedule sched(c.demand, 1000, c.dt, c.seed);
  Environment env(EnvironmentConfig{c, {}, {}, {}, RewardKind::Attack, std::nullopt}, sched);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick(0, 10);
  std::map<std::int64_t, double> last_position;
  // Zero-mean cruise jitter can carry a vehicle up to sigma above the limit.
  const double slack = (c.speed_limit + c.kinematics.sigma_accel * c.dt) * c.dt + 1e-9;
  for (int t = 0; t < 1000; ++t) {
    env.advance(ActionMode(pick(rng)));
    const auto& s = env.state();
    for (const auto& v : s.vehicles) {
      ASSERT_GE(v.speed, 0.0);
      if (auto it = last_position.find(v.id); it != last_position.end()) {
        ASSERT_GE(v.position, it->second);
        ASSERT_LE(v.position - it->second, slack);
      }
      last_position[v.id] = v.position;
      if (const Vehicle* leader = find_leader(s, v)) {
        ASSERT_GE(leader->rear() - v.position, c.kinematics.min_gap - 1e-9)
            << "follower " << v.id << " leader " << leader->id << " at step " << t;
      }
    }
  }
}

TEST(Waiting, AccumulatesWhileSlowAndResetsOnMovement) {
  Vehicle v;
  for (int t = 0; t < 3; ++t) {
    v.speed = 0.05;
    update_waiting(v, 1.0, t);
  }
  EXPECT_DOUBLE_EQ(v.waiting_time, 3.0);
  v.speed = 0.2;
  update_waiting(v, 1.0, 3);
  EXPECT_DOUBLE_EQ(v.waiting_time, 0.0);
  EXPECT_DOUBLE_EQ(accumulated_waiting(v), 3.0);
}

TEST(Waiting, HaltThresholdIsInclusive) {
  Vehicle v;
  v.speed = 0.1;
  update_waiting(v, 1.0, 0);
  EXPECT_DOUBLE_EQ(v.waiting_time, 1.0);
}

TEST(Waiting, WindowDropsExpiredWaits) {
  // Wait 40 s, move 70 s, wait 20 s; compare against a direct window sum.
  Vehicle v;
  std::vector<double> speeds;
  for (int i = 0; i < 40; ++i) speeds.push_back(0.0);
  for (int i = 0; i < 70; ++i) speeds.push_back(5.0);
  for (int i = 0; i < 20; ++i) speeds.push_back(0.0);
  for (std::size_t t = 0; t < speeds.size(); ++t) {
    v.speed = speeds[t];
    update_waiting(v, 1.0, static_cast<std::int64_t>(t));
    EXPECT_DOUBLE_EQ(accumulated_waiting(v), brute_window_sum(speeds, t, 100, 1.0));
  }
  EXPECT_DOUBLE_EQ(accumulated_waiting(v), 30.0);  // 10 s of the first stop are still inside the window
  EXPECT_DOUBLE_EQ(v.waiting_time, 20.0);
}

TEST(Waiting, NeverStoppedAndSaturatedWindow) {
  Vehicle moving, parked;
  for (int t = 0; t < 300; ++t) {
    moving.speed = 10.0;
    parked.speed = 0.0;
    update_waiting(moving, 1.0, t);
    update_waiting(parked, 1.0, t);
  }
  EXPECT_DOUBLE_EQ(accumulated_waiting(moving), 0.0);
  EXPECT_DOUBLE_EQ(accumulated_waiting(parked), 100.0);
  EXPECT_DOUBLE_EQ(parked.waiting_time, 300.0);
}

TEST(Waiting, RandomTracesMatchBruteForce) {
  std::mt19937_64 rng(99);
  for (int trace = 0; trace < 200; ++trace) {
    const auto speeds = random_speed_log(rng, 400);
    Vehicle v;
    for (std::size_t t = 0; t < speeds.size(); ++t) {
      v.speed = speeds[t];
      update_waiting(v, 1.0, static_cast<std::int64_t>(t));
      ASSERT_DOUBLE_EQ(v.waiting_time, brute_current_run(speeds, t, 1.0));
      ASSERT_DOUBLE_EQ(accumulated_waiting(v), brute_window_sum(speeds, t, 100, 1.0));
    }
  }
}

TEST(Counting, IncludesSybilsAndPartitionsUpstreamVehicles) {
  SimState s = build_network(SimConfig{});
  auto put = [&](std::int64_t id, VehicleKind kind, Approach a, LaneClass lane, double pos) {
    Vehicle v = make_vehicle(s, id, kind, a, lane);
    v.position = pos;
    s.vehicles.push_back(v);
  };
  put(1, VehicleKind::Real, Approach::East, LaneClass::ThroughOnly, 50);
  put(2, VehicleKind::Real, Approach::East, LaneClass::LeftOnly, 80);
  put(3, VehicleKind::Real, Approach::East, LaneClass::ThroughRightShared, 120);
  put(kSybilIdBase, VehicleKind::Sybil, Approach::East, LaneClass::ThroughOnly, 10);
  put(kSybilIdBase + 1, VehicleKind::Sybil, Approach::East, LaneClass::LeftOnly, 200);
  put(4, VehicleKind::Real, Approach::North, LaneClass::ThroughOnly, 20);
  put(5, VehicleKind::Real, Approach::South, LaneClass::ThroughOnly, 330);  // past the stop line
  EXPECT_EQ(count_vehicles(s, Approach::East), 5);
  EXPECT_EQ(count_vehicles(s, Approach::West), 0);
  int total = 0;
  for (auto a : kApproaches) total += count_vehicles(s, a);
  int upstream = 0;
  for (const auto& v : s.vehicles) upstream += s.upstream(v) ? 1 : 0;
  EXPECT_EQ(total, upstream);
}

TEST(GhostMode, RealTrajectoriesIgnoreSybilsUnderFixedTiming) {
  SimConfig c;
  c.interference = InterferenceMode::Ghost;
  const DemandSchedule sched(c.demand, 1000, c.dt, c.seed);
  EnvironmentConfig ec{c, {}, {}, {}, RewardKind::Attack, std::array<double, 4>{30, 30, 30, 30}};
  Environment quiet(ec, sched), attacked(ec, sched);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(1, 10);
  for (int t = 0; t < 1000; ++t) {
    quiet.advance(ActionMode(0));
    attacked.advance(ActionMode(pick(rng)));
    ASSERT_EQ(real_vehicles(quiet.state()), real_vehicles(attacked.state())) << "step " << t;
  }
}

TEST(PaperMode, SybilsInterfereWithRealTraffic) {
  const SimConfig c;
  const DemandSchedule sched(c.demand, 1000, c.dt, c.seed);
  EnvironmentConfig ec{c, {}, {}, {}, RewardKind::Attack, std::array<double, 4>{30, 30, 30, 30}};
  Environment quiet(ec, sched), attacked(ec, sched);
  bool differed = false;
  for (int t = 0; t < 1000 && !differed; ++t) {
    quiet.advance(ActionMode(0));
    attacked.advance(ActionMode(5));
    differed = real_vehicles(quiet.state()) != real_vehicles(attacked.state());
  }
  EXPECT_TRUE(differed);
}
