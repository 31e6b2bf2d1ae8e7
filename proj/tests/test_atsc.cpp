#include <gtest/gtest.h>

#include <random>

#include "sybilsim/dqn.hpp"
#include "support.hpp"

using namespace sybilsim;
using namespace testsupport;

namespace {

void place(SimState& s, std::int64_t id, Movement m, double pos, double waiting, VehicleKind kind = VehicleKind::Real) {
  Vehicle v = make_vehicle(s, id, kind, approach_of(m), is_left_turn(m) ? LaneClass::LeftOnly : LaneClass::ThroughOnly);
  v.position = pos;
  v.waiting_time = waiting;
  s.vehicles.push_back(v);
}

}  // namespace

TEST(Phases, CoverEveryMovementOnce) {
  std::array<int, 8> seen{};
  for (auto p : kPhases)
    for (auto m : movements_of(p)) {
      ++seen[index(m)];
      EXPECT_EQ(phase_of(m), p);
    }
  for (int n : seen) EXPECT_EQ(n, 1);
}

TEST(ComputeAawt, HandBuiltFixture) {
  SimState s = build_network(SimConfig{});
  place(s, 1, Movement::NBT, 290, 10);
  place(s, 2, Movement::NBT, 280, 20);
  place(s, 3, Movement::NBT, 150, 0);
  place(s, 4, Movement::EBL, 295, 7);
  place(s, kSybilIdBase, Movement::EBL, 100, 0, VehicleKind::Sybil);
  place(s, 5, Movement::WBT, 310, 50);  // already across the stop line
  const auto t = compute_aawt(s);
  EXPECT_EQ(t[index(Movement::NBT)].awt, 30.0);
  EXPECT_EQ(t[index(Movement::NBT)].n, 3);
  EXPECT_EQ(t[index(Movement::NBT)].aawt, 10.0);
  EXPECT_EQ(t[index(Movement::EBL)].n, 2);
  EXPECT_EQ(t[index(Movement::EBL)].aawt, 3.5);
  EXPECT_EQ(t[index(Movement::WBT)].n, 0);
  EXPECT_EQ(t[index(Movement::WBT)].aawt, 0.0);
  EXPECT_EQ(t[index(Movement::SBL)].aawt, 0.0);
}

TEST(SelectPhase, Examples) {
  AawtTable t;
  for (auto m : kMovements) t[index(m)] = make_record(m, 6.0, 2);
  for (auto p : kPhases) EXPECT_EQ(select_phase(t, p), p);
  for (auto m : kMovements) t[index(m)] = make_record(m, 5.0, 1);
  t[index(Movement::NBT)] = make_record(Movement::NBT, 12.0, 1);
  EXPECT_EQ(select_phase(t, Phase::EWThrough), Phase::NSThrough);
  // Tie between WBT and EBL outside the current phase: EBL comes first in enum order.
  for (auto m : kMovements) t[index(m)] = make_record(m, 0.0, 0);
  t[index(Movement::WBT)] = make_record(Movement::WBT, 9.0, 1);
  t[index(Movement::EBL)] = make_record(Movement::EBL, 9.0, 1);
  EXPECT_EQ(select_phase(t, Phase::NSLeft), Phase::EWLeft);
  EXPECT_EQ(select_phase(t, Phase::EWThrough), Phase::EWThrough);
}

TEST(SelectPhase, MatchesBruteForceOnRandomRecords) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 10000; ++i) {
    const auto t = random_records(rng);
    const Phase cur = kPhases[static_cast<std::size_t>(rng() % 4)];
    const Phase got = select_phase(t, cur);
    ASSERT_EQ(got, oracle_select(t, cur)) << "case " << i;
    double best = 0.0;
    for (const auto& r : t) best = std::max(best, r.aawt);
    bool holds_max = false;
    for (auto m : movements_of(got)) holds_max |= t[index(m)].aawt == best;
    ASSERT_TRUE(holds_max);
  }
}

TEST(SelectPhase, InvariantUnderPositiveScaling) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 2000; ++i) {
    auto t = random_records(rng);
    const Phase cur = kPhases[static_cast<std::size_t>(rng() % 4)];
    const Phase before = select_phase(t, cur);
    for (auto& r : t) r.aawt *= 4.0;
    ASSERT_EQ(select_phase(t, cur), before);
  }
}

TEST(Tick, ReviewGateAndYellow) {
  SimState s = build_network(SimConfig{});
  place(s, 1, Movement::NBL, 290, 30);
  SignalState sig = initial_signal(Phase::EWThrough);
  const ControllerConfig c;
  for (int t = 1; t <= 4; ++t) {
    const auto r = tick(sig, s, c, 1.0);
    EXPECT_FALSE(r.reviewed) << t;
    EXPECT_EQ(sig.current, Phase::EWThrough);
  }
  EXPECT_DOUBLE_EQ(remaining_to_review(sig, c), 1.0);
  auto r = tick(sig, s, c, 1.0);
  EXPECT_TRUE(r.reviewed);
  EXPECT_TRUE(r.changed);
  EXPECT_EQ(sig.interval, Interval::Yellow);
  EXPECT_EQ(lights(sig)[index(Movement::EBT)], Light::Yellow);
  EXPECT_EQ(lights(sig)[index(Movement::NBL)], Light::Red);
  for (int t = 0; t < 2; ++t) EXPECT_FALSE(tick(sig, s, c, 1.0).switched);
  EXPECT_TRUE(tick(sig, s, c, 1.0).switched);
  EXPECT_EQ(sig.current, Phase::NSLeft);
  EXPECT_EQ(lights(sig)[index(Movement::NBL)], Light::Green);
  EXPECT_EQ(lights(sig)[index(Movement::SBL)], Light::Green);
}

TEST(Tick, SameWinnerKeepsGreen) {
  SimState s = build_network(SimConfig{});
  place(s, 1, Movement::EBT, 290, 30);
  SignalState sig = initial_signal(Phase::EWThrough);
  for (int t = 0; t < 20; ++t) {
    const auto r = tick(sig, s, ControllerConfig{}, 1.0);
    EXPECT_FALSE(r.changed);
    EXPECT_EQ(sig.interval, Interval::Green);
  }
  EXPECT_DOUBLE_EQ(sig.phase_age, 20.0);
}

// Phase changes happen only at review instants (green age a multiple of 5 s),
// and a yellow always separates two different greens.
TEST(Tick, ChangesOnlyAtReviewBoundariesUnderAttack) {
  const SimConfig sc;
  const DemandSchedule sched(sc.demand, 1000, sc.dt, sc.seed);
  Environment env(EnvironmentConfig{sc, {}, {}, {}, RewardKind::Attack, std::nullopt}, sched);
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> pick(0, 10);
  int changes = 0;
  SignalState prev = env.signal();
  for (int t = 0; t < 1000; ++t) {
    const double age_before = env.signal().phase_age;
    const auto out = env.advance(ActionMode(pick(rng)));
    const SignalState now = env.signal();
    if (prev.interval == Interval::Green && now.interval == Interval::Yellow) {
      ++changes;
      EXPECT_TRUE(out.reviewed);
      const double age = age_before + sc.dt;
      EXPECT_NEAR(std::fmod(age, 5.0), 0.0, 1e-9) << "step " << t;
      EXPECT_GE(age, 5.0);
    }
    if (prev.interval == Interval::Green && now.interval == Interval::Green) {
      EXPECT_EQ(prev.current, now.current);
    }
    prev = now;
  }
  EXPECT_GT(changes, 10);
}

TEST(FixedTime, CycleAndIndependence) {
  FixedTimeController f({30, 30, 30, 30});
  EXPECT_DOUBLE_EQ(f.cycle_length(), 120.0);
  std::array<int, 4> greens{};
  Phase last = f.phase();
  greens[index(last)] = 1;
  for (int t = 0; t < 119; ++t) {
    f.tick(1.0);
    if (f.phase() != last) {
      last = f.phase();
      ++greens[index(last)];
    }
  }
  for (int g : greens) EXPECT_EQ(g, 1);
  EXPECT_THROW(FixedTimeController({30, 0, 30, 30}), std::invalid_argument);
  FixedTimeController g({30, 30, 30, 30});
  g.tick(28.0);
  EXPECT_EQ(g.state().interval, Interval::Yellow);
}
