#pragma once

// Independent oracles and fixtures shared by the unit and acceptance tests.

#include <algorithm>
#include <random>
#include <vector>

#include "sybilsim/atsc.hpp"
#include "sybilsim/simcore.hpp"

namespace testsupport {

inline sybilsim::LightArray all_lights(sybilsim::Light l) {
  sybilsim::LightArray out;
  out.fill(l);
  return out;
}

inline std::int64_t count_arrivals_until(const sybilsim::DemandSchedule& s, std::int64_t last_step) {
  std::int64_t n = 0;
  for (std::int64_t t = 0; t <= last_step; ++t) n += static_cast<std::int64_t>(s.arrivals_at(t).size());
  return n;
}

// Seconds spent at or below the halt speed among steps (t - window, t].
inline double brute_window_sum(const std::vector<double>& speeds, std::size_t t, std::size_t window, double dt,
                               double halt = 0.1) {
  double sum = 0.0;
  const std::size_t first = t + 1 >= window ? t + 1 - window : 0;
  for (std::size_t s = first; s <= t; ++s)
    if (speeds[s] <= halt) sum += dt;
  return sum;
}

// Length of the trailing run of halted steps ending at t.
inline double brute_current_run(const std::vector<double>& speeds, std::size_t t, double dt, double halt = 0.1) {
  double run = 0.0;
  for (std::size_t s = t + 1; s-- > 0;) {
    if (speeds[s] > halt) break;
    run += dt;
  }
  return run;
}

// Alternating stop/go segments with random lengths; includes speeds exactly at
// and just above the halt threshold.
template <typename Rng>
std::vector<double> random_speed_log(Rng& rng, std::size_t length) {
  std::uniform_int_distribution<int> seg(1, 60);
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<double> fast(0.1000001, 14.0);
  std::vector<double> out;
  bool halted = rng() % 2 == 0;
  while (out.size() < length) {
    const int n = seg(rng);
    for (int i = 0; i < n && out.size() < length; ++i) {
      if (halted) {
        const int k = kind(rng);
        out.push_back(k == 0 ? 0.1 : (k == 1 ? 0.05 : 0.0));
      } else {
        out.push_back(kind(rng) == 0 ? std::nextafter(0.1, 1.0) : fast(rng));
      }
    }
    halted = !halted;
  }
  return out;
}

inline std::vector<sybilsim::Vehicle> real_vehicles(const sybilsim::SimState& s) {
  std::vector<sybilsim::Vehicle> out;
  for (const auto& v : s.vehicles)
    if (!v.is_sybil()) out.push_back(v);
  return out;
}

using namespace sybilsim;

// Exhaustive scan: maximum value, then the first movement (enum order) holding it,
// unless the current phase holds any movement at that value.
inline Phase oracle_select(const AawtTable& r, Phase current) {
  double best = -1.0;
  for (std::size_t i = 0; i < 8; ++i) best = r[i].aawt > best ? r[i].aawt : best;
  bool current_ties = false;
  int first = -1;
  for (std::size_t i = 0; i < 8; ++i) {
    if (r[i].aawt != best) continue;
    if (first < 0) first = static_cast<int>(i);
    const auto m = static_cast<Movement>(i);
    const bool ew = m == Movement::EBT || m == Movement::EBL || m == Movement::WBT || m == Movement::WBL;
    const Phase p = ew ? (is_left_turn(m) ? Phase::EWLeft : Phase::EWThrough)
                       : (is_left_turn(m) ? Phase::NSLeft : Phase::NSThrough);
    if (p == current) current_ties = true;
  }
  if (current_ties) return current;
  const auto m = static_cast<Movement>(first);
  switch (m) {
    case Movement::EBT: case Movement::WBT: return Phase::EWThrough;
    case Movement::EBL: case Movement::WBL: return Phase::EWLeft;
    case Movement::NBT: case Movement::SBT: return Phase::NSThrough;
    default: return Phase::NSLeft;
  }
}

inline AawtTable random_records(std::mt19937_64& rng) {
  // Small integer grid so ties are frequent.
  std::uniform_int_distribution<int> n_dist(0, 6), w_dist(0, 4);
  AawtTable t;
  for (auto m : kMovements) {
    const int n = n_dist(rng);
    double awt = 0.0;
    for (int i = 0; i < n; ++i) awt += w_dist(rng);
    t[index(m)] = make_record(m, awt, n);
  }
  return t;
}

// Sort-and-index rank oracle: linear interpolation between order statistics.
inline double rank_oracle(std::vector<double> x, double q) {
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= x.size()) return x.back();
  return x[i] + (pos - static_cast<double>(i)) * (x[i + 1] - x[i]);
}


}  // namespace testsupport
