#pragma once

// Run configuration and its `key = value` text format. Lines starting with
// '#' are comments. Unknown keys are errors so that typos never silently fall
// back to defaults.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sybilsim/dqn.hpp"

namespace sybilsim {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  SimConfig sim;
  ControllerConfig controller;
  RemovalPolicy removal;
  RewardSpec reward;
  HyperParams agent;
  double calibration_percentile = 0.05;
  double calibration_injection = 0.5;  // probability of a non-zero action per calibration step
  std::uint64_t seed = 1;
  std::string label = "run";
  std::string output_dir = "runs/run";
  int snapshot_every = 10;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string turn_name(Turn t) {
  switch (t) {
    case Turn::Left: return "left";
    case Turn::Through: return "through";
    case Turn::Right: return "right";
  }
  return "through";
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto real = [&f](std::string key, auto member) {
      f.push_back({key, [member](RunConfig& c, const std::string& v) { member(c) = parse_double(v); },
                   [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }});
    };
    auto integer = [&f](std::string key, auto member) {
      f.push_back({key,
                   [member](RunConfig& c, const std::string& v) {
                     using T = std::remove_reference_t<decltype(member(c))>;
                     member(c) = parse_integer<T>(v);
                   },
                   [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
    };
    auto boolean = [&f](std::string key, auto member) {
      f.push_back({key, [member](RunConfig& c, const std::string& v) { member(c) = parse_bool(v); },
                   [member](const RunConfig& c) {
                     return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                   }});
    };
    auto text = [&f](std::string key, auto member) {
      f.push_back({key, [member](RunConfig& c, const std::string& v) { member(c) = v; },
                   [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }});
    };

    integer("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    text("run.label", [](RunConfig& c) -> std::string& { return c.label; });
    text("run.output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; });
    integer("run.episodes", [](RunConfig& c) -> int& { return c.agent.episodes; });
    integer("run.steps", [](RunConfig& c) -> int& { return c.agent.steps_per_episode; });
    integer("run.snapshot_every", [](RunConfig& c) -> int& { return c.snapshot_every; });

    real("sim.approach_length", [](RunConfig& c) -> double& { return c.sim.approach_length; });
    real("sim.exit_length", [](RunConfig& c) -> double& { return c.sim.exit_length; });
    real("sim.speed_limit", [](RunConfig& c) -> double& { return c.sim.speed_limit; });
    real("sim.dt", [](RunConfig& c) -> double& { return c.sim.dt; });
    real("sim.halt_speed", [](RunConfig& c) -> double& { return c.sim.halt_speed; });
    real("sim.accumulation_window", [](RunConfig& c) -> double& { return c.sim.accumulation_window; });
    f.push_back({"sim.interference",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "follow")
                     c.sim.interference = InterferenceMode::Paper;
                   else if (v == "ghost")
                     c.sim.interference = InterferenceMode::Ghost;
                   else
                     throw std::invalid_argument("interference must be 'follow' or 'ghost'");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.sim.interference == InterferenceMode::Ghost ? "ghost" : "follow");
                 }});
    real("kinematics.accel_max", [](RunConfig& c) -> double& { return c.sim.kinematics.accel_max; });
    real("kinematics.decel_max", [](RunConfig& c) -> double& { return c.sim.kinematics.decel_max; });
    real("kinematics.min_gap", [](RunConfig& c) -> double& { return c.sim.kinematics.min_gap; });
    real("kinematics.vehicle_length", [](RunConfig& c) -> double& { return c.sim.kinematics.vehicle_length; });
    real("kinematics.sigma_accel", [](RunConfig& c) -> double& { return c.sim.kinematics.sigma_accel; });
    real("kinematics.reaction_time", [](RunConfig& c) -> double& { return c.sim.kinematics.reaction_time; });
    for (auto a : kApproaches)
      for (Turn t : {Turn::Left, Turn::Through, Turn::Right}) {
        const std::size_t r = route_index(a, t);
        real("demand." + std::string(to_string(a)) + "." + turn_name(t),
             [r](RunConfig& c) -> double& { return c.sim.demand[r]; });
      }

    real("controller.review_interval", [](RunConfig& c) -> double& { return c.controller.review_interval; });
    real("controller.yellow", [](RunConfig& c) -> double& { return c.controller.yellow; });
    real("removal.threshold", [](RunConfig& c) -> double& { return c.removal.threshold; });
    boolean("removal.enabled", [](RunConfig& c) -> bool& { return c.removal.enabled; });
    real("calibration.percentile", [](RunConfig& c) -> double& { return c.calibration_percentile; });
    real("calibration.injection_probability", [](RunConfig& c) -> double& { return c.calibration_injection; });
    real("reward.gain", [](RunConfig& c) -> double& { return c.reward.gain; });
    real("reward.d", [](RunConfig& c) -> double& { return c.reward.d; });

    real("agent.gamma", [](RunConfig& c) -> double& { return c.agent.gamma; });
    real("agent.learning_rate", [](RunConfig& c) -> double& { return c.agent.learning_rate; });
    integer("agent.batch_size", [](RunConfig& c) -> std::size_t& { return c.agent.batch_size; });
    integer("agent.warmup", [](RunConfig& c) -> std::size_t& { return c.agent.warmup; });
    integer("agent.replay_capacity", [](RunConfig& c) -> std::size_t& { return c.agent.replay_capacity; });
    real("agent.epsilon_start", [](RunConfig& c) -> double& { return c.agent.epsilon_start; });
    real("agent.epsilon_end", [](RunConfig& c) -> double& { return c.agent.epsilon_end; });
    integer("agent.epsilon_decay_episodes", [](RunConfig& c) -> int& { return c.agent.epsilon_decay_episodes; });
    integer("agent.target_sync", [](RunConfig& c) -> int& { return c.agent.target_sync; });
    real("agent.count_cap", [](RunConfig& c) -> double& { return c.agent.count_cap; });
    return f;
  }();
  return table;
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  validate(c.sim);
  validate(c.controller);
  validate(c.removal);
  validate(c.reward);
  validate(c.agent);
  if (!(c.calibration_percentile > 0.0 && c.calibration_percentile < 1.0))
    throw std::invalid_argument("calibration.percentile must lie in (0, 1)");
  if (!(c.calibration_injection >= 0.0 && c.calibration_injection <= 1.0))
    throw std::invalid_argument("calibration.injection_probability must lie in [0, 1]");
  if (c.snapshot_every < 1) throw std::invalid_argument("run.snapshot_every must be >= 1");
}

// Applies `key = value` lines on top of `base`. Errors carry "<source>:<line>:".
inline RunConfig parse_config(std::istream& in, const std::string& source = "config",
                              RunConfig base = RunConfig{}) {
  std::map<std::string, const detail::Field*> by_key;
  for (const auto& f : detail::fields()) by_key[f.key] = &f;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second->set(base, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  base.sim.seed = base.seed;
  base.sim.horizon_steps = base.agent.steps_per_episode;
  try {
    validate(base);
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  return parse_config(in, path);
}

// Every key in a fixed order; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "# sybilsim run configuration\n";
  for (const auto& f : detail::fields()) out << f.key << " = " << f.get(c) << '\n';
  return out.str();
}

// Keeps the derived fields (sim seed, horizon) in sync after programmatic edits.
inline RunConfig normalized(RunConfig c) {
  c.sim.seed = c.seed;
  c.sim.horizon_steps = c.agent.steps_per_episode;
  return c;
}

}  // namespace sybilsim
