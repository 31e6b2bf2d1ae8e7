#pragma once

// Experiment commands and their on-disk outputs. Every command writes the exact
// configuration it ran with (config.txt) next to its CSVs, so any run directory
// can be re-executed with `--config <dir>/config.txt`.
//
// CSV schemas (floats use shortest round-trip formatting):
//   episodes.csv         episode,epsilon_end,total_waiting_time,real_waiting_time,vehicles_injected,
//                        skipped_injections,removals,sybils_exited,mean_reward
//   steps.csv            episode,step,action,reward,epsilon,injected,skipped,removed,
//                        total_waiting,real_waiting,halted,moving,phase,review
//   movement_series.csv  step,movement,waiting_time,accumulated_waiting
//   movement_summary.csv movement,vehicles,total_waiting,average_waiting
//   calibration_trace.csv     step,vehicle_id,accel,green,free_leader
//   calibration_histogram.csv bin_lower,bin_upper,raw,isolated
// Episodes are numbered from 1, steps from 0.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sybilsim/config.hpp"
#include "sybilsim/dqn.hpp"

namespace sybilsim {

namespace fs = std::filesystem;
using json = nlohmann::json;

class OutputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainMode { Attack, Baseline };

constexpr std::string_view to_string(TrainMode m) noexcept {
  return m == TrainMode::Attack ? "attack" : "baseline";
}

// ---------------------------------------------------------------- CSV I/O

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw OutputError("cannot write " + path.string());
    if (!append) row(header);
  }

  template <typename... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(values), first = false), ...);
    out_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  void flush() { out_.flush(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const std::string& v) { return v; }
  template <typename I>
    requires std::is_integral_v<I>
  static std::string cell(I v) {
    return std::to_string(v);
  }

  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw OutputError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  double number(std::size_t row, const std::string& name) const { return parse_double(rows[row][column(name)]); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw OutputError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw OutputError(path.string() + ": empty file");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
    if (t.rows.back().size() != t.header.size())
      throw OutputError(path.string() + ":" + std::to_string(t.rows.size() + 1) + ": wrong column count");
  }
  return t;
}

// Keeps the header plus the rows whose first column (episode) is <= last_episode.
inline void truncate_episode_csv(const fs::path& path, int last_episode) {
  std::ifstream in(path);
  if (!in) throw OutputError("cannot read " + path.string());
  std::string header, line, kept;
  std::getline(in, header);
  kept = header + '\n';
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (parse_integer<int>(line.substr(0, comma)) > last_episode) break;
    kept += line + '\n';
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw OutputError("cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw OutputError("cannot read " + path.string());
  return json::parse(in);
}

// ---------------------------------------------------------------- writers

inline const std::vector<std::string> kEpisodeColumns{
    "episode", "epsilon_end", "total_waiting_time", "real_waiting_time", "vehicles_injected",
    "skipped_injections", "removals", "sybils_exited", "mean_reward"};
inline const std::vector<std::string> kStepColumns{
    "episode", "step",   "action", "reward", "epsilon", "injected", "skipped",
    "removed", "total_waiting", "real_waiting", "halted", "moving", "phase", "review"};
inline const std::vector<std::string> kSeriesColumns{"step", "movement", "waiting_time", "accumulated_waiting"};
inline const std::vector<std::string> kSummaryColumns{"movement", "vehicles", "total_waiting", "average_waiting"};

inline void write_episode_row(CsvWriter& w, const EpisodeMetrics& m) {
  w.row(m.episode + 1, m.epsilon_end, m.total_waiting_time, m.real_waiting_time, m.vehicles_injected,
        m.skipped_injections, m.removals, m.sybils_exited, m.mean_reward);
}

inline void write_step_rows(CsvWriter& w, const EpisodeMetrics& m) {
  for (const auto& r : m.steps) {
    const auto& o = r.outcome;
    w.row(m.episode + 1, r.step, o.action, o.reward, r.epsilon, o.injected, o.skipped, o.removed,
          o.total_waiting, o.real_waiting, o.halted, o.moving, static_cast<int>(index(o.phase)), o.reviewed);
  }
}

inline void write_movement_series(const fs::path& path, const std::vector<MovementSample>& series) {
  CsvWriter w(path, kSeriesColumns);
  for (std::size_t t = 0; t < series.size(); ++t)
    for (auto mv : kMovements)
      w.row(t, to_string(mv), series[t].waiting[index(mv)], series[t].accumulated[index(mv)]);
}

inline double average_delay(const MovementDelay& d, Movement m) {
  const auto n = d.vehicles[index(m)];
  return n > 0 ? d.wait_sum[index(m)] / static_cast<double>(n) : 0.0;
}

inline void write_movement_summary(const fs::path& path, const MovementDelay& d) {
  CsvWriter w(path, kSummaryColumns);
  for (auto m : kMovements)
    w.row(to_string(m), d.vehicles[index(m)], d.wait_sum[index(m)], average_delay(d, m));
}

// ---------------------------------------------------------------- environments

inline EnvironmentConfig environment_config(const RunConfig& c, RewardKind kind) {
  EnvironmentConfig e;
  e.sim = normalized(c).sim;
  e.controller = c.controller;
  e.removal = c.removal;
  e.reward = c.reward;
  e.reward_kind = kind;
  if (kind == RewardKind::Baseline) e.removal.enabled = false;
  return e;
}

inline EpisodeMetrics run_noattack_episode(const RunConfig& config, bool record_series = true) {
  const RunConfig c = normalized(config);
  const DemandSchedule schedule(c.sim.demand, c.sim.horizon_steps, c.sim.dt, c.sim.seed);
  Environment env(environment_config(c, RewardKind::Attack), schedule);
  EpisodeOptions opt;
  opt.steps = c.agent.steps_per_episode;
  opt.train = false;
  opt.record_series = record_series;
  return run_loop(
      env, 0, opt, c.agent.count_cap, [](const ObservationVector&) { return ActionMode(0); },
      [](const Transition&) {});
}

inline void prepare_dir(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  write_text(dir / "config.txt", serialize_config(c));
}

// ---------------------------------------------------------------- noattack

struct NoAttackResult {
  EpisodeMetrics metrics;
  std::array<double, kMovementCount> average_waiting{};
};

inline NoAttackResult cmd_noattack(const RunConfig& config, const fs::path& dir) {
  const RunConfig c = normalized(config);
  prepare_dir(dir, c);
  NoAttackResult r;
  r.metrics = run_noattack_episode(c);
  for (auto m : kMovements) r.average_waiting[index(m)] = average_delay(r.metrics.delay, m);
  write_movement_summary(dir / "movement_summary.csv", r.metrics.delay);
  write_movement_series(dir / "movement_series.csv", r.metrics.series);
  {
    CsvWriter e(dir / "episodes.csv", kEpisodeColumns);
    write_episode_row(e, r.metrics);
    CsvWriter s(dir / "steps.csv", kStepColumns);
    write_step_rows(s, r.metrics);
  }
  return r;
}

// ---------------------------------------------------------------- calibrate

struct CalibrationResult {
  double threshold = 0.0;
  double percentile = 0.05;
  CalibrationTrace trace;
};

inline constexpr double kHistogramBin = 0.1;  // m/s^2

// One episode with removal disabled: each step, with probability
// `calibration_injection` a uniformly random non-zero action, otherwise none. The
// threshold is the (1 - percentile) quantile of isolated free-flow decelerations.
inline CalibrationResult cmd_calibrate(const RunConfig& config, const fs::path& dir) {
  const RunConfig c = normalized(config);
  prepare_dir(dir, c);
  const DemandSchedule schedule(c.sim.demand, c.sim.horizon_steps, c.sim.dt, c.sim.seed);
  EnvironmentConfig ec = environment_config(c, RewardKind::Attack);
  ec.removal.enabled = false;
  Environment env(ec, schedule);
  CalibrationResult r;
  r.percentile = c.calibration_percentile;
  std::mt19937_64 rng(hash_combine(c.seed, 0xCA11B8A7EULL));
  std::uniform_int_distribution<int> pick(1, ActionMode::kCount - 1);
  std::bernoulli_distribution fire(c.calibration_injection);
  EpisodeOptions opt;
  opt.steps = c.agent.steps_per_episode;
  opt.train = false;
  opt.trace = &r.trace;
  run_loop(
      env, 0, opt, c.agent.count_cap, [&](const ObservationVector&) { return ActionMode(fire(rng) ? pick(rng) : 0); },
      [](const Transition&) {});

  {
    CsvWriter w(dir / "calibration_trace.csv", {"step", "vehicle_id", "accel", "green", "free_leader"});
    for (const auto& s : r.trace.samples) w.row(s.step, s.vehicle_id, s.accel, s.green, s.free_leader);
  }
  std::vector<double> raw, isolated;
  for (const auto& s : r.trace.samples) {
    if (!(s.accel < 0.0)) continue;
    raw.push_back(-s.accel);
    if (s.green && s.free_leader) isolated.push_back(-s.accel);
  }
  const double top = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
  const auto bins = static_cast<std::size_t>(std::floor(top / kHistogramBin)) + 1;
  std::vector<std::int64_t> raw_count(bins), iso_count(bins);
  auto bin_of = [&](double x) { return std::min(bins - 1, static_cast<std::size_t>(std::floor(x / kHistogramBin))); };
  for (double x : raw) ++raw_count[bin_of(x)];
  for (double x : isolated) ++iso_count[bin_of(x)];
  {
    CsvWriter w(dir / "calibration_histogram.csv", {"bin_lower", "bin_upper", "raw", "isolated"});
    for (std::size_t b = 0; b < bins; ++b)
      w.row(static_cast<double>(b) * kHistogramBin, static_cast<double>(b + 1) * kHistogramBin, raw_count[b],
            iso_count[b]);
  }
  r.threshold = calibrate_threshold(r.trace, r.percentile);
  write_json(dir / "calibration.json", json{{"threshold", r.threshold},
                                            {"percentile", r.percentile},
                                            {"samples", r.trace.samples.size()},
                                            {"decelerations", raw.size()},
                                            {"isolated_decelerations", isolated.size()}});
  return r;
}

// ---------------------------------------------------------------- plateau

// 1-based episode from which the trailing moving average stays within `tolerance`
// (relative) of its final value.
inline int plateau_episode(const std::vector<double>& series, int window = 5, double tolerance = 0.10) {
  if (series.empty()) throw std::invalid_argument("plateau_episode: empty series");
  if (window < 1) throw std::invalid_argument("plateau_episode: window must be >= 1");
  std::vector<double> ma(series.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i];
    if (i >= static_cast<std::size_t>(window)) sum -= series[i - static_cast<std::size_t>(window)];
    ma[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(window)));
  }
  const double final_value = ma.back();
  const double band = tolerance * std::abs(final_value);
  std::size_t start = ma.size();
  while (start > 0 && std::abs(ma[start - 1] - final_value) <= band) --start;
  return static_cast<int>(start) + 1;
}

// ---------------------------------------------------------------- summary

inline constexpr int kConvergedWindow = 10;

inline std::vector<std::string> missing_outputs(const fs::path& dir, const std::vector<std::string>& names) {
  std::vector<std::string> missing;
  for (const auto& n : names)
    if (!fs::exists(dir / n)) missing.push_back(n);
  return missing;
}

inline const std::vector<std::string> kSummaryInputs{"config.txt", "episodes.csv", "steps.csv"};

// Headline numbers re-aggregated from the per-step CSV; run_meta.json (when
// present) contributes the wall clock and the attack-free reference total.
inline json export_summary(const fs::path& dir) {
  if (auto missing = missing_outputs(dir, kSummaryInputs); !missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw OutputError(dir.string() + ": missing " + list);
  }
  const CsvTable steps = read_csv(dir / "steps.csv");
  const auto c_ep = steps.column("episode"), c_action = steps.column("action"),
             c_inj = steps.column("injected"), c_wait = steps.column("total_waiting"),
             c_real = steps.column("real_waiting"), c_rem = steps.column("removed"),
             c_skip = steps.column("skipped"), c_reward = steps.column("reward");
  std::map<int, double> waiting, real_waiting;
  std::map<int, std::int64_t> injected;
  std::vector<std::int64_t> action_counts(ActionMode::kCount, 0);
  std::int64_t removals = 0, skipped = 0;
  double reward_sum = 0.0;
  int max_action = 0;
  for (const auto& row : steps.rows) {
    const int ep = parse_integer<int>(row[c_ep]);
    const int a = parse_integer<int>(row[c_action]);
    waiting[ep] += parse_double(row[c_wait]);
    real_waiting[ep] += parse_double(row[c_real]);
    injected[ep] += parse_integer<std::int64_t>(row[c_inj]);
    removals += parse_integer<std::int64_t>(row[c_rem]);
    skipped += parse_integer<std::int64_t>(row[c_skip]);
    reward_sum += parse_double(row[c_reward]);
    if (a >= 0 && a < ActionMode::kCount) ++action_counts[static_cast<std::size_t>(a)];
    max_action = std::max(max_action, a);
  }
  if (waiting.empty()) throw OutputError(dir.string() + ": steps.csv has no rows");
  std::vector<double> per_episode;
  std::vector<double> per_episode_injected;
  for (const auto& [ep, w] : waiting) {
    per_episode.push_back(w);
    per_episode_injected.push_back(static_cast<double>(injected[ep]));
  }
  const std::size_t n = per_episode.size();
  const std::size_t k = std::min<std::size_t>(n, kConvergedWindow);
  auto tail_mean = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = n - k; i < n; ++i) s += v[i];
    return s / static_cast<double>(k);
  };
  std::int64_t total_injected = 0;
  for (double v : per_episode_injected) total_injected += static_cast<std::int64_t>(v);
  const auto most = std::max_element(action_counts.begin(), action_counts.end()) - action_counts.begin();

  json s;
  s["episodes"] = n;
  s["steps"] = steps.rows.size();
  s["converged_waiting_time"] = tail_mean(per_episode);
  s["converged_window"] = k;
  s["first_episode_waiting_time"] = per_episode.front();
  s["total_injections"] = total_injected;
  s["first_episode_injections"] = per_episode_injected.front();
  s["converged_injections"] = tail_mean(per_episode_injected);
  s["skipped_injections"] = skipped;
  s["removals"] = removals;
  s["mean_reward"] = reward_sum / static_cast<double>(steps.rows.size());
  s["most_frequent_action"] = most;
  s["action_counts"] = action_counts;
  s["max_action"] = max_action;
  s["episodes_to_plateau"] = plateau_episode(per_episode);
  if (fs::exists(dir / "run_meta.json")) {
    const json meta = read_json(dir / "run_meta.json");
    for (const auto& [key, value] : meta.items()) s[key] = value;
    if (meta.contains("noattack_total_waiting_time")) {
      const double ref = meta["noattack_total_waiting_time"].get<double>();
      s["waiting_ratio"] = ref > 0.0 ? s["converged_waiting_time"].get<double>() / ref : 0.0;
    }
  }
  write_json(dir / "summary.json", s);
  return s;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  bool resume = false;
  // Stop after this many completed episodes (simulates an interruption); 0 runs to the end.
  int stop_after = 0;
  bool quiet = true;
};

inline const std::vector<std::string> kTrainOutputs{"config.txt",          "episodes.csv",    "steps.csv",
                                                    "movement_series.csv", "movement_summary.csv",
                                                    "checkpoint.json",     "run_meta.json",   "summary.json",
                                                    "weights/final.txt"};

inline json params_to_json(const MlpParams& p) {
  json layers = json::array();
  for (const auto& l : p.layers)
    layers.push_back({{"inputs", l.inputs}, {"outputs", l.outputs}, {"weights", l.weights}, {"bias", l.bias}});
  return layers;
}

inline MlpParams params_from_json(const json& j) {
  MlpParams p;
  for (const auto& l : j) {
    DenseLayer d(l.at("inputs").get<std::size_t>(), l.at("outputs").get<std::size_t>());
    d.weights = l.at("weights").get<std::vector<double>>();
    d.bias = l.at("bias").get<std::vector<double>>();
    if (d.weights.size() != d.inputs * d.outputs || d.bias.size() != d.outputs)
      throw OutputError("checkpoint: layer shape mismatch");
    p.layers.push_back(std::move(d));
  }
  return p;
}

inline json transition_to_json(const Transition& t) {
  return {{"s", t.s}, {"a", t.action}, {"r", t.reward}, {"s2", t.s_next}, {"done", t.terminal}};
}

inline Transition transition_from_json(const json& j) {
  Transition t;
  t.s = j.at("s").get<ObservationVector>();
  t.action = j.at("a").get<int>();
  t.reward = j.at("r").get<double>();
  t.s_next = j.at("s2").get<ObservationVector>();
  t.terminal = j.at("done").get<bool>();
  return t;
}

inline json checkpoint_json(DqnAgent& agent, int episodes_done, double wall_clock) {
  std::ostringstream rng;
  rng << agent.rng();
  json replay = json::array();
  for (const auto& t : agent.replay().storage()) replay.push_back(transition_to_json(t));
  json j{{"episodes_done", episodes_done},
         {"wall_clock_seconds", wall_clock},
         {"params", params_to_json(agent.params())},
         {"adam",
          {{"m", params_to_json(agent.adam().m)},
           {"v", params_to_json(agent.adam().v)},
           {"step", agent.adam().step}}},
         {"replay", replay},
         {"replay_head", agent.replay().head()},
         {"rng", rng.str()},
         {"updates", agent.updates()}};
  if (agent.target()) j["target"] = params_to_json(*agent.target());
  return j;
}

inline void restore_checkpoint(DqnAgent& agent, const json& j) {
  agent.params() = params_from_json(j.at("params"));
  agent.adam().m = params_from_json(j.at("adam").at("m"));
  agent.adam().v = params_from_json(j.at("adam").at("v"));
  agent.adam().step = j.at("adam").at("step").get<std::int64_t>();
  if (!agent.params().same_shape(agent.adam().m)) throw OutputError("checkpoint: network shape mismatch");
  std::vector<Transition> replay;
  for (const auto& t : j.at("replay")) replay.push_back(transition_from_json(t));
  agent.replay().restore(std::move(replay), j.at("replay_head").get<std::size_t>());
  std::istringstream rng(j.at("rng").get<std::string>());
  rng >> agent.rng();
  agent.set_updates(j.at("updates").get<std::int64_t>());
  if (j.contains("target")) agent.target() = params_from_json(j.at("target"));
}

inline void save_weights(const fs::path& path, const MlpParams& p) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw OutputError("cannot write " + path.string());
  save_snapshot(p, out);
}

inline std::string snapshot_name(int episode) {
  std::string n = std::to_string(episode);
  return "episode_" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n + ".txt";
}

// Runs the attack (or baseline) campaign. With `resume`, continues from
// checkpoint.json; the CSVs are truncated to the checkpointed episode so the
// finished directory matches an uninterrupted run.
inline json cmd_train(const RunConfig& config, TrainMode mode, const fs::path& dir, const TrainOptions& opt = {}) {
  const RunConfig c = normalized(config);
  const auto started = std::chrono::steady_clock::now();
  const int actions = mode == TrainMode::Attack ? ActionMode::kCount : ActionMode::kBaselineCount;
  const RewardKind kind = mode == TrainMode::Attack ? RewardKind::Attack : RewardKind::Baseline;
  DqnAgent agent(actions, c.agent, hash_combine(c.seed, 0xD0A6E47ULL));

  int start_episode = 0;
  double prior_wall = 0.0;
  if (opt.resume && fs::exists(dir / "checkpoint.json")) {
    std::ifstream persisted(dir / "config.txt");
    std::stringstream text;
    text << persisted.rdbuf();
    if (text.str() != serialize_config(c))
      throw OutputError(dir.string() + ": config differs from the interrupted run; refusing to resume");
    const json ck = read_json(dir / "checkpoint.json");
    restore_checkpoint(agent, ck);
    start_episode = ck.at("episodes_done").get<int>();
    prior_wall = ck.at("wall_clock_seconds").get<double>();
    truncate_episode_csv(dir / "episodes.csv", start_episode);
    truncate_episode_csv(dir / "steps.csv", start_episode);
  } else {
    prepare_dir(dir, c);
  }
  fs::create_directories(dir / "weights");

  const double noattack_total = run_noattack_episode(c, false).total_waiting_time;
  const DemandSchedule schedule(c.sim.demand, c.sim.horizon_steps, c.sim.dt, c.sim.seed);
  Environment env(environment_config(c, kind), schedule);
  CsvWriter episodes(dir / "episodes.csv", kEpisodeColumns, start_episode > 0);
  CsvWriter steps(dir / "steps.csv", kStepColumns, start_episode > 0);

  auto elapsed = [&] {
    return prior_wall + std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };
  const int last = c.agent.episodes;
  for (int ep = start_episode; ep < last; ++ep) {
    EpisodeOptions eo;
    eo.steps = c.agent.steps_per_episode;
    eo.epsilon = epsilon_for_episode(ep, c.agent);
    eo.record_series = ep + 1 == last;
    const EpisodeMetrics m =
        mode == TrainMode::Attack ? run_episode(agent, env, ep, eo) : run_baseline(agent, env, ep, eo);
    write_episode_row(episodes, m);
    write_step_rows(steps, m);
    if (!opt.quiet)
      std::fprintf(stderr, "[%s] episode %d/%d  waiting %.0f  injected %lld  eps %.3f\n", c.label.c_str(), ep + 1,
                   last, m.total_waiting_time, static_cast<long long>(m.vehicles_injected), eo.epsilon);
    const int done = ep + 1;
    if (done == last) {
      write_movement_series(dir / "movement_series.csv", m.series);
      write_movement_summary(dir / "movement_summary.csv", m.delay);
    }
    if (done % c.snapshot_every == 0 || done == last) {
      episodes.flush();
      steps.flush();
      save_weights(dir / "weights" / snapshot_name(done), agent.params());
      write_json(dir / "checkpoint.json", checkpoint_json(agent, done, elapsed()));
    }
    if (opt.stop_after > 0 && done >= opt.stop_after && done < last) return json{{"interrupted_after", done}};
  }
  episodes.flush();
  steps.flush();
  save_weights(dir / "weights" / "final.txt", agent.params());
  write_json(dir / "run_meta.json", json{{"mode", to_string(mode)},
                                         {"label", c.label},
                                         {"seed", c.seed},
                                         {"noattack_total_waiting_time", noattack_total},
                                         {"wall_clock_seconds", elapsed()}});
  return export_summary(dir);
}

}  // namespace sybilsim
