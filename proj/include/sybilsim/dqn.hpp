#pragma once

// The attacking agent and the environment loop it trains in.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "sybilsim/atsc.hpp"
#include "sybilsim/numerics.hpp"
#include "sybilsim/simcore.hpp"
#include "sybilsim/sybil.hpp"

namespace sybilsim {

inline constexpr std::size_t kObservationSize = kApproachCount + kPhaseCount + 1;
using ObservationVector = std::array<double, kObservationSize>;

struct Observation {
  std::array<int, kApproachCount> counts{};
  Phase phase = Phase::EWThrough;
  double remaining = 0.0;  // seconds until the next review

  // counts / cap, phase one-hot, remaining / review interval.
  ObservationVector normalized(double count_cap, double review_interval) const {
    ObservationVector x{};
    for (std::size_t i = 0; i < kApproachCount; ++i) x[i] = counts[i] / count_cap;
    x[kApproachCount + index(phase)] = 1.0;
    x[kObservationSize - 1] = remaining / review_interval;
    return x;
  }
};

inline Observation observe(const SimState& state, const SignalState& signal, const ControllerConfig& c) {
  Observation obs;
  for (auto a : kApproaches) obs.counts[index(a)] = count_vehicles(state, a);
  obs.phase = signal.current;
  obs.remaining = remaining_to_review(signal, c);
  return obs;
}

struct RewardSpec {
  double gain = 1.0;
  double d = 0.2;
};

inline void validate(const RewardSpec& r) {
  if (!(r.gain > 0.0)) throw std::invalid_argument("reward gain must be positive");
  if (r.d < 0.0) throw std::invalid_argument("reward penalty d must be non-negative");
}

// Sum of current waiting times over every vehicle still approaching the stop line.
inline double total_waiting_time(const SimState& state) {
  double total = 0.0;
  for (const auto& v : state.vehicles)
    if (state.upstream(v)) total += v.waiting_time;
  return total;
}

inline double real_waiting_time(const SimState& state) {
  double total = 0.0;
  for (const auto& v : state.vehicles)
    if (state.upstream(v) && !v.is_sybil()) total += v.waiting_time;
  return total;
}

struct HaltCounts {
  int halted = 0;
  int moving = 0;
};

inline HaltCounts halt_counts(const SimState& state) {
  HaltCounts c;
  for (const auto& v : state.vehicles) {
    if (!state.upstream(v)) continue;
    if (v.speed <= state.config.halt_speed)
      ++c.halted;
    else
      ++c.moving;
  }
  return c;
}

// gain * total waiting - d * action index
inline double attack_reward(const SimState& state, ActionMode a, const RewardSpec& spec) {
  return spec.gain * total_waiting_time(state) - spec.d * a.index();
}

inline double baseline_reward(int halted, int moving, int n_injected, double d) {
  return static_cast<double>(halted) - static_cast<double>(moving) - d * n_injected;
}

// halted - moving - d * injected vehicles
inline double baseline_reward(const SimState& state, int n_injected, double d) {
  if (n_injected < 0 || n_injected > 2) throw std::invalid_argument("baseline_reward: n_injected must be 0..2");
  const auto c = halt_counts(state);
  return baseline_reward(c.halted, c.moving, n_injected, d);
}

struct Transition {
  ObservationVector s{};
  int action = 0;
  double reward = 0.0;
  ObservationVector s_next{};
  bool terminal = false;
};

// Fixed-capacity FIFO; index 0 is the oldest retained transition.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 5000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
    data_.reserve(capacity);
  }

  void push(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push_back(t);
    } else {
      data_[head_] = t;
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const noexcept { return data_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const Transition& operator[](std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  template <typename Rng>
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    if (n > data_.size()) throw std::invalid_argument("ReplayBuffer: sample larger than buffer");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &data_[pick(rng)];
    return out;
  }

  void clear() {
    data_.clear();
    head_ = 0;
  }

  // Storage order and write head, for checkpointing.
  const std::vector<Transition>& storage() const noexcept { return data_; }
  std::size_t head() const noexcept { return head_; }
  void restore(std::vector<Transition> data, std::size_t head) {
    if (data.size() > capacity_ || (head != 0 && head >= data.size()))
      throw std::invalid_argument("ReplayBuffer: inconsistent checkpoint");
    data_ = std::move(data);
    data_.reserve(capacity_);
    head_ = head;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

struct HyperParams {
  double gamma = 0.85;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t warmup = 500;
  std::size_t replay_capacity = 5000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 20;
  int episodes = 100;
  int steps_per_episode = 1000;
  // Copy online weights into a target network every N gradient steps; 0 disables it.
  int target_sync = 0;
  double count_cap = 50.0;
};

inline void validate(const HyperParams& hp) {
  if (hp.gamma < 0.0 || hp.gamma > 1.0) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (!(hp.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (hp.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (hp.replay_capacity < hp.batch_size) throw std::invalid_argument("replay_capacity below batch_size");
  auto in01 = [](double e) { return e >= 0.0 && e <= 1.0; };
  if (!in01(hp.epsilon_start) || !in01(hp.epsilon_end)) throw std::invalid_argument("epsilon must lie in [0, 1]");
  if (hp.epsilon_decay_episodes < 1) throw std::invalid_argument("epsilon_decay_episodes must be >= 1");
  if (hp.episodes < 1 || hp.steps_per_episode < 1) throw std::invalid_argument("episode/step counts must be >= 1");
  if (hp.target_sync < 0) throw std::invalid_argument("target_sync must be >= 0");
  if (!(hp.count_cap > 0.0)) throw std::invalid_argument("count_cap must be positive");
}

// Geometric decay from start (episode 0) to end (episode decay_episodes - 1),
// held constant within an episode.
inline double epsilon_for_episode(int episode, const HyperParams& hp) {
  if (episode >= hp.epsilon_decay_episodes - 1 || hp.epsilon_decay_episodes == 1) return hp.epsilon_end;
  if (hp.epsilon_start <= 0.0 || hp.epsilon_end <= 0.0) {
    const double f = static_cast<double>(episode) / (hp.epsilon_decay_episodes - 1);
    return hp.epsilon_start + f * (hp.epsilon_end - hp.epsilon_start);
  }
  const double f = static_cast<double>(episode) / (hp.epsilon_decay_episodes - 1);
  return hp.epsilon_start * std::pow(hp.epsilon_end / hp.epsilon_start, f);
}

inline int argmax_lowest(std::span<const double> q) {
  if (q.empty()) throw std::invalid_argument("argmax of empty vector");
  int best = 0;
  for (std::size_t i = 1; i < q.size(); ++i)
    if (q[i] > q[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

template <typename Rng>
int select_action(std::span<const double> q, double epsilon, Rng& rng) {
  if (q.empty()) throw std::invalid_argument("select_action: empty Q vector");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(q.size()) - 1);
    return pick(rng);
  }
  return argmax_lowest(q);
}

struct TrainWorkspace {
  ForwardCache cache;
  ForwardCache next_cache;
  MlpParams grads;
  std::vector<double> upstream;
  std::vector<double> pred;
  std::vector<double> target;
};

// One bootstrapped Q-learning update over a batch:
//   y = r + gamma * max_a' Q(s', a')   (y = r on the final step of an episode)
// Q(s, a) is regressed toward y under MAE, followed by one Adam step.
// Returns the batch loss.
inline double train_step(MlpParams& params, AdamState& adam, std::span<const Transition* const> batch,
                         const HyperParams& hp, const MlpParams* target_net, TrainWorkspace& ws) {
  if (batch.empty()) return 0.0;
  const MlpParams& bootstrap = target_net != nullptr ? *target_net : params;
  ws.pred.resize(batch.size());
  ws.target.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    double y = t.reward;
    if (!t.terminal && hp.gamma > 0.0) {
      forward(bootstrap, t.s_next, ws.next_cache);
      const auto& q_next = ws.next_cache.act.back();
      y += hp.gamma * *std::max_element(q_next.begin(), q_next.end());
    }
    ws.target[i] = y;
  }
  if (!ws.grads.same_shape(params)) ws.grads = params.zeros_like();
  for (auto& l : ws.grads.layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  // First pass fills predictions so the MAE gradient can be formed over the batch.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward(params, batch[i]->s, ws.cache);
    ws.pred[i] = ws.cache.act.back()[static_cast<std::size_t>(batch[i]->action)];
  }
  const auto mae = mae_loss(ws.pred, ws.target);
  ws.upstream.assign(params.output_dim(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (mae.grad[i] == 0.0) continue;
    forward(params, batch[i]->s, ws.cache);
    const auto a = static_cast<std::size_t>(batch[i]->action);
    ws.upstream[a] = mae.grad[i];
    backward_accumulate(params, ws.cache, ws.upstream, ws.grads);
    ws.upstream[a] = 0.0;
  }
  adam_step(params, ws.grads, adam);
  return mae.loss;
}

inline double train_step(MlpParams& params, AdamState& adam, std::span<const Transition* const> batch,
                         const HyperParams& hp, const MlpParams* target_net = nullptr) {
  TrainWorkspace ws;
  return train_step(params, adam, batch, hp, target_net, ws);
}

class DqnAgent {
 public:
  DqnAgent(int action_count, const HyperParams& hp, std::uint64_t seed)
      : hp_(hp),
        action_count_(action_count),
        params_(make_q_network(kObservationSize, static_cast<std::size_t>(action_count), seed)),
        adam_(params_, hp.learning_rate),
        replay_(hp.replay_capacity),
        rng_(hash_combine(seed, 0xA77AC4ULL)) {
    validate(hp);
    if (action_count < 1 || action_count > ActionMode::kCount)
      throw std::invalid_argument("DqnAgent: action_count must be 1..11");
    if (hp_.target_sync > 0) target_ = params_;
  }

  ActionMode act(const ObservationVector& x, double epsilon) {
    forward(params_, x, act_cache_);
    return ActionMode(select_action(std::span<const double>(act_cache_.act.back()), epsilon, rng_));
  }

  std::vector<double> q_values(const ObservationVector& x) const { return forward(params_, x); }

  void remember(const Transition& t) { replay_.push(t); }

  // Trains once the buffer holds max(warmup, batch) transitions; before that it is a no-op.
  std::optional<double> learn() {
    if (replay_.size() < std::max(hp_.warmup, hp_.batch_size)) return std::nullopt;
    const auto batch = replay_.sample(hp_.batch_size, rng_);
    const double loss = train_step(params_, adam_, batch, hp_, target_ ? &*target_ : nullptr, ws_);
    ++updates_;
    if (hp_.target_sync > 0 && updates_ % hp_.target_sync == 0) target_ = params_;
    return loss;
  }

  int action_count() const noexcept { return action_count_; }
  const HyperParams& hyper_params() const noexcept { return hp_; }
  MlpParams& params() noexcept { return params_; }
  const MlpParams& params() const noexcept { return params_; }
  AdamState& adam() noexcept { return adam_; }
  const AdamState& adam() const noexcept { return adam_; }
  ReplayBuffer& replay() noexcept { return replay_; }
  const ReplayBuffer& replay() const noexcept { return replay_; }
  std::mt19937_64& rng() noexcept { return rng_; }
  std::int64_t updates() const noexcept { return updates_; }
  void set_updates(std::int64_t n) noexcept { updates_ = n; }
  std::optional<MlpParams>& target() noexcept { return target_; }

 private:
  HyperParams hp_;
  int action_count_;
  MlpParams params_;
  AdamState adam_;
  ReplayBuffer replay_;
  std::mt19937_64 rng_;
  std::optional<MlpParams> target_;
  std::int64_t updates_ = 0;
  ForwardCache act_cache_;
  TrainWorkspace ws_;
};

enum class RewardKind { Attack, Baseline };

struct EnvironmentConfig {
  SimConfig sim;
  ControllerConfig controller;
  RemovalPolicy removal;
  RewardSpec reward;
  RewardKind reward_kind = RewardKind::Attack;
  // When set, a traffic-insensitive cycle replaces the adaptive controller.
  std::optional<std::array<double, kPhaseCount>> fixed_cycle;
};

struct StepOutcome {
  int action = 0;
  int injected = 0;  // vehicles the action asked for
  int skipped = 0;
  int removed = 0;
  double reward = 0.0;
  double total_waiting = 0.0;
  double real_waiting = 0.0;
  int halted = 0;
  int moving = 0;
  Phase phase = Phase::EWThrough;
  bool reviewed = false;
};

struct MovementSample {
  std::array<double, kMovementCount> waiting{};
  std::array<double, kMovementCount> accumulated{};
};

inline MovementSample movement_sample(const SimState& state) {
  MovementSample s;
  for (const auto& v : state.vehicles) {
    if (!state.upstream(v)) continue;
    s.waiting[index(v.movement)] += v.waiting_time;
    s.accumulated[index(v.movement)] += accumulated_waiting(v);
  }
  return s;
}

// Intersection plus controller plus attack surface, stepped one action at a time.
class Environment {
 public:
  Environment(EnvironmentConfig config, const DemandSchedule& schedule)
      : config_(std::move(config)), schedule_(&schedule) {
    validate(config_.controller);
    validate(config_.removal);
    validate(config_.reward);
    reset();
  }

  void reset() {
    state_ = build_network(config_.sim);
    signal_ = initial_signal();
    if (config_.fixed_cycle) fixed_.emplace(*config_.fixed_cycle, config_.controller.yellow);
  }

  SignalState signal() const { return fixed_ ? fixed_->state() : signal_; }
  LightArray current_lights() const { return lights(signal()); }

  Observation observation() const { return observe(state_, signal(), config_.controller); }
  ObservationVector observation_vector(double count_cap) const {
    return observation().normalized(count_cap, config_.controller.review_interval);
  }

  StepOutcome advance(ActionMode action, CalibrationTrace* trace = nullptr) {
    StepOutcome out;
    out.action = action.index();
    spawn_real_traffic(state_, *schedule_);
    const auto inj = inject(action, state_);
    out.injected = injection_size(action);
    out.skipped = inj.skipped;
    const LightArray in_force = current_lights();
    step(state_, in_force);
    if (trace != nullptr) record_calibration(state_, in_force, *trace);
    out.removed = apply_removals(state_, config_.removal);
    removed_total_ += out.removed;
    if (fixed_) {
      fixed_->tick(config_.sim.dt);
    } else {
      out.reviewed = tick(signal_, state_, config_.controller, config_.sim.dt).reviewed;
    }
    out.phase = signal().current;
    out.total_waiting = total_waiting_time(state_);
    out.real_waiting = real_waiting_time(state_);
    const auto hc = halt_counts(state_);
    out.halted = hc.halted;
    out.moving = hc.moving;
    out.reward = config_.reward_kind == RewardKind::Attack
                     ? config_.reward.gain * out.total_waiting - config_.reward.d * action.index()
                     : baseline_reward(hc.halted, hc.moving, out.injected, config_.reward.d);
    return out;
  }

  const SimState& state() const noexcept { return state_; }
  SimState& state() noexcept { return state_; }
  const EnvironmentConfig& config() const noexcept { return config_; }
  std::int64_t removed_total() const noexcept { return removed_total_; }

 private:
  EnvironmentConfig config_;
  const DemandSchedule* schedule_;
  SimState state_;
  SignalState signal_;
  std::optional<FixedTimeController> fixed_;
  std::int64_t removed_total_ = 0;
};

struct StepRecord {
  int step = 0;
  double epsilon = 0.0;
  StepOutcome outcome;
};

struct EpisodeMetrics {
  int episode = 0;
  double total_waiting_time = 0.0;  // sum over steps of the per-step total
  double real_waiting_time = 0.0;
  std::int64_t vehicles_injected = 0;
  std::int64_t skipped_injections = 0;
  std::int64_t removals = 0;
  std::int64_t sybils_exited = 0;
  std::int64_t sybils_present = 0;
  double mean_reward = 0.0;
  double epsilon_end = 0.0;
  std::vector<StepRecord> steps;
  std::vector<MovementSample> series;
  MovementDelay delay;  // per-movement stopped time of real vehicles
};

struct EpisodeOptions {
  int steps = 1000;
  double epsilon = 0.0;
  bool train = true;
  bool record_series = false;
  CalibrationTrace* trace = nullptr;
};

// Stopped time per real vehicle, counting both vehicles that crossed the stop
// line and those still approaching at the end.
inline MovementDelay movement_delay(const SimState& state) {
  MovementDelay d = state.served;
  for (const auto& v : state.vehicles) {
    if (v.is_sybil() || !state.upstream(v)) continue;
    d.wait_sum[index(v.movement)] += v.trip_waiting;
    ++d.vehicles[index(v.movement)];
  }
  return d;
}

// Drives one episode with an arbitrary policy. `on_transition` sees every
// transition after it is formed (the agent stores and trains there).
template <typename Policy, typename OnTransition>
EpisodeMetrics run_loop(Environment& env, int episode, const EpisodeOptions& opt, double count_cap,
                        Policy&& policy, OnTransition&& on_transition) {
  env.reset();
  EpisodeMetrics m;
  m.episode = episode;
  m.epsilon_end = opt.epsilon;
  m.steps.reserve(static_cast<std::size_t>(opt.steps));
  if (opt.record_series) m.series.reserve(static_cast<std::size_t>(opt.steps));
  double reward_sum = 0.0;
  ObservationVector x = env.observation_vector(count_cap);
  for (int t = 0; t < opt.steps; ++t) {
    const ActionMode a = policy(x);
    const StepOutcome out = env.advance(a, opt.trace);
    const ObservationVector x_next = env.observation_vector(count_cap);
    on_transition(Transition{x, a.index(), out.reward, x_next, t + 1 == opt.steps});
    m.steps.push_back({t, opt.epsilon, out});
    if (opt.record_series) m.series.push_back(movement_sample(env.state()));
    m.total_waiting_time += out.total_waiting;
    m.real_waiting_time += out.real_waiting;
    m.vehicles_injected += out.injected;
    m.skipped_injections += out.skipped;
    m.removals += out.removed;
    reward_sum += out.reward;
    x = x_next;
  }
  m.mean_reward = opt.steps > 0 ? reward_sum / opt.steps : 0.0;
  m.sybils_exited = env.state().sybils_exited;
  for (const auto& v : env.state().vehicles) m.sybils_present += v.is_sybil() ? 1 : 0;
  m.delay = movement_delay(env.state());
  return m;
}

// observe -> act -> inject/step/remove/tick -> reward -> store -> train.
inline EpisodeMetrics run_episode(DqnAgent& agent, Environment& env, int episode, const EpisodeOptions& opt) {
  const double cap = agent.hyper_params().count_cap;
  return run_loop(
      env, episode, opt, cap, [&](const ObservationVector& x) { return agent.act(x, opt.epsilon); },
      [&](const Transition& t) {
        if (!opt.train) return;
        agent.remember(t);
        agent.learn();
      });
}

// Same loop with the baseline's constraints enforced: actions 0..6, halt-count
// reward and no sybil removal.
inline EpisodeMetrics run_baseline(DqnAgent& agent, Environment& env, int episode, const EpisodeOptions& opt) {
  if (agent.action_count() != ActionMode::kBaselineCount)
    throw std::invalid_argument("run_baseline: agent must have 7 actions");
  if (env.config().removal.enabled || env.config().reward_kind != RewardKind::Baseline)
    throw std::invalid_argument("run_baseline: environment must use baseline reward with removal disabled");
  return run_episode(agent, env, episode, opt);
}

}  // namespace sybilsim
