// Command line front end: noattack, calibrate, train, train-baseline, summarize.

#include <atomic>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "sybilsim/harness.hpp"

namespace {

using namespace sybilsim;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> out;
  std::optional<int> episodes;
  std::optional<int> steps;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Common& c, bool training) {
  cmd->add_option("-c,--config", c.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", c.seed, "override run.seed");
  cmd->add_option("-o,--out", c.out, "output directory (overrides run.output_dir)");
  cmd->add_option("--steps", c.steps, "steps per episode");
  if (training) {
    cmd->add_option("-e,--episodes", c.episodes, "number of episodes");
    cmd->add_option("--seeds", c.seeds, "run one campaign per seed under <out>/seed_<n>")->delimiter(',');
    cmd->add_option("-j,--jobs", c.jobs, "parallel workers for --seeds (default: hardware threads)");
  }
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (c.seed) rc.seed = *c.seed;
  if (c.out) rc.output_dir = *c.out;
  if (c.episodes) rc.agent.episodes = *c.episodes;
  if (c.steps) rc.agent.steps_per_episode = *c.steps;
  rc = normalized(rc);
  validate(rc);
  return rc;
}

int check_outputs(const fs::path& dir, const std::vector<std::string>& names) {
  const auto missing = missing_outputs(dir, names);
  for (const auto& m : missing) std::cerr << "error: missing output " << (dir / m).string() << '\n';
  return missing.empty() ? 0 : 1;
}

int run_train(const Common& common, TrainMode mode, const TrainOptions& topt) {
  const RunConfig base = resolve(common);
  if (common.seeds.empty()) {
    const json s = cmd_train(base, mode, base.output_dir, topt);
    if (s.contains("interrupted_after")) {
      std::cout << "stopped after episode " << s["interrupted_after"] << "; rerun with --resume\n";
      return 2;
    }
    std::cout << s.dump(2) << '\n';
    return check_outputs(base.output_dir, kTrainOutputs);
  }
  // Fan out: each worker owns its directory; nothing is shared.
  std::vector<RunConfig> runs;
  for (auto seed : common.seeds) {
    RunConfig r = base;
    r.seed = seed;
    r.label = base.label + "_seed" + std::to_string(seed);
    r.output_dir = (fs::path(base.output_dir) / ("seed_" + std::to_string(seed))).string();
    runs.push_back(normalized(r));
  }
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t jobs = std::min<std::size_t>(runs.size(), common.jobs > 0 ? common.jobs : hw);
  std::vector<std::string> errors(runs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) {
        try {
          cmd_train(runs[i], mode, runs[i].output_dir, topt);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    });
  for (auto& t : workers) t.join();
  int status = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "error: " << runs[i].label << ": " << errors[i] << '\n';
      status = 1;
      continue;
    }
    const json s = read_json(fs::path(runs[i].output_dir) / "summary.json");
    std::cout << runs[i].label << ": converged " << s["converged_waiting_time"] << ", plateau episode "
              << s["episodes_to_plateau"] << ", most frequent action " << s["most_frequent_action"] << '\n';
    status |= check_outputs(runs[i].output_dir, kTrainOutputs);
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sybil attack testbed for a waiting-time adaptive signal controller"};
  app.require_subcommand(1);

  Common noattack_opts, calibrate_opts, train_opts, baseline_opts;
  TrainOptions topt;
  topt.quiet = false;
  std::string summarize_dir;

  auto* noattack = app.add_subcommand("noattack", "one episode without sybils");
  add_common(noattack, noattack_opts, false);
  auto* calibrate = app.add_subcommand("calibrate", "estimate the sybil removal threshold");
  add_common(calibrate, calibrate_opts, false);
  auto* train = app.add_subcommand("train", "train the attacking agent");
  add_common(train, train_opts, true);
  auto* baseline = app.add_subcommand("train-baseline", "train the halt-count baseline attacker");
  add_common(baseline, baseline_opts, true);
  for (auto* cmd : {train, baseline}) {
    cmd->add_flag("--resume", topt.resume, "continue from checkpoint.json in the output directory");
    cmd->add_option("--stop-after", topt.stop_after, "stop after N episodes (leaves a resumable run)");
    cmd->add_flag("-q,--quiet", topt.quiet, "no per-episode progress");
  }
  auto* summarize = app.add_subcommand("summarize", "rebuild summary.json from a run directory");
  summarize->add_option("dir", summarize_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*noattack) {
      const RunConfig c = resolve(noattack_opts);
      const auto r = cmd_noattack(c, c.output_dir);
      for (auto m : kMovements)
        std::printf("%s  %.3f s over %lld vehicles\n", std::string(to_string(m)).c_str(),
                    r.average_waiting[index(m)], static_cast<long long>(r.metrics.delay.vehicles[index(m)]));
      std::printf("episode total waiting %.1f\n", r.metrics.total_waiting_time);
      return check_outputs(c.output_dir, {"config.txt", "episodes.csv", "steps.csv", "movement_series.csv",
                                          "movement_summary.csv"});
    }
    if (*calibrate) {
      const RunConfig c = resolve(calibrate_opts);
      const auto r = cmd_calibrate(c, c.output_dir);
      std::printf("threshold %.4f m/s^2 (percentile %.3f, %zu samples)\n", r.threshold, r.percentile,
                  r.trace.samples.size());
      return check_outputs(c.output_dir, {"config.txt", "calibration_trace.csv", "calibration_histogram.csv",
                                          "calibration.json"});
    }
    if (*train) return run_train(train_opts, TrainMode::Attack, topt);
    if (*baseline) return run_train(baseline_opts, TrainMode::Baseline, topt);
    if (*summarize) {
      std::cout << export_summary(summarize_dir).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
