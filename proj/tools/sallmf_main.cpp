// sallmf command line: train runs, checkpoint evaluation, metric reports,
// reward probes, transcript tooling and plot-data emission.
//
// Exit codes: 0 success, 2 config error, 3 provider error, 4 checkpoint error.

#include "sallmf/config.hpp"
#include "sallmf/envs.hpp"
#include "sallmf/metrics.hpp"
#include "sallmf/orchestrator.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace sallmf;

struct TrainArgs {
  std::string config_path;
  std::optional<std::string> task, mode, provider, record, replay, out_dir, run_id;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<int> budget, desk_scale;
};

config::RunConfig resolve_config(const TrainArgs& args) {
  config::RunConfig cfg =
      args.config_path.empty() ? config::RunConfig{} : config::load_file(args.config_path);
  if (args.task) cfg.task = *args.task;
  if (args.mode) cfg.mode = *args.mode;
  if (args.provider) cfg.provider = *args.provider;
  if (args.record) cfg.record_path = *args.record;
  if (args.replay) cfg.replay_path = *args.replay;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  if (args.run_id) cfg.run_id = *args.run_id;
  if (args.seed) cfg.seed = *args.seed;
  if (args.steps) cfg.total_steps = *args.steps;
  if (args.budget) cfg.max_budget = *args.budget;
  if (args.desk_scale) cfg.desk_scale = *args.desk_scale;
  // Type/shape checks before any work starts.
  (void)envs::make_task(cfg.task);
  (void)feedback::feedback_mode_from_string(cfg.mode);
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& args) {
  config::RunConfig cfg = resolve_config(args);
  auto result = orchestrator::train(cfg);
  std::printf("run %s: %ld steps, %ld episodes, %d sessions, budget %d/%d\n",
              cfg.run_id.c_str(), result.steps, result.episodes, result.sessions,
              result.budget.used_queries, result.budget.max_queries);
  std::printf("final success rate %.3f, mean return %.3f\n", result.final_success_rate,
              result.final_mean_return);
  std::printf("tokens %ld in / %ld out, cost $%.4f\n", result.ledger.prompt_tokens,
              result.ledger.completion_tokens, result.ledger.cost());
  std::printf("metrics: %s\ncheckpoint: %s\n", result.metrics_path.c_str(),
              result.checkpoint_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, int episodes, std::uint64_t seed) {
  auto result = orchestrator::evaluate_checkpoint(checkpoint, episodes, seed);
  std::printf("success_rate %.4f mean_return %.4f over %d episodes\n", result.success_rate,
              result.mean_return, episodes);
  return 0;
}

int cmd_label_accuracy(const std::string& metrics_path) {
  auto stats = metrics::aggregate_sessions(metrics::read_metrics(metrics_path));
  std::printf("sessions %d queries %ld valid %ld\n", stats.sessions, stats.queries, stats.valid);
  std::printf("label_accuracy %.4f (over %d sessions)\n", stats.accuracy_mean,
              stats.accuracy_sessions);
  std::printf("discard_rate %.4f parse_failure_rate %.4f equal_rate %.4f\n", stats.discard_rate,
              stats.parse_failure_rate, stats.equal_rate);
  return 0;
}

int cmd_probe_reward(const std::string& checkpoint, std::uint64_t seed, const std::string& out) {
  auto loaded = orchestrator::load_checkpoint_dir(checkpoint);
  if (!loaded.reward_model) {
    throw approx::CheckpointError("checkpoint: no reward model members in " + checkpoint);
  }
  const envs::TaskSpec task = envs::make_task(loaded.task);

  auto rollout_segment = [&](const std::function<Vec(const State&)>& policy, std::uint64_t s) {
    envs::Environment env(task);
    State state = env.reset(s);
    std::vector<State> states;
    std::vector<double> rewards;
    for (int t = 0; t < task.episode_len; ++t) {
      states.push_back(state);
      auto r = env.step(state, policy(state));
      rewards.push_back(r.privileged_reward);
      state = r.next_state;
    }
    return TrajectorySegment(std::move(states), {}, std::move(rewards), 0, 0, false);
  };

  auto expert_policy = envs::scripted_controller(task);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_policy = [&](const State&) {
    Vec a(task.action_dims);
    for (int i = 0; i < task.action_dims; ++i) a[i] = u(rng);
    return a;
  };

  auto expert_seg = rollout_segment(expert_policy, seed);
  auto subopt_seg = rollout_segment(random_policy, seed + 1);
  auto probe = orchestrator::reward_alignment_probe(*loaded.reward_model, expert_seg, subopt_seg);

  std::ofstream os(out, std::ios::trunc);
  if (!os) throw config::ConfigError("cannot write probe output: " + out);
  os << "step,expert,suboptimal\n";
  for (size_t t = 0; t < probe.expert.size(); ++t) {
    os << t << "," << probe.expert[t] << "," << probe.suboptimal[t] << "\n";
  }
  std::printf("probe written to %s%s\n", out.c_str(),
              probe.degenerate ? " (degenerate: constant traces)" : "");
  return 0;
}

int cmd_transcripts(const std::string& action, const std::string& file) {
  auto records = llmclient::load_transcript(file);
  if (action == "stats") {
    long in_tokens = 0, out_tokens = 0;
    for (const auto& r : records) {
      in_tokens += r.prompt_tokens;
      out_tokens += r.completion_tokens;
    }
    std::printf("records %zu prompt_tokens %ld completion_tokens %ld\n", records.size(),
                in_tokens, out_tokens);
    return 0;
  }
  if (action == "verify") {
    for (const auto& r : records) {
      if (r.digest.size() != 16 ||
          r.digest.find_first_not_of("0123456789abcdef") != std::string::npos) {
        std::fprintf(stderr, "bad digest: %s\n", r.digest.c_str());
        return 2;
      }
    }
    std::printf("ok: %zu records\n", records.size());
    return 0;
  }
  throw config::ConfigError("transcripts: unknown action " + action);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RL from self-augmented LLM feedback: training and tooling"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run the full training loop");
  train->add_option("--config", train_args.config_path, "JSON config file");
  std::string task, mode, provider, record, replay, out_dir, run_id;
  std::uint64_t seed = 0;
  long steps = 0;
  int budget = 0, desk_scale = 0;
  train->add_option("--task", task, "task name")->check(CLI::IsMember(envs::task_names()));
  train->add_option("--mode", mode,
                    "scripted|llm_only|sallm_full|augment_only|no_double_check");
  train->add_option("--provider", provider, "oracle|random|echo|http|replay");
  train->add_option("--record", record, "record transcript to this file");
  train->add_option("--replay", replay, "replay transcript from this file");
  train->add_option("--out-dir", out_dir, "output directory");
  train->add_option("--run-id", run_id, "run identifier");
  auto* seed_opt = train->add_option("--seed", seed, "run seed");
  auto* steps_opt = train->add_option("--steps", steps, "total environment steps");
  auto* budget_opt = train->add_option("--budget", budget, "maximum preference queries");
  auto* desk_opt = train->add_option("--desk-scale", desk_scale,
                                     "divide steps/pretrain/frequency/budget by this factor");

  std::string checkpoint;
  int episodes = 10;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint deterministically");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");

  std::string metrics_path;
  auto* label_acc = app.add_subcommand("label-accuracy", "recompute session statistics");
  label_acc->add_option("--metrics", metrics_path, "metrics.jsonl path")->required();

  std::string probe_checkpoint, probe_out = "probe.csv";
  std::uint64_t probe_seed = 0;
  auto* probe = app.add_subcommand("probe-reward", "emit reward alignment traces");
  probe->add_option("--checkpoint", probe_checkpoint, "checkpoint directory")->required();
  probe->add_option("--seed", probe_seed, "rollout seed");
  probe->add_option("--out", probe_out, "output CSV path");

  std::string tr_action, tr_file;
  auto* transcripts = app.add_subcommand("transcripts", "transcript tooling");
  transcripts->add_option("action", tr_action, "stats|verify")->required();
  transcripts->add_option("--file", tr_file, "transcript file")->required();

  std::string plot_metrics, plot_out = "plots";
  auto* plot = app.add_subcommand("plot-data", "emit per-figure CSV series");
  plot->add_option("--metrics", plot_metrics, "metrics.jsonl path")->required();
  plot->add_option("--out-dir", plot_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (train->parsed()) {
      if (*seed_opt) train_args.seed = seed;
      if (*steps_opt) train_args.steps = steps;
      if (*budget_opt) train_args.budget = budget;
      if (*desk_opt) train_args.desk_scale = desk_scale;
      if (!task.empty()) train_args.task = task;
      if (!mode.empty()) train_args.mode = mode;
      if (!provider.empty()) train_args.provider = provider;
      if (!record.empty()) train_args.record = record;
      if (!replay.empty()) train_args.replay = replay;
      if (!out_dir.empty()) train_args.out_dir = out_dir;
      if (!run_id.empty()) train_args.run_id = run_id;
      return cmd_train(train_args);
    }
    if (eval->parsed()) return cmd_eval(checkpoint, episodes, eval_seed);
    if (label_acc->parsed()) return cmd_label_accuracy(metrics_path);
    if (probe->parsed()) return cmd_probe_reward(probe_checkpoint, probe_seed, probe_out);
    if (transcripts->parsed()) return cmd_transcripts(tr_action, tr_file);
    if (plot->parsed()) {
      auto files = metrics::emit_plot_data(plot_metrics, plot_out);
      for (const auto& f : files) std::printf("%s\n", f.c_str());
      return 0;
    }
  } catch (const approx::CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const llmclient::CredentialError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const llmclient::TransportError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const llmclient::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
