#pragma once

// The three-step training loop: unsupervised pretraining on intrinsic k-NN
// rewards, scheduled feedback sessions with reward training and buffer
// relabeling, and SAC policy learning, with metric capture and checkpoints.

#include "sallmf/agent.hpp"
#include "sallmf/config.hpp"
#include "sallmf/core.hpp"
#include "sallmf/envs.hpp"
#include "sallmf/feedback.hpp"
#include "sallmf/llmclient.hpp"
#include "sallmf/metrics.hpp"
#include "sallmf/reward.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sallmf::orchestrator {

using PolicyFn = std::function<Vec(const State&)>;

// ---------------------------------------------------------------------------
// Deterministic evaluation

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;  // mean privileged episode return
};

inline EvalResult evaluate_policy(const PolicyFn& policy, const envs::TaskSpec& task,
                                  int episodes, std::uint64_t seed) {
  if (episodes <= 0) {
    throw std::invalid_argument("evaluate: episodes must be positive (undefined metric)");
  }
  envs::Environment env(task);
  int successes = 0;
  double return_sum = 0.0;
  for (int e = 0; e < episodes; ++e) {
    State state = env.reset(seed + static_cast<std::uint64_t>(e));
    std::vector<bool> flags;
    flags.reserve(static_cast<std::size_t>(task.episode_len));
    double ep_return = 0.0;
    for (int t = 0; t < task.episode_len; ++t) {
      auto result = env.step(state, policy(state));
      ep_return += result.privileged_reward;
      flags.push_back(result.success);
      state = result.next_state;
    }
    if (envs::episode_success(flags, task)) successes += 1;
    return_sum += ep_return;
  }
  return EvalResult{static_cast<double>(successes) / static_cast<double>(episodes),
                    return_sum / static_cast<double>(episodes)};
}

// ---------------------------------------------------------------------------
// Reward alignment probe: per-step ensemble rewards for an expert and a
// suboptimal segment, min-max normalized over the union of both traces.

struct ProbeResult {
  std::vector<double> expert;
  std::vector<double> suboptimal;
  bool degenerate = false;
};

inline ProbeResult reward_alignment_probe(const reward::RewardEnsemble& ensemble,
                                          const TrajectorySegment& expert_segment,
                                          const TrajectorySegment& suboptimal_segment) {
  auto trace = [&](const TrajectorySegment& seg) {
    Vec r = reward::ensemble_reward_batch(ensemble, reward::states_matrix(seg));
    return std::vector<double>(r.data(), r.data() + r.size());
  };
  ProbeResult out;
  out.expert = trace(expert_segment);
  out.suboptimal = trace(suboptimal_segment);
  double lo = out.expert.front(), hi = out.expert.front();
  for (const auto* v : {&out.expert, &out.suboptimal}) {
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const double range = hi - lo;
  out.degenerate = range < 1e-12;
  const double denom = out.degenerate ? 1.0 : range;
  for (auto* v : {&out.expert, &out.suboptimal}) {
    for (double& x : *v) x = (x - lo) / denom;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: {run_dir}/checkpoints/{step}/{network}.ckpt plus manifest.

inline void save_sac(const std::filesystem::path& dir, const agent::SacNetworks& n) {
  namespace ax = approx;
  std::filesystem::create_directories(dir);
  ax::save_checkpoint(dir / "actor.ckpt", {n.actor_spec, n.actor, n.actor_opt});
  ax::save_checkpoint(dir / "critic1.ckpt", {n.critic_spec, n.critic1, n.critic1_opt});
  ax::save_checkpoint(dir / "critic2.ckpt", {n.critic_spec, n.critic2, n.critic2_opt});
  ax::save_checkpoint(dir / "target1.ckpt", {n.critic_spec, n.target1, std::nullopt});
  ax::save_checkpoint(dir / "target2.ckpt", {n.critic_spec, n.target2, std::nullopt});
  nlohmann::ordered_json j;
  j["log_alpha"] = n.log_alpha;
  j["critic_updates"] = n.critic_updates;
  j["state_dims"] = n.state_dims;
  j["action_dims"] = n.action_dims;
  j["target_entropy"] = n.target_entropy;
  std::ofstream os(dir / "alpha.json", std::ios::trunc);
  os << j.dump(2) << "\n";
}

inline void save_reward(const std::filesystem::path& dir, const reward::RewardEnsemble& e) {
  std::filesystem::create_directories(dir);
  for (int m = 0; m < e.member_count(); ++m) {
    approx::save_checkpoint(dir / ("reward_" + std::to_string(m) + ".ckpt"),
                            {e.spec, e.members[static_cast<std::size_t>(m)],
                             e.opt[static_cast<std::size_t>(m)]});
  }
}

struct LoadedCheckpoint {
  std::string task;
  agent::SacNetworks networks;
  std::optional<reward::RewardEnsemble> reward_model;
};

inline LoadedCheckpoint load_checkpoint_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) {
    throw approx::CheckpointError("checkpoint: missing manifest at " + dir.string());
  }
  nlohmann::json manifest;
  {
    std::ifstream is(dir / "manifest.json");
    is >> manifest;
  }
  LoadedCheckpoint out{manifest.at("task").get<std::string>(), {}, std::nullopt};

  auto actor = approx::load_checkpoint(dir / "actor.ckpt");
  auto critic1 = approx::load_checkpoint(dir / "critic1.ckpt");
  auto critic2 = approx::load_checkpoint(dir / "critic2.ckpt");
  auto target1 = approx::load_checkpoint(dir / "target1.ckpt");
  auto target2 = approx::load_checkpoint(dir / "target2.ckpt");
  nlohmann::json alpha;
  {
    std::ifstream is(dir / "alpha.json");
    is >> alpha;
  }
  agent::SacNetworks& n = out.networks;
  n.actor_spec = actor.spec;
  n.critic_spec = critic1.spec;
  n.actor = std::move(actor.params);
  n.critic1 = std::move(critic1.params);
  n.critic2 = std::move(critic2.params);
  n.target1 = std::move(target1.params);
  n.target2 = std::move(target2.params);
  if (actor.adam) n.actor_opt = *actor.adam;
  if (critic1.adam) n.critic1_opt = *critic1.adam;
  if (critic2.adam) n.critic2_opt = *critic2.adam;
  n.log_alpha = alpha.at("log_alpha").get<double>();
  n.critic_updates = alpha.at("critic_updates").get<std::int64_t>();
  n.state_dims = alpha.at("state_dims").get<int>();
  n.action_dims = alpha.at("action_dims").get<int>();
  n.target_entropy = alpha.at("target_entropy").get<double>();

  int members = 0;
  while (std::filesystem::exists(dir / ("reward_" + std::to_string(members) + ".ckpt"))) {
    members += 1;
  }
  if (members > 0) {
    reward::RewardEnsemble e;
    for (int m = 0; m < members; ++m) {
      auto ckpt = approx::load_checkpoint(dir / ("reward_" + std::to_string(m) + ".ckpt"));
      e.spec = ckpt.spec;
      e.members.push_back(std::move(ckpt.params));
      e.opt.push_back(ckpt.adam.value_or(approx::AdamState::create(ckpt.spec)));
    }
    out.reward_model = std::move(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Provider factory

inline std::shared_ptr<llmclient::Provider> make_provider(const config::RunConfig& cfg,
                                                          const envs::TaskSpec& task) {
  std::shared_ptr<llmclient::Provider> provider;
  if (!cfg.replay_path.empty()) {
    provider = std::make_shared<llmclient::ReplayProvider>(cfg.replay_path);
  } else if (cfg.provider == "oracle") {
    provider = std::make_shared<llmclient::OracleMockProvider>(task, cfg.epsilon, cfg.seed);
  } else if (cfg.provider == "random") {
    provider = std::make_shared<llmclient::RandomVerdictProvider>(cfg.seed);
  } else if (cfg.provider == "echo") {
    provider = std::make_shared<llmclient::EchoProvider>();
  } else if (cfg.provider == "http") {
    llmclient::HttpProviderConfig hc;
    hc.base_url = cfg.base_url;
    hc.model = cfg.model;
    hc.api_key_env = cfg.api_key_env;
    provider = std::make_shared<llmclient::HttpProvider>(hc);
  } else {
    throw config::ConfigError("unknown provider kind: " + cfg.provider);
  }
  if (!cfg.record_path.empty()) {
    auto writer = std::make_shared<llmclient::TranscriptWriter>(cfg.record_path);
    provider = std::make_shared<llmclient::RecordingProvider>(provider, writer);
  }
  return provider;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  long steps = 0;
  long episodes = 0;
  int sessions = 0;
  int reward_training_rounds = 0;
  feedback::FeedbackBudget budget;
  llmclient::CostLedger ledger;
  double final_success_rate = 0.0;
  double final_mean_return = 0.0;
  std::string run_dir;
  std::string metrics_path;
  std::string checkpoint_dir;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

inline TrainResult train(const config::RunConfig& raw_config) {
  const config::RunConfig cfg = raw_config.effective();
  cfg.validate();

  const envs::TaskSpec task = envs::make_task(cfg.task);
  if (task.episode_len < cfg.segment_len) {
    throw config::ConfigError("episode_len must be at least segment_len");
  }
  envs::Environment env(task);
  const int state_dims = task.layout->total_dims;
  const int action_dims = task.action_dims;

  const std::filesystem::path run_dir =
      std::filesystem::path(cfg.out_dir) / cfg.run_id;
  std::filesystem::create_directories(run_dir);
  {
    // Config echo: the pre-scale document reproduces the run when reloaded.
    std::ofstream os(run_dir / "config.json", std::ios::trunc);
    os << config::to_json(raw_config).dump(2) << "\n";
  }
  metrics::MetricsWriter writer((run_dir / "metrics.jsonl").string(), cfg.run_id);

  // Independent deterministic RNG streams.
  std::mt19937_64 action_rng(detail::mix_seed(cfg.seed, 1));
  std::mt19937_64 sac_rng(detail::mix_seed(cfg.seed, 2));
  std::mt19937_64 session_rng(detail::mix_seed(cfg.seed, 3));
  std::mt19937_64 reward_rng(detail::mix_seed(cfg.seed, 4));
  std::mt19937_64 knn_rng(detail::mix_seed(cfg.seed, 5));

  agent::SacConfig sac_cfg = cfg.sac;
  agent::SacNetworks networks =
      agent::SacNetworks::create(state_dims, action_dims, sac_cfg, detail::mix_seed(cfg.seed, 10));
  reward::RewardEnsemble ensemble = reward::RewardEnsemble::create(
      state_dims, detail::mix_seed(cfg.seed, 20), cfg.reward_members, cfg.reward_hidden_layers,
      cfg.reward_hidden_units, cfg.reward_lr);

  const std::size_t capacity = cfg.replay_capacity > 0
                                   ? static_cast<std::size_t>(cfg.replay_capacity)
                                   : static_cast<std::size_t>(cfg.total_steps);
  agent::ReplayBuffer buffer(capacity);

  const feedback::FeedbackMode mode = feedback::feedback_mode_from_string(cfg.mode);
  feedback::FeedbackBudget budget;
  budget.max_queries = cfg.max_budget;
  budget.queries_per_session = cfg.queries_per_session;

  llmclient::CostLedger ledger;
  ledger.price_in_per_1m = cfg.price_in_per_1m;
  ledger.price_out_per_1m = cfg.price_out_per_1m;
  std::shared_ptr<llmclient::Provider> provider_owner;
  std::optional<llmclient::MeteringProvider> metered;
  llmclient::Provider* provider = nullptr;
  if (mode != feedback::FeedbackMode::Scripted) {
    provider_owner = make_provider(cfg, task);
    metered.emplace(*provider_owner, ledger);
    provider = &*metered;
  }

  feedback::SessionOptions session_opts;
  session_opts.segment_len = cfg.segment_len;
  session_opts.recent_episode_window = cfg.recent_episode_window;
  session_opts.judge.model = cfg.model;
  session_opts.judge.judge_temperature = cfg.judge_temperature;
  session_opts.judge.generate_temperature = cfg.generate_temperature;
  session_opts.judge.retain_equal = cfg.retain_equal;
  session_opts.judge.one_shot = cfg.one_shot;
  session_opts.judge.max_in_flight = cfg.max_in_flight;

  reward::PreferenceDataset dataset;
  TrainResult result;
  result.run_dir = run_dir.string();
  result.metrics_path = (run_dir / "metrics.jsonl").string();

  bool reward_trained = false;
  long global_step = 0;
  long episode_idx = 0;
  double last_eval_success = 0.0;
  double last_eval_return = 0.0;

  PolicyFn eval_policy = [&](const State& s) {
    return agent::act(networks, s, agent::ActMode::Deterministic);
  };

  auto knn_candidates = [&]() {
    const std::size_t n = std::min<std::size_t>(buffer.size(), static_cast<std::size_t>(cfg.knn_sample));
    std::vector<Vec> states;
    states.reserve(n);
    std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
    for (std::size_t i = 0; i < n; ++i) states.push_back(buffer.at(pick(knn_rng)).state.values());
    return states;
  };

  while (global_step < cfg.total_steps) {
    State state = env.reset(detail::mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(episode_idx)));
    buffer.begin_episode(episode_idx);
    std::vector<bool> success_flags;
    double episode_return = 0.0;

    for (int t = 0; t < task.episode_len && global_step < cfg.total_steps; ++t) {
      global_step += 1;
      Vec action(action_dims);
      if (global_step <= cfg.random_warmup_steps) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int i = 0; i < action_dims; ++i) action[i] = u(action_rng);
      } else {
        action = agent::act(networks, state, agent::ActMode::Stochastic, &action_rng);
      }
      auto step_result = env.step(state, action);

      double stored = 0.0;
      if (global_step <= cfg.pretrain_steps) {
        const std::size_t have = buffer.size();
        if (static_cast<int>(have) >= cfg.knn_k) {
          stored = agent::intrinsic_reward(step_result.next_state, knn_candidates(), cfg.knn_k);
        }
      } else if (reward_trained) {
        stored = reward::ensemble_reward(
            ensemble, cfg.reward_on_next_state ? step_result.next_state : state);
      }

      buffer.push(agent::Transition{state, action, stored, step_result.next_state,
                                    step_result.terminal, step_result.privileged_reward});
      episode_return += step_result.privileged_reward;
      success_flags.push_back(step_result.success);
      state = step_result.next_state;

      if (global_step > cfg.random_warmup_steps &&
          buffer.size() >= static_cast<std::size_t>(sac_cfg.batch_size)) {
        agent::sac_update(networks, buffer, sac_cfg, sac_rng);
      }

      // Feedback session + reward training + relabel, budget permitting.
      const bool session_due = global_step > cfg.pretrain_steps &&
                               (global_step - cfg.pretrain_steps) % cfg.feedback_frequency == 0;
      if (session_due && !budget.exhausted()) {
        auto report = feedback::run_feedback_session(mode, provider, buffer, dataset, budget,
                                                     task, session_rng, session_opts);
        double session_loss = 0.0;
        if (report.valid + report.augment_accepted > 0) {
          auto curves =
              reward::train(ensemble, dataset, reward_rng, cfg.reward_epochs, cfg.reward_batch_size);
          for (const auto& c : curves) session_loss += c.back();
          session_loss /= static_cast<double>(curves.size());
          buffer.relabel(
              [&](const Mat& states) { return reward::ensemble_reward_batch(ensemble, states); },
              1024, cfg.reward_on_next_state);
          if (cfg.renormalize_rewards) buffer.normalize_rewards();
          reward_trained = true;
          result.reward_training_rounds += 1;
        }
        result.sessions += 1;
        // Oracle-side alignment diagnostic (metrics only): correlation of the
        // relabeled rewards with the privileged rewards across the buffer.
        double alignment = 0.0;
        if (reward_trained) {
          PrivilegedAccess::Scope oracle;
          double ms = 0.0, mp = 0.0;
          const double n_d = static_cast<double>(buffer.size());
          for (std::size_t i = 0; i < buffer.size(); ++i) {
            ms += buffer.at(i).stored_reward;
            mp += buffer.privileged_at(i);
          }
          ms /= n_d;
          mp /= n_d;
          double num = 0.0, vs = 0.0, vp = 0.0;
          for (std::size_t i = 0; i < buffer.size(); ++i) {
            const double a = buffer.at(i).stored_reward - ms;
            const double b = buffer.privileged_at(i) - mp;
            num += a * b;
            vs += a * a;
            vp += b * b;
          }
          if (vs > 0 && vp > 0) alignment = num / std::sqrt(vs * vp);
        }
        writer.session(global_step, result.sessions, report, session_loss, dataset.size(),
                       budget.used_queries, ledger.cost(), alignment);
      }

      if (global_step % cfg.feedback_frequency == 0) {
        auto eval = evaluate_policy(eval_policy, task, cfg.eval_episodes,
                                    detail::mix_seed(cfg.seed, 5000 + static_cast<std::uint64_t>(
                                                                    global_step)));
        last_eval_success = eval.success_rate;
        last_eval_return = eval.mean_return;
        writer.eval(global_step, eval.success_rate, eval.mean_return);
      }
    }

    buffer.end_episode();
    const bool full_episode = static_cast<int>(success_flags.size()) == task.episode_len;
    writer.episode(global_step, episode_idx, episode_return,
                   full_episode ? envs::episode_success(success_flags, task) : false);
    episode_idx += 1;
  }

  // Final evaluation and checkpoints.
  auto final_eval = evaluate_policy(eval_policy, task, cfg.eval_episodes,
                                    detail::mix_seed(cfg.seed, 999999));
  result.final_success_rate = final_eval.success_rate;
  result.final_mean_return = final_eval.mean_return;
  result.steps = global_step;
  result.episodes = episode_idx;
  result.budget = budget;
  result.ledger = ledger;

  const std::filesystem::path ckpt_dir =
      run_dir / "checkpoints" / std::to_string(global_step);
  save_sac(ckpt_dir, networks);
  if (reward_trained) save_reward(ckpt_dir, ensemble);
  {
    nlohmann::ordered_json manifest;
    manifest["task"] = cfg.task;
    manifest["step"] = global_step;
    manifest["state_dims"] = state_dims;
    manifest["action_dims"] = action_dims;
    manifest["buffer_size"] = buffer.size();
    manifest["episodes"] = episode_idx;
    manifest["reward_members"] = reward_trained ? ensemble.member_count() : 0;
    std::ofstream os(ckpt_dir / "manifest.json", std::ios::trunc);
    os << manifest.dump(2) << "\n";
  }
  result.checkpoint_dir = ckpt_dir.string();

  nlohmann::ordered_json final_payload;
  final_payload["episodes"] = episode_idx;
  final_payload["sessions"] = result.sessions;
  final_payload["reward_training_rounds"] = result.reward_training_rounds;
  final_payload["budget_used"] = budget.used_queries;
  final_payload["llm_calls"] = budget.llm_calls;
  final_payload["discarded"] = budget.discarded;
  final_payload["parse_failures"] = budget.parse_failures;
  final_payload["augment_attempts"] = budget.augment_attempts;
  final_payload["augment_accepted"] = budget.augment_accepted;
  final_payload["prompt_tokens"] = ledger.prompt_tokens;
  final_payload["completion_tokens"] = ledger.completion_tokens;
  final_payload["cost"] = ledger.cost();
  final_payload["final_success_rate"] = final_eval.success_rate;
  final_payload["final_mean_return"] = final_eval.mean_return;
  final_payload["dataset_sampled"] = dataset.sampled_count;
  final_payload["dataset_augmented"] = dataset.augmented_count;
  writer.final(global_step, final_payload);
  return result;
}

// Deterministic rollout evaluation of a saved checkpoint.
inline EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint_dir, int episodes,
                                      std::uint64_t seed) {
  auto loaded = load_checkpoint_dir(checkpoint_dir);
  const envs::TaskSpec task = envs::make_task(loaded.task);
  PolicyFn policy = [networks = std::move(loaded.networks)](const State& s) {
    return agent::act(networks, s, agent::ActMode::Deterministic);
  };
  return evaluate_policy(policy, task, episodes, seed);
}

}  // namespace sallmf::orchestrator
