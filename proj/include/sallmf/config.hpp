#pragma once

// Run configuration: one JSON table per module, strict key checking, flag
// overrides applied on leaf fields, and the desk-scale divisor that shrinks
// step counts and budget uniformly.

#include "sallmf/agent.hpp"
#include "sallmf/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace sallmf::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // [run]
  std::string run_id = "run";
  std::string out_dir = "runs";
  std::uint64_t seed = 0;
  int desk_scale = 1;

  // [envs]
  std::string task = "point_reach";

  // [orchestrator]
  long total_steps = 500000;
  long pretrain_steps = 10000;
  long feedback_frequency = 5000;
  int eval_episodes = 10;
  long random_warmup_steps = 1000;

  // [feedback]
  std::string mode = "scripted";
  int queries_per_session = 20;
  int max_budget = 2000;
  bool retain_equal = false;
  bool one_shot = false;
  int recent_episode_window = 30;
  int segment_len = 10;

  // [reward]
  int reward_members = 3;
  int reward_hidden_layers = 3;
  int reward_hidden_units = 256;
  int reward_epochs = 10;
  int reward_batch_size = 512;
  double reward_lr = 3e-4;
  bool renormalize_rewards = false;
  bool reward_on_next_state = false;  // label transitions with r(s') instead of r(s)

  // [agent]
  agent::SacConfig sac;
  int knn_k = 5;
  int knn_sample = 512;
  long replay_capacity = 0;  // 0 means total_steps

  // [provider]
  std::string provider = "oracle";  // oracle | random | echo | http | replay
  std::string base_url;
  std::string model = "gpt-4o-mini-2024-07-18";
  std::string api_key_env = "SALLM_API_KEY";
  double judge_temperature = 0.0;
  double generate_temperature = 0.7;
  double epsilon = 0.0;
  std::string record_path;
  std::string replay_path;
  double price_in_per_1m = 0.15;
  double price_out_per_1m = 0.60;
  int max_in_flight = 1;

  void validate() const {
    if (total_steps < 1 || pretrain_steps < 0 || feedback_frequency < 1 ||
        queries_per_session < 1 || max_budget < 0 || segment_len < 1 || desk_scale < 1) {
      throw ConfigError("config: counts must be positive");
    }
    if (eval_episodes < 1) throw ConfigError("config: eval_episodes must be positive");
  }

  // Applies the desk-scale divisor to steps and budget.
  RunConfig effective() const {
    RunConfig c = *this;
    auto scale = [&](long v) { return std::max<long>(1, v / desk_scale); };
    c.total_steps = scale(total_steps);
    c.pretrain_steps = pretrain_steps / desk_scale;
    c.feedback_frequency = scale(feedback_frequency);
    c.max_budget = static_cast<int>(std::max<long>(0, max_budget / desk_scale));
    c.random_warmup_steps = random_warmup_steps / desk_scale;
    c.desk_scale = 1;
    return c;
  }
};

namespace detail {

class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : name_(std::move(name)) {
    if (j.contains(name_)) {
      if (!j.at(name_).is_object()) throw ConfigError("config: [" + name_ + "] must be a table");
      obj_ = &j.at(name_);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (obj_ == nullptr) return;
    if (obj_->contains(key)) {
      try {
        out = obj_->at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: [" + name_ + "]." + key + " has the wrong type");
      }
      consumed_.insert(key);
    }
  }

  void finish() const {
    if (obj_ == nullptr) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!consumed_.count(it.key())) {
        throw ConfigError("config: unknown key [" + name_ + "]." + it.key());
      }
    }
  }

 private:
  std::string name_;
  const nlohmann::json* obj_ = nullptr;
  std::set<std::string> consumed_;
};

}  // namespace detail

inline RunConfig from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: document must be a JSON object");
  static const std::set<std::string> known_sections = {
      "run", "envs", "orchestrator", "feedback", "reward", "agent", "provider"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known_sections.count(it.key())) {
      throw ConfigError("config: unknown section [" + it.key() + "]");
    }
  }

  RunConfig c;
  {
    detail::Section s(j, "run");
    s.get("run_id", c.run_id);
    s.get("out_dir", c.out_dir);
    s.get("seed", c.seed);
    s.get("desk_scale", c.desk_scale);
    s.finish();
  }
  {
    detail::Section s(j, "envs");
    s.get("task", c.task);
    s.finish();
  }
  {
    detail::Section s(j, "orchestrator");
    s.get("total_steps", c.total_steps);
    s.get("pretrain_steps", c.pretrain_steps);
    s.get("feedback_frequency", c.feedback_frequency);
    s.get("eval_episodes", c.eval_episodes);
    s.get("random_warmup_steps", c.random_warmup_steps);
    s.finish();
  }
  {
    detail::Section s(j, "feedback");
    s.get("mode", c.mode);
    s.get("queries_per_session", c.queries_per_session);
    s.get("max_budget", c.max_budget);
    s.get("retain_equal", c.retain_equal);
    s.get("one_shot", c.one_shot);
    s.get("recent_episode_window", c.recent_episode_window);
    s.get("segment_len", c.segment_len);
    s.finish();
  }
  {
    detail::Section s(j, "reward");
    s.get("members", c.reward_members);
    s.get("hidden_layers", c.reward_hidden_layers);
    s.get("hidden_units", c.reward_hidden_units);
    s.get("epochs", c.reward_epochs);
    s.get("batch_size", c.reward_batch_size);
    s.get("lr", c.reward_lr);
    s.get("renormalize_rewards", c.renormalize_rewards);
    s.get("reward_on_next_state", c.reward_on_next_state);
    s.finish();
  }
  {
    detail::Section s(j, "agent");
    s.get("batch_size", c.sac.batch_size);
    s.get("gamma", c.sac.gamma);
    s.get("tau", c.sac.tau);
    s.get("target_update_freq", c.sac.target_update_freq);
    s.get("lr", c.sac.lr);
    s.get("init_temperature", c.sac.init_temperature);
    s.get("hidden_layers", c.sac.hidden_layers);
    s.get("hidden_units", c.sac.hidden_units);
    s.get("knn_k", c.knn_k);
    s.get("knn_sample", c.knn_sample);
    s.get("replay_capacity", c.replay_capacity);
    s.finish();
  }
  {
    detail::Section s(j, "provider");
    s.get("kind", c.provider);
    s.get("base_url", c.base_url);
    s.get("model", c.model);
    s.get("api_key_env", c.api_key_env);
    s.get("judge_temperature", c.judge_temperature);
    s.get("generate_temperature", c.generate_temperature);
    s.get("epsilon", c.epsilon);
    s.get("record_path", c.record_path);
    s.get("replay_path", c.replay_path);
    s.get("price_in_per_1m", c.price_in_per_1m);
    s.get("price_out_per_1m", c.price_out_per_1m);
    s.get("max_in_flight", c.max_in_flight);
    s.finish();
  }
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["run"] = {{"run_id", c.run_id},
              {"out_dir", c.out_dir},
              {"seed", c.seed},
              {"desk_scale", c.desk_scale}};
  j["envs"] = {{"task", c.task}};
  j["orchestrator"] = {{"total_steps", c.total_steps},
                       {"pretrain_steps", c.pretrain_steps},
                       {"feedback_frequency", c.feedback_frequency},
                       {"eval_episodes", c.eval_episodes},
                       {"random_warmup_steps", c.random_warmup_steps}};
  j["feedback"] = {{"mode", c.mode},
                   {"queries_per_session", c.queries_per_session},
                   {"max_budget", c.max_budget},
                   {"retain_equal", c.retain_equal},
                   {"one_shot", c.one_shot},
                   {"recent_episode_window", c.recent_episode_window},
                   {"segment_len", c.segment_len}};
  j["reward"] = {{"members", c.reward_members},
                 {"hidden_layers", c.reward_hidden_layers},
                 {"hidden_units", c.reward_hidden_units},
                 {"epochs", c.reward_epochs},
                 {"batch_size", c.reward_batch_size},
                 {"lr", c.reward_lr},
                 {"renormalize_rewards", c.renormalize_rewards},
                 {"reward_on_next_state", c.reward_on_next_state}};
  j["agent"] = {{"batch_size", c.sac.batch_size},
                {"gamma", c.sac.gamma},
                {"tau", c.sac.tau},
                {"target_update_freq", c.sac.target_update_freq},
                {"lr", c.sac.lr},
                {"init_temperature", c.sac.init_temperature},
                {"hidden_layers", c.sac.hidden_layers},
                {"hidden_units", c.sac.hidden_units},
                {"knn_k", c.knn_k},
                {"knn_sample", c.knn_sample},
                {"replay_capacity", c.replay_capacity}};
  j["provider"] = {{"kind", c.provider},
                   {"base_url", c.base_url},
                   {"model", c.model},
                   {"api_key_env", c.api_key_env},
                   {"judge_temperature", c.judge_temperature},
                   {"generate_temperature", c.generate_temperature},
                   {"epsilon", c.epsilon},
                   {"record_path", c.record_path},
                   {"replay_path", c.replay_path},
                   {"price_in_per_1m", c.price_in_per_1m},
                   {"price_out_per_1m", c.price_out_per_1m},
                   {"max_in_flight", c.max_in_flight}};
  return j;
}

inline RunConfig load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace sallmf::config
