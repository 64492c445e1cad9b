#pragma once

// Soft Actor-Critic learner: replay buffer with episode tracking and segment
// extraction, twin critics with EMA targets, learned temperature, k-NN
// intrinsic rewards for unsupervised pretraining, and reward relabeling.
//
// Episodes here only end on the step cap, so critic targets bootstrap through
// terminal transitions (time-limit ends are not true MDP terminals).

#include "sallmf/approx.hpp"
#include "sallmf/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sallmf::agent {

// ---------------------------------------------------------------------------
// Replay buffer

struct Transition {
  State state;
  Vec action;
  double stored_reward;  // reward-model label after any relabel pass
  State next_state;
  bool terminal;
  double privileged_reward;  // oracle/metrics only
};

class ReplayBuffer {
 public:
  struct Episode {
    std::int64_t id = 0;
    std::int64_t global_start = 0;
    int len = 0;
    bool complete = false;
  };

  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("replay capacity must be positive");
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  void begin_episode(std::int64_t episode_id) {
    episodes_.push_back(Episode{episode_id, next_global_, 0, false});
  }

  void end_episode() {
    if (!episodes_.empty()) episodes_.back().complete = true;
  }

  void push(Transition t) {
    if (episodes_.empty()) throw std::logic_error("push before begin_episode");
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[static_cast<std::size_t>(base_global_ % static_cast<std::int64_t>(capacity_))] =
          std::move(t);
      base_global_ += 1;
      // Drop episodes that no longer have all transitions resident.
      while (!episodes_.empty() && episodes_.front().global_start < base_global_) {
        episodes_.erase(episodes_.begin());
      }
    }
    episodes_.back().len += 1;
    next_global_ += 1;
  }

  const Transition& at(std::size_t i) const {  // i in [0, size)
    const std::int64_t global = base_global_ + static_cast<std::int64_t>(i);
    return data_[static_cast<std::size_t>(global % static_cast<std::int64_t>(capacity_))];
  }

  Transition& at(std::size_t i) {
    const std::int64_t global = base_global_ + static_cast<std::int64_t>(i);
    return data_[static_cast<std::size_t>(global % static_cast<std::int64_t>(capacity_))];
  }

  double privileged_at(std::size_t i) const {
    PrivilegedAccess::require();
    return at(i).privileged_reward;
  }

  std::vector<Episode> recent_complete_episodes(int max_count) const {
    std::vector<Episode> out;
    for (auto it = episodes_.rbegin(); it != episodes_.rend(); ++it) {
      if (!it->complete) continue;
      if (it->len < 1) continue;
      out.push_back(*it);
      if (static_cast<int>(out.size()) >= max_count) break;
    }
    return out;
  }

  // Segment of H consecutive states (with their transition rewards) starting
  // at `offset` within the episode.
  TrajectorySegment make_segment(const Episode& ep, int offset, int H) const {
    if (offset < 0 || offset + H > ep.len) {
      throw std::invalid_argument("segment window exceeds episode");
    }
    std::vector<State> states;
    std::vector<Vec> actions;
    std::vector<double> privileged;
    states.reserve(static_cast<std::size_t>(H));
    for (int t = 0; t < H; ++t) {
      const std::size_t idx =
          static_cast<std::size_t>(ep.global_start - base_global_ + offset + t);
      const Transition& tr = at(idx);
      states.push_back(tr.state);
      actions.push_back(tr.action);
      privileged.push_back(tr.privileged_reward);
    }
    return TrajectorySegment(std::move(states), std::move(actions), std::move(privileged), ep.id,
                             offset, false);
  }

  // Uniform segment starts from the most recent `window` complete episodes;
  // the two segments always come from distinct episodes.
  std::optional<std::pair<TrajectorySegment, TrajectorySegment>> sample_segment_pair(
      std::mt19937_64& rng, int H, int window = 30) const {
    auto pool = recent_complete_episodes(window);
    std::erase_if(pool, [&](const Episode& e) { return e.len < H; });
    if (pool.size() < 2) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const std::size_t e0 = pick(rng);
    std::size_t e1 = pick(rng);
    while (e1 == e0) e1 = pick(rng);
    auto draw = [&](const Episode& ep) {
      std::uniform_int_distribution<int> start(0, ep.len - H);
      return make_segment(ep, start(rng), H);
    };
    return std::make_pair(draw(pool[e0]), draw(pool[e1]));
  }

  // Overwrites every stored reward with batch_reward applied to the
  // transition's state (or next state when on_next_state is set). States,
  // actions and privileged rewards are untouched.
  std::size_t relabel(const std::function<Vec(const Mat&)>& batch_reward,
                      std::size_t chunk = 1024, bool on_next_state = false) {
    if (size() == 0) return 0;
    const int dims = at(0).state.dims();
    for (std::size_t begin = 0; begin < size(); begin += chunk) {
      const std::size_t end = std::min(size(), begin + chunk);
      Mat states(static_cast<int>(end - begin), dims);
      for (std::size_t i = begin; i < end; ++i) {
        const Transition& t = at(i);
        states.row(static_cast<int>(i - begin)) =
            on_next_state ? t.next_state.values() : t.state.values();
      }
      Vec rewards = batch_reward(states);
      for (std::size_t i = begin; i < end; ++i) {
        at(i).stored_reward = rewards[static_cast<int>(i - begin)];
      }
    }
    return size();
  }

  // Optional PEBBLE-style normalization after relabeling (off by default).
  void normalize_rewards() {
    if (size() == 0) return;
    double mean = 0.0;
    for (std::size_t i = 0; i < size(); ++i) mean += at(i).stored_reward;
    mean /= static_cast<double>(size());
    double var = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      const double d = at(i).stored_reward - mean;
      var += d * d;
    }
    const double stddev = std::sqrt(var / static_cast<double>(size()));
    if (stddev < 1e-12) return;
    for (std::size_t i = 0; i < size(); ++i) {
      at(i).stored_reward = (at(i).stored_reward - mean) / stddev;
    }
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::int64_t base_global_ = 0;  // global index of the oldest resident transition
  std::int64_t next_global_ = 0;
  std::vector<Episode> episodes_;
};

// ---------------------------------------------------------------------------
// Intrinsic reward: log distance to the k-th nearest neighbor.

inline constexpr double kMinKnnDistance = 1e-6;

inline double intrinsic_reward(const Vec& state, const std::vector<Vec>& buffer_sample, int k) {
  if (k < 1 || static_cast<int>(buffer_sample.size()) < k) {
    throw std::invalid_argument("intrinsic_reward requires sample size >= k >= 1");
  }
  std::vector<double> dists;
  dists.reserve(buffer_sample.size());
  for (const auto& s : buffer_sample) dists.push_back((state - s).norm());
  std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
  return std::log(std::max(dists[static_cast<std::size_t>(k - 1)], kMinKnnDistance));
}

inline double intrinsic_reward(const State& state, const std::vector<Vec>& buffer_sample, int k) {
  return intrinsic_reward(state.values(), buffer_sample, k);
}

// ---------------------------------------------------------------------------
// SAC networks

enum class ActMode { Stochastic, Deterministic };

struct SacConfig {
  int batch_size = 512;
  double gamma = 0.99;
  double tau = 0.005;
  int target_update_freq = 2;
  double lr = 3e-4;
  double init_temperature = 0.1;
  int hidden_layers = 3;
  int hidden_units = 256;
};

inline constexpr double kLogStdLow = -5.0;
inline constexpr double kLogStdHigh = 2.0;
inline constexpr double kTanhEps = 1e-6;
// tanh rounds to exactly 1.0 once |u| > ~19; keep actions strictly inside.
inline constexpr double kActionBound = 1.0 - 1e-12;

struct SacNetworks {
  approx::MLPSpec actor_spec;
  approx::MLPSpec critic_spec;
  approx::Parameters actor;
  approx::Parameters critic1, critic2;
  approx::Parameters target1, target2;
  approx::AdamState actor_opt, critic1_opt, critic2_opt;
  double log_alpha = 0.0;
  approx::ScalarAdam alpha_opt;
  double target_entropy = 0.0;
  std::int64_t critic_updates = 0;
  int state_dims = 0;
  int action_dims = 0;

  double alpha() const { return std::exp(log_alpha); }

  static SacNetworks create(int state_dims, int action_dims, const SacConfig& cfg,
                            std::uint64_t seed) {
    SacNetworks n;
    n.state_dims = state_dims;
    n.action_dims = action_dims;
    n.actor_spec = approx::MLPSpec{state_dims, 2 * action_dims, cfg.hidden_layers,
                                   cfg.hidden_units, approx::Activation::LeakyReLU,
                                   approx::OutputSquash::None};
    n.critic_spec = approx::MLPSpec{state_dims + action_dims, 1, cfg.hidden_layers,
                                    cfg.hidden_units, approx::Activation::LeakyReLU,
                                    approx::OutputSquash::None};
    n.actor = approx::he_init(n.actor_spec, seed);
    n.critic1 = approx::he_init(n.critic_spec, seed + 1);
    n.critic2 = approx::he_init(n.critic_spec, seed + 2);
    n.target1 = n.critic1;
    n.target2 = n.critic2;
    n.actor_opt = approx::AdamState::create(n.actor_spec, cfg.lr);
    n.critic1_opt = approx::AdamState::create(n.critic_spec, cfg.lr);
    n.critic2_opt = approx::AdamState::create(n.critic_spec, cfg.lr);
    n.log_alpha = std::log(cfg.init_temperature);
    n.alpha_opt.lr = cfg.lr;
    n.target_entropy = -static_cast<double>(action_dims);
    return n;
  }
};

namespace detail {

inline double squash_log_std(double x) {
  return kLogStdLow + 0.5 * (kLogStdHigh - kLogStdLow) * (std::tanh(x) + 1.0);
}

inline double squash_log_std_grad(double x) {
  const double t = std::tanh(x);
  return 0.5 * (kLogStdHigh - kLogStdLow) * (1.0 - t * t);
}

struct PolicySample {
  Mat actions;   // tanh-squashed, batch x action_dims
  Mat noise;     // the xi draws
  Mat mean;      // raw mean head
  Mat raw_std;   // raw log-std head (pre-squash)
  Vec log_prob;  // per row
};

// Reparameterized sample through the actor. When `noise` is null the mean is
// used (deterministic mode yields tanh(mean)).
inline PolicySample sample_policy(const SacNetworks& n, const approx::ForwardTrace& trace,
                                  std::mt19937_64* rng) {
  const int B = static_cast<int>(trace.output.rows());
  const int ad = n.action_dims;
  PolicySample out;
  out.mean = trace.output.leftCols(ad);
  out.raw_std = trace.output.rightCols(ad);
  out.noise = Mat::Zero(B, ad);
  if (rng != nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < ad; ++j) out.noise(i, j) = normal(*rng);
    }
  }
  out.actions.resize(B, ad);
  out.log_prob = Vec::Zero(B);
  constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)
  for (int i = 0; i < B; ++i) {
    double lp = 0.0;
    for (int j = 0; j < ad; ++j) {
      const double log_std = squash_log_std(out.raw_std(i, j));
      const double std = std::exp(log_std);
      const double u = out.mean(i, j) + std * out.noise(i, j);
      const double a = std::clamp(std::tanh(u), -kActionBound, kActionBound);
      out.actions(i, j) = a;
      lp += -0.5 * out.noise(i, j) * out.noise(i, j) - log_std - kHalfLog2Pi -
            std::log(1.0 - a * a + kTanhEps);
    }
    out.log_prob[i] = lp;
  }
  return out;
}

}  // namespace detail

inline Vec act(const SacNetworks& networks, const State& state, ActMode mode,
               std::mt19937_64* rng = nullptr) {
  if (state.dims() != networks.state_dims) {
    throw std::invalid_argument("act: state does not match actor input");
  }
  Mat row(1, state.dims());
  row.row(0) = state.values();
  auto trace = approx::forward_trace(networks.actor, networks.actor_spec, row);
  if (!trace.output.allFinite()) throw std::runtime_error("act: non-finite actor output");
  if (mode == ActMode::Deterministic) {
    return trace.output.leftCols(networks.action_dims)
        .row(0)
        .array()
        .tanh()
        .min(kActionBound)
        .max(-kActionBound)
        .matrix()
        .transpose();
  }
  if (rng == nullptr) throw std::invalid_argument("stochastic act needs an rng");
  auto sample = detail::sample_policy(networks, trace, rng);
  return sample.actions.row(0).transpose();
}

// ---------------------------------------------------------------------------
// One SAC update: a gradient step on both critics, the actor and the
// temperature; the EMA target sync runs every `target_update_freq`-th critic
// update.

struct SacLosses {
  double critic1 = 0.0;
  double critic2 = 0.0;
  double actor = 0.0;
  double alpha = 0.0;
  double alpha_value = 0.0;
  double mean_q = 0.0;
  double mean_log_prob = 0.0;
};

struct SacBatch {
  Mat states;       // B x sd
  Mat actions;      // B x ad
  Vec rewards;      // B
  Mat next_states;  // B x sd
};

inline SacBatch assemble_batch(const ReplayBuffer& buffer, std::mt19937_64& rng, int batch_size,
                               int state_dims, int action_dims) {
  SacBatch b;
  b.states.resize(batch_size, state_dims);
  b.actions.resize(batch_size, action_dims);
  b.rewards.resize(batch_size);
  b.next_states.resize(batch_size, state_dims);
  std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
  for (int i = 0; i < batch_size; ++i) {
    const Transition& t = buffer.at(pick(rng));
    b.states.row(i) = t.state.values();
    b.actions.row(i) = t.action;
    b.rewards[i] = t.stored_reward;
    b.next_states.row(i) = t.next_state.values();
  }
  return b;
}

// Critic targets: y = r + gamma * (min(Q1', Q2')(s', a') - alpha * log pi(a'|s')).
inline Vec critic_targets(const SacNetworks& n, const SacBatch& batch, double gamma,
                          std::mt19937_64& rng) {
  const int B = static_cast<int>(batch.states.rows());
  auto trace = approx::forward_trace(n.actor, n.actor_spec, batch.next_states);
  auto next = detail::sample_policy(n, trace, &rng);
  Mat sa(B, n.state_dims + n.action_dims);
  sa.leftCols(n.state_dims) = batch.next_states;
  sa.rightCols(n.action_dims) = next.actions;
  Vec q1 = approx::forward(n.target1, n.critic_spec, sa).col(0);
  Vec q2 = approx::forward(n.target2, n.critic_spec, sa).col(0);
  const double alpha = n.alpha();
  Vec y(B);
  for (int i = 0; i < B; ++i) {
    y[i] = batch.rewards[i] + gamma * (std::min(q1[i], q2[i]) - alpha * next.log_prob[i]);
  }
  return y;
}

struct CriticGrads {
  double loss1 = 0.0, loss2 = 0.0;
  approx::Parameters grads1, grads2;
};

// MSE loss and gradients for both critics against fixed targets.
inline CriticGrads critic_loss_and_grads(const SacNetworks& n, const SacBatch& batch,
                                         const Vec& targets) {
  const int B = static_cast<int>(batch.states.rows());
  Mat sa(B, n.state_dims + n.action_dims);
  sa.leftCols(n.state_dims) = batch.states;
  sa.rightCols(n.action_dims) = batch.actions;
  CriticGrads out;
  auto one = [&](const approx::Parameters& params, double& loss, approx::Parameters& grads) {
    auto trace = approx::forward_trace(params, n.critic_spec, sa);
    Vec q = trace.output.col(0);
    Vec err = q - targets;
    loss = err.squaredNorm() / static_cast<double>(B);
    Mat upstream = (2.0 / static_cast<double>(B)) * err;
    auto back = approx::backward_from_trace(params, n.critic_spec, trace,
                                            Mat(upstream));
    grads = std::move(back.grads);
  };
  one(n.critic1, out.loss1, out.grads1);
  one(n.critic2, out.loss2, out.grads2);
  return out;
}

inline SacLosses sac_update(SacNetworks& n, const ReplayBuffer& buffer, const SacConfig& cfg,
                            std::mt19937_64& rng) {
  if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw std::invalid_argument("sac_update: buffer smaller than batch size");
  }
  SacLosses losses;
  const int B = cfg.batch_size;
  SacBatch batch = assemble_batch(buffer, rng, B, n.state_dims, n.action_dims);

  // --- critics
  Vec targets = critic_targets(n, batch, cfg.gamma, rng);
  if (!targets.allFinite()) {
    throw std::runtime_error("sac_update: non-finite critic target (reward mean " +
                             std::to_string(batch.rewards.mean()) + ")");
  }
  CriticGrads cg = critic_loss_and_grads(n, batch, targets);
  approx::adam_step(n.critic1, cg.grads1, n.critic1_opt);
  approx::adam_step(n.critic2, cg.grads2, n.critic2_opt);
  losses.critic1 = cg.loss1;
  losses.critic2 = cg.loss2;
  n.critic_updates += 1;

  // --- actor
  auto actor_trace = approx::forward_trace(n.actor, n.actor_spec, batch.states);
  auto pi = detail::sample_policy(n, actor_trace, &rng);
  Mat sa(B, n.state_dims + n.action_dims);
  sa.leftCols(n.state_dims) = batch.states;
  sa.rightCols(n.action_dims) = pi.actions;
  auto q1_trace = approx::forward_trace(n.critic1, n.critic_spec, sa);
  auto q2_trace = approx::forward_trace(n.critic2, n.critic_spec, sa);
  const double alpha = n.alpha();

  // d(minQ)/da via the input gradients of whichever critic is the row minimum.
  Mat up1 = Mat::Zero(B, 1), up2 = Mat::Zero(B, 1);
  Vec min_q(B);
  for (int i = 0; i < B; ++i) {
    const double q1 = q1_trace.output(i, 0);
    const double q2 = q2_trace.output(i, 0);
    min_q[i] = std::min(q1, q2);
    (q1 <= q2 ? up1 : up2)(i, 0) = 1.0;
  }
  auto back1 = approx::backward_from_trace(n.critic1, n.critic_spec, q1_trace, up1);
  auto back2 = approx::backward_from_trace(n.critic2, n.critic_spec, q2_trace, up2);
  Mat dq_da = back1.input_grads.rightCols(n.action_dims) + back2.input_grads.rightCols(n.action_dims);

  // Upstream gradient on the actor heads for mean(alpha*logp - minQ).
  Mat upstream = Mat::Zero(B, 2 * n.action_dims);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < n.action_dims; ++j) {
      const double a = pi.actions(i, j);
      const double one_minus_a2 = 1.0 - a * a;
      const double c = 2.0 * a * one_minus_a2 / (one_minus_a2 + kTanhEps);
      const double log_std = detail::squash_log_std(pi.raw_std(i, j));
      const double std = std::exp(log_std);
      const double xi = pi.noise(i, j);
      const double dq = dq_da(i, j);
      const double g_mean = alpha * c - dq * one_minus_a2;
      const double g_log_std = alpha * (-1.0 + c * std * xi) - dq * one_minus_a2 * std * xi;
      upstream(i, j) = inv_b * g_mean;
      upstream(i, n.action_dims + j) =
          inv_b * g_log_std * detail::squash_log_std_grad(pi.raw_std(i, j));
    }
  }
  auto actor_back = approx::backward_from_trace(n.actor, n.actor_spec, actor_trace, upstream);
  approx::adam_step(n.actor, actor_back.grads, n.actor_opt);
  losses.actor = (alpha * pi.log_prob.array() - min_q.array()).mean();
  losses.mean_q = min_q.mean();
  losses.mean_log_prob = pi.log_prob.mean();

  // --- temperature: J(log_alpha) = -log_alpha * mean(logp + target_entropy)
  const double entropy_gap = pi.log_prob.mean() + n.target_entropy;
  losses.alpha = -n.log_alpha * entropy_gap;
  n.alpha_opt.update(n.log_alpha, -entropy_gap);
  losses.alpha_value = n.alpha();

  // --- target EMA every target_update_freq-th critic update
  if (n.critic_updates % cfg.target_update_freq == 0) {
    auto ema = [&](approx::Parameters& target, const approx::Parameters& source) {
      for (std::size_t l = 0; l < target.weights.size(); ++l) {
        target.weights[l] = (1.0 - cfg.tau) * target.weights[l] + cfg.tau * source.weights[l];
        target.biases[l] = (1.0 - cfg.tau) * target.biases[l] + cfg.tau * source.biases[l];
      }
    };
    ema(n.target1, n.critic1);
    ema(n.target2, n.critic2);
  }

  if (!std::isfinite(losses.critic1) || !std::isfinite(losses.actor)) {
    throw std::runtime_error("sac_update: non-finite loss (q mean " +
                             std::to_string(losses.mean_q) + ", logp mean " +
                             std::to_string(losses.mean_log_prob) + ")");
  }
  return losses;
}

}  // namespace sallmf::agent
