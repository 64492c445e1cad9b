#pragma once

// Shared test helpers: finite-difference gradient oracle, segment builders.

#include "sallmf/approx.hpp"
#include "sallmf/core.hpp"
#include "sallmf/envs.hpp"

#include <functional>
#include <random>
#include <vector>

namespace sallmf::testutil {

// Central finite differences of a scalar loss over every parameter scalar.
inline approx::Parameters numeric_gradient(
    const std::function<double(const approx::Parameters&)>& loss, approx::Parameters params,
    double h = 1e-5) {
  approx::Parameters grads = params;
  for (size_t l = 0; l < params.weights.size(); ++l) {
    for (int i = 0; i < params.weights[l].rows(); ++i) {
      for (int j = 0; j < params.weights[l].cols(); ++j) {
        const double saved = params.weights[l](i, j);
        params.weights[l](i, j) = saved + h;
        const double up = loss(params);
        params.weights[l](i, j) = saved - h;
        const double down = loss(params);
        params.weights[l](i, j) = saved;
        grads.weights[l](i, j) = (up - down) / (2.0 * h);
      }
    }
    for (int i = 0; i < params.biases[l].size(); ++i) {
      const double saved = params.biases[l][i];
      params.biases[l][i] = saved + h;
      const double up = loss(params);
      params.biases[l][i] = saved - h;
      const double down = loss(params);
      params.biases[l][i] = saved;
      grads.biases[l][i] = (up - down) / (2.0 * h);
    }
  }
  return grads;
}

inline double gradient_relative_error(const approx::Parameters& analytic,
                                      const approx::Parameters& numeric) {
  double diff2 = 0.0, ref2 = 0.0;
  for (size_t l = 0; l < analytic.weights.size(); ++l) {
    diff2 += (analytic.weights[l] - numeric.weights[l]).squaredNorm();
    diff2 += (analytic.biases[l] - numeric.biases[l]).squaredNorm();
    ref2 += numeric.weights[l].squaredNorm() + numeric.biases[l].squaredNorm();
  }
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12);
}

inline Mat random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

// Random in-bounds segment for a task (not dynamics-consistent; fine for
// serialization/reward tests that only need layout-valid states).
inline TrajectorySegment random_segment(const envs::TaskSpec& task, std::mt19937_64& rng, int H,
                                        std::int64_t episode_id = 0) {
  const auto& layout = *task.layout;
  std::vector<State> states;
  std::vector<double> privileged;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto sample_point = [&](Eigen::Ref<Vec> out) {
    for (int i = 0; i < out.size(); ++i) {
      const auto& b = task.coord_bounds[static_cast<size_t>(i)];
      out[i] = b[0] + (b[1] - b[0]) * u01(rng);
    }
  };
  Vec target(layout.target.size());
  sample_point(target);
  Vec prev = Vec::Zero(layout.total_dims);
  for (int t = 0; t < H; ++t) {
    Vec v = Vec::Zero(layout.total_dims);
    Vec tcp(layout.tcp.size());
    sample_point(tcp);
    v.segment(layout.tcp.begin, layout.tcp.size()) = tcp;
    if (layout.has_grip()) v[layout.grip.begin] = u01(rng);
    if (layout.has_obj()) {
      Vec obj(layout.obj.size());
      sample_point(obj);
      v.segment(layout.obj.begin, layout.obj.size()) = obj;
    }
    if (t == 0) {
      v.segment(layout.prev_tcp.begin, layout.prev_tcp.size()) =
          v.segment(layout.tcp.begin, layout.tcp.size());
      if (layout.has_grip()) v[layout.prev_grip.begin] = v[layout.grip.begin];
      if (layout.has_obj()) {
        v.segment(layout.prev_obj.begin, layout.prev_obj.size()) =
            v.segment(layout.obj.begin, layout.obj.size());
      }
    } else {
      v.segment(layout.prev_tcp.begin, layout.prev_tcp.size()) =
          prev.segment(layout.tcp.begin, layout.tcp.size());
      if (layout.has_grip()) v[layout.prev_grip.begin] = prev[layout.grip.begin];
      if (layout.has_obj()) {
        v.segment(layout.prev_obj.begin, layout.prev_obj.size()) =
            prev.segment(layout.obj.begin, layout.obj.size());
      }
    }
    v.segment(layout.target.begin, layout.target.size()) = target;
    prev = v;
    states.emplace_back(std::move(v), task.layout);
    privileged.push_back(-2.0 * u01(rng));
  }
  return TrajectorySegment(std::move(states), {}, std::move(privileged), episode_id, 0, false);
}

// Environment rollout collected as a segment of H states, optionally after
// skipping an initial stretch of the episode.
inline TrajectorySegment rollout_segment(const envs::TaskSpec& task, std::uint64_t seed, int H,
                                         const std::function<Vec(const State&)>& policy,
                                         std::int64_t episode_id = 0, int skip = 0) {
  envs::Environment env(task);
  State state = env.reset(seed);
  for (int t = 0; t < skip; ++t) state = env.step(state, policy(state)).next_state;
  std::vector<State> states;
  std::vector<double> rewards;
  for (int t = 0; t < H; ++t) {
    states.push_back(state);
    auto r = env.step(state, policy(state));
    rewards.push_back(r.privileged_reward);
    state = r.next_state;
  }
  return TrajectorySegment(std::move(states), {}, std::move(rewards), episode_id, skip, false);
}

inline std::function<Vec(const State&)> random_policy(const envs::TaskSpec& task,
                                                      std::shared_ptr<std::mt19937_64> rng) {
  return [action_dims = task.action_dims, rng](const State&) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec a(action_dims);
    for (int i = 0; i < action_dims; ++i) a[i] = u(*rng);
    return a;
  };
}

}  // namespace sallmf::testutil
