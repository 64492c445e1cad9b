// Builds one judge prompt from two rollouts, asks the oracle mock twice with
// swapped order, and prints the combined double-check decision.

#include "sallmf/envs.hpp"
#include "sallmf/feedback.hpp"
#include "sallmf/llmclient.hpp"

#include <cstdio>
#include <random>
#include <vector>

using namespace sallmf;

namespace {

TrajectorySegment rollout(const envs::TaskSpec& task, std::uint64_t seed, int H, bool expert) {
  envs::Environment env(task);
  State state = env.reset(seed);
  auto controller = envs::scripted_controller(task);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  std::vector<State> states;
  std::vector<double> rewards;
  for (int t = 0; t < H; ++t) {
    states.push_back(state);
    Vec action(task.action_dims);
    if (expert) {
      action = controller(state);
    } else {
      for (int i = 0; i < task.action_dims; ++i) action[i] = u(rng);
    }
    auto r = env.step(state, action);
    rewards.push_back(r.privileged_reward);
    state = r.next_state;
  }
  return TrajectorySegment(std::move(states), {}, std::move(rewards), seed, 0, false);
}

}  // namespace

int main() {
  const auto task = envs::make_task("point_reach");
  const int H = 10;
  auto good = rollout(task, 7, H, true);
  auto bad = rollout(task, 7, H, false);

  llmclient::OracleMockProvider provider(task);
  feedback::FeedbackBudget budget;
  auto result = feedback::double_checked_judge(provider, bad, good, task, budget);

  std::printf("verdicts: %s then %s (order swapped)\n",
              textio::to_string(result.first_verdict), textio::to_string(result.swapped_verdict));
  switch (result.decision) {
    case feedback::DoubleCheckResult::Decision::Valid:
      std::printf("valid label y=%.1f (%s segment preferred)\n", result.label,
                  result.label == 0.0 ? "first" : "second");
      break;
    case feedback::DoubleCheckResult::Decision::EqualRetained:
      std::printf("equal preference retained (y=0.5)\n");
      break;
    case feedback::DoubleCheckResult::Decision::Discard:
      std::printf("discarded (inconsistent verdicts)\n");
      break;
  }
  std::printf("llm calls used: %ld\n", budget.llm_calls);
  return 0;
}
