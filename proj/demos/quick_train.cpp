// Minimal end-to-end run: scripted-teacher feedback on point_reach at a tiny
// scale, printing the eval curve. Finishes in well under a minute.

#include "sallmf/config.hpp"
#include "sallmf/metrics.hpp"
#include "sallmf/orchestrator.hpp"

#include <cstdio>

int main() {
  sallmf::config::RunConfig cfg;
  cfg.run_id = "quick_demo";
  cfg.out_dir = "runs";
  cfg.task = "point_reach";
  cfg.mode = "scripted";
  cfg.seed = 0;
  cfg.total_steps = 8000;
  cfg.pretrain_steps = 400;
  cfg.random_warmup_steps = 300;
  cfg.feedback_frequency = 400;
  cfg.max_budget = 100;
  cfg.queries_per_session = 10;
  cfg.sac.batch_size = 128;
  cfg.sac.hidden_layers = 2;
  cfg.sac.hidden_units = 64;
  cfg.reward_hidden_layers = 2;
  cfg.reward_hidden_units = 64;
  cfg.reward_epochs = 5;

  auto result = sallmf::orchestrator::train(cfg);
  std::printf("steps=%ld sessions=%d final_success=%.2f\n", result.steps, result.sessions,
              result.final_success_rate);

  for (const auto& rec : sallmf::metrics::read_metrics(result.metrics_path)) {
    if (rec.value("kind", "") == "eval") {
      std::printf("step %6ld  success %.2f  return %8.2f\n", rec["step"].get<long>(),
                  rec["success_rate"].get<double>(), rec["mean_return"].get<double>());
    }
  }
  return 0;
}
