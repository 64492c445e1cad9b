#pragma once

// Metrics stream: one JSON record per line keyed by (run_id, step, kind),
// plus the aggregations behind the label-accuracy and plot-data commands.

#include "sallmf/feedback.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sallmf::metrics {

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, std::string run_id)
      : os_(path, std::ios::trunc), run_id_(std::move(run_id)) {
    if (!os_) throw std::runtime_error("cannot open metrics file: " + path);
  }

  void episode(long step, long episode, double privileged_return, bool success) {
    nlohmann::ordered_json j = base(step, "episode");
    j["episode"] = episode;
    j["privileged_return"] = privileged_return;
    j["success"] = success;
    write(j);
  }

  void session(long step, int session_index, const feedback::SessionReport& r,
               double reward_loss, std::size_t dataset_size, int budget_used, double cost,
               double reward_alignment = 0.0) {
    nlohmann::ordered_json j = base(step, "session");
    j["session_index"] = session_index;
    j["queries"] = r.queries;
    j["valid"] = r.valid;
    j["discarded"] = r.discarded;
    j["parse_failures"] = r.parse_failures;
    j["equal_verdicts"] = r.equal_verdicts;
    j["equal_retained"] = r.equal_retained;
    j["augment_attempts"] = r.augment_attempts;
    j["augment_accepted"] = r.augment_accepted;
    j["llm_calls"] = r.llm_calls;
    j["prompt_tokens"] = r.prompt_tokens;
    j["completion_tokens"] = r.completion_tokens;
    if (r.accuracy_vs_oracle) {
      j["accuracy"] = *r.accuracy_vs_oracle;
    } else {
      j["accuracy"] = nullptr;
    }
    const double q = r.queries > 0 ? static_cast<double>(r.queries) : 1.0;
    j["discard_rate"] = static_cast<double>(r.discarded) / q;
    j["parse_failure_rate"] = static_cast<double>(r.parse_failures) / q;
    j["equal_rate"] = static_cast<double>(r.equal_verdicts) / q;
    j["augment_acceptance_rate"] =
        r.augment_attempts > 0
            ? static_cast<double>(r.augment_accepted) / static_cast<double>(r.augment_attempts)
            : 0.0;
    j["reward_loss"] = reward_loss;
    j["reward_alignment"] = reward_alignment;
    j["dataset_size"] = dataset_size;
    j["budget_used"] = budget_used;
    j["cost"] = cost;
    write(j);
  }

  void eval(long step, double success_rate, double mean_return) {
    nlohmann::ordered_json j = base(step, "eval");
    j["success_rate"] = success_rate;
    j["mean_return"] = mean_return;
    write(j);
  }

  void final(long step, const nlohmann::ordered_json& payload) {
    nlohmann::ordered_json j = base(step, "final");
    j.update(payload);
    write(j);
  }

 private:
  nlohmann::ordered_json base(long step, const char* kind) {
    nlohmann::ordered_json j;
    j["run_id"] = run_id_;
    j["step"] = step;
    j["kind"] = kind;
    return j;
  }

  void write(const nlohmann::ordered_json& j) {
    os_ << j.dump() << "\n";
    os_.flush();
  }

  std::ofstream os_;
  std::string run_id_;
};

// ---------------------------------------------------------------------------
// Reading and aggregation

inline std::vector<nlohmann::json> read_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open metrics file: " + path);
  std::vector<nlohmann::json> records;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) records.push_back(nlohmann::json::parse(line));
  }
  return records;
}

// Table-1-style statistics recomputed from a metrics log.
struct SessionStats {
  int sessions = 0;
  long queries = 0;
  long valid = 0;
  long discarded = 0;
  long parse_failures = 0;
  long equal_verdicts = 0;
  double accuracy_mean = 0.0;       // mean over sessions that report accuracy
  int accuracy_sessions = 0;
  double discard_rate = 0.0;        // semantic discards / queries
  double parse_failure_rate = 0.0;
  double equal_rate = 0.0;
};

inline SessionStats aggregate_sessions(const std::vector<nlohmann::json>& records) {
  SessionStats s;
  double accuracy_sum = 0.0;
  for (const auto& j : records) {
    if (j.value("kind", "") != "session") continue;
    s.sessions += 1;
    s.queries += j.value("queries", 0L);
    s.valid += j.value("valid", 0L);
    s.discarded += j.value("discarded", 0L);
    s.parse_failures += j.value("parse_failures", 0L);
    s.equal_verdicts += j.value("equal_verdicts", 0L);
    if (j.contains("accuracy") && !j["accuracy"].is_null()) {
      accuracy_sum += j["accuracy"].get<double>();
      s.accuracy_sessions += 1;
    }
  }
  if (s.accuracy_sessions > 0) s.accuracy_mean = accuracy_sum / s.accuracy_sessions;
  if (s.queries > 0) {
    s.discard_rate = static_cast<double>(s.discarded) / static_cast<double>(s.queries);
    s.parse_failure_rate = static_cast<double>(s.parse_failures) / static_cast<double>(s.queries);
    s.equal_rate = static_cast<double>(s.equal_verdicts) / static_cast<double>(s.queries);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Plot data: one CSV per metric family, each with a header row.

inline std::vector<std::string> emit_plot_data(const std::string& metrics_path,
                                               const std::filesystem::path& out_dir) {
  auto records = read_metrics(metrics_path);
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;

  auto open_csv = [&](const std::string& name, const std::string& header) {
    std::ofstream os(out_dir / name, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + (out_dir / name).string());
    os << header << "\n";
    written.push_back((out_dir / name).string());
    return os;
  };

  {
    auto os = open_csv("success_rate.csv", "step,success_rate,mean_return");
    for (const auto& j : records) {
      if (j.value("kind", "") != "eval") continue;
      os << j["step"].get<long>() << "," << j["success_rate"].get<double>() << ","
         << j["mean_return"].get<double>() << "\n";
    }
  }
  {
    auto os = open_csv("label_accuracy.csv", "step,session_index,accuracy");
    for (const auto& j : records) {
      if (j.value("kind", "") != "session") continue;
      os << j["step"].get<long>() << "," << j["session_index"].get<int>() << ",";
      if (j.contains("accuracy") && !j["accuracy"].is_null()) {
        os << j["accuracy"].get<double>();
      }
      os << "\n";
    }
  }
  {
    auto os = open_csv("discard.csv",
                       "step,session_index,discard_rate,parse_failure_rate,equal_rate");
    for (const auto& j : records) {
      if (j.value("kind", "") != "session") continue;
      os << j["step"].get<long>() << "," << j["session_index"].get<int>() << ","
         << j["discard_rate"].get<double>() << "," << j["parse_failure_rate"].get<double>() << ","
         << j["equal_rate"].get<double>() << "\n";
    }
  }
  {
    auto os = open_csv("cost.csv", "step,prompt_tokens,completion_tokens,cost");
    for (const auto& j : records) {
      const std::string kind = j.value("kind", "");
      if (kind != "session" && kind != "final") continue;
      if (!j.contains("cost")) continue;
      os << j["step"].get<long>() << "," << j.value("prompt_tokens", 0L) << ","
         << j.value("completion_tokens", 0L) << "," << j["cost"].get<double>() << "\n";
    }
  }
  return written;
}

}  // namespace sallmf::metrics
