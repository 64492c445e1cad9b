#pragma once

// Chat-completions transport plus deterministic mock providers and transcript
// record/replay for offline runs, with token and cost accounting.
//
// Mock providers derive any randomness (e.g. verdict flips) from the request
// digest, so they stay deterministic under concurrent or reordered calls.

#include "sallmf/core.hpp"
#include "sallmf/envs.hpp"
#include "sallmf/textio.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sallmf::llmclient {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;

  const std::string& last_user_content() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
      if (it->role == "user") return it->content;
    }
    throw std::invalid_argument("request has no user message");
  }
};

struct ChatResponse {
  std::string content;
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

// Errors
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CredentialError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Request digest: FNV-1a over the canonical (key-sorted) JSON encoding.

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline nlohmann::json request_json(const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  return nlohmann::json{{"model", request.model},
                        {"messages", std::move(messages)},
                        {"temperature", request.temperature}};
}

inline std::string request_digest(const ChatRequest& request) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(request_json(request).dump())));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Provider interface

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

inline long estimate_tokens(std::string_view text) {
  return std::max<long>(1, static_cast<long>(text.size() / 4));
}

// ---------------------------------------------------------------------------
// Transcripts

struct TranscriptRecord {
  std::string digest;
  std::string prompt;
  std::string response;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  std::int64_t timestamp = 0;  // unix seconds
};

class TranscriptWriter {
 public:
  explicit TranscriptWriter(const std::string& path) : os_(path, std::ios::app) {
    if (!os_) throw std::runtime_error("cannot open transcript file: " + path);
  }

  void append(const TranscriptRecord& record) {
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::ordered_json j;
    j["digest"] = record.digest;
    j["prompt"] = record.prompt;
    j["response"] = record.response;
    j["prompt_tokens"] = record.prompt_tokens;
    j["completion_tokens"] = record.completion_tokens;
    j["timestamp"] = record.timestamp;
    os_ << j.dump() << "\n";
    os_.flush();
    count_ += 1;
  }

  std::size_t count() const { return count_; }

 private:
  std::ofstream os_;
  std::mutex mu_;
  std::size_t count_ = 0;
};

inline std::vector<TranscriptRecord> load_transcript(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open transcript file: " + path);
  std::vector<TranscriptRecord> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    TranscriptRecord r;
    r.digest = j.at("digest").get<std::string>();
    r.prompt = j.value("prompt", "");
    r.response = j.at("response").get<std::string>();
    r.prompt_tokens = j.value("prompt_tokens", 0L);
    r.completion_tokens = j.value("completion_tokens", 0L);
    r.timestamp = j.value("timestamp", static_cast<std::int64_t>(0));
    records.push_back(std::move(r));
  }
  return records;
}

// Wraps a provider and appends exactly one record per completed call.
class RecordingProvider : public Provider {
 public:
  RecordingProvider(std::shared_ptr<Provider> inner, std::shared_ptr<TranscriptWriter> writer)
      : inner_(std::move(inner)), writer_(std::move(writer)) {}

  ChatResponse complete(const ChatRequest& request) override {
    ChatResponse response = inner_->complete(request);
    TranscriptRecord record;
    record.digest = request_digest(request);
    record.prompt = request.last_user_content();
    record.response = response.content;
    record.prompt_tokens = response.prompt_tokens;
    record.completion_tokens = response.completion_tokens;
    record.timestamp =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    writer_->append(record);
    return response;
  }

 private:
  std::shared_ptr<Provider> inner_;
  std::shared_ptr<TranscriptWriter> writer_;
};

// Replays recorded responses keyed by request digest.
class ReplayProvider : public Provider {
 public:
  explicit ReplayProvider(const std::string& path) {
    for (auto& r : load_transcript(path)) {
      responses_.emplace(r.digest, std::move(r));
    }
  }

  ChatResponse complete(const ChatRequest& request) override {
    const std::string digest = request_digest(request);
    auto it = responses_.find(digest);
    if (it == responses_.end()) {
      throw TransportError("replay transcript has no record for digest " + digest);
    }
    return ChatResponse{it->second.response, it->second.prompt_tokens,
                        it->second.completion_tokens};
  }

 private:
  std::map<std::string, TranscriptRecord> responses_;
};

// ---------------------------------------------------------------------------
// Simple mocks

class EchoProvider : public Provider {
 public:
  ChatResponse complete(const ChatRequest& request) override {
    const std::string& prompt = request.last_user_content();
    return ChatResponse{prompt, estimate_tokens(prompt), estimate_tokens(prompt)};
  }
};

class FixedResponseProvider : public Provider {
 public:
  explicit FixedResponseProvider(std::string content) : content_(std::move(content)) {}

  ChatResponse complete(const ChatRequest& request) override {
    return ChatResponse{content_, estimate_tokens(request.last_user_content()),
                        estimate_tokens(content_)};
  }

 private:
  std::string content_;
};

// Answers judge prompts with a digest-derived fair coin over {1, 2}.
class RandomVerdictProvider : public Provider {
 public:
  explicit RandomVerdictProvider(std::uint64_t salt = 0) : salt_(salt) {}

  ChatResponse complete(const ChatRequest& request) override {
    const std::string& prompt = request.last_user_content();
    const std::uint64_t h = fnv1a64(request_digest(request) + std::to_string(salt_));
    const char* verdict = (h & 1u) == 0 ? "1" : "2";
    return ChatResponse{verdict, estimate_tokens(prompt), 1};
  }

 private:
  std::uint64_t salt_;
};

// ---------------------------------------------------------------------------
// Oracle mock: stands in for the LLM in offline runs and tests.
//
// Judge prompts are answered by comparing the mean distance-to-target of the
// final k steps of the task's success channel, optionally corrupted with a
// digest-derived flip of probability epsilon. Generation prompts get a
// straight-line trajectory from the prompt's first state to the target.

class OracleMockProvider : public Provider {
 public:
  OracleMockProvider(envs::TaskSpec task, double epsilon = 0.0, std::uint64_t salt = 0)
      : task_(std::move(task)), epsilon_(epsilon), salt_(salt) {}

  ChatResponse complete(const ChatRequest& request) override {
    const std::string& prompt = request.last_user_content();
    std::string content;
    if (prompt.find("generate a new trajectory") != std::string::npos) {
      content = generate_reply(prompt);
    } else if (prompt.find("evaluate the quality") != std::string::npos) {
      content = judge_reply(prompt, request);
    } else {
      throw std::invalid_argument("oracle mock: unrecognized prompt shape");
    }
    return ChatResponse{content, estimate_tokens(prompt), estimate_tokens(content)};
  }

 private:
  std::string success_channel() const {
    return task_.layout->has_obj() ? "obj" : task_.movable_channels.front().key;
  }

  struct ParsedTraj {
    std::vector<Vec> points;
    Vec target;
  };

  ParsedTraj parse_block(std::string_view text) const {
    auto block = textio::outer_brace_block(text);
    if (!block) throw std::invalid_argument("oracle mock: trajectory block missing");
    auto scanned = textio::scan_block(*block);
    if (!scanned.ok()) throw std::invalid_argument("oracle mock: trajectory block does not scan");
    ParsedTraj out;
    const std::string key = success_channel();
    for (const auto& [k, pts] : scanned.value().channels) {
      if (k == key) out.points = pts;
      if (k == "target" && !pts.empty()) out.target = pts.front();
    }
    if (out.points.empty() || out.target.size() == 0) {
      throw std::invalid_argument("oracle mock: prompt lacks " + key + " or target");
    }
    return out;
  }

  double final_distance(const ParsedTraj& t, int k = 3) const {
    const int n = static_cast<int>(t.points.size());
    const int take = std::min(k, n);
    double sum = 0.0;
    for (int i = n - take; i < n; ++i) {
      sum += (t.points[static_cast<size_t>(i)] - t.target).norm();
    }
    return sum / static_cast<double>(take);
  }

  std::string judge_reply(const std::string& prompt, const ChatRequest& request) const {
    const size_t t1 = prompt.find("Trajectory 1:");
    const size_t t2 = prompt.find("Trajectory 2:");
    const size_t tail = prompt.find("Please answer");
    if (t1 == std::string::npos || t2 == std::string::npos || tail == std::string::npos) {
      throw std::invalid_argument("oracle mock: judge prompt missing trajectory markers");
    }
    ParsedTraj a = parse_block(std::string_view(prompt).substr(t1, t2 - t1));
    ParsedTraj b = parse_block(std::string_view(prompt).substr(t2, tail - t2));
    const double da = final_distance(a);
    const double db = final_distance(b);

    int verdict;
    if (std::abs(da - db) < 1e-9) {
      verdict = 0;
    } else {
      verdict = da < db ? 1 : 2;
      if (epsilon_ > 0.0) {
        const std::uint64_t h =
            fnv1a64(request_digest(request) + "#flip" + std::to_string(salt_));
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        if (u < epsilon_) verdict = verdict == 1 ? 2 : 1;
      }
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "Mean final distance of Trajectory 1: %.4f\n"
                  "Mean final distance of Trajectory 2: %.4f\n%d",
                  da, db, verdict);
    return buf;
  }

  std::string generate_reply(const std::string& prompt) const {
    auto block = textio::outer_brace_block(prompt);
    if (!block) throw std::invalid_argument("oracle mock: generation prompt lacks a start block");
    auto scanned = textio::scan_block(*block);
    if (!scanned.ok()) throw std::invalid_argument("oracle mock: start block does not scan");

    Vec target;
    for (const auto& [k, pts] : scanned.value().channels) {
      if (k == "target" && !pts.empty()) target = pts.front();
    }
    if (target.size() == 0) throw std::invalid_argument("oracle mock: start block lacks target");

    const size_t marker = prompt.find("the step size should be ");
    int steps = 10;
    if (marker != std::string::npos) {
      steps = std::atoi(prompt.c_str() + marker + std::string("the step size should be ").size());
    }

    std::vector<std::pair<std::string, std::vector<Vec>>> channels;
    for (const auto& [k, pts] : scanned.value().channels) {
      if (k == "target" || pts.empty()) continue;
      const Vec& from = pts.front();
      std::vector<Vec> line;
      line.reserve(static_cast<size_t>(steps));
      for (int i = 0; i < steps; ++i) {
        const double frac = steps > 1 ? static_cast<double>(i) / static_cast<double>(steps - 1) : 0.0;
        line.push_back(from + frac * (target - from));
      }
      channels.emplace_back(k, std::move(line));
    }
    return textio::trajectory_block(channels, target);
  }

  envs::TaskSpec task_;
  double epsilon_;
  std::uint64_t salt_;
};

// ---------------------------------------------------------------------------
// HTTP provider: POST {base_url}/v1/chat/completions with retry/backoff.

struct HttpProviderConfig {
  std::string base_url;             // e.g. "http://127.0.0.1:8080" or "https://api.example.com"
  std::string model = "gpt-4o-mini-2024-07-18";
  std::string api_key_env = "SALLM_API_KEY";  // empty string disables auth header
  double timeout_seconds = 60.0;
  int max_attempts = 5;
  double backoff_base_seconds = 1.0;
  double backoff_factor = 2.0;
};

class HttpProvider : public Provider {
 public:
  using Sleeper = std::function<void(double /*seconds*/)>;

  explicit HttpProvider(HttpProviderConfig config, Sleeper sleeper = nullptr)
      : config_(std::move(config)),
        sleeper_(sleeper ? std::move(sleeper) : [](double s) {
          std::this_thread::sleep_for(std::chrono::duration<double>(s));
        }) {
    if (config_.base_url.empty()) throw ConfigError("http provider: base_url is empty");
    if (!config_.api_key_env.empty()) {
      const char* key = std::getenv(config_.api_key_env.c_str());
      if (key == nullptr || *key == '\0') {
        throw CredentialError("http provider: credential environment variable " +
                              config_.api_key_env + " is not set");
      }
      api_key_ = key;
    }
  }

  ChatResponse complete(const ChatRequest& request) override {
    const std::string body = request_json(request).dump();
    std::string last_error;
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
      if (attempt > 0) {
        sleeper_(config_.backoff_base_seconds *
                 std::pow(config_.backoff_factor, static_cast<double>(attempt - 1)));
      }
      httplib::Client client(config_.base_url);
      client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_seconds));
      client.set_read_timeout(std::chrono::duration<double>(config_.timeout_seconds));
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

      auto result = client.Post("/v1/chat/completions", headers, body, "application/json");
      if (!result) {
        last_error = "transport failure: " + httplib::to_string(result.error());
        continue;
      }
      const int status = result->status;
      if (status == 429 || (status >= 500 && status < 600)) {
        last_error = "status " + std::to_string(status);
        continue;
      }
      if (status < 200 || status >= 300) {
        throw ConfigError("http provider: status " + std::to_string(status) + ": " +
                          result->body);
      }
      return parse_response(result->body);
    }
    throw TransportError("http provider: retries exhausted (" + last_error + ")");
  }

 private:
  static ChatResponse parse_response(const std::string& body) {
    auto j = nlohmann::json::parse(body);
    ChatResponse response;
    response.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      response.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
      response.completion_tokens = j["usage"].value("completion_tokens", 0L);
    }
    if (response.prompt_tokens < 0 || response.completion_tokens < 0) {
      throw ConfigError("http provider: negative token counts in usage");
    }
    return response;
  }

  HttpProviderConfig config_;
  Sleeper sleeper_;
  std::string api_key_;
};

// ---------------------------------------------------------------------------
// Cost ledger

struct CostLedger {
  long prompt_tokens = 0;
  long completion_tokens = 0;
  double price_in_per_1m = 0.15;   // assumed GPT-4o-mini tariff (USD per 1M tokens)
  double price_out_per_1m = 0.60;

  double cost() const {
    return static_cast<double>(prompt_tokens) * price_in_per_1m / 1e6 +
           static_cast<double>(completion_tokens) * price_out_per_1m / 1e6;
  }
};

inline void accumulate_cost(CostLedger& ledger, const ChatResponse& response) {
  ledger.prompt_tokens += response.prompt_tokens;
  ledger.completion_tokens += response.completion_tokens;
}

// Wraps a provider and accumulates token usage into a shared ledger.
class MeteringProvider : public Provider {
 public:
  MeteringProvider(Provider& inner, CostLedger& ledger) : inner_(inner), ledger_(ledger) {}

  ChatResponse complete(const ChatRequest& request) override {
    ChatResponse response = inner_.complete(request);
    std::lock_guard<std::mutex> lock(mu_);
    accumulate_cost(ledger_, response);
    return response;
  }

 private:
  Provider& inner_;
  CostLedger& ledger_;
  std::mutex mu_;
};

}  // namespace sallmf::llmclient
