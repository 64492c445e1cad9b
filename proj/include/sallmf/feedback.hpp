#pragma once

// Preference providers and the query protocol: scripted teacher, double-checked
// LLM judging with order swap, self-augmented trajectory generation, and
// budget accounting.

#include "sallmf/agent.hpp"
#include "sallmf/core.hpp"
#include "sallmf/envs.hpp"
#include "sallmf/llmclient.hpp"
#include "sallmf/reward.hpp"
#include "sallmf/textio.hpp"

#include <functional>
#include <future>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sallmf::feedback {

enum class FeedbackMode { Scripted, LlmOnly, SallmFull, AugmentOnly, NoDoubleCheck };

inline const char* to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::Scripted: return "scripted";
    case FeedbackMode::LlmOnly: return "llm_only";
    case FeedbackMode::SallmFull: return "sallm_full";
    case FeedbackMode::AugmentOnly: return "augment_only";
    case FeedbackMode::NoDoubleCheck: return "no_double_check";
  }
  return "?";
}

inline FeedbackMode feedback_mode_from_string(const std::string& s) {
  if (s == "scripted") return FeedbackMode::Scripted;
  if (s == "llm_only") return FeedbackMode::LlmOnly;
  if (s == "sallm_full") return FeedbackMode::SallmFull;
  if (s == "augment_only") return FeedbackMode::AugmentOnly;
  if (s == "no_double_check") return FeedbackMode::NoDoubleCheck;
  throw std::invalid_argument("unknown feedback mode: " + s);
}

// ---------------------------------------------------------------------------
// Budget

struct FeedbackBudget {
  int max_queries = 2000;
  int used_queries = 0;
  int queries_per_session = 20;
  long llm_calls = 0;
  int discarded = 0;        // semantic discards (double-check disagreement)
  int parse_failures = 0;   // unparseable replies, logged separately
  int equal_retained = 0;
  int augment_attempts = 0;
  int augment_accepted = 0;

  int remaining() const { return max_queries - used_queries; }
  bool exhausted() const { return remaining() <= 0; }
};

// ---------------------------------------------------------------------------
// Scripted teacher: y = 0 if the first segment's privileged return is at
// least the second's, else 1. Never scores imagined trajectories.

inline double scripted_label(const TrajectorySegment& seg_a, const TrajectorySegment& seg_b) {
  if (seg_a.synthetic() || seg_b.synthetic()) {
    throw std::invalid_argument("scripted teacher cannot score synthetic segments");
  }
  PrivilegedAccess::Scope oracle;
  return seg_a.privileged_return() >= seg_b.privileged_return() ? 0.0 : 1.0;
}

// ---------------------------------------------------------------------------
// Double-checked judging

struct DoubleCheckResult {
  enum class Decision { Valid, Discard, EqualRetained };

  textio::JudgeVerdict first_verdict = textio::JudgeVerdict::Unsure;
  textio::JudgeVerdict swapped_verdict = textio::JudgeVerdict::Unsure;
  Decision decision = Decision::Discard;
  double label = 0.0;          // meaningful for Valid (0/1) and EqualRetained (0.5)
  bool parse_failure = false;  // either reply failed to parse
};

// Combination rule over the swapped verdict pair.
inline DoubleCheckResult combine_verdicts(textio::JudgeVerdict first,
                                          textio::JudgeVerdict swapped, bool retain_equal) {
  using V = textio::JudgeVerdict;
  using D = DoubleCheckResult::Decision;
  DoubleCheckResult r;
  r.first_verdict = first;
  r.swapped_verdict = swapped;
  if (first == V::First && swapped == V::Second) {
    r.decision = D::Valid;
    r.label = 0.0;
  } else if (first == V::Second && swapped == V::First) {
    r.decision = D::Valid;
    r.label = 1.0;
  } else if (retain_equal && first == V::Unsure && swapped == V::Unsure) {
    r.decision = D::EqualRetained;
    r.label = 0.5;
  } else {
    r.decision = D::Discard;
  }
  return r;
}

struct JudgeOptions {
  std::string model = "gpt-4o-mini-2024-07-18";
  double judge_temperature = 0.0;
  double generate_temperature = 0.7;
  bool retain_equal = false;
  bool one_shot = false;
  int max_in_flight = 1;  // >= 2 issues the two double-check calls concurrently
  textio::PromptTemplates templates = textio::PromptTemplates::v1();
};

inline llmclient::ChatRequest judge_request(const std::string& prompt, const JudgeOptions& opts) {
  return llmclient::ChatRequest{opts.model, {{"user", prompt}}, opts.judge_temperature};
}

// Issues the (A,B) and (B,A) judge queries and combines the verdicts.
// Consumes one budget query and two LLM calls regardless of outcome.
inline DoubleCheckResult double_checked_judge(llmclient::Provider& provider,
                                              const TrajectorySegment& seg_a,
                                              const TrajectorySegment& seg_b,
                                              const envs::TaskSpec& task, FeedbackBudget& budget,
                                              const JudgeOptions& opts = {}) {
  if (budget.exhausted()) throw std::logic_error("feedback budget exhausted");
  const int H = seg_a.length();
  auto text_a = textio::serialize_segment(seg_a, task);
  auto text_b = textio::serialize_segment(seg_b, task);
  const std::string prompt_ab =
      textio::build_judge_prompt(text_a, text_b, task, H, opts.templates, opts.one_shot);
  const std::string prompt_ba =
      textio::build_judge_prompt(text_b, text_a, task, H, opts.templates, opts.one_shot);

  llmclient::ChatResponse first_response, swapped_response;
  if (opts.max_in_flight >= 2) {
    auto fut = std::async(std::launch::async, [&] {
      return provider.complete(judge_request(prompt_ba, opts));
    });
    first_response = provider.complete(judge_request(prompt_ab, opts));
    swapped_response = fut.get();
  } else {
    first_response = provider.complete(judge_request(prompt_ab, opts));
    swapped_response = provider.complete(judge_request(prompt_ba, opts));
  }
  budget.llm_calls += 2;
  budget.used_queries += 1;

  auto first = textio::parse_judge_reply(first_response.content);
  auto swapped = textio::parse_judge_reply(swapped_response.content);
  if (!first.ok() || !swapped.ok()) {
    DoubleCheckResult r;
    r.decision = DoubleCheckResult::Decision::Discard;
    r.parse_failure = true;
    budget.parse_failures += 1;
    return r;
  }
  DoubleCheckResult r =
      combine_verdicts(first.value().verdict, swapped.value().verdict, opts.retain_equal);
  if (r.decision == DoubleCheckResult::Decision::Discard) budget.discarded += 1;
  if (r.decision == DoubleCheckResult::Decision::EqualRetained) budget.equal_retained += 1;
  return r;
}

// ---------------------------------------------------------------------------
// Self-augmentation: ask for an imagined trajectory that beats the winner,
// validate it and pair it against the winner with the generated side
// preferred (y = 0).

enum class AugmentFailure {
  None,
  NoBlockFound,
  WrongStepCount,
  MalformedNumber,
  OutOfBounds,
  WrongInitialState,
  UnparseableReply,
};

inline AugmentFailure to_augment_failure(textio::GenerateParseError e) {
  switch (e) {
    case textio::GenerateParseError::NoBlockFound: return AugmentFailure::NoBlockFound;
    case textio::GenerateParseError::WrongStepCount: return AugmentFailure::WrongStepCount;
    case textio::GenerateParseError::MalformedNumber: return AugmentFailure::MalformedNumber;
    case textio::GenerateParseError::OutOfBounds: return AugmentFailure::OutOfBounds;
    case textio::GenerateParseError::WrongInitialState: return AugmentFailure::WrongInitialState;
  }
  return AugmentFailure::None;
}

inline std::optional<PreferenceTriple> self_augment(llmclient::Provider& provider,
                                                    const TrajectorySegment& preferred_seg,
                                                    const envs::TaskSpec& task,
                                                    FeedbackBudget& budget,
                                                    const JudgeOptions& opts = {},
                                                    AugmentFailure* failure = nullptr,
                                                    llmclient::ChatResponse* raw_response = nullptr) {
  budget.augment_attempts += 1;
  const int H = preferred_seg.length();
  auto better_text = textio::serialize_segment(preferred_seg, task);
  const std::string prompt =
      textio::build_generate_prompt(better_text, task, H, opts.templates);
  llmclient::ChatRequest request{opts.model, {{"user", prompt}}, opts.generate_temperature};
  llmclient::ChatResponse response = provider.complete(request);
  budget.llm_calls += 1;
  if (raw_response != nullptr) *raw_response = response;

  auto parsed = textio::parse_generated_trajectory(response.content, task, H,
                                                   preferred_seg.states().front());
  if (!parsed.ok()) {
    if (failure != nullptr) *failure = to_augment_failure(parsed.error());
    return std::nullopt;
  }
  TrajectorySegment generated = textio::generated_to_segment(parsed.value(), preferred_seg);
  budget.augment_accepted += 1;
  if (failure != nullptr) *failure = AugmentFailure::None;
  return PreferenceTriple(std::move(generated), preferred_seg, 0.0, TripleSource::Augmented);
}

// ---------------------------------------------------------------------------
// Label accuracy of sampled triples against an oracle labeler.

inline double label_accuracy(
    const std::vector<PreferenceTriple>& sampled_triples,
    const std::function<double(const TrajectorySegment&, const TrajectorySegment&)>& oracle =
        [](const TrajectorySegment& a, const TrajectorySegment& b) { return scripted_label(a, b); }) {
  if (sampled_triples.empty()) {
    throw std::invalid_argument("label_accuracy: no sampled triples (undefined metric)");
  }
  int matches = 0;
  int counted = 0;
  for (const auto& t : sampled_triples) {
    if (t.source != TripleSource::Sampled) {
      throw std::invalid_argument("label_accuracy: augmented triples are excluded by contract");
    }
    if (t.label == 0.5) continue;  // equal labels have no binary oracle verdict
    counted += 1;
    if (oracle(t.seg0, t.seg1) == t.label) matches += 1;
  }
  if (counted == 0) {
    throw std::invalid_argument("label_accuracy: no binary-labeled triples (undefined metric)");
  }
  return static_cast<double>(matches) / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Session runner

struct SessionReport {
  int queries = 0;           // sampled pairs consumed from the budget
  int valid = 0;             // sampled triples appended
  int discarded = 0;         // semantic double-check discards
  int parse_failures = 0;
  int equal_retained = 0;
  int equal_verdicts = 0;    // queries whose replies were all Unsure
  int augment_attempts = 0;
  int augment_accepted = 0;
  long llm_calls = 0;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  std::optional<double> accuracy_vs_oracle;  // decisive judge outcomes vs scripted teacher
  int scripted_metric_lookups = 0;           // oracle reads for metrics only
};

struct SessionOptions {
  int segment_len = 10;
  int recent_episode_window = 30;
  JudgeOptions judge;
  bool compute_oracle_accuracy = true;
};

// Runs up to queries_per_session preference queries (stopping early if the
// budget runs out or the buffer cannot produce distinct-episode pairs),
// appends the resulting triples, and reports all counts.
inline SessionReport run_feedback_session(FeedbackMode mode, llmclient::Provider* raw_provider,
                                          const agent::ReplayBuffer& buffer,
                                          reward::PreferenceDataset& dataset,
                                          FeedbackBudget& budget, const envs::TaskSpec& task,
                                          std::mt19937_64& rng,
                                          const SessionOptions& opts = {}) {
  if (mode != FeedbackMode::Scripted && raw_provider == nullptr) {
    throw std::invalid_argument("LLM feedback modes need a provider");
  }
  SessionReport report;
  llmclient::CostLedger session_tokens;
  std::optional<llmclient::MeteringProvider> metering;
  llmclient::Provider* provider = nullptr;
  if (raw_provider != nullptr) {
    metering.emplace(*raw_provider, session_tokens);
    provider = &*metering;
  }
  const long llm_calls_before = budget.llm_calls;
  int accuracy_matches = 0;
  int accuracy_counted = 0;

  auto oracle_compare = [&](const TrajectorySegment& a, const TrajectorySegment& b,
                            double judged_label) {
    report.scripted_metric_lookups += 1;
    if (scripted_label(a, b) == judged_label) accuracy_matches += 1;
    accuracy_counted += 1;
  };

  for (int q = 0; q < budget.queries_per_session; ++q) {
    if (budget.exhausted()) break;
    auto pair = buffer.sample_segment_pair(rng, opts.segment_len, opts.recent_episode_window);
    if (!pair) break;
    const auto& [seg_a, seg_b] = *pair;

    std::optional<double> label;
    std::optional<TrajectorySegment> winner;

    switch (mode) {
      case FeedbackMode::Scripted: {
        budget.used_queries += 1;
        label = scripted_label(seg_a, seg_b);
        break;
      }
      case FeedbackMode::LlmOnly:
      case FeedbackMode::SallmFull: {
        auto r = double_checked_judge(*provider, seg_a, seg_b, task, budget, opts.judge);
        report.parse_failures += r.parse_failure ? 1 : 0;
        if (r.first_verdict == textio::JudgeVerdict::Unsure &&
            r.swapped_verdict == textio::JudgeVerdict::Unsure && !r.parse_failure) {
          report.equal_verdicts += 1;
        }
        if (r.decision == DoubleCheckResult::Decision::Valid ||
            r.decision == DoubleCheckResult::Decision::EqualRetained) {
          label = r.label;
        } else {
          report.discarded += r.parse_failure ? 0 : 1;
        }
        break;
      }
      case FeedbackMode::NoDoubleCheck:
      case FeedbackMode::AugmentOnly: {
        // Single judge call, mapped directly; Unsure means no label.
        budget.used_queries += 1;
        budget.llm_calls += 1;
        auto text_a = textio::serialize_segment(seg_a, task);
        auto text_b = textio::serialize_segment(seg_b, task);
        const std::string prompt = textio::build_judge_prompt(
            text_a, text_b, task, seg_a.length(), opts.judge.templates, opts.judge.one_shot);
        auto response = provider->complete(judge_request(prompt, opts.judge));
        auto reply = textio::parse_judge_reply(response.content);
        if (!reply.ok()) {
          budget.parse_failures += 1;
          report.parse_failures += 1;
        } else if (reply.value().verdict == textio::JudgeVerdict::Unsure) {
          budget.discarded += 1;
          report.discarded += 1;
          report.equal_verdicts += 1;
        } else {
          label = reply.value().verdict == textio::JudgeVerdict::First ? 0.0 : 1.0;
        }
        break;
      }
    }

    report.queries += 1;

    if (label.has_value()) {
      if (*label == 0.0 || *label == 1.0) {
        winner = *label == 0.0 ? seg_a : seg_b;
        if (mode != FeedbackMode::Scripted && opts.compute_oracle_accuracy) {
          oracle_compare(seg_a, seg_b, *label);
        }
      }
      if (mode != FeedbackMode::AugmentOnly) {
        dataset.add(PreferenceTriple(seg_a, seg_b, *label, TripleSource::Sampled));
        report.valid += 1;
      }
    }

    if ((mode == FeedbackMode::SallmFull || mode == FeedbackMode::AugmentOnly) &&
        winner.has_value()) {
      const int attempts_before = budget.augment_attempts;
      const int accepted_before = budget.augment_accepted;
      auto triple = self_augment(*provider, *winner, task, budget, opts.judge);
      report.augment_attempts += budget.augment_attempts - attempts_before;
      report.augment_accepted += budget.augment_accepted - accepted_before;
      if (triple) dataset.add(std::move(*triple));
    }
  }

  if (accuracy_counted > 0) {
    report.accuracy_vs_oracle =
        static_cast<double>(accuracy_matches) / static_cast<double>(accuracy_counted);
  }
  report.llm_calls = budget.llm_calls - llm_calls_before;
  report.prompt_tokens = session_tokens.prompt_tokens;
  report.completion_tokens = session_tokens.completion_tokens;
  return report;
}

}  // namespace sallmf::feedback
