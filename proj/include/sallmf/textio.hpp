#pragma once

// Trajectory-to-text serialization, prompt construction, and strict parsing
// of judge replies and generated trajectories.
//
// The text grammar: a brace block with one bracketed coordinate list per
// movable channel ("tcp"/"pos", optionally "obj") followed by a single
// "target" point, every number fixed to 4 decimals. Only current-step slices
// are serialized; previous-step slices and grip never appear in prompts, so
// reconstruction shifts generated points into the previous-step slices and
// copies grip from the template segment.

#include "sallmf/core.hpp"
#include "sallmf/envs.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sallmf::textio {

// ---------------------------------------------------------------------------
// Fixed 4-decimal coordinate formatting (half-even via IEEE default rounding).

inline std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  std::string s(buf);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

inline std::string format_point(const Vec& p) {
  std::string s = "[";
  for (int i = 0; i < p.size(); ++i) {
    if (i > 0) s += ",";
    s += format_coord(p[i]);
  }
  s += "]";
  return s;
}

// ---------------------------------------------------------------------------
// Types

struct TrajectoryText {
  std::string raw;                // the brace block, ending "};"
  int H = 0;
  std::vector<std::string> keys;  // movable channel keys, serialization order
};

enum class JudgeVerdict { First, Second, Unsure };

inline const char* to_string(JudgeVerdict v) {
  switch (v) {
    case JudgeVerdict::First: return "first";
    case JudgeVerdict::Second: return "second";
    case JudgeVerdict::Unsure: return "unsure";
  }
  return "?";
}

struct JudgeReply {
  std::string raw;
  JudgeVerdict verdict = JudgeVerdict::Unsure;
};

enum class JudgeParseError { NoVerdictLine };

enum class GenerateParseError {
  NoBlockFound,
  WrongStepCount,
  MalformedNumber,
  OutOfBounds,
  WrongInitialState,
};

inline const char* to_string(GenerateParseError e) {
  switch (e) {
    case GenerateParseError::NoBlockFound: return "no-block-found";
    case GenerateParseError::WrongStepCount: return "wrong-step-count";
    case GenerateParseError::MalformedNumber: return "malformed-number";
    case GenerateParseError::OutOfBounds: return "out-of-bounds";
    case GenerateParseError::WrongInitialState: return "wrong-initial-state";
  }
  return "?";
}

struct GeneratedTrajectory {
  std::vector<std::pair<std::string, std::vector<Vec>>> channels;
  Vec target;
};

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline constexpr int kPointsPerLine = 4;

inline void append_point_list(std::string& out, const std::vector<Vec>& points) {
  for (size_t i = 0; i < points.size(); ++i) {
    if (i % kPointsPerLine == 0) out += "        ";
    out += format_point(points[i]);
    if (i + 1 < points.size()) out += ",";
    if (i % kPointsPerLine == kPointsPerLine - 1 || i + 1 == points.size()) out += "\n";
  }
}

}  // namespace detail

inline std::string trajectory_block(const std::vector<std::pair<std::string, std::vector<Vec>>>& channels,
                                    const Vec& target) {
  std::string out = "{\n";
  for (const auto& [key, points] : channels) {
    out += "    \"" + key + "\":[\n";
    detail::append_point_list(out, points);
    out += "    ],\n";
  }
  out += "    \"target\":\n        " + format_point(target) + ";\n};";
  return out;
}

inline TrajectoryText serialize_segment(const TrajectorySegment& segment,
                                        const envs::TaskSpec& task) {
  if (&segment.layout() != task.layout.get()) {
    throw std::invalid_argument("segment layout does not match task " + task.name);
  }
  std::vector<std::pair<std::string, std::vector<Vec>>> channels;
  for (const auto& ch : task.movable_channels) {
    std::vector<Vec> points;
    points.reserve(static_cast<size_t>(segment.length()));
    for (const auto& s : segment.states()) points.push_back(s.slice(ch.slice));
    channels.emplace_back(ch.key, std::move(points));
  }
  const Vec target = segment.states().front().slice(task.layout->target);
  TrajectoryText text;
  text.raw = trajectory_block(channels, target);
  text.H = segment.length();
  for (const auto& ch : task.movable_channels) text.keys.push_back(ch.key);
  return text;
}

// The "started with" block of the generation prompt: one point per channel.
inline std::string first_state_block(const std::vector<std::pair<std::string, Vec>>& first_points,
                                     const Vec& target) {
  std::string out = "{\n";
  for (const auto& [key, point] : first_points) {
    out += "    \"" + key + "\":[\n        " + format_point(point) + ",\n    ],\n";
  }
  out += "    \"target\":\n        " + format_point(target) + ";\n}";
  return out;
}

// ---------------------------------------------------------------------------
// Prompt templates (version 1). Stored copies live under assets/prompts/.

inline constexpr std::string_view kJudgeTemplateV1 =
    "Suppose you are a good robot trajectory evaluator. Now you need to evaluate the quality of the robot's motion trajectory.\n"
    "The goal is to control the Tool Center Point (TCP) of the robot to {{GOAL}}.\n"
    "The following are two trajectories, which contain {{STEPS}} steps, where:\n"
    "{{CHANNEL_DESCRIPTIONS}}\n"
    "\n"
    "Trajectory 1:\n"
    "{{TRAJ1}}\n"
    "Trajectory 2:\n"
    "{{TRAJ2}}\n"
    "\n"
    "Please answer the following two questions step by step: \n"
    "1. Is there any difference between Trajectory 1 and Trajectory 2 in terms of achieving the goal? \n"
    "Reply your analysis.\n"
    "2. Which trajectory you think do better with achieving the goal?\n"
    "Reply a single line of 1 if you think the goal is better achieved in Trajectory 1, or 2 if it is better achieved in Trajectory 2. Reply 0 if the text is unsure or there is no significantly difference.\n";

inline constexpr std::string_view kGenerateTemplateV1 =
    "Based on your analysis, Can you generate a new trajectory based on the initial state of that good trajectory that you think can better achieve the goal?\n"
    "The generated trajectory should meet the following characteristics:\n"
    "{{CHARACTERISTICS}}\n"
    "(3) Output a trajectory that conforms to the input trajectory format, the step size should be {{STEPS}} and the trajectory should be started with\n"
    "{{FIRST_STATE}}\n"
    "Replay only the generate better trajectory. \n";

// Optional one-shot demonstration appended to the judge prompt.
inline constexpr std::string_view kJudgeOneShotExampleV1 =
    "\nHere is an example of a good answer for reference:\n"
    "1. Analysis:\n"
    "    Trajectory 1:\n"
    "        The 'tcp' positions gradually change over the 10 steps but remain relatively close to each other and are consistent in their path.\n"
    "        The 'obj' position remains constant at [0.0451,0.7300,0.0900] throughout the trajectory.\n"
    "        The 'target' is at [0.0451,0.5400,0.0900], indicating that to reach the target, the TCP should be pulling the object handle slightly downward considering the target's Y-coordinate.\n"
    "    Trajectory 2:\n"
    "    ...\n"
    "2. Result\n"
    "        Based on the analysis, Trajectory 2 appears to make a more concerted effort to move towards the target's Y-coordinate, albeit with some fluctuations in the path.\n"
    "    Therefore:\n"
    "        *2*\n";

struct PromptTemplates {
  std::string judge{kJudgeTemplateV1};
  std::string generate{kGenerateTemplateV1};
  std::string one_shot_example{kJudgeOneShotExampleV1};

  static const PromptTemplates& v1() {
    static const PromptTemplates t;
    return t;
  }
};

namespace detail {

inline void replace_all(std::string& text, std::string_view placeholder, std::string_view value) {
  size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
}

}  // namespace detail

inline std::string channel_description_lines(const envs::TaskSpec& task) {
  std::string out;
  int idx = 1;
  for (const auto& ch : task.movable_channels) {
    out += "(" + std::to_string(idx++) + ") " + ch.description + "\n";
  }
  out += "(" + std::to_string(idx) + ") " + task.target_description;
  return out;
}

inline std::string build_judge_prompt(const TrajectoryText& traj1, const TrajectoryText& traj2,
                                      const envs::TaskSpec& task, int H,
                                      const PromptTemplates& templates = PromptTemplates::v1(),
                                      bool one_shot = false) {
  std::string prompt = templates.judge;
  detail::replace_all(prompt, "{{GOAL}}", task.task_goal_text);
  detail::replace_all(prompt, "{{STEPS}}", std::to_string(H));
  detail::replace_all(prompt, "{{CHANNEL_DESCRIPTIONS}}", channel_description_lines(task));
  detail::replace_all(prompt, "{{TRAJ1}}", traj1.raw);
  detail::replace_all(prompt, "{{TRAJ2}}", traj2.raw);
  if (one_shot) prompt += templates.one_shot_example;
  return prompt;
}

// ---------------------------------------------------------------------------
// Tolerant block scanner, shared by the validators and the mock providers.
// Accepts both "," and ";" separators and arbitrary whitespace.

struct ScannedBlock {
  // key -> list of points, in order of appearance
  std::vector<std::pair<std::string, std::vector<Vec>>> channels;
};

namespace detail {

inline bool parse_number(std::string_view token, double& out) {
  size_t b = 0, e = token.size();
  while (b < e && std::isspace(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(token[e - 1]))) --e;
  if (b == e) return false;
  const char* first = token.data() + b;
  const char* last = token.data() + e;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) return false;
  return std::isfinite(out);
}

// Parses "[a,b,c]" starting at text[pos] == '['. Returns point or nullopt.
inline std::optional<Vec> parse_point_group(std::string_view text, size_t& pos) {
  size_t close = text.find(']', pos);
  if (close == std::string_view::npos) return std::nullopt;
  std::string_view inner = text.substr(pos + 1, close - pos - 1);
  std::vector<double> values;
  size_t start = 0;
  while (start <= inner.size()) {
    size_t comma = inner.find(',', start);
    std::string_view token =
        comma == std::string_view::npos ? inner.substr(start) : inner.substr(start, comma - start);
    double v = 0.0;
    if (!parse_number(token, v)) return std::nullopt;
    values.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  pos = close + 1;
  Vec p(static_cast<int>(values.size()));
  for (size_t i = 0; i < values.size(); ++i) p[static_cast<int>(i)] = values[i];
  return p;
}

}  // namespace detail

// Scans every `"key": [...]` entry inside `text`. A key's value may be a
// single point or a bracketed list of points.
inline Result<ScannedBlock, GenerateParseError> scan_block(std::string_view text) {
  ScannedBlock block;
  size_t pos = 0;
  while (true) {
    size_t quote = text.find('"', pos);
    if (quote == std::string_view::npos) break;
    size_t end_quote = text.find('"', quote + 1);
    if (end_quote == std::string_view::npos) break;
    std::string key(text.substr(quote + 1, end_quote - quote - 1));
    pos = end_quote + 1;
    while (pos < text.size() && (std::isspace(static_cast<unsigned char>(text[pos])) || text[pos] == ':')) {
      ++pos;
    }
    if (pos >= text.size() || text[pos] != '[') continue;

    std::vector<Vec> points;
    // Peek inside: nested list of points, or a single point.
    size_t inner = pos + 1;
    while (inner < text.size() && std::isspace(static_cast<unsigned char>(text[inner]))) ++inner;
    if (inner < text.size() && text[inner] == '[') {
      // List of points until the matching close of the outer bracket.
      size_t cursor = inner;
      while (cursor < text.size()) {
        if (text[cursor] == '[') {
          auto p = detail::parse_point_group(text, cursor);
          if (!p) return Result<ScannedBlock, GenerateParseError>::failure(GenerateParseError::MalformedNumber);
          points.push_back(std::move(*p));
        } else if (text[cursor] == ']') {
          ++cursor;
          break;
        } else if (std::isspace(static_cast<unsigned char>(text[cursor])) || text[cursor] == ',' ||
                   text[cursor] == ';') {
          ++cursor;
        } else {
          return Result<ScannedBlock, GenerateParseError>::failure(GenerateParseError::MalformedNumber);
        }
      }
      pos = cursor;
    } else {
      size_t cursor = pos;
      auto p = detail::parse_point_group(text, cursor);
      if (!p) return Result<ScannedBlock, GenerateParseError>::failure(GenerateParseError::MalformedNumber);
      points.push_back(std::move(*p));
      pos = cursor;
    }
    block.channels.emplace_back(std::move(key), std::move(points));
  }
  return Result<ScannedBlock, GenerateParseError>::success(std::move(block));
}

// Extracts the outermost brace block of `text` (first '{' to last '}').
inline std::optional<std::string_view> outer_brace_block(std::string_view text) {
  size_t open = text.find('{');
  size_t close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close <= open) {
    return std::nullopt;
  }
  return text.substr(open, close - open + 1);
}

// ---------------------------------------------------------------------------
// Judge reply parsing: scan lines from the end; the first line whose trimmed
// content is exactly "0", "1" or "2" (markdown emphasis allowed) decides.

inline Result<JudgeReply, JudgeParseError> parse_judge_reply(const std::string& raw) {
  auto classify = [](std::string_view line) -> std::optional<JudgeVerdict> {
    size_t b = 0, e = line.size();
    auto strippable = [](char c) {
      return std::isspace(static_cast<unsigned char>(c)) || c == '*' || c == '_' || c == '`';
    };
    while (b < e && strippable(line[b])) ++b;
    while (e > b && strippable(line[e - 1])) --e;
    std::string_view t = line.substr(b, e - b);
    if (t == "0") return JudgeVerdict::Unsure;
    if (t == "1") return JudgeVerdict::First;
    if (t == "2") return JudgeVerdict::Second;
    return std::nullopt;
  };

  size_t end = raw.size();
  while (end > 0) {
    size_t begin = raw.rfind('\n', end - 1);
    size_t line_start = begin == std::string::npos ? 0 : begin + 1;
    if (auto verdict = classify(std::string_view(raw).substr(line_start, end - line_start))) {
      return Result<JudgeReply, JudgeParseError>::success(JudgeReply{raw, *verdict});
    }
    if (begin == std::string::npos) break;
    end = begin;
  }
  return Result<JudgeReply, JudgeParseError>::failure(JudgeParseError::NoVerdictLine);
}

// ---------------------------------------------------------------------------
// Generated-trajectory parsing and validation.

inline constexpr double kBoundsMargin = 1.0;
inline constexpr double kFirstStateTolerance = 5e-4;

inline Result<GeneratedTrajectory, GenerateParseError> parse_generated_trajectory(
    const std::string& raw, const envs::TaskSpec& task, int H, const State& required_first_state) {
  using R = Result<GeneratedTrajectory, GenerateParseError>;

  auto block_text = outer_brace_block(raw);
  if (!block_text) return R::failure(GenerateParseError::NoBlockFound);

  auto scanned = scan_block(*block_text);
  if (!scanned.ok()) return R::failure(scanned.error());

  auto find_channel = [&](const std::string& key) -> const std::vector<Vec>* {
    for (const auto& [k, pts] : scanned.value().channels) {
      if (k == key) return &pts;
    }
    return nullptr;
  };

  const int dims = task.point_dims();
  auto in_bounds = [&](const Vec& p) {
    for (int i = 0; i < dims; ++i) {
      const auto& b = task.coord_bounds[static_cast<size_t>(i)];
      if (p[i] < b[0] - kBoundsMargin || p[i] > b[1] + kBoundsMargin) return false;
    }
    return true;
  };

  GeneratedTrajectory gen;
  for (const auto& ch : task.movable_channels) {
    const auto* points = find_channel(ch.key);
    if (points == nullptr || static_cast<int>(points->size()) != H) {
      return R::failure(GenerateParseError::WrongStepCount);
    }
    for (const auto& p : *points) {
      if (p.size() != dims) return R::failure(GenerateParseError::MalformedNumber);
      if (!in_bounds(p)) return R::failure(GenerateParseError::OutOfBounds);
    }
    const Vec required = required_first_state.slice(ch.slice);
    if (((*points)[0] - required).lpNorm<Eigen::Infinity>() > kFirstStateTolerance) {
      return R::failure(GenerateParseError::WrongInitialState);
    }
    gen.channels.emplace_back(ch.key, *points);
  }

  const auto* target_points = find_channel("target");
  if (target_points == nullptr || target_points->empty()) {
    return R::failure(GenerateParseError::WrongStepCount);
  }
  const Vec& target = target_points->front();
  if (target.size() != dims) return R::failure(GenerateParseError::MalformedNumber);
  if (!in_bounds(target)) return R::failure(GenerateParseError::OutOfBounds);
  const Vec required_target = required_first_state.slice(task.layout->target);
  if ((target - required_target).lpNorm<Eigen::Infinity>() > kFirstStateTolerance) {
    return R::failure(GenerateParseError::WrongInitialState);
  }
  gen.target = target;
  return R::success(std::move(gen));
}

// ---------------------------------------------------------------------------
// Generation prompt. The first-state block comes from the better trajectory's
// own serialized text, so the reply contract is self-consistent.

inline std::string build_generate_prompt(const TrajectoryText& better_text,
                                         const envs::TaskSpec& task, int H,
                                         const PromptTemplates& templates = PromptTemplates::v1()) {
  auto scanned = scan_block(better_text.raw);
  if (!scanned.ok()) {
    throw std::invalid_argument("build_generate_prompt: better trajectory text does not scan");
  }
  std::vector<std::pair<std::string, Vec>> first_points;
  Vec target;
  for (const auto& [key, points] : scanned.value().channels) {
    if (points.empty()) continue;
    if (key == "target") {
      target = points.front();
    } else {
      first_points.emplace_back(key, points.front());
    }
  }
  if (target.size() == 0) {
    throw std::invalid_argument("build_generate_prompt: trajectory text lacks a target");
  }

  std::string prompt = templates.generate;
  detail::replace_all(prompt, "{{CHARACTERISTICS}}", task.generate_characteristics);
  detail::replace_all(prompt, "{{STEPS}}", std::to_string(H));
  detail::replace_all(prompt, "{{FIRST_STATE}}", first_state_block(first_points, target));
  return prompt;
}

// ---------------------------------------------------------------------------
// Reconstruction of a state-based segment from a validated generation.

inline TrajectorySegment generated_to_segment(const GeneratedTrajectory& gen,
                                              const TrajectorySegment& template_seg) {
  const auto& layout = template_seg.layout();
  const int H = template_seg.length();
  const auto layout_ptr = template_seg.states().front().layout_ptr();

  std::vector<State> states;
  states.reserve(static_cast<size_t>(H));
  const State& first_template = template_seg.states().front();
  const Vec target = first_template.slice(layout.target);

  // gen.channels order mirrors task.movable_channels: tcp first, then obj.
  const std::vector<Vec>* tcp_points = &gen.channels.front().second;
  const std::vector<Vec>* obj_points = nullptr;
  if (layout.has_obj()) {
    for (const auto& [key, pts] : gen.channels) {
      if (key == "obj") obj_points = &pts;
    }
    if (obj_points == nullptr) {
      throw std::invalid_argument("generated trajectory lacks the obj channel");
    }
  }

  for (int t = 0; t < H; ++t) {
    Vec values = Vec::Zero(layout.total_dims);
    values.segment(layout.tcp.begin, layout.tcp.size()) = (*tcp_points)[static_cast<size_t>(t)];
    if (layout.has_obj()) {
      values.segment(layout.obj.begin, layout.obj.size()) = (*obj_points)[static_cast<size_t>(t)];
    }
    if (layout.has_grip()) {
      values[layout.grip.begin] = template_seg.states()[static_cast<size_t>(t)][layout.grip.begin];
      values[layout.prev_grip.begin] =
          template_seg.states()[static_cast<size_t>(t)][layout.prev_grip.begin];
    }
    if (t == 0) {
      values.segment(layout.prev_tcp.begin, layout.prev_tcp.size()) =
          first_template.slice(layout.prev_tcp);
      if (layout.has_obj()) {
        values.segment(layout.prev_obj.begin, layout.prev_obj.size()) =
            first_template.slice(layout.prev_obj);
      }
    } else {
      values.segment(layout.prev_tcp.begin, layout.prev_tcp.size()) =
          (*tcp_points)[static_cast<size_t>(t - 1)];
      if (layout.has_obj()) {
        values.segment(layout.prev_obj.begin, layout.prev_obj.size()) =
            (*obj_points)[static_cast<size_t>(t - 1)];
      }
    }
    values.segment(layout.target.begin, layout.target.size()) = target;
    states.emplace_back(std::move(values), layout_ptr);
  }

  return TrajectorySegment(std::move(states), {}, std::vector<double>(static_cast<size_t>(H), 0.0),
                           template_seg.episode_id(), template_seg.start_step(),
                           /*synthetic=*/true);
}

}  // namespace sallmf::textio
