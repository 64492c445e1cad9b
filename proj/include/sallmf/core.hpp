#pragma once

// Core domain types: state layouts, trajectory segments, preference triples,
// and the label conventions every other header builds on.
//
// Label convention used throughout:
//   y = 0.0  -> segment 0 preferred
//   y = 1.0  -> segment 1 preferred
//   y = 0.5  -> equal preference

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace sallmf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Small result type for operations whose failure is data, not a bug.

template <typename T, typename E>
class Result {
 public:
  static Result success(T value) { return Result(std::move(value)); }
  static Result failure(E error) { return Result(std::move(error)); }

  bool ok() const { return std::holds_alternative<T>(v_); }
  const T& value() const { return std::get<T>(v_); }
  T& value() { return std::get<T>(v_); }
  const E& error() const { return std::get<E>(v_); }

 private:
  explicit Result(T value) : v_(std::move(value)) {}
  explicit Result(E error) : v_(std::move(error)) {}
  std::variant<T, E> v_;
};

// ---------------------------------------------------------------------------
// State layout

struct SliceRange {
  int begin = 0;
  int end = 0;  // exclusive

  int size() const { return end - begin; }
  bool present() const { return end > begin; }
};

// Declares how a flat state vector decomposes into named coordinate slices.
// Current-step slices come first, then their previous-step mirrors, then the
// target (which has no previous-step copy).
struct StateLayout {
  int total_dims = 0;
  SliceRange tcp;        // controllable point, 2 or 3 dims
  SliceRange grip;       // optional, 1 dim, openness in [0,1]
  SliceRange obj;        // optional, same dims as tcp
  SliceRange prev_tcp;
  SliceRange prev_grip;
  SliceRange prev_obj;
  SliceRange target;     // 2 or 3 dims

  bool has_grip() const { return grip.present(); }
  bool has_obj() const { return obj.present(); }
  int point_dims() const { return tcp.size(); }

  // (3+1+3)*2+3 = 17 dims: tcp, grip, obj at current and previous step, target.
  static std::shared_ptr<const StateLayout> manipulation() {
    static const auto layout = std::make_shared<const StateLayout>(StateLayout{
        17,
        {0, 3},    // tcp
        {3, 4},    // grip
        {4, 7},    // obj
        {7, 10},   // prev_tcp
        {10, 11},  // prev_grip
        {11, 14},  // prev_obj
        {14, 17},  // target
    });
    return layout;
  }

  // 3*2+3 = 9 dims: tcp at current and previous step, target.
  static std::shared_ptr<const StateLayout> reach() {
    static const auto layout = std::make_shared<const StateLayout>(StateLayout{
        9, {0, 3}, {}, {}, {3, 6}, {}, {}, {6, 9}});
    return layout;
  }

  // 2*2+2 = 6 dims: planar position at current and previous step, target.
  static std::shared_ptr<const StateLayout> maze() {
    static const auto layout = std::make_shared<const StateLayout>(StateLayout{
        6, {0, 2}, {}, {}, {2, 4}, {}, {}, {4, 6}});
    return layout;
  }

  // Slices must be disjoint and cover [0, total_dims) exactly.
  void validate() const {
    std::vector<bool> covered(static_cast<size_t>(total_dims), false);
    auto mark = [&](const SliceRange& r) {
      for (int i = r.begin; i < r.end; ++i) {
        if (i < 0 || i >= total_dims || covered[static_cast<size_t>(i)]) {
          throw std::invalid_argument("StateLayout slices overlap or exceed total_dims");
        }
        covered[static_cast<size_t>(i)] = true;
      }
    };
    mark(tcp);
    mark(grip);
    mark(obj);
    mark(prev_tcp);
    mark(prev_grip);
    mark(prev_obj);
    mark(target);
    for (bool c : covered) {
      if (!c) throw std::invalid_argument("StateLayout slices do not cover total_dims");
    }
    if (tcp.size() != prev_tcp.size() || grip.size() != prev_grip.size() ||
        obj.size() != prev_obj.size()) {
      throw std::invalid_argument("StateLayout previous-step slices must mirror current-step slices");
    }
  }
};

// ---------------------------------------------------------------------------
// State

class State {
 public:
  State(Vec values, std::shared_ptr<const StateLayout> layout)
      : values_(std::move(values)), layout_(std::move(layout)) {
    if (!layout_) throw std::invalid_argument("State requires a layout");
    if (values_.size() != layout_->total_dims) {
      throw std::invalid_argument("State length does not match layout.total_dims");
    }
    if (!values_.allFinite()) {
      throw std::invalid_argument("State contains non-finite values");
    }
  }

  const Vec& values() const { return values_; }
  const StateLayout& layout() const { return *layout_; }
  const std::shared_ptr<const StateLayout>& layout_ptr() const { return layout_; }

  Eigen::VectorXd slice(const SliceRange& r) const {
    return values_.segment(r.begin, r.size());
  }

  double operator[](int i) const { return values_[i]; }
  int dims() const { return static_cast<int>(values_.size()); }

 private:
  Vec values_;
  std::shared_ptr<const StateLayout> layout_;
};

// ---------------------------------------------------------------------------
// Privileged-reward access control.
//
// Privileged (predefined) rewards travel with segments and replay transitions
// but are readable only inside an explicit oracle scope. Learner code never
// opens such a scope, so an accidental read throws instead of leaking the
// environment reward into training.

class PrivilegedAccess {
 public:
  class Scope {
   public:
    Scope() : prev_(flag()) { flag() = true; }
    ~Scope() { flag() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    bool prev_;
  };

  static bool allowed() { return flag(); }

  static void require() {
    if (!flag()) {
      throw std::logic_error(
          "privileged rewards accessed outside an oracle scope");
    }
  }

 private:
  static bool& flag() {
    thread_local bool allowed = false;
    return allowed;
  }
};

// ---------------------------------------------------------------------------
// TrajectorySegment

class TrajectorySegment {
 public:
  TrajectorySegment(std::vector<State> states, std::vector<Vec> actions,
                    std::vector<double> privileged_rewards,
                    std::int64_t episode_id, std::int64_t start_step,
                    bool synthetic = false)
      : states_(std::move(states)),
        actions_(std::move(actions)),
        privileged_(std::move(privileged_rewards)),
        episode_id_(episode_id),
        start_step_(start_step),
        synthetic_(synthetic) {
    if (states_.empty()) throw std::invalid_argument("segment needs at least one state");
    if (privileged_.size() != states_.size()) {
      throw std::invalid_argument("segment privileged rewards must match state count");
    }
    if (!actions_.empty() && actions_.size() != states_.size()) {
      throw std::invalid_argument("segment actions must be empty or match state count");
    }
    const StateLayout* layout = &states_.front().layout();
    for (const auto& s : states_) {
      if (&s.layout() != layout) {
        throw std::invalid_argument("segment states must share one layout");
      }
    }
  }

  int length() const { return static_cast<int>(states_.size()); }
  const std::vector<State>& states() const { return states_; }
  const std::vector<Vec>& actions() const { return actions_; }
  const StateLayout& layout() const { return states_.front().layout(); }
  std::int64_t episode_id() const { return episode_id_; }
  std::int64_t start_step() const { return start_step_; }
  bool synthetic() const { return synthetic_; }

  // Oracle / metrics interfaces only.
  std::span<const double> privileged_rewards() const {
    PrivilegedAccess::require();
    return privileged_;
  }

  double privileged_return() const {
    PrivilegedAccess::require();
    double sum = 0.0;
    for (double r : privileged_) sum += r;
    return sum;
  }

 private:
  std::vector<State> states_;
  std::vector<Vec> actions_;
  std::vector<double> privileged_;
  std::int64_t episode_id_;
  std::int64_t start_step_;
  bool synthetic_;
};

// ---------------------------------------------------------------------------
// PreferenceTriple

enum class TripleSource { Sampled, Augmented };

enum class PreferredSide { First, Second, Equal };

inline const char* to_string(PreferredSide s) {
  switch (s) {
    case PreferredSide::First: return "first";
    case PreferredSide::Second: return "second";
    case PreferredSide::Equal: return "equal";
  }
  return "?";
}

struct PreferenceTriple {
  TrajectorySegment seg0;
  TrajectorySegment seg1;
  double label;  // in {0.0, 0.5, 1.0}
  TripleSource source;

  PreferenceTriple(TrajectorySegment s0, TrajectorySegment s1, double y,
                   TripleSource src)
      : seg0(std::move(s0)), seg1(std::move(s1)), label(y), source(src) {
    if (label != 0.0 && label != 0.5 && label != 1.0) {
      throw std::invalid_argument("preference label must be 0, 0.5 or 1");
    }
    if (source == TripleSource::Augmented) {
      if (label != 0.0) {
        throw std::invalid_argument("augmented triples must carry label 0");
      }
      if (!seg0.synthetic()) {
        throw std::invalid_argument("augmented triples must put the generated segment first");
      }
    }
    if (seg0.length() != seg1.length()) {
      throw std::invalid_argument("triple segments must share length");
    }
  }
};

// Maps a label to the preferred side. Total over {0, 0.5, 1}; anything else
// is an invalid-label error.
inline PreferredSide preferred_index(double label) {
  if (label == 0.0) return PreferredSide::First;
  if (label == 1.0) return PreferredSide::Second;
  if (label == 0.5) return PreferredSide::Equal;
  throw std::invalid_argument("invalid preference label: " + std::to_string(label));
}

inline PreferredSide preferred_index(const PreferenceTriple& triple) {
  return preferred_index(triple.label);
}

}  // namespace sallmf
