#pragma once

// Desk-scale analytic environments: randomized goal-reaching, button and
// drawer manipulation analogues, and planar mazes. Each task provides a
// dense privileged reward (oracle/evaluation only) and a sparse sustained
// success criterion.

#include "sallmf/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sallmf::envs {

enum class TaskKind {
  PointReach,
  ButtonPressLite,
  DrawerOpenLite,
  DrawerCloseLite,
  MazeOpen,
  MazeUMaze,
};

// Axis-aligned wall segment (maze tasks).
struct Wall {
  double x0, y0, x1, y1;
};

// A channel that gets serialized into trajectory text, with the prompt
// description line it carries (numbering is added by the prompt builder).
struct SerializedChannel {
  std::string key;
  SliceRange slice;
  std::string description;
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::PointReach;
  std::shared_ptr<const StateLayout> layout;
  int action_dims = 0;
  int episode_len = 100;
  double success_radius = 0.05;
  std::string task_goal_text;  // inserted into "...of the robot to {goal}."
  std::vector<SerializedChannel> movable_channels;
  std::string target_description;
  std::string generate_characteristics;  // numbered constraint lines for the generation prompt
  std::vector<std::array<double, 2>> coord_bounds;  // per point axis [lo, hi]
  std::vector<Wall> walls;

  int point_dims() const { return layout->point_dims(); }

  void validate() const {
    if (episode_len < 1) throw std::invalid_argument("episode_len must be positive");
    if (success_radius <= 0) throw std::invalid_argument("success_radius must be positive");
    if (static_cast<int>(coord_bounds.size()) != point_dims()) {
      throw std::invalid_argument("coord_bounds must cover each point axis");
    }
  }
};

struct StepResult {
  State next_state;
  double privileged_reward = 0.0;
  bool success = false;
  bool terminal = false;
};

namespace detail {

inline constexpr double kMoveScale = 0.05;
inline constexpr double kGripScale = 0.1;
inline constexpr double kButtonContact = 0.03;
inline constexpr double kDrawerContact = 0.04;
inline constexpr double kButtonPressOffset = 0.0936;
inline constexpr double kDrawerTravel = 0.15;
inline constexpr double kDrawerTravelLimit = 0.2;

inline double clamp_axis(double v, const std::array<double, 2>& b) {
  return std::clamp(v, b[0], b[1]);
}

inline void clamp_point(Eigen::Ref<Vec> p, const std::vector<std::array<double, 2>>& bounds) {
  for (int i = 0; i < p.size(); ++i) p[i] = clamp_axis(p[i], bounds[static_cast<size_t>(i)]);
}

// 2D orientation of (b-a) x (c-a).
inline double orient(double ax, double ay, double bx, double by, double cx, double cy) {
  return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
}

inline bool on_segment(double ax, double ay, double bx, double by, double px, double py) {
  return std::min(ax, bx) - 1e-12 <= px && px <= std::max(ax, bx) + 1e-12 &&
         std::min(ay, by) - 1e-12 <= py && py <= std::max(ay, by) + 1e-12;
}

// Movement segment p->q intersects (or touches) the wall segment.
inline bool segments_intersect(double px, double py, double qx, double qy, const Wall& w) {
  const double d1 = orient(w.x0, w.y0, w.x1, w.y1, px, py);
  const double d2 = orient(w.x0, w.y0, w.x1, w.y1, qx, qy);
  const double d3 = orient(px, py, qx, qy, w.x0, w.y0);
  const double d4 = orient(px, py, qx, qy, w.x1, w.y1);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(w.x0, w.y0, w.x1, w.y1, px, py)) return true;
  if (d2 == 0 && on_segment(w.x0, w.y0, w.x1, w.y1, qx, qy)) return true;
  if (d3 == 0 && on_segment(px, py, qx, qy, w.x0, w.y0)) return true;
  if (d4 == 0 && on_segment(px, py, qx, qy, w.x1, w.y1)) return true;
  return false;
}

inline bool crosses_wall(const TaskSpec& spec, const Vec& from, const Vec& to) {
  for (const auto& w : spec.walls) {
    if (segments_intersect(from[0], from[1], to[0], to[1], w)) return true;
  }
  return false;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec sample_box(std::mt19937_64& rng, const std::vector<std::array<double, 2>>& box) {
  Vec p(static_cast<int>(box.size()));
  for (size_t i = 0; i < box.size(); ++i) p[static_cast<int>(i)] = uniform(rng, box[i][0], box[i][1]);
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Task registry

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {
      "point_reach",      "button_press_lite", "drawer_open_lite",
      "drawer_close_lite", "maze_open",         "maze_umaze"};
  return names;
}

inline TaskSpec make_task(const std::string& name) {
  const std::string dim3 =
      "which is expressed in three-dimensional Cartesian coordinates in the range of [0,1];";
  const std::string dim2 =
      "which is expressed in two-dimensional Cartesian coordinates in the range of [0,1];";
  const std::string tcp_desc =
      "\"tcp\" represents the end position of the robot actuator, " + dim3;

  TaskSpec spec;
  spec.name = name;
  if (name == "point_reach") {
    spec.kind = TaskKind::PointReach;
    spec.layout = StateLayout::reach();
    spec.action_dims = 3;
    spec.success_radius = 0.05;
    spec.task_goal_text = "reach a goal position";
    spec.coord_bounds = {{{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}};
    spec.movable_channels = {{"tcp", spec.layout->tcp, tcp_desc}};
    spec.target_description =
        "\"target\" represents the goal position that the TCP should reach, " + dim3;
    spec.generate_characteristics =
        "(1) The movement of TCP should be smooth, change smoothly, avoid sudden changes in "
        "coordinates and finally the TCP should reach the target;\n"
        "(2) TCP should move to the position of target as quickly as possible, that is, the "
        "coordinates of TCP and target should be at similar values at the end;";
  } else if (name == "button_press_lite" || name == "drawer_open_lite" ||
             name == "drawer_close_lite") {
    spec.layout = StateLayout::manipulation();
    spec.action_dims = 4;
    spec.success_radius = 0.02;
    spec.coord_bounds = {{{-0.5, 0.5}, {0.3, 1.0}, {0.0, 0.6}}};
    std::string obj_desc;
    if (name == "button_press_lite") {
      spec.kind = TaskKind::ButtonPressLite;
      spec.task_goal_text = "press a button";
      obj_desc = "\"obj\" represents the object position that the robot needs to touch, " + dim3;
      spec.target_description =
          "\"target\" represents the position of the target button, " + dim3;
    } else if (name == "drawer_open_lite") {
      spec.kind = TaskKind::DrawerOpenLite;
      spec.task_goal_text = "open a drawer";
      obj_desc = "\"obj\" represents the drawer handle position that the robot needs to grasp, " + dim3;
      spec.target_description =
          "\"target\" represents the position the handle should reach, " + dim3;
    } else {
      spec.kind = TaskKind::DrawerCloseLite;
      spec.task_goal_text = "push and close a drawer";
      obj_desc = "\"obj\" represents the drawer handle position that the robot needs to grasp, " + dim3;
      spec.target_description =
          "\"target\" represents the position the handle should reach, " + dim3;
    }
    spec.movable_channels = {{"tcp", spec.layout->tcp, tcp_desc},
                             {"obj", spec.layout->obj, obj_desc}};
    spec.generate_characteristics =
        "(1) The movement of TCP should be smooth and touch obj as quickly as possible, then "
        "the change of obj should conform to the laws of physics, change smoothly, avoid sudden "
        "changes in coordinates and finally the obj should reach the target;\n"
        "(2) TCP should first move to the position of obj, that is, the coordinates of TCP and "
        "obj should be at similar values, and then push obj to move;";
  } else if (name == "maze_open" || name == "maze_umaze") {
    spec.kind = name == "maze_open" ? TaskKind::MazeOpen : TaskKind::MazeUMaze;
    spec.layout = StateLayout::maze();
    spec.action_dims = 2;
    spec.success_radius = 0.05;
    spec.task_goal_text = "move the point robot to the goal position";
    spec.coord_bounds = {{{-1.0, 1.0}, {-1.0, 1.0}}};
    spec.movable_channels = {
        {"pos", spec.layout->tcp,
         "\"pos\" represents the position of the point robot, " + dim2}};
    spec.target_description = "\"target\" represents the position of the goal, " + dim2;
    spec.generate_characteristics =
        "(1) The movement of pos should be smooth, change smoothly, avoid sudden changes in "
        "coordinates and finally the pos should reach the target;\n"
        "(2) pos should move to the position of target as quickly as possible while staying "
        "inside the maze;";
    if (spec.kind == TaskKind::MazeUMaze) {
      spec.walls = {{-1.0, 0.0, 0.4, 0.0}};
    }
  } else {
    throw std::invalid_argument("unknown task: " + name);
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Reset

inline State reset(const TaskSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vec values = Vec::Zero(spec.layout->total_dims);
  const auto& L = *spec.layout;
  auto set_slice = [&](const SliceRange& r, const Vec& v) {
    values.segment(r.begin, r.size()) = v;
  };

  switch (spec.kind) {
    case TaskKind::PointReach: {
      Vec tcp = detail::sample_box(rng, spec.coord_bounds);
      Vec target = detail::sample_box(rng, spec.coord_bounds);
      set_slice(L.tcp, tcp);
      set_slice(L.target, target);
      break;
    }
    case TaskKind::ButtonPressLite: {
      Vec tcp(3), obj(3);
      tcp << detail::uniform(rng, -0.3, 0.3), detail::uniform(rng, 0.75, 0.95),
          detail::uniform(rng, 0.3, 0.5);
      obj << detail::uniform(rng, -0.25, 0.25), detail::uniform(rng, 0.6, 0.72), 0.115;
      Vec target = obj;
      target[1] += detail::kButtonPressOffset;
      set_slice(L.tcp, tcp);
      values[L.grip.begin] = 1.0;
      set_slice(L.obj, obj);
      set_slice(L.target, target);
      break;
    }
    case TaskKind::DrawerOpenLite:
    case TaskKind::DrawerCloseLite: {
      Vec tcp(3), obj(3);
      tcp << detail::uniform(rng, -0.3, 0.3), detail::uniform(rng, 0.75, 0.95),
          detail::uniform(rng, 0.3, 0.5);
      const bool open = spec.kind == TaskKind::DrawerOpenLite;
      obj << detail::uniform(rng, -0.25, 0.25),
          open ? detail::uniform(rng, 0.7, 0.8) : detail::uniform(rng, 0.5, 0.6), 0.2;
      Vec target = obj;
      target[1] += open ? -detail::kDrawerTravel : detail::kDrawerTravel;
      set_slice(L.tcp, tcp);
      values[L.grip.begin] = 1.0;
      set_slice(L.obj, obj);
      set_slice(L.target, target);
      break;
    }
    case TaskKind::MazeOpen:
    case TaskKind::MazeUMaze: {
      Vec pos(2), target(2);
      if (spec.kind == TaskKind::MazeUMaze) {
        // Start below the wall, goal above it.
        pos << detail::uniform(rng, -0.9, 0.9), detail::uniform(rng, -0.9, -0.1);
        target << detail::uniform(rng, -0.9, 0.9), detail::uniform(rng, 0.1, 0.9);
      } else {
        pos << detail::uniform(rng, -0.9, 0.9), detail::uniform(rng, -0.9, 0.9);
        target << detail::uniform(rng, -0.9, 0.9), detail::uniform(rng, -0.9, 0.9);
      }
      set_slice(L.tcp, pos);
      set_slice(L.target, target);
      break;
    }
  }

  // No history at t=0: previous-step slices equal current-step slices.
  values.segment(L.prev_tcp.begin, L.prev_tcp.size()) = values.segment(L.tcp.begin, L.tcp.size());
  if (L.has_grip()) values[L.prev_grip.begin] = values[L.grip.begin];
  if (L.has_obj()) {
    values.segment(L.prev_obj.begin, L.prev_obj.size()) = values.segment(L.obj.begin, L.obj.size());
  }
  return State(std::move(values), spec.layout);
}

// ---------------------------------------------------------------------------
// Transition (pure).

// Applies task dynamics to one state. Terminal bookkeeping lives in
// Environment; success here means the per-step criterion holds in next_state.
inline StepResult transition(const TaskSpec& spec, const State& state, const Vec& action) {
  if (action.size() != spec.action_dims) {
    throw std::invalid_argument("action dimension mismatch: expected " +
                                std::to_string(spec.action_dims) + ", got " +
                                std::to_string(action.size()));
  }
  if (&state.layout() != spec.layout.get()) {
    throw std::invalid_argument("state does not belong to task " + spec.name);
  }
  Vec a = action.cwiseMin(1.0).cwiseMax(-1.0);
  const auto& L = *spec.layout;
  Vec next = state.values();

  // Shift current-step slices into previous-step slices.
  next.segment(L.prev_tcp.begin, L.prev_tcp.size()) = next.segment(L.tcp.begin, L.tcp.size());
  if (L.has_grip()) next[L.prev_grip.begin] = next[L.grip.begin];
  if (L.has_obj()) {
    next.segment(L.prev_obj.begin, L.prev_obj.size()) = next.segment(L.obj.begin, L.obj.size());
  }

  const Vec tcp = state.slice(L.tcp);
  const Vec target = state.slice(L.target);
  double reward = 0.0;
  bool success = false;

  switch (spec.kind) {
    case TaskKind::PointReach: {
      Vec tcp_next = tcp + detail::kMoveScale * a;
      detail::clamp_point(tcp_next.head(3), spec.coord_bounds);
      next.segment(L.tcp.begin, 3) = tcp_next;
      const double dist = (tcp_next - target).norm();
      reward = -dist;
      success = dist < spec.success_radius;
      break;
    }
    case TaskKind::ButtonPressLite: {
      const Vec obj = state.slice(L.obj);
      Vec tcp_next = tcp + detail::kMoveScale * a.head(3);
      detail::clamp_point(tcp_next.head(3), spec.coord_bounds);
      next[L.grip.begin] = std::clamp(state[L.grip.begin] + detail::kGripScale * a[3], 0.0, 1.0);
      Vec obj_next = obj;
      // Press axis is +y (toward the target); contact is checked pre-move.
      if ((tcp - obj).norm() < detail::kButtonContact && a[1] > 0.0) {
        obj_next[1] = std::min(obj[1] + detail::kMoveScale * a[1], target[1]);
      }
      next.segment(L.tcp.begin, 3) = tcp_next;
      next.segment(L.obj.begin, 3) = obj_next;
      const double obj_dist = (obj_next - target).norm();
      reward = -(tcp_next - obj_next).norm() - 2.0 * obj_dist;
      success = obj_dist < spec.success_radius;
      break;
    }
    case TaskKind::DrawerOpenLite:
    case TaskKind::DrawerCloseLite: {
      const Vec obj = state.slice(L.obj);
      Vec tcp_next = tcp + detail::kMoveScale * a.head(3);
      detail::clamp_point(tcp_next.head(3), spec.coord_bounds);
      next[L.grip.begin] = std::clamp(state[L.grip.begin] + detail::kGripScale * a[3], 0.0, 1.0);
      Vec obj_next = obj;
      // Handle follows the gripper along the pull axis (y) while grasped.
      if ((tcp - obj).norm() < detail::kDrawerContact && a[3] < 0.0) {
        const double slid = obj[1] + (tcp_next[1] - tcp[1]);
        obj_next[1] = std::clamp(slid, target[1] - detail::kDrawerTravelLimit,
                                 target[1] + detail::kDrawerTravelLimit);
      }
      next.segment(L.tcp.begin, 3) = tcp_next;
      next.segment(L.obj.begin, 3) = obj_next;
      const double obj_dist = (obj_next - target).norm();
      reward = -(tcp_next - obj_next).norm() - 2.0 * obj_dist;
      success = obj_dist < spec.success_radius;
      break;
    }
    case TaskKind::MazeOpen:
    case TaskKind::MazeUMaze: {
      Vec pos = tcp;
      Vec candidate = pos + detail::kMoveScale * a;
      detail::clamp_point(candidate.head(2), spec.coord_bounds);
      Vec pos_next = detail::crosses_wall(spec, pos, candidate) ? pos : candidate;
      next.segment(L.tcp.begin, 2) = pos_next;
      const double dist = (pos_next - target).norm();
      reward = -dist;
      success = dist < spec.success_radius;
      break;
    }
  }

  return StepResult{State(std::move(next), spec.layout), reward, success, false};
}

// ---------------------------------------------------------------------------
// Episode-level success: achieved at some step and held through the end.

inline bool episode_success(const std::vector<bool>& success_flags, const TaskSpec& spec) {
  if (static_cast<int>(success_flags.size()) != spec.episode_len) {
    throw std::invalid_argument("success flags must cover the whole episode");
  }
  int first_held = -1;
  for (int i = static_cast<int>(success_flags.size()) - 1; i >= 0; --i) {
    if (!success_flags[static_cast<size_t>(i)]) break;
    first_held = i;
  }
  return first_held >= 0;
}

// ---------------------------------------------------------------------------
// Hand-coded proportional controllers, used as analytic policy oracles in
// evaluation tests and the reward-alignment probe.

inline std::function<Vec(const State&)> scripted_controller(const TaskSpec& spec) {
  auto toward = [](const Vec& diff) {
    return (diff / detail::kMoveScale).cwiseMin(1.0).cwiseMax(-1.0);
  };
  switch (spec.kind) {
    case TaskKind::PointReach:
      return [spec, toward](const State& s) {
        return Vec(toward(s.slice(spec.layout->target) - s.slice(spec.layout->tcp)));
      };
    case TaskKind::MazeOpen:
      return [spec, toward](const State& s) {
        return Vec(toward(s.slice(spec.layout->target) - s.slice(spec.layout->tcp)));
      };
    case TaskKind::MazeUMaze:
      return [spec, toward](const State& s) {
        const Vec pos = s.slice(spec.layout->tcp);
        const Vec target = s.slice(spec.layout->target);
        // Route around the right end of the wall: slide right parallel to it,
        // hop the gap at x ~ 0.7, then head for the goal.
        const bool crossing_needed = pos[1] * target[1] < 0.0;
        if (crossing_needed) {
          Vec waypoint(2);
          if (pos[0] < 0.55) {
            waypoint << 0.7, pos[1];
          } else {
            waypoint << 0.7, target[1] > 0.0 ? 0.15 : -0.15;
          }
          return Vec(toward(waypoint - pos));
        }
        return Vec(toward(target - pos));
      };
    case TaskKind::ButtonPressLite:
      return [spec, toward](const State& s) {
        const Vec tcp = s.slice(spec.layout->tcp);
        const Vec obj = s.slice(spec.layout->obj);
        Vec a = Vec::Zero(4);
        a.head(3) = toward(obj - tcp);
        if ((tcp - obj).norm() < 0.025) a[1] = 1.0;  // in contact: press along +y
        return a;
      };
    case TaskKind::DrawerOpenLite:
    case TaskKind::DrawerCloseLite:
      return [spec, toward](const State& s) {
        const Vec tcp = s.slice(spec.layout->tcp);
        const Vec obj = s.slice(spec.layout->obj);
        const Vec target = s.slice(spec.layout->target);
        Vec a = Vec::Zero(4);
        if ((tcp - obj).norm() >= 0.035) {
          a.head(3) = toward(obj - tcp);
          a[3] = 1.0;  // keep the gripper open on approach
        } else {
          a[0] = std::clamp((obj[0] - tcp[0]) / detail::kMoveScale, -1.0, 1.0);
          a[2] = std::clamp((obj[2] - tcp[2]) / detail::kMoveScale, -1.0, 1.0);
          a[1] = std::clamp((target[1] - obj[1]) / detail::kMoveScale, -1.0, 1.0);
          a[3] = -1.0;  // grasp and pull
        }
        return a;
      };
  }
  throw std::logic_error("scripted_controller: unhandled task kind");
}

// ---------------------------------------------------------------------------
// Stateful wrapper that tracks the step counter for terminal flags.

class Environment {
 public:
  explicit Environment(TaskSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const TaskSpec& spec() const { return spec_; }

  State reset(std::uint64_t seed) {
    step_count_ = 0;
    return envs::reset(spec_, seed);
  }

  StepResult step(const State& state, const Vec& action) {
    StepResult r = transition(spec_, state, action);
    step_count_ += 1;
    r.terminal = step_count_ >= spec_.episode_len;
    return r;
  }

  int step_count() const { return step_count_; }

 private:
  TaskSpec spec_;
  int step_count_ = 0;
};

}  // namespace sallmf::envs
