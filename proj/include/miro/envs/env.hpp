#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/core/rng.hpp"
#include "miro/diff/tensor.hpp"

namespace miro::envs {

enum class Task { kPointMass, kPendulum };

inline std::string task_name(Task t) {
  return t == Task::kPointMass ? "pointmass" : "pendulum";
}

inline Task parse_task(const std::string& s) {
  if (s == "pointmass") return Task::kPointMass;
  if (s == "pendulum") return Task::kPendulum;
  throw ConfigError("unknown task '" + s + "' (expected pointmass or pendulum)");
}

struct EnvConfig {
  Task task = Task::kPendulum;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t episode_len = 100;
  std::size_t distractors = 0;
  // Side length of a distractor sprite in pixels; 0 means image_size / 8.
  std::size_t distractor_size = 0;
  std::uint64_t dynamics_seed = 0;
  std::uint64_t distractor_seed = 0;

  std::size_t sprite_side() const {
    return distractor_size ? distractor_size : std::max<std::size_t>(2, image_size / 8);
  }
  std::size_t action_dim() const { return task == Task::kPointMass ? 2 : 1; }

  void validate() const {
    if (channels != 3) throw ConfigError("only 3-channel rendering is supported");
    if (image_size < 8) throw ConfigError("image_size must be at least 8");
    if (episode_len == 0) throw ConfigError("episode_len must be positive");
    if (sprite_side() > image_size) throw ConfigError("distractor sprite larger than image");
  }
};

// 3 x S x S image, channel-major, values in [0, 1].
using Observation = Tensor<float>;

// Hidden simulator state. Point mass: x, y, vx, vy. Pendulum: angle from
// upright, angular velocity.
struct TrueState {
  Task task = Task::kPendulum;
  std::vector<double> values;

  bool operator==(const TrueState&) const = default;
};

// Top-left pixel corner of a distractor sprite.
struct SpritePos {
  int row = 0;
  int col = 0;
  bool operator==(const SpritePos&) const = default;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

namespace physics {
inline constexpr double kDt = 0.05;
inline constexpr double kDrag = 0.95;
inline constexpr double kGravity = 10.0;
inline constexpr double kMass = 1.0;
inline constexpr double kLength = 1.0;
inline constexpr double kMaxTorque = 2.0;
inline constexpr double kPointMassGoalX = 0.5;
inline constexpr double kPointMassGoalY = 0.0;
// Pendulum bob radius in world units (the world is [-1, 1]^2).
inline constexpr double kBobRadius = 0.75;
}  // namespace physics

using Color = std::array<float, 3>;

inline constexpr Color kAgentColor{1.0f, 1.0f, 1.0f};
inline constexpr Color kGoalColor{0.0f, 1.0f, 1.0f};
inline constexpr std::array<Color, 4> kDistractorPalette{{
    {1.0f, 0.0f, 0.0f},  // red disc
    {0.0f, 1.0f, 0.0f},  // green square
    {0.0f, 0.0f, 1.0f},  // blue disc
    {1.0f, 1.0f, 0.0f},  // yellow square
}};

inline bool distractor_is_disc(std::size_t index) { return index % 2 == 0; }

// Agent disc radius in pixels.
inline double agent_radius(std::size_t image_size) {
  return static_cast<double>(image_size) / 10.0;
}

// World [-1, 1]^2 (y up) onto pixel coordinates, inset by the agent radius so
// the agent sprite never leaves the frame. Returns (row, col) of the point.
inline std::pair<double, double> world_to_pixel(double x, double y, std::size_t image_size) {
  const double s = static_cast<double>(image_size);
  const double margin = agent_radius(image_size);
  const double span = s - 2.0 * margin;
  return {margin + (1.0 - y) / 2.0 * span, margin + (x + 1.0) / 2.0 * span};
}

// World position of the agent sprite.
inline std::pair<double, double> agent_position(const TrueState& s) {
  if (s.task == Task::kPointMass) return {s.values[0], s.values[1]};
  return {physics::kBobRadius * std::sin(s.values[0]),
          physics::kBobRadius * std::cos(s.values[0])};
}

inline std::pair<double, double> goal_position(Task task) {
  if (task == Task::kPointMass) return {physics::kPointMassGoalX, physics::kPointMassGoalY};
  return {0.0, physics::kBobRadius};
}

namespace detail {

inline void paint(Observation& img, std::size_t s, int r, int c, const Color& color) {
  if (r < 0 || c < 0 || r >= static_cast<int>(s) || c >= static_cast<int>(s)) return;
  const std::size_t plane = s * s;
  const std::size_t off = static_cast<std::size_t>(r) * s + static_cast<std::size_t>(c);
  for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + off] = color[ch];
}

// Pixels whose centers lie within `radius` of (row, col).
inline void paint_disc(Observation& img, std::size_t s, double row, double col, double radius,
                       const Color& color) {
  const int r0 = static_cast<int>(std::floor(row - radius));
  const int r1 = static_cast<int>(std::ceil(row + radius));
  const int c0 = static_cast<int>(std::floor(col - radius));
  const int c1 = static_cast<int>(std::ceil(col + radius));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double dr = r + 0.5 - row, dc = c + 0.5 - col;
      if (dr * dr + dc * dc <= radius * radius) paint(img, s, r, c, color);
    }
  }
}

inline void paint_square(Observation& img, std::size_t s, int row, int col, int side,
                         const Color& color) {
  for (int r = row; r < row + side; ++r)
    for (int c = col; c < col + side; ++c) paint(img, s, r, c, color);
}

}  // namespace detail

// Deterministic rasterization: black background, distractors, goal, agent.
inline Observation render(const EnvConfig& cfg, const TrueState& state,
                          std::span<const SpritePos> distractors) {
  const std::size_t s = cfg.image_size;
  Observation img(Shape{3, s, s}, 0.0f);
  const int side = static_cast<int>(cfg.sprite_side());
  for (std::size_t i = 0; i < distractors.size(); ++i) {
    const Color& color = kDistractorPalette[i % kDistractorPalette.size()];
    const SpritePos& p = distractors[i];
    if (distractor_is_disc(i)) {
      detail::paint_disc(img, s, p.row + side / 2.0, p.col + side / 2.0, side / 2.0, color);
    } else {
      detail::paint_square(img, s, p.row, p.col, side, color);
    }
  }
  const auto [gx, gy] = goal_position(state.task);
  const auto [grow, gcol] = world_to_pixel(gx, gy, s);
  detail::paint_square(img, s, static_cast<int>(std::lround(grow - side / 2.0)),
                       static_cast<int>(std::lround(gcol - side / 2.0)), side, kGoalColor);
  const auto [ax, ay] = agent_position(state);
  const auto [arow, acol] = world_to_pixel(ax, ay, s);
  detail::paint_disc(img, s, arow, acol, agent_radius(s), kAgentColor);
  return img;
}

inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

// One environment instance. The dynamics stream seeds the initial state;
// the distractor stream is separate, so the physical trajectory under a
// fixed action sequence does not depend on distractor settings.
class Env {
 public:
  static std::pair<Env, Observation> reset(const EnvConfig& cfg) {
    cfg.validate();
    Env env(cfg);
    Observation obs = env.observe();
    return {std::move(env), std::move(obs)};
  }

  StepResult step(std::span<const float> action) {
    if (done()) throw ContractError("step after episode end");
    if (action.size() != cfg_.action_dim()) {
      throw DimensionError("action has " + std::to_string(action.size()) +
                           " entries, task needs " + std::to_string(cfg_.action_dim()));
    }
    using namespace physics;
    double reward = 0.0;
    auto& v = state_.values;
    if (cfg_.task == Task::kPointMass) {
      for (int d = 0; d < 2; ++d) {
        const double a = std::clamp(static_cast<double>(action[d]), -1.0, 1.0);
        v[2 + d] = (v[2 + d] + a * kDt) * kDrag;
        v[d] += v[2 + d] * kDt;
        if (v[d] > 1.0) {
          v[d] = 2.0 - v[d];
          v[2 + d] = -v[2 + d];
        } else if (v[d] < -1.0) {
          v[d] = -2.0 - v[d];
          v[2 + d] = -v[2 + d];
        }
      }
      const double dx = v[0] - kPointMassGoalX, dy = v[1] - kPointMassGoalY;
      const double diag = 2.0 * std::numbers::sqrt2;
      reward = std::max(0.0, 1.0 - std::sqrt(dx * dx + dy * dy) / diag);
    } else {
      const double torque = std::clamp(static_cast<double>(action[0]), -1.0, 1.0) * kMaxTorque;
      const double acc = 3.0 * std::sin(v[0]) * kGravity / (2.0 * kLength) +
                         3.0 * torque / (kMass * kLength * kLength);
      v[1] += acc * kDt;
      v[0] = wrap_angle(v[0] + v[1] * kDt);
      reward = (std::cos(v[0]) + 1.0) / 2.0;
    }
    ++steps_;
    redraw_distractors();
    return StepResult{observe(), reward, done()};
  }

  StepResult step(const Tensor<float>& action) { return step(action.values()); }

  TrueState true_state() const { return state_; }

  // Test hook: overwrite the hidden state (e.g. to start at the goal).
  void set_true_state(const TrueState& s) {
    if (s.task != cfg_.task || s.values.size() != state_.values.size()) {
      throw ContractError("state does not match task");
    }
    state_ = s;
  }

  const std::vector<SpritePos>& distractor_positions() const { return distractors_; }
  Observation observe() const { return render(cfg_, state_, distractors_); }

  const EnvConfig& config() const { return cfg_; }
  std::size_t steps() const { return steps_; }
  bool done() const { return steps_ >= cfg_.episode_len; }
  std::size_t action_dim() const { return cfg_.action_dim(); }

 private:
  explicit Env(const EnvConfig& cfg)
      : cfg_(cfg),
        dynamics_rng_(mix_seed(cfg.dynamics_seed, 0x64796e)),
        distractor_rng_(mix_seed(cfg.distractor_seed, 0x647374)) {
    state_.task = cfg.task;
    if (cfg.task == Task::kPointMass) {
      const double x = dynamics_rng_.uniform(-1.0, 1.0);
      const double y = dynamics_rng_.uniform(-1.0, 1.0);
      state_.values = {x, y, 0.0, 0.0};
    } else {
      state_.values = {dynamics_rng_.uniform(-0.1, 0.1), 0.0};
    }
    redraw_distractors();
  }

  void redraw_distractors() {
    distractors_.resize(cfg_.distractors);
    const std::uint64_t span = cfg_.image_size - cfg_.sprite_side() + 1;
    for (auto& p : distractors_) {
      p.row = static_cast<int>(distractor_rng_.index(span));
      p.col = static_cast<int>(distractor_rng_.index(span));
    }
  }

  EnvConfig cfg_;
  TrueState state_;
  Rng dynamics_rng_;
  Rng distractor_rng_;
  std::vector<SpritePos> distractors_;
  std::size_t steps_ = 0;
};

// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const Observation& img, const std::string& path) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw DimensionError("write_ppm: expected 3 x H x W, got " + shape_str(img.shape()));
  }
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(img[(ch * h + r) * w + c], 0.0f, 1.0f);
        out.put(static_cast<char>(std::lround(v * 255.0f)));
      }
    }
  }
}

}  // namespace miro::envs
