#pragma once

// Small hand-written latent models with known optimal plans.

#include <cmath>

#include "miro/planner/cem.hpp"

namespace toy {

using miro::Shape;
using miro::Tensor;
using miro::model::Moments;

// s' = a, r = -(s - target)^2. Best sequence is the target everywhere.
struct Bandit {
  float target = 0.3f;
  std::size_t latent_dim() const { return 1; }
  std::size_t action_dim() const { return 1; }
  Moments<float> transition(const Tensor<float>&, const Tensor<float>& a) const {
    return {a, Tensor<float>(a.shape(), 0.0f)};
  }
  Tensor<float> reward(const Tensor<float>& s) const {
    Tensor<float> r(Shape{s.dim(0)});
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = -(s[i] - target) * (s[i] - target);
    return r;
  }
};

// 1-D point that moves by half the action; reward peaks at the goal.
struct GoalReach {
  float goal = 0.0f;
  std::size_t latent_dim() const { return 1; }
  std::size_t action_dim() const { return 1; }
  Moments<float> transition(const Tensor<float>& s, const Tensor<float>& a) const {
    Tensor<float> out(s.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] + 0.5f * a[i];
    return {out, Tensor<float>(out.shape(), 0.0f)};
  }
  Tensor<float> reward(const Tensor<float>& s) const {
    Tensor<float> r(Shape{s.dim(0)});
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::exp(-(s[i] - goal) * (s[i] - goal));
    return r;
  }
};

// Every sequence on a uniform grid over [-1, 1]^horizon, `steps` + 1 values per axis.
inline std::vector<miro::planner::ActionSequence> action_grid(std::size_t horizon,
                                                             std::size_t steps) {
  std::vector<miro::planner::ActionSequence> out;
  std::size_t total = 1;
  for (std::size_t k = 0; k < horizon; ++k) total *= steps + 1;
  for (std::size_t code = 0; code < total; ++code) {
    Tensor<float> a(Shape{horizon, 1});
    std::size_t c = code;
    for (std::size_t k = 0; k < horizon; ++k, c /= steps + 1) {
      a[k] = -1.0f + 2.0f * static_cast<float>(c % (steps + 1)) / static_cast<float>(steps);
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace toy
