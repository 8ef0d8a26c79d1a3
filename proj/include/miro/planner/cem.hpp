#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/core/rng.hpp"
#include "miro/model/inference.hpp"

namespace miro::planner {

using model::Moments;

// Anything the planner can roll forward: batched Gaussian transitions over
// N x latent_dim states and batched state-only rewards.
template <typename M>
concept LatentModel = requires(const M& m, const Tensor<float>& s, const Tensor<float>& a) {
  { m.latent_dim() } -> std::convertible_to<std::size_t>;
  { m.action_dim() } -> std::convertible_to<std::size_t>;
  { m.transition(s, a) } -> std::same_as<Moments<float>>;
  { m.reward(s) } -> std::same_as<Tensor<float>>;
};

// Adapter over a trained model.
class LearnedModel {
 public:
  explicit LearnedModel(const model::Model<float>& m) : m_(m) {}
  std::size_t latent_dim() const { return m_.config.latent_dim; }
  std::size_t action_dim() const { return m_.config.action_dim; }
  Moments<float> transition(const Tensor<float>& s, const Tensor<float>& a) const {
    return model::transition(m_, s, a);
  }
  Tensor<float> reward(const Tensor<float>& s) const { return model::reward(m_, s); }

 private:
  const model::Model<float>& m_;
};

struct CEMConfig {
  std::size_t horizon = 12;
  std::size_t population = 100;
  std::size_t elites = 10;
  std::size_t iterations = 5;
  double init_std = 1.0;
  double action_min = -1.0;
  double action_max = 1.0;
  double std_floor = 1e-3;
  // Propagate reparameterized samples instead of means during evaluation.
  bool sampled_rollouts = false;

  void validate() const {
    if (horizon == 0) throw ConfigError("planner horizon must be at least 1");
    if (iterations == 0) throw ConfigError("planner iterations must be at least 1");
    if (population == 0) throw ConfigError("planner population must be positive");
    if (elites == 0 || elites > population) {
      throw ConfigError("planner elites must be in [1, population]");
    }
    if (!(init_std > 0.0)) throw ConfigError("planner init_std must be positive");
    if (!(action_min < action_max)) throw ConfigError("planner action bounds are inverted");
  }
};

// horizon x action_dim, within bounds.
using ActionSequence = Tensor<float>;

// Per-timestep diagonal Gaussian over actions; both tensors horizon x action_dim.
struct PlanDistribution {
  Tensor<float> mean;
  Tensor<float> std;
};

enum class RolloutMode { kMean, kSampled };

// Undiscounted predicted return of each sequence from s0: rewards of the
// h predicted states are summed. All sequences share one horizon. In
// sampled mode candidate j draws its noise from a stream keyed by j, so
// the result does not depend on evaluation order.
template <LatentModel M>
std::vector<double> evaluate_sequences(const M& model, const Tensor<float>& s0,
                                       const std::vector<ActionSequence>& seqs,
                                       RolloutMode mode = RolloutMode::kMean,
                                       std::uint64_t seed = 0) {
  if (seqs.empty()) throw ContractError("evaluate_sequences: no candidate sequences");
  const std::size_t n = seqs.size(), ns = model.latent_dim(), na = model.action_dim();
  if (s0.size() != ns) {
    throw DimensionError("evaluate_sequences: start state " + shape_str(s0.shape()) +
                         " vs latent " + std::to_string(ns));
  }
  const Shape seq_shape = seqs.front().shape();
  if (seq_shape.size() != 2 || seq_shape[1] != na || seq_shape[0] == 0) {
    throw DimensionError("evaluate_sequences: sequence shape " + shape_str(seq_shape));
  }
  for (const auto& s : seqs) {
    if (s.shape() != seq_shape) {
      throw DimensionError("evaluate_sequences: mixed sequence shapes " + shape_str(seq_shape) +
                           " and " + shape_str(s.shape()));
    }
  }
  const std::size_t horizon = seq_shape[0];
  Tensor<float> states(Shape{n, ns});
  for (std::size_t j = 0; j < n; ++j) std::copy_n(s0.data(), ns, states.data() + j * ns);
  std::vector<Rng> noise;
  if (mode == RolloutMode::kSampled) {
    for (std::size_t j = 0; j < n; ++j) noise.emplace_back(mix_seed(seed, j));
  }
  std::vector<double> returns(n, 0.0);
  Tensor<float> actions(Shape{n, na});
  for (std::size_t k = 0; k < horizon; ++k) {
    for (std::size_t j = 0; j < n; ++j) std::copy_n(seqs[j].data() + k * na, na, actions.data() + j * na);
    Moments<float> next = model.transition(states, actions);
    states = std::move(next.mean);
    if (mode == RolloutMode::kSampled) {
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t d = 0; d < ns; ++d)
          states[j * ns + d] += static_cast<float>(noise[j].normal()) * next.std[j * ns + d];
    }
    const Tensor<float> r = model.reward(states);
    for (std::size_t j = 0; j < n; ++j) returns[j] += static_cast<double>(r[j]);
  }
  return returns;
}

// Indices of the `count` highest returns, best first; equal returns keep
// the lower index first.
inline std::vector<std::size_t> select_elites(const std::vector<double>& returns,
                                              std::size_t count) {
  std::vector<std::size_t> order(returns.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
  order.resize(std::min(count, order.size()));
  return order;
}

// Per-timestep mean and (population) std of the given sequences, std floored.
inline PlanDistribution refit(const std::vector<ActionSequence>& elites, double std_floor) {
  if (elites.empty()) throw ContractError("refit: no elites");
  const Shape shape = elites.front().shape();
  PlanDistribution d{Tensor<float>(shape), Tensor<float>(shape)};
  const double n = static_cast<double>(elites.size());
  for (std::size_t i = 0; i < d.mean.size(); ++i) {
    double m = 0.0;
    for (const auto& e : elites) m += e[i];
    m /= n;
    double v = 0.0;
    for (const auto& e : elites) v += (e[i] - m) * (e[i] - m);
    d.mean[i] = static_cast<float>(m);
    d.std[i] = static_cast<float>(std::max(std::sqrt(v / n), std_floor));
  }
  return d;
}

struct CEMResult {
  ActionSequence plan;
  PlanDistribution distribution;
  std::vector<double> elite_mean_returns;  // one per iteration
  double plan_return = 0.0;                // predicted return of `plan`
  std::vector<ActionSequence> last_candidates;
};

// Cross-entropy method. Each iteration samples `population` clamped
// sequences from the current distribution, ranks them together with the
// previous iteration's elites, keeps the top `elites` and refits. Carrying
// elites over makes the elite mean return non-decreasing under mean
// propagation.
template <LatentModel M>
CEMResult cem_plan(const M& model, const Tensor<float>& s0, const CEMConfig& cfg,
                   std::uint64_t seed) {
  cfg.validate();
  const std::size_t na = model.action_dim();
  const Shape shape{cfg.horizon, na};
  const auto lo = static_cast<float>(cfg.action_min), hi = static_cast<float>(cfg.action_max);
  const RolloutMode mode = cfg.sampled_rollouts ? RolloutMode::kSampled : RolloutMode::kMean;

  PlanDistribution dist{Tensor<float>(shape, 0.0f),
                        Tensor<float>(shape, static_cast<float>(cfg.init_std))};
  std::vector<ActionSequence> kept;
  std::vector<double> kept_returns;
  CEMResult result;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Rng rng(mix_seed(seed, it));
    std::vector<ActionSequence> candidates;
    candidates.reserve(cfg.population + kept.size());
    for (std::size_t j = 0; j < cfg.population; ++j) {
      ActionSequence a(shape);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = dist.mean[i] + dist.std[i] * rng.normal();
        a[i] = std::clamp(static_cast<float>(v), lo, hi);
      }
      candidates.push_back(std::move(a));
    }
    std::vector<double> returns =
        evaluate_sequences(model, s0, candidates, mode, mix_seed(seed, 0x1000 + it));
    for (std::size_t j = 0; j < returns.size(); ++j) {
      if (!std::isfinite(returns[j])) {
        throw NumericError("cem_plan: non-finite return for candidate " + std::to_string(j) +
                           " in iteration " + std::to_string(it));
      }
    }
    result.last_candidates = candidates;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      candidates.push_back(kept[j]);
      returns.push_back(kept_returns[j]);
    }
    const auto idx = select_elites(returns, cfg.elites);
    std::vector<ActionSequence> elites;
    std::vector<double> elite_returns;
    double mean_return = 0.0;
    for (std::size_t i : idx) {
      elites.push_back(candidates[i]);
      elite_returns.push_back(returns[i]);
      mean_return += returns[i];
    }
    result.elite_mean_returns.push_back(mean_return / static_cast<double>(idx.size()));
    dist = refit(elites, cfg.std_floor);
    kept = std::move(elites);
    kept_returns = std::move(elite_returns);
  }
  result.plan = dist.mean;
  for (auto& v : result.plan.values()) v = std::clamp(v, lo, hi);
  result.plan_return = evaluate_sequences(model, s0, {result.plan}, mode, seed).front();
  result.distribution = std::move(dist);
  return result;
}

struct MpcStep {
  Tensor<float> action;  // action_dim
  model::Belief<float> belief;
  CEMResult plan;
};

// Plans from the belief sample and returns the first planned action. When
// the observation that follows this action is supplied, the returned belief
// is advanced with it; otherwise it is the input belief.
inline MpcStep mpc_act(const model::Model<float>& m, const model::Belief<float>& belief,
                       const std::optional<Tensor<float>>& next_obs, const CEMConfig& cfg,
                       std::uint64_t seed) {
  LearnedModel lm(m);
  CEMResult plan = cem_plan(lm, belief.sample.reshaped(Shape{m.config.latent_dim}), cfg, seed);
  Tensor<float> action(Shape{m.config.action_dim});
  std::copy_n(plan.plan.data(), action.size(), action.data());
  model::Belief<float> next = belief;
  if (next_obs) {
    model::NoiseStream<float> noise(mix_seed(seed, 0x6f6273));
    next = model::advance_belief(m, belief, action, *next_obs, noise);
  }
  return {std::move(action), std::move(next), std::move(plan)};
}

}  // namespace miro::planner
