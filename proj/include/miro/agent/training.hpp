#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "miro/agent/optimizer.hpp"
#include "miro/agent/replay.hpp"
#include "miro/envs/env.hpp"
#include "miro/model/checkpoint.hpp"
#include "miro/model/inference.hpp"
#include "miro/model/losses.hpp"
#include "miro/planner/cem.hpp"

namespace miro::agent {

// Passing this as the exploration std selects uniform random actions.
inline constexpr double kRandomPolicy = std::numeric_limits<double>::infinity();

// Rolls one episode from a freshly reset env. With a finite explore_std the
// first planned action gets N(0, explore_std) noise and is clamped to the
// planner bounds; the belief is advanced with the executed action.
inline Episode collect_episode(envs::Env env, envs::Observation first_obs,
                               const model::Model<float>* params,
                               const planner::CEMConfig& planner_cfg, double explore_std,
                               std::uint64_t seed) {
  if (env.steps() != 0) throw ContractError("collect_episode needs a freshly reset env");
  const bool random = std::isinf(explore_std);
  if (!random && params == nullptr) throw ContractError("planning policy needs a model");
  if (!random && !(explore_std >= 0.0)) throw ConfigError("explore_std must be non-negative");
  const std::size_t na = env.action_dim();
  const auto lo = static_cast<float>(planner_cfg.action_min);
  const auto hi = static_cast<float>(planner_cfg.action_max);

  Rng act_rng(mix_seed(seed, 0x616374));
  model::NoiseStream<float> belief_noise(mix_seed(seed, 0x62656c));
  Episode ep;
  ep.observations.push_back(std::move(first_obs));
  model::Belief<float> belief;
  if (!random) {
    const auto& o = ep.observations.back();
    belief = model::initial_belief(*params, o.reshaped(Shape{1, o.dim(0), o.dim(1), o.dim(2)}),
                                   belief_noise);
  }
  while (!env.done()) {
    const std::size_t t = env.steps();
    Tensor<float> action(Shape{na});
    if (random) {
      for (auto& a : action.values()) a = static_cast<float>(act_rng.uniform(-1.0, 1.0));
    } else {
      action = planner::mpc_act(*params, belief, std::nullopt, planner_cfg, mix_seed(seed, t))
                   .action;
      for (auto& a : action.values()) {
        a = std::clamp(static_cast<float>(a + explore_std * act_rng.normal()), lo, hi);
      }
    }
    auto res = env.step(action);
    if (!random) {
      const auto& o = res.observation;
      belief = model::advance_belief(*params, belief, action,
                                     o.reshaped(Shape{1, o.dim(0), o.dim(1), o.dim(2)}),
                                     belief_noise);
    }
    ep.actions.push_back(std::move(action));
    ep.rewards.push_back(res.reward);
    ep.observations.push_back(std::move(res.observation));
  }
  ep.validate();
  return ep;
}

inline Episode collect_episode(const envs::EnvConfig& env_cfg, const model::Model<float>* params,
                               const planner::CEMConfig& planner_cfg, double explore_std,
                               std::uint64_t seed) {
  auto [env, obs] = envs::Env::reset(env_cfg);
  return collect_episode(std::move(env), std::move(obs), params, planner_cfg, explore_std, seed);
}

struct TrainSettings {
  model::Objective objective = model::Objective::kMiro;
  model::LossWeights weights;
  std::vector<std::size_t> horizons{1, 2, 3};
  double clip_norm = 100.0;
};

struct StepReport {
  model::LossBreakdown loss;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

inline std::string describe(const model::LossBreakdown& b) {
  std::ostringstream os;
  os << "total=" << b.total;
  for (const auto& [h, v] : b.nce) os << " nce[" << h << "]=" << v;
  os << " kl_filter=" << b.kl_filter << " reward_nll=" << b.reward_nll << " recon=" << b.recon;
  return os.str();
}

// One gradient update on `batch`.
inline StepReport train_step(model::Model<float>& m, AdamState<float>& opt,
                             const model::SequenceBatch<float>& batch, const TrainSettings& s,
                             std::uint64_t noise_seed) {
  Graph<float> g;
  model::Net<float> net(g, m);
  model::NoiseStream<float> noise(noise_seed);
  auto terms = model::objective_loss(net, s.objective, batch, s.weights, s.horizons, noise);
  StepReport rep;
  rep.loss = terms.values();
  if (!rep.loss.all_finite()) {
    throw NumericError("non-finite loss at optimizer step " + std::to_string(opt.step + 1) + ": " +
                       describe(rep.loss));
  }
  m.params.zero_grads();
  g.backward(terms.total, m.params);
  rep.grad_norm = clip_grad_norm(m.params, s.clip_norm);
  if (!std::isfinite(rep.grad_norm)) {
    throw NumericError("non-finite gradient norm at optimizer step " +
                       std::to_string(opt.step + 1) + ": " + describe(rep.loss));
  }
  rep.clipped = rep.grad_norm > s.clip_norm;
  adam_update(m.params, opt);
  return rep;
}

struct Schedule {
  std::size_t seed_episodes = 5;
  std::size_t episodes = 50;
  std::size_t train_steps = 100;  // per collected episode
  std::size_t batch = 16;
  std::size_t chunk = 16;
  std::size_t replay_capacity = ReplayBuffer::kUnbounded;
};

struct TrainingConfig {
  envs::EnvConfig env;
  model::ModelConfig model;
  TrainSettings train;
  AdamConfig adam;
  planner::CEMConfig planner;
  Schedule schedule;
  double explore_std = 0.3;
  bool record_wall_clock = false;
};

enum class Event { kTrain, kEpisode };

struct LogRow {
  Event event = Event::kTrain;
  std::uint64_t step = 0;         // optimizer steps so far
  std::uint64_t episode_idx = 0;  // episodes collected so far (train) or this episode's index
  model::LossBreakdown loss;      // train rows
  double episode_return = 0.0;    // episode rows
  double wall_ms = 0.0;
};

using LogSink = std::function<void(const LogRow&)>;

// Derives the env seeds of episode `k` of a run.
inline envs::EnvConfig episode_env(const envs::EnvConfig& base, std::uint64_t seed,
                                   std::uint64_t k) {
  envs::EnvConfig c = base;
  c.dynamics_seed = mix_seed(mix_seed(seed, 0x656e76), k);
  c.distractor_seed = mix_seed(mix_seed(seed, 0x647374), k);
  return c;
}

struct TrainingResult {
  model::Model<float> model;
  ReplayBuffer buffer;
  std::vector<LogRow> log;
  std::uint64_t optimizer_steps = 0;
};

// Seed episodes with the random policy, then alternate model updates and
// planning episodes. Rows go to `sink` as they are produced.
inline TrainingResult run_training(const TrainingConfig& cfg, std::uint64_t seed,
                                   const LogSink& sink = {},
                                   const std::string& checkpoint_path = {}) {
  cfg.env.validate();
  cfg.model.validate();
  cfg.planner.validate();
  if (cfg.model.action_dim != cfg.env.action_dim()) {
    throw ConfigError("model action_dim " + std::to_string(cfg.model.action_dim) +
                      " does not match the task's " + std::to_string(cfg.env.action_dim()));
  }
  if (cfg.model.image_size != cfg.env.image_size ||
      cfg.model.image_channels != cfg.env.channels) {
    throw ConfigError("model image geometry does not match the environment");
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!cfg.record_wall_clock) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  TrainingResult r{model::init_model<float>(cfg.model, mix_seed(seed, 0x6d6f64)),
                   ReplayBuffer(cfg.schedule.replay_capacity), {}, 0};
  AdamState<float> opt(r.model.params, cfg.adam);
  std::uint64_t episode_idx = 0;
  auto emit = [&](LogRow row) {
    row.wall_ms = elapsed();
    if (sink) sink(row);
    r.log.push_back(std::move(row));
  };
  auto add_episode = [&](Episode ep) {
    LogRow row;
    row.event = Event::kEpisode;
    row.step = opt.step;
    row.episode_idx = episode_idx;
    row.episode_return = ep.total_return();
    r.buffer.add(std::move(ep));
    ++episode_idx;
    emit(row);
  };

  for (std::size_t k = 0; k < cfg.schedule.seed_episodes; ++k) {
    add_episode(collect_episode(episode_env(cfg.env, seed, episode_idx), nullptr, cfg.planner,
                                kRandomPolicy, mix_seed(mix_seed(seed, 0x706f6c), episode_idx)));
  }
  for (std::size_t k = 0; k < cfg.schedule.episodes; ++k) {
    for (std::size_t i = 0; i < cfg.schedule.train_steps; ++i) {
      const std::uint64_t step_seed = mix_seed(mix_seed(seed, 0x747261), opt.step);
      auto batch = sample_chunks(r.buffer, cfg.schedule.batch, cfg.schedule.chunk, step_seed);
      auto rep = train_step(r.model, opt, batch, cfg.train, mix_seed(step_seed, 1));
      LogRow row;
      row.event = Event::kTrain;
      row.step = opt.step;
      row.episode_idx = episode_idx;
      row.loss = rep.loss;
      emit(row);
    }
    add_episode(collect_episode(episode_env(cfg.env, seed, episode_idx), &r.model, cfg.planner,
                                cfg.explore_std,
                                mix_seed(mix_seed(seed, 0x706f6c), episode_idx)));
  }
  r.optimizer_steps = opt.step;
  if (!checkpoint_path.empty()) model::save_checkpoint(r.model.params, checkpoint_path);
  return r;
}

// Mean episode return of the uniform random policy.
inline std::vector<double> random_policy_returns(const envs::EnvConfig& env, std::size_t episodes,
                                                 std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t k = 0; k < episodes; ++k) {
    out.push_back(collect_episode(episode_env(env, seed, k), nullptr, planner::CEMConfig{},
                                  kRandomPolicy, mix_seed(mix_seed(seed, 0x72616e), k))
                      .total_return());
  }
  return out;
}

}  // namespace miro::agent
