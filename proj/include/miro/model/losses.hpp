#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/core/rng.hpp"
#include "miro/diff/ops.hpp"
#include "miro/model/networks.hpp"

namespace miro::model {

// Replayable standard-normal stream. Zero mode yields zeros, which turns
// every reparameterized sample into its mean.
template <typename T>
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed, bool zero = false) : rng_(seed), zero_(zero) {}
  static NoiseStream zeros() { return NoiseStream(0, true); }

  Tensor<T> next(const Shape& shape) {
    Tensor<T> t(shape);
    if (!zero_) {
      for (auto& v : t.values()) v = static_cast<T>(rng_.normal());
    }
    return t;
  }

  bool zero() const { return zero_; }

 private:
  Rng rng_;
  bool zero_;
};

template <typename T>
struct LatentBelief {
  DiagGaussian<T> dist;
  Var<T> sample;
  Tensor<T> noise;  // the draw that produced `sample`
};

template <typename T>
LatentBelief<T> sample_belief(const DiagGaussian<T>& dist, NoiseStream<T>& noise) {
  Tensor<T> eps = noise.next(dist.mean.shape());
  Var<T> s = reparam_sample(dist, eps);
  return {dist, s, std::move(eps)};
}

// Iterates predict + reparameterized sampling over `actions` (h entries of
// N x action_dim) without filtering. Beliefs are returned in time order.
template <typename T>
std::vector<LatentBelief<T>> open_loop_rollout(Net<T>& net, Var<T> s,
                                               const std::vector<Var<T>>& actions,
                                               NoiseStream<T>& noise) {
  if (actions.empty()) throw ContractError("open_loop_rollout: horizon must be at least 1");
  std::vector<LatentBelief<T>> out;
  out.reserve(actions.size());
  for (const Var<T>& a : actions) {
    out.push_back(sample_belief(predict(net, s, a), noise));
    s = out.back().sample;
  }
  return out;
}

// InfoNCE term from a B x B score matrix whose diagonal holds the positive
// pairs: mean_i [ M_ii - logsumexp_j M_ij ]. Always in [-ln B, 0].
template <typename T>
Var<T> nce_from_scores(Var<T> scores) {
  return mean(sub(diagonal(scores), logsumexp_rows(scores)));
}

// Bilinear critic scores s_pred[i]^T W_h z_pos[j]; row i's negatives are the
// other rows' encodings.
template <typename T>
Var<T> nce_term(Net<T>& net, Var<T> s_pred, Var<T> z_pos, std::size_t horizon) {
  if (!net.has(critic_name(horizon))) {
    throw ConfigError("no critic configured for horizon " + std::to_string(horizon));
  }
  if (s_pred.shape().size() != 2 || z_pos.shape().size() != 2 || s_pred.dim(0) == 0 ||
      s_pred.dim(0) != z_pos.dim(0)) {
    throw DimensionError("nce_term: predictions " + shape_str(s_pred.shape()) +
                         " vs encodings " + shape_str(z_pos.shape()));
  }
  Var<T> projected = matmul(s_pred, net.p(critic_name(horizon)));
  return nce_from_scores(matmul(projected, transpose(z_pos)));
}

// B sequences of L steps: L + 1 observations, L actions, L rewards, stored
// time-major. Reward t follows action t, so it belongs to state t + 1.
template <typename T>
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  Tensor<T> observations;  // (L + 1) x B x C x H x W
  Tensor<T> actions;       // L x B x A
  Tensor<T> rewards;       // L x B

  template <typename U>
  SequenceBatch<U> cast() const {
    return {batch, length, observations.template cast<U>(), actions.template cast<U>(),
            rewards.template cast<U>()};
  }
};

struct LossWeights {
  double kl = 1.0;      // lambda_1
  double reward = 10.0;  // lambda_2
};

enum class Objective { kMiro, kRecon };

inline std::string objective_name(Objective o) { return o == Objective::kMiro ? "miro" : "recon"; }

// Plain numbers for logging.
struct LossBreakdown {
  double total = 0.0;
  std::map<std::size_t, double> nce;  // per horizon, raw (<= 0)
  double kl_filter = 0.0;
  double reward_nll = 0.0;
  double recon = 0.0;
  std::size_t batch = 0;

  double nce_sum() const {
    double s = 0.0;
    for (const auto& [h, v] : nce) s += v;
    return s;
  }
  // Sum over horizons of nce + ln B, the bounded MI estimate.
  double nce_bound_sum() const {
    return nce_sum() + static_cast<double>(nce.size()) * std::log(static_cast<double>(batch));
  }
  bool all_finite() const {
    bool ok = std::isfinite(total) && std::isfinite(kl_filter) && std::isfinite(reward_nll) &&
              std::isfinite(recon);
    for (const auto& [h, v] : nce) ok = ok && std::isfinite(v);
    return ok;
  }
};

template <typename T>
struct LossTerms {
  Var<T> total;
  std::map<std::size_t, Var<T>> nce;
  Var<T> kl_filter;
  Var<T> reward_nll;
  Var<T> recon;
  bool has_recon = false;
  std::size_t batch = 0;

  LossBreakdown values() const {
    LossBreakdown b;
    b.total = static_cast<double>(total.value().item());
    for (const auto& [h, v] : nce) b.nce[h] = static_cast<double>(v.value().item());
    b.kl_filter = static_cast<double>(kl_filter.value().item());
    b.reward_nll = static_cast<double>(reward_nll.value().item());
    if (has_recon) b.recon = static_cast<double>(recon.value().item());
    b.batch = batch;
    return b;
  }
};

// Filtered forward pass shared by both objectives.
template <typename T>
struct FilteredPass {
  Var<T> embeddings;                  // (L + 1)B x n_z, time-major
  std::vector<LatentBelief<T>> posterior;  // L + 1 entries of B x n_s
  Var<T> kl_filter;                   // mean KL(posterior || prior)
  Var<T> reward_nll;
};

template <typename T>
FilteredPass<T> filtered_pass(Net<T>& net, const SequenceBatch<T>& batch, NoiseStream<T>& noise) {
  const ModelConfig& cfg = net.config();
  const std::size_t b = batch.batch, l = batch.length;
  const std::size_t c = cfg.image_channels, s = cfg.image_size, a = cfg.action_dim;
  if (b == 0 || l == 0) throw ContractError("empty sequence batch");
  if (batch.observations.shape() != Shape{l + 1, b, c, s, s} ||
      batch.actions.shape() != Shape{l, b, a} || batch.rewards.shape() != Shape{l, b}) {
    throw DimensionError("sequence batch shapes " + shape_str(batch.observations.shape()) +
                         ", " + shape_str(batch.actions.shape()) + ", " +
                         shape_str(batch.rewards.shape()) + " do not match the model");
  }
  Graph<T>& g = net.graph();
  FilteredPass<T> out;
  out.embeddings = encode(net, batch.observations.reshaped(Shape{(l + 1) * b, c, s, s}));
  Var<T> actions = g.constant(batch.actions.reshaped(Shape{l * b, a}));

  DiagGaussian<T> prior{g.constant(Tensor<T>(Shape{b, cfg.latent_dim}, T{0})),
                        g.constant(Tensor<T>(Shape{b, cfg.latent_dim}, T{1}))};
  std::vector<Var<T>> kls;
  for (std::size_t t = 0; t <= l; ++t) {
    if (t > 0) {
      prior = predict(net, out.posterior.back().sample, slice_rows(actions, (t - 1) * b, t * b));
    }
    Var<T> z = slice_rows(out.embeddings, t * b, (t + 1) * b);
    DiagGaussian<T> post = filter(net, z, prior);
    kls.push_back(kl_diag_gaussian_rows(post, prior));
    out.posterior.push_back(sample_belief(post, noise));
  }
  out.kl_filter = mean(concat_rows(kls));

  std::vector<Var<T>> next_states;
  for (std::size_t t = 1; t <= l; ++t) next_states.push_back(out.posterior[t].sample);
  Var<T> predicted = predict_reward(net, concat_rows(next_states));
  out.reward_nll =
      reward_penalty(predicted, g.constant(batch.rewards.reshaped(Shape{l * b})));
  return out;
}

// Minimized objective: -sum_h nce_h + l1 * KL + l2 * reward penalty.
// For horizon h, every filtered sample s_t with t + h <= L is rolled open
// loop through a_t .. a_{t+h-1}; the positive is z_{t+h} of the same
// sequence and the negatives are z_{t+h} of the other sequences.
template <typename T>
LossTerms<T> miro_loss(Net<T>& net, const SequenceBatch<T>& batch, const LossWeights& w,
                       const std::vector<std::size_t>& horizons, NoiseStream<T>& noise) {
  const std::size_t b = batch.batch, l = batch.length;
  for (std::size_t h : horizons) {
    if (h == 0 || h >= l) {
      throw ContractError("miro_loss: sequence length " + std::to_string(l) +
                          " must exceed every NCE horizon (got " + std::to_string(h) + ")");
    }
  }
  FilteredPass<T> pass = filtered_pass(net, batch, noise);
  Graph<T>& g = net.graph();
  const std::size_t a = net.config().action_dim;
  Var<T> actions = g.constant(batch.actions.reshaped(Shape{l * b, a}));

  LossTerms<T> terms;
  terms.batch = b;
  Var<T> objective = g.constant(Tensor<T>::scalar(T{0}));
  for (std::size_t h : horizons) {
    const std::size_t starts = l - h + 1;
    std::vector<Var<T>> sources;
    for (std::size_t t = 0; t < starts; ++t) sources.push_back(pass.posterior[t].sample);
    std::vector<Var<T>> steps;
    for (std::size_t k = 0; k < h; ++k) {
      steps.push_back(slice_rows(actions, k * b, (k + starts) * b));
    }
    auto rollout = open_loop_rollout(net, concat_rows(sources), steps, noise);
    if (!net.has(critic_name(h))) {
      throw ConfigError("no critic configured for horizon " + std::to_string(h));
    }
    Var<T> projected = matmul(rollout.back().sample, net.p(critic_name(h)));
    std::vector<Var<T>> per_start;
    for (std::size_t t = 0; t < starts; ++t) {
      Var<T> pred = slice_rows(projected, t * b, (t + 1) * b);
      Var<T> pos = slice_rows(pass.embeddings, (t + h) * b, (t + h + 1) * b);
      per_start.push_back(reshape(nce_from_scores(matmul(pred, transpose(pos))), Shape{1}));
    }
    Var<T> nce = reshape(mean(concat_rows(per_start)), Shape{});
    terms.nce[h] = nce;
    objective = sub(objective, nce);
  }
  terms.kl_filter = pass.kl_filter;
  terms.reward_nll = pass.reward_nll;
  terms.recon = g.constant(Tensor<T>::scalar(T{0}));
  terms.total = add(add(objective, scale(pass.kl_filter, static_cast<T>(w.kl))),
                    scale(pass.reward_nll, static_cast<T>(w.reward)));
  return terms;
}

// Reconstruction baseline: the NCE term is replaced by
// mean_t 0.5 * ||o_t - decode(s_t)||^2 (pixel sum), same filtered pass.
template <typename T>
LossTerms<T> recon_loss(Net<T>& net, const SequenceBatch<T>& batch, const LossWeights& w,
                        NoiseStream<T>& noise) {
  if (!net.config().decoder) throw ConfigError("recon_loss: model has no decoder");
  FilteredPass<T> pass = filtered_pass(net, batch, noise);
  Graph<T>& g = net.graph();
  const ModelConfig& cfg = net.config();
  const std::size_t frames = (batch.length + 1) * batch.batch;
  std::vector<Var<T>> states;
  for (const auto& belief : pass.posterior) states.push_back(belief.sample);
  Var<T> recon_img = decode(net, concat_rows(states));
  Var<T> target = g.constant(batch.observations.reshaped(
      Shape{frames, cfg.image_channels, cfg.image_size, cfg.image_size}));
  LossTerms<T> terms;
  terms.batch = batch.batch;
  terms.recon = scale(sum(square(sub(target, recon_img))), T{0.5} / static_cast<T>(frames));
  terms.has_recon = true;
  terms.kl_filter = pass.kl_filter;
  terms.reward_nll = pass.reward_nll;
  terms.total = add(add(terms.recon, scale(pass.kl_filter, static_cast<T>(w.kl))),
                    scale(pass.reward_nll, static_cast<T>(w.reward)));
  return terms;
}

template <typename T>
LossTerms<T> objective_loss(Net<T>& net, Objective objective, const SequenceBatch<T>& batch,
                            const LossWeights& w, const std::vector<std::size_t>& horizons,
                            NoiseStream<T>& noise) {
  return objective == Objective::kMiro ? miro_loss(net, batch, w, horizons, noise)
                                       : recon_loss(net, batch, w, noise);
}

}  // namespace miro::model
