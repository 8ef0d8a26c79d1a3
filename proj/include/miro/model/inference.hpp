#pragma once

#include <cstdint>

#include "miro/diff/graph.hpp"
#include "miro/model/losses.hpp"
#include "miro/model/networks.hpp"

// Value-level (non-recording) evaluation of a trained model, used while
// acting and planning. Safe to call concurrently on a shared const model.

namespace miro::model {

template <typename T>
struct Moments {
  Tensor<T> mean;
  Tensor<T> std;
};

// Acting-time belief: posterior moments and the reparameterized sample.
template <typename T>
struct Belief {
  Moments<T> dist;
  Tensor<T> sample;  // 1 x n_s
};

template <typename T>
Moments<T> transition(const Model<T>& m, const Tensor<T>& s, const Tensor<T>& a) {
  Graph<T> g(false);
  Net<T> net(g, m);
  auto d = predict(net, g.constant(s), g.constant(a));
  return {d.mean.value(), d.std.value()};
}

template <typename T>
Tensor<T> reward(const Model<T>& m, const Tensor<T>& s) {
  Graph<T> g(false);
  Net<T> net(g, m);
  return predict_reward(net, g.constant(s)).value();
}

template <typename T>
Tensor<T> embed(const Model<T>& m, const Tensor<T>& images) {
  Graph<T> g(false);
  Net<T> net(g, m);
  return encode(net, images).value();
}

template <typename T>
Tensor<T> reconstruct(const Model<T>& m, const Tensor<T>& s) {
  Graph<T> g(false);
  Net<T> net(g, m);
  return decode(net, g.constant(s)).value();
}

namespace detail {

template <typename T>
Belief<T> posterior_belief(Net<T>& net, const Tensor<T>& obs, const DiagGaussian<T>& prior,
                           NoiseStream<T>& noise) {
  Var<T> z = encode(net, obs);
  auto post = filter(net, z, prior);
  auto b = sample_belief(post, noise);
  return {{post.mean.value(), post.std.value()}, b.sample.value()};
}

}  // namespace detail

// Filters the first observation against a standard-normal prior.
template <typename T>
Belief<T> initial_belief(const Model<T>& m, const Tensor<T>& obs, NoiseStream<T>& noise) {
  Graph<T> g(false);
  Net<T> net(g, m);
  const std::size_t n = m.config.latent_dim;
  DiagGaussian<T> prior{g.constant(Tensor<T>(Shape{1, n}, T{0})),
                        g.constant(Tensor<T>(Shape{1, n}, T{1}))};
  return detail::posterior_belief(net, obs, prior, noise);
}

// predict(s, a) then filter with the new observation.
template <typename T>
Belief<T> advance_belief(const Model<T>& m, const Belief<T>& belief, const Tensor<T>& action,
                         const Tensor<T>& obs, NoiseStream<T>& noise) {
  Graph<T> g(false);
  Net<T> net(g, m);
  auto prior = predict(net, g.constant(belief.sample),
                       g.constant(action.reshaped(Shape{1, action.size()})));
  return detail::posterior_belief(net, obs, prior, noise);
}

}  // namespace miro::model
