#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/core/rng.hpp"
#include "miro/diff/graph.hpp"
#include "miro/diff/ops.hpp"
#include "miro/diff/param_store.hpp"

namespace miro::model {

struct ConvSpec {
  std::size_t channels = 32;
  std::size_t kernel = 4;
  std::size_t stride = 2;
};

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t image_channels = 3;
  std::size_t action_dim = 1;
  std::size_t latent_dim = 30;  // n_s
  std::size_t embed_dim = 30;   // n_z
  std::size_t hidden = 64;
  std::vector<ConvSpec> encoder = {{32, 4, 2}, {64, 4, 2}, {64, 4, 2}};
  std::vector<std::size_t> nce_horizons = {1, 2, 3};
  bool decoder = false;
  double min_log_std = -5.0;
  double max_log_std = 2.0;

  // Spatial extent after each encoder layer; front() is the input size.
  std::vector<std::size_t> feature_sizes() const {
    std::vector<std::size_t> sizes{image_size};
    for (const auto& c : encoder) {
      const std::size_t in = sizes.back();
      if (c.kernel == 0 || c.stride == 0 || c.kernel > in) {
        throw ConfigError("encoder layer with kernel " + std::to_string(c.kernel) +
                          " does not fit a " + std::to_string(in) + " pixel input");
      }
      sizes.push_back((in - c.kernel) / c.stride + 1);
    }
    return sizes;
  }

  std::size_t flat_features() const {
    const std::size_t s = feature_sizes().back();
    const std::size_t c = encoder.empty() ? image_channels : encoder.back().channels;
    return c * s * s;
  }

  void validate() const {
    if (latent_dim == 0 || embed_dim == 0 || hidden == 0 || action_dim == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (!(min_log_std < max_log_std)) throw ConfigError("log-std bounds are inverted");
    for (std::size_t h : nce_horizons) {
      if (h == 0) throw ConfigError("NCE horizons start at 1");
    }
    feature_sizes();
  }
};

// Learned functions plus their shape description.
template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  template <typename U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }
};

inline std::string critic_name(std::size_t horizon) {
  return "critic/h" + std::to_string(horizon);
}

namespace detail {

template <typename T>
void add_dense(ParamStore<T>& store, Rng& rng, const std::string& prefix, std::size_t in,
               std::size_t out, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor<T> w(Shape{in, out});
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  store.add(prefix + "/w", std::move(w));
  store.add(prefix + "/b", Tensor<T>(Shape{out}));
}

// Output layer starts small so Gaussian heads begin near unit std.
template <typename T>
void add_mlp(ParamStore<T>& store, Rng& rng, const std::string& prefix, std::size_t in,
             std::size_t hidden, std::size_t out, double out_gain = 1.0) {
  add_dense(store, rng, prefix + "/l0", in, hidden);
  add_dense(store, rng, prefix + "/l1", hidden, hidden);
  add_dense(store, rng, prefix + "/out", hidden, out, out_gain);
}

template <typename T>
Tensor<T> uniform_kernel(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> w(std::move(shape));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  return w;
}

}  // namespace detail

// Glorot-uniform weights, zero biases.
template <typename T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656c));
  Model<T> m{cfg, {}};
  auto& p = m.params;
  std::size_t in_ch = cfg.image_channels;
  for (std::size_t i = 0; i < cfg.encoder.size(); ++i) {
    const auto& c = cfg.encoder[i];
    const std::size_t kk = c.kernel * c.kernel;
    const std::string name = "encoder/conv" + std::to_string(i);
    p.add(name + "/w", detail::uniform_kernel<T>(rng, Shape{c.channels, in_ch, c.kernel, c.kernel},
                                                 in_ch * kk, c.channels * kk));
    p.add(name + "/b", Tensor<T>(Shape{c.channels}));
    in_ch = c.channels;
  }
  detail::add_dense(p, rng, "encoder/dense", cfg.flat_features(), cfg.embed_dim);
  detail::add_mlp(p, rng, "dynamics", cfg.latent_dim + cfg.action_dim, cfg.hidden,
                  2 * cfg.latent_dim, 0.1);
  detail::add_mlp(p, rng, "filter", cfg.embed_dim + 2 * cfg.latent_dim, cfg.hidden,
                  2 * cfg.latent_dim, 0.1);
  detail::add_mlp(p, rng, "reward", cfg.latent_dim, cfg.hidden, 1);
  for (std::size_t h : cfg.nce_horizons) {
    p.add(critic_name(h), detail::uniform_kernel<T>(rng, Shape{cfg.latent_dim, cfg.embed_dim},
                                                    cfg.latent_dim, cfg.embed_dim));
  }
  if (cfg.decoder) {
    detail::add_dense(p, rng, "decoder/dense", cfg.latent_dim, cfg.flat_features());
    for (std::size_t i = cfg.encoder.size(); i-- > 0;) {
      const auto& c = cfg.encoder[i];
      const std::size_t out_ch = i == 0 ? cfg.image_channels : cfg.encoder[i - 1].channels;
      const std::size_t kk = c.kernel * c.kernel;
      const std::string name = "decoder/deconv" + std::to_string(i);
      p.add(name + "/w", detail::uniform_kernel<T>(rng, Shape{c.channels, out_ch, c.kernel, c.kernel},
                                                   c.channels * kk, out_ch * kk));
      p.add(name + "/b", Tensor<T>(Shape{out_ch}));
    }
  }
  return m;
}

// Binds a model's parameters into a graph. A mutable model yields leaves
// that receive gradients; a const model yields read-only leaves.
template <typename T>
class Net {
 public:
  Net(Graph<T>& g, Model<T>& m) : g_(g), cfg_(m.config), mut_(&m.params), ro_(&m.params) {}
  Net(Graph<T>& g, const Model<T>& m) : g_(g), cfg_(m.config), ro_(&m.params) {}

  Var<T> p(const std::string& name) {
    if (!ro_->contains(name)) throw ConfigError("model has no parameter '" + name + "'");
    return mut_ ? g_.param(*mut_, name) : g_.param(*ro_, name);
  }
  bool has(const std::string& name) const { return ro_->contains(name); }

  Var<T> constant(Tensor<T> t) { return g_.constant(std::move(t)); }
  Graph<T>& graph() { return g_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  Graph<T>& g_;
  const ModelConfig& cfg_;
  ParamStore<T>* mut_ = nullptr;
  const ParamStore<T>* ro_;
};

template <typename T>
Var<T> dense(Net<T>& net, const std::string& prefix, Var<T> x) {
  return add_bias(matmul(x, net.p(prefix + "/w")), net.p(prefix + "/b"));
}

// Two ELU hidden layers, linear output.
template <typename T>
Var<T> mlp(Net<T>& net, const std::string& prefix, Var<T> x) {
  Var<T> h = elu(dense(net, prefix + "/l0", x));
  h = elu(dense(net, prefix + "/l1", h));
  return dense(net, prefix + "/out", h);
}

template <typename T>
DiagGaussian<T> split_gaussian(Net<T>& net, Var<T> out) {
  const std::size_t n = net.config().latent_dim;
  const T lo = static_cast<T>(net.config().min_log_std);
  const T hi = static_cast<T>(net.config().max_log_std);
  return {slice_cols(out, 0, n), std_from_log_std(slice_cols(out, n, 2 * n), lo, hi)};
}

// z = e(o). Accepts C x H x W or N x C x H x W; returns N x n_z.
template <typename T>
Var<T> encode(Net<T>& net, Var<T> images) {
  const ModelConfig& cfg = net.config();
  Shape s = images.shape();
  if (s.size() == 3) {
    s.insert(s.begin(), 1);
    images = reshape(images, s);
  }
  if (s.size() != 4 || s[1] != cfg.image_channels || s[2] != cfg.image_size ||
      s[3] != cfg.image_size) {
    throw DimensionError("encode: expected N x " + std::to_string(cfg.image_channels) + " x " +
                         std::to_string(cfg.image_size) + " x " +
                         std::to_string(cfg.image_size) + ", got " + shape_str(s));
  }
  Var<T> x = images;
  for (std::size_t i = 0; i < cfg.encoder.size(); ++i) {
    const std::string name = "encoder/conv" + std::to_string(i);
    x = elu(add_channel_bias(conv2d(x, net.p(name + "/w"), cfg.encoder[i].stride),
                             net.p(name + "/b")));
  }
  x = reshape(x, Shape{s[0], cfg.flat_features()});
  return dense(net, "encoder/dense", x);
}

template <typename T>
Var<T> encode(Net<T>& net, const Tensor<T>& images) {
  return encode(net, net.constant(images));
}

// Prior over the next latent state: N x n_s, N x action_dim -> Gaussian.
template <typename T>
DiagGaussian<T> predict(Net<T>& net, Var<T> s, Var<T> a) {
  const ModelConfig& cfg = net.config();
  if (s.shape().size() != 2 || s.dim(1) != cfg.latent_dim || a.shape().size() != 2 ||
      a.dim(1) != cfg.action_dim || a.dim(0) != s.dim(0)) {
    throw DimensionError("predict: state " + shape_str(s.shape()) + ", action " +
                         shape_str(a.shape()) + " do not match latent " +
                         std::to_string(cfg.latent_dim) + " / action " +
                         std::to_string(cfg.action_dim));
  }
  return split_gaussian(net, mlp(net, "dynamics", concat_cols<T>({s, a})));
}

// Posterior from the encoding and the prior's moments.
template <typename T>
DiagGaussian<T> filter(Net<T>& net, Var<T> z, const DiagGaussian<T>& prior) {
  const ModelConfig& cfg = net.config();
  if (z.shape().size() != 2 || z.dim(1) != cfg.embed_dim ||
      prior.mean.shape() != Shape{z.dim(0), cfg.latent_dim} ||
      prior.std.shape() != prior.mean.shape()) {
    throw DimensionError("filter: encoding " + shape_str(z.shape()) + ", prior " +
                         shape_str(prior.mean.shape()) + " do not match embed " +
                         std::to_string(cfg.embed_dim) + " / latent " +
                         std::to_string(cfg.latent_dim));
  }
  return split_gaussian(net, mlp(net, "filter", concat_cols<T>({z, prior.mean, prior.std})));
}

// Mean of the unit-variance reward Gaussian for each row: N x n_s -> [N].
template <typename T>
Var<T> predict_reward(Net<T>& net, Var<T> s) {
  if (s.shape().size() != 2 || s.dim(1) != net.config().latent_dim) {
    throw DimensionError("predict_reward: state " + shape_str(s.shape()) + " vs latent " +
                         std::to_string(net.config().latent_dim));
  }
  return reshape(mlp(net, "reward", s), Shape{s.dim(0)});
}

// Reward penalty 0.5 * (r - r_hat)^2 averaged over rows. This is
// KL(N(r, 1) || N(r_hat, 1)) with the constant dropped.
template <typename T>
Var<T> reward_penalty(Var<T> predicted, Var<T> target) {
  return scale(mean(square(sub(target, predicted))), T{0.5});
}

// Reconstruction head: N x n_s -> N x C x H x W, unconstrained values.
template <typename T>
Var<T> decode(Net<T>& net, Var<T> s) {
  const ModelConfig& cfg = net.config();
  if (!cfg.decoder || !net.has("decoder/dense/w")) {
    throw ConfigError("decode: model has no decoder");
  }
  if (s.shape().size() != 2 || s.dim(1) != cfg.latent_dim) {
    throw DimensionError("decode: state " + shape_str(s.shape()));
  }
  const std::size_t n = s.dim(0);
  const auto sizes = cfg.feature_sizes();
  const std::size_t top_ch = cfg.encoder.empty() ? cfg.image_channels : cfg.encoder.back().channels;
  Var<T> x = dense(net, "decoder/dense", s);
  x = reshape(x, Shape{n, top_ch, sizes.back(), sizes.back()});
  for (std::size_t i = cfg.encoder.size(); i-- > 0;) {
    x = elu(x);
    const std::string name = "decoder/deconv" + std::to_string(i);
    x = add_channel_bias(conv_transpose2d(x, net.p(name + "/w"), cfg.encoder[i].stride,
                                          sizes[i], sizes[i]),
                         net.p(name + "/b"));
  }
  return x;
}

}  // namespace miro::model
