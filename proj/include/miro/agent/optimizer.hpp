#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/diff/param_store.hpp"

namespace miro::agent {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments are stored in the parameter order of the store they were created for.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> first;
  std::vector<Tensor<T>> second;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const ParamStore<T>& params, AdamConfig cfg) : config(cfg) {
    for (const auto& e : params.entries()) {
      first.emplace_back(e.value.shape());
      second.emplace_back(e.value.shape());
    }
  }
};

// Scales all gradients so their joint norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
  const double norm = params.grad_norm();
  if (norm > max_norm) {
    const auto s = static_cast<T>(max_norm / norm);
    for (auto& e : params.entries()) {
      for (auto& g : e.grad.values()) g *= s;
    }
  }
  return norm;
}

template <typename T>
void adam_update(ParamStore<T>& params, AdamState<T>& st) {
  if (st.first.size() != params.size()) {
    throw ContractError("optimizer state has " + std::to_string(st.first.size()) +
                        " slots for " + std::to_string(params.size()) + " parameters");
  }
  ++st.step;
  const AdamConfig& c = st.config;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const auto b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const auto step_size = static_cast<T>(c.learning_rate / bc1);
  const auto inv_bc2 = static_cast<T>(1.0 / bc2);
  const auto eps = static_cast<T>(c.epsilon);
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (st.first[i].shape() != e.value.shape()) {
      throw DimensionError("optimizer moment shape mismatch for '" + e.name + "'");
    }
    T* p = e.value.data();
    const T* g = e.grad.data();
    T* m = st.first[i].data();
    T* v = st.second[i].data();
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
  }
}

}  // namespace miro::agent
