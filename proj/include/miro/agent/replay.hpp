#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/core/rng.hpp"
#include "miro/diff/tensor.hpp"
#include "miro/model/losses.hpp"

namespace miro::agent {

// observations.size() == actions.size() + 1 == rewards.size() + 1
struct Episode {
  std::vector<Tensor<float>> observations;
  std::vector<Tensor<float>> actions;
  std::vector<double> rewards;

  std::size_t length() const { return actions.size(); }
  double total_return() const {
    double r = 0.0;
    for (double x : rewards) r += x;
    return r;
  }

  void validate() const {
    if (observations.size() != actions.size() + 1 || rewards.size() != actions.size()) {
      throw InvariantError("episode with " + std::to_string(observations.size()) +
                           " observations, " + std::to_string(actions.size()) + " actions and " +
                           std::to_string(rewards.size()) + " rewards");
    }
    for (double r : rewards) {
      if (!(r >= 0.0 && r <= 1.0)) throw InvariantError("episode reward outside [0, 1]");
    }
  }
};

struct ChunkIndex {
  std::size_t episode;
  std::size_t start;
};

// Append-only. When full, the oldest episode is dropped.
class ReplayBuffer {
 public:
  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

  explicit ReplayBuffer(std::size_t capacity = kUnbounded) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
  }

  void add(Episode e) {
    e.validate();
    if (episodes_.size() == capacity_) episodes_.erase(episodes_.begin());
    episodes_.push_back(std::move(e));
  }

  const std::vector<Episode>& episodes() const { return episodes_; }
  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::vector<Episode> episodes_;
};

// Draws B (episode, start) pairs: the episode uniformly among those with at
// least L steps, the start uniformly in [0, T - L].
inline std::vector<ChunkIndex> sample_chunk_indices(const ReplayBuffer& buffer, std::size_t batch,
                                                    std::size_t length, std::uint64_t seed) {
  if (batch == 0 || length == 0) throw ContractError("chunk batch and length must be positive");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (buffer.episodes()[i].length() >= length) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw DataError("no stored episode has " + std::to_string(length) + " steps");
  }
  Rng rng(seed);
  std::vector<ChunkIndex> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t e = eligible[rng.index(eligible.size())];
    const std::size_t span = buffer.episodes()[e].length() - length + 1;
    out.push_back({e, static_cast<std::size_t>(rng.index(span))});
  }
  return out;
}

// Gathers chunks into a time-major batch: L + 1 observations, L actions and
// L rewards per chunk.
inline model::SequenceBatch<float> gather_chunks(const ReplayBuffer& buffer,
                                                 const std::vector<ChunkIndex>& idx,
                                                 std::size_t length) {
  if (idx.empty()) throw ContractError("gather_chunks: no chunks");
  const std::size_t B = idx.size();
  const Episode& first = buffer.episodes().at(idx.front().episode);
  const Shape obs_shape = first.observations.front().shape();
  const std::size_t obs_n = first.observations.front().size();
  const std::size_t act_n = first.actions.front().size();

  Shape full{length + 1, B};
  full.insert(full.end(), obs_shape.begin(), obs_shape.end());
  model::SequenceBatch<float> out{B, length, Tensor<float>(full),
                                  Tensor<float>(Shape{length, B, act_n}),
                                  Tensor<float>(Shape{length, B})};
  for (std::size_t b = 0; b < B; ++b) {
    const Episode& ep = buffer.episodes().at(idx[b].episode);
    const std::size_t s = idx[b].start;
    if (s + length > ep.length()) throw ContractError("chunk exceeds episode bounds");
    for (std::size_t t = 0; t <= length; ++t) {
      const auto& o = ep.observations[s + t];
      if (o.size() != obs_n) throw DimensionError("episodes with mixed observation shapes");
      std::copy_n(o.data(), obs_n, out.observations.data() + (t * B + b) * obs_n);
    }
    for (std::size_t t = 0; t < length; ++t) {
      std::copy_n(ep.actions[s + t].data(), act_n, out.actions.data() + (t * B + b) * act_n);
      out.rewards[t * B + b] = static_cast<float>(ep.rewards[s + t]);
    }
  }
  return out;
}

inline model::SequenceBatch<float> sample_chunks(const ReplayBuffer& buffer, std::size_t batch,
                                                 std::size_t length, std::uint64_t seed) {
  return gather_chunks(buffer, sample_chunk_indices(buffer, batch, length, seed), length);
}

}  // namespace miro::agent
