#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "miro/agent/training.hpp"
#include "miro/core/errors.hpp"

// Experiment files are line-oriented:
//
//   # comment
//   [section]
//   key = value        # trailing comments allowed
//
// Keys are only valid inside their section. Lists are comma separated.
// docs/config_format.md has the full key reference.

namespace miro::expcli {

inline constexpr int kConfigFormatVersion = 1;

struct ExperimentConfig {
  std::string name = "experiment";
  agent::TrainingConfig training;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs";
  std::size_t parallel = 1;  // worker processes
  std::string source;        // verbatim config text

  model::Objective variant() const { return training.train.objective; }

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (name.empty() || name.find_first_of("/\\ ") != std::string::npos) {
      throw ConfigError("name must be non-empty without spaces or slashes");
    }
    if (training.train.weights.kl < 0.0 || training.train.weights.reward < 0.0) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (variant() == model::Objective::kRecon && !training.model.decoder) {
      throw ConfigError("variant recon needs model.decoder = true");
    }
    if (parallel == 0) throw ConfigError("parallel must be at least 1");
    if (training.schedule.chunk <= max_horizon() && variant() == model::Objective::kMiro) {
      throw ConfigError("schedule.chunk must exceed the largest NCE horizon");
    }
    training.env.validate();
    training.model.validate();
    training.planner.validate();
  }

 private:
  std::size_t max_horizon() const {
    std::size_t h = 0;
    for (std::size_t x : training.train.horizons) h = std::max(h, x);
    return h;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename U>
U parse_number(const std::string& v, const std::string& key, int line) {
  U out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end || v.empty()) {
    throw ParseError("bad value '" + v + "' for key '" + key + "'", line);
  }
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError("bad boolean '" + v + "' for key '" + key + "'", line);
}

}  // namespace detail

class ConfigParser {
 public:
  ConfigParser() { register_keys(); }

  ExperimentConfig parse(const std::string& text) const {
    ExperimentConfig cfg;
    cfg.source = text;
    std::optional<bool> decoder_set;
    std::istringstream in(text);
    std::string raw, section;
    std::map<std::string, int> seen;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      std::string s = raw;
      if (auto hash = s.find('#'); hash != std::string::npos) s.erase(hash);
      s = detail::trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ParseError("unterminated section header", line);
        section = detail::trim(std::string_view(s).substr(1, s.size() - 2));
        if (!sections_.contains(section)) {
          throw ParseError("unknown section [" + section + "]", line);
        }
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
      const std::string key = detail::trim(std::string_view(s).substr(0, eq));
      const std::string value = detail::trim(std::string_view(s).substr(eq + 1));
      if (section.empty()) throw ParseError("key '" + key + "' outside any section", line);
      const std::string full = section + "." + key;
      auto it = setters_.find(full);
      if (it == setters_.end()) {
        throw ParseError("unknown key '" + key + "' in section [" + section + "]", line);
      }
      if (auto [pos, fresh] = seen.emplace(full, line); !fresh) {
        throw ParseError("duplicate key '" + key + "' (first set on line " +
                             std::to_string(pos->second) + ")",
                         line);
      }
      if (value.empty()) throw ParseError("empty value for key '" + key + "'", line);
      if (full == "model.decoder") decoder_set = detail::parse_bool(value, key, line);
      it->second(cfg, value, line);
    }
    // Decoder defaults to on exactly for the reconstruction variant.
    cfg.training.model.decoder =
        decoder_set.value_or(cfg.training.train.objective == model::Objective::kRecon);
    cfg.training.model.action_dim = cfg.training.env.action_dim();
    cfg.training.model.image_size = cfg.training.env.image_size;
    cfg.training.model.image_channels = cfg.training.env.channels;
    cfg.training.model.nce_horizons = cfg.training.train.horizons;
    cfg.validate();
    return cfg;
  }

  ExperimentConfig parse_file(const std::string& path) const {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, f] : setters_) out.push_back(k);
    return out;
  }

 private:
  using Setter = std::function<void(ExperimentConfig&, const std::string&, int)>;

  template <typename U, typename Get>
  void number(const std::string& key, Get get) {
    add(key, [get, key](ExperimentConfig& c, const std::string& v, int line) {
      get(c) = detail::parse_number<U>(v, key, line);
    });
  }

  template <typename Get>
  void boolean(const std::string& key, Get get) {
    add(key, [get, key](ExperimentConfig& c, const std::string& v, int line) {
      get(c) = detail::parse_bool(v, key, line);
    });
  }

  template <typename U, typename Get>
  void list(const std::string& key, Get get) {
    add(key, [get, key](ExperimentConfig& c, const std::string& v, int line) {
      std::vector<U> out;
      for (const auto& item : detail::split_list(v)) {
        out.push_back(detail::parse_number<U>(item, key, line));
      }
      get(c) = std::move(out);
    });
  }

  void add(const std::string& key, Setter f) {
    sections_.insert(key.substr(0, key.find('.')));
    setters_.emplace(key, std::move(f));
  }

  void register_keys() {
    using C = ExperimentConfig;
    using std::size_t;
    add("experiment.name", [](C& c, const std::string& v, int) { c.name = v; });
    add("experiment.variant", [](C& c, const std::string& v, int line) {
      if (v == "miro") {
        c.training.train.objective = model::Objective::kMiro;
      } else if (v == "recon") {
        c.training.train.objective = model::Objective::kRecon;
      } else {
        throw ParseError("variant must be miro or recon, got '" + v + "'", line);
      }
    });
    list<std::uint64_t>("experiment.seeds", [](C& c) -> auto& { return c.seeds; });
    add("experiment.output_dir", [](C& c, const std::string& v, int) { c.output_dir = v; });
    number<size_t>("experiment.parallel", [](C& c) -> auto& { return c.parallel; });
    boolean("experiment.record_wall_clock",
            [](C& c) -> auto& { return c.training.record_wall_clock; });

    add("env.task", [](C& c, const std::string& v, int line) {
      try {
        c.training.env.task = envs::parse_task(v);
      } catch (const Error& e) {
        throw ParseError(e.what(), line);
      }
    });
    number<size_t>("env.image_size", [](C& c) -> auto& { return c.training.env.image_size; });
    number<size_t>("env.episode_len", [](C& c) -> auto& { return c.training.env.episode_len; });
    number<size_t>("env.distractors", [](C& c) -> auto& { return c.training.env.distractors; });
    number<size_t>("env.distractor_size",
                   [](C& c) -> auto& { return c.training.env.distractor_size; });

    number<size_t>("model.latent_dim", [](C& c) -> auto& { return c.training.model.latent_dim; });
    number<size_t>("model.embed_dim", [](C& c) -> auto& { return c.training.model.embed_dim; });
    number<size_t>("model.hidden", [](C& c) -> auto& { return c.training.model.hidden; });
    add("model.encoder_channels", [](C& c, const std::string& v, int line) {
      auto& enc = c.training.model.encoder;
      const auto items = detail::split_list(v);
      const model::ConvSpec proto = enc.empty() ? model::ConvSpec{32, 4, 2} : enc.front();
      enc.clear();
      for (const auto& item : items) {
        model::ConvSpec spec = proto;
        spec.channels = detail::parse_number<size_t>(item, "encoder_channels", line);
        enc.push_back(spec);
      }
    });
    add("model.kernel", [](C& c, const std::string& v, int line) {
      const auto k = detail::parse_number<size_t>(v, "kernel", line);
      for (auto& s : c.training.model.encoder) s.kernel = k;
    });
    add("model.stride", [](C& c, const std::string& v, int line) {
      const auto k = detail::parse_number<size_t>(v, "stride", line);
      for (auto& s : c.training.model.encoder) s.stride = k;
    });
    list<size_t>("model.nce_horizons", [](C& c) -> auto& { return c.training.train.horizons; });
    boolean("model.decoder", [](C& c) -> auto& { return c.training.model.decoder; });
    number<double>("model.min_log_std", [](C& c) -> auto& { return c.training.model.min_log_std; });
    number<double>("model.max_log_std", [](C& c) -> auto& { return c.training.model.max_log_std; });

    number<double>("loss.kl_weight", [](C& c) -> auto& { return c.training.train.weights.kl; });
    number<double>("loss.reward_weight",
                   [](C& c) -> auto& { return c.training.train.weights.reward; });
    number<double>("loss.clip_norm", [](C& c) -> auto& { return c.training.train.clip_norm; });

    number<double>("optimizer.learning_rate",
                   [](C& c) -> auto& { return c.training.adam.learning_rate; });
    number<double>("optimizer.beta1", [](C& c) -> auto& { return c.training.adam.beta1; });
    number<double>("optimizer.beta2", [](C& c) -> auto& { return c.training.adam.beta2; });
    number<double>("optimizer.epsilon", [](C& c) -> auto& { return c.training.adam.epsilon; });

    number<size_t>("planner.horizon", [](C& c) -> auto& { return c.training.planner.horizon; });
    number<size_t>("planner.population",
                   [](C& c) -> auto& { return c.training.planner.population; });
    number<size_t>("planner.elites", [](C& c) -> auto& { return c.training.planner.elites; });
    number<size_t>("planner.iterations",
                   [](C& c) -> auto& { return c.training.planner.iterations; });
    number<double>("planner.init_std", [](C& c) -> auto& { return c.training.planner.init_std; });
    number<double>("planner.action_min",
                   [](C& c) -> auto& { return c.training.planner.action_min; });
    number<double>("planner.action_max",
                   [](C& c) -> auto& { return c.training.planner.action_max; });
    number<double>("planner.std_floor", [](C& c) -> auto& { return c.training.planner.std_floor; });
    boolean("planner.sampled_rollouts",
            [](C& c) -> auto& { return c.training.planner.sampled_rollouts; });

    number<size_t>("schedule.seed_episodes",
                   [](C& c) -> auto& { return c.training.schedule.seed_episodes; });
    number<size_t>("schedule.episodes", [](C& c) -> auto& { return c.training.schedule.episodes; });
    number<size_t>("schedule.train_steps",
                   [](C& c) -> auto& { return c.training.schedule.train_steps; });
    number<size_t>("schedule.batch", [](C& c) -> auto& { return c.training.schedule.batch; });
    number<size_t>("schedule.chunk", [](C& c) -> auto& { return c.training.schedule.chunk; });
    number<size_t>("schedule.replay_capacity",
                   [](C& c) -> auto& { return c.training.schedule.replay_capacity; });
    number<double>("schedule.explore_std", [](C& c) -> auto& { return c.training.explore_std; });
  }

  std::map<std::string, Setter> setters_;
  std::set<std::string> sections_;
};

inline ExperimentConfig load_config(const std::string& path) {
  return ConfigParser().parse_file(path);
}

inline ExperimentConfig parse_config(const std::string& text) { return ConfigParser().parse(text); }

}  // namespace miro::expcli
