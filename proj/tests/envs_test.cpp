#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include <gtest/gtest.h>

#include "miro/envs/env.hpp"

namespace {

using namespace miro;
using namespace miro::envs;

using Pixel = std::pair<int, int>;

Color pixel_color(const Observation& img, int r, int c) {
  const std::size_t s = img.dim(1);
  const std::size_t off = static_cast<std::size_t>(r) * s + static_cast<std::size_t>(c);
  return {img[off], img[s * s + off], img[2 * s * s + off]};
}

std::set<Pixel> pixels_of(const Observation& img, const Color& color) {
  std::set<Pixel> out;
  const int s = static_cast<int>(img.dim(1));
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c)
      if (pixel_color(img, r, c) == color) out.insert({r, c});
  return out;
}

// Footprint of a distractor computed from its definition: a side x side
// square, or the pixels whose centers fall in the inscribed disc.
std::set<Pixel> distractor_footprint(const SpritePos& p, int side, bool disc, int s) {
  std::set<Pixel> out;
  for (int r = p.row; r < p.row + side; ++r)
    for (int c = p.col; c < p.col + side; ++c) {
      if (r >= s || c >= s) continue;
      if (disc) {
        const double dr = r + 0.5 - (p.row + side / 2.0), dc = c + 0.5 - (p.col + side / 2.0);
        if (dr * dr + dc * dc > side * side / 4.0) continue;
      }
      out.insert({r, c});
    }
  return out;
}

EnvConfig config(Task task, std::size_t distractors = 0, std::uint64_t seed = 1) {
  EnvConfig c;
  c.task = task;
  c.distractors = distractors;
  c.dynamics_seed = seed;
  c.distractor_seed = seed + 100;
  return c;
}

TEST(Reset, SameSeedsGiveIdenticalFirstFrame) {
  for (Task t : {Task::kPointMass, Task::kPendulum}) {
    auto [e1, o1] = Env::reset(config(t, 2));
    auto [e2, o2] = Env::reset(config(t, 2));
    EXPECT_EQ(o1, o2);
  }
}

TEST(Reset, PendulumStartsNearUpright) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto [env, obs] = Env::reset(config(Task::kPendulum, 0, seed));
    const auto s = env.true_state();
    EXPECT_LE(std::abs(s.values[0]), 0.1);
    EXPECT_EQ(s.values[1], 0.0);
  }
}

TEST(Reset, PointMassStartsAtRestInsideArena) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto [env, obs] = Env::reset(config(Task::kPointMass, 0, seed));
    const auto s = env.true_state();
    EXPECT_LE(std::abs(s.values[0]), 1.0);
    EXPECT_LE(std::abs(s.values[1]), 1.0);
    EXPECT_EQ(s.values[2], 0.0);
    EXPECT_EQ(s.values[3], 0.0);
  }
}

TEST(Render, NoDistractorsMeansBlackBackgroundWithAgentAndGoal) {
  for (Task t : {Task::kPointMass, Task::kPendulum}) {
    auto [env, obs] = Env::reset(config(t));
    const int s = static_cast<int>(obs.dim(1));
    std::size_t agent = 0, goal = 0;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) {
        const Color px = pixel_color(obs, r, c);
        if (px == kAgentColor) {
          ++agent;
        } else if (px == kGoalColor) {
          ++goal;
        } else {
          EXPECT_EQ(px, (Color{0, 0, 0})) << r << "," << c;
        }
      }
    EXPECT_GT(agent, 0u);
    if (t == Task::kPointMass) EXPECT_GT(goal, 0u);
  }
}

TEST(Render, TwoDistractorsAddExactlyTheirVisibleFootprints) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto cfg = config(Task::kPointMass, 2, seed);
    auto [env, obs] = Env::reset(cfg);
    const int s = static_cast<int>(cfg.image_size), side = static_cast<int>(cfg.sprite_side());
    const auto& pos = env.distractor_positions();
    ASSERT_EQ(pos.size(), 2u);
    // Later sprites cover earlier ones.
    std::set<Pixel> covered = pixels_of(obs, kAgentColor);
    for (const auto& p : pixels_of(obs, kGoalColor)) covered.insert(p);
    for (int i = 1; i >= 0; --i) {
      std::set<Pixel> expect;
      for (const auto& p : distractor_footprint(pos[i], side, distractor_is_disc(i), s)) {
        if (!covered.contains(p)) expect.insert(p);
      }
      EXPECT_EQ(pixels_of(obs, kDistractorPalette[i]), expect) << "seed " << seed << " sprite " << i;
      for (const auto& p : distractor_footprint(pos[i], side, distractor_is_disc(i), s)) {
        covered.insert(p);
      }
    }
    // Nothing else is coloured.
    std::size_t colored = 0;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c)
        if (pixel_color(obs, r, c) != Color{0, 0, 0}) ++colored;
    EXPECT_EQ(colored, covered.size());
  }
}

TEST(Render, AgentCentroidTracksState) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    EnvConfig cfg = config(trial % 2 ? Task::kPendulum : Task::kPointMass);
    TrueState st;
    st.task = cfg.task;
    if (cfg.task == Task::kPointMass) {
      st.values = {rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0, 0.0};
    } else {
      st.values = {rng.uniform(-3.14, 3.14), 0.0};
    }
    auto img = render(cfg, st, {});
    double rsum = 0, csum = 0;
    auto px = pixels_of(img, kAgentColor);
    ASSERT_FALSE(px.empty());
    for (auto [r, c] : px) {
      rsum += r + 0.5;
      csum += c + 0.5;
    }
    const auto [x, y] = agent_position(st);
    const auto [row, col] = world_to_pixel(x, y, cfg.image_size);
    EXPECT_NEAR(rsum / px.size(), row, 1.0);
    EXPECT_NEAR(csum / px.size(), col, 1.0);
  }
}

TEST(Render, DeterministicAndInUnitRange) {
  auto cfg = config(Task::kPendulum, 4);
  auto [env, obs] = Env::reset(cfg);
  for (int i = 0; i < 20; ++i) {
    auto res = env.step(Tensor<float>::vector({0.3f}));
    EXPECT_EQ(render(cfg, env.true_state(), env.distractor_positions()), res.observation);
    for (float v : res.observation.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Step, PendulumEquilibrium) {
  auto [env, obs] = Env::reset(config(Task::kPendulum));
  env.set_true_state({Task::kPendulum, {0.0, 0.0}});
  auto res = env.step(Tensor<float>::vector({0.0f}));
  EXPECT_EQ(env.true_state().values, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(res.reward, 1.0);
}

TEST(Step, PointMassAtGoalEarnsFullReward) {
  auto [env, obs] = Env::reset(config(Task::kPointMass));
  env.set_true_state({Task::kPointMass,
                      {physics::kPointMassGoalX, physics::kPointMassGoalY, 0.0, 0.0}});
  EXPECT_EQ(env.step(Tensor<float>::vector({0.0f, 0.0f})).reward, 1.0);
}

TEST(Step, PointMassVelocityUpdate) {
  auto [env, obs] = Env::reset(config(Task::kPointMass));
  env.set_true_state({Task::kPointMass, {0.0, 0.0, 0.0, 0.0}});
  env.step(Tensor<float>::vector({1.0f, 0.0f}));
  const auto s = env.true_state();
  EXPECT_NEAR(s.values[2], 0.0475, 1e-15);
  EXPECT_EQ(s.values[3], 0.0);
  EXPECT_NEAR(s.values[0], 0.0475 * 0.05, 1e-15);
}

TEST(Step, PointMassReflectsAtWalls) {
  auto [env, obs] = Env::reset(config(Task::kPointMass));
  env.set_true_state({Task::kPointMass, {0.99, 0.0, 1.0, 0.0}});
  env.step(Tensor<float>::vector({0.0f, 0.0f}));
  const auto s = env.true_state();
  EXPECT_LE(s.values[0], 1.0);
  EXPECT_LT(s.values[2], 0.0);
}

TEST(Step, FramesDifferOnlyUnderDistractorsWhenAgentIsStatic) {
  auto cfg = config(Task::kPendulum, 2, 9);
  auto [env, obs] = Env::reset(cfg);
  env.set_true_state({Task::kPendulum, {0.0, 0.0}});
  Observation prev = env.observe();
  const int s = static_cast<int>(cfg.image_size), side = static_cast<int>(cfg.sprite_side());
  for (int t = 0; t < 30; ++t) {
    const auto before = env.distractor_positions();
    auto res = env.step(Tensor<float>::vector({0.0f}));
    const auto after = env.distractor_positions();
    std::set<Pixel> allowed;
    for (std::size_t i = 0; i < before.size(); ++i) {
      for (const auto& p : distractor_footprint(before[i], side, distractor_is_disc(i), s)) allowed.insert(p);
      for (const auto& p : distractor_footprint(after[i], side, distractor_is_disc(i), s)) allowed.insert(p);
    }
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c)
        if (pixel_color(prev, r, c) != pixel_color(res.observation, r, c)) {
          EXPECT_TRUE(allowed.contains({r, c})) << "pixel " << r << "," << c << " at step " << t;
        }
    prev = res.observation;
  }
}

TEST(Step, RewardsStayInUnitInterval) {
  Rng rng(21);
  for (Task t : {Task::kPointMass, Task::kPendulum}) {
    std::size_t steps = 0;
    for (std::uint64_t seed = 0; steps < 10000; ++seed) {
      auto [env, obs] = Env::reset(config(t, 0, seed));
      while (!env.done()) {
        Tensor<float> a(Shape{env.action_dim()});
        for (auto& v : a.values()) v = static_cast<float>(rng.uniform(-1, 1));
        const double r = env.step(a).reward;
        ASSERT_GE(r, 0.0);
        ASSERT_LE(r, 1.0);
        ++steps;
      }
    }
  }
}

TEST(Step, DynamicsIgnoreDistractorSettings) {
  Rng rng(22);
  std::vector<Tensor<float>> actions;
  for (int i = 0; i < 100; ++i) {
    actions.push_back(Tensor<float>::vector({static_cast<float>(rng.uniform(-1, 1)),
                                             static_cast<float>(rng.uniform(-1, 1))}));
  }
  for (Task t : {Task::kPointMass, Task::kPendulum}) {
    std::vector<std::vector<TrueState>> runs;
    for (std::size_t d : {0, 2, 4}) {
      auto cfg = config(t, d, 7);
      cfg.distractor_seed = 1000 + d;
      auto [env, obs] = Env::reset(cfg);
      std::vector<TrueState> traj{env.true_state()};
      for (const auto& a : actions) {
        std::vector<float> act(a.values().begin(), a.values().begin() + env.action_dim());
        env.step(act);
        traj.push_back(env.true_state());
      }
      runs.push_back(std::move(traj));
    }
    EXPECT_EQ(runs[0], runs[1]);
    EXPECT_EQ(runs[0], runs[2]);
  }
}

TEST(Step, RandomPolicyReturnLeavesHeadroom) {
  Rng rng(23);
  double total = 0.0;
  for (std::uint64_t ep = 0; ep < 100; ++ep) {
    auto [env, obs] = Env::reset(config(Task::kPendulum, 0, ep));
    while (!env.done()) {
      total += env.step(Tensor<float>::vector({static_cast<float>(rng.uniform(-1, 1))})).reward;
    }
  }
  const double mean = total / 100.0;
  EXPECT_GE(mean, 0.2 * 100);
  EXPECT_LE(mean, 0.8 * 100);
}

TEST(Step, EpisodeEndsAtConfiguredLength) {
  auto cfg = config(Task::kPendulum);
  cfg.episode_len = 17;
  auto [env, obs] = Env::reset(cfg);
  std::size_t n = 0;
  for (;;) {
    auto res = env.step(Tensor<float>::vector({0.1f}));
    ++n;
    EXPECT_EQ(res.done, n == 17);
    if (res.done) break;
  }
  EXPECT_THROW(env.step(Tensor<float>::vector({0.1f})), ContractError);
}

TEST(Step, WrongActionWidthIsRejected) {
  auto [env, obs] = Env::reset(config(Task::kPointMass));
  EXPECT_THROW(env.step(Tensor<float>::vector({0.1f})), DimensionError);
}

TEST(TrueState, UnchangedByRendering) {
  auto [env, obs] = Env::reset(config(Task::kPointMass, 2));
  const auto before = env.true_state();
  for (int i = 0; i < 5; ++i) (void)env.observe();
  EXPECT_EQ(env.true_state(), before);
}

TEST(Ppm, WritesBinaryHeaderAndPixels) {
  auto [env, obs] = Env::reset(config(Task::kPendulum, 2));
  const auto path = std::filesystem::temp_directory_path() / "miro_envs_test.ppm";
  write_ppm(obs, path.string());
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(w, 32u);
  EXPECT_EQ(h, 32u);
  EXPECT_EQ(maxval, 255u);
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(body.size(), 32u * 32u * 3u);
  std::filesystem::remove(path);
}

}  // namespace
