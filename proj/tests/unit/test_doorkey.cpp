#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <queue>
#include <set>
#include <tuple>

#include "latmos/doorkey.hpp"
#include "latmos/nn/conv.hpp"

using namespace latmos;
using namespace latmos::doorkey;

namespace {

// Independent rules over a character grid: '#' wall, 'D' door, 'K' key, 'G' goal.
struct RawGrid {
  std::vector<std::string> rows;
  int kx = 0, ky = 0, dx = 0, dy = 0, gx = 0, gy = 0;

  static RawGrid from(const GridConfig& cfg) {
    RawGrid g;
    g.rows.assign(static_cast<std::size_t>(cfg.size), std::string(static_cast<std::size_t>(cfg.size), '.'));
    for (const Cell& w : cfg.walls) g.rows[w.y][w.x] = '#';
    g.kx = cfg.key.x, g.ky = cfg.key.y, g.dx = cfg.door.x, g.dy = cfg.door.y, g.gx = cfg.goal.x, g.gy = cfg.goal.y;
    return g;
  }

  // State tuple (x, y, key, open); returns all distinct successors.
  using S = std::tuple<int, int, int, int>;
  std::vector<S> successors(S s) const {
    auto [x, y, k, o] = s;
    std::vector<S> out;
    const int mv[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
    for (auto& m : mv) {
      int nx = x + m[0], ny = y + m[1];
      if (rows[ny][nx] == '#') continue;
      if (nx == dx && ny == dy && !o) continue;
      out.emplace_back(nx, ny, k, o);
    }
    if (!k && x == kx && y == ky) out.emplace_back(x, y, 1, o);
    if (k && !o && std::abs(x - dx) + std::abs(y - dy) == 1) out.emplace_back(x, y, k, 1);
    return out;
  }

  int bfs_optimum(int sx, int sy) const {
    std::map<S, int> dist{{{sx, sy, 0, 0}, 0}};
    std::queue<S> q;
    q.push({sx, sy, 0, 0});
    while (!q.empty()) {
      S s = q.front();
      q.pop();
      if (std::get<0>(s) == gx && std::get<1>(s) == gy) return dist[s];
      for (S n : successors(s))
        if (!dist.count(n)) {
          dist[n] = dist[s] + 1;
          q.push(n);
        }
    }
    return -1;
  }
};

GridConfig fixture(int size, int wall_x, Cell door, Cell key, Cell start, Cell goal) {
  GridConfig cfg;
  cfg.size = size;
  cfg.wall_x = wall_x;
  for (int i = 0; i < size; ++i) {
    cfg.walls.insert({i, 0});
    cfg.walls.insert({i, size - 1});
    cfg.walls.insert({0, i});
    cfg.walls.insert({size - 1, i});
  }
  for (int y = 1; y < size - 1; ++y)
    if (y != door.y) cfg.walls.insert({wall_x, y});
  cfg.door = door;
  cfg.key = key;
  cfg.agent_start = start;
  cfg.goal = goal;
  return cfg;
}

}  // namespace

TEST(DoorKey, ThirtySixSeedsGiveDistinctSolvableConfigs) {
  std::set<std::string> layouts;
  for (std::uint64_t seed = 0; seed < 36; ++seed) {
    GridConfig cfg = generate_env(seed);
    EXPECT_EQ(cfg.size, 8);
    layouts.insert(render(cfg));
    const int opt = RawGrid::from(cfg).bfs_optimum(cfg.agent_start.x, cfg.agent_start.y);
    ASSERT_GT(opt, 0) << "seed " << seed;
    EXPECT_EQ(static_cast<int>(expert_solve(cfg).actions.size()), opt) << "seed " << seed;
  }
  EXPECT_EQ(layouts.size(), 36u);
}

TEST(DoorKey, LayoutInvariants) {
  for (std::uint64_t seed = 0; seed < 36; ++seed) {
    for (int size : {5, 8}) {
      GridConfig cfg = generate_env(seed, size);
      EXPECT_LT(cfg.key.x, cfg.wall_x);
      EXPECT_LT(cfg.agent_start.x, cfg.wall_x);
      EXPECT_GT(cfg.goal.x, cfg.wall_x);
      EXPECT_EQ(cfg.door.x, cfg.wall_x);
      EXPECT_NE(cfg.key, cfg.agent_start);
      int openings = 0;
      for (int y = 1; y < size - 1; ++y) openings += !cfg.is_wall({cfg.wall_x, y});
      EXPECT_EQ(openings, 1);
      for (Cell c : {cfg.key, cfg.door, cfg.goal, cfg.agent_start}) EXPECT_FALSE(cfg.is_wall(c));
    }
  }
  EXPECT_THROW(generate_env(0, 4), ContractViolation);
}

TEST(DoorKey, DeterministicPerSeed) { EXPECT_EQ(generate_env(17), generate_env(17)); }

TEST(DoorKey, StepDynamics) {
  GridConfig cfg = fixture(5, 2, {2, 1}, {1, 1}, {1, 2}, {3, 3});
  EnvState s = initial_state(cfg);
  EXPECT_EQ(step_env(cfg, s, Action::left), s);  // border wall
  EXPECT_EQ(step_env(cfg, s, Action::right), s);  // dividing wall
  EXPECT_EQ(step_env(cfg, s, Action::pickup), s);  // not on the key
  EXPECT_EQ(step_env(cfg, s, Action::toggle), s);  // no key
  EnvState k = step_env(cfg, s, Action::up);
  EXPECT_EQ(k.agent, (Cell{1, 1}));
  EXPECT_EQ(step_env(cfg, k, Action::right), k);  // closed door
  k = step_env(cfg, k, Action::pickup);
  EXPECT_TRUE(k.has_key);
  EXPECT_EQ(step_env(cfg, k, Action::pickup), k);
  EnvState far = step_env(cfg, k, Action::down);
  EXPECT_EQ(step_env(cfg, far, Action::toggle), far);  // not adjacent to the door
  EnvState open = step_env(cfg, k, Action::toggle);
  EXPECT_TRUE(open.door_open);
  EXPECT_EQ(step_env(cfg, open, Action::right).agent, (Cell{2, 1}));
}

TEST(DoorKey, ReachableClosureAndMonotoneFlags) {
  for (std::uint64_t seed : {0u, 5u, 9u}) {
    GridConfig cfg = generate_env(seed);
    auto states = reachable_states(cfg);
    std::set<EnvState> reach(states.begin(), states.end());
    for (const auto& s : states)
      for (Action a : kActions) {
        EnvState n = step_env(cfg, s, a);
        EXPECT_TRUE(reach.count(n));
        EXPECT_GE(n.has_key, s.has_key);
        EXPECT_GE(n.door_open, s.door_open);
        EXPECT_FALSE(cfg.is_wall(n.agent));
        if (n.door_open) EXPECT_TRUE(n.has_key);
      }
  }
}

TEST(DoorKey, ObservationsAreInjectiveOnReachableStates) {
  GridConfig cfg = generate_env(3);
  auto states = reachable_states(cfg);
  std::set<std::vector<double>> xs, vs;
  for (const auto& s : states) {
    auto x = observe_x(cfg, s);
    auto v = observe_v(cfg, s);
    xs.insert(std::vector<double>(x.data(), x.data() + x.size()));
    vs.insert(std::vector<double>(v.data(), v.data() + v.size()));
    // observe_x inverts to the state given the config.
    const double n = cfg.size - 1;
    EnvState back{{static_cast<int>(std::lround(x[0] * n)), static_cast<int>(std::lround(x[1] * n))},
                  x[2] == 0.0 && x[3] == 0.0, x[6] == 1.0};
    EXPECT_EQ(back, s);
    EXPECT_EQ(x.size(), kObsXDim);
    EXPECT_GE(x.minCoeff(), 0.0);
    EXPECT_LE(x.maxCoeff(), 1.0);
  }
  EXPECT_EQ(xs.size(), states.size());
  EXPECT_EQ(vs.size(), states.size());
}

TEST(DoorKey, DoorFlagIsTheOnlyDifference) {
  GridConfig cfg = generate_env(4);
  EnvState closed{cfg.agent_start, true, false}, open{cfg.agent_start, true, true};
  Eigen::VectorXd dx = observe_x(cfg, open) - observe_x(cfg, closed);
  EXPECT_EQ((dx.array() != 0.0).count(), 1);
  EXPECT_EQ(dx[6], 1.0);
  Eigen::VectorXd dv = observe_v(cfg, open) - observe_v(cfg, closed);
  EXPECT_EQ((dv.array() != 0.0).count(), 1);
  const int hw = cfg.size * cfg.size;
  EXPECT_NE(dv[3 * hw + cfg.door.y * cfg.size + cfg.door.x], 0.0);
}

TEST(DoorKey, StaticChannelsAreOneHotPerCell) {
  GridConfig cfg = generate_env(6);
  Eigen::VectorXd v = observe_v(cfg, initial_state(cfg));
  const int hw = cfg.size * cfg.size;
  for (int p = 0; p < hw; ++p) {
    int lit = 0;
    for (int c : {0, 2, 3, 4}) lit += v[c * hw + p] != 0.0;
    EXPECT_LE(lit, 1);
  }
  EXPECT_EQ((v.segment(hw, hw).array() != 0.0).count(), 1);  // one agent cell
}

TEST(DoorKey, HandCountedOptimum) {
  // Key above the start, door right of the key: up, pickup, toggle, right, right, down, down.
  GridConfig cfg = fixture(5, 2, {2, 1}, {1, 1}, {1, 2}, {3, 3});
  Demonstration d = expert_solve(cfg);
  EXPECT_EQ(d.actions.size(), 7u);
  EnvState end = replay(cfg, initial_state(cfg), d.actions);
  EXPECT_TRUE(at_goal(cfg, end));
  EXPECT_TRUE(end.door_open);
  EXPECT_EQ(d.states.back(), end);
  EXPECT_EQ(d.states.size(), d.actions.size() + 1);
}

TEST(DoorKey, ExpertIsMinimalByExhaustiveSearch) {
  GridConfig cfg = fixture(5, 2, {2, 2}, {1, 1}, {1, 3}, {3, 2});
  const auto d = expert_solve(cfg);
  ASSERT_EQ(d.actions.size(), 7u);
  // No action string of length < 7 reaches the goal.
  bool shorter = false;
  std::function<void(EnvState, int)> dfs = [&](EnvState s, int left) {
    if (at_goal(cfg, s)) shorter = true;
    if (shorter || left == 0) return;
    for (Action a : kActions) dfs(step_env(cfg, s, a), left - 1);
  };
  dfs(initial_state(cfg), 6);
  EXPECT_FALSE(shorter);
}

TEST(DoorKey, ExpertPlansReplayToGoal) {
  for (std::uint64_t seed = 0; seed < 36; ++seed) {
    GridConfig cfg = generate_env(seed);
    auto d = expert_solve(cfg);
    EnvState end = replay(cfg, initial_state(cfg), d.actions);
    EXPECT_TRUE(at_goal(cfg, end));
    EXPECT_TRUE(end.door_open);
    auto seq = demonstration_sequence(cfg, d, ObsVariant::v, static_cast<std::int64_t>(seed));
    EXPECT_EQ(seq.length(), static_cast<int>(d.states.size()));
    EXPECT_EQ(seq.dim(), obs_v_dim(8));
  }
}

TEST(DoorKey, FreshStartsDifferAndStaySolvable) {
  for (std::uint64_t seed = 0; seed < 36; ++seed) {
    GridConfig cfg = generate_env(seed);
    GridConfig held = with_fresh_start(cfg, 1);
    EXPECT_NE(held.agent_start, cfg.agent_start);
    EXPECT_NE(held.agent_start, cfg.key);
    EXPECT_LT(held.agent_start.x, cfg.wall_x);
    EXPECT_TRUE(solvable(held));
  }
}

TEST(DoorKey, JsonRoundTripAndRender) {
  GridConfig cfg = fixture(5, 2, {2, 1}, {1, 1}, {1, 2}, {3, 3});
  EXPECT_EQ(grid_config_from_json(to_json(cfg)), cfg);
  EXPECT_EQ(render(cfg),
            "#####\n"
            "#KD.#\n"
            "#A#.#\n"
            "#.#G#\n"
            "#####\n");
  EnvState s{{1, 1}, true, true};
  EXPECT_EQ(render(cfg, s), "#####\n#Ad.#\n#.#.#\n#.#G#\n#####\n");
  auto bad = to_json(cfg);
  bad["key"] = {0, 0};
  EXPECT_THROW(grid_config_from_json(bad), ContractViolation);
}

TEST(DoorKey, RandomWalkSuffixContinuesFromCut) {
  GridConfig cfg = generate_env(2);
  auto d = expert_solve(cfg);
  auto pos = demonstration_sequence(cfg, d, ObsVariant::x, 0);
  auto sampler = random_walk_sampler({cfg}, {d.states}, ObsVariant::x);
  Rng rng = make_rng(4);
  std::set<std::vector<double>> reach;
  for (const auto& s : reachable_states(cfg)) {
    auto o = observe_x(cfg, s);
    reach.insert(std::vector<double>(o.data(), o.data() + o.size()));
  }
  for (int cut = 0; cut < pos.length(); ++cut) {
    auto out = sampler(SuffixRequest{pos, 0, cut, pos.length() - cut}, rng);
    ASSERT_EQ(out.steps.cols(), pos.length() - cut);
    // First sampled state is one action away from the state at the cut.
    const EnvState from = d.states[static_cast<std::size_t>(std::max(0, cut - 1))];
    bool one_step = false;
    for (Action a : kActions) one_step = one_step || observe_x(cfg, step_env(cfg, from, a)) == out.steps.col(0);
    EXPECT_TRUE(one_step);
    for (Eigen::Index t = 0; t < out.steps.cols(); ++t) {
      Eigen::VectorXd c = out.steps.col(t);
      EXPECT_TRUE(reach.count(std::vector<double>(c.data(), c.data() + c.size())));
    }
  }
}

TEST(DoorKey, ConvEncoderSeesAgentShift) {
  GridConfig cfg = generate_env(1);
  nn::ParamSet ps;
  Rng rng = make_rng(3);
  nn::ConvEncoder enc(ps, "enc", kObsVChannels, cfg.size, cfg.size, 5, 16, rng);
  EnvState s = initial_state(cfg), moved = s;
  for (Action a : kActions) {
    moved = step_env(cfg, s, a);
    if (moved.agent != s.agent) break;
  }
  ASSERT_NE(moved.agent, s.agent);
  nn::Mat a = enc.forward(observe_v(cfg, s)), b = enc.forward(observe_v(cfg, moved));
  EXPECT_GT((a - b).norm(), 1e-6);
  enc.conv.W->value.zero();
  enc.conv.b->value.zero();
  EXPECT_TRUE(enc.forward(observe_v(cfg, s)).isApprox(enc.forward(observe_v(cfg, moved))));
}
