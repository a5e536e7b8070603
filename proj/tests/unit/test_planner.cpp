#include <gtest/gtest.h>

#include <map>
#include <queue>

#include "latmos/planner.hpp"

using namespace latmos;
using namespace latmos::doorkey;
using namespace latmos::planner;

namespace {

// Independent BFS over (x, y, key, open) built from the rendered grid text.
int bfs_optimum(const GridConfig& cfg, Cell start) {
  std::vector<std::string> g;
  std::string text = render(cfg), row;
  for (char c : text) {
    if (c == '\n') {
      g.push_back(row);
      row.clear();
    } else {
      row += c;
    }
  }
  using S = std::array<int, 4>;
  std::map<S, int> dist{{{start.x, start.y, 0, 0}, 0}};
  std::queue<S> q;
  q.push({start.x, start.y, 0, 0});
  while (!q.empty()) {
    S s = q.front();
    q.pop();
    if (s[0] == cfg.goal.x && s[1] == cfg.goal.y) return dist[s];
    std::vector<S> next;
    const int mv[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
    for (auto& m : mv) {
      const int nx = s[0] + m[0], ny = s[1] + m[1];
      const char c = g[ny][nx];
      if (c == '#' || (c == 'D' && !s[3])) continue;
      if (nx == cfg.door.x && ny == cfg.door.y && !s[3]) continue;
      next.push_back({nx, ny, s[2], s[3]});
    }
    if (!s[2] && s[0] == cfg.key.x && s[1] == cfg.key.y) next.push_back({s[0], s[1], 1, s[3]});
    if (s[2] && !s[3] && std::abs(s[0] - cfg.door.x) + std::abs(s[1] - cfg.door.y) == 1)
      next.push_back({s[0], s[1], s[2], 1});
    for (const S& n : next)
      if (!dist.count(n)) {
        dist[n] = dist[s] + 1;
        q.push(n);
      }
  }
  return -1;
}

ModelConfig x_model(std::uint64_t seed = 3) {
  ModelConfig mc;
  mc.obs_dim = kObsXDim;
  mc.backbone = BackboneKind::gru;
  mc.hidden_dim = 16;
  mc.seed = seed;
  return mc;
}

void jitter(LatmosModel& m, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params()[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] += uniform_real(rng, -0.5, 0.5);
  }
}

// 7x7 grid, dividing wall at x=3 with the door at (3,3). The agent starts on
// the goal side so no key or door interaction is needed.
GridConfig open_room() {
  GridConfig cfg;
  cfg.size = 7;
  cfg.wall_x = 3;
  for (int i = 0; i < 7; ++i) {
    cfg.walls.insert({i, 0});
    cfg.walls.insert({i, 6});
    cfg.walls.insert({0, i});
    cfg.walls.insert({6, i});
    if (i >= 1 && i <= 5 && i != 3) cfg.walls.insert({3, i});
  }
  cfg.door = {3, 3};
  cfg.key = {1, 1};
  cfg.agent_start = {4, 1};
  cfg.goal = {5, 5};
  return cfg;
}

// Same grid with column x=5 walled off: a single corridor from (4,1) to (4,5).
GridConfig corridor() {
  GridConfig cfg = open_room();
  for (int y = 1; y <= 5; ++y) cfg.walls.insert({5, y});
  cfg.goal = {4, 5};
  return cfg;
}

}  // namespace

TEST(Planner, GammaExamples) {
  EXPECT_DOUBLE_EQ(heuristic_gamma(0.0, 7, 0.3), 0.3);
  EXPECT_GT(heuristic_gamma(0.05, 3, 0.8), heuristic_gamma(0.05, 3, 0.7));
  EXPECT_GT(heuristic_gamma(0.05, 2, 0.5), heuristic_gamma(0.05, 3, 0.5));
  LatmosModel m(x_model());
  SearchNode n;
  n.depth = 4;
  n.latent = m.initial_state();
  EXPECT_DOUBLE_EQ(heuristic_gamma(m, n, 0.1), -0.4 + 0.5);
  EXPECT_THROW(heuristic_gamma(m, n, -1.0), ContractViolation);
}

TEST(Planner, DijkstraIsBfsOptimalOnAllConfigs) {
  for (std::uint64_t seed = 0; seed < 36; ++seed) {
    for (GridConfig cfg : {generate_env(seed), with_fresh_start(generate_env(seed), 1)}) {
      auto r = astar_plan(cfg, nullptr, Heuristic::dijkstra);
      ASSERT_TRUE(r.success);
      EXPECT_EQ(r.plan_length, bfs_optimum(cfg, cfg.agent_start)) << "seed " << seed;
      EXPECT_TRUE(at_goal(cfg, replay(cfg, initial_state(cfg), r.actions)));
      EXPECT_GE(r.explored, r.plan_length + 1);
    }
  }
}

TEST(Planner, UntrainedModelDegeneratesToBreadthFirst) {
  LatmosModel m(x_model());  // zero-initialized decoder output: p_accept = 0.5 everywhere
  for (std::uint64_t seed : {0u, 7u, 21u}) {
    GridConfig cfg = generate_env(seed);
    auto a = astar_plan(cfg, &m, Heuristic::latmos_x);
    auto b = astar_plan(cfg, nullptr, Heuristic::dijkstra);
    EXPECT_EQ(a.actions, b.actions);
    EXPECT_EQ(a.explored, b.explored);
    EXPECT_EQ(a.generated, b.generated);
  }
}

TEST(Planner, SingleBranchCorridorEfficiency) {
  GridConfig cfg = corridor();
  auto r = astar_plan(cfg, nullptr, Heuristic::dijkstra);
  ASSERT_TRUE(r.success);
  EXPECT_EQ(r.plan_length, 4);
  EXPECT_EQ(r.explored, 5);
  EXPECT_DOUBLE_EQ(search_efficiency(r), 5.0 / 4.0);
}

TEST(Planner, L2HeuristicTakesAStraightPlanInAnOpenRoom) {
  GridConfig cfg = open_room();
  auto r = astar_plan(cfg, nullptr, Heuristic::o_l2);
  ASSERT_TRUE(r.success);
  EXPECT_EQ(r.plan_length, 1 + 4);  // Manhattan distance
  for (Action a : r.actions) EXPECT_TRUE(a == Action::right || a == Action::down);
}

TEST(Planner, ExpansionOrderInvariantToGammaScale) {
  LatmosModel m(x_model());
  jitter(m, 9);
  for (std::uint64_t seed : {1u, 4u}) {
    GridConfig cfg = generate_env(seed);
    PlannerOptions base;
    auto ref = astar_plan(cfg, &m, Heuristic::latmos_x, base);
    for (double c : {0.5, 4.0}) {
      PlannerOptions o = base;
      o.gamma_scale = c;
      auto r = astar_plan(cfg, &m, Heuristic::latmos_x, o);
      EXPECT_EQ(r.actions, ref.actions);
      EXPECT_EQ(r.explored, ref.explored);
      EXPECT_EQ(r.generated, ref.generated);
    }
  }
}

TEST(Planner, BudgetMonotonicity) {
  LatmosModel m(x_model());
  jitter(m, 5);
  GridConfig cfg = generate_env(11);
  bool succeeded = false;
  for (int budget = 1; budget <= 200; ++budget) {
    PlannerOptions o;
    o.budget = budget;
    auto r = astar_plan(cfg, &m, Heuristic::latmos_x, o);
    if (succeeded) EXPECT_TRUE(r.success) << "budget " << budget;
    if (!r.success) EXPECT_EQ(r.explored, budget);
    succeeded = succeeded || r.success;
  }
  EXPECT_TRUE(succeeded);
}

TEST(Planner, CachedLatentsMatchRecomputation) {
  for (BackboneKind k : {BackboneKind::gru, BackboneKind::ssm, BackboneKind::attention}) {
    ModelConfig mc = x_model();
    mc.backbone = k;
    LatmosModel m(mc);
    jitter(m, 2);
    GridConfig cfg = generate_env(6);
    auto r = astar_plan(cfg, &m, Heuristic::latmos_x);
    ASSERT_TRUE(r.success);
    ObservationSequence seq;
    seq.steps = r.observations;
    auto fresh = m.latent_trajectory(seq);
    ASSERT_EQ(fresh.size(), r.latents.size() + 1);
    for (std::size_t t = 0; t < r.latents.size(); ++t) EXPECT_EQ(fresh[t + 1], r.latents[t]) << to_string(k);
  }
}

TEST(Planner, VerifyPlanRejectsTruncatedAndLoopingPlans) {
  LatmosModel m(x_model());
  GridConfig cfg = generate_env(2);
  auto expert = expert_solve(cfg).actions;
  std::vector<Action> truncated(expert.begin(), expert.end() - 1);
  EXPECT_FALSE(verify_plan(cfg, m, ObsVariant::x, truncated).environment_ok);
  EXPECT_FALSE(verify_plan(cfg, m, ObsVariant::x, truncated).verified());
  std::vector<Action> loop;
  for (int i = 0; i < 50; ++i) loop.insert(loop.end(), {Action::up, Action::down});
  EXPECT_FALSE(verify_plan(cfg, m, ObsVariant::x, loop).verified());
  EXPECT_TRUE(verify_plan(cfg, m, ObsVariant::x, expert).environment_ok);
}

TEST(Planner, ExpertPlansVerifyUnderATrainedModel) {
  std::vector<GridConfig> cfgs;
  for (std::uint64_t s = 0; s < 36; ++s) cfgs.push_back(generate_env(s));
  ModelConfig mc = x_model();
  mc.hidden_dim = 32;
  LatmosModel m(mc);
  TrainConfig tc;
  tc.epochs = 100;
  tc.patience = 0;
  tc.adam.lr = 3e-3;
  tc.val_fraction = 0.0;
  tc.seed = 4;
  train(m, demonstration_dataset(cfgs, ObsVariant::x, 7), tc);
  int ok = 0;
  for (const auto& cfg : cfgs) ok += verify_plan(cfg, m, ObsVariant::x, expert_solve(cfg).actions).verified();
  EXPECT_GE(ok, 33);  // >= 90% of 36
}

TEST(Planner, TraceRecordReplays) {
  GridConfig cfg = generate_env(8);
  auto r = astar_plan(cfg, nullptr, Heuristic::dijkstra);
  auto j = to_json(r, cfg);
  EXPECT_EQ(j["heuristic"], "dijkstra");
  EXPECT_EQ(j["plan_length"], r.plan_length);
  std::vector<Action> actions;
  for (const auto& a : j["actions"]) actions.push_back(parse_action(a.get<std::string>()));
  EXPECT_TRUE(at_goal(cfg, replay(cfg, initial_state(cfg), actions)));
  EXPECT_DOUBLE_EQ(j["efficiency"].get<double>(), search_efficiency(r));
}

TEST(Planner, FailedSearchHasNoEfficiency) {
  PlannerOptions o;
  o.budget = 2;
  auto r = astar_plan(generate_env(3), nullptr, Heuristic::dijkstra, o);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.explored, 2);
  EXPECT_THROW(search_efficiency(r), ContractViolation);
  EXPECT_THROW(astar_plan(generate_env(3), nullptr, Heuristic::latmos_v), ContractViolation);
}
