#pragma once

// Model-guided A* over Door-Key environment states.

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "latmos/doorkey.hpp"
#include "latmos/error.hpp"
#include "latmos/task_model.hpp"

namespace latmos::planner {

using doorkey::Action;
using doorkey::EnvState;
using doorkey::GridConfig;
using doorkey::ObsVariant;

enum class Heuristic { latmos_x, latmos_v, dijkstra, o_l2 };

inline const char* to_string(Heuristic h) {
  switch (h) {
    case Heuristic::latmos_x: return "latmos_x";
    case Heuristic::latmos_v: return "latmos_v";
    case Heuristic::dijkstra: return "dijkstra";
    case Heuristic::o_l2: return "o_l2";
  }
  return "?";
}

inline Heuristic parse_heuristic(const std::string& s) {
  for (Heuristic h : {Heuristic::latmos_x, Heuristic::latmos_v, Heuristic::dijkstra, Heuristic::o_l2})
    if (s == to_string(h)) return h;
  throw std::invalid_argument("unknown heuristic: " + s);
}

inline bool uses_model(Heuristic h) { return h == Heuristic::latmos_x || h == Heuristic::latmos_v; }

// Observation variant the heuristic's model consumes (o_l2 compares v grids).
inline ObsVariant variant_of(Heuristic h) { return h == Heuristic::latmos_x ? ObsVariant::x : ObsVariant::v; }

enum class GoalTest { environment, decoder_threshold };

struct PlannerOptions {
  double lambda = 0.05;
  int budget = 10000;  // maximum expansions
  GoalTest goal_test = GoalTest::environment;
  double goal_threshold = 0.9;  // decoder_threshold mode only
  double gamma_scale = 1.0;     // multiplies every gamma; the expansion order is invariant to it
};

struct SearchNode {
  EnvState env;
  int depth = 0;
  int parent = -1;
  Action via = Action::up;
  LatentState latent;  // after consuming the observations of the path to env
  double score = 0.0;  // model term: p_accept, -l2 distance, or 0
  double gamma = 0.0;
};

struct PlanResult {
  bool success = false;
  std::vector<Action> actions;
  std::vector<EnvState> states;  // start state included
  Eigen::MatrixXd observations;  // variant of the heuristic, one column per state
  std::vector<Vec> latents;      // model latent after each state (model heuristics only)
  long long explored = 0;        // E: nodes popped and expanded, the goal included
  long long generated = 0;
  int plan_length = 0;           // K'': number of actions
  double wall_time = 0.0;
  Heuristic heuristic = Heuristic::dijkstra;
  double lambda = 0.0;
};

// gamma = -lambda * k + score, where score is the decoder's acceptance
// probability of the successor latent for the model heuristics. The open list
// pops the largest gamma first.
inline double heuristic_gamma(double lambda, int depth, double score) { return -lambda * depth + score; }

inline double heuristic_gamma(const LatmosModel& model, const SearchNode& node, double lambda) {
  require(lambda >= 0.0, "heuristic_gamma: lambda must be non-negative");
  return heuristic_gamma(lambda, node.depth, model.acceptance_prob(node.latent).accept);
}

namespace detail {

// The goal image: agent on the goal with the key picked up and the door open.
inline Vec goal_observation(const GridConfig& cfg) {
  return doorkey::observe_v(cfg, EnvState{cfg.goal, true, true});
}

}  // namespace detail

// A* with closed-set dominance on the environment state: a state already
// reached at lower or equal depth is not pushed again. Ties pop FIFO.
inline PlanResult astar_plan(const GridConfig& cfg, const LatmosModel* model, Heuristic h,
                             const PlannerOptions& opt = {}, const EnvState* start_override = nullptr) {
  require(opt.lambda >= 0.0, "astar_plan: lambda must be non-negative");
  require(opt.gamma_scale > 0.0, "astar_plan: gamma_scale must be positive");
  require(!uses_model(h) || model != nullptr, "astar_plan: model heuristic needs a trained model");
  if (model) require(model->obs_dim() == doorkey::obs_dim(cfg, variant_of(h)) || !uses_model(h),
                     "astar_plan: model observation dimension does not match the heuristic's variant");
  const auto t0 = std::chrono::steady_clock::now();
  const ObsVariant variant = variant_of(h);
  const Vec goal_obs = detail::goal_observation(cfg);
  const EnvState start = start_override ? *start_override : doorkey::initial_state(cfg);

  PlanResult res;
  res.heuristic = h;
  res.lambda = opt.lambda;
  std::vector<SearchNode> nodes;
  std::map<EnvState, int> best_depth;
  struct Entry {
    double key;
    long long order;
    int node;
    bool operator>(const Entry& o) const { return key != o.key ? key > o.key : order > o.order; }
  };
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  long long order = 0;

  auto score_of = [&](const SearchNode& n) {
    switch (h) {
      case Heuristic::latmos_x:
      case Heuristic::latmos_v: return model->acceptance_prob(n.latent).accept;
      case Heuristic::o_l2: return -(doorkey::observe_v(cfg, n.env) - goal_obs).norm();
      case Heuristic::dijkstra: return 0.0;
    }
    return 0.0;
  };
  auto push = [&](SearchNode n) {
    n.score = score_of(n);
    n.gamma = opt.gamma_scale * heuristic_gamma(opt.lambda, n.depth, n.score);
    best_depth[n.env] = n.depth;
    nodes.push_back(std::move(n));
    open.push({-nodes.back().gamma, order++, static_cast<int>(nodes.size()) - 1});
    ++res.generated;
  };

  {
    SearchNode root;
    root.env = start;
    if (uses_model(h)) root.latent = model->advance_obs(doorkey::observe(cfg, start, variant), model->initial_state());
    push(std::move(root));
  }
  std::map<EnvState, bool> closed;
  int goal = -1;
  while (!open.empty() && res.explored < opt.budget) {
    const Entry e = open.top();
    open.pop();
    const SearchNode cur = nodes[static_cast<std::size_t>(e.node)];
    if (closed.count(cur.env) || cur.depth > best_depth[cur.env]) continue;
    closed[cur.env] = true;
    ++res.explored;
    // Decoder-threshold termination needs a model; other heuristics keep the predicate.
    const bool reached = opt.goal_test == GoalTest::decoder_threshold && uses_model(h)
                             ? cur.depth > 0 && model->acceptance_prob(cur.latent).accept >= opt.goal_threshold
                             : doorkey::at_goal(cfg, cur.env);
    if (reached) {
      goal = e.node;
      break;
    }
    for (Action a : doorkey::kActions) {
      const EnvState next = doorkey::step_env(cfg, cur.env, a);
      if (next == cur.env || closed.count(next)) continue;
      auto it = best_depth.find(next);
      if (it != best_depth.end() && it->second <= cur.depth + 1) continue;
      SearchNode child;
      child.env = next;
      child.depth = cur.depth + 1;
      child.parent = e.node;
      child.via = a;
      if (uses_model(h)) child.latent = model->advance_obs(doorkey::observe(cfg, next, variant), cur.latent);
      push(std::move(child));
    }
  }
  if (goal >= 0) {
    res.success = true;
    for (int k = goal; k >= 0; k = nodes[static_cast<std::size_t>(k)].parent) {
      const auto& n = nodes[static_cast<std::size_t>(k)];
      res.states.push_back(n.env);
      if (uses_model(h)) res.latents.push_back(n.latent.h);
      if (n.parent >= 0) res.actions.push_back(n.via);
    }
    std::reverse(res.states.begin(), res.states.end());
    std::reverse(res.actions.begin(), res.actions.end());
    std::reverse(res.latents.begin(), res.latents.end());
    res.plan_length = static_cast<int>(res.actions.size());
    res.observations = doorkey::observe_trajectory(cfg, res.states, variant);
  }
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// E / K''. A single-branch search to a goal K'' actions away pops K'' + 1 nodes.
inline double search_efficiency(const PlanResult& r) {
  require(r.success, "search_efficiency: undefined for a failed search");
  require(r.plan_length >= 1, "search_efficiency: zero-length plan");
  return static_cast<double>(r.explored) / static_cast<double>(r.plan_length);
}

struct Verification {
  bool environment_ok = false;
  bool model_ok = false;
  bool verified() const { return environment_ok && model_ok; }
  bool disagreement() const { return environment_ok != model_ok; }
};

// Replays the actions through the simulator (goal predicate) and runs
// model_check on the observation sequence of the whole plan.
inline Verification verify_plan(const GridConfig& cfg, const LatmosModel& model, ObsVariant variant,
                                const std::vector<Action>& actions, double threshold = 0.5,
                                const EnvState* start_override = nullptr) {
  std::vector<EnvState> states{start_override ? *start_override : doorkey::initial_state(cfg)};
  for (Action a : actions) states.push_back(doorkey::step_env(cfg, states.back(), a));
  Verification v;
  v.environment_ok = doorkey::at_goal(cfg, states.back());
  ObservationSequence seq;
  seq.steps = doorkey::observe_trajectory(cfg, states, variant);
  v.model_ok = model.model_check(seq, threshold);
  return v;
}

inline Verification verify_plan(const GridConfig& cfg, const LatmosModel& model, const PlanResult& r,
                                double threshold = 0.5) {
  require(r.success, "verify_plan: the search did not succeed");
  return verify_plan(cfg, model, variant_of(r.heuristic), r.actions, threshold, &r.states.front());
}

inline nlohmann::json to_json(const PlanResult& r, const GridConfig& cfg) {
  nlohmann::json actions = nlohmann::json::array();
  for (Action a : r.actions) actions.push_back(doorkey::to_string(a));
  nlohmann::json j = {{"config_seed", cfg.seed},
                      {"start", doorkey::cell_json(r.states.empty() ? cfg.agent_start : r.states.front().agent)},
                      {"heuristic", to_string(r.heuristic)},
                      {"lambda", r.lambda},
                      {"success", r.success},
                      {"actions", actions},
                      {"explored", r.explored},
                      {"generated", r.generated},
                      {"plan_length", r.plan_length}};
  j["efficiency"] = r.success && r.plan_length > 0 ? nlohmann::json(search_efficiency(r)) : nlohmann::json(nullptr);
  return j;
}

// Per-step latent vectors along the plan, one row per step.
inline nlohmann::json latent_dump(const PlanResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& h : r.latents) rows.push_back(std::vector<double>(h.data(), h.data() + h.size()));
  return rows;
}

}  // namespace latmos::planner
