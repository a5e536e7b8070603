#pragma once

// Door-Key gridworld: generation, dynamics, observation models and the BFS expert.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latmos/dataset.hpp"
#include "latmos/error.hpp"
#include "latmos/rng.hpp"

namespace latmos::doorkey {

struct Cell {
  int x = 0, y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

// The outer border is wall; a vertical wall at column `wall_x` splits the room
// and holds the single door. Key and start lie left of it, the goal right.
struct GridConfig {
  int size = 8;
  std::uint64_t seed = 0;
  int wall_x = 0;
  std::set<Cell> walls;  // includes the door cell's column except the door itself
  Cell key, door, goal, agent_start;

  bool is_wall(Cell c) const { return walls.count(c) > 0; }
  bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < size && c.y < size; }
  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct EnvState {
  Cell agent;
  bool has_key = false;
  bool door_open = false;
  friend bool operator==(const EnvState&, const EnvState&) = default;
  friend auto operator<=>(const EnvState&, const EnvState&) = default;
};

enum class Action : std::uint8_t { up = 0, down = 1, left = 2, right = 3, pickup = 4, toggle = 5 };
inline constexpr std::array<Action, 6> kActions = {Action::up,    Action::down,   Action::left,
                                                   Action::right, Action::pickup, Action::toggle};

inline const char* to_string(Action a) {
  switch (a) {
    case Action::up: return "up";
    case Action::down: return "down";
    case Action::left: return "left";
    case Action::right: return "right";
    case Action::pickup: return "pickup";
    case Action::toggle: return "toggle";
  }
  return "?";
}

inline Action parse_action(const std::string& s) {
  for (Action a : kActions)
    if (s == to_string(a)) return a;
  throw std::invalid_argument("unknown action: " + s);
}

inline EnvState initial_state(const GridConfig& cfg) { return {cfg.agent_start, false, false}; }

inline bool at_goal(const GridConfig& cfg, const EnvState& s) { return s.agent == cfg.goal; }

inline bool adjacent(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y) == 1; }

// Invalid or blocked actions leave the state unchanged.
inline EnvState step_env(const GridConfig& cfg, const EnvState& s, Action a) {
  EnvState n = s;
  Cell t = s.agent;
  switch (a) {
    case Action::up: --t.y; break;
    case Action::down: ++t.y; break;
    case Action::left: --t.x; break;
    case Action::right: ++t.x; break;
    case Action::pickup:
      if (!s.has_key && s.agent == cfg.key) n.has_key = true;
      return n;
    case Action::toggle:
      if (s.has_key && !s.door_open && adjacent(s.agent, cfg.door)) n.door_open = true;
      return n;
  }
  if (!cfg.inside(t) || cfg.is_wall(t) || (t == cfg.door && !s.door_open)) return n;
  n.agent = t;
  return n;
}

// ---------------------------------------------------------------------------
// Observations

inline constexpr int kObsXDim = 7;
inline constexpr int kObsVChannels = 5;  // wall, agent, key, door, goal
inline constexpr double kDoorOpenValue = 0.5;

// (agent x, y, key x, y, goal x, y, door_open), coordinates scaled by 1/(size-1).
// A picked-up key reads (0, 0), a border corner no key can occupy.
inline Eigen::VectorXd observe_x(const GridConfig& cfg, const EnvState& s) {
  const double k = 1.0 / (cfg.size - 1);
  Eigen::VectorXd o(kObsXDim);
  o << s.agent.x * k, s.agent.y * k, s.has_key ? 0.0 : cfg.key.x * k, s.has_key ? 0.0 : cfg.key.y * k,
      cfg.goal.x * k, cfg.goal.y * k, s.door_open ? 1.0 : 0.0;
  return o;
}

inline int obs_v_dim(int size) { return kObsVChannels * size * size; }

// Channel-major C x H x W grid flattened as c * H * W + y * W + x. Static
// objects are one-hot per cell; the door cell holds 1 closed / 0.5 open; the
// agent channel overlays whatever cell it stands on.
inline Eigen::VectorXd observe_v(const GridConfig& cfg, const EnvState& s) {
  const int n = cfg.size, hw = n * n;
  Eigen::VectorXd o = Eigen::VectorXd::Zero(obs_v_dim(n));
  auto at = [&](int ch, Cell c) -> double& { return o[ch * hw + c.y * n + c.x]; };
  for (const Cell& w : cfg.walls) at(0, w) = 1.0;
  at(1, s.agent) = 1.0;
  if (!s.has_key) at(2, cfg.key) = 1.0;
  at(3, cfg.door) = s.door_open ? kDoorOpenValue : 1.0;
  at(4, cfg.goal) = 1.0;
  return o;
}

enum class ObsVariant { x, v };

inline const char* to_string(ObsVariant v) { return v == ObsVariant::x ? "x" : "v"; }

inline ObsVariant parse_obs_variant(const std::string& s) {
  if (s == "x") return ObsVariant::x;
  if (s == "v") return ObsVariant::v;
  throw std::invalid_argument("unknown observation variant: " + s);
}

inline Eigen::VectorXd observe(const GridConfig& cfg, const EnvState& s, ObsVariant v) {
  return v == ObsVariant::x ? observe_x(cfg, s) : observe_v(cfg, s);
}

inline int obs_dim(const GridConfig& cfg, ObsVariant v) { return v == ObsVariant::x ? kObsXDim : obs_v_dim(cfg.size); }

inline Eigen::MatrixXd observe_trajectory(const GridConfig& cfg, const std::vector<EnvState>& states, ObsVariant v) {
  Eigen::MatrixXd m(obs_dim(cfg, v), static_cast<Eigen::Index>(states.size()));
  for (std::size_t t = 0; t < states.size(); ++t) m.col(static_cast<Eigen::Index>(t)) = observe(cfg, states[t], v);
  return m;
}

// ---------------------------------------------------------------------------
// Search over the product state space

inline std::vector<EnvState> reachable_states(const GridConfig& cfg, const EnvState& from) {
  std::set<EnvState> seen{from};
  std::vector<EnvState> order{from};
  for (std::size_t i = 0; i < order.size(); ++i)
    for (Action a : kActions) {
      EnvState n = step_env(cfg, order[i], a);
      if (seen.insert(n).second) order.push_back(n);
    }
  return order;
}

inline std::vector<EnvState> reachable_states(const GridConfig& cfg) { return reachable_states(cfg, initial_state(cfg)); }

struct Demonstration {
  std::vector<Action> actions;
  std::vector<EnvState> states;  // states.size() == actions.size() + 1
};

// Shortest action sequence to the goal by BFS; actions expand in kActions order.
inline std::optional<Demonstration> shortest_plan(const GridConfig& cfg, const EnvState& start) {
  std::vector<EnvState> nodes{start};
  std::vector<int> parent{-1};
  std::vector<Action> via{Action::up};
  std::set<EnvState> seen{start};
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (at_goal(cfg, nodes[i])) {
      Demonstration d;
      for (int k = static_cast<int>(i); k >= 0; k = parent[static_cast<std::size_t>(k)]) {
        d.states.push_back(nodes[static_cast<std::size_t>(k)]);
        if (parent[static_cast<std::size_t>(k)] >= 0) d.actions.push_back(via[static_cast<std::size_t>(k)]);
      }
      std::reverse(d.states.begin(), d.states.end());
      std::reverse(d.actions.begin(), d.actions.end());
      return d;
    }
    for (Action a : kActions) {
      EnvState n = step_env(cfg, nodes[i], a);
      if (!seen.insert(n).second) continue;
      nodes.push_back(n);
      parent.push_back(static_cast<int>(i));
      via.push_back(a);
    }
  }
  return std::nullopt;
}

inline Demonstration expert_solve(const GridConfig& cfg) {
  auto d = shortest_plan(cfg, initial_state(cfg));
  if (!d) throw Infeasible("expert_solve: configuration is unsolvable");
  return *d;
}

inline EnvState replay(const GridConfig& cfg, EnvState s, const std::vector<Action>& actions) {
  for (Action a : actions) s = step_env(cfg, s, a);
  return s;
}

// ---------------------------------------------------------------------------
// Generation

inline bool solvable(const GridConfig& cfg) { return shortest_plan(cfg, initial_state(cfg)).has_value(); }

inline GridConfig generate_env(std::uint64_t seed, int size = 8, int max_attempts = 1000) {
  require(size >= 5, "generate_env: size must be at least 5");
  Rng rng = make_rng(derive_seed(seed, {0x646f6f726b6579ULL}));
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    GridConfig cfg;
    cfg.size = size;
    cfg.seed = seed;
    cfg.wall_x = uniform_int(rng, 2, size - 3);
    for (int i = 0; i < size; ++i) {
      cfg.walls.insert({i, 0});
      cfg.walls.insert({i, size - 1});
      cfg.walls.insert({0, i});
      cfg.walls.insert({size - 1, i});
    }
    cfg.door = {cfg.wall_x, uniform_int(rng, 1, size - 2)};
    for (int y = 1; y < size - 1; ++y)
      if (y != cfg.door.y) cfg.walls.insert({cfg.wall_x, y});
    auto left_cell = [&] { return Cell{uniform_int(rng, 1, cfg.wall_x - 1), uniform_int(rng, 1, size - 2)}; };
    cfg.key = left_cell();
    cfg.agent_start = left_cell();
    if (cfg.agent_start == cfg.key) continue;
    cfg.goal = {uniform_int(rng, cfg.wall_x + 1, size - 2), uniform_int(rng, 1, size - 2)};
    if (solvable(cfg)) return cfg;
  }
  throw GenerationFailure("generate_env: no solvable layout within the attempt budget");
}

// Fresh agent start on the key side, distinct from the key and the demo start.
inline GridConfig with_fresh_start(const GridConfig& cfg, std::uint64_t seed) {
  std::vector<Cell> options;
  for (int x = 1; x < cfg.wall_x; ++x)
    for (int y = 1; y < cfg.size - 1; ++y) {
      Cell c{x, y};
      if (!cfg.is_wall(c) && c != cfg.key && c != cfg.agent_start) options.push_back(c);
    }
  if (options.empty()) throw Infeasible("with_fresh_start: no alternative start cell");
  Rng rng = make_rng(derive_seed(seed, {cfg.seed, 0x7374617274ULL}));
  GridConfig out = cfg;
  out.agent_start = options[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(options.size()) - 1))];
  return out;
}

// ---------------------------------------------------------------------------
// Demonstrations and negatives

inline ObservationSequence demonstration_sequence(const GridConfig& cfg, const Demonstration& d, ObsVariant v,
                                                  std::int64_t id) {
  return make_positive(observe_trajectory(cfg, d.states, v), id);
}

// Random-walk suffix through the simulator: uniform actions from the state at
// the cut (the last copied step; the demo start when nothing is copied).
// `trajectories[i]` holds the states behind positive i.
inline SuffixSampler random_walk_sampler(std::vector<GridConfig> configs, std::vector<std::vector<EnvState>> trajectories,
                                         ObsVariant v) {
  require(configs.size() == trajectories.size(), "random_walk_sampler: configs and trajectories differ in count");
  return [configs = std::move(configs), trajectories = std::move(trajectories), v](const SuffixRequest& req, Rng& rng) {
    require(req.source_index < configs.size(), "random_walk_sampler: source index out of range");
    const auto& cfg = configs[req.source_index];
    const auto& traj = trajectories[req.source_index];
    const EnvState from = traj[static_cast<std::size_t>(std::max(0, req.cut - 1))];
    const EnvState expert_next = traj[static_cast<std::size_t>(std::min<int>(req.cut, static_cast<int>(traj.size()) - 1))];
    SampledSuffix out;
    out.steps.resize(obs_dim(cfg, v), req.length);
    // Resample walks that follow the demonstration's next step or end on the goal:
    // those are not counterexamples. The last draw is kept if none qualifies.
    for (int attempt = 0; attempt < 100; ++attempt) {
      EnvState s = from;
      EnvState first = from;
      for (int k = 0; k < req.length; ++k) {
        s = step_env(cfg, s, kActions[static_cast<std::size_t>(uniform_int(rng, 0, 5))]);
        if (k == 0) first = s;
        out.steps.col(k) = observe(cfg, s, v);
      }
      if ((req.cut == 0 || !(first == expert_next)) && !at_goal(cfg, s)) break;
    }
    return out;
  };
}

// I.i.d. reachable states of the source's environment.
inline SuffixSampler reachable_state_sampler(std::vector<GridConfig> configs, ObsVariant v) {
  std::vector<std::vector<EnvState>> pools;
  for (const auto& c : configs) pools.push_back(reachable_states(c));
  return [configs = std::move(configs), pools = std::move(pools), v](const SuffixRequest& req, Rng& rng) {
    require(req.source_index < configs.size(), "reachable_state_sampler: source index out of range");
    const auto& pool = pools[req.source_index];
    SampledSuffix out;
    out.steps.resize(obs_dim(configs[req.source_index], v), req.length);
    for (int k = 0; k < req.length; ++k)
      out.steps.col(k) = observe(configs[req.source_index],
                                 pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))], v);
    return out;
  };
}

enum class NegativeSampler { random_walk, reachable_iid };

inline NegativeSampler parse_negative_sampler(const std::string& s) {
  if (s == "random_walk") return NegativeSampler::random_walk;
  if (s == "reachable_iid") return NegativeSampler::reachable_iid;
  throw std::invalid_argument("unknown negative sampler: " + s);
}

inline const char* to_string(NegativeSampler s) {
  return s == NegativeSampler::random_walk ? "random_walk" : "reachable_iid";
}

// One expert demonstration per config, augmented with synthetic negatives at every cut.
inline LabeledDataset demonstration_dataset(const std::vector<GridConfig>& configs, ObsVariant v, std::uint64_t seed,
                                            NegativeSampler kind = NegativeSampler::random_walk) {
  require(!configs.empty(), "demonstration_dataset: no configs");
  std::vector<ObservationSequence> positives;
  std::vector<std::vector<EnvState>> trajectories;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Demonstration d = expert_solve(configs[i]);
    positives.push_back(demonstration_sequence(configs[i], d, v, static_cast<std::int64_t>(i)));
    trajectories.push_back(std::move(d.states));
  }
  SuffixSampler sampler = kind == NegativeSampler::random_walk ? random_walk_sampler(configs, std::move(trajectories), v)
                                                               : reachable_state_sampler(configs, v);
  LabeledDataset ds = augment_with_negatives(positives, sampler, seed);
  ds.meta["negative_sampler"] = to_string(kind);
  ds.meta["observation"] = to_string(v);
  return ds;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json cell_json(Cell c) { return {c.x, c.y}; }
inline Cell cell_from_json(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

inline nlohmann::json to_json(const GridConfig& cfg) {
  nlohmann::json walls = nlohmann::json::array();
  for (const Cell& w : cfg.walls) walls.push_back(cell_json(w));
  return {{"size", cfg.size},           {"seed", cfg.seed},           {"wall_x", cfg.wall_x},
          {"walls", walls},             {"key", cell_json(cfg.key)},  {"door", cell_json(cfg.door)},
          {"goal", cell_json(cfg.goal)}, {"agent_start", cell_json(cfg.agent_start)}};
}

inline GridConfig grid_config_from_json(const nlohmann::json& j) {
  GridConfig cfg;
  cfg.size = j.at("size").get<int>();
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.wall_x = j.at("wall_x").get<int>();
  for (const auto& w : j.at("walls")) cfg.walls.insert(cell_from_json(w));
  cfg.key = cell_from_json(j.at("key"));
  cfg.door = cell_from_json(j.at("door"));
  cfg.goal = cell_from_json(j.at("goal"));
  cfg.agent_start = cell_from_json(j.at("agent_start"));
  require(cfg.size >= 5, "grid config: size must be at least 5");
  for (Cell c : {cfg.key, cfg.door, cfg.goal, cfg.agent_start})
    require(cfg.inside(c) && !cfg.is_wall(c), "grid config: object on a wall or outside the grid");
  return cfg;
}

// '#' wall, 'A' agent, 'K' key, 'D'/'d' closed/open door, 'G' goal, '.' empty.
inline std::string render(const GridConfig& cfg, const EnvState& s) {
  std::string out;
  for (int y = 0; y < cfg.size; ++y) {
    for (int x = 0; x < cfg.size; ++x) {
      const Cell c{x, y};
      char ch = '.';
      if (cfg.is_wall(c)) ch = '#';
      if (c == cfg.goal) ch = 'G';
      if (c == cfg.door) ch = s.door_open ? 'd' : 'D';
      if (c == cfg.key && !s.has_key) ch = 'K';
      if (c == s.agent) ch = 'A';
      out += ch;
    }
    out += '\n';
  }
  return out;
}

inline std::string render(const GridConfig& cfg) { return render(cfg, initial_state(cfg)); }

}  // namespace latmos::doorkey
