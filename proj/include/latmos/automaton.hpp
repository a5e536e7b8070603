#pragma once

// Ground-truth task automata: representation, random generation, acceptance
// semantics, positive-walk sampling and atomic-proposition encodings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latmos/error.hpp"
#include "latmos/rng.hpp"

namespace latmos {

class Dfa {
 public:
  Dfa() = default;

  // `transition` is row-major: transition[s * num_symbols + a].
  Dfa(int num_states, int num_symbols, std::vector<int> transition, int initial,
      std::vector<int> accepting)
      : num_states_(num_states),
        num_symbols_(num_symbols),
        transition_(std::move(transition)),
        initial_(initial),
        accepting_(std::move(accepting)) {
    require(num_states_ >= 1 && num_symbols_ >= 1, "Dfa: sizes must be positive");
    require(transition_.size() == static_cast<std::size_t>(num_states_) * num_symbols_,
            "Dfa: transition table must be total");
    for (int t : transition_) require(t >= 0 && t < num_states_, "Dfa: transition target out of range");
    require(initial_ >= 0 && initial_ < num_states_, "Dfa: initial state out of range");
    require(!accepting_.empty(), "Dfa: accepting set must be non-empty");
    std::sort(accepting_.begin(), accepting_.end());
    accepting_.erase(std::unique(accepting_.begin(), accepting_.end()), accepting_.end());
    is_accepting_.assign(num_states_, false);
    for (int f : accepting_) {
      require(f >= 0 && f < num_states_, "Dfa: accepting state out of range");
      is_accepting_[f] = true;
    }
  }

  int num_states() const noexcept { return num_states_; }
  int num_symbols() const noexcept { return num_symbols_; }
  int initial() const noexcept { return initial_; }
  const std::vector<int>& accepting() const noexcept { return accepting_; }
  const std::vector<int>& transition_table() const noexcept { return transition_; }

  bool is_accepting(int s) const {
    require(s >= 0 && s < num_states_, "Dfa: state index out of range");
    return is_accepting_[s];
  }

  int next(int s, int a) const {
    require(s >= 0 && s < num_states_, "Dfa::next: state index out of range");
    require(a >= 0 && a < num_symbols_, "Dfa::next: symbol index out of range");
    return transition_[static_cast<std::size_t>(s) * num_symbols_ + a];
  }

  friend bool operator==(const Dfa& a, const Dfa& b) {
    return a.num_states_ == b.num_states_ && a.num_symbols_ == b.num_symbols_ &&
           a.transition_ == b.transition_ && a.initial_ == b.initial_ &&
           a.accepting_ == b.accepting_;
  }

 private:
  int num_states_ = 0;
  int num_symbols_ = 0;
  std::vector<int> transition_;
  int initial_ = 0;
  std::vector<int> accepting_;
  std::vector<bool> is_accepting_;
};

// Which (state, symbol) transitions may be used; all allowed by default.
class TransitionMask {
 public:
  TransitionMask() = default;
  TransitionMask(int num_states, int num_symbols)
      : num_symbols_(num_symbols), allowed_(static_cast<std::size_t>(num_states) * num_symbols, true) {}

  static TransitionMask all_allowed(const Dfa& dfa) { return {dfa.num_states(), dfa.num_symbols()}; }

  bool allowed(int s, int a) const { return allowed_[static_cast<std::size_t>(s) * num_symbols_ + a]; }
  void set(int s, int a, bool v) { allowed_[static_cast<std::size_t>(s) * num_symbols_ + a] = v; }
  std::size_t num_blocked() const {
    return static_cast<std::size_t>(std::count(allowed_.begin(), allowed_.end(), false));
  }

 private:
  int num_symbols_ = 0;
  std::vector<bool> allowed_;
};

struct SymbolWalk {
  std::vector<int> symbols;
  std::vector<int> states;  // states.size() == symbols.size() + 1
  bool accepted = false;
};

inline int step(const Dfa& dfa, int state, int symbol) { return dfa.next(state, symbol); }

inline SymbolWalk run(const Dfa& dfa, const std::vector<int>& symbols) {
  SymbolWalk w;
  w.symbols = symbols;
  w.states.reserve(symbols.size() + 1);
  w.states.push_back(dfa.initial());
  for (int a : symbols) w.states.push_back(dfa.next(w.states.back(), a));
  w.accepted = dfa.is_accepting(w.states.back());
  return w;
}

inline bool accepts(const Dfa& dfa, const std::vector<int>& symbols) {
  int s = dfa.initial();
  for (int a : symbols) s = dfa.next(s, a);
  return dfa.is_accepting(s);
}

// Per-step acceptance of every non-empty prefix: out[k] = accepts(symbols[0..k]).
inline std::vector<std::uint8_t> prefix_acceptance(const Dfa& dfa, const std::vector<int>& symbols) {
  std::vector<std::uint8_t> out;
  out.reserve(symbols.size());
  int s = dfa.initial();
  for (int a : symbols) {
    s = dfa.next(s, a);
    out.push_back(dfa.is_accepting(s) ? 1 : 0);
  }
  return out;
}

inline bool walk_uses_blocked(const SymbolWalk& w, const TransitionMask& mask) {
  for (std::size_t k = 0; k < w.symbols.size(); ++k)
    if (!mask.allowed(w.states[k], w.symbols[k])) return true;
  return false;
}

namespace detail {

inline std::vector<int> bfs_distances(const Dfa& dfa, const TransitionMask* mask, int source) {
  std::vector<int> dist(dfa.num_states(), -1);
  std::deque<int> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    int s = queue.front();
    queue.pop_front();
    for (int a = 0; a < dfa.num_symbols(); ++a) {
      if (mask && !mask->allowed(s, a)) continue;
      int t = dfa.next(s, a);
      if (dist[t] < 0) {
        dist[t] = dist[s] + 1;
        queue.push_back(t);
      }
    }
  }
  return dist;
}

// Shortest number of steps from each state to any accepting state (-1: never).
inline std::vector<int> distance_to_accepting(const Dfa& dfa, const TransitionMask* mask) {
  const int n = dfa.num_states();
  std::vector<int> dist(n, -1);
  std::deque<int> queue;
  for (int f : dfa.accepting()) {
    dist[f] = 0;
    queue.push_back(f);
  }
  while (!queue.empty()) {
    int t = queue.front();
    queue.pop_front();
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < dfa.num_symbols(); ++a) {
        if (mask && !mask->allowed(s, a)) continue;
        if (dfa.next(s, a) == t && dist[s] < 0) {
          dist[s] = dist[t] + 1;
          queue.push_back(s);
        }
      }
  }
  return dist;
}

}  // namespace detail

// can_finish[len][s]: an allowed walk of exactly `len` symbols leads from s into F.
inline std::vector<std::vector<bool>> exact_length_table(const Dfa& dfa, int max_len,
                                                         const TransitionMask* mask = nullptr) {
  std::vector<std::vector<bool>> table(max_len + 1, std::vector<bool>(dfa.num_states(), false));
  for (int s = 0; s < dfa.num_states(); ++s) table[0][s] = dfa.is_accepting(s);
  for (int len = 1; len <= max_len; ++len)
    for (int s = 0; s < dfa.num_states(); ++s)
      for (int a = 0; a < dfa.num_symbols() && !table[len][s]; ++a)
        if ((!mask || mask->allowed(s, a)) && table[len - 1][dfa.next(s, a)]) table[len][s] = true;
  return table;
}

// Walk lengths in [1, max_len] for which an accepting walk from the initial state exists.
inline std::vector<int> feasible_lengths(const Dfa& dfa, int max_len, const TransitionMask* mask = nullptr) {
  auto table = exact_length_table(dfa, max_len, mask);
  std::vector<int> lens;
  for (int len = 1; len <= max_len; ++len)
    if (table[len][dfa.initial()]) lens.push_back(len);
  return lens;
}

inline bool all_states_reachable(const Dfa& dfa) {
  auto d = detail::bfs_distances(dfa, nullptr, dfa.initial());
  return std::none_of(d.begin(), d.end(), [](int x) { return x < 0; });
}

inline bool all_states_coreachable(const Dfa& dfa) {
  auto d = detail::distance_to_accepting(dfa, nullptr);
  return std::none_of(d.begin(), d.end(), [](int x) { return x < 0; });
}

// True if (s, a) lies on an accepting walk from the initial state of at most max_len symbols.
inline bool transition_on_short_accepting_walk(const Dfa& dfa, int s, int a, int max_len,
                                               const std::vector<int>& from_init,
                                               const std::vector<int>& to_accept) {
  int t = dfa.next(s, a);
  return from_init[s] >= 0 && to_accept[t] >= 0 && from_init[s] + 1 + to_accept[t] <= max_len;
}

struct DfaGenOptions {
  int num_accepting = 1;
  // Every transition must lie on an accepting walk of length <= coverage_len
  // (0 means num_states; negative disables the check).
  int coverage_len = 0;
  int max_attempts = 20000;
};

inline Dfa generate_random_dfa(int num_states, int num_symbols, std::uint64_t seed,
                               const DfaGenOptions& opts = {}) {
  require(num_states >= 2, "generate_random_dfa: num_states must be >= 2");
  require(num_symbols >= 2, "generate_random_dfa: num_symbols must be >= 2");
  require(opts.num_accepting >= 1 && opts.num_accepting < num_states,
          "generate_random_dfa: need 1 <= num_accepting < num_states");
  const int coverage = opts.coverage_len == 0 ? num_states : opts.coverage_len;
  Rng rng = make_rng(seed);
  for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
    std::vector<int> table(static_cast<std::size_t>(num_states) * num_symbols);
    for (int& t : table) t = uniform_int(rng, 0, num_states - 1);
    std::vector<int> candidates(num_states - 1);
    std::iota(candidates.begin(), candidates.end(), 1);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::vector<int> accepting(candidates.begin(), candidates.begin() + opts.num_accepting);
    Dfa dfa(num_states, num_symbols, std::move(table), 0, std::move(accepting));
    if (!all_states_reachable(dfa) || !all_states_coreachable(dfa)) continue;
    if (coverage > 0) {
      auto from_init = detail::bfs_distances(dfa, nullptr, dfa.initial());
      auto to_accept = detail::distance_to_accepting(dfa, nullptr);
      bool covered = true;
      for (int s = 0; s < num_states && covered; ++s)
        for (int a = 0; a < num_symbols && covered; ++a)
          covered = transition_on_short_accepting_walk(dfa, s, a, coverage, from_init, to_accept);
      if (!covered) continue;
    }
    return dfa;
  }
  throw GenerationFailure("generate_random_dfa: no admissible DFA found for " +
                          std::to_string(num_states) + " states / " + std::to_string(num_symbols) +
                          " symbols");
}

namespace detail {

inline SymbolWalk random_walk(const Dfa& dfa, int len, Rng& rng, const TransitionMask* mask) {
  SymbolWalk w;
  w.states.push_back(dfa.initial());
  std::vector<int> options;
  for (int k = 0; k < len; ++k) {
    int s = w.states.back();
    options.clear();
    for (int a = 0; a < dfa.num_symbols(); ++a)
      if (!mask || mask->allowed(s, a)) options.push_back(a);
    if (options.empty()) break;
    int a = options[uniform_int(rng, 0, static_cast<int>(options.size()) - 1)];
    w.symbols.push_back(a);
    w.states.push_back(dfa.next(s, a));
  }
  w.accepted = dfa.is_accepting(w.states.back());
  return w;
}

// Uniform choice among successors that can still finish in F within the remaining budget.
inline SymbolWalk guided_walk(const Dfa& dfa, int len, Rng& rng, const TransitionMask* mask,
                              const std::vector<std::vector<bool>>& table) {
  SymbolWalk w;
  w.states.push_back(dfa.initial());
  std::vector<int> options;
  for (int k = 0; k < len; ++k) {
    int s = w.states.back();
    int remaining = len - k - 1;
    options.clear();
    for (int a = 0; a < dfa.num_symbols(); ++a)
      if ((!mask || mask->allowed(s, a)) && table[remaining][dfa.next(s, a)]) options.push_back(a);
    int a = options[uniform_int(rng, 0, static_cast<int>(options.size()) - 1)];
    w.symbols.push_back(a);
    w.states.push_back(dfa.next(s, a));
  }
  w.accepted = dfa.is_accepting(w.states.back());
  return w;
}

}  // namespace detail

// Positive demonstrations: random walks whose length is uniform over the feasible
// lengths in [1, max_len], conditioned on ending accepting by restarting. After
// 100 * count failed restarts the remaining walks are completed with guided steps.
inline std::vector<SymbolWalk> sample_positive_walks(const Dfa& dfa, int count, int max_len, std::uint64_t seed,
                                                     const TransitionMask* mask = nullptr) {
  require(count >= 1, "sample_positive_walks: count must be >= 1");
  require(max_len >= 1, "sample_positive_walks: max_len must be >= 1");
  auto lens = feasible_lengths(dfa, max_len, mask);
  if (lens.empty()) throw Infeasible("sample_positive_walks: no accepting walk of length <= max_len");
  auto table = exact_length_table(dfa, max_len, mask);
  Rng rng = make_rng(seed);
  std::vector<SymbolWalk> walks;
  walks.reserve(count);
  long long failures = 0;
  const long long failure_budget = 100LL * count;
  while (static_cast<int>(walks.size()) < count) {
    int len = lens[uniform_int(rng, 0, static_cast<int>(lens.size()) - 1)];
    if (failures < failure_budget) {
      SymbolWalk w = detail::random_walk(dfa, len, rng, mask);
      if (w.accepted && static_cast<int>(w.symbols.size()) == len) {
        walks.push_back(std::move(w));
      } else {
        ++failures;
      }
    } else {
      walks.push_back(detail::guided_walk(dfa, len, rng, mask, table));
    }
  }
  return walks;
}

// Rejection sampler for walks of uniform length in [1, max_len] (uniform symbols
// among allowed ones) satisfying `keep`.
inline std::vector<SymbolWalk> sample_walks_where(const Dfa& dfa, int count, int max_len, Rng& rng,
                                                  const std::function<bool(const SymbolWalk&)>& keep,
                                                  const TransitionMask* mask = nullptr,
                                                  long long max_tries = 2'000'000) {
  std::vector<SymbolWalk> out;
  out.reserve(count);
  long long tries = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++tries > max_tries) throw Infeasible("sample_walks_where: predicate too rare");
    int len = uniform_int(rng, 1, max_len);
    SymbolWalk w = detail::random_walk(dfa, len, rng, mask);
    if (static_cast<int>(w.symbols.size()) == len && keep(w)) out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Atomic-proposition vectors

enum class ApEncoding { one_hot, binary };

inline int ap_dimension(ApEncoding enc, int num_symbols) {
  if (enc == ApEncoding::one_hot) return num_symbols;
  int p = 1;
  while ((1 << p) < num_symbols) ++p;
  return p;
}

inline Eigen::VectorXd symbol_to_ap_vector(int symbol, int P, ApEncoding enc = ApEncoding::one_hot) {
  require(P >= 1, "symbol_to_ap_vector: P must be positive");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(P);
  if (enc == ApEncoding::one_hot) {
    require(symbol >= 0 && symbol < P, "symbol_to_ap_vector: symbol out of one-hot range");
    v[symbol] = 1.0;
  } else {
    require(P < 31 && symbol >= 0 && symbol < (1 << P), "symbol_to_ap_vector: symbol out of binary range");
    for (int i = 0; i < P; ++i) v[i] = (symbol >> (P - 1 - i)) & 1 ? 1.0 : 0.0;
  }
  return v;
}

// Inverse of symbol_to_ap_vector for noiseless vectors; -1 if the vector is not a valid code.
inline int ap_vector_to_symbol(const Eigen::VectorXd& v, ApEncoding enc = ApEncoding::one_hot) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0 && v[i] != 1.0) return -1;
  if (enc == ApEncoding::one_hot) {
    if (v.sum() != 1.0) return -1;
    Eigen::Index idx;
    v.maxCoeff(&idx);
    return static_cast<int>(idx);
  }
  int s = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s = (s << 1) | (v[i] == 1.0 ? 1 : 0);
  return s;
}

inline Eigen::VectorXd add_ap_noise(const Eigen::VectorXd& vec, double variance, Rng& rng) {
  require(variance >= 0.0, "add_ap_noise: variance must be non-negative");
  if (variance == 0.0) return vec;
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  Eigen::VectorXd out = vec;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += noise(rng);
  return out;
}

inline Eigen::VectorXd add_ap_noise(const Eigen::VectorXd& vec, double variance, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return add_ap_noise(vec, variance, rng);
}

// Observation matrix (P x length) for a symbol sequence, optionally perturbed.
inline Eigen::MatrixXd symbols_to_observations(const std::vector<int>& symbols, int P, ApEncoding enc,
                                               double noise_variance = 0.0, Rng* rng = nullptr) {
  Eigen::MatrixXd obs(P, static_cast<Eigen::Index>(symbols.size()));
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    Eigen::VectorXd v = symbol_to_ap_vector(symbols[k], P, enc);
    if (noise_variance > 0.0) {
      require(rng != nullptr, "symbols_to_observations: noise requires an rng");
      v = add_ap_noise(v, noise_variance, *rng);
    }
    obs.col(static_cast<Eigen::Index>(k)) = v;
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Held-out transitions for the novel-AP configuration

struct TransitionHoldout {
  TransitionMask train_mask;                       // allowed during training
  std::vector<std::pair<int, int>> test_only;      // (state, symbol) pairs removed from training
};

inline TransitionHoldout holdout_transitions(const Dfa& dfa, double fraction, std::uint64_t seed,
                                             int max_len = 0, int max_attempts = 5000) {
  require(fraction > 0.0 && fraction < 1.0, "holdout_transitions: fraction must be in (0, 1)");
  if (max_len <= 0) max_len = dfa.num_states();
  const int total = dfa.num_states() * dfa.num_symbols();
  const int k = static_cast<int>(std::floor(fraction * total));
  TransitionHoldout out{TransitionMask::all_allowed(dfa), {}};
  if (k == 0) return out;

  auto from_init = detail::bfs_distances(dfa, nullptr, dfa.initial());
  auto to_accept = detail::distance_to_accepting(dfa, nullptr);
  std::vector<std::pair<int, int>> candidates;
  for (int s = 0; s < dfa.num_states(); ++s)
    for (int a = 0; a < dfa.num_symbols(); ++a)
      if (transition_on_short_accepting_walk(dfa, s, a, max_len, from_init, to_accept))
        candidates.emplace_back(s, a);
  if (static_cast<int>(candidates.size()) < k)
    throw Infeasible("holdout_transitions: not enough transitions on short accepting walks");

  Rng rng = make_rng(seed);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::shuffle(candidates.begin(), candidates.end(), rng);
    TransitionMask mask = TransitionMask::all_allowed(dfa);
    for (int i = 0; i < k; ++i) mask.set(candidates[i].first, candidates[i].second, false);
    if (feasible_lengths(dfa, max_len, &mask).empty()) continue;
    out.train_mask = mask;
    out.test_only.assign(candidates.begin(), candidates.begin() + k);
    std::sort(out.test_only.begin(), out.test_only.end());
    return out;
  }
  throw Infeasible("holdout_transitions: every sampled mask disconnects the accepting paths");
}

// ---------------------------------------------------------------------------
// Structured-text serialization

inline nlohmann::json dfa_to_json(const Dfa& dfa) {
  nlohmann::json rows = nlohmann::json::array();
  for (int s = 0; s < dfa.num_states(); ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < dfa.num_symbols(); ++a) row.push_back(dfa.next(s, a));
    rows.push_back(row);
  }
  return {{"num_states", dfa.num_states()},
          {"num_symbols", dfa.num_symbols()},
          {"initial", dfa.initial()},
          {"accepting", dfa.accepting()},
          {"transition", rows}};
}

inline Dfa dfa_from_json(const nlohmann::json& j) {
  try {
    int n = j.at("num_states").get<int>();
    int m = j.at("num_symbols").get<int>();
    const auto& rows = j.at("transition");
    require(rows.is_array() && static_cast<int>(rows.size()) == n, "dfa_from_json: transition row count");
    std::vector<int> table;
    table.reserve(static_cast<std::size_t>(n) * m);
    for (const auto& row : rows) {
      require(row.is_array() && static_cast<int>(row.size()) == m, "dfa_from_json: transition row width");
      for (const auto& t : row) table.push_back(t.get<int>());
    }
    return Dfa(n, m, std::move(table), j.at("initial").get<int>(),
               j.at("accepting").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("dfa_from_json: ") + e.what());
  }
}

inline void save_dfa(const Dfa& dfa, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dfa: cannot open " + path);
  out << dfa_to_json(dfa).dump(2) << "\n";
}

inline Dfa load_dfa(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dfa: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("load_dfa: ") + e.what(), e.byte);
  }
  return dfa_from_json(j);
}

}  // namespace latmos
