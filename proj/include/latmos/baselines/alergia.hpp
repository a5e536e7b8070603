#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "latmos/baselines/symbols.hpp"
#include "latmos/error.hpp"

namespace latmos::baselines {

// Frequency prefix tree over integer symbols; node 0 is the root and nodes are
// numbered breadth-first with children visited in symbol order.
struct FreqPrefixTree {
  struct Node {
    std::vector<int> child;  // -1 when absent
    long long visits = 0;    // sequences whose prefix reaches this node
    long long terminal = 0;  // sequences ending here
    int parent = -1;
    int via = -1;  // symbol on the edge from the parent
  };
  int num_symbols = 0;
  std::vector<Node> nodes;

  long long child_visits(int n) const {
    long long s = 0;
    for (int c : nodes[static_cast<std::size_t>(n)].child)
      if (c >= 0) s += nodes[static_cast<std::size_t>(c)].visits;
    return s;
  }
};

inline FreqPrefixTree build_prefix_tree(const std::vector<std::vector<int>>& corpus, int num_symbols) {
  require(!corpus.empty(), "build_prefix_tree: empty corpus");
  require(num_symbols >= 1, "build_prefix_tree: num_symbols must be positive");
  // Insertion tree first, then renumber breadth-first.
  FreqPrefixTree raw;
  raw.num_symbols = num_symbols;
  raw.nodes.push_back({std::vector<int>(static_cast<std::size_t>(num_symbols), -1), 0, 0, -1, -1});
  for (const auto& seq : corpus) {
    int n = 0;
    ++raw.nodes[0].visits;
    for (int a : seq) {
      require(a >= 0 && a < num_symbols, "build_prefix_tree: symbol out of range");
      int& c = raw.nodes[static_cast<std::size_t>(n)].child[static_cast<std::size_t>(a)];
      if (c < 0) {
        c = static_cast<int>(raw.nodes.size());
        raw.nodes.push_back({std::vector<int>(static_cast<std::size_t>(num_symbols), -1), 0, 0, n, a});
      }
      n = c;
      ++raw.nodes[static_cast<std::size_t>(n)].visits;
    }
    ++raw.nodes[static_cast<std::size_t>(n)].terminal;
  }
  FreqPrefixTree t;
  t.num_symbols = num_symbols;
  std::vector<int> order{0}, new_id(raw.nodes.size(), -1);
  new_id[0] = 0;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c : raw.nodes[static_cast<std::size_t>(order[i])].child)
      if (c >= 0) {
        new_id[static_cast<std::size_t>(c)] = static_cast<int>(order.size());
        order.push_back(c);
      }
  t.nodes.resize(raw.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto n = raw.nodes[static_cast<std::size_t>(order[i])];
    for (int& c : n.child)
      if (c >= 0) c = new_id[static_cast<std::size_t>(c)];
    if (n.parent >= 0) n.parent = new_id[static_cast<std::size_t>(n.parent)];
    t.nodes[i] = std::move(n);
  }
  return t;
}

// Merged stochastic automaton. `accept_weight / weight` is the acceptance
// frequency: the visit-weighted share of merged tree nodes at which some
// training sequence terminated.
struct StochasticAutomaton {
  struct State {
    std::vector<int> next;  // -1 when undefined
    long long visits = 0;
    long long terminal = 0;
    std::vector<long long> out;  // per-symbol transition counts
    double accept_weight = 0.0;
    double weight = 0.0;
  };
  int num_symbols = 0;
  int initial = 0;
  std::vector<State> states;
  SymbolTable symbols;

  int num_states() const noexcept { return static_cast<int>(states.size()); }
  double acceptance_frequency(int s) const {
    const auto& st = states.at(static_cast<std::size_t>(s));
    return st.weight > 0.0 ? st.accept_weight / st.weight : 0.0;
  }
  double termination_probability(int s) const {
    const auto& st = states.at(static_cast<std::size_t>(s));
    return st.visits > 0 ? static_cast<double>(st.terminal) / static_cast<double>(st.visits) : 0.0;
  }
};

namespace detail {

// Hoeffding-bound test: true when f1/n1 and f2/n2 are not significantly different.
inline bool hoeffding_compatible(long long f1, long long n1, long long f2, long long n2, double alpha) {
  if (n1 == 0 || n2 == 0) return true;
  const double gap = std::abs(static_cast<double>(f1) / static_cast<double>(n1) -
                              static_cast<double>(f2) / static_cast<double>(n2));
  const double bound = std::sqrt(0.5 * std::log(2.0 / alpha)) *
                       (1.0 / std::sqrt(static_cast<double>(n1)) + 1.0 / std::sqrt(static_cast<double>(n2)));
  return gap <= bound;
}

class Merger {
 public:
  Merger(const FreqPrefixTree& t, double alpha) : alpha_(alpha), m_(t.num_symbols) {
    nodes_.reserve(t.nodes.size());
    for (const auto& n : t.nodes) {
      Work w;
      w.next = n.child;
      w.visits = n.visits;
      w.terminal = n.terminal;
      w.out.assign(static_cast<std::size_t>(m_), 0);
      for (int a = 0; a < m_; ++a)
        if (n.child[static_cast<std::size_t>(a)] >= 0)
          w.out[static_cast<std::size_t>(a)] = t.nodes[static_cast<std::size_t>(n.child[static_cast<std::size_t>(a)])].visits;
      w.weight = static_cast<double>(n.visits);
      w.accept_weight = n.terminal > 0 ? static_cast<double>(n.visits) : 0.0;
      nodes_.push_back(std::move(w));
    }
  }

  // Red-blue ALERGIA; returns red node ids in promotion order.
  std::vector<int> run() {
    std::vector<int> red{0};
    std::vector<char> is_red(nodes_.size(), 0);
    is_red[0] = 1;
    while (true) {
      int blue = -1, blue_parent = -1, blue_sym = -1;
      // Smallest-id blue node: a non-red successor of a red node.
      for (int r : red)
        for (int a = 0; a < m_; ++a) {
          const int c = nodes_[static_cast<std::size_t>(r)].next[static_cast<std::size_t>(a)];
          if (c >= 0 && !is_red[static_cast<std::size_t>(c)] && (blue < 0 || c < blue)) {
            blue = c;
            blue_parent = r;
            blue_sym = a;
          }
        }
      if (blue < 0) break;
      bool merged = false;
      for (int r : red) {
        if (compatible(r, blue, 0)) {
          nodes_[static_cast<std::size_t>(blue_parent)].next[static_cast<std::size_t>(blue_sym)] = r;
          fold(r, blue);
          merged = true;
          break;
        }
      }
      if (!merged) {
        red.push_back(blue);
        is_red[static_cast<std::size_t>(blue)] = 1;
      }
    }
    return red;
  }

  struct Work {
    std::vector<int> next;
    long long visits = 0, terminal = 0;
    std::vector<long long> out;
    double weight = 0.0, accept_weight = 0.0;
  };
  const Work& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

 private:
  bool compatible(int q, int b, int depth) const {
    const auto& nq = nodes_[static_cast<std::size_t>(q)];
    const auto& nb = nodes_[static_cast<std::size_t>(b)];
    if (!hoeffding_compatible(nq.terminal, nq.visits, nb.terminal, nb.visits, alpha_)) return false;
    for (int a = 0; a < m_; ++a)
      if (!hoeffding_compatible(nq.out[static_cast<std::size_t>(a)], nq.visits, nb.out[static_cast<std::size_t>(a)],
                                nb.visits, alpha_))
        return false;
    for (int a = 0; a < m_; ++a) {
      const int cq = nq.next[static_cast<std::size_t>(a)], cb = nb.next[static_cast<std::size_t>(a)];
      if (cq >= 0 && cb >= 0 && !compatible(cq, cb, depth + 1)) return false;
    }
    return true;
  }

  // Adds the (tree-shaped) subtree rooted at b into q.
  void fold(int q, int b) {
    auto& nq = nodes_[static_cast<std::size_t>(q)];
    const auto nb = nodes_[static_cast<std::size_t>(b)];
    nq.visits += nb.visits;
    nq.terminal += nb.terminal;
    nq.weight += nb.weight;
    nq.accept_weight += nb.accept_weight;
    for (int a = 0; a < m_; ++a) {
      nodes_[static_cast<std::size_t>(q)].out[static_cast<std::size_t>(a)] += nb.out[static_cast<std::size_t>(a)];
      const int cb = nb.next[static_cast<std::size_t>(a)];
      if (cb < 0) continue;
      const int cq = nodes_[static_cast<std::size_t>(q)].next[static_cast<std::size_t>(a)];
      if (cq >= 0) {
        fold(cq, cb);
      } else {
        nodes_[static_cast<std::size_t>(q)].next[static_cast<std::size_t>(a)] = cb;
      }
    }
  }

  double alpha_;
  int m_;
  std::vector<Work> nodes_;
};

}  // namespace detail

// ALERGIA over symbol sequences; `num_symbols` fixes the alphabet size.
inline StochasticAutomaton alergia_learn(const std::vector<std::vector<int>>& corpus, int num_symbols,
                                         double alpha = 0.05) {
  require(!corpus.empty(), "alergia_learn: empty corpus");
  require(alpha > 0.0 && alpha < 1.0, "alergia_learn: alpha must be in (0, 1)");
  FreqPrefixTree tree = build_prefix_tree(corpus, num_symbols);
  detail::Merger merger(tree, alpha);
  std::vector<int> red = merger.run();
  std::vector<int> index(tree.nodes.size(), -1);
  for (std::size_t i = 0; i < red.size(); ++i) index[static_cast<std::size_t>(red[i])] = static_cast<int>(i);
  StochasticAutomaton out;
  out.num_symbols = num_symbols;
  out.initial = 0;
  for (int r : red) {
    const auto& w = merger.node(r);
    StochasticAutomaton::State s;
    s.visits = w.visits;
    s.terminal = w.terminal;
    s.out = w.out;
    s.weight = w.weight;
    s.accept_weight = w.accept_weight;
    s.next.assign(static_cast<std::size_t>(num_symbols), -1);
    for (int a = 0; a < num_symbols; ++a) {
      const int c = w.next[static_cast<std::size_t>(a)];
      if (c >= 0) s.next[static_cast<std::size_t>(a)] = index[static_cast<std::size_t>(c)];
    }
    out.states.push_back(std::move(s));
  }
  return out;
}

// Learns from observation sequences: the alphabet is the set of distinct
// training observation vectors (within `match_tolerance`).
inline StochasticAutomaton alergia_learn(const std::vector<ObservationSequence>& positives, double alpha = 0.05,
                                         double match_tolerance = 0.0) {
  require(!positives.empty(), "alergia_learn: empty corpus");
  SymbolTable table(match_tolerance);
  std::vector<std::vector<int>> corpus;
  corpus.reserve(positives.size());
  for (const auto& s : positives) corpus.push_back(table.intern_sequence(s.steps));
  StochasticAutomaton a = alergia_learn(corpus, std::max(1, table.size()), alpha);
  a.symbols = std::move(table);
  return a;
}

inline Decision alergia_accepts(const StochasticAutomaton& a, const std::vector<int>& symbols) {
  int s = a.initial;
  for (int x : symbols) {
    if (x < 0 || x >= a.num_symbols) return Decision::abstain;
    s = a.states[static_cast<std::size_t>(s)].next[static_cast<std::size_t>(x)];
    if (s < 0) return Decision::abstain;
  }
  return a.acceptance_frequency(s) >= 0.5 ? Decision::accept : Decision::reject;
}

inline Decision alergia_accepts(const StochasticAutomaton& a, const ObservationSequence& seq) {
  auto symbols = a.symbols.decode(seq.steps);
  if (!symbols) return Decision::abstain;
  return alergia_accepts(a, *symbols);
}

inline nlohmann::json to_json(const StochasticAutomaton& a) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : a.states)
    states.push_back({{"next", s.next},
                      {"visits", s.visits},
                      {"terminal", s.terminal},
                      {"out", s.out},
                      {"accept_weight", s.accept_weight},
                      {"weight", s.weight}});
  nlohmann::json symbols = nlohmann::json::array();
  for (int i = 0; i < a.symbols.size(); ++i)
    symbols.push_back(std::vector<double>(a.symbols.entry(i).data(), a.symbols.entry(i).data() + a.symbols.entry(i).size()));
  return {{"kind", "stochastic"},
          {"num_symbols", a.num_symbols},
          {"initial", a.initial},
          {"match_tolerance", a.symbols.tolerance()},
          {"symbols", symbols},
          {"states", states}};
}

}  // namespace latmos::baselines
