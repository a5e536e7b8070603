#pragma once

// Reference implementations used only by tests. They read raw tables and avoid
// the library code paths they check.

#include <cstdint>
#include <functional>
#include <queue>
#include <set>
#include <vector>

#include <json.hpp>

namespace oracle {

// Trace simulator over a raw row-major transition table.
struct RawDfa {
  int n = 0, m = 0, init = 0;
  std::vector<int> table;
  std::set<int> final_states;

  bool run(const std::vector<int>& w) const {
    int s = init;
    for (int a : w) s = table[s * m + a];
    return final_states.count(s) > 0;
  }
};

inline RawDfa from_json(const nlohmann::json& j) {
  RawDfa d;
  d.n = j.at("num_states");
  d.m = j.at("num_symbols");
  d.init = j.at("initial");
  for (const auto& row : j.at("transition"))
    for (int t : row) d.table.push_back(t);
  for (int f : j.at("accepting")) d.final_states.insert(f);
  return d;
}

// Calls f on every word of length exactly len.
inline void for_each_word(int m, int len, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> w(len, 0);
  while (true) {
    f(w);
    int i = len - 1;
    while (i >= 0 && ++w[i] == m) w[i--] = 0;
    if (i < 0) break;
  }
}

// Lengths L in [1, max_len] admitting an accepting word, by exhaustive enumeration.
inline std::set<int> accepting_lengths(const RawDfa& d, int max_len) {
  std::set<int> out;
  for (int L = 1; L <= max_len; ++L) {
    bool found = false;
    for_each_word(d.m, L, [&](const std::vector<int>& w) { found = found || d.run(w); });
    if (found) out.insert(L);
  }
  return out;
}

inline std::vector<bool> reachable(const RawDfa& d) {
  std::vector<bool> seen(d.n, false);
  std::queue<int> q;
  q.push(d.init);
  seen[d.init] = true;
  while (!q.empty()) {
    int s = q.front();
    q.pop();
    for (int a = 0; a < d.m; ++a) {
      int t = d.table[s * d.m + a];
      if (!seen[t]) {
        seen[t] = true;
        q.push(t);
      }
    }
  }
  return seen;
}

// Whether some accepting state is reachable from s (forward search from s).
inline bool can_accept_from(const RawDfa& d, int s) {
  RawDfa c = d;
  c.init = s;
  auto r = reachable(c);
  for (int f : d.final_states)
    if (r[f]) return true;
  return false;
}

}  // namespace oracle
