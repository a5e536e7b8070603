#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latmos/baselines/symbols.hpp"
#include "latmos/error.hpp"

namespace latmos::baselines {

using Word = std::vector<int>;

// f(w) = alpha^T A_{w1} ... A_{wn} beta.
struct WeightedAutomaton {
  int rank = 0;
  int num_symbols = 0;
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  std::vector<Eigen::MatrixXd> transitions;  // one r x r matrix per symbol
  double threshold = 0.5;
  SymbolTable symbols;
  std::vector<std::string> warnings;

  std::optional<double> score(const Word& w) const {
    Eigen::RowVectorXd v = alpha.transpose();
    for (int a : w) {
      if (a < 0 || a >= num_symbols) return std::nullopt;
      v = v * transitions[static_cast<std::size_t>(a)];
    }
    return v.dot(beta);
  }
};

enum class HankelMode { indicator, frequency };

inline HankelMode parse_hankel_mode(const std::string& s) {
  if (s == "indicator") return HankelMode::indicator;
  if (s == "frequency") return HankelMode::frequency;
  throw std::invalid_argument("unknown hankel mode: " + s);
}

inline const char* to_string(HankelMode m) { return m == HankelMode::indicator ? "indicator" : "frequency"; }

struct Basis {
  std::vector<Word> prefixes;  // prefixes[0] is the empty word
  std::vector<Word> suffixes;  // suffixes[0] is the empty word
};

// Prefixes and suffixes of corpus words up to `max_len` that occur in at least
// `min_freq` words, plus the empty word; sorted by (length, lexicographic).
inline Basis corpus_basis(const std::vector<Word>& corpus, int max_len, int min_freq = 2) {
  require(max_len >= 0, "corpus_basis: max_len must be non-negative");
  std::map<Word, int> pre, suf;
  for (const auto& w : corpus) {
    const int n = static_cast<int>(w.size());
    for (int k = 1; k <= std::min(max_len, n); ++k) {
      ++pre[Word(w.begin(), w.begin() + k)];
      ++suf[Word(w.end() - k, w.end())];
    }
  }
  auto collect = [&](const std::map<Word, int>& m) {
    std::vector<Word> out{Word{}};
    for (const auto& [w, c] : m)
      if (c >= min_freq) out.push_back(w);
    std::stable_sort(out.begin() + 1, out.end(), [](const Word& a, const Word& b) { return a.size() < b.size(); });
    return out;
  };
  return {collect(pre), collect(suf)};
}

// Every word over `num_symbols` symbols of length <= max_len.
inline std::vector<Word> all_words(int num_symbols, int max_len) {
  std::vector<Word> out{Word{}};
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (static_cast<int>(out[i].size()) == max_len) continue;
    for (int a = 0; a < num_symbols; ++a) {
      Word w = out[i];
      w.push_back(a);
      out.push_back(std::move(w));
    }
  }
  return out;
}

using WordFunction = std::function<double(const Word&)>;

inline Word concat(const Word& a, const Word& b) {
  Word w = a;
  w.insert(w.end(), b.begin(), b.end());
  return w;
}

inline Word concat(const Word& a, int s, const Word& b) {
  Word w = a;
  w.push_back(s);
  w.insert(w.end(), b.begin(), b.end());
  return w;
}

inline Eigen::MatrixXd hankel(const WordFunction& f, const Basis& basis, std::optional<int> shift = std::nullopt) {
  Eigen::MatrixXd H(basis.prefixes.size(), basis.suffixes.size());
  for (std::size_t i = 0; i < basis.prefixes.size(); ++i)
    for (std::size_t j = 0; j < basis.suffixes.size(); ++j)
      H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          shift ? f(concat(basis.prefixes[i], *shift, basis.suffixes[j])) : f(concat(basis.prefixes[i], basis.suffixes[j]));
  return H;
}

// Singular values above this relative cut count towards the numerical rank.
inline constexpr double kRankTolerance = 1e-9;

inline int numerical_rank(const Eigen::MatrixXd& H) {
  if (H.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(H);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s[0] <= 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > kRankTolerance * s[0]) ++r;
  return r;
}

// Spectral recovery from a word function on a basis: H = U D V^T truncated to
// rank r, alpha^T = h_{lambda,S}^T V, beta = (HV)^+ h_{P,lambda},
// A_s = (HV)^+ H_s V. A rank above the numerical rank is clamped with a warning.
inline WeightedAutomaton spectral_from_function(const WordFunction& f, const Basis& basis, int num_symbols, int rank) {
  require(rank >= 1, "spectral_learn: rank must be at least 1");
  require(num_symbols >= 1, "spectral_learn: num_symbols must be positive");
  require(!basis.prefixes.empty() && basis.prefixes[0].empty() && !basis.suffixes.empty() && basis.suffixes[0].empty(),
          "spectral_learn: basis must start with the empty word");
  WeightedAutomaton wa;
  wa.num_symbols = num_symbols;
  const Eigen::MatrixXd H = hankel(f, basis);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  int numeric = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[0] > 0.0 && s[i] > kRankTolerance * s[0]) ++numeric;
  int r = rank;
  if (r > numeric) {
    wa.warnings.push_back("rank " + std::to_string(rank) + " exceeds numerical Hankel rank " + std::to_string(numeric) +
                          "; clamped");
    r = std::max(1, numeric);
  }
  wa.rank = r;
  const Eigen::MatrixXd V = svd.matrixV().leftCols(r);
  // (HV)^+ = D_r^{-1} U_r^T; guard the all-zero Hankel.
  Eigen::VectorXd inv_d(r);
  for (int i = 0; i < r; ++i) inv_d[i] = s[i] > 0.0 ? 1.0 / s[i] : 0.0;
  const Eigen::MatrixXd pinv = inv_d.asDiagonal() * svd.matrixU().leftCols(r).transpose();
  wa.alpha = V.transpose() * H.row(0).transpose();
  wa.beta = pinv * H.col(0);
  wa.transitions.reserve(static_cast<std::size_t>(num_symbols));
  for (int a = 0; a < num_symbols; ++a) wa.transitions.push_back(pinv * hankel(f, basis, a) * V);
  return wa;
}

struct SpectralOptions {
  int basis_len = 3;
  int min_freq = 2;
  HankelMode mode = HankelMode::frequency;
};

// Learns from symbol words (all positives). Frequency mode: f(w) = empirical
// probability of w among the positives, 0 for unobserved words; indicator mode:
// f(w) = 1 if w is a training word.
inline WeightedAutomaton spectral_learn(const std::vector<Word>& corpus, int num_symbols, int rank,
                                        const SpectralOptions& opt = {}) {
  require(!corpus.empty(), "spectral_learn: empty corpus");
  std::map<Word, int> counts;
  for (const auto& w : corpus) {
    for (int a : w) require(a >= 0 && a < num_symbols, "spectral_learn: symbol out of range");
    ++counts[w];
  }
  const double n = static_cast<double>(corpus.size());
  WordFunction f = [&counts, n, mode = opt.mode](const Word& w) {
    auto it = counts.find(w);
    if (it == counts.end()) return 0.0;
    return mode == HankelMode::indicator ? 1.0 : static_cast<double>(it->second) / n;
  };
  return spectral_from_function(f, corpus_basis(corpus, opt.basis_len, opt.min_freq), num_symbols, rank);
}

// Threshold maximizing balanced accuracy of `score >= t` on positives vs
// negatives; ties go to the smallest such threshold.
inline double calibrate_threshold(const std::vector<double>& positive_scores, const std::vector<double>& negative_scores) {
  require(!positive_scores.empty() && !negative_scores.empty(), "calibrate_threshold: need both classes");
  std::vector<double> all = positive_scores;
  all.insert(all.end(), negative_scores.begin(), negative_scores.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> candidates;
  candidates.push_back(all.front() - 1.0);
  for (std::size_t i = 0; i + 1 < all.size(); ++i) candidates.push_back(0.5 * (all[i] + all[i + 1]));
  candidates.push_back(all.back() + 1.0);
  double best_t = candidates.front(), best = -1.0;
  for (double t : candidates) {
    const double tp = static_cast<double>(std::count_if(positive_scores.begin(), positive_scores.end(),
                                                        [t](double s) { return s >= t; }));
    const double tn = static_cast<double>(std::count_if(negative_scores.begin(), negative_scores.end(),
                                                        [t](double s) { return s < t; }));
    const double bal = 0.5 * (tp / static_cast<double>(positive_scores.size()) +
                              tn / static_cast<double>(negative_scores.size()));
    if (bal > best) {
      best = bal;
      best_t = t;
    }
  }
  return best_t;
}

inline Decision spectral_accepts(const WeightedAutomaton& wa, const Word& w) {
  auto s = wa.score(w);
  if (!s) return Decision::abstain;
  return *s >= wa.threshold ? Decision::accept : Decision::reject;
}

inline Decision spectral_accepts(const WeightedAutomaton& wa, const ObservationSequence& seq) {
  auto symbols = wa.symbols.decode(seq.steps);
  if (!symbols) return Decision::abstain;
  return spectral_accepts(wa, *symbols);
}

// Observation-level learner: the alphabet is the set of distinct training
// observation vectors; the threshold is calibrated on `calibration_positives`
// vs `calibration_negatives` (held out from `positives`). Calibration words
// with unmatched observations are skipped.
inline WeightedAutomaton spectral_learn(const std::vector<ObservationSequence>& positives, int rank,
                                        const std::vector<ObservationSequence>& calibration_positives,
                                        const std::vector<ObservationSequence>& calibration_negatives,
                                        const SpectralOptions& opt = {}, double match_tolerance = 0.0) {
  require(!positives.empty(), "spectral_learn: empty corpus");
  SymbolTable table(match_tolerance);
  std::vector<Word> corpus;
  corpus.reserve(positives.size());
  for (const auto& s : positives) corpus.push_back(table.intern_sequence(s.steps));
  WeightedAutomaton wa = spectral_learn(corpus, std::max(1, table.size()), rank, opt);
  wa.symbols = std::move(table);
  auto scores = [&wa](const std::vector<ObservationSequence>& seqs) {
    std::vector<double> out;
    for (const auto& s : seqs)
      if (auto w = wa.symbols.decode(s.steps))
        if (auto v = wa.score(*w)) out.push_back(*v);
    return out;
  };
  const auto pos = scores(calibration_positives), neg = scores(calibration_negatives);
  if (!pos.empty() && !neg.empty()) {
    wa.threshold = calibrate_threshold(pos, neg);
  } else {
    wa.warnings.push_back("threshold calibration skipped (no decodable calibration words); using 0.5");
  }
  return wa;
}

inline nlohmann::json to_json(const WeightedAutomaton& wa) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json mats = nlohmann::json::array();
  for (const auto& A : wa.transitions) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < A.rows(); ++i) rows.push_back(vec(A.row(i).transpose()));
    mats.push_back(rows);
  }
  nlohmann::json symbols = nlohmann::json::array();
  for (int i = 0; i < wa.symbols.size(); ++i) symbols.push_back(vec(wa.symbols.entry(i)));
  return {{"kind", "weighted"},  {"rank", wa.rank},         {"num_symbols", wa.num_symbols},
          {"alpha", vec(wa.alpha)}, {"beta", vec(wa.beta)}, {"transitions", mats},
          {"threshold", wa.threshold}, {"match_tolerance", wa.symbols.tolerance()}, {"symbols", symbols},
          {"warnings", wa.warnings}};
}

}  // namespace latmos::baselines
