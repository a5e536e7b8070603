#include <gtest/gtest.h>

#include <cmath>

#include "latmos/baselines/alergia.hpp"
#include "latmos/baselines/spectral.hpp"
#include "latmos/dataset.hpp"
#include "unit/oracles.hpp"

using namespace latmos;
using namespace latmos::baselines;

namespace {

std::vector<ObservationSequence> observe(const std::vector<SymbolWalk>& walks, double noise = 0.0,
                                         std::uint64_t seed = 0) {
  Rng rng = make_rng(seed);
  std::vector<ObservationSequence> out;
  for (std::size_t i = 0; i < walks.size(); ++i)
    out.push_back(make_positive(symbols_to_observations(walks[i].symbols, 4, ApEncoding::one_hot, noise, &rng),
                                static_cast<std::int64_t>(i), walks[i].symbols));
  return out;
}

struct BalancedTest {
  std::vector<ObservationSequence> seqs;
  std::vector<bool> accepted;
};

BalancedTest balanced_test(const Dfa& d, int count, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  auto pos = sample_walks_where(d, count, d.num_states(), rng, [](const SymbolWalk& w) { return w.accepted; });
  auto neg = sample_walks_where(d, count, d.num_states(), rng, [](const SymbolWalk& w) { return !w.accepted; });
  BalancedTest t;
  for (auto* ws : {&pos, &neg})
    for (auto& o : observe(*ws)) {
      t.accepted.push_back(ws == &pos);
      t.seqs.push_back(std::move(o));
    }
  return t;
}

template <class F>
double accuracy(const BalancedTest& t, F decide) {
  int ok = 0;
  for (std::size_t i = 0; i < t.seqs.size(); ++i) {
    const Decision d = decide(t.seqs[i]);
    ok += (d == Decision::accept && t.accepted[i]) || (d == Decision::reject && !t.accepted[i]);
  }
  return ok / static_cast<double>(t.seqs.size());
}

std::vector<std::vector<int>> words_of(const std::vector<SymbolWalk>& walks) {
  std::vector<std::vector<int>> out;
  for (const auto& w : walks) out.push_back(w.symbols);
  return out;
}

}  // namespace

TEST(SymbolTable, InternsDistinctVectorsAndDecodesExactly) {
  SymbolTable t;
  Eigen::VectorXd a = Eigen::VectorXd::Unit(4, 0), b = Eigen::VectorXd::Unit(4, 2);
  EXPECT_EQ(t.intern(a), 0);
  EXPECT_EQ(t.intern(b), 1);
  EXPECT_EQ(t.intern(a), 0);
  EXPECT_EQ(t.size(), 2);
  Eigen::VectorXd c = a;
  c[1] = 1e-9;
  EXPECT_FALSE(t.lookup(c).has_value());
  EXPECT_FALSE(t.lookup(Eigen::VectorXd::Unit(4, 3)).has_value());
}

TEST(SymbolTable, ToleranceSelectsNearestEntry) {
  SymbolTable t(0.3);
  t.intern(Eigen::VectorXd::Unit(2, 0));
  t.intern(Eigen::VectorXd::Unit(2, 1));
  Eigen::Vector2d v(0.9, 0.2);
  ASSERT_TRUE(t.lookup(v).has_value());
  EXPECT_EQ(*t.lookup(v), 0);
  EXPECT_FALSE(t.lookup(Eigen::Vector2d(0.5, 0.5)).has_value());
}

TEST(PrefixTree, ConservationAndBreadthFirstNumbering) {
  Dfa d = generate_random_dfa(6, 4, 21);
  auto tree = build_prefix_tree(words_of(sample_positive_walks(d, 400, 6, 3)), 4);
  EXPECT_EQ(tree.nodes[0].visits, 400);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    EXPECT_EQ(n.visits, n.terminal + tree.child_visits(static_cast<int>(i))) << "node " << i;
    if (i > 0) {
      EXPECT_LT(n.parent, static_cast<int>(i));
      EXPECT_EQ(tree.nodes[static_cast<std::size_t>(n.parent)].child[static_cast<std::size_t>(n.via)], static_cast<int>(i));
    }
  }
}

TEST(Alergia, SingleSequenceChainCollapses) {
  // With one visit per node no frequency difference is significant, so the chain
  // folds into one state; one of its four tree nodes is terminal.
  auto a = alergia_learn(std::vector<std::vector<int>>{{0, 1, 2}}, 3, 0.05);
  ASSERT_EQ(a.num_states(), 1);
  EXPECT_DOUBLE_EQ(a.acceptance_frequency(0), 0.25);
  EXPECT_EQ(a.states[0].visits, 4);
  EXPECT_EQ(alergia_accepts(a, std::vector<int>{0, 1, 2}), Decision::reject);
}

TEST(Alergia, MergeEverythingLimitIsSmall) {
  Dfa d = generate_random_dfa(6, 4, 1006);
  auto a = alergia_learn(words_of(sample_positive_walks(d, 1000, 6, 1)), 4, 1e-300);
  EXPECT_LE(a.num_states(), 4 + 1);
}

TEST(Alergia, DeterministicForFixedCorpusAndAlpha) {
  Dfa d = generate_random_dfa(8, 4, 1008);
  auto corpus = words_of(sample_positive_walks(d, 500, 8, 2));
  EXPECT_EQ(to_json(alergia_learn(corpus, 4, 0.05)).dump(), to_json(alergia_learn(corpus, 4, 0.05)).dump());
}

TEST(Alergia, FoldedCountsAreConserved) {
  Dfa d = generate_random_dfa(6, 4, 1006);
  auto corpus = words_of(sample_positive_walks(d, 1000, 6, 1));
  auto a = alergia_learn(corpus, 4, 0.05);
  long long terminal = 0;
  for (const auto& s : a.states) {
    terminal += s.terminal;
    long long out = 0;
    for (long long c : s.out) out += c;
    EXPECT_EQ(s.visits, s.terminal + out);
  }
  EXPECT_EQ(terminal, 1000);
}

TEST(Alergia, EmptySequenceFollowsRootAcceptance) {
  auto with_empty = alergia_learn(std::vector<std::vector<int>>{{}, {}, {}, {0}}, 2, 0.5);
  EXPECT_EQ(alergia_accepts(with_empty, std::vector<int>{}), Decision::accept);
  Dfa d = generate_random_dfa(4, 4, 1004);
  ASSERT_FALSE(d.is_accepting(d.initial()));
  auto a = alergia_learn(words_of(sample_positive_walks(d, 1000, 4, 1)), 4);
  EXPECT_EQ(alergia_accepts(a, std::vector<int>{}),
            a.acceptance_frequency(a.initial) >= 0.5 ? Decision::accept : Decision::reject);
  EXPECT_EQ(alergia_accepts(a, std::vector<int>{}), Decision::reject);
}

TEST(Alergia, BaseConfigAccuracy) {
  Dfa d = generate_random_dfa(4, 4, 1004);
  auto a = alergia_learn(observe(sample_positive_walks(d, 1000, 4, 1)));
  EXPECT_GE(accuracy(balanced_test(d, 500, 3), [&](const auto& s) { return alergia_accepts(a, s); }), 0.99);
}

TEST(Alergia, PerturbationBeyondToleranceAbstains) {
  Dfa d = generate_random_dfa(4, 4, 1004);
  auto train = observe(sample_positive_walks(d, 300, 4, 1));
  auto exact = alergia_learn(train);
  auto loose = alergia_learn(train, 0.05, 0.01);
  ObservationSequence probe = train.front();
  EXPECT_NE(alergia_accepts(exact, probe), Decision::abstain);
  probe.steps(0, 0) += 1e-3;
  EXPECT_EQ(alergia_accepts(exact, probe), Decision::abstain);
  EXPECT_NE(alergia_accepts(loose, probe), Decision::abstain);
}

TEST(Alergia, NoisyTrainingGivesZeroOnExactTests) {
  Dfa d = generate_random_dfa(4, 4, 1004);
  auto a = alergia_learn(observe(sample_positive_walks(d, 1000, 4, 1), 0.1, 5));
  EXPECT_EQ(accuracy(balanced_test(d, 200, 3), [&](const auto& s) { return alergia_accepts(a, s); }), 0.0);
}

TEST(Alergia, RejectsEmptyCorpusAndBadAlpha) {
  EXPECT_THROW(alergia_learn(std::vector<std::vector<int>>{}, 2), ContractViolation);
  EXPECT_THROW(alergia_learn(std::vector<std::vector<int>>{{0}}, 2, 0.0), ContractViolation);
  EXPECT_THROW(alergia_learn(std::vector<std::vector<int>>{{0}}, 2, 1.0), ContractViolation);
}

TEST(Spectral, RankOneAlwaysAcceptingScoresOne) {
  // Every word up to length 7 over two symbols (the empty word included): the
  // indicator Hankel and its shifted blocks are all ones.
  auto corpus = all_words(2, 7);
  SpectralOptions opt;
  opt.mode = HankelMode::indicator;
  opt.min_freq = 1;
  auto wa = spectral_learn(corpus, 2, 1, opt);
  EXPECT_EQ(wa.rank, 1);
  for (const auto& w : all_words(2, 10)) {
    if (w.empty()) continue;
    ASSERT_TRUE(wa.score(w).has_value());
    EXPECT_NEAR(*wa.score(w), 1.0, 1e-9);
  }
}

TEST(Spectral, FullRankReproducesHankelEntries) {
  for (std::uint64_t seed : {1004u, 1006u, 1008u}) {
    Dfa d = generate_random_dfa(static_cast<int>(seed - 1000), 3, seed);
    const auto raw = oracle::from_json(dfa_to_json(d));
    WordFunction f = [&raw](const Word& w) { return raw.run(w) ? 1.0 : 0.0; };
    Basis basis{all_words(3, 3), all_words(3, 3)};
    const int r = numerical_rank(hankel(f, basis));
    auto wa = spectral_from_function(f, basis, 3, r);
    EXPECT_TRUE(wa.warnings.empty());
    for (const auto& p : basis.prefixes)
      for (const auto& s : basis.suffixes) {
        const Word w = concat(p, s);
        EXPECT_NEAR(*wa.score(w), raw.run(w) ? 1.0 : 0.0, 1e-6);
        for (int a = 0; a < 3; ++a) {
          const Word ws = concat(p, a, s);
          EXPECT_NEAR(*wa.score(ws), raw.run(ws) ? 1.0 : 0.0, 1e-6);
        }
      }
  }
}

TEST(Spectral, RankAboveNumericalRankIsClampedWithWarning) {
  Dfa d = generate_random_dfa(4, 3, 1004);
  const auto raw = oracle::from_json(dfa_to_json(d));
  WordFunction f = [&raw](const Word& w) { return raw.run(w) ? 1.0 : 0.0; };
  Basis basis{all_words(3, 3), all_words(3, 3)};
  auto wa = spectral_from_function(f, basis, 3, 100);
  EXPECT_EQ(wa.rank, numerical_rank(hankel(f, basis)));
  EXPECT_LE(wa.rank, 4);
  ASSERT_EQ(wa.warnings.size(), 1u);
}

TEST(Spectral, CalibratedThresholdMaximizesBalancedAccuracy) {
  // Hand count: any t in (0.1, 0.8] gives TP=2, TN=1; t in (0.85, 0.9] gives TP=1, TN=2.
  EXPECT_DOUBLE_EQ(calibrate_threshold({0.9, 0.8}, {0.1, 0.85}), 0.45);
  EXPECT_DOUBLE_EQ(calibrate_threshold({1.0}, {0.0}), 0.5);
}

TEST(Spectral, BaseConfigRankFactorOne) {
  Dfa d = generate_random_dfa(4, 4, 1004);
  auto pos = observe(sample_positive_walks(d, 1000, 4, 1));
  auto ds = relabel_with_automaton(augment_with_negatives(pos, uniform_symbol_sampler(4, ApEncoding::one_hot), 2), d);
  std::vector<ObservationSequence> train(pos.begin(), pos.begin() + 800), cal_pos(pos.begin() + 800, pos.end()), cal_neg;
  for (const auto& s : ds.sequences)
    if (s.source == SequenceSource::synthetic_negative && s.source_id >= 800 && s.labels->back() == 0) cal_neg.push_back(s);
  auto wa = spectral_learn(train, 4, cal_pos, cal_neg);
  EXPECT_EQ(wa.rank, 4);
  EXPECT_GE(accuracy(balanced_test(d, 500, 3), [&](const auto& s) { return spectral_accepts(wa, s); }), 0.9);
  EXPECT_EQ(to_json(wa).dump(), to_json(spectral_learn(train, 4, cal_pos, cal_neg)).dump());
}

TEST(Spectral, PerturbationBeyondToleranceAbstains) {
  Dfa d = generate_random_dfa(4, 4, 1004);
  auto train = observe(sample_positive_walks(d, 300, 4, 1));
  auto wa = spectral_learn(train, 4, {}, {});
  ObservationSequence probe = train.front();
  EXPECT_NE(spectral_accepts(wa, probe), Decision::abstain);
  probe.steps(2, 0) -= 1e-6;
  EXPECT_EQ(spectral_accepts(wa, probe), Decision::abstain);
}
