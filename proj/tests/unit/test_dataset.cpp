#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "latmos/dataset.hpp"
#include "oracles.hpp"

using namespace latmos;

namespace {

std::vector<ObservationSequence> positives_from(const Dfa& d, int count, std::uint64_t seed) {
  std::vector<ObservationSequence> out;
  auto walks = sample_positive_walks(d, count, d.num_states(), seed);
  for (std::size_t i = 0; i < walks.size(); ++i)
    out.push_back(make_positive(symbols_to_observations(walks[i].symbols, d.num_symbols(), ApEncoding::one_hot),
                                static_cast<std::int64_t>(i), walks[i].symbols));
  return out;
}

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Augment, OnePositiveAllCuts) {
  Eigen::MatrixXd steps = symbols_to_observations({0, 1, 2, 3}, 4, ApEncoding::one_hot);
  auto ds = augment_with_negatives({make_positive(steps, 0, {0, 1, 2, 3})}, uniform_symbol_sampler(4, ApEncoding::one_hot),
                                   1, AugmentOptions{4});
  ASSERT_EQ(ds.size(), 5u);
  EXPECT_EQ(ds.sequences[0].source, SequenceSource::positive);
  for (int k = 0; k < 4; ++k) {
    const auto& neg = ds.sequences[1 + k];
    EXPECT_EQ(neg.source, SequenceSource::synthetic_negative);
    EXPECT_EQ(neg.cut, k);
    for (int t = 0; t < 4; ++t) EXPECT_EQ((*neg.labels)[t], t < k ? 1 : 0);
    EXPECT_EQ(neg.steps.leftCols(k), steps.leftCols(k));
  }
  auto c = count_labels(ds);
  EXPECT_EQ(c.ones, c.zeros);
}

TEST(Augment, ZeroNegativesIsPositivesOnly) {
  Dfa d = generate_random_dfa(4, 4, 1);
  auto pos = positives_from(d, 20, 2);
  auto ds = augment_with_negatives(pos, uniform_symbol_sampler(4, ApEncoding::one_hot), 3, AugmentOptions{0});
  ASSERT_EQ(ds.size(), pos.size());
  for (const auto& s : ds.sequences) {
    EXPECT_EQ(s.source, SequenceSource::positive);
    for (auto y : *s.labels) EXPECT_EQ(y, 1);
  }
}

TEST(Augment, ClampsWithWarning) {
  Eigen::MatrixXd steps = symbols_to_observations({0, 1}, 4, ApEncoding::one_hot);
  auto ds = augment_with_negatives({make_positive(steps, 0)}, uniform_symbol_sampler(4, ApEncoding::one_hot), 1,
                                   AugmentOptions{5});
  EXPECT_EQ(ds.size(), 3u);
  ASSERT_EQ(ds.meta["warnings"].size(), 1u);
  EXPECT_EQ(ds.meta["warnings"][0]["clamped_to"], 2);
}

TEST(Augment, PartialCutsStillBalanced) {
  Dfa d = generate_random_dfa(8, 4, 4);
  auto ds = augment_with_negatives(positives_from(d, 300, 5), uniform_symbol_sampler(4, ApEncoding::one_hot), 6,
                                   AugmentOptions{2});
  EXPECT_LE(count_labels(ds).imbalance(), 0.1);
  for (const auto& s : ds.sequences) EXPECT_TRUE(label_structure_ok(s));
}

TEST(Augment, StructureBalanceProvenanceOnManySequences) {
  Dfa d = generate_random_dfa(6, 4, 7);
  auto pos = positives_from(d, 2500, 8);
  auto ds = augment_with_negatives(pos, uniform_symbol_sampler(4, ApEncoding::one_hot, 0.1), 9);
  EXPECT_GE(ds.size(), 10000u);
  EXPECT_LE(count_labels(ds).imbalance(), 0.1);
  validate_dataset(ds);
  for (const auto& s : ds.sequences) {
    ASSERT_TRUE(label_structure_ok(s));
    if (s.source == SequenceSource::synthetic_negative) {
      const auto& src = pos[static_cast<std::size_t>(s.source_id)];
      ASSERT_EQ(s.length(), src.length());
      ASSERT_EQ(s.steps.leftCols(s.cut), src.steps.leftCols(s.cut));
    }
  }
}

TEST(Augment, FalseNegativeRateMatchesExactSuffixDensity) {
  Dfa d = generate_random_dfa(4, 4, 13);
  auto raw = oracle::from_json(dfa_to_json(d));
  auto pos = positives_from(d, 2000, 14);
  auto ds = augment_with_negatives(pos, uniform_symbol_sampler(4, ApEncoding::one_hot), 15);
  // Expected rate: for each negative, the exact probability that a uniform
  // suffix from the cut state ends accepting, by enumerating all suffixes.
  double expected = 0.0;
  std::size_t n = 0;
  for (const auto& s : ds.sequences) {
    if (s.source != SequenceSource::synthetic_negative) continue;
    std::vector<int> prefix(s.symbols.begin(), s.symbols.begin() + s.cut);
    const int L = s.length() - static_cast<int>(s.cut);
    int hits = 0, total = 0;
    oracle::for_each_word(4, L, [&](const std::vector<int>& w) {
      std::vector<int> full = prefix;
      full.insert(full.end(), w.begin(), w.end());
      hits += raw.run(full) ? 1 : 0;
      ++total;
    });
    expected += static_cast<double>(hits) / total;
    ++n;
  }
  expected /= static_cast<double>(n);
  const double measured = false_negative_label_rate(ds, d);
  const double se = std::sqrt(expected * (1 - expected) / static_cast<double>(n));
  EXPECT_NEAR(measured, expected, 4 * se + 1e-9);
}

TEST(Augment, RelabelUsesPrefixAcceptance) {
  Dfa d = generate_random_dfa(4, 4, 21);
  auto ds = relabel_with_automaton(
      augment_with_negatives(positives_from(d, 100, 22), uniform_symbol_sampler(4, ApEncoding::one_hot), 23), d);
  auto raw = oracle::from_json(dfa_to_json(d));
  for (const auto& s : ds.sequences)
    for (int t = 0; t < s.length(); ++t) {
      std::vector<int> prefix(s.symbols.begin(), s.symbols.begin() + t + 1);
      ASSERT_EQ((*s.labels)[t] != 0, raw.run(prefix));
    }
}

TEST(Augment, MaskedSamplerAvoidsBlockedTransitions) {
  Dfa d = generate_random_dfa(6, 4, 30);
  auto h = holdout_transitions(d, 0.15, 31);
  std::vector<ObservationSequence> pos;
  auto walks = sample_positive_walks(d, 200, 6, 32, &h.train_mask);
  for (std::size_t i = 0; i < walks.size(); ++i)
    pos.push_back(make_positive(symbols_to_observations(walks[i].symbols, 4, ApEncoding::one_hot),
                                static_cast<std::int64_t>(i), walks[i].symbols));
  auto ds = augment_with_negatives(pos, masked_symbol_sampler(d, h.train_mask, ApEncoding::one_hot), 33);
  for (const auto& s : ds.sequences) EXPECT_FALSE(walk_uses_blocked(run(d, s.symbols), h.train_mask));
}

TEST(Split, CountsAndNoLeakage) {
  Dfa d = generate_random_dfa(4, 4, 40);
  auto ds = augment_with_negatives(positives_from(d, 1000, 41), uniform_symbol_sampler(4, ApEncoding::one_hot), 42);
  auto [train, test] = split_train_test(ds, 0.2, 43);
  auto count_pos = [](const LabeledDataset& x) {
    return std::count_if(x.sequences.begin(), x.sequences.end(),
                         [](const auto& s) { return s.source == SequenceSource::positive; });
  };
  EXPECT_EQ(count_pos(train), 800);
  EXPECT_EQ(count_pos(test), 200);
  EXPECT_EQ(train.size() + test.size(), ds.size());
  std::set<std::int64_t> train_ids, test_ids;
  for (const auto& s : train.sequences) train_ids.insert(s.source_id);
  for (const auto& s : test.sequences) test_ids.insert(s.source_id);
  for (auto id : test_ids) EXPECT_FALSE(train_ids.count(id));
  EXPECT_THROW(split_train_test(ds, 0.0, 1), ContractViolation);
  EXPECT_THROW(split_train_test(ds, 0.0001, 1), ContractViolation);
}

TEST(DatasetFile, BinaryRoundTripIsExact) {
  Dfa d = generate_random_dfa(4, 4, 50);
  auto ds = augment_with_negatives(positives_from(d, 50, 51), uniform_symbol_sampler(4, ApEncoding::one_hot, 0.2), 52);
  ds.meta["note"] = "round trip";
  const auto path = temp_path("latmos_ds_test.bin");
  save_dataset(ds, path);
  EXPECT_EQ(load_dataset(path), ds);
  const auto text = temp_path("latmos_ds_test.json");
  save_dataset(ds, text, DatasetFormat::text);
  EXPECT_EQ(load_dataset(text), ds);
  std::filesystem::remove(path);
  std::filesystem::remove(text);
}

TEST(DatasetFile, TruncatedFileIsParseError) {
  Dfa d = generate_random_dfa(4, 4, 60);
  auto ds = augment_with_negatives(positives_from(d, 10, 61), uniform_symbol_sampler(4, ApEncoding::one_hot), 62);
  const std::string bytes = encode_dataset(ds);
  for (std::size_t cut : {std::size_t{3}, std::size_t{15}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      decode_dataset(bytes.substr(0, cut));
      FAIL() << "truncated input accepted at " << cut;
    } catch (const ParseError& e) {
      EXPECT_LE(e.byte_offset(), cut);
    }
  }
  std::string corrupt = bytes;
  corrupt[8] = 9;  // version
  EXPECT_THROW(decode_dataset(corrupt), ParseError);
}

TEST(DatasetFile, MetaSeedsRegenerateSameData) {
  Dfa d = generate_random_dfa(4, 4, 70);
  auto pos = positives_from(d, 30, 71);
  auto ds = augment_with_negatives(pos, uniform_symbol_sampler(4, ApEncoding::one_hot, 0.1), 72);
  auto loaded = decode_dataset(encode_dataset(ds));
  auto again = augment_with_negatives(pos, uniform_symbol_sampler(4, ApEncoding::one_hot, 0.1),
                                      loaded.meta["augment_seed"].get<std::uint64_t>(),
                                      AugmentOptions{loaded.meta["negatives_per_positive"].get<int>()});
  EXPECT_EQ(again, ds);
}
