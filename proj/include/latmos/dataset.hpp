#pragma once

// Positive demonstrations, synthetic-negative augmentation and dataset files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latmos/automaton.hpp"
#include "latmos/error.hpp"
#include "latmos/io.hpp"
#include "latmos/rng.hpp"

namespace latmos {

enum class SequenceSource : std::uint8_t { positive = 0, synthetic_negative = 1 };

inline const char* to_string(SequenceSource s) {
  return s == SequenceSource::positive ? "positive" : "synthetic_negative";
}

struct ObservationSequence {
  Eigen::MatrixXd steps;  // obs_dim x length, one column per step
  std::optional<std::vector<std::uint8_t>> labels;
  SequenceSource source = SequenceSource::positive;
  std::int64_t source_id = -1;  // positive this sequence derives from
  std::int64_t cut = -1;        // number of steps copied from the source (negatives)
  std::vector<int> symbols;     // underlying symbol per step, when known

  int length() const noexcept { return static_cast<int>(steps.cols()); }
  int dim() const noexcept { return static_cast<int>(steps.rows()); }

  friend bool operator==(const ObservationSequence& a, const ObservationSequence& b) {
    return a.steps.rows() == b.steps.rows() && a.steps.cols() == b.steps.cols() &&
           a.steps == b.steps && a.labels == b.labels && a.source == b.source &&
           a.source_id == b.source_id && a.cut == b.cut && a.symbols == b.symbols;
  }
};

struct LabeledDataset {
  std::vector<ObservationSequence> sequences;
  int obs_dim = 0;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const noexcept { return sequences.size(); }

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.obs_dim == b.obs_dim && a.meta == b.meta && a.sequences == b.sequences;
  }
};

struct LabelCounts {
  std::size_t ones = 0;
  std::size_t zeros = 0;
  double imbalance() const {
    const double total = static_cast<double>(ones + zeros);
    return total == 0 ? 0.0 : std::abs(static_cast<double>(ones) - static_cast<double>(zeros)) / total;
  }
};

inline LabelCounts count_labels(const LabeledDataset& ds) {
  LabelCounts c;
  for (const auto& s : ds.sequences) {
    if (!s.labels) continue;
    for (auto y : *s.labels) (y ? c.ones : c.zeros)++;
  }
  return c;
}

inline ObservationSequence make_positive(Eigen::MatrixXd steps, std::int64_t id, std::vector<int> symbols = {}) {
  ObservationSequence s;
  const auto len = static_cast<std::size_t>(steps.cols());
  s.steps = std::move(steps);
  s.labels = std::vector<std::uint8_t>(len, 1);
  s.source = SequenceSource::positive;
  s.source_id = id;
  s.symbols = std::move(symbols);
  return s;
}

// Positive labels are 1+, synthetic negatives 1*0+.
inline bool label_structure_ok(const ObservationSequence& s) {
  if (!s.labels || s.labels->size() != static_cast<std::size_t>(s.length())) return false;
  const auto& y = *s.labels;
  if (s.source == SequenceSource::positive)
    return !y.empty() && std::all_of(y.begin(), y.end(), [](auto v) { return v == 1; });
  std::size_t k = 0;
  while (k < y.size() && y[k] == 1) ++k;
  if (k == y.size()) return false;
  for (; k < y.size(); ++k)
    if (y[k] != 0) return false;
  return true;
}

inline void validate_dataset(const LabeledDataset& ds) {
  for (const auto& s : ds.sequences) {
    require(s.dim() == ds.obs_dim, "dataset: sequence dimension differs from obs_dim");
    require(s.labels.has_value(), "dataset: every sequence must be labeled");
    require(s.labels->size() == static_cast<std::size_t>(s.length()), "dataset: label length mismatch");
    require(s.symbols.empty() || s.symbols.size() == static_cast<std::size_t>(s.length()),
            "dataset: symbol length mismatch");
  }
}

// ---------------------------------------------------------------------------
// Synthetic negatives

struct SuffixRequest {
  const ObservationSequence& source;
  std::size_t source_index;
  int cut;     // steps [0, cut) come from the source
  int length;  // number of steps to sample
};

struct SampledSuffix {
  Eigen::MatrixXd steps;  // obs_dim x length
  std::vector<int> symbols;
};

using SuffixSampler = std::function<SampledSuffix(const SuffixRequest&, Rng&)>;

// I.i.d. uniform symbols from the alphabet, encoded as AP vectors (optionally noisy).
inline SuffixSampler uniform_symbol_sampler(int num_symbols, ApEncoding enc, double noise_variance = 0.0) {
  const int P = ap_dimension(enc, num_symbols);
  return [=](const SuffixRequest& req, Rng& rng) {
    SampledSuffix out;
    out.symbols.resize(req.length);
    for (int& a : out.symbols) a = uniform_int(rng, 0, num_symbols - 1);
    out.steps = symbols_to_observations(out.symbols, P, enc, noise_variance, &rng);
    return out;
  };
}

// Uniform symbols restricted to transitions allowed by `mask`; needs the source's symbols.
inline SuffixSampler masked_symbol_sampler(const Dfa& dfa, const TransitionMask& mask, ApEncoding enc,
                                           double noise_variance = 0.0) {
  const int P = ap_dimension(enc, dfa.num_symbols());
  return [=](const SuffixRequest& req, Rng& rng) {
    require(req.source.symbols.size() == static_cast<std::size_t>(req.source.length()),
            "masked_symbol_sampler: source sequence has no symbols");
    int s = dfa.initial();
    for (int k = 0; k < req.cut; ++k) s = dfa.next(s, req.source.symbols[k]);
    SampledSuffix out;
    std::vector<int> options;
    for (int k = 0; k < req.length; ++k) {
      options.clear();
      for (int a = 0; a < dfa.num_symbols(); ++a)
        if (mask.allowed(s, a)) options.push_back(a);
      if (options.empty())  // dead end under the mask; fall back to the full alphabet
        for (int a = 0; a < dfa.num_symbols(); ++a) options.push_back(a);
      int a = options[uniform_int(rng, 0, static_cast<int>(options.size()) - 1)];
      out.symbols.push_back(a);
      s = dfa.next(s, a);
    }
    out.steps = symbols_to_observations(out.symbols, P, enc, noise_variance, &rng);
    return out;
  };
}

struct AugmentOptions {
  // Negatives per positive; < 0 selects every cut (one per step), which
  // balances the step labels exactly.
  int negatives_per_positive = -1;
  double balance_tolerance = 0.1;
};

inline LabeledDataset augment_with_negatives(const std::vector<ObservationSequence>& positives,
                                             const SuffixSampler& sampler, std::uint64_t seed,
                                             const AugmentOptions& opts = {}) {
  require(!positives.empty(), "augment_with_negatives: positives must be non-empty");
  LabeledDataset ds;
  ds.obs_dim = positives.front().dim();
  nlohmann::json warnings = nlohmann::json::array();
  Rng rng = make_rng(seed);

  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto& pos = positives[i];
    require(pos.dim() == ds.obs_dim, "augment_with_negatives: positives differ in dimension");
    require(pos.length() >= 1, "augment_with_negatives: empty positive sequence");
    ObservationSequence p = pos;
    p.labels = std::vector<std::uint8_t>(p.length(), 1);
    p.source = SequenceSource::positive;
    p.source_id = static_cast<std::int64_t>(i);
    p.cut = -1;
    ds.sequences.push_back(std::move(p));
  }

  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto& pos = positives[i];
    const int n = pos.length();
    int want = opts.negatives_per_positive < 0 ? n : opts.negatives_per_positive;
    if (want > n) {
      warnings.push_back({{"positive", i}, {"requested", want}, {"clamped_to", n}});
      want = n;
    }
    // Cut = number of copied steps in [0, n-1]; at least one sampled step remains.
    std::vector<int> cuts(n);
    std::iota(cuts.begin(), cuts.end(), 0);
    if (want < n) {
      std::shuffle(cuts.begin(), cuts.end(), rng);
      cuts.resize(want);
      std::sort(cuts.begin(), cuts.end());
    }
    for (int cut : cuts) {
      const int suffix_len = n - cut;
      SampledSuffix suffix = sampler(SuffixRequest{pos, i, cut, suffix_len}, rng);
      require(suffix.steps.rows() == ds.obs_dim && suffix.steps.cols() == suffix_len,
              "augment_with_negatives: sampler returned wrong shape");
      ObservationSequence neg;
      neg.steps.resize(ds.obs_dim, n);
      if (cut > 0) neg.steps.leftCols(cut) = pos.steps.leftCols(cut);
      neg.steps.rightCols(suffix_len) = suffix.steps;
      std::vector<std::uint8_t> y(n, 0);
      std::fill(y.begin(), y.begin() + cut, 1);
      neg.labels = std::move(y);
      neg.source = SequenceSource::synthetic_negative;
      neg.source_id = static_cast<std::int64_t>(i);
      neg.cut = cut;
      if (!pos.symbols.empty() && !suffix.symbols.empty()) {
        neg.symbols.assign(pos.symbols.begin(), pos.symbols.begin() + cut);
        neg.symbols.insert(neg.symbols.end(), suffix.symbols.begin(), suffix.symbols.end());
      }
      ds.sequences.push_back(std::move(neg));
    }
  }

  // Enforce step-label balance by dropping whole sequences.
  // Skipped when no negatives were requested (the dataset is positives only).
  std::size_t dropped = 0;
  const bool any_negative = ds.sequences.size() > positives.size();
  while (any_negative) {
    LabelCounts c = count_labels(ds);
    if (c.imbalance() <= opts.balance_tolerance) break;
    std::vector<std::size_t> candidates;
    if (c.ones > c.zeros) {
      for (std::size_t k = 0; k < ds.sequences.size(); ++k)
        if (ds.sequences[k].source == SequenceSource::positive) candidates.push_back(k);
    } else {
      std::int64_t min_cut = std::numeric_limits<std::int64_t>::max();
      for (const auto& s : ds.sequences)
        if (s.source == SequenceSource::synthetic_negative) min_cut = std::min(min_cut, s.cut);
      for (std::size_t k = 0; k < ds.sequences.size(); ++k)
        if (ds.sequences[k].source == SequenceSource::synthetic_negative && ds.sequences[k].cut == min_cut)
          candidates.push_back(k);
    }
    if (candidates.empty()) break;
    std::size_t victim = candidates[uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1)];
    ds.sequences.erase(ds.sequences.begin() + static_cast<std::ptrdiff_t>(victim));
    ++dropped;
  }

  ds.meta = {{"augment_seed", seed},
             {"negatives_per_positive", opts.negatives_per_positive},
             {"num_positives", positives.size()},
             {"balance_dropped", dropped},
             {"warnings", warnings}};
  return ds;
}

// Fraction of synthetic negatives whose complete sequence is accepted by `dfa`
// (they keep label 0; this is the false-negative label rate).
inline double false_negative_label_rate(const LabeledDataset& ds, const Dfa& dfa) {
  std::size_t total = 0, accepted = 0;
  for (const auto& s : ds.sequences) {
    if (s.source != SequenceSource::synthetic_negative || s.symbols.empty()) continue;
    ++total;
    if (accepts(dfa, s.symbols)) ++accepted;
  }
  return total == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(total);
}

// Replaces every step label by ground-truth prefix acceptance under `dfa`.
inline LabeledDataset relabel_with_automaton(LabeledDataset ds, const Dfa& dfa) {
  for (auto& s : ds.sequences) {
    require(s.symbols.size() == static_cast<std::size_t>(s.length()),
            "relabel_with_automaton: sequence lacks symbols");
    s.labels = prefix_acceptance(dfa, s.symbols);
  }
  ds.meta["label_mode"] = "automaton";
  return ds;
}

// ---------------------------------------------------------------------------
// Train/test split grouped by source positive

inline std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds, double test_fraction,
                                                                  std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "split_train_test: test_fraction must be in (0, 1)");
  std::vector<std::int64_t> groups;
  for (const auto& s : ds.sequences) groups.push_back(s.source_id);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(groups.size())));
  require(n_test >= 1 && n_test < groups.size(), "split_train_test: split leaves one side empty");
  Rng rng = make_rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  std::vector<std::int64_t> test_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::sort(test_groups.begin(), test_groups.end());

  LabeledDataset train, test;
  train.obs_dim = test.obs_dim = ds.obs_dim;
  train.meta = test.meta = ds.meta;
  train.meta["split"] = {{"seed", seed}, {"test_fraction", test_fraction}, {"side", "train"}};
  test.meta["split"] = {{"seed", seed}, {"test_fraction", test_fraction}, {"side", "test"}};
  for (const auto& s : ds.sequences) {
    bool in_test = std::binary_search(test_groups.begin(), test_groups.end(), s.source_id);
    (in_test ? test : train).sequences.push_back(s);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Files. Binary layout (little-endian):
//   "LATMOSDS" | u32 version | u64 header_len | header JSON
//   per sequence: u64 record_len | u8 source | u8 has_labels | u8 has_symbols | u8 0
//                 | i64 source_id | i64 cut | u32 length
//                 | f64[length * obs_dim] (step-major) | u8[length] labels? | i32[length] symbols?

inline constexpr char kDatasetMagic[8] = {'L', 'A', 'T', 'M', 'O', 'S', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;


inline std::string encode_dataset(const LabeledDataset& ds) {
  std::string buf(kDatasetMagic, sizeof(kDatasetMagic));
  detail::put<std::uint32_t>(buf, kDatasetVersion);
  const std::string header =
      nlohmann::json{{"obs_dim", ds.obs_dim}, {"num_sequences", ds.sequences.size()}, {"meta", ds.meta}}.dump();
  detail::put<std::uint64_t>(buf, header.size());
  buf += header;
  for (const auto& s : ds.sequences) {
    std::string rec;
    detail::put<std::uint8_t>(rec, static_cast<std::uint8_t>(s.source));
    detail::put<std::uint8_t>(rec, s.labels ? 1 : 0);
    detail::put<std::uint8_t>(rec, s.symbols.empty() ? 0 : 1);
    detail::put<std::uint8_t>(rec, 0);
    detail::put<std::int64_t>(rec, s.source_id);
    detail::put<std::int64_t>(rec, s.cut);
    detail::put<std::uint32_t>(rec, static_cast<std::uint32_t>(s.length()));
    for (Eigen::Index t = 0; t < s.steps.cols(); ++t)
      for (Eigen::Index r = 0; r < s.steps.rows(); ++r) detail::put<double>(rec, s.steps(r, t));
    if (s.labels)
      for (auto y : *s.labels) detail::put<std::uint8_t>(rec, y);
    for (int a : s.symbols) detail::put<std::int32_t>(rec, a);
    detail::put<std::uint64_t>(buf, rec.size());
    buf += rec;
  }
  return buf;
}

inline LabeledDataset decode_dataset_json(const nlohmann::json& j);

inline LabeledDataset decode_dataset(const std::string& data) {
  if (data.size() < sizeof(kDatasetMagic) || std::memcmp(data.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(data);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("dataset is neither binary nor text format: ") + e.what(), e.byte);
    }
    return decode_dataset_json(j);
  }
  detail::ByteReader in(data);
  in.bytes(sizeof(kDatasetMagic), "magic");
  const std::size_t version_at = in.offset();
  if (in.get<std::uint32_t>("version") != kDatasetVersion) throw ParseError("unsupported dataset version", version_at);
  const auto header_len = in.get<std::uint64_t>("header length");
  const std::size_t header_at = in.offset();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.bytes(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed dataset header: ") + e.what(), header_at + e.byte);
  }
  LabeledDataset ds;
  std::size_t count = 0;
  try {
    ds.obs_dim = header.at("obs_dim").get<int>();
    count = header.at("num_sequences").get<std::size_t>();
    ds.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset header missing fields: ") + e.what(), header_at);
  }
  ds.sequences.reserve(std::min<std::size_t>(count, data.size() / 32));
  for (std::size_t i = 0; i < count; ++i) {
    const auto rec_len = in.get<std::uint64_t>("record length");
    const std::size_t rec_start = in.offset();
    ObservationSequence s;
    const auto source = in.get<std::uint8_t>("source");
    if (source > 1) throw ParseError("invalid source tag", rec_start);
    s.source = static_cast<SequenceSource>(source);
    const bool has_labels = in.get<std::uint8_t>("label flag") != 0;
    const bool has_symbols = in.get<std::uint8_t>("symbol flag") != 0;
    in.get<std::uint8_t>("reserved");
    s.source_id = in.get<std::int64_t>("source id");
    s.cut = in.get<std::int64_t>("cut");
    const auto len = in.get<std::uint32_t>("length");
    if (static_cast<std::uint64_t>(len) * static_cast<std::uint64_t>(std::max(ds.obs_dim, 1)) * 8 > rec_len)
      throw ParseError("sequence length exceeds record size", in.offset());
    s.steps.resize(ds.obs_dim, len);
    for (std::uint32_t t = 0; t < len; ++t)
      for (int r = 0; r < ds.obs_dim; ++r) s.steps(r, t) = in.get<double>("observation");
    if (has_labels) {
      std::vector<std::uint8_t> y(len);
      for (auto& v : y) v = in.get<std::uint8_t>("label");
      s.labels = std::move(y);
    }
    if (has_symbols) {
      s.symbols.resize(len);
      for (auto& a : s.symbols) a = in.get<std::int32_t>("symbol");
    }
    if (in.offset() - rec_start != rec_len) throw ParseError("record length mismatch", rec_start);
    ds.sequences.push_back(std::move(s));
  }
  if (!in.done()) throw ParseError("trailing bytes after last record", in.offset());
  return ds;
}

inline nlohmann::json dataset_to_json(const LabeledDataset& ds) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : ds.sequences) {
    nlohmann::json steps = nlohmann::json::array();
    for (Eigen::Index t = 0; t < s.steps.cols(); ++t) {
      std::vector<double> col(s.steps.col(t).data(), s.steps.col(t).data() + s.steps.rows());
      steps.push_back(col);
    }
    nlohmann::json rec = {{"source", to_string(s.source)}, {"source_id", s.source_id}, {"cut", s.cut},
                          {"steps", steps}};
    if (s.labels) rec["labels"] = *s.labels;
    if (!s.symbols.empty()) rec["symbols"] = s.symbols;
    seqs.push_back(std::move(rec));
  }
  return {{"format", "latmos-dataset-text"}, {"version", kDatasetVersion}, {"obs_dim", ds.obs_dim},
          {"meta", ds.meta}, {"sequences", seqs}};
}

inline LabeledDataset decode_dataset_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "latmos-dataset-text") throw ParseError("unknown dataset text format", 0);
    LabeledDataset ds;
    ds.obs_dim = j.at("obs_dim").get<int>();
    ds.meta = j.at("meta");
    for (const auto& rec : j.at("sequences")) {
      ObservationSequence s;
      const auto src = rec.at("source").get<std::string>();
      if (src == "positive") s.source = SequenceSource::positive;
      else if (src == "synthetic_negative") s.source = SequenceSource::synthetic_negative;
      else throw ParseError("invalid source tag " + src, 0);
      s.source_id = rec.at("source_id").get<std::int64_t>();
      s.cut = rec.at("cut").get<std::int64_t>();
      const auto& steps = rec.at("steps");
      s.steps.resize(ds.obs_dim, static_cast<Eigen::Index>(steps.size()));
      for (std::size_t t = 0; t < steps.size(); ++t) {
        auto col = steps[t].get<std::vector<double>>();
        if (static_cast<int>(col.size()) != ds.obs_dim) throw ParseError("step dimension mismatch", 0);
        for (int r = 0; r < ds.obs_dim; ++r) s.steps(r, static_cast<Eigen::Index>(t)) = col[r];
      }
      if (rec.contains("labels")) s.labels = rec["labels"].get<std::vector<std::uint8_t>>();
      if (rec.contains("symbols")) s.symbols = rec["symbols"].get<std::vector<int>>();
      ds.sequences.push_back(std::move(s));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed text dataset: ") + e.what(), 0);
  }
}

enum class DatasetFormat { binary, text };

inline void save_dataset(const LabeledDataset& ds, const std::string& path,
                         DatasetFormat format = DatasetFormat::binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  if (format == DatasetFormat::binary) {
    const std::string buf = encode_dataset(ds);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  } else {
    out << dataset_to_json(ds).dump() << "\n";
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline LabeledDataset load_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

}  // namespace latmos
