#pragma once

// Encoder -> sequence backbone -> decoder, trained on per-step acceptance labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "latmos/dataset.hpp"
#include "latmos/error.hpp"
#include "latmos/io.hpp"
#include "latmos/nn/adam.hpp"
#include "latmos/nn/attention.hpp"
#include "latmos/nn/checkpoint.hpp"
#include "latmos/nn/conv.hpp"
#include "latmos/nn/gru.hpp"
#include "latmos/nn/layers.hpp"
#include "latmos/nn/ssm.hpp"
#include "latmos/nn/tensor.hpp"
#include "latmos/rng.hpp"

namespace latmos {

using nn::Mat;
using nn::Vec;

enum class BackboneKind { gru, attention, ssm };

inline std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::gru: return "gru";
    case BackboneKind::attention: return "attention";
    case BackboneKind::ssm: return "ssm";
  }
  return "?";
}

inline BackboneKind parse_backbone(const std::string& s) {
  if (s == "gru") return BackboneKind::gru;
  if (s == "attention") return BackboneKind::attention;
  if (s == "ssm") return BackboneKind::ssm;
  throw ContractViolation("unknown backbone '" + s + "' (expected gru, attention or ssm)");
}

struct EncoderConfig {
  // Fixed random projection + tanh; never trained.
  bool frozen = false;
  int frozen_dim = 16;
  // Trainable convolutional grid encoder (observations are C x H x W grids).
  bool conv = false;
  int grid_channels = 0;
  int grid_height = 0;
  int grid_width = 0;
  int conv_channels = 5;
  int conv_dim = 16;

  bool identity() const { return !frozen && !conv; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ModelConfig {
  int obs_dim = 0;
  BackboneKind backbone = BackboneKind::gru;
  int hidden_dim = 0;
  int heads = 2;
  int attention_depth = 1;  // passes through the weight-shared attention layer
  EncoderConfig encoder;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"obs_dim", c.obs_dim},
          {"backbone", to_string(c.backbone)},
          {"hidden_dim", c.hidden_dim},
          {"heads", c.heads},
          {"attention_depth", c.attention_depth},
          {"seed", c.seed},
          {"encoder",
           {{"frozen", c.encoder.frozen},
            {"frozen_dim", c.encoder.frozen_dim},
            {"conv", c.encoder.conv},
            {"grid_channels", c.encoder.grid_channels},
            {"grid_height", c.encoder.grid_height},
            {"grid_width", c.encoder.grid_width},
            {"conv_channels", c.encoder.conv_channels},
            {"conv_dim", c.encoder.conv_dim}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.obs_dim = j.at("obs_dim").get<int>();
  c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.heads = j.value("heads", 2);
  c.attention_depth = j.value("attention_depth", 1);
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    c.encoder.frozen = e.value("frozen", false);
    c.encoder.frozen_dim = e.value("frozen_dim", 16);
    c.encoder.conv = e.value("conv", false);
    c.encoder.grid_channels = e.value("grid_channels", 0);
    c.encoder.grid_height = e.value("grid_height", 0);
    c.encoder.grid_width = e.value("grid_width", 0);
    c.encoder.conv_channels = e.value("conv_channels", 5);
    c.encoder.conv_dim = e.value("conv_dim", 16);
  }
  return c;
}

// Hidden size for a hidden factor relative to the automaton's state count.
inline int hidden_dim_for_factor(double factor, int num_states) {
  return std::max(1, static_cast<int>(std::lround(factor * num_states)));
}

// The continuous automaton state. `h` feeds the decoder; `carry` holds the
// recurrent vectors (GRU: {h}, SSM: {s1, s2}); keys/values are the attention context.
struct LatentState {
  Vec h;
  std::vector<Vec> carry;
  Mat keys;
  Mat values;
  int step = 0;

  friend bool operator==(const LatentState& a, const LatentState& b) {
    if (a.step != b.step || a.carry.size() != b.carry.size()) return false;
    if (a.h.size() != b.h.size() || a.h != b.h) return false;
    for (std::size_t i = 0; i < a.carry.size(); ++i)
      if (a.carry[i].size() != b.carry[i].size() || a.carry[i] != b.carry[i]) return false;
    return a.keys.rows() == b.keys.rows() && a.keys.cols() == b.keys.cols() && a.keys == b.keys &&
           a.values.rows() == b.values.rows() && a.values.cols() == b.values.cols() && a.values == b.values;
  }
};

struct AcceptanceProb {
  double accept = 0.5;
  double fail = 0.5;
};

class LatmosModel {
 public:
  // Decoder class indices: 0 = failure, 1 = acceptance (matches the step labels).
  static constexpr int kFail = 0;
  static constexpr int kAccept = 1;

  struct Cache {
    int T = 0, B = 0;
    Mat obs;
    Mat emb;
    Mat frozen_out;
    nn::ConvEncoder::Cache conv;
    std::vector<nn::GruCell::StepCache> gru;
    std::vector<nn::DiagonalSsm::StepCache> ssm1, ssm2;
    nn::CausalAttentionBlock::Cache attn;
    Mat hidden;
    nn::MlpDecoder::Cache dec;
    Mat probs;
  };

  explicit LatmosModel(const ModelConfig& cfg) : cfg_(cfg) {
    require(cfg.obs_dim >= 1, "LatmosModel: obs_dim must be positive");
    require(cfg.hidden_dim >= 1, "LatmosModel: hidden_dim must be positive");
    Rng rng = make_rng(derive_seed(cfg.seed, {0x6d6f64656cULL}));
    embed_dim_ = 0;
    if (cfg.encoder.frozen) {
      frozen_ = nn::Linear(params_, "enc.frozen", cfg.obs_dim, cfg.encoder.frozen_dim, rng, /*trainable=*/false);
      embed_dim_ += cfg.encoder.frozen_dim;
    }
    if (cfg.encoder.conv) {
      const auto& e = cfg.encoder;
      require(e.grid_channels * e.grid_height * e.grid_width == cfg.obs_dim,
              "LatmosModel: grid shape does not match obs_dim");
      conv_ = nn::ConvEncoder(params_, "enc.task", e.grid_channels, e.grid_height, e.grid_width, e.conv_channels,
                              e.conv_dim, rng);
      embed_dim_ += e.conv_dim;
    }
    if (cfg.encoder.identity()) embed_dim_ = cfg.obs_dim;

    const int d = cfg.hidden_dim;
    switch (cfg.backbone) {
      case BackboneKind::gru:
        gru_ = nn::GruCell(params_, "backbone.gru", embed_dim_, d, rng);
        init_.push_back(&params_.add("backbone.h0", {d}));
        break;
      case BackboneKind::ssm:
        ssm1_ = nn::DiagonalSsm(params_, "backbone.ssm1", embed_dim_, d, rng, /*feedthrough=*/true);
        ssm2_ = nn::DiagonalSsm(params_, "backbone.ssm2", d, d, rng, /*feedthrough=*/false);
        init_.push_back(&params_.add("backbone.s1_0", {d}));
        init_.push_back(&params_.add("backbone.s2_0", {d}));
        break;
      case BackboneKind::attention:
        attn_ = nn::CausalAttentionBlock(params_, "backbone.attn", embed_dim_, d, cfg.heads, rng, cfg.attention_depth);
        break;
    }
    decoder_ = nn::MlpDecoder(params_, "dec", d, rng);
  }

  LatmosModel(const LatmosModel&) = delete;
  LatmosModel& operator=(const LatmosModel&) = delete;
  LatmosModel(LatmosModel&&) = default;
  LatmosModel& operator=(LatmosModel&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  int obs_dim() const noexcept { return cfg_.obs_dim; }
  int embed_dim() const noexcept { return embed_dim_; }
  int hidden_dim() const noexcept { return cfg_.hidden_dim; }
  int attention_heads() const noexcept { return cfg_.backbone == BackboneKind::attention ? attn_.heads : 0; }
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  std::size_t backbone_parameter_count() const { return params_.count("backbone."); }

  LatmosModel clone() const {
    LatmosModel m(cfg_);
    m.params_.restore(params_.snapshot());
    return m;
  }

  // ---- single-step interface ----

  Mat encode_batch(const Mat& obs, Cache* cache = nullptr) const {
    require(obs.rows() == cfg_.obs_dim, "encode: observation dimension mismatch");
    if (cfg_.encoder.identity()) return obs;
    Mat out(embed_dim_, obs.cols());
    int row = 0;
    if (cfg_.encoder.frozen) {
      Mat f = frozen_.forward(obs).array().tanh();
      out.topRows(cfg_.encoder.frozen_dim) = f;
      row = cfg_.encoder.frozen_dim;
      if (cache) cache->frozen_out = std::move(f);
    }
    if (cfg_.encoder.conv) out.bottomRows(cfg_.encoder.conv_dim) = conv_.forward(obs, cache ? &cache->conv : nullptr);
    (void)row;
    return out;
  }

  Vec encode(const Vec& obs) const { return encode_batch(obs).col(0); }

  LatentState initial_state() const {
    LatentState s;
    s.h = Vec::Zero(cfg_.hidden_dim);
    switch (cfg_.backbone) {
      case BackboneKind::gru:
        s.carry = {init_[0]->value.vec()};
        s.h = s.carry[0];
        break;
      case BackboneKind::ssm:
        s.carry = {init_[0]->value.vec(), init_[1]->value.vec()};
        break;
      case BackboneKind::attention:
        s.keys = Mat(cfg_.hidden_dim, 0);
        s.values = Mat(cfg_.hidden_dim, 0);
        break;
    }
    return s;
  }

  LatentState advance(const Vec& emb, const LatentState& state) const {
    require(emb.size() == embed_dim_, "advance: embedding dimension mismatch");
    LatentState s = state;
    switch (cfg_.backbone) {
      case BackboneKind::gru:
        s.carry[0] = gru_.step(emb, state.carry[0]).col(0);
        s.h = s.carry[0];
        break;
      case BackboneKind::ssm: {
        Mat s1 = state.carry[0], s2 = state.carry[1];
        Mat y1 = ssm1_.step(emb, &s1);
        s.h = ssm2_.step(y1, &s2).col(0);
        s.carry = {s1.col(0), s2.col(0)};
        break;
      }
      case BackboneKind::attention: {
        nn::CausalAttentionBlock::State st{state.keys, state.values, state.step};
        s.h = attn_.step(emb, &st);
        s.keys = std::move(st.keys);
        s.values = std::move(st.values);
        break;
      }
    }
    s.step = state.step + 1;
    return s;
  }

  LatentState advance_obs(const Vec& obs, const LatentState& state) const { return advance(encode(obs), state); }

  AcceptanceProb acceptance_prob(const LatentState& s) const {
    require(s.h.size() == cfg_.hidden_dim, "acceptance_prob: latent dimension mismatch");
    Mat p = decoder_.forward(s.h);
    return {p(kAccept, 0), p(kFail, 0)};
  }

  // ---- batched sequence interface ----
  // obs is N x (T * B), time-major (column t * B + b). Returns 2 x (T * B) probabilities.

  Mat forward_batch(const Mat& obs, int T, int B, Cache* cache = nullptr) const {
    require(T >= 1 && B >= 1 && obs.cols() == static_cast<Eigen::Index>(T) * B, "forward_batch: shape mismatch");
    Mat emb = encode_batch(obs, cache);
    Mat H(cfg_.hidden_dim, emb.cols());
    switch (cfg_.backbone) {
      case BackboneKind::gru: {
        Mat h = init_[0]->value.vec().replicate(1, B);
        if (cache) cache->gru.resize(T);
        for (int t = 0; t < T; ++t) {
          h = gru_.step(emb.middleCols(static_cast<Eigen::Index>(t) * B, B), h, cache ? &cache->gru[t] : nullptr);
          H.middleCols(static_cast<Eigen::Index>(t) * B, B) = h;
        }
        break;
      }
      case BackboneKind::ssm: {
        Mat s1 = init_[0]->value.vec().replicate(1, B);
        Mat s2 = init_[1]->value.vec().replicate(1, B);
        if (cache) {
          cache->ssm1.resize(T);
          cache->ssm2.resize(T);
        }
        for (int t = 0; t < T; ++t) {
          Mat y1 = ssm1_.step(emb.middleCols(static_cast<Eigen::Index>(t) * B, B), &s1,
                              cache ? &cache->ssm1[t] : nullptr);
          H.middleCols(static_cast<Eigen::Index>(t) * B, B) = ssm2_.step(y1, &s2, cache ? &cache->ssm2[t] : nullptr);
        }
        break;
      }
      case BackboneKind::attention:
        H = attn_.forward(emb, T, B, cache ? &cache->attn : nullptr);
        break;
    }
    Mat logits = decoder_.logits(H, cache ? &cache->dec : nullptr);
    Mat probs = nn::softmax(logits);
    if (cache) {
      cache->T = T;
      cache->B = B;
      cache->obs = obs;
      cache->emb = std::move(emb);
      cache->hidden = std::move(H);
      cache->probs = probs;
    }
    return probs;
  }

  // Accumulates parameter gradients for dL/dlogits; returns dL/d(embedding).
  Mat backward_batch(const Cache& c, const Mat& dlogits) const {
    const int T = c.T, B = c.B;
    Mat dH = decoder_.backward(c.dec, dlogits);
    Mat demb(embed_dim_, dH.cols());
    switch (cfg_.backbone) {
      case BackboneKind::gru: {
        Mat dh = Mat::Zero(cfg_.hidden_dim, B);
        Mat dx;
        for (int t = T - 1; t >= 0; --t) {
          Mat g = dH.middleCols(static_cast<Eigen::Index>(t) * B, B) + dh;
          gru_.step_backward(c.gru[t], g, &dx, &dh);
          demb.middleCols(static_cast<Eigen::Index>(t) * B, B) = dx;
        }
        init_[0]->grad.vec() += dh.rowwise().sum();
        break;
      }
      case BackboneKind::ssm: {
        Mat ds1 = Mat::Zero(cfg_.hidden_dim, B), ds2 = Mat::Zero(cfg_.hidden_dim, B);
        for (int t = T - 1; t >= 0; --t) {
          Mat dy1 = ssm2_.step_backward(c.ssm2[t], dH.middleCols(static_cast<Eigen::Index>(t) * B, B), &ds2);
          demb.middleCols(static_cast<Eigen::Index>(t) * B, B) = ssm1_.step_backward(c.ssm1[t], dy1, &ds1);
        }
        init_[0]->grad.vec() += ds1.rowwise().sum();
        init_[1]->grad.vec() += ds2.rowwise().sum();
        break;
      }
      case BackboneKind::attention:
        demb = attn_.backward(c.attn, dH);
        break;
    }
    if (cfg_.encoder.conv) conv_.backward_params(c.conv, demb.bottomRows(cfg_.encoder.conv_dim));
    return demb;
  }

  // Per-step predictions; an empty sequence yields only the prediction at h_0.
  std::vector<AcceptanceProb> forward_sequence(const ObservationSequence& seq) const {
    require(seq.dim() == cfg_.obs_dim || seq.length() == 0, "forward_sequence: dimension mismatch");
    if (seq.length() == 0) return {acceptance_prob(initial_state())};
    Mat p = forward_batch(seq.steps, seq.length(), 1);
    std::vector<AcceptanceProb> out(static_cast<std::size_t>(seq.length()));
    for (int t = 0; t < seq.length(); ++t) out[t] = {p(kAccept, t), p(kFail, t)};
    return out;
  }

  // Final-step decision.
  bool model_check(const ObservationSequence& seq, double threshold = 0.5) const {
    return forward_sequence(seq).back().accept >= threshold;
  }

  // Latent vector after each step (for trajectory dumps).
  std::vector<Vec> latent_trajectory(const ObservationSequence& seq) const {
    std::vector<Vec> out;
    LatentState s = initial_state();
    out.push_back(s.h);
    for (int t = 0; t < seq.length(); ++t) {
      s = advance_obs(seq.steps.col(t), s);
      out.push_back(s.h);
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  nn::ParamSet params_;
  int embed_dim_ = 0;
  nn::Linear frozen_;
  nn::ConvEncoder conv_;
  nn::GruCell gru_;
  nn::DiagonalSsm ssm1_, ssm2_;
  nn::CausalAttentionBlock attn_;
  std::vector<nn::Param*> init_;
  nn::MlpDecoder decoder_;
};

// ---------------------------------------------------------------------------
// Persistence

inline std::string encode_model(const LatmosModel& m) { return nn::encode_checkpoint(m.params(), to_json(m.config())); }

inline LatmosModel decode_model(const std::string& data) {
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nn::checkpoint_config(data));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config incomplete: ") + e.what(), 0);
  }
  LatmosModel m(cfg);
  nn::decode_checkpoint_into(data, m.params());
  return m;
}

inline void save_model(const LatmosModel& m, const std::string& path) { write_file(path, encode_model(m)); }

inline LatmosModel load_model(const std::string& path) { return decode_model(detail::read_file(path)); }

// Loads parameters into an existing model; the stored architecture must match.
inline void load_model_into(LatmosModel& m, const std::string& path) {
  const std::string data = detail::read_file(path);
  ModelConfig stored = model_config_from_json(nn::checkpoint_config(data));
  stored.seed = m.config().seed;
  if (!(stored == m.config())) throw CheckpointMismatch("checkpoint architecture differs from the target model");
  nn::decode_checkpoint_into(data, m.params());
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  int T = 0;
  int B = 0;
  Mat obs;                  // N x (T * B), time-major
  std::vector<int> labels;  // per column
};

inline Batch make_batch(const std::vector<const ObservationSequence*>& seqs) {
  require(!seqs.empty(), "make_batch: empty batch");
  Batch b;
  b.T = seqs.front()->length();
  b.B = static_cast<int>(seqs.size());
  const int N = seqs.front()->dim();
  b.obs.resize(N, static_cast<Eigen::Index>(b.T) * b.B);
  b.labels.assign(static_cast<std::size_t>(b.T) * b.B, 0);
  for (int j = 0; j < b.B; ++j) {
    const auto& s = *seqs[j];
    require(s.length() == b.T, "make_batch: sequences differ in length");
    for (int t = 0; t < b.T; ++t) {
      const auto col = static_cast<Eigen::Index>(t) * b.B + j;
      b.obs.col(col) = s.steps.col(t);
      if (s.labels) b.labels[static_cast<std::size_t>(col)] = (*s.labels)[t];
    }
  }
  return b;
}

// Groups sequence indices by length, then chunks into batches of at most `batch_size`.
inline std::vector<std::vector<std::size_t>> length_buckets(const std::vector<ObservationSequence>& seqs,
                                                            std::size_t batch_size, Rng* shuffle_rng) {
  std::map<int, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    if (seqs[i].length() > 0) by_len[seqs[i].length()].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [len, idx] : by_len) {
    if (shuffle_rng) std::shuffle(idx.begin(), idx.end(), *shuffle_rng);
    for (std::size_t k = 0; k < idx.size(); k += batch_size)
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(k),
                           idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), k + batch_size)));
  }
  if (shuffle_rng) std::shuffle(batches.begin(), batches.end(), *shuffle_rng);
  return batches;
}

struct StepMetrics {
  double loss = 0.0;      // mean per-sequence mean step loss
  double accuracy = 0.0;  // per-step argmax accuracy
  std::size_t steps = 0;
};

// Mean over sequences of the mean per-step cross-entropy, plus step accuracy.
inline StepMetrics evaluate_steps(const LatmosModel& m, const std::vector<ObservationSequence>& seqs,
                                  std::size_t batch_size = 256) {
  StepMetrics out;
  double loss_sum = 0.0;
  std::size_t correct = 0, nseq = 0;
  for (const auto& idx : length_buckets(seqs, batch_size, nullptr)) {
    std::vector<const ObservationSequence*> ptrs;
    for (auto i : idx) ptrs.push_back(&seqs[i]);
    Batch b = make_batch(ptrs);
    Mat p = m.forward_batch(b.obs, b.T, b.B);
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const int y = b.labels[static_cast<std::size_t>(c)];
      loss_sum -= std::log(std::max(p(y, c), nn::kProbClamp)) / b.T;
      const int pred = p(LatmosModel::kAccept, c) >= 0.5 ? 1 : 0;
      if (pred == y) ++correct;
    }
    out.steps += static_cast<std::size_t>(p.cols());
    nseq += idx.size();
  }
  if (nseq) out.loss = loss_sum / static_cast<double>(nseq);
  if (out.steps) out.accuracy = static_cast<double>(correct) / static_cast<double>(out.steps);
  return out;
}

// Final-step acceptance probability of every sequence.
inline std::vector<double> final_accept_probs(const LatmosModel& m, const std::vector<ObservationSequence>& seqs,
                                              std::size_t batch_size = 256) {
  std::vector<double> out(seqs.size(), 0.0);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    if (seqs[i].length() == 0) out[i] = m.acceptance_prob(m.initial_state()).accept;
  for (const auto& idx : length_buckets(seqs, batch_size, nullptr)) {
    std::vector<const ObservationSequence*> ptrs;
    for (auto i : idx) ptrs.push_back(&seqs[i]);
    Batch b = make_batch(ptrs);
    Mat p = m.forward_batch(b.obs, b.T, b.B);
    for (int j = 0; j < b.B; ++j)
      out[idx[static_cast<std::size_t>(j)]] = p(LatmosModel::kAccept, static_cast<Eigen::Index>(b.T - 1) * b.B + j);
  }
  return out;
}

// One forward/backward pass over a batch; returns the batch loss (mean over its steps).
inline double batch_gradient(LatmosModel& m, const Batch& b) {
  LatmosModel::Cache cache;
  Mat p = m.forward_batch(b.obs, b.T, b.B, &cache);
  Mat dlogits;
  const double total = nn::softmax_ce_from_probs(p, b.labels, 1.0 / static_cast<double>(p.cols()), &dlogits);
  m.backward_batch(cache, dlogits);
  return total / static_cast<double>(p.cols());
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  nn::AdamConfig adam;
  double val_fraction = 0.1;
  int patience = 10;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},    {"beta2", c.adam.beta2},      {"adam_eps", c.adam.eps},
          {"val_fraction", c.val_fraction}, {"patience", c.patience}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("adam_eps", c.adam.eps);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  return c;
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_loss = 0.0;  // training-set loss before the first update
  int best_epoch = 0;
  bool stopped_early = false;
  bool has_validation = false;
  std::int64_t rejected_steps = 0;
  std::string checkpoint;
  nlohmann::json hyper;
};

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : r.epochs)
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"train_accuracy", e.train_accuracy},
                  {"val_loss", e.val_loss},
                  {"val_accuracy", e.val_accuracy}});
  return {{"epochs", ep},
          {"initial_loss", r.initial_loss},
          {"best_epoch", r.best_epoch},
          {"stopped_early", r.stopped_early},
          {"has_validation", r.has_validation},
          {"rejected_steps", r.rejected_steps},
          {"checkpoint", r.checkpoint},
          {"hyper", r.hyper}};
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Minimizes the mean per-step cross-entropy with Adam; early-stops on
// validation accuracy (split by source positive) and restores the best epoch.
inline TrainReport train(LatmosModel& model, const LabeledDataset& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  require(!data.sequences.empty(), "train: empty dataset");
  require(data.obs_dim == model.obs_dim(), "train: dataset dimension does not match the model");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "train: epochs and batch_size must be positive");
  validate_dataset(data);

  TrainReport report;
  report.hyper = to_json(cfg);
  report.hyper["model"] = to_json(model.config());

  LabeledDataset train_set, val_set;
  std::size_t groups = 0;
  {
    std::vector<std::int64_t> ids;
    for (const auto& s : data.sequences) ids.push_back(s.source_id);
    std::sort(ids.begin(), ids.end());
    groups = static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }
  if (cfg.val_fraction > 0.0 && std::llround(cfg.val_fraction * static_cast<double>(groups)) >= 1 &&
      std::llround(cfg.val_fraction * static_cast<double>(groups)) < static_cast<long long>(groups)) {
    std::tie(train_set, val_set) = split_train_test(data, cfg.val_fraction, derive_seed(cfg.seed, {0x76616cULL}));
    report.has_validation = true;
  } else {
    train_set = data;
  }

  Rng rng = make_rng(derive_seed(cfg.seed, {0x747261696eULL}));
  nn::Adam opt(model.params(), cfg.adam);
  report.initial_loss = evaluate_steps(model, train_set.sequences).loss;

  double best_acc = -1.0, best_loss = 0.0;
  std::vector<nn::Tensor> best = model.params().snapshot();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = length_buckets(train_set.sequences, static_cast<std::size_t>(cfg.batch_size), &rng);
    double loss_sum = 0.0;
    std::size_t seq_count = 0;
    for (const auto& idx : batches) {
      std::vector<const ObservationSequence*> ptrs;
      for (auto i : idx) ptrs.push_back(&train_set.sequences[i]);
      Batch b = make_batch(ptrs);
      model.params().zero_grad();
      const double loss = batch_gradient(model, b);
      if (!std::isfinite(loss)) throw TrainingDiverged("training loss is not finite", epoch);
      opt.step();
      loss_sum += loss * static_cast<double>(b.B);
      seq_count += static_cast<std::size_t>(b.B);
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(seq_count, 1));
    if (!std::isfinite(st.train_loss)) throw TrainingDiverged("training loss is not finite", epoch);
    const StepMetrics tr = evaluate_steps(model, train_set.sequences);
    st.train_accuracy = tr.accuracy;
    const StepMetrics va = report.has_validation ? evaluate_steps(model, val_set.sequences) : tr;
    st.val_loss = va.loss;
    st.val_accuracy = va.accuracy;
    report.epochs.push_back(st);
    if (on_epoch) on_epoch(st);

    if (va.accuracy > best_acc || (va.accuracy == best_acc && va.loss < best_loss)) {
      best_acc = va.accuracy;
      best_loss = va.loss;
      best = model.params().snapshot();
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      report.stopped_early = true;
      break;
    }
  }
  model.params().restore(best);
  report.rejected_steps = opt.rejected_steps();
  return report;
}

}  // namespace latmos
