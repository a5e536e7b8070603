#pragma once

// Finite-difference checks of every differentiable piece, run by the CLI and tests.

#include <string>
#include <vector>

#include "latmos/nn/attention.hpp"
#include "latmos/nn/conv.hpp"
#include "latmos/nn/gradcheck.hpp"
#include "latmos/nn/gru.hpp"
#include "latmos/nn/layers.hpp"
#include "latmos/nn/ssm.hpp"
#include "latmos/task_model.hpp"

namespace latmos::harness {

using nn::GradCheckOptions;
using nn::GradCheckResult;

namespace detail {

inline Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform_real(rng, -scale, scale);
  return m;
}

inline void randomize(nn::ParamSet& ps, Rng& rng, double scale = 0.5) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t k = 0; k < ps[i].value.size(); ++k) ps[i].value[k] = uniform_real(rng, -scale, scale);
}

inline void tag(std::vector<GradCheckResult>& rs, const std::string& prefix) {
  for (auto& r : rs) r.name = prefix + ":" + r.name;
}

inline void append(std::vector<GradCheckResult>& out, std::vector<GradCheckResult> rs, const std::string& prefix) {
  tag(rs, prefix);
  out.insert(out.end(), rs.begin(), rs.end());
}

// Weighted-sum readout L = sum(w .* y) so that dL/dy = w.
inline double readout(const Mat& y, const Mat& w) { return (y.array() * w.array()).sum(); }

}  // namespace detail

inline std::vector<GradCheckResult> gradcheck_linear(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(101);
  nn::ParamSet ps;
  nn::Linear lin(ps, "linear", 8, 8, rng);
  detail::randomize(ps, rng);
  Mat x = detail::random_mat(8, 8, rng), w = detail::random_mat(8, 8, rng);
  auto loss = [&] { return detail::readout(lin.forward(x), w); };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, [&] { lin.backward(x, w); }, opt), "linear");
  Mat dx = lin.backward(x, w);
  out.push_back(nn::check_input("linear:input", x.data(), static_cast<std::size_t>(x.size()),
                                Eigen::Map<Vec>(dx.data(), dx.size()), loss, opt));
  return out;
}

inline std::vector<GradCheckResult> gradcheck_layernorm(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(102);
  nn::ParamSet ps;
  nn::LayerNorm ln(ps, "layernorm", 6);
  detail::randomize(ps, rng);
  Mat x = detail::random_mat(6, 5, rng, 2.0), w = detail::random_mat(6, 5, rng);
  auto loss = [&] { return detail::readout(ln.forward(x), w); };
  auto grad = [&] {
    nn::LayerNorm::Cache c;
    ln.forward(x, &c);
    return ln.backward(c, w);
  };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, [&] { grad(); }, opt), "layernorm");
  ps.zero_grad();
  Mat dx = grad();
  out.push_back(nn::check_input("layernorm:input", x.data(), static_cast<std::size_t>(x.size()),
                                Eigen::Map<Vec>(dx.data(), dx.size()), loss, opt));
  return out;
}

// Length-5 backpropagation through time.
inline std::vector<GradCheckResult> gradcheck_gru(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(103);
  nn::ParamSet ps;
  nn::GruCell cell(ps, "gru", 3, 4, rng);
  detail::randomize(ps, rng);
  const int T = 5, B = 2;
  Mat xs = detail::random_mat(3, T * B, rng), h0 = detail::random_mat(4, B, rng), w = detail::random_mat(4, T * B, rng);
  auto loss = [&] {
    Mat h = h0;
    double l = 0;
    for (int t = 0; t < T; ++t) {
      h = cell.step(xs.middleCols(t * B, B), h);
      l += detail::readout(h, w.middleCols(t * B, B));
    }
    return l;
  };
  Mat dxs(3, T * B), dh0;
  auto backward = [&] {
    std::vector<nn::GruCell::StepCache> cache(T);
    Mat h = h0;
    for (int t = 0; t < T; ++t) h = cell.step(xs.middleCols(t * B, B), h, &cache[t]);
    Mat dh = Mat::Zero(4, B), dx;
    for (int t = T - 1; t >= 0; --t) {
      Mat g = w.middleCols(t * B, B) + dh;
      cell.step_backward(cache[t], g, &dx, &dh);
      dxs.middleCols(t * B, B) = dx;
    }
    dh0 = dh;
  };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, backward, opt), "gru");
  ps.zero_grad();
  backward();
  out.push_back(nn::check_input("gru:inputs", xs.data(), static_cast<std::size_t>(xs.size()),
                                Eigen::Map<Vec>(dxs.data(), dxs.size()), loss, opt));
  out.push_back(nn::check_input("gru:h0", h0.data(), static_cast<std::size_t>(h0.size()),
                                Eigen::Map<Vec>(dh0.data(), dh0.size()), loss, opt));
  return out;
}

// T = 4, d = 8, two heads, two weight-shared passes.
inline std::vector<GradCheckResult> gradcheck_attention(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(104);
  nn::ParamSet ps;
  nn::CausalAttentionBlock block(ps, "attention", 8, 8, 2, rng, 2);
  detail::randomize(ps, rng);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name.find("gain") != std::string::npos) ps[i].value.vec().array() += 1.0;
  const int T = 4, B = 2;
  Mat x = detail::random_mat(8, T * B, rng), w = detail::random_mat(8, T * B, rng);
  auto loss = [&] { return detail::readout(block.forward(x, T, B), w); };
  auto grad = [&] {
    nn::CausalAttentionBlock::Cache c;
    block.forward(x, T, B, &c);
    return block.backward(c, w);
  };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, [&] { grad(); }, opt), "attention");
  ps.zero_grad();
  Mat dx = grad();
  out.push_back(nn::check_input("attention:input", x.data(), static_cast<std::size_t>(x.size()),
                                Eigen::Map<Vec>(dx.data(), dx.size()), loss, opt));
  return out;
}

// Two stacked diagonal layers over length-6 sequences.
inline std::vector<GradCheckResult> gradcheck_ssm(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(105);
  nn::ParamSet ps;
  nn::DiagonalSsm l1(ps, "ssm1", 3, 5, rng, true), l2(ps, "ssm2", 5, 5, rng, false);
  detail::randomize(ps, rng);
  const int T = 6, B = 2;
  Mat xs = detail::random_mat(3, T * B, rng), w = detail::random_mat(5, T * B, rng);
  Mat s10 = detail::random_mat(5, B, rng), s20 = detail::random_mat(5, B, rng);
  auto loss = [&] {
    Mat s1 = s10, s2 = s20;
    double l = 0;
    for (int t = 0; t < T; ++t) l += detail::readout(l2.step(l1.step(xs.middleCols(t * B, B), &s1), &s2), w.middleCols(t * B, B));
    return l;
  };
  Mat dxs(3, T * B);
  auto backward = [&] {
    std::vector<nn::DiagonalSsm::StepCache> c1(T), c2(T);
    Mat s1 = s10, s2 = s20;
    for (int t = 0; t < T; ++t) l2.step(l1.step(xs.middleCols(t * B, B), &s1, &c1[t]), &s2, &c2[t]);
    Mat ds1 = Mat::Zero(5, B), ds2 = Mat::Zero(5, B);
    for (int t = T - 1; t >= 0; --t) {
      Mat dy1 = l2.step_backward(c2[t], w.middleCols(t * B, B), &ds2);
      dxs.middleCols(t * B, B) = l1.step_backward(c1[t], dy1, &ds1);
    }
  };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, backward, opt), "ssm");
  ps.zero_grad();
  backward();
  out.push_back(nn::check_input("ssm:inputs", xs.data(), static_cast<std::size_t>(xs.size()),
                                Eigen::Map<Vec>(dxs.data(), dxs.size()), loss, opt));
  return out;
}

inline std::vector<GradCheckResult> gradcheck_conv(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(106);
  nn::ParamSet ps;
  nn::ConvEncoder enc(ps, "conv", 3, 5, 4, 5, 6, rng);
  Mat x = detail::random_mat(enc.input_size(), 3, rng), w = detail::random_mat(6, 3, rng);
  auto loss = [&] { return detail::readout(enc.forward(x), w); };
  auto backward = [&] {
    nn::ConvEncoder::Cache c;
    enc.forward(x, &c);
    enc.backward_params(c, w);
  };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, backward, opt), "conv_encoder");
  return out;
}

// Decoder + softmax + mean cross-entropy.
inline std::vector<GradCheckResult> gradcheck_decoder(const GradCheckOptions& opt = {}) {
  Rng rng = make_rng(107);
  nn::ParamSet ps;
  nn::MlpDecoder dec(ps, "decoder", 6, rng);
  detail::randomize(ps, rng);
  Mat x = detail::random_mat(6, 7, rng, 2.0);
  std::vector<int> labels = {0, 1, 1, 0, 1, 0, 0};
  auto loss = [&] { return nn::softmax_ce_from_probs(dec.forward(x), labels, 1.0, nullptr) / 7.0; };
  auto grad = [&] {
    nn::MlpDecoder::Cache c;
    Mat p = nn::softmax(dec.logits(x, &c));
    Mat dz;
    nn::softmax_ce_from_probs(p, labels, 1.0 / 7.0, &dz);
    return dec.backward(c, dz);
  };
  std::vector<GradCheckResult> out;
  detail::append(out, nn::check_parameters(ps, loss, [&] { grad(); }, opt), "decoder");
  ps.zero_grad();
  Mat dx = grad();
  out.push_back(nn::check_input("decoder:input", x.data(), static_cast<std::size_t>(x.size()),
                                Eigen::Map<Vec>(dx.data(), dx.size()), loss, opt));
  return out;
}

// Cross-entropy on a probability vector, and softmax composed with it.
inline std::vector<GradCheckResult> gradcheck_loss(const GradCheckOptions& opt = {}) {
  Vec p(3);
  p << 0.2, 0.5, 0.3;
  Vec y(3);
  y << 0, 1, 0;
  std::vector<GradCheckResult> out;
  out.push_back(nn::check_input("cross_entropy:pred", p.data(), 3, nn::cross_entropy_grad(p, y),
                                [&] { return nn::cross_entropy(p, y) + 0.0 * p.sum(); }, opt));
  Vec z(3);
  z << 0.3, -1.2, 0.7;
  auto loss = [&] { return nn::cross_entropy(nn::softmax(z).col(0), y); };
  Vec pz = nn::softmax(z).col(0);
  Vec dz = nn::softmax_backward(pz, nn::cross_entropy_grad(pz, y)).col(0);
  out.push_back(nn::check_input("softmax_cross_entropy:logits", z.data(), 3, dz, loss, opt));
  return out;
}

// Total loss of a two-sequence micro dataset (lengths 3 and 5) through the full model.
inline std::vector<GradCheckResult> gradcheck_model(const ModelConfig& cfg, const GradCheckOptions& opt = {}) {
  LatmosModel model(cfg);
  Rng rng = make_rng(derive_seed(108, {static_cast<std::uint64_t>(cfg.backbone)}));
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& p = model.params()[i];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] += uniform_real(rng, -0.3, 0.3);
  }
  std::vector<ObservationSequence> seqs(2);
  const int lens[2] = {3, 5};
  for (int j = 0; j < 2; ++j) {
    seqs[j].steps = detail::random_mat(cfg.obs_dim, lens[j], rng);
    std::vector<std::uint8_t> y(static_cast<std::size_t>(lens[j]));
    for (auto& v : y) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
    seqs[j].labels = y;
  }
  std::vector<Batch> batches = {make_batch({&seqs[0]}), make_batch({&seqs[1]})};
  auto loss = [&] {
    double l = 0;
    for (const auto& b : batches) {
      Mat p = model.forward_batch(b.obs, b.T, b.B);
      l += nn::softmax_ce_from_probs(p, b.labels, 1.0, nullptr) / static_cast<double>(p.cols());
    }
    return l / 2.0;
  };
  auto backward = [&] {
    for (const auto& b : batches) {
      LatmosModel::Cache c;
      Mat p = model.forward_batch(b.obs, b.T, b.B, &c);
      Mat dz;
      nn::softmax_ce_from_probs(p, b.labels, 0.5 / static_cast<double>(p.cols()), &dz);
      model.backward_batch(c, dz);
    }
  };
  std::vector<GradCheckResult> out;
  std::string name = "model_" + to_string(cfg.backbone);
  if (cfg.encoder.conv) name += "_conv";
  detail::append(out, nn::check_parameters(model.params(), loss, backward, opt), name);
  return out;
}

struct GradCheckSuiteResult {
  std::vector<GradCheckResult> checks;
  bool passed() const { return nn::all_passed(checks); }
};

inline GradCheckSuiteResult run_gradcheck_suite(const GradCheckOptions& opt = {}) {
  GradCheckSuiteResult r;
  auto add = [&](std::vector<GradCheckResult> v) { r.checks.insert(r.checks.end(), v.begin(), v.end()); };
  add(gradcheck_linear(opt));
  add(gradcheck_layernorm(opt));
  add(gradcheck_gru(opt));
  add(gradcheck_attention(opt));
  add(gradcheck_ssm(opt));
  add(gradcheck_conv(opt));
  add(gradcheck_decoder(opt));
  add(gradcheck_loss(opt));
  for (auto kind : {BackboneKind::gru, BackboneKind::attention, BackboneKind::ssm}) {
    ModelConfig cfg;
    cfg.obs_dim = 4;
    cfg.backbone = kind;
    cfg.hidden_dim = 6;
    cfg.seed = 3;
    add(gradcheck_model(cfg, opt));
  }
  ModelConfig v;
  v.obs_dim = 2 * 4 * 4;
  v.backbone = BackboneKind::gru;
  v.hidden_dim = 5;
  v.encoder.frozen = true;
  v.encoder.frozen_dim = 3;
  v.encoder.conv = true;
  v.encoder.grid_channels = 2;
  v.encoder.grid_height = 4;
  v.encoder.grid_width = 4;
  v.encoder.conv_channels = 5;
  v.encoder.conv_dim = 4;
  v.seed = 4;
  add(gradcheck_model(v, opt));
  return r;
}

}  // namespace latmos::harness
