#include <gtest/gtest.h>

#include <cmath>

#include "latmos/harness/gradcheck_suite.hpp"
#include "latmos/nn/adam.hpp"
#include "latmos/nn/attention.hpp"
#include "latmos/nn/checkpoint.hpp"
#include "latmos/nn/conv.hpp"
#include "latmos/nn/gru.hpp"
#include "latmos/nn/layers.hpp"
#include "latmos/nn/ssm.hpp"

using namespace latmos;
using namespace latmos::nn;

namespace {

void expect_all_pass(const std::vector<GradCheckResult>& rs) {
  ASSERT_FALSE(rs.empty());
  for (const auto& r : rs) EXPECT_TRUE(r.passed) << r.name << " rel_error=" << r.rel_error;
}

}  // namespace

TEST(Tensor, ShapesAndViews) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  t.mat()(1, 2) = 5.0;
  EXPECT_EQ(t[5], 5.0);  // row-major
  Tensor v({4});
  EXPECT_EQ(v.rows(), 4);
  EXPECT_EQ(v.cols(), 1);
  Tensor k({5, 2, 3, 3});
  EXPECT_EQ(k.rows(), 5);
  EXPECT_EQ(k.cols(), 18);
}

TEST(ParamSet, UniqueNamesAndMirroredGradients) {
  ParamSet ps;
  Rng rng = make_rng(1);
  Linear lin(ps, "a", 3, 2, rng);
  EXPECT_THROW(ps.add("a.W", {1}), ContractViolation);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i].grad.shape(), ps[i].value.shape());
  EXPECT_EQ(ps.count(), 8u);
}

TEST(Linear, IdentityAndBias) {
  ParamSet ps;
  Rng rng = make_rng(2);
  Linear lin(ps, "l", 3, 3, rng);
  lin.W->value.mat().setIdentity();
  Mat x = Mat::Random(3, 4);
  EXPECT_TRUE(lin.forward(x).isApprox(x));
  lin.b->value.vec() << 1, 2, 3;
  Mat y = lin.forward(Mat::Zero(3, 1));
  EXPECT_EQ(y(0, 0), 1);
  EXPECT_EQ(y(2, 0), 3);
  EXPECT_THROW(lin.forward(Mat::Zero(2, 1)), ContractViolation);
}

TEST(Gru, ZeroWeightsHalveState) {
  ParamSet ps;
  Rng rng = make_rng(3);
  GruCell cell(ps, "g", 2, 3, rng);
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value.zero();
  Mat h(3, 1);
  h << 0.4, -1.0, 2.0;
  EXPECT_TRUE(cell.step(Mat::Random(2, 1), h).isApprox(h / 2));
}

TEST(Gru, SaturatedUpdateGateGivesCandidate) {
  ParamSet ps;
  Rng rng = make_rng(4);
  GruCell cell(ps, "g", 2, 3, rng);
  cell.b->value.vec().head(3).setConstant(50.0);  // z = sigmoid(50) ~ 1
  Mat x = Mat::Random(2, 1), h = Mat::Random(3, 1);
  GruCell::StepCache c;
  Mat out = cell.step(x, h, &c);
  EXPECT_LT((out - c.c).norm(), 1e-12);
}

TEST(Attention, SinglePositionAttendsToItself) {
  ParamSet ps;
  Rng rng = make_rng(5);
  CausalAttentionBlock block(ps, "a", 4, 8, 2, rng);
  CausalAttentionBlock::Cache c;
  block.forward(Mat::Random(4, 3), 1, 3, &c);
  for (const auto& per_seq : c.passes[0].probs)
    for (const auto& P : per_seq) EXPECT_DOUBLE_EQ(P(0, 0), 1.0);
}

TEST(Attention, CausalityIsExact) {
  ParamSet ps;
  Rng rng = make_rng(6);
  CausalAttentionBlock block(ps, "a", 4, 8, 2, rng, 2);
  const int T = 6;
  Mat x = Mat::Random(4, T);
  Mat y = block.forward(x, T, 1);
  for (int t = 0; t + 1 < T; ++t) {
    Mat x2 = x;
    x2.col(t + 1).setRandom();
    Mat y2 = block.forward(x2, T, 1);
    for (int s = 0; s <= t; ++s) EXPECT_EQ(y2.col(s), y.col(s)) << "position " << s << " saw input " << t + 1;
  }
}

TEST(Attention, IncrementalMatchesBatched) {
  ParamSet ps;
  Rng rng = make_rng(7);
  CausalAttentionBlock block(ps, "a", 3, 6, 2, rng, 3);
  const int T = 5;
  Mat x = Mat::Random(3, T);
  Mat y = block.forward(x, T, 1);
  auto st = block.initial_state();
  for (int t = 0; t < T; ++t) EXPECT_LT((block.step(x.col(t), &st) - y.col(t)).norm(), 1e-10);
}

TEST(Attention, HeadFallback) {
  EXPECT_EQ(effective_heads(8, 2), 2);
  EXPECT_EQ(effective_heads(3, 2), 1);
  EXPECT_EQ(effective_heads(9, 4), 3);
  EXPECT_EQ(ffn_width(2), 1);
  EXPECT_EQ(ffn_width(48), 12);
}

TEST(Ssm, ZeroDecayIsMemoryless) {
  ParamSet ps;
  Rng rng = make_rng(8);
  DiagonalSsm l(ps, "s", 2, 3, rng, false);
  l.a_raw->value.zero();
  Mat x = Mat::Random(2, 1);
  Mat s1 = Mat::Random(3, 1), s2 = Mat::Random(3, 1);
  EXPECT_TRUE(l.step(x, &s1).isApprox(l.step(x, &s2)));
  Mat expected = add_bias(l.Wo->value.mat() * Mat(add_bias(l.B->value.mat() * x, l.b->value).array().tanh()), l.bo->value);
  Mat s3 = Mat::Zero(3, 1);
  EXPECT_TRUE(l.step(x, &s3).isApprox(expected));
}

TEST(Ssm, UnitDecayWithoutInputKeepsState) {
  ParamSet ps;
  Rng rng = make_rng(9);
  DiagonalSsm l(ps, "s", 2, 3, rng, false);
  l.a_raw->value.vec().setConstant(20.0);  // tanh(20) == 1 in double precision
  l.B->value.zero();
  Mat s = Mat::Random(3, 1);
  const Mat s0 = s;
  Mat y0 = l.step(Mat::Random(2, 1), &s);
  for (int t = 0; t < 10; ++t) EXPECT_TRUE(l.step(Mat::Random(2, 1), &s).isApprox(y0));
  EXPECT_TRUE(s.isApprox(s0));
  EXPECT_LT(l.decay().maxCoeff(), 1.0 + 1e-15);
}

TEST(Decoder, OutputsAreDistributions) {
  ParamSet ps;
  Rng rng = make_rng(10);
  MlpDecoder dec(ps, "d", 7, rng);
  EXPECT_EQ(dec.hidden.out, 5);  // round((7 + 2) / 2)
  Mat p = dec.forward(Mat::Random(7, 20) * 10);
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-9);
    EXPECT_GT(p.col(j).minCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(p(0, j), 0.5);  // zero-initialised output layer
  }
  harness::detail::randomize(ps, rng);
  Mat q = dec.forward(Mat::Random(7, 20) * 10);
  for (Eigen::Index j = 0; j < q.cols(); ++j) EXPECT_NEAR(q.col(j).sum(), 1.0, 1e-9);
}

TEST(CrossEntropy, ClosedForms) {
  Vec y(2);
  y << 0, 1;
  EXPECT_NEAR(cross_entropy(y, y), 0.0, 1e-15);
  Vec u(2);
  u << 0.5, 0.5;
  EXPECT_NEAR(cross_entropy(u, y), std::log(2.0), 1e-15);
  Vec zero(2);
  zero << 1.0, 0.0;
  EXPECT_NEAR(cross_entropy(zero, y), -std::log(kProbClamp), 1e-9);
  EXPECT_GE(cross_entropy(zero, y), 0.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamSet ps;
  auto& p = ps.add("x", {3});
  p.value.vec() << 1, 2, 3;
  Adam opt(ps);
  const Tensor before = p.value;
  EXPECT_TRUE(opt.step());
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  ParamSet ps;
  auto& p = ps.add("x", {2});
  Adam opt(ps, AdamConfig{0.01, 0.9, 0.999, 1e-8});
  p.grad.vec() << 3.0, -0.2;
  opt.step();
  EXPECT_NEAR(p.value[0], -0.01, 1e-8);
  EXPECT_NEAR(p.value[1], 0.01, 1e-7);
  EXPECT_EQ(p.grad.vec().norm(), 0.0);
}

TEST(Adam, NonFiniteGradientAbortsStep) {
  ParamSet ps;
  auto& p = ps.add("x", {2});
  Adam opt(ps);
  p.grad.vec() << 1.0, std::nan("");
  EXPECT_FALSE(opt.step());
  EXPECT_EQ(p.value.vec().norm(), 0.0);
  EXPECT_EQ(opt.step_count(), 0);
  EXPECT_EQ(opt.rejected_steps(), 1);
}

TEST(Adam, QuadraticBowlConverges) {
  ParamSet ps;
  auto& p = ps.add("x", {3});
  p.value.vec() << 1.0, -2.0, 0.5;
  Adam opt(ps, AdamConfig{1e-2, 0.9, 0.999, 1e-8});
  int steps = 0;
  while (p.value.vec().norm() > 1e-6 && steps < 2000) {
    p.grad.vec() = 2.0 * p.value.vec();  // f = |x|^2
    opt.step();
    ++steps;
  }
  EXPECT_LE(p.value.vec().cwiseAbs().maxCoeff(), 1e-6) << "after " << steps << " steps";
}

TEST(Conv, ZeroWeightsGiveConstantEmbedding) {
  ParamSet ps;
  Rng rng = make_rng(11);
  ConvEncoder enc(ps, "c", 2, 4, 4, 5, 3, rng);
  enc.conv.W->value.zero();
  Mat a = enc.forward(Mat::Random(32, 1)), b = enc.forward(Mat::Random(32, 1));
  EXPECT_TRUE(a.isApprox(b));
}

TEST(Conv, SamePaddingMatchesDirectConvolution) {
  ParamSet ps;
  Rng rng = make_rng(12);
  Conv2d conv(ps, "c", 2, 3, 4, 5, 3, rng);
  Mat x = Mat::Random(2 * 4 * 5, 1);
  Mat y = conv.forward(x);
  auto W = conv.W->value.mat();
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) {
        double acc = conv.b->value[o];
        for (int c = 0; c < 2; ++c)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int si = i + di, sj = j + dj;
              if (si < 0 || si >= 4 || sj < 0 || sj >= 5) continue;
              acc += W(o, (c * 3 + di + 1) * 3 + dj + 1) * x(c * 20 + si * 5 + sj, 0);
            }
        EXPECT_NEAR(y(o * 20 + i * 5 + j, 0), acc, 1e-12);
      }
}

TEST(GradCheck, LayersMatchFiniteDifferences) {
  expect_all_pass(harness::gradcheck_linear());
  expect_all_pass(harness::gradcheck_layernorm());
  expect_all_pass(harness::gradcheck_gru());
  expect_all_pass(harness::gradcheck_attention());
  expect_all_pass(harness::gradcheck_ssm());
  expect_all_pass(harness::gradcheck_conv());
  expect_all_pass(harness::gradcheck_decoder());
  expect_all_pass(harness::gradcheck_loss());
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamSet ps;
  auto& p = ps.add("x", {2});
  p.value.vec() << 1.0, 2.0;
  auto rs = check_parameters(
      ps, [&] { return p.value.vec().squaredNorm(); }, [&] { p.grad.vec() = 3.0 * p.value.vec(); });
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_FALSE(rs[0].passed);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  ParamSet a;
  Rng rng = make_rng(13);
  Linear l1(a, "l", 3, 2, rng);
  std::string bytes = encode_checkpoint(a, {{"kind", "test"}});
  EXPECT_EQ(checkpoint_config(bytes)["kind"], "test");
  ParamSet b;
  Linear l2(b, "l", 3, 2, rng);
  decode_checkpoint_into(bytes, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].value, b[i].value);
  ParamSet c;
  Linear l3(c, "l", 4, 2, rng);
  EXPECT_THROW(decode_checkpoint_into(bytes, c), CheckpointMismatch);
  EXPECT_THROW(decode_checkpoint_into(bytes.substr(0, bytes.size() - 3), b), ParseError);
}
