#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latmos/nn/layers.hpp"
#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

// Largest divisor of d that does not exceed the requested head count.
inline int effective_heads(int d, int requested) {
  require(d >= 1 && requested >= 1, "effective_heads: arguments must be positive");
  for (int h = std::min(d, requested); h > 1; --h)
    if (d % h == 0) return h;
  return 1;
}

inline Vec sinusoidal_position(int pos, int d) {
  Vec pe(d);
  for (int i = 0; i < d; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
    pe[i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
  }
  return pe;
}

inline int ffn_width(int d) { return std::max(1, static_cast<int>(std::lround(d / 4.0))); }

// Post-norm transformer layer with a strict causal mask, applied `depth` times
// with shared weights after one input projection:
//   u0 = Win x + PE, a = MHA(u), v = LN1(u + a), u' = LN2(v + W2 lrelu(W1 v)).
// Columns of a batch are time-major: column t * B + b is step t of sequence b.
struct CausalAttentionBlock {
  Linear input;
  Linear qkv;  // stacks Q, K, V (3d x d), no output projection
  LayerNorm ln1;
  Linear ffn1;
  Linear ffn2;
  LayerNorm ln2;
  int in = 0;
  int dim = 0;
  int heads = 1;
  int depth = 1;

  struct PassCache {
    Mat u, qkv, attn;
    std::vector<std::vector<Mat>> probs;  // [b][head] T x T, column q holds weights over keys
    LayerNorm::Cache ln1c, ln2c;
    Mat v, f_pre, f_act;
  };

  struct Cache {
    int T = 0, B = 0;
    Mat x;
    std::vector<PassCache> passes;
  };

  // Incremental decoding state: cached keys and values of all consumed
  // positions, one dim-row slab per pass.
  struct State {
    Mat keys;    // (depth * d) x t
    Mat values;  // (depth * d) x t
    int position = 0;
  };

  CausalAttentionBlock() = default;
  CausalAttentionBlock(ParamSet& ps, const std::string& name, int in_dim, int d, int requested_heads, Rng& rng,
                       int passes = 1)
      : input(ps, name + ".in", in_dim, d, rng),
        qkv(ps, name + ".qkv", d, 3 * d, rng),
        ln1(ps, name + ".ln1", d),
        ffn1(ps, name + ".ffn1", d, ffn_width(d), rng),
        ffn2(ps, name + ".ffn2", ffn_width(d), d, rng),
        ln2(ps, name + ".ln2", d),
        in(in_dim),
        dim(d),
        heads(effective_heads(d, requested_heads)),
        depth(passes) {
    require(d % heads == 0, "CausalAttentionBlock: d not divisible by heads");
    require(passes >= 1, "CausalAttentionBlock: depth must be positive");
  }

  int head_dim() const { return dim / heads; }

  Mat forward(const Mat& x, int T, int B, Cache* cache = nullptr) const {
    require(x.rows() == in && x.cols() == static_cast<Eigen::Index>(T) * B, "CausalAttentionBlock: shape mismatch");
    Mat u = input.forward(x);
    for (int t = 0; t < T; ++t) u.middleCols(static_cast<Eigen::Index>(t) * B, B).colwise() += sinusoidal_position(t, dim);
    if (cache) {
      cache->T = T;
      cache->B = B;
      cache->x = x;
      cache->passes.assign(static_cast<std::size_t>(depth), PassCache{});
    }
    for (int p = 0; p < depth; ++p) u = layer_forward(u, T, B, cache ? &cache->passes[p] : nullptr);
    return u;
  }

  Mat backward(const Cache& c, const Mat& dout) const {
    Mat du = dout;
    for (int p = depth - 1; p >= 0; --p) du = layer_backward(c.passes[p], c.T, c.B, du);
    return input.backward(c.x, du);
  }

  State initial_state() const { return State{Mat(depth * dim, 0), Mat(depth * dim, 0), 0}; }

  // Consumes one input column and returns the block output at that position.
  Vec step(const Vec& x, State* s) const {
    require(x.size() == in, "CausalAttentionBlock::step: input dimension mismatch");
    Mat u = input.forward(x);
    u.col(0) += sinusoidal_position(s->position, dim);
    const Eigen::Index t = s->keys.cols();
    s->keys.conservativeResize(depth * dim, t + 1);
    s->values.conservativeResize(depth * dim, t + 1);
    const int hd = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int p = 0; p < depth; ++p) {
      Mat q = qkv.forward(u);
      auto keys = s->keys.middleRows(p * dim, dim);
      auto values = s->values.middleRows(p * dim, dim);
      keys.col(t) = q.col(0).segment(dim, dim);
      values.col(t) = q.col(0).segment(2 * dim, dim);
      Mat attn(dim, 1);
      for (int h = 0; h < heads; ++h) {
        Vec S = (keys.middleRows(h * hd, hd).transpose() * q.col(0).segment(h * hd, hd)) * scale;
        const double m = S.maxCoeff();
        Vec P = (S.array() - m).exp();
        P /= P.sum();
        attn.col(0).segment(h * hd, hd) = values.middleRows(h * hd, hd) * P;
      }
      Mat v = ln1.forward(u + attn);
      u = ln2.forward(v + ffn2.forward(leaky_relu(ffn1.forward(v))));
    }
    ++s->position;
    return u.col(0);
  }

 private:
  Mat layer_forward(const Mat& u, int T, int B, PassCache* cache) const {
    Mat q = qkv.forward(u);
    Mat attn(dim, u.cols());
    std::vector<std::vector<Mat>> probs(cache ? B : 0);
    const int hd = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Mat Qb(dim, T), Kb(dim, T), Vb(dim, T);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < T; ++t) {
        const Eigen::Index col = static_cast<Eigen::Index>(t) * B + b;
        Qb.col(t) = q.col(col).segment(0, dim);
        Kb.col(t) = q.col(col).segment(dim, dim);
        Vb.col(t) = q.col(col).segment(2 * dim, dim);
      }
      if (cache) probs[b].resize(heads);
      for (int h = 0; h < heads; ++h) {
        Mat S = (Kb.middleRows(h * hd, hd).transpose() * Qb.middleRows(h * hd, hd)) * scale;  // keys x queries
        Mat P = Mat::Zero(T, T);
        for (int j = 0; j < T; ++j) {
          const double m = S.col(j).head(j + 1).maxCoeff();
          P.col(j).head(j + 1) = (S.col(j).head(j + 1).array() - m).exp();
          P.col(j).head(j + 1) /= P.col(j).head(j + 1).sum();
        }
        Mat A = Vb.middleRows(h * hd, hd) * P;
        for (int t = 0; t < T; ++t) attn.col(static_cast<Eigen::Index>(t) * B + b).segment(h * hd, hd) = A.col(t);
        if (cache) probs[b][h] = std::move(P);
      }
    }
    LayerNorm::Cache c1, c2;
    Mat v = ln1.forward(u + attn, cache ? &c1 : nullptr);
    Mat f_pre = ffn1.forward(v);
    Mat f_act = leaky_relu(f_pre);
    Mat out = ln2.forward(v + ffn2.forward(f_act), cache ? &c2 : nullptr);
    if (cache) {
      cache->u = u;
      cache->qkv = std::move(q);
      cache->attn = std::move(attn);
      cache->probs = std::move(probs);
      cache->ln1c = std::move(c1);
      cache->ln2c = std::move(c2);
      cache->v = std::move(v);
      cache->f_pre = std::move(f_pre);
      cache->f_act = std::move(f_act);
    }
    return out;
  }

  // Accumulates the shared-weight gradients of one pass; returns dL/du.
  Mat layer_backward(const PassCache& c, int T, int B, const Mat& dout) const {
    const int hd = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Mat dr2 = ln2.backward(c.ln2c, dout);
    Mat dv = dr2;
    Mat dact = ffn2.backward(c.f_act, dr2);
    dv += ffn1.backward(c.v, leaky_relu_backward(c.f_pre, dact));
    Mat dr1 = ln1.backward(c.ln1c, dv);
    Mat du = dr1;  // residual path
    const Mat& dattn = dr1;
    Mat dq(3 * dim, c.qkv.cols());
    Mat Qb(dim, T), Kb(dim, T), Vb(dim, T), dA(hd, T);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < T; ++t) {
        const Eigen::Index col = static_cast<Eigen::Index>(t) * B + b;
        Qb.col(t) = c.qkv.col(col).segment(0, dim);
        Kb.col(t) = c.qkv.col(col).segment(dim, dim);
        Vb.col(t) = c.qkv.col(col).segment(2 * dim, dim);
      }
      for (int h = 0; h < heads; ++h) {
        const Mat& P = c.probs[b][h];
        for (int t = 0; t < T; ++t) dA.col(t) = dattn.col(static_cast<Eigen::Index>(t) * B + b).segment(h * hd, hd);
        Mat dV = dA * P.transpose();
        Mat dP = Vb.middleRows(h * hd, hd).transpose() * dA;
        Eigen::RowVectorXd dot = (P.array() * dP.array()).colwise().sum();
        Mat dS = P.array() * (dP.array().rowwise() - dot.array());  // masked entries have P = 0
        Mat dQ = Kb.middleRows(h * hd, hd) * dS * scale;
        Mat dK = Qb.middleRows(h * hd, hd) * dS.transpose() * scale;
        for (int t = 0; t < T; ++t) {
          const Eigen::Index col = static_cast<Eigen::Index>(t) * B + b;
          dq.col(col).segment(h * hd, hd) = dQ.col(t);
          dq.col(col).segment(dim + h * hd, hd) = dK.col(t);
          dq.col(col).segment(2 * dim + h * hd, hd) = dV.col(t);
        }
      }
    }
    du += qkv.backward(c.u, dq);
    return du;
  }
};

}  // namespace latmos::nn
