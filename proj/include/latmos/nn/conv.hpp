#pragma once

#include <string>

#include "latmos/nn/layers.hpp"
#include "latmos/nn/tensor.hpp"

namespace latmos::nn {

// 2-D convolution with odd square kernel and zero "same" padding via im2col.
// Inputs are columns holding a channel-major C x H x W grid.
struct Conv2d {
  Param* W = nullptr;  // out x in x k x k
  Param* b = nullptr;  // out
  int in_channels = 0, out_channels = 0, height = 0, width = 0, kernel = 3;

  Conv2d() = default;
  Conv2d(ParamSet& ps, const std::string& name, int in_ch, int out_ch, int h, int w, int k, Rng& rng)
      : in_channels(in_ch), out_channels(out_ch), height(h), width(w), kernel(k) {
    require(in_ch >= 1 && out_ch >= 1 && h >= 1 && w >= 1 && k >= 1 && k % 2 == 1, "Conv2d: invalid shape");
    W = &ps.add(name + ".W", {out_ch, in_ch, k, k});
    b = &ps.add(name + ".b", {out_ch});
    glorot_uniform(*W, in_ch * k * k, out_ch * k * k, rng);
  }

  int input_size() const { return in_channels * height * width; }
  int output_size() const { return out_channels * height * width; }

  // (C k k) x (H W B) patch matrix; column b * HW + p.
  Mat im2col(const Mat& x) const {
    require(x.rows() == input_size(), "Conv2d: input size mismatch");
    const int HW = height * width, r = kernel / 2;
    Mat cols = Mat::Zero(static_cast<Eigen::Index>(in_channels) * kernel * kernel, HW * x.cols());
    for (Eigen::Index bi = 0; bi < x.cols(); ++bi)
      for (int c = 0; c < in_channels; ++c)
        for (int dy = 0; dy < kernel; ++dy)
          for (int dx = 0; dx < kernel; ++dx) {
            const Eigen::Index row = (static_cast<Eigen::Index>(c) * kernel + dy) * kernel + dx;
            for (int y = 0; y < height; ++y) {
              const int sy = y + dy - r;
              if (sy < 0 || sy >= height) continue;
              for (int xx = 0; xx < width; ++xx) {
                const int sx = xx + dx - r;
                if (sx < 0 || sx >= width) continue;
                cols(row, bi * HW + y * width + xx) = x(c * HW + sy * width + sx, bi);
              }
            }
          }
    return cols;
  }

  // Returns (out * H * W) x B.
  Mat forward(const Mat& x, Mat* cols_cache = nullptr) const {
    Mat cols = im2col(x);
    Mat y = add_bias(W->value.mat() * cols, b->value);
    const int HW = height * width;
    Mat out(output_size(), x.cols());
    for (Eigen::Index bi = 0; bi < x.cols(); ++bi)
      for (int o = 0; o < out_channels; ++o) out.col(bi).segment(o * HW, HW) = y.row(o).segment(bi * HW, HW).transpose();
    if (cols_cache) *cols_cache = std::move(cols);
    return out;
  }

  void backward_params(const Mat& cols, const Mat& dout) const {
    if (!W->trainable) return;
    const int HW = height * width;
    Mat dy(out_channels, dout.cols() * HW);
    for (Eigen::Index bi = 0; bi < dout.cols(); ++bi)
      for (int o = 0; o < out_channels; ++o) dy.row(o).segment(bi * HW, HW) = dout.col(bi).segment(o * HW, HW).transpose();
    W->grad.mat().noalias() += dy * cols.transpose();
    b->grad.vec() += dy.rowwise().sum();
  }
};

// Task-specific grid encoder: conv -> leaky ReLU -> flatten -> linear -> tanh.
struct ConvEncoder {
  Conv2d conv;
  Linear proj;

  struct Cache {
    Mat cols, pre, act, out;
  };

  ConvEncoder() = default;
  ConvEncoder(ParamSet& ps, const std::string& name, int channels, int h, int w, int out_channels, int embed_dim,
              Rng& rng)
      : conv(ps, name + ".conv", channels, out_channels, h, w, 3, rng),
        proj(ps, name + ".proj", out_channels * h * w, embed_dim, rng) {}

  int input_size() const { return conv.input_size(); }
  int output_size() const { return proj.out; }

  Mat forward(const Mat& x, Cache* cache = nullptr) const {
    Mat cols;
    Mat pre = conv.forward(x, &cols);
    Mat act = leaky_relu(pre);
    Mat out = proj.forward(act).array().tanh();
    if (cache) *cache = Cache{std::move(cols), std::move(pre), std::move(act), out};
    return out;
  }

  void backward_params(const Cache& c, const Mat& dout) const {
    Mat dz = dout.cwiseProduct((1.0 - c.out.array().square()).matrix());
    Mat dact = proj.backward(c.act, dz);
    conv.backward_params(c.cols, leaky_relu_backward(c.pre, dact));
  }
};

}  // namespace latmos::nn
