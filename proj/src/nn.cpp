#include "vmfcil/nn.hpp"

#include <cmath>

#include "vmfcil/errors.hpp"

namespace vmfcil {

namespace {

using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

void im2col(const double* in, int c, int h, int w, Mat& cols) {
  cols.resize(static_cast<Eigen::Index>(c) * 9, static_cast<Eigen::Index>(h) * w);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = ci * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            cols(row, y * w + x) = (sy < 0 || sy >= h || sx < 0 || sx >= w) ? 0.0 : in[(ci * h + sy) * w + sx];
          }
        }
      }
}

void col2im(const Mat& cols, int c, int h, int w, double* out) {
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index row = ci * 9 + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            out[(ci * h + sy) * w + sx] += cols(row, y * w + x);
          }
        }
      }
}

Tensor4 avg_pool(const Tensor4& in) {
  Tensor4 out(in.n, in.c, in.h / 2, in.w / 2);
  for (int i = 0; i < in.n; ++i) {
    const double* src = in.sample(i);
    double* dst = out.sample(i);
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          const double* p = src + (static_cast<std::size_t>(c) * in.h + 2 * y) * in.w + 2 * x;
          dst[(static_cast<std::size_t>(c) * out.h + y) * out.w + x] = 0.25 * (p[0] + p[1] + p[in.w] + p[in.w + 1]);
        }
  }
  return out;
}

Tensor4 avg_pool_backward(const Tensor4& grad_out, int h, int w) {
  Tensor4 grad_in(grad_out.n, grad_out.c, h, w);
  for (int i = 0; i < grad_out.n; ++i) {
    const double* g = grad_out.sample(i);
    double* dst = grad_in.sample(i);
    for (int c = 0; c < grad_out.c; ++c)
      for (int y = 0; y < grad_out.h; ++y)
        for (int x = 0; x < grad_out.w; ++x) {
          const double v = 0.25 * g[(static_cast<std::size_t>(c) * grad_out.h + y) * grad_out.w + x];
          double* p = dst + (static_cast<std::size_t>(c) * h + 2 * y) * w + 2 * x;
          p[0] += v;
          p[1] += v;
          p[w] += v;
          p[w + 1] += v;
        }
  }
  return grad_in;
}

}  // namespace

Tensor4 images_to_tensor(std::span<const Image> images) {
  if (images.empty()) return {};
  const Image& first = images.front();
  Tensor4 t(static_cast<int>(images.size()), first.channels, first.height, first.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    if (img.height != first.height || img.width != first.width || img.channels != first.channels)
      throw PreconditionError("images in a batch must share one shape");
    double* dst = t.sample(static_cast<int>(i));
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < img.channels; ++c)
          dst[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] = img.at(y, x, c);
  }
  return t;
}

ConvExtractor::ConvExtractor(const ExtractorConfig& config, Rng& rng) : config_(config) {
  if (config.widths.size() != 3 || config.feature_dim <= 0 || config.in_channels <= 0)
    throw ConfigError("extractor needs three conv widths and a positive feature_dim");
  std::normal_distribution<double> normal(0.0, 1.0);
  int in = config.in_channels;
  for (std::size_t l = 0; l < config.widths.size(); ++l) {
    const int out = config.widths[l];
    Param w("conv" + std::to_string(l) + ".weight", out, in * 9);
    const double std = std::sqrt(2.0 / (in * 9));
    for (Eigen::Index k = 0; k < w.value.size(); ++k) w.value[k] = std * normal(rng);
    conv_weights_.push_back(std::move(w));
    conv_biases_.emplace_back("conv" + std::to_string(l) + ".bias", out, 1, false);
    in = out;
  }
  fc_weight_ = Param("fc.weight", config.feature_dim, in);
  const double std = std::sqrt(1.0 / in);
  for (Eigen::Index k = 0; k < fc_weight_.value.size(); ++k) fc_weight_.value[k] = std * normal(rng);
  fc_bias_ = Param("fc.bias", config.feature_dim, 1, false);
}

Mat ConvExtractor::forward(const Tensor4& input, Cache* cache) const {
  if (input.c != config_.in_channels) throw PreconditionError("extractor input channel mismatch");
  if (input.h < 8 || input.w < 8) throw PreconditionError("extractor input must be at least 8x8");
  if (cache) {
    cache->conv_in.clear();
    cache->conv_out.clear();
  }
  Tensor4 x = input;
  Mat cols;
  Mat pooled;
  for (std::size_t l = 0; l < conv_weights_.size(); ++l) {
    const Param& wp = conv_weights_[l];
    const Param& bp = conv_biases_[l];
    Tensor4 a(x.n, wp.rows, x.h, x.w);
    const Eigen::Index hw = static_cast<Eigen::Index>(x.h) * x.w;
    for (int i = 0; i < x.n; ++i) {
      im2col(x.sample(i), x.c, x.h, x.w, cols);
      MutMap out(a.sample(i), wp.rows, hw);
      out.noalias() = wp.mat() * cols;
      out.colwise() += bp.value;
      out = out.cwiseMax(0.0);
    }
    if (cache) cache->conv_in.push_back(x);
    if (l + 1 < conv_weights_.size()) {
      x = avg_pool(a);
      if (cache) cache->conv_out.push_back(std::move(a));
    } else {
      pooled.resize(a.n, a.c);
      for (int i = 0; i < a.n; ++i) pooled.row(i) = ConstMap(a.sample(i), a.c, hw).rowwise().mean().transpose();
      if (cache) cache->conv_out.push_back(std::move(a));
    }
  }
  Mat features = pooled * fc_weight_.mat().transpose();
  features.rowwise() += fc_bias_.value.transpose();
  if (cache) cache->pooled = pooled;
  return features;
}

void ConvExtractor::backward(const Cache& cache, const Mat& grad_features) {
  fc_weight_.grad_mat() += grad_features.transpose() * cache.pooled;
  fc_bias_.grad += grad_features.colwise().sum().transpose();
  const Mat d_pooled = grad_features * fc_weight_.mat();

  const std::size_t layers = conv_weights_.size();
  const Tensor4& last = cache.conv_out[layers - 1];
  Tensor4 grad_a(last.n, last.c, last.h, last.w);
  const double inv_hw = 1.0 / (static_cast<double>(last.h) * last.w);
  for (int i = 0; i < last.n; ++i) {
    double* g = grad_a.sample(i);
    for (int c = 0; c < last.c; ++c)
      for (int p = 0; p < last.h * last.w; ++p) g[c * last.h * last.w + p] = d_pooled(i, c) * inv_hw;
  }

  Mat cols;
  for (std::size_t l = layers; l-- > 0;) {
    const Tensor4& out = cache.conv_out[l];
    const Tensor4& in = cache.conv_in[l];
    for (std::size_t k = 0; k < grad_a.data.size(); ++k)
      if (out.data[k] <= 0.0) grad_a.data[k] = 0.0;
    Param& wp = conv_weights_[l];
    Param& bp = conv_biases_[l];
    const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;
    Tensor4 grad_in(in.n, in.c, in.h, in.w);
    for (int i = 0; i < in.n; ++i) {
      ConstMap g(grad_a.sample(i), wp.rows, hw);
      im2col(in.sample(i), in.c, in.h, in.w, cols);
      wp.grad_mat().noalias() += g * cols.transpose();
      bp.grad += g.rowwise().sum();
      if (l > 0) {
        const Mat dcols = wp.mat().transpose() * g;
        col2im(dcols, in.c, in.h, in.w, grad_in.sample(i));
      }
    }
    if (l > 0) {
      const Tensor4& prev = cache.conv_out[l - 1];
      grad_a = avg_pool_backward(grad_in, prev.h, prev.w);
    }
  }
}

std::vector<Param*> ConvExtractor::params() {
  std::vector<Param*> out;
  for (std::size_t l = 0; l < conv_weights_.size(); ++l) {
    out.push_back(&conv_weights_[l]);
    out.push_back(&conv_biases_[l]);
  }
  out.push_back(&fc_weight_);
  out.push_back(&fc_bias_);
  return out;
}

std::vector<const Param*> ConvExtractor::params() const {
  std::vector<const Param*> out;
  for (std::size_t l = 0; l < conv_weights_.size(); ++l) {
    out.push_back(&conv_weights_[l]);
    out.push_back(&conv_biases_[l]);
  }
  out.push_back(&fc_weight_);
  out.push_back(&fc_bias_);
  return out;
}

std::uint64_t ConvExtractor::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const Param* p : params()) h = p->checksum(h);
  return h;
}

}  // namespace vmfcil
