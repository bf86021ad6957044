#ifndef VMFCIL_NN_HPP_
#define VMFCIL_NN_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vmfcil/types.hpp"

namespace vmfcil {

/// A trainable tensor stored flat, with its gradient and SGD momentum buffer.
struct Param {
  std::string name;
  int rows = 0;
  int cols = 0;
  Vec value;
  Vec grad;
  Vec velocity;
  bool decay = true;

  Param() = default;
  Param(std::string n, int r, int c, bool wd = true)
      : name(std::move(n)), rows(r), cols(c), value(Vec::Zero(r * c)), grad(Vec::Zero(r * c)),
        velocity(Vec::Zero(r * c)), decay(wd) {}

  Eigen::Map<Mat> mat() { return {value.data(), rows, cols}; }
  Eigen::Map<const Mat> mat() const { return {value.data(), rows, cols}; }
  Eigen::Map<Mat> grad_mat() { return {grad.data(), rows, cols}; }
  void zero_grad() { grad.setZero(); }
  std::uint64_t checksum(std::uint64_t h = 1469598103934665603ull) const {
    return fnv1a(value.data(), static_cast<std::size_t>(value.size()) * sizeof(double), h);
  }
};

/// Dense NCHW activation block.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}
  double* sample(int i) { return data.data() + static_cast<std::size_t>(i) * c * h * w; }
  const double* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * c * h * w; }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
};

Tensor4 images_to_tensor(std::span<const Image> images);

/// Shape of the per-task feature extractor: three 3x3 conv blocks (ReLU,
/// 2x2 average pooling after the first two), global average pooling, then a
/// linear map to `feature_dim`.
struct ExtractorConfig {
  int in_channels = 3;
  std::vector<int> widths{8, 16, 32};
  int feature_dim = 32;

  bool operator==(const ExtractorConfig&) const = default;
};

class ConvExtractor {
 public:
  struct Cache {
    std::vector<Tensor4> conv_in;   // input of each conv
    std::vector<Tensor4> conv_out;  // post-ReLU output of each conv
    Mat pooled;                     // GAP output, batch x widths.back()
  };

  ConvExtractor(const ExtractorConfig& config, Rng& rng);

  /// batch x feature_dim. Fills `cache` when non-null so backward can run.
  Mat forward(const Tensor4& input, Cache* cache) const;
  /// Accumulates parameter gradients for dL/d(features).
  void backward(const Cache& cache, const Mat& grad_features);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::uint64_t checksum() const;
  int feature_dim() const { return config_.feature_dim; }
  const ExtractorConfig& config() const { return config_; }

 private:
  ExtractorConfig config_;
  std::vector<Param> conv_weights_;  // out x (in*9)
  std::vector<Param> conv_biases_;   // out x 1
  Param fc_weight_;                  // feature_dim x widths.back()
  Param fc_bias_;
};

}  // namespace vmfcil

#endif  // VMFCIL_NN_HPP_
