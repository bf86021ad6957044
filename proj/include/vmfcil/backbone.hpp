#ifndef VMFCIL_BACKBONE_HPP_
#define VMFCIL_BACKBONE_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vmfcil/nn.hpp"
#include "vmfcil/types.hpp"

namespace vmfcil {

/// One extractor per task. Only the newest one trains; the dynamic feature
/// is the newest-first concatenation z = [f_t(x); f_{t-1}(x); ...; f_1(x)],
/// so the trainable slice is always columns [0, d).
class DynamicBackbone {
 public:
  explicit DynamicBackbone(ExtractorConfig config) : config_(std::move(config)) {}

  /// Appends a fresh trainable extractor; all earlier ones become frozen.
  void append_extractor(Rng& rng);
  /// Adds an already-built extractor as the newest one (checkpoint restore).
  void append_extractor(ConvExtractor extractor);

  int num_extractors() const { return static_cast<int>(extractors_.size()); }
  int extractor_dim() const { return config_.feature_dim; }
  int feature_dim() const { return num_extractors() * config_.feature_dim; }
  const ExtractorConfig& config() const { return config_; }

  /// batch x feature_dim. `newest_cache` receives the activations needed to
  /// backpropagate into the newest extractor.
  Mat forward(std::span<const Image> images, ConvExtractor::Cache* newest_cache = nullptr) const;
  Mat forward(const Tensor4& input, ConvExtractor::Cache* newest_cache = nullptr) const;
  /// Backpropagates the first d columns of dL/dz into the newest extractor.
  void backward_newest(const ConvExtractor::Cache& cache, const Mat& grad_z);

  ConvExtractor& newest() { return extractors_.back(); }
  /// Index 0 is the oldest extractor f_1.
  const std::vector<ConvExtractor>& extractors() const { return extractors_; }
  /// Checksums of every frozen extractor, oldest first.
  std::vector<std::uint64_t> frozen_checksums() const;

 private:
  ExtractorConfig config_;
  std::vector<ConvExtractor> extractors_;
};

enum class HeadKind { Vmf, Linear };

/// Main classifier over all seen classes. For the vMF head rows are class
/// directions after normalization and `log_kappa` sets the concentration; the
/// linear head uses raw logits z W^T.
struct MainHead {
  HeadKind kind = HeadKind::Vmf;
  Param weights;
  Param log_kappa{"log_kappa", 1, 1, false};

  int num_classes() const { return weights.rows; }
  double kappa() const { return std::exp(log_kappa.value[0]); }
};

/// Affine map d_t -> 1 + |Y_t| separating "any old class" from each new class.
struct AuxHead {
  Param weights;
  Param bias;
};

struct Model {
  DynamicBackbone backbone;
  MainHead main;
  std::optional<AuxHead> aux;
  bool task_active = false;
};

struct ModelOptions {
  ExtractorConfig extractor;
  HeadKind head = HeadKind::Vmf;
  double initial_kappa = 10.0;
};

/// One extractor and a main head over the first task's classes; no aux head.
Model make_model(const ModelOptions& options, int first_task_classes, Rng& rng);

/// Start-of-task growth for t >= 2: freezes the current extractors, appends a
/// new one, rebuilds the main head at |Y_1:t| classes (old rows moved onto the
/// old-feature coordinates, zeros on the new ones; new rows drawn fresh) and
/// builds a fresh aux head. Throws UsageError while a task is active.
void expand(Model& model, int new_task_classes, Rng& rng);

/// Trainable parameters for the current task: newest extractor, both heads.
std::vector<Param*> trainable_params(Model& model);

}  // namespace vmfcil

#endif  // VMFCIL_BACKBONE_HPP_
