#include "vmfcil/backbone.hpp"

#include <cmath>

#include "vmfcil/errors.hpp"

namespace vmfcil {

namespace {

Param gaussian_rows(const std::string& name, int rows, int cols, double std, bool unit_rows, Rng& rng) {
  Param p(name, rows, cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto m = p.mat();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = std * normal(rng);
    if (unit_rows) m.row(r) /= m.row(r).norm();
  }
  return p;
}

void fill_new_rows(MainHead& head, int first_row, Rng& rng) {
  const int dim = head.weights.cols;
  Param fresh = gaussian_rows("tmp", head.weights.rows - first_row, dim, 1.0 / std::sqrt(dim),
                              head.kind == HeadKind::Vmf, rng);
  head.weights.mat().bottomRows(head.weights.rows - first_row) = fresh.mat();
}

}  // namespace

void DynamicBackbone::append_extractor(Rng& rng) { extractors_.emplace_back(config_, rng); }

void DynamicBackbone::append_extractor(ConvExtractor extractor) {
  if (!(extractor.config() == config_)) throw ConfigError("all extractors must share one configuration (uniform d)");
  extractors_.push_back(std::move(extractor));
}

Mat DynamicBackbone::forward(std::span<const Image> images, ConvExtractor::Cache* newest_cache) const {
  return forward(images_to_tensor(images), newest_cache);
}

Mat DynamicBackbone::forward(const Tensor4& input, ConvExtractor::Cache* newest_cache) const {
  if (extractors_.empty()) throw UsageError("backbone has no extractors");
  const int d = config_.feature_dim;
  Mat z(input.n, feature_dim());
  const int count = num_extractors();
  for (int k = count - 1; k >= 0; --k) {
    const bool newest = k == count - 1;
    const Mat part = extractors_[static_cast<std::size_t>(k)].forward(input, newest ? newest_cache : nullptr);
    if (part.cols() != d) throw ConfigError("extractor output width differs from d");
    z.middleCols(static_cast<Eigen::Index>(count - 1 - k) * d, d) = part;
  }
  return z;
}

void DynamicBackbone::backward_newest(const ConvExtractor::Cache& cache, const Mat& grad_z) {
  extractors_.back().backward(cache, grad_z.leftCols(config_.feature_dim));
}

std::vector<std::uint64_t> DynamicBackbone::frozen_checksums() const {
  std::vector<std::uint64_t> out;
  for (std::size_t k = 0; k + 1 < extractors_.size(); ++k) out.push_back(extractors_[k].checksum());
  return out;
}

Model make_model(const ModelOptions& options, int first_task_classes, Rng& rng) {
  if (!(options.initial_kappa > 0.0)) throw ConfigError("initial kappa must be positive");
  Model model{DynamicBackbone(options.extractor), {}, std::nullopt, false};
  model.backbone.append_extractor(rng);
  model.main.kind = options.head;
  model.main.weights = Param("main.weights", first_task_classes, model.backbone.feature_dim());
  fill_new_rows(model.main, 0, rng);
  model.main.log_kappa.value[0] = std::log(options.initial_kappa);
  return model;
}

void expand(Model& model, int new_task_classes, Rng& rng) {
  if (model.task_active) throw UsageError("cannot expand the backbone in the middle of a task");
  if (new_task_classes <= 0) throw ConfigError("a task must add at least one class");
  const int old_dim = model.backbone.feature_dim();
  const int old_classes = model.main.num_classes();
  model.backbone.append_extractor(rng);
  const int dim = model.backbone.feature_dim();

  Param grown("main.weights", old_classes + new_task_classes, dim);
  grown.mat().topRightCorner(old_classes, old_dim) = model.main.weights.mat();
  model.main.weights = std::move(grown);
  fill_new_rows(model.main, old_classes, rng);
  model.main.log_kappa.velocity.setZero();

  AuxHead aux{gaussian_rows("aux.weights", 1 + new_task_classes, dim, 1.0 / std::sqrt(dim), false, rng),
              Param("aux.bias", 1 + new_task_classes, 1, false)};
  model.aux = std::move(aux);
}

std::vector<Param*> trainable_params(Model& model) {
  std::vector<Param*> out = model.backbone.newest().params();
  out.push_back(&model.main.weights);
  if (model.main.kind == HeadKind::Vmf) out.push_back(&model.main.log_kappa);
  if (model.aux) {
    out.push_back(&model.aux->weights);
    out.push_back(&model.aux->bias);
  }
  return out;
}

}  // namespace vmfcil
