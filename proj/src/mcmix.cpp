#include "vmfcil/mcmix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vmfcil/errors.hpp"

namespace vmfcil {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Sigmoid: return "sigmoid";
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::Step: return "step";
    case ScheduleKind::Constant: return "constant";
  }
  return "?";
}

std::string to_string(MixMethod method) {
  switch (method) {
    case MixMethod::None: return "none";
    case MixMethod::Mixup: return "mixup";
    case MixMethod::CutMix: return "cutmix";
    case MixMethod::CutMixWeighted: return "cutmix-w";
    case MixMethod::McMix: return "mcmix";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  for (auto k : {ScheduleKind::Sigmoid, ScheduleKind::Linear, ScheduleKind::Step, ScheduleKind::Constant})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown schedule kind '" + name + "'");
}

MixMethod parse_mix_method(const std::string& name) {
  for (auto m : {MixMethod::None, MixMethod::Mixup, MixMethod::CutMix, MixMethod::CutMixWeighted, MixMethod::McMix})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown mix method '" + name + "'");
}

double schedule_value(const MixSchedule& schedule, double epoch) {
  const double offset = epoch - schedule.center();
  switch (schedule.kind) {
    case ScheduleKind::Sigmoid: return 1.0 / (1.0 + std::exp(-schedule.gamma * offset));
    case ScheduleKind::Linear: return std::clamp(0.5 + 0.25 * schedule.gamma * offset, 0.0, 1.0);
    case ScheduleKind::Step: return offset < 0.0 ? 0.0 : 1.0;
    case ScheduleKind::Constant: return 1.0;
  }
  return 1.0;
}

double ClassWeights::at(int cls) const {
  const auto it = w.find(cls);
  if (it == w.end()) throw InvariantViolation("no class weight for class " + std::to_string(cls));
  return it->second;
}

ClassWeights class_weights(const std::map<int, int>& counts) {
  ClassWeights out;
  out.counts = counts;
  if (counts.empty()) return out;
  double inv_sum = 0.0;
  bool balanced = true;
  for (const auto& [cls, n] : counts) {
    if (n <= 0) throw InvariantViolation("class " + std::to_string(cls) + " has no samples");
    inv_sum += 1.0 / n;
    balanced = balanced && n == counts.begin()->second;
  }
  const double seen = static_cast<double>(counts.size());
  for (const auto& [cls, n] : counts) out.w[cls] = balanced ? 0.0 : seen * (1.0 / n) / inv_sum - 1.0;
  return out;
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("Beta shape alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

int CutMask::ones() const { return static_cast<int>(std::count(keep.begin(), keep.end(), std::uint8_t{1})); }

CutMask sample_cut_mask(int height, int width, double lambda_raw, Rng& rng) {
  if (height < 1 || width < 1) throw PreconditionError("mask needs H, W >= 1");
  const double lam = std::clamp(lambda_raw, 0.0, 1.0);
  const double ratio = std::sqrt(1.0 - lam);
  const int cut_h = static_cast<int>(std::lround(height * ratio));
  const int cut_w = static_cast<int>(std::lround(width * ratio));
  std::uniform_int_distribution<int> pick_y(0, height - cut_h);
  std::uniform_int_distribution<int> pick_x(0, width - cut_w);
  const int y0 = pick_y(rng);
  const int x0 = pick_x(rng);

  CutMask mask;
  mask.height = height;
  mask.width = width;
  mask.keep.assign(static_cast<std::size_t>(height) * width, 1);
  for (int y = y0; y < y0 + cut_h; ++y)
    for (int x = x0; x < x0 + cut_w; ++x) mask.keep[static_cast<std::size_t>(y) * width + x] = 0;
  mask.lambda = static_cast<double>(mask.ones()) / (static_cast<double>(height) * width);
  return mask;
}

double lambda_hat(double lambda, double weight, double sigma) { return (weight * sigma + 1.0) * lambda; }

Vec mix_labels(int y_i, int y_j, double lambda, double epoch, const ClassWeights& weights, const MixSchedule& schedule,
               int num_classes) {
  if (y_i < 0 || y_i >= num_classes || y_j < 0 || y_j >= num_classes)
    throw PreconditionError("mix_labels: label outside the seen classes");
  const double sigma = schedule_value(schedule, epoch);
  Vec y = Vec::Zero(num_classes);
  y[y_i] += lambda_hat(lambda, weights.at(y_i), sigma);
  y[y_j] += lambda_hat(1.0 - lambda, weights.at(y_j), sigma);
  return y;
}

namespace {

MixBatch pass_through(std::span<const Image> images, std::span<const int> labels, int num_classes) {
  MixBatch out;
  out.images.assign(images.begin(), images.end());
  out.soft_labels = Mat::Zero(static_cast<Eigen::Index>(images.size()), num_classes);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.soft_labels(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    out.pairs.push_back({static_cast<int>(i), static_cast<int>(i), 1.0, 1.0, 0.0});
    out.pairing.push_back(static_cast<int>(i));
    out.dominant_labels.push_back(labels[i]);
  }
  return out;
}

}  // namespace

MixBatch mix_batch(std::span<const Image> images, std::span<const int> labels, int num_classes, double epoch,
                   const ClassWeights& weights, const MixOptions& options, bool incremental_step, Rng& rng) {
  if (images.size() != labels.size()) throw PreconditionError("mix_batch: one label per image required");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw PreconditionError("mix_batch: label outside the seen classes");
  if (!incremental_step || options.method == MixMethod::None || images.size() < 2)
    return pass_through(images, labels, num_classes);

  const bool cut = options.method != MixMethod::Mixup;
  const bool weighted = options.method == MixMethod::CutMixWeighted || options.method == MixMethod::McMix;
  double sigma = 1.0;
  if (options.method == MixMethod::McMix) sigma = schedule_value(options.schedule, epoch);

  const std::size_t batch = images.size();
  MixBatch out;
  out.pairing.resize(batch);
  std::iota(out.pairing.begin(), out.pairing.end(), 0);
  std::shuffle(out.pairing.begin(), out.pairing.end(), rng);
  out.soft_labels = Mat::Zero(static_cast<Eigen::Index>(batch), num_classes);
  out.images.reserve(batch);

  for (std::size_t i = 0; i < batch; ++i) {
    const auto j = static_cast<std::size_t>(out.pairing[i]);
    const Image& xi = images[i];
    const Image& xj = images[j];
    double lam = sample_lambda(options.alpha, rng);
    Image mixed(xi.height, xi.width, xi.channels);
    if (cut) {
      CutMask mask = sample_cut_mask(xi.height, xi.width, lam, rng);
      lam = mask.lambda;
      for (int y = 0; y < xi.height; ++y)
        for (int x = 0; x < xi.width; ++x) {
          const bool keep = mask.keep[static_cast<std::size_t>(y) * xi.width + x] != 0;
          for (int c = 0; c < xi.channels; ++c) mixed.at(y, x, c) = keep ? xi.at(y, x, c) : xj.at(y, x, c);
        }
      out.masks.push_back(std::move(mask));
    } else {
      for (std::size_t p = 0; p < mixed.pixels.size(); ++p) mixed.pixels[p] = lam * xi.pixels[p] + (1.0 - lam) * xj.pixels[p];
    }
    const int yi = labels[i];
    const int yj = labels[j];
    const double wi = weighted ? weights.at(yi) : 0.0;
    const double wj = weighted ? weights.at(yj) : 0.0;
    MixPair pair{static_cast<int>(i), static_cast<int>(j), lam, lambda_hat(lam, wi, sigma), lambda_hat(1.0 - lam, wj, sigma)};
    out.soft_labels(static_cast<Eigen::Index>(i), yi) += pair.lambda_hat_i;
    out.soft_labels(static_cast<Eigen::Index>(i), yj) += pair.lambda_hat_j;
    out.dominant_labels.push_back(pair.lambda_hat_j > pair.lambda_hat_i ? yj : yi);
    out.pairs.push_back(pair);
    out.images.push_back(std::move(mixed));
  }
  return out;
}

MixBatch mc_mix_batch(std::span<const Image> images, std::span<const int> labels, int num_classes, double epoch,
                      const ClassWeights& weights, const MixSchedule& schedule, double alpha, bool incremental_step,
                      Rng& rng) {
  return mix_batch(images, labels, num_classes, epoch, weights, MixOptions{MixMethod::McMix, alpha, schedule},
                   incremental_step, rng);
}

}  // namespace vmfcil
