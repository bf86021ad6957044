#ifndef VMFCIL_MCMIX_HPP_
#define VMFCIL_MCMIX_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vmfcil/types.hpp"

namespace vmfcil {

enum class ScheduleKind { Sigmoid, Linear, Step, Constant };
enum class MixMethod { None, Mixup, CutMix, CutMixWeighted, McMix };

std::string to_string(ScheduleKind kind);
std::string to_string(MixMethod method);
ScheduleKind parse_schedule_kind(const std::string& name);
MixMethod parse_mix_method(const std::string& name);

/// Non-stationary activation sigma_{gamma,tau}(e) over E epochs.
struct MixSchedule {
  ScheduleKind kind = ScheduleKind::Sigmoid;
  double gamma = 0.5;  // steepness
  double tau = 0.6;    // center as a fraction of E
  int total_epochs = 240;

  double center() const { return tau * total_epochs; }
};

/// sigmoid: 1/(1+exp(-gamma(e - tau E)));
/// linear: 0.5 + (gamma/4)(e - tau E) clipped to [0,1] (the sigmoid's slope at its center);
/// step: 0 before tau E, 1 from tau E on; constant: 1.
double schedule_value(const MixSchedule& schedule, double epoch);

/// w_y = Freq[y] - 1 with Freq[y] = C' (1/n_y) / sum_j (1/n_j). Keys are
/// whatever class indexing the caller uses.
struct ClassWeights {
  std::map<int, double> w;
  std::map<int, int> counts;

  double at(int cls) const;
};

/// Balanced counts yield exactly zero weights.
ClassWeights class_weights(const std::map<int, int>& counts);

/// One draw from Beta(alpha, alpha).
double sample_lambda(double alpha, Rng& rng);

/// Binary H x W mask: ones keep x_i, the zero rectangle shows x_j.
struct CutMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> keep;
  double lambda = 1.0;  // exact fraction of ones

  int ones() const;
};

/// Cuts a rectangle of area ~ (1 - lambda_raw) H W placed uniformly inside the
/// image; the returned lambda is recomputed from the realized pixels.
CutMask sample_cut_mask(int height, int width, double lambda_raw, Rng& rng);

/// (w_y sigma + 1) lambda
double lambda_hat(double lambda, double weight, double sigma);

/// lambda_hat(e, y_i, lambda) onehot(y_i) + lambda_hat(e, y_j, 1 - lambda) onehot(y_j),
/// left unnormalized.
Vec mix_labels(int y_i, int y_j, double lambda, double epoch, const ClassWeights& weights, const MixSchedule& schedule,
               int num_classes);

struct MixOptions {
  MixMethod method = MixMethod::McMix;
  double alpha = 1.0;
  MixSchedule schedule;
};

struct MixPair {
  int i = 0;
  int j = 0;
  double lambda = 1.0;  // share of x_i in the image
  double lambda_hat_i = 1.0;
  double lambda_hat_j = 0.0;
};

struct MixBatch {
  std::vector<Image> images;
  Mat soft_labels;  // batch x num_classes
  std::vector<MixPair> pairs;
  std::vector<CutMask> masks;  // empty unless a cut-based method ran
  std::vector<int> pairing;    // partner index per sample
  /// Label of the pair member with the larger lambda_hat (ties: x_i).
  std::vector<int> dominant_labels;
};

/// Mixes a batch against a random permutation of itself. With
/// `incremental_step` false, method None, or fewer than two samples the batch
/// passes through with one-hot labels.
MixBatch mix_batch(std::span<const Image> images, std::span<const int> labels, int num_classes, double epoch,
                   const ClassWeights& weights, const MixOptions& options, bool incremental_step, Rng& rng);

/// Memory-centric mix: cut-based images, class-weighted scheduled labels.
MixBatch mc_mix_batch(std::span<const Image> images, std::span<const int> labels, int num_classes, double epoch,
                      const ClassWeights& weights, const MixSchedule& schedule, double alpha, bool incremental_step,
                      Rng& rng);

}  // namespace vmfcil

#endif  // VMFCIL_MCMIX_HPP_
