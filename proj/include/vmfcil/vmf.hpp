#ifndef VMFCIL_VMF_HPP_
#define VMFCIL_VMF_HPP_

#include <span>
#include <vector>

#include "vmfcil/types.hpp"

/// Directional statistics on the unit hypersphere S^{d-1}: von Mises-Fisher
/// density, Bessel ratio, sampler, closed-form KL, and the two training losses
/// built on them. Everything here is pure given its inputs.
namespace vmfcil::vmf {

/// Above this concentration the Bessel ratio switches from the continued
/// fraction to the large-argument expansion.
inline constexpr double kKappaSwitch = 1e4;

/// A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa), the mean resultant length of
/// a vMF distribution on S^{d-1}. Requires d >= 2, kappa >= 0.
double bessel_ratio(int dim, double kappa);

/// dA_d/dkappa via the identity 1 - A^2 - (d-1) A / kappa (limit 1/d at 0).
double bessel_ratio_derivative(int dim, double kappa);

/// log I_order(x) for order >= 0, x >= 0. Summed in the log domain so it does
/// not overflow for large x.
double log_bessel_i(double order, double x);

/// log C_d(kappa) = (d/2-1) log kappa - (d/2) log 2pi - log I_{d/2-1}(kappa).
/// At kappa = 0 this is minus the log surface area of S^{d-1}.
double log_normalizer(int dim, double kappa);

/// log density of a vMF(mu, kappa) at z. Both vectors must be unit norm within 1e-4.
double log_pdf(const Vec& z, const Vec& mu, double kappa);

/// n draws from vMF(mu, kappa) via Wood's rejection scheme; rows of the result
/// are unit vectors. kappa = 0 gives the uniform distribution.
Mat sample(const Vec& mu, double kappa, int n, Rng& rng);

/// KL(vMF(mu_p, kappa) || vMF(mu_q, kappa)) = kappa A_d(kappa) (1 - <mu_p, mu_q>).
double kl(const Vec& mu_p, const Vec& mu_q, double kappa);

/// Raw (unnormalized) class weight rows plus the shared concentration,
/// parameterized as kappa = exp(log_kappa).
struct ClassifierState {
  Mat weights;
  double log_kappa = 0.0;

  double kappa() const;
  int num_classes() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
  /// Unit-norm class directions mu_i = W_i / |W_i|.
  Mat directions() const;
};

/// Normalized per-class means of the unit features of one mini-batch.
struct BatchPrototypes {
  std::vector<int> classes;
  std::vector<int> counts;
  Mat directions;  // one unit row per entry of `classes`
};

/// Builds prototypes from unit features and class labels; rows with label < 0
/// are ignored.
BatchPrototypes batch_prototypes(const Mat& unit_features, std::span<const int> labels);

Mat normalize_rows(const Mat& m);
/// Gradient through x -> x/|x| row-wise, given the raw rows and dL/d(unit rows).
Mat normalize_rows_backward(const Mat& raw, const Mat& grad_unit);

/// kappa <mu_j, z_b> for unit features.
Mat logits(const Mat& unit_features, const ClassifierState& state);

/// Row-wise softmax of the vMF logits; each row sums to one.
Mat posterior(const Mat& unit_features, const ClassifierState& state);

/// Mean over the batch of sum_c y_c (-log p_c), evaluated from logits with
/// log-sum-exp so that p = 0 never materializes. Soft labels may carry any
/// nonnegative mass.
double nll_soft(const Mat& logits, const Mat& soft_labels);

/// Mean over prototype classes of kappa A_d(kappa) (1 - <mu_i, mu~_i>); zero
/// for an empty prototype set.
double matching_loss(const ClassifierState& state, const BatchPrototypes& prototypes);

struct LossGrad {
  double value = 0.0;
  Mat d_features;
  Mat d_weights;
  double d_log_kappa = 0.0;
};

/// nll_soft of the vMF posterior with gradients w.r.t. raw features, raw
/// weights and log kappa.
LossGrad nll_soft_with_grad(const Mat& features, const Mat& weights, double log_kappa, const Mat& soft_labels);

/// matching_loss on the batch prototypes of `features` grouped by `labels`
/// (entries < 0 skipped). With `stop_feature_gradient` the prototype side is
/// treated as a constant.
LossGrad matching_with_grad(const Mat& features, std::span<const int> labels, const Mat& weights, double log_kappa,
                            bool stop_feature_gradient = false);

/// Mean cosine <mu_i, mu~_i> over the classes present in `labels`.
double mean_alignment(const Mat& features, std::span<const int> labels, const Mat& weights);

/// Index of the maximum per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Mat& m);

}  // namespace vmfcil::vmf

#endif  // VMFCIL_VMF_HPP_
