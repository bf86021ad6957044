#include "vmfcil/vmf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "vmfcil/errors.hpp"

namespace vmfcil::vmf {

namespace {

std::string context(int dim, double kappa) {
  std::ostringstream os;
  os << "(d=" << dim << ", kappa=" << kappa << ")";
  return os.str();
}

// Lentz evaluation of I_{nu+1}(x)/I_nu(x) = 1/(b1 + 1/(b2 + ...)), b_k = 2(nu+k)/x.
double ratio_continued_fraction(double nu, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  constexpr int max_iter = 10'000'000;
  double f = tiny;
  double c = f;
  double d = 0.0;
  for (int k = 1; k <= max_iter; ++k) {
    const double b = 2.0 * (nu + k) / x;
    d = b + d;
    if (d == 0.0) d = tiny;
    c = b + 1.0 / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < eps) return f;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double log_series_term(double nu, double log_half_x, double k) {
  return (2.0 * k + nu) * log_half_x - std::lgamma(k + 1.0) - std::lgamma(k + nu + 1.0);
}

void check_unit(const Vec& v, const char* what) {
  if (std::abs(v.norm() - 1.0) > 1e-4) {
    std::ostringstream os;
    os << what << " must be unit norm (|v| = " << v.norm() << ")";
    throw PreconditionError(os.str());
  }
}

}  // namespace

double bessel_ratio(int dim, double kappa) {
  if (dim < 2 || !(kappa >= 0.0)) throw PreconditionError("bessel_ratio requires d >= 2 and kappa >= 0 " + context(dim, kappa));
  if (kappa == 0.0) return 0.0;
  const double nu = 0.5 * dim - 1.0;
  double a;
  if (kappa > kKappaSwitch) {
    const double m = dim - 1.0;
    a = 1.0 - m / (2.0 * kappa) + m * (dim - 3.0) / (8.0 * kappa * kappa);
  } else {
    a = ratio_continued_fraction(nu, kappa);
  }
  if (!std::isfinite(a) || a < 0.0 || a >= 1.0) throw NumericError("bessel_ratio failed " + context(dim, kappa));
  return a;
}

double bessel_ratio_derivative(int dim, double kappa) {
  if (kappa == 0.0) return 1.0 / dim;
  const double a = bessel_ratio(dim, kappa);
  return 1.0 - a * a - (dim - 1.0) * a / kappa;
}

double log_bessel_i(double order, double x) {
  if (order < 0.0 || !(x >= 0.0)) throw PreconditionError("log_bessel_i requires order >= 0 and x >= 0");
  if (x == 0.0) return order == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (x > 1e6 && x > 10.0 * order * order) {
    // Hankel expansion; the series would need ~x/2 terms here.
    const double mu = 4.0 * order * order;
    const double t1 = (mu - 1.0) / (8.0 * x);
    const double t2 = t1 * (mu - 9.0) / (2.0 * 8.0 * x);
    const double t3 = t2 * (mu - 25.0) / (3.0 * 8.0 * x);
    return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log1p(-t1 + t2 - t3);
  }
  // Power series sum_k (x/2)^{2k+nu} / (k! Gamma(k+nu+1)), summed outward from
  // its largest term.
  const double log_half_x = std::log(0.5 * x);
  const double peak = std::max(0.0, std::floor(0.5 * (-(order + 2.0) + std::sqrt(order * order + x * x))));
  const double top = log_series_term(order, log_half_x, peak);
  double sum = 1.0;
  for (double k = peak + 1.0;; k += 1.0) {
    const double rel = log_series_term(order, log_half_x, k) - top;
    sum += std::exp(rel);
    if (rel < -50.0) break;
  }
  for (double k = peak - 1.0; k >= 0.0; k -= 1.0) {
    const double rel = log_series_term(order, log_half_x, k) - top;
    sum += std::exp(rel);
    if (rel < -50.0) break;
  }
  return top + std::log(sum);
}

double log_normalizer(int dim, double kappa) {
  if (dim < 2 || !(kappa >= 0.0)) throw PreconditionError("log_normalizer requires d >= 2 and kappa >= 0 " + context(dim, kappa));
  const double half = 0.5 * dim;
  if (kappa == 0.0) {
    // 1 / |S^{d-1}| with |S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)
    return -(std::log(2.0) + half * std::log(std::numbers::pi) - std::lgamma(half));
  }
  const double value = (half - 1.0) * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) -
                       log_bessel_i(half - 1.0, kappa);
  if (!std::isfinite(value)) throw NumericError("log_normalizer overflow " + context(dim, kappa));
  return value;
}

double log_pdf(const Vec& z, const Vec& mu, double kappa) {
  if (z.size() != mu.size()) throw PreconditionError("log_pdf dimension mismatch");
  check_unit(z, "z");
  check_unit(mu, "mu");
  return log_normalizer(static_cast<int>(z.size()), kappa) + kappa * mu.dot(z);
}

Mat sample(const Vec& mu, double kappa, int n, Rng& rng) {
  const int dim = static_cast<int>(mu.size());
  if (dim < 2 || !(kappa >= 0.0)) throw PreconditionError("vmf sample requires d >= 2 and kappa >= 0 " + context(dim, kappa));
  check_unit(mu, "mu");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double m = dim - 1.0;
  std::gamma_distribution<double> gamma(0.5 * m, 1.0);
  // b = (-2k + sqrt(4k^2 + m^2)) / m, written without cancellation.
  const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + m * std::log(1.0 - x0 * x0);
  constexpr int max_tries = 100000;

  Mat out(n, dim);
  Vec v(dim);
  for (int i = 0; i < n; ++i) {
    double w = 0.0;
    if (kappa == 0.0) {
      for (int j = 0; j < dim; ++j) v[j] = normal(rng);
      out.row(i) = (v / v.norm()).transpose();
      continue;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < max_tries; ++attempt) {
      const double g1 = gamma(rng);
      const double g2 = gamma(rng);
      const double zb = g1 / (g1 + g2);
      w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
      const double u = uniform(rng);
      if (kappa * w + m * std::log(1.0 - x0 * w) - c >= std::log(u)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) throw NumericError("vmf sample rejection loop exhausted " + context(dim, kappa));
    double vn = 0.0;
    do {
      for (int j = 0; j < dim; ++j) v[j] = normal(rng);
      v -= v.dot(mu) * mu;
      vn = v.norm();
    } while (vn < 1e-12);
    const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
    out.row(i) = (w * mu + (s / vn) * v).transpose();
  }
  return out;
}

double kl(const Vec& mu_p, const Vec& mu_q, double kappa) {
  if (mu_p.size() != mu_q.size()) throw PreconditionError("kl dimension mismatch");
  const int dim = static_cast<int>(mu_p.size());
  const double gap = std::max(0.0, 1.0 - mu_p.dot(mu_q));
  return kappa * bessel_ratio(dim, kappa) * gap;
}

double ClassifierState::kappa() const { return std::exp(log_kappa); }

Mat ClassifierState::directions() const { return normalize_rows(weights); }

Mat normalize_rows(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0)) throw NumericError("cannot normalize a zero row");
    out.row(r) = m.row(r) / n;
  }
  return out;
}

Mat normalize_rows_backward(const Mat& raw, const Mat& grad_unit) {
  Mat out(raw.rows(), raw.cols());
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    const double n = raw.row(r).norm();
    const RowVec u = raw.row(r) / n;
    out.row(r) = (grad_unit.row(r) - u * u.dot(grad_unit.row(r))) / n;
  }
  return out;
}

BatchPrototypes batch_prototypes(const Mat& unit_features, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != unit_features.rows())
    throw PreconditionError("batch_prototypes: one label per feature row required");
  std::map<int, std::pair<RowVec, int>> acc;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    auto [it, inserted] = acc.try_emplace(labels[i], RowVec::Zero(unit_features.cols()), 0);
    it->second.first += unit_features.row(static_cast<Eigen::Index>(i));
    it->second.second += 1;
  }
  BatchPrototypes out;
  out.directions.resize(static_cast<Eigen::Index>(acc.size()), unit_features.cols());
  Eigen::Index r = 0;
  for (const auto& [cls, sum_count] : acc) {
    const double n = sum_count.first.norm();
    if (!(n > 1e-12)) throw NumericError("batch prototype of class " + std::to_string(cls) + " has zero mean");
    out.classes.push_back(cls);
    out.counts.push_back(sum_count.second);
    out.directions.row(r++) = sum_count.first / n;
  }
  return out;
}

Mat logits(const Mat& unit_features, const ClassifierState& state) {
  return state.kappa() * (unit_features * state.directions().transpose());
}

namespace {

Mat softmax_rows(const Mat& l) {
  Mat p(l.rows(), l.cols());
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    const double mx = l.row(r).maxCoeff();
    p.row(r) = (l.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Vec logsumexp_rows(const Mat& l) {
  Vec out(l.rows());
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    const double mx = l.row(r).maxCoeff();
    out[r] = mx + std::log((l.row(r).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace

Mat posterior(const Mat& unit_features, const ClassifierState& state) {
  return softmax_rows(logits(unit_features, state));
}

double nll_soft(const Mat& logits, const Mat& soft_labels) {
  if (logits.rows() != soft_labels.rows() || logits.cols() != soft_labels.cols())
    throw PreconditionError("nll_soft: logits and labels shape mismatch");
  if (logits.rows() == 0) return 0.0;
  const Vec lse = logsumexp_rows(logits);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double y = soft_labels(r, c);
      if (y != 0.0) total += y * (lse[r] - logits(r, c));
    }
  }
  return total / static_cast<double>(logits.rows());
}

double matching_loss(const ClassifierState& state, const BatchPrototypes& prototypes) {
  if (prototypes.classes.empty()) return 0.0;
  const Mat dirs = state.directions();
  const double kappa = state.kappa();
  const double scale = kappa * bessel_ratio(state.dim(), kappa);
  double total = 0.0;
  for (std::size_t i = 0; i < prototypes.classes.size(); ++i) {
    const int cls = prototypes.classes[i];
    if (cls < 0 || cls >= state.num_classes())
      throw PreconditionError("matching_loss: prototype class " + std::to_string(cls) + " not in classifier");
    total += scale * (1.0 - dirs.row(cls).dot(prototypes.directions.row(static_cast<Eigen::Index>(i))));
  }
  return total / static_cast<double>(prototypes.classes.size());
}

LossGrad nll_soft_with_grad(const Mat& features, const Mat& weights, double log_kappa, const Mat& soft_labels) {
  const Eigen::Index batch = features.rows();
  if (features.cols() != weights.cols() || soft_labels.rows() != batch || soft_labels.cols() != weights.rows())
    throw PreconditionError("nll_soft_with_grad: shape mismatch");
  LossGrad out;
  out.d_features = Mat::Zero(features.rows(), features.cols());
  out.d_weights = Mat::Zero(weights.rows(), weights.cols());
  if (batch == 0) return out;
  const double kappa = std::exp(log_kappa);
  const Mat zn = normalize_rows(features);
  const Mat mn = normalize_rows(weights);
  const Mat cos = zn * mn.transpose();
  const Mat l = kappa * cos;
  out.value = nll_soft(l, soft_labels);

  const Mat p = softmax_rows(l);
  const Vec mass = soft_labels.rowwise().sum();
  Mat g = p.array().colwise() * mass.array();
  g -= soft_labels;
  g /= static_cast<double>(batch);  // dLoss/dlogits

  out.d_log_kappa = kappa * (g.array() * cos.array()).sum();
  const Mat dcos = kappa * g;
  out.d_features = normalize_rows_backward(features, dcos * mn);
  out.d_weights = normalize_rows_backward(weights, dcos.transpose() * zn);
  return out;
}

LossGrad matching_with_grad(const Mat& features, std::span<const int> labels, const Mat& weights, double log_kappa,
                            bool stop_feature_gradient) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows() || features.cols() != weights.cols())
    throw PreconditionError("matching_with_grad: shape mismatch");
  LossGrad out;
  out.d_features = Mat::Zero(features.rows(), features.cols());
  out.d_weights = Mat::Zero(weights.rows(), weights.cols());

  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    if (labels[i] >= weights.rows()) throw PreconditionError("matching_with_grad: label outside classifier");
    members[labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  if (members.empty()) return out;

  const int dim = static_cast<int>(features.cols());
  const double kappa = std::exp(log_kappa);
  const double a = bessel_ratio(dim, kappa);
  const double scale = kappa * a;
  const double present = static_cast<double>(members.size());
  const Mat zn = normalize_rows(features);
  const Mat mn = normalize_rows(weights);

  Mat d_unit_weights = Mat::Zero(weights.rows(), weights.cols());
  Mat d_unit_features = Mat::Zero(features.rows(), features.cols());
  double gap_sum = 0.0;
  for (const auto& [cls, rows] : members) {
    Mat mean = Mat::Zero(1, features.cols());
    for (auto r : rows) mean += zn.row(r);
    mean /= static_cast<double>(rows.size());
    const double n = mean.norm();
    if (!(n > 1e-12)) throw NumericError("matching loss: batch mean of class " + std::to_string(cls) + " is zero");
    const Mat proto = mean / n;
    const double cosv = mn.row(cls).dot(proto.row(0));
    gap_sum += 1.0 - cosv;
    const double dc = -scale / present;
    d_unit_weights.row(cls) += dc * proto.row(0);
    if (!stop_feature_gradient) {
      const Mat d_mean = normalize_rows_backward(mean, dc * mn.row(cls));
      for (auto r : rows) d_unit_features.row(r) += d_mean.row(0) / static_cast<double>(rows.size());
    }
  }
  out.value = scale * gap_sum / present;
  const double dscale_dkappa = kappa * (1.0 - a * a) - (dim - 2.0) * a;
  out.d_log_kappa = kappa * dscale_dkappa * gap_sum / present;
  out.d_weights = normalize_rows_backward(weights, d_unit_weights);
  if (!stop_feature_gradient) out.d_features = normalize_rows_backward(features, d_unit_features);
  return out;
}

double mean_alignment(const Mat& features, std::span<const int> labels, const Mat& weights) {
  const BatchPrototypes protos = batch_prototypes(normalize_rows(features), labels);
  if (protos.classes.empty()) return 0.0;
  const Mat mn = normalize_rows(weights);
  double total = 0.0;
  for (std::size_t i = 0; i < protos.classes.size(); ++i)
    total += mn.row(protos.classes[i]).dot(protos.directions.row(static_cast<Eigen::Index>(i)));
  return total / static_cast<double>(protos.classes.size());
}

std::vector<int> argmax_rows(const Mat& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()), 0);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    int best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace vmfcil::vmf
