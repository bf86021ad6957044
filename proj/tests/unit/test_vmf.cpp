#include <gtest/gtest.h>

#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <numbers>

#include "vmfcil/errors.hpp"
#include "vmfcil/vmf.hpp"

using namespace vmfcil;

namespace {

Vec random_unit(int d, Rng& rng) {
  std::normal_distribution<double> n01;
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = n01(rng);
  return v / v.norm();
}

Mat random_mat(int r, int c, Rng& rng) {
  std::normal_distribution<double> n01;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

// Ratio from Boost in extended precision; no overflow up to kappa ~ 1e4.
double boost_ratio(int d, double kappa) {
  using boost::math::cyl_bessel_i;
  const long double k = kappa;
  return static_cast<double>(cyl_bessel_i(d / 2.0L, k) / cyl_bessel_i(d / 2.0L - 1.0L, k));
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Independent loss values, built from the plain forward ops.
double nll_value(const Mat& x, const Mat& w, double rho, const Mat& y) {
  vmf::ClassifierState s{w, rho};
  return vmf::nll_soft(vmf::logits(vmf::normalize_rows(x), s), y);
}

double matching_value(const Mat& x, const std::vector<int>& labels, const Mat& w, double rho) {
  vmf::ClassifierState s{w, rho};
  return vmf::matching_loss(s, vmf::batch_prototypes(vmf::normalize_rows(x), labels));
}

Mat fd_grad(Mat x, const std::function<double(const Mat&)>& f) {
  const double h = 1e-5;
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double mat_rel(const Mat& a, const Mat& b) { return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12}); }

}  // namespace

TEST(BesselRatio, ZeroConcentration) {
  for (int d : {2, 3, 8, 64}) EXPECT_EQ(vmf::bessel_ratio(d, 0.0), 0.0);
}

TEST(BesselRatio, ClosedFormThreeDims) {
  EXPECT_NEAR(vmf::bessel_ratio(3, 2.0), 1.0 / std::tanh(2.0) - 0.5, 1e-14);
  EXPECT_NEAR(vmf::bessel_ratio(3, 2.0), 0.5373147207275482, 1e-14);
}

TEST(BesselRatio, MatchesBoostAcrossRange) {
  for (int d : {2, 3, 5, 8, 64, 256})
    for (double k : {1e-3, 0.05, 0.5, 1.0, 2.0, 10.0, 50.0, 100.0, 500.0, 2000.0, 9000.0})
      EXPECT_LT(rel(vmf::bessel_ratio(d, k), boost_ratio(d, k)), 1e-10) << "d=" << d << " kappa=" << k;
}

TEST(BesselRatio, LargeConcentrationBranch) {
  const double a = vmf::bessel_ratio(64, 1000.0);
  const double two_term = 1.0 - 63.0 / 2000.0 + 63.0 * 61.0 / 8e6;
  EXPECT_NEAR(a, two_term, 1e-6);
  EXPECT_NEAR(a, boost_ratio(64, 1000.0), 1e-9);
  // The one-term value 1 - 63/2000 is off by ~4.8e-4 at this kappa.
  EXPECT_GT(std::abs(a - 0.9685), 4e-4);
  for (double k : {2e4, 1e5, 1e7}) EXPECT_NEAR(vmf::bessel_ratio(64, k), 1.0 - 63.0 / (2 * k), 63.0 * 61.0 / (8 * k * k) * 1.01);
}

TEST(BesselRatio, ContinuousAtSwitch) {
  for (int d : {3, 64, 512}) {
    const double below = vmf::bessel_ratio(d, vmf::kKappaSwitch * (1 - 1e-12));
    const double above = vmf::bessel_ratio(d, vmf::kKappaSwitch * (1 + 1e-12));
    // The jump is the truncation error of the two-term expansion.
    EXPECT_NEAR(below, above, 1e-7) << d;
    EXPECT_NEAR(above, boost_ratio(d, vmf::kKappaSwitch), 1e-7) << d;
  }
}

TEST(BesselRatio, MonotoneInKappaAndBounded) {
  for (int d : {2, 3, 16}) {
    double prev = 0.0;
    for (double k = 0.01; k < 1e5; k *= 1.7) {
      const double a = vmf::bessel_ratio(d, k);
      EXPECT_GT(a, prev);
      EXPECT_LT(a, 1.0);
      prev = a;
    }
  }
}

TEST(BesselRatio, RejectsBadArguments) {
  EXPECT_THROW(vmf::bessel_ratio(1, 1.0), PreconditionError);
  EXPECT_THROW(vmf::bessel_ratio(3, -1.0), PreconditionError);
}

TEST(BesselRatioDerivative, IdentityMatchesFiniteDifferences) {
  for (int d : {2, 3, 8, 64})
    for (double k : {0.1, 0.7, 3.0, 20.0, 150.0}) {
      const double h = 1e-4 * std::max(k, 1.0);
      const double fd = (boost_ratio(d, k + h) - boost_ratio(d, k - h)) / (2 * h);
      EXPECT_LT(rel(vmf::bessel_ratio_derivative(d, k), fd), 1e-6) << "d=" << d << " kappa=" << k;
    }
}

TEST(BesselRatioDerivative, LimitAtZero) {
  for (int d : {2, 3, 10}) EXPECT_NEAR(vmf::bessel_ratio_derivative(d, 0.0), 1.0 / d, 1e-15);
}

TEST(LogBessel, MatchesBoost) {
  for (double nu : {0.0, 0.5, 1.0, 3.5, 31.0})
    for (double x : {0.01, 0.3, 1.0, 7.0, 40.0, 300.0}) {
      const double expect = std::log(boost::math::cyl_bessel_i(nu, x));
      EXPECT_NEAR(vmf::log_bessel_i(nu, x), expect, 1e-10 * std::max(1.0, std::abs(expect))) << nu << " " << x;
    }
}

TEST(LogBessel, LargeArgumentDoesNotOverflow) {
  const double v = vmf::log_bessel_i(10.0, 1e5);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 1e5 - 0.5 * std::log(2 * std::numbers::pi * 1e5), 1e-2);
}

TEST(VmfDensity, UniformLimitOnSphere) {
  Rng rng(1);
  const Vec mu = random_unit(3, rng), z = random_unit(3, rng);
  EXPECT_NEAR(vmf::log_pdf(z, mu, 0.0), std::log(1.0 / (4 * std::numbers::pi)), 1e-12);
  EXPECT_NEAR(vmf::log_pdf(z, mu, 1e-10), std::log(1.0 / (4 * std::numbers::pi)), 1e-9);
}

TEST(VmfDensity, MaximizedAtMeanDirection) {
  Rng rng(2);
  const Vec mu = random_unit(5, rng);
  const double top = vmf::log_pdf(mu, mu, 4.0);
  for (int i = 0; i < 50; ++i) EXPECT_LT(vmf::log_pdf(random_unit(5, rng), mu, 4.0), top);
}

TEST(VmfDensity, IntegratesToOneOverSphere) {
  Rng rng(3);
  const Vec mu = random_unit(3, rng);
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p = std::exp(vmf::log_pdf(random_unit(3, rng), mu, 3.0)) * 4 * std::numbers::pi;
    sum += p;
    sq += p * p;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - 1.0), 3 * se);
}

TEST(VmfDensity, RejectsNonUnitInput) {
  Vec mu = Vec::Unit(3, 0);
  EXPECT_THROW(vmf::log_pdf(Vec::Constant(3, 1.0), mu, 1.0), PreconditionError);
}

TEST(VmfSample, UniformWhenKappaZero) {
  Rng rng(4);
  const Mat z = vmf::sample(Vec::Unit(6, 0), 0.0, 200000, rng);
  EXPECT_LT(z.colwise().mean().norm(), 5.0 / std::sqrt(200000.0));
  for (Eigen::Index i = 0; i < 100; ++i) EXPECT_NEAR(z.row(i).norm(), 1.0, 1e-12);
}

TEST(VmfSample, MeanResultantMatchesBesselRatio) {
  Rng rng(5);
  const Vec mu = random_unit(8, rng);
  const int n = 200000;
  const Vec dots = vmf::sample(mu, 10.0, n, rng) * mu;
  const double mean = dots.mean();
  const double se = std::sqrt((dots.array() - mean).square().sum() / (n - 1) / n);
  EXPECT_LT(std::abs(mean - boost_ratio(8, 10.0)), 3 * se);
}

TEST(VmfSample, ConcentratedCap) {
  Rng rng(6);
  const Vec mu = random_unit(8, rng);
  EXPECT_GT((vmf::sample(mu, 500.0, 20000, rng) * mu).minCoeff(), 0.9);
}

TEST(VmfSample, DeterministicForSeed) {
  Rng a(9), b(9);
  const Vec mu = Vec::Unit(4, 1);
  EXPECT_EQ(vmf::sample(mu, 3.0, 100, a), vmf::sample(mu, 3.0, 100, b));
}

TEST(VmfKl, Identities) {
  Rng rng(7);
  const Vec mu = random_unit(8, rng);
  EXPECT_EQ(vmf::kl(mu, mu, 10.0), 0.0);
  EXPECT_NEAR(vmf::kl(mu, -mu, 10.0), 2 * 10.0 * boost_ratio(8, 10.0), 1e-12);
}

TEST(VmfKl, MatchesMonteCarlo) {
  Rng rng(8);
  const Vec p = random_unit(8, rng), q = random_unit(8, rng);
  const double kappa = 10.0;
  const int n = 200000;
  const Mat z = vmf::sample(p, kappa, n, rng);
  Vec diff(n);
  for (int i = 0; i < n; ++i) diff[i] = vmf::log_pdf(z.row(i).transpose(), p, kappa) - vmf::log_pdf(z.row(i).transpose(), q, kappa);
  const double mean = diff.mean();
  const double se = std::sqrt((diff.array() - mean).square().sum() / (n - 1) / n);
  EXPECT_LT(std::abs(mean - vmf::kl(p, q, kappa)), 3 * se);
}

TEST(Posterior, RowsSumToOne) {
  Rng rng(10);
  vmf::ClassifierState s{random_mat(7, 16, rng), std::log(12.0)};
  const Mat p = vmf::posterior(vmf::normalize_rows(random_mat(40, 16, rng)), s);
  for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
}

TEST(Posterior, UniformAtZeroConcentration) {
  Rng rng(11);
  vmf::ClassifierState s{random_mat(4, 5, rng), -800.0};  // kappa underflows to 0
  const Mat p = vmf::posterior(vmf::normalize_rows(random_mat(3, 5, rng)), s);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p.data()[i], 0.25, 1e-15);
  EXPECT_EQ(vmf::argmax_rows(p), (std::vector<int>{0, 0, 0}));
}

TEST(Posterior, DominantAndSymmetricCases) {
  Mat w(2, 2);
  w << 1, 0, 0, 1;
  vmf::ClassifierState s{w, std::log(200.0)};
  Mat z(2, 2);
  z << 1, 0, std::sqrt(0.5), std::sqrt(0.5);
  const Mat p = vmf::posterior(z, s);
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
  EXPECT_NEAR(p(1, 0), 0.5, 1e-12);
  EXPECT_NEAR(p(1, 1), 0.5, 1e-12);
}

TEST(Posterior, ArgmaxInvariantToKappaAndTinyNoise) {
  Rng rng(12);
  const Mat w = random_mat(6, 8, rng);
  const Mat z = vmf::normalize_rows(random_mat(50, 8, rng));
  const auto base = vmf::argmax_rows(vmf::posterior(z, {w, 0.0}));
  for (double rho : {-2.0, 1.0, 4.0}) EXPECT_EQ(vmf::argmax_rows(vmf::posterior(z, {w, rho})), base);
  Mat noisy = w;
  for (Eigen::Index r = 0; r < noisy.rows(); ++r) noisy.row(r) *= 1.0 + 1e-9 * (r + 1);
  EXPECT_EQ(vmf::argmax_rows(vmf::posterior(z, {noisy, 0.0})), base);
}

TEST(ArgmaxRows, TiesGoToLowestIndex) {
  Mat m(2, 3);
  m << 1, 1, 0, 0, 2, 2;
  EXPECT_EQ(vmf::argmax_rows(m), (std::vector<int>{0, 1}));
}

TEST(NllSoft, KnownValues) {
  Mat logits(1, 2), y(1, 2);
  logits << 1000.0, 0.0;
  y << 1.0, 0.0;
  EXPECT_EQ(vmf::nll_soft(logits, y), 0.0);

  Mat flat = Mat::Zero(1, 5), onehot = Mat::Zero(1, 5);
  onehot(0, 3) = 1.0;
  EXPECT_NEAR(vmf::nll_soft(flat, onehot), std::log(5.0), 1e-15);

  Mat l(1, 3), soft(1, 3);
  l << 0.3, -1.2, 2.0;
  soft << 0.75, 0.25, 0.0;
  const double z = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0);
  EXPECT_NEAR(vmf::nll_soft(l, soft), 0.75 * -std::log(std::exp(0.3) / z) + 0.25 * -std::log(std::exp(-1.2) / z), 1e-14);
}

TEST(NllSoft, SmoothMaxOfTripletMargin) {
  Rng rng(13);
  std::uniform_real_distribution<double> kap(0.5, 60.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 3 + trial % 6;
    const Vec anchor = random_unit(d, rng), pos = random_unit(d, rng), neg = random_unit(d, rng);
    const double kappa = kap(rng);
    Mat logits(1, 2), y(1, 2);
    logits << kappa * pos.dot(anchor), kappa * neg.dot(anchor);
    y << 1.0, 0.0;
    const double hinge = std::max(0.0, kappa * (neg.dot(anchor) - pos.dot(anchor)));
    const double nll = vmf::nll_soft(logits, y);
    EXPECT_GE(nll, hinge - 1e-12);
    EXPECT_LE(nll, hinge + std::log(2.0) + 1e-12);
  }
}

TEST(NllSoft, ShapeMismatchThrows) { EXPECT_THROW(vmf::nll_soft(Mat::Zero(2, 3), Mat::Zero(2, 2)), PreconditionError); }

TEST(MatchingLoss, Identities) {
  Rng rng(14);
  const Mat w = random_mat(3, 6, rng);
  const vmf::ClassifierState s{w, std::log(7.0)};
  vmf::BatchPrototypes aligned{{0, 2}, {1, 1}, Mat(2, 6)};
  aligned.directions.row(0) = s.directions().row(0);
  aligned.directions.row(1) = s.directions().row(2);
  EXPECT_NEAR(vmf::matching_loss(s, aligned), 0.0, 1e-14);

  vmf::BatchPrototypes anti{{1}, {1}, -s.directions().row(1)};
  EXPECT_NEAR(vmf::matching_loss(s, anti), 2 * 7.0 * boost_ratio(6, 7.0), 1e-12);
  EXPECT_EQ(vmf::matching_loss(s, vmf::BatchPrototypes{}), 0.0);
}

TEST(MatchingLoss, EqualsMeanKlOverPresentClasses) {
  Rng rng(15);
  const Mat w = random_mat(5, 8, rng);
  const Mat x = random_mat(20, 8, rng);
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 3 == 0 ? -1 : (i * 7) % 5);
  const vmf::ClassifierState s{w, std::log(4.0)};
  const auto protos = vmf::batch_prototypes(vmf::normalize_rows(x), labels);
  double expect = 0.0;
  for (std::size_t k = 0; k < protos.classes.size(); ++k) {
    // Brute-force class mean, independent of batch_prototypes.
    RowVec mean = RowVec::Zero(8);
    for (int i = 0; i < 20; ++i)
      if (labels[static_cast<std::size_t>(i)] == protos.classes[k]) mean += x.row(i) / x.row(i).norm();
    expect += vmf::kl(s.directions().row(protos.classes[k]).transpose(), (mean / mean.norm()).transpose(), 4.0);
  }
  expect /= static_cast<double>(protos.classes.size());
  EXPECT_NEAR(vmf::matching_loss(s, protos), expect, 1e-12);
}

TEST(BatchPrototypes, DegenerateMeanThrows) {
  Mat z(2, 3);
  z << 1, 0, 0, -1, 0, 0;
  EXPECT_THROW(vmf::batch_prototypes(z, std::vector<int>{4, 4}), NumericError);
}

TEST(Gradients, NllMatchesFiniteDifferences) {
  Rng rng(16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int k = 0;
  for (int d : {4, 8, 32})
    for (int c : {3, 10})
      for (int b : {8, 32}) {
        const Mat x = random_mat(b, d, rng), w = random_mat(c, d, rng);
        const double rho = std::log(1.0 + 15.0 * u(rng));
        Mat y = Mat::Zero(b, c);
        for (int i = 0; i < b; ++i) {
          const double lam = u(rng);
          y(i, (i + k) % c) += lam;
          y(i, (3 * i + 1) % c) += 1.0 - lam;
        }
        ++k;
        const auto g = vmf::nll_soft_with_grad(x, w, rho, y);
        EXPECT_NEAR(g.value, nll_value(x, w, rho, y), 1e-12);
        EXPECT_LT(mat_rel(g.d_features, fd_grad(x, [&](const Mat& m) { return nll_value(m, w, rho, y); })), 1e-4);
        EXPECT_LT(mat_rel(g.d_weights, fd_grad(w, [&](const Mat& m) { return nll_value(x, m, rho, y); })), 1e-4);
        const double fd_rho = (nll_value(x, w, rho + 1e-5, y) - nll_value(x, w, rho - 1e-5, y)) / 2e-5;
        EXPECT_LT(rel(g.d_log_kappa, fd_rho), 1e-4);
      }
}

TEST(Gradients, MatchingMatchesFiniteDifferences) {
  Rng rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int d : {4, 8, 32})
    for (int c : {3, 10})
      for (int b : {8, 32}) {
        const Mat x = random_mat(b, d, rng), w = random_mat(c, d, rng);
        const double rho = std::log(0.5 + 30.0 * u(rng));
        std::vector<int> labels;
        for (int i = 0; i < b; ++i) labels.push_back(static_cast<int>(u(rng) * c));
        const auto g = vmf::matching_with_grad(x, labels, w, rho);
        EXPECT_NEAR(g.value, matching_value(x, labels, w, rho), 1e-12);
        EXPECT_LT(mat_rel(g.d_features, fd_grad(x, [&](const Mat& m) { return matching_value(m, labels, w, rho); })), 1e-4);
        EXPECT_LT(mat_rel(g.d_weights, fd_grad(w, [&](const Mat& m) { return matching_value(x, labels, m, rho); })), 1e-4);
        const double fd_rho = (matching_value(x, labels, w, rho + 1e-5) - matching_value(x, labels, w, rho - 1e-5)) / 2e-5;
        EXPECT_LT(rel(g.d_log_kappa, fd_rho), 1e-4);
      }
}

TEST(Gradients, MatchingStopGradientZeroesFeatureSide) {
  Rng rng(18);
  const Mat x = random_mat(10, 6, rng), w = random_mat(4, 6, rng);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
  const auto free = vmf::matching_with_grad(x, labels, w, 1.0, false);
  const auto stopped = vmf::matching_with_grad(x, labels, w, 1.0, true);
  EXPECT_EQ(stopped.d_features.norm(), 0.0);
  EXPECT_GT(free.d_features.norm(), 0.0);
  EXPECT_EQ(stopped.d_weights, free.d_weights);
  EXPECT_EQ(stopped.value, free.value);
}

TEST(MeanAlignment, PerfectWhenFeaturesMatchRows) {
  Rng rng(19);
  const Mat w = random_mat(3, 5, rng);
  Mat x(6, 5);
  for (int i = 0; i < 6; ++i) x.row(i) = w.row(i % 3) * (1.0 + i);
  EXPECT_NEAR(vmf::mean_alignment(x, std::vector<int>{0, 1, 2, 0, 1, 2}, w), 1.0, 1e-12);
}
