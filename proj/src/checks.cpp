#include "vmfcil/checks.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "vmfcil/types.hpp"
#include "vmfcil/vmf.hpp"

namespace vmfcil::checks {

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

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

double rel_err(const Mat& a, const Mat& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

// Central differences over every entry of `x` for the scalar function f.
Mat numeric_grad(Mat x, const std::function<double(const Mat&)>& f, double h = 1e-5) {
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

double numeric_scalar(double x, const std::function<double(double)>& f, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

struct Shape {
  int d, c, b;
};

Shape shape_for(int k) {
  static const int dims[] = {4, 8, 32};
  static const int classes[] = {3, 10};
  static const int batches[] = {8, 32};
  return {dims[k % 3], classes[(k / 3) % 2], batches[(k / 6) % 2]};
}

}  // namespace

bool Report::passed() const {
  for (const auto& r : results)
    if (!r.passed) return false;
  return !results.empty();
}

std::string Report::to_json() const {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& r : results)
    checks.push_back({{"name", r.name}, {"passed", r.passed}, {"metric", r.metric}, {"threshold", r.threshold},
                      {"cases", r.cases}, {"detail", r.detail}});
  return nlohmann::json{{"passed", passed()}, {"seconds", seconds}, {"checks", checks}}.dump(2);
}

CheckResult kl_monte_carlo(std::uint64_t seed, int cases, int draws) {
  static const int dims[] = {3, 8, 64};
  static const double kappas[] = {0.5, 2.0, 10.0, 50.0};
  Rng rng = make_rng(seed, 11);
  int within = 0;
  double worst = 0.0;
  for (int k = 0; k < cases; ++k) {
    const int d = dims[(k % 12) / 4];
    const double kappa = kappas[k % 4];
    const Vec mu_p = random_unit(d, rng);
    const Vec mu_q = random_unit(d, rng);
    const Mat z = vmf::sample(mu_p, kappa, draws, rng);
    // Both densities share the normalizer, so log p - log q = kappa <z, mu_p - mu_q>.
    const Vec diff = kappa * (z * (mu_p - mu_q));
    const double mean = diff.mean();
    const double sd = std::sqrt((diff.array() - mean).square().sum() / (draws - 1));
    const double se = sd / std::sqrt(static_cast<double>(draws));
    const double z_score = std::abs(mean - vmf::kl(mu_p, mu_q, kappa)) / std::max(se, 1e-300);
    worst = std::max(worst, z_score);
    within += z_score <= 3.0;
  }
  CheckResult r{"kl_monte_carlo", false, static_cast<double>(within) / cases, 0.95, cases, ""};
  r.passed = r.metric >= r.threshold;
  std::ostringstream os;
  os << within << "/" << cases << " within 3 SE; worst |z| = " << worst << "; draws = " << draws;
  r.detail = os.str();
  return r;
}

CheckResult bessel_closed_form() {
  CheckResult r{"bessel_ratio_d3", true, 0.0, 1e-10, 0, ""};
  for (double kappa = 0.1; kappa <= 100.0 + 1e-9; kappa *= 1.05) {
    const double expect = 1.0 / std::tanh(kappa) - 1.0 / kappa;
    r.metric = std::max(r.metric, rel_err(vmf::bessel_ratio(3, kappa), expect));
    ++r.cases;
  }
  r.passed = r.metric < r.threshold;
  r.detail = "kappa on a geometric grid over [0.1, 100]";
  return r;
}

CheckResult bessel_derivative() {
  CheckResult r{"bessel_ratio_derivative", true, 0.0, 1e-6, 0, ""};
  for (int d : {2, 3, 8, 64, 512}) {
    for (double kappa = 0.1; kappa <= 1000.0; kappa *= 1.3) {
      const double h = 1e-3 * std::max(kappa, 1.0);
      auto a = [d](double k) { return vmf::bessel_ratio(d, k); };
      const double fd = (-a(kappa + 2 * h) + 8 * a(kappa + h) - 8 * a(kappa - h) + a(kappa - 2 * h)) / (12 * h);
      r.metric = std::max(r.metric, rel_err(vmf::bessel_ratio_derivative(d, kappa), fd));
      ++r.cases;
    }
  }
  r.passed = r.metric < r.threshold;
  r.detail = "d in {2,3,8,64,512}, kappa on a geometric grid over [0.1, 1000]";
  return r;
}

CheckResult gradient_nll(std::uint64_t seed, int instances) {
  Rng rng = make_rng(seed, 12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  CheckResult r{"gradient_nll", true, 0.0, 1e-4, instances, "features, weights, log kappa"};
  for (int k = 0; k < instances; ++k) {
    const auto [d, c, b] = shape_for(k);
    const Mat x = random_mat(b, d, rng);
    const Mat w = random_mat(c, d, rng);
    const double rho = std::log(2.0 + 10.0 * unif(rng));
    Mat y = Mat::Zero(b, c);
    for (int i = 0; i < b; ++i) {
      const double lam = unif(rng);
      y(i, static_cast<int>(unif(rng) * c) % c) += lam;
      y(i, static_cast<int>(unif(rng) * c) % c) += 1.0 - lam;
    }
    const vmf::LossGrad g = vmf::nll_soft_with_grad(x, w, rho, y);
    auto loss = [&](const Mat& xx, const Mat& ww, double rr) { return vmf::nll_soft_with_grad(xx, ww, rr, y).value; };
    r.metric = std::max(r.metric, rel_err(g.d_features, numeric_grad(x, [&](const Mat& m) { return loss(m, w, rho); })));
    r.metric = std::max(r.metric, rel_err(g.d_weights, numeric_grad(w, [&](const Mat& m) { return loss(x, m, rho); })));
    r.metric = std::max(r.metric, rel_err(g.d_log_kappa, numeric_scalar(rho, [&](double v) { return loss(x, w, v); })));
  }
  r.passed = r.metric < r.threshold;
  return r;
}

CheckResult gradient_matching(std::uint64_t seed, int instances) {
  Rng rng = make_rng(seed, 13);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  CheckResult r{"gradient_matching", true, 0.0, 1e-4, instances, "features, weights, log kappa"};
  for (int k = 0; k < instances; ++k) {
    const auto [d, c, b] = shape_for(k);
    const Mat x = random_mat(b, d, rng);
    const Mat w = random_mat(c, d, rng);
    const double rho = std::log(1.0 + 20.0 * unif(rng));
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] = i % c;
    const vmf::LossGrad g = vmf::matching_with_grad(x, labels, w, rho);
    auto loss = [&](const Mat& xx, const Mat& ww, double rr) { return vmf::matching_with_grad(xx, labels, ww, rr).value; };
    r.metric = std::max(r.metric, rel_err(g.d_features, numeric_grad(x, [&](const Mat& m) { return loss(m, w, rho); })));
    r.metric = std::max(r.metric, rel_err(g.d_weights, numeric_grad(w, [&](const Mat& m) { return loss(x, m, rho); })));
    r.metric = std::max(r.metric, rel_err(g.d_log_kappa, numeric_scalar(rho, [&](double v) { return loss(x, w, v); })));
  }
  r.passed = r.metric < r.threshold;
  return r;
}

Report run_all(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Report rep;
  rep.results.push_back(kl_monte_carlo(seed));
  rep.results.push_back(bessel_closed_form());
  rep.results.push_back(bessel_derivative());
  rep.results.push_back(gradient_nll(seed));
  rep.results.push_back(gradient_matching(seed));
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace vmfcil::checks
