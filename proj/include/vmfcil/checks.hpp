#ifndef VMFCIL_CHECKS_HPP_
#define VMFCIL_CHECKS_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace vmfcil::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;     // worst observed error, or pass fraction for the KL check
  double threshold = 0.0;
  int cases = 0;
  std::string detail;
};

struct Report {
  std::vector<CheckResult> results;
  double seconds = 0.0;

  bool passed() const;
  std::string to_json() const;
};

/// Closed-form KL against a Monte-Carlo mean of log p - log q over `draws`
/// samples of p. Case k uses grid cell k mod 12 of d in {3, 8, 64} x
/// kappa in {0.5, 2, 10, 50}; passes when >= 95% land within 3 standard errors.
CheckResult kl_monte_carlo(std::uint64_t seed, int cases = 50, int draws = 200000);

/// A_3 against coth(k) - 1/k on [0.1, 100].
CheckResult bessel_closed_form();
/// 1 - A^2 - (d-1)A/k against a five-point finite difference of A_d.
CheckResult bessel_derivative();

/// Analytic vs central-difference gradients of the soft-label NLL and the
/// matching loss w.r.t. features, weights and log kappa.
CheckResult gradient_nll(std::uint64_t seed, int instances = 20);
CheckResult gradient_matching(std::uint64_t seed, int instances = 20);

Report run_all(std::uint64_t seed);

}  // namespace vmfcil::checks

#endif  // VMFCIL_CHECKS_HPP_
