#pragma once

#include <optional>
#include <stdexcept>

#include "cvmdi/attack.hpp"
#include "cvmdi/gaussian.hpp"

// Secret-key rates of the coherent-state relay protocol under the two-mode
// Gaussian attack. Two evaluation paths are kept deliberately separate so
// they can cross-validate each other:
//   - closed forms (post-relay CM, asymptotic spectra, rate formulas),
//   - a finite-modulation numeric path driven by the symplectic eigensolver.

namespace cvmdi {

/// Parameter infeasible or attack unphysical; the CLI maps this to exit 2.
struct infeasible_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Finite-modulation default: phi = 65 vacuum units of signal modulation,
/// the regime of the experimental cross-checks.
inline constexpr double kDefaultMu = 66.0;

/// Branch switch between the asymmetric and symmetric rate formulas. Small
/// enough that the two branches agree well within 1e-6 bits at the seam.
inline constexpr double kSymmetricTol = 1e-7;

/// Modulation bookkeeping: total variance mu = phi + 1 and the heterodyne
/// back-projection factor eta = (mu+1)/sqrt(mu^2-1) (-> 1 as mu -> inf).
struct ProtocolParams {
  double mu;

  static ProtocolParams from_phi(double phi) { return {phi + 1.0}; }
  double phi() const { return mu - 1.0; }
  double eta() const;
};

/// Attack combinations the rate depends on:
///   kappa = (1-tA) wA + (1-tB) wB,   u = 2 sqrt((1-tA)(1-tB)),
///   lambda = kappa - u g,            lambda' = kappa + u g'.
struct DerivedAttackQuantities {
  double tau_a;
  double tau_b;
  double kappa;
  double u;
  double lambda;
  double lambda_prime;

  double theta(double mu) const { return (tau_a + tau_b) * mu + lambda; }
  double theta_prime(double mu) const { return (tau_a + tau_b) * mu + lambda_prime; }
};

/// Derive (kappa, u, lambda, lambda') from attack parameters. Lambdas are
/// nonnegative for every bona-fide attack; a negative value indicates an
/// internal inconsistency and throws.
DerivedAttackQuantities derived_quantities(const AttackParams& p);

/// Equivalent-noise decomposition chi = chi_loss + epsilon.
struct NoiseBudget {
  double chi;
  double chi_loss;
  double epsilon;
};

/// chi_loss = 2 (tA + tB) / (tA tB), the loss-only equivalent noise.
double chi_loss(double tau_a, double tau_b);

/// Asymptotic equivalent noise
/// chi = (tA+tB)/(tA tB) sqrt((tA+tB+lambda)(tA+tB+lambda')).
double equivalent_noise(const DerivedAttackQuantities& q);

NoiseBudget noise_budget(const AttackParams& p);

/// Rate bundle. i_ab / i_e are populated by finite-modulation evaluations;
/// asymptotic formulas yield the rate directly (both informations diverge
/// logarithmically in mu, only the difference converges). epsilon may be
/// negative for attacks whose entanglement assists the Bell detection.
struct RateResult {
  std::optional<double> i_ab;
  std::optional<double> i_e;
  double rate = 0.0;
  double xi = 1.0;
  double chi = 0.0;
  double epsilon = 0.0;
};

/// Post-relay CM of the remote modes, closed form: mu I4 minus the
/// (mu^2-1)-weighted correction with entries tau/theta.
CovarianceMatrix post_relay_cm_closed(const AttackParams& p, double mu);
CovarianceMatrix post_relay_cm_closed(const DerivedAttackQuantities& q, double mu);

/// Independent oracle for the closed form: builds the full six-mode input
/// state, applies the beam-splitter symplectic, traces out Eve's outputs and
/// conditions on the Bell detection, using gaussian-core primitives only.
CovarianceMatrix post_relay_cm_pipeline(const AttackParams& p, double mu);

/// Conditional CMs of Bob's remote mode (diagonal closed forms).
Eigen::Matrix2d conditional_cm_bob_given_relay(const DerivedAttackQuantities& q,
                                               double mu);
Eigen::Matrix2d conditional_cm_bob_given_relay_alice(
    const DerivedAttackQuantities& q, double mu);

/// One term of a large-mu symplectic eigenvalue, nu ~ coeff * mu^power.
struct AsymptoticTerm {
  double coeff;
  double mu_power;

  double at(double mu) const;
};

struct AsymptoticSpectrum {
  AsymptoticTerm nu1;
  AsymptoticTerm nu2;
  bool symmetric_branch;
};

/// Large-mu spectrum of the post-relay CM:
///   {|tA-tB| mu/(tA+tB), sqrt(lambda lambda')/|tA-tB|}   for tA != tB,
///   {sqrt(lambda mu/(2 tB)), sqrt(lambda' mu/(2 tB))}    for tA == tB.
AsymptoticSpectrum asymptotic_spectrum(const AttackParams& p);

/// Large-mu symplectic eigenvalue of V_b|gamma,alpha:
/// nu = sqrt((tA+lambda)(tA+lambda'))/tB.
double conditional_eigenvalue(const AttackParams& p);

/// Finite-modulation mutual information (bits/use) and the matching
/// signal-to-noise decomposition chi = mu / sqrt(Sigma).
struct MutualInformation {
  double i_ab;
  double chi_finite;
};
MutualInformation mutual_information(const DerivedAttackQuantities& q, double mu);

/// Finite-modulation Holevo bound S(rho_ab|g) - S(rho_b|g,a), in bits.
double holevo_bound(const DerivedAttackQuantities& q, double mu);

/// Large-mu Holevo bound at a given mu (grows like log2 mu).
double holevo_bound_asymptotic(const DerivedAttackQuantities& q, double mu);

/// General rate. Without mu: the asymptotic closed form (requires xi = 1).
/// With mu: xi * I_AB - I_E evaluated numerically at that modulation.
/// Throws infeasible_error when the attack is unphysical.
RateResult rate_general(const AttackParams& p,
                        std::optional<double> mu = std::nullopt, double xi = 1.0);

/// Minimum asymptotic rate over all accessible (g, g') at fixed thermal
/// noise; attained by the negative EPR attack, lambda_opt = kappa + u phi.
RateResult rate_min_fixed_thermal(double tau_a, double tau_b, double omega_a,
                                  double omega_b);

/// Minimum asymptotic rate at fixed equivalent noise (three-parameter form).
/// Requires chi >= chi_loss; throws infeasible_error otherwise.
RateResult rate_min_fixed_chi(double tau_a, double tau_b, double chi);

/// Finite-modulation companion of rate_min_fixed_chi: evaluates the bisector
/// attack implied by chi (lambda = tA tB chi/(tA+tB) - tA - tB) at finite mu.
RateResult rate_fixed_chi_finite(double tau_a, double tau_b, double chi,
                                 double mu, double xi = 1.0);

/// Pure-loss minimum rate (epsilon = 0).
RateResult rate_pure_loss(double tau_a, double tau_b);

/// Limit configurations: the relay next to Alice reproduces the
/// reverse-reconciliation point-to-point rate, next to Bob the
/// direct-reconciliation one.
RateResult rate_limit_tau_a_to_1(double tau_b, double omega_b);
RateResult rate_limit_tau_b_to_1(double tau_a, double omega_a);

}  // namespace cvmdi
