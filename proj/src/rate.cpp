#include "cvmdi/rate.hpp"

#include <cmath>
#include <string>

namespace cvmdi {

namespace {

constexpr double kE = 2.718281828459045235360287471352662498;

void require_physical(const AttackParams& p) {
  if (!(p.tau_a > 0.0 && p.tau_a <= 1.0 && p.tau_b > 0.0 && p.tau_b <= 1.0)) {
    throw infeasible_error("transmissivities must lie in (0, 1]");
  }
  if (validate(p) == AttackClass::Unphysical) {
    if (!(p.omega_a >= 1.0) || !(p.omega_b >= 1.0)) {
      throw infeasible_error("thermal variances must be >= 1 (vacuum units)");
    }
    const double gmax = std::sqrt(p.omega_a * p.omega_b);
    if (std::abs(p.g) >= gmax || std::abs(p.g_prime) >= gmax) {
      throw infeasible_error("correlations violate positivity: |g|, |g'| < sqrt(wA wB)");
    }
    throw infeasible_error("correlations violate the uncertainty principle (nu_- < 1)");
  }
}

void require_modulation(double mu) {
  if (!(mu > 1.0)) throw infeasible_error("modulation must satisfy mu > 1");
}

/// Asymptotic rate core in terms of (tau_a, tau_b, lambda, lambda').
double asymptotic_rate_from_lambdas(const DerivedAttackQuantities& q) {
  const double t_sum = q.tau_a + q.tau_b;
  const double t_diff = std::abs(q.tau_a - q.tau_b);
  const double chi = equivalent_noise(q);
  const double nu = std::sqrt((q.tau_a + q.lambda) * (q.tau_a + q.lambda_prime)) / q.tau_b;
  const double ll = q.lambda * q.lambda_prime;
  if (t_diff < kSymmetricTol) {
    if (ll <= 0.0) return std::numeric_limits<double>::infinity();
    return h_entropy(nu) +
           std::log2(8.0 * q.tau_b / (kE * kE * chi * std::sqrt(ll)));
  }
  return h_entropy(nu) - h_entropy(std::sqrt(ll) / t_diff) +
         std::log2(2.0 * t_sum / (kE * t_diff * chi));
}

RateResult asymptotic_result(const DerivedAttackQuantities& q) {
  RateResult r;
  r.rate = asymptotic_rate_from_lambdas(q);
  r.xi = 1.0;
  r.chi = equivalent_noise(q);
  r.epsilon = r.chi - chi_loss(q.tau_a, q.tau_b);
  return r;
}

DerivedAttackQuantities lambdas_direct(double tau_a, double tau_b, double lambda,
                                       double lambda_prime) {
  DerivedAttackQuantities q;
  q.tau_a = tau_a;
  q.tau_b = tau_b;
  q.u = 2.0 * std::sqrt((1.0 - tau_a) * (1.0 - tau_b));
  q.kappa = (lambda + lambda_prime) / 2.0;  // bookkeeping only
  q.lambda = lambda;
  q.lambda_prime = lambda_prime;
  return q;
}

struct PostRelaySpectrum {
  double nu_minus;
  double nu_plus;
};

// Symplectic spectrum of the post-relay CM through polynomial forms of
// Delta * theta theta' and det V * theta theta'. Both expand into
// positive-coefficient polynomials in mu, so the spectrum stays accurate at
// mu ~ 1e6 where the naive determinant cancels catastrophically:
//   Delta*tt = d^2 mu^4 + (l+l')T mu^3 + (2ll' + 8 tA tB) mu^2 + (l+l')T mu + d^2
//   detV*tt  = mu^2 (T + mu l)(T + mu l'),   d = tA - tB, T = tA + tB.
PostRelaySpectrum post_relay_spectrum(const DerivedAttackQuantities& q, double mu) {
  const double t_sum = q.tau_a + q.tau_b;
  const double d2 = (q.tau_a - q.tau_b) * (q.tau_a - q.tau_b);
  const double ls = q.lambda + q.lambda_prime;
  const double ll = q.lambda * q.lambda_prime;
  const double tt = q.theta(mu) * q.theta_prime(mu);
  const double p =
      (((d2 * mu + ls * t_sum) * mu + (2.0 * ll + 8.0 * q.tau_a * q.tau_b)) * mu +
       ls * t_sum) * mu + d2;
  const double det_v = mu * mu * (t_sum + mu * q.lambda) *
                       (t_sum + mu * q.lambda_prime) / tt;
  const double delta = p / tt;
  const double disc = std::max(0.0, delta * delta - 4.0 * det_v);
  const double nu_plus_sq = (delta + std::sqrt(disc)) / 2.0;
  const double nu_minus_sq = nu_plus_sq > 0.0 ? det_v / nu_plus_sq : 0.0;
  return {std::sqrt(nu_minus_sq), std::sqrt(nu_plus_sq)};
}

}  // namespace

double ProtocolParams::eta() const {
  if (!(mu > 1.0)) throw infeasible_error("eta undefined for mu <= 1");
  return (mu + 1.0) / std::sqrt(mu * mu - 1.0);
}

DerivedAttackQuantities derived_quantities(const AttackParams& p) {
  DerivedAttackQuantities q;
  q.tau_a = p.tau_a;
  q.tau_b = p.tau_b;
  q.kappa = (1.0 - p.tau_a) * p.omega_a + (1.0 - p.tau_b) * p.omega_b;
  q.u = 2.0 * std::sqrt((1.0 - p.tau_a) * (1.0 - p.tau_b));
  q.lambda = q.kappa - q.u * p.g;
  q.lambda_prime = q.kappa + q.u * p.g_prime;
  // Positivity of the lambdas holds on the whole bona-fide region
  // (kappa >= u sqrt(wA wB) > u |g| by AM-GM); a violation means the inputs
  // escaped validation.
  const double slack = -1e-12 * std::max(1.0, q.kappa);
  if (q.lambda < slack || q.lambda_prime < slack) {
    throw std::logic_error("derived lambda went negative for a bona-fide attack: lambda=" +
                           std::to_string(q.lambda) + " lambda'=" +
                           std::to_string(q.lambda_prime));
  }
  q.lambda = std::max(0.0, q.lambda);
  q.lambda_prime = std::max(0.0, q.lambda_prime);
  return q;
}

double chi_loss(double tau_a, double tau_b) {
  return 2.0 * (tau_a + tau_b) / (tau_a * tau_b);
}

double equivalent_noise(const DerivedAttackQuantities& q) {
  const double t_sum = q.tau_a + q.tau_b;
  return t_sum / (q.tau_a * q.tau_b) *
         std::sqrt((t_sum + q.lambda) * (t_sum + q.lambda_prime));
}

NoiseBudget noise_budget(const AttackParams& p) {
  const double chi = equivalent_noise(derived_quantities(p));
  const double loss = chi_loss(p.tau_a, p.tau_b);
  return {chi, loss, chi - loss};
}

CovarianceMatrix post_relay_cm_closed(const DerivedAttackQuantities& q, double mu) {
  require_modulation(mu);
  const double k = mu * mu - 1.0;
  const double th = q.theta(mu);
  const double thp = q.theta_prime(mu);
  const double rt = std::sqrt(q.tau_a * q.tau_b);
  Eigen::Matrix4d v = mu * Eigen::Matrix4d::Identity();
  v(0, 0) -= k * q.tau_a / th;
  v(1, 1) -= k * q.tau_a / thp;
  v(2, 2) -= k * q.tau_b / th;
  v(3, 3) -= k * q.tau_b / thp;
  v(0, 2) = v(2, 0) = k * rt / th;
  v(1, 3) = v(3, 1) = -k * rt / thp;
  return CovarianceMatrix(v);
}

CovarianceMatrix post_relay_cm_closed(const AttackParams& p, double mu) {
  require_physical(p);
  return post_relay_cm_closed(derived_quantities(p), mu);
}

CovarianceMatrix post_relay_cm_pipeline(const AttackParams& p, double mu) {
  require_physical(p);
  require_modulation(mu);
  // Input state on modes (a, A, b, B, E1, E2).
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(12, 12);
  v.block<4, 4>(0, 0) = epr_cm(mu).matrix();
  v.block<4, 4>(4, 4) = epr_cm(mu).matrix();
  v.block<4, 4>(8, 8) = reservoir_cm(p).matrix();
  CovarianceMatrix input(v);
  // Reorder to (a, b, A, E1, E2, B): the beam splitters act on (A, E1) and
  // (E2, B), the latter with the transposed convention.
  CovarianceMatrix ordered = permute_modes(input, {0, 2, 1, 4, 5, 3});
  const Eigen::MatrixXd s = beam_splitter_symplectic(p.tau_a, 2, 3, 6) *
                            beam_splitter_symplectic(p.tau_b, 4, 5, 6).transpose();
  CovarianceMatrix propagated = apply_symplectic(ordered, s);
  CovarianceMatrix kept = partial_trace(propagated, {0, 1, 2, 5});
  return condition_on_bell(kept);
}

Eigen::Matrix2d conditional_cm_bob_given_relay(const DerivedAttackQuantities& q,
                                               double mu) {
  require_modulation(mu);
  const double k = mu * mu - 1.0;
  Eigen::Matrix2d v = Eigen::Matrix2d::Zero();
  v(0, 0) = mu - k * q.tau_b / q.theta(mu);
  v(1, 1) = mu - k * q.tau_b / q.theta_prime(mu);
  return v;
}

Eigen::Matrix2d conditional_cm_bob_given_relay_alice(
    const DerivedAttackQuantities& q, double mu) {
  require_modulation(mu);
  const double k = mu * mu - 1.0;
  Eigen::Matrix2d v = Eigen::Matrix2d::Zero();
  v(0, 0) = mu - k * q.tau_b / (q.tau_a + q.tau_b * mu + q.lambda);
  v(1, 1) = mu - k * q.tau_b / (q.tau_a + q.tau_b * mu + q.lambda_prime);
  return v;
}

double AsymptoticTerm::at(double mu) const { return coeff * std::pow(mu, mu_power); }

AsymptoticSpectrum asymptotic_spectrum(const AttackParams& p) {
  require_physical(p);
  const DerivedAttackQuantities q = derived_quantities(p);
  AsymptoticSpectrum spec;
  const double t_diff = std::abs(q.tau_a - q.tau_b);
  spec.symmetric_branch = t_diff < kSymmetricTol;
  if (spec.symmetric_branch) {
    spec.nu1 = {std::sqrt(q.lambda / (2.0 * q.tau_b)), 0.5};
    spec.nu2 = {std::sqrt(q.lambda_prime / (2.0 * q.tau_b)), 0.5};
  } else {
    spec.nu1 = {t_diff / (q.tau_a + q.tau_b), 1.0};
    spec.nu2 = {std::sqrt(q.lambda * q.lambda_prime) / t_diff, 0.0};
  }
  return spec;
}

double conditional_eigenvalue(const AttackParams& p) {
  require_physical(p);
  const DerivedAttackQuantities q = derived_quantities(p);
  return std::sqrt((q.tau_a + q.lambda) * (q.tau_a + q.lambda_prime)) / q.tau_b;
}

MutualInformation mutual_information(const DerivedAttackQuantities& q, double mu) {
  const Eigen::Matrix2d vb = conditional_cm_bob_given_relay(q, mu);
  const Eigen::Matrix2d vba = conditional_cm_bob_given_relay_alice(q, mu);
  const double num = 1.0 + vb.determinant() + vb.trace();
  const double den = 1.0 + vba.determinant() + vba.trace();
  const double sigma = num / den;
  return {0.5 * std::log2(sigma), mu / std::sqrt(sigma)};
}

double holevo_bound(const DerivedAttackQuantities& q, double mu) {
  require_modulation(mu);
  const PostRelaySpectrum spec = post_relay_spectrum(q, mu);
  // Round-off can push a pure-state eigenvalue epsilon-below 1.
  const double s_ab = h_entropy(spec.nu_minus, 1e-9) + h_entropy(spec.nu_plus, 1e-9);
  // nu of V_b|gamma,alpha via the cancellation-free quotient
  // (mu tA + mu lambda + tB)/(tA + tB mu + lambda), per quadrature.
  const double vq = (mu * q.tau_a + mu * q.lambda + q.tau_b) /
                    (q.tau_a + q.tau_b * mu + q.lambda);
  const double vp = (mu * q.tau_a + mu * q.lambda_prime + q.tau_b) /
                    (q.tau_a + q.tau_b * mu + q.lambda_prime);
  return s_ab - h_entropy(std::sqrt(vq * vp), 1e-9);
}

double holevo_bound_asymptotic(const DerivedAttackQuantities& q, double mu) {
  const double t_diff = std::abs(q.tau_a - q.tau_b);
  const double t_sum = q.tau_a + q.tau_b;
  const double ll = std::sqrt(q.lambda * q.lambda_prime);
  double s_ab;
  if (t_diff < kSymmetricTol) {
    s_ab = std::log2(kE * kE * ll * mu / (8.0 * q.tau_b));
  } else {
    s_ab = h_entropy(ll / t_diff) + std::log2(kE * t_diff * mu / (2.0 * t_sum));
  }
  const double nu = std::sqrt((q.tau_a + q.lambda) * (q.tau_a + q.lambda_prime)) / q.tau_b;
  return s_ab - h_entropy(nu);
}

RateResult rate_general(const AttackParams& p, std::optional<double> mu, double xi) {
  require_physical(p);
  if (!(xi > 0.0 && xi <= 1.0)) throw infeasible_error("xi must lie in (0, 1]");
  const DerivedAttackQuantities q = derived_quantities(p);
  if (!mu.has_value()) {
    if (xi != 1.0) {
      throw infeasible_error(
          "asymptotic rate requires xi = 1; pass a finite mu for xi < 1");
    }
    return asymptotic_result(q);
  }
  require_modulation(*mu);
  RateResult r;
  const MutualInformation mi = mutual_information(q, *mu);
  r.i_ab = mi.i_ab;
  r.i_e = holevo_bound(q, *mu);
  r.rate = xi * mi.i_ab - *r.i_e;
  r.xi = xi;
  r.chi = equivalent_noise(q);
  r.epsilon = r.chi - chi_loss(q.tau_a, q.tau_b);
  return r;
}

RateResult rate_min_fixed_thermal(double tau_a, double tau_b, double omega_a,
                                  double omega_b) {
  const AttackParams worst = negative_epr_attack(tau_a, tau_b, omega_a, omega_b);
  require_physical(worst);
  const DerivedAttackQuantities q = derived_quantities(worst);
  const double lam = q.kappa + q.u * phi_bound(omega_a, omega_b);
  const double t_sum = tau_a + tau_b;
  const double t_diff = std::abs(tau_a - tau_b);
  RateResult r;
  r.xi = 1.0;
  r.chi = equivalent_noise(q);
  r.epsilon = r.chi - chi_loss(tau_a, tau_b);
  if (t_diff < kSymmetricTol) {
    const double tau = tau_b;
    if (lam <= 0.0) {
      r.rate = std::numeric_limits<double>::infinity();
      return r;
    }
    r.rate = h_entropy((tau + lam) / tau) +
             std::log2(4.0 * tau * tau / (kE * kE * (2.0 * tau + lam) * lam));
    return r;
  }
  r.rate = h_entropy((tau_a + lam) / tau_b) - h_entropy(lam / t_diff) +
           std::log2(2.0 * tau_a * tau_b / (kE * t_diff * (t_sum + lam)));
  return r;
}

RateResult rate_min_fixed_chi(double tau_a, double tau_b, double chi) {
  if (!(tau_a > 0.0 && tau_a <= 1.0 && tau_b > 0.0 && tau_b <= 1.0)) {
    throw infeasible_error("transmissivities must lie in (0, 1]");
  }
  const double loss = chi_loss(tau_a, tau_b);
  if (chi < loss - 1e-12) {
    throw infeasible_error("equivalent noise below the loss floor: chi < chi_loss = " +
                           std::to_string(loss));
  }
  const double t_sum = tau_a + tau_b;
  const double t_diff = std::abs(tau_a - tau_b);
  RateResult r;
  r.xi = 1.0;
  r.chi = chi;
  r.epsilon = chi - loss;
  if (t_diff < kSymmetricTol) {
    if (chi <= 4.0) {
      r.rate = std::numeric_limits<double>::infinity();
      return r;
    }
    r.rate = h_entropy(chi / 2.0 - 1.0) +
             std::log2(16.0 / (kE * kE * chi * (chi - 4.0)));
    return r;
  }
  r.rate = h_entropy(tau_a * chi / t_sum - 1.0) -
           h_entropy((tau_a * tau_b * chi - t_sum * t_sum) / (t_diff * t_sum)) +
           std::log2(2.0 * t_sum / (kE * t_diff * chi));
  return r;
}

RateResult rate_fixed_chi_finite(double tau_a, double tau_b, double chi,
                                 double mu, double xi) {
  const double loss = chi_loss(tau_a, tau_b);
  if (chi < loss - 1e-12) {
    throw infeasible_error("equivalent noise below the loss floor: chi < chi_loss = " +
                           std::to_string(loss));
  }
  require_modulation(mu);
  if (!(xi > 0.0 && xi <= 1.0)) throw infeasible_error("xi must lie in (0, 1]");
  const double t_sum = tau_a + tau_b;
  // Bisector attack with this chi: lambda = lambda' = tA tB chi/(tA+tB) - tA - tB.
  const double lam = std::max(0.0, tau_a * tau_b * chi / t_sum - t_sum);
  const DerivedAttackQuantities q = lambdas_direct(tau_a, tau_b, lam, lam);
  RateResult r;
  const MutualInformation mi = mutual_information(q, mu);
  r.i_ab = mi.i_ab;
  r.i_e = holevo_bound(q, mu);
  r.rate = xi * mi.i_ab - *r.i_e;
  r.xi = xi;
  r.chi = chi;
  r.epsilon = chi - loss;
  return r;
}

RateResult rate_pure_loss(double tau_a, double tau_b) {
  if (!(tau_a > 0.0 && tau_a <= 1.0 && tau_b > 0.0 && tau_b <= 1.0)) {
    throw infeasible_error("transmissivities must lie in (0, 1]");
  }
  const double t_diff = std::abs(tau_a - tau_b);
  RateResult r;
  r.xi = 1.0;
  r.chi = chi_loss(tau_a, tau_b);
  r.epsilon = 0.0;
  if (t_diff < kSymmetricTol) {
    const double tau = tau_b;
    if (tau >= 1.0) {
      r.rate = std::numeric_limits<double>::infinity();
      return r;
    }
    r.rate = h_entropy((2.0 - tau) / tau) +
             std::log2(tau * tau / (kE * kE * (1.0 - tau)));
    return r;
  }
  r.rate = h_entropy((2.0 - tau_b) / tau_b) -
           h_entropy((2.0 - tau_a - tau_b) / t_diff) +
           std::log2(tau_a * tau_b / (kE * t_diff));
  return r;
}

RateResult rate_limit_tau_a_to_1(double tau_b, double omega_b) {
  if (!(tau_b > 0.0 && tau_b < 1.0)) {
    throw infeasible_error("limit rate requires tau_b in (0, 1)");
  }
  if (!(omega_b >= 1.0)) throw infeasible_error("omega_b must be >= 1");
  RateResult r;
  r.xi = 1.0;
  const double lam = (1.0 - tau_b) * omega_b;
  r.chi = (1.0 + tau_b) / tau_b * (1.0 + tau_b + lam);
  r.epsilon = r.chi - chi_loss(1.0, tau_b);
  r.rate = h_entropy((1.0 + lam) / tau_b) - h_entropy(omega_b) +
           std::log2(2.0 * tau_b / (kE * (1.0 - tau_b) * (1.0 + tau_b + lam)));
  return r;
}

RateResult rate_limit_tau_b_to_1(double tau_a, double omega_a) {
  if (!(tau_a > 0.0 && tau_a < 1.0)) {
    throw infeasible_error("limit rate requires tau_a in (0, 1)");
  }
  if (!(omega_a >= 1.0)) throw infeasible_error("omega_a must be >= 1");
  RateResult r;
  r.xi = 1.0;
  const double lam = (1.0 - tau_a) * omega_a;
  r.chi = (1.0 + tau_a) / tau_a * (1.0 + tau_a + lam);
  r.epsilon = r.chi - chi_loss(tau_a, 1.0);
  r.rate = h_entropy(tau_a + lam) - h_entropy(omega_a) +
           std::log2(2.0 * tau_a / (kE * (1.0 - tau_a) * (1.0 + tau_a + lam)));
  return r;
}

}  // namespace cvmdi
