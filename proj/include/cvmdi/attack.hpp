#pragma once

#include <string>
#include <vector>

#include "cvmdi/gaussian.hpp"

// Two-mode coherent Gaussian attack on the protocol links: Eve injects a
// correlated thermal pair (E1, E2) through beam splitters of transmissivity
// tau_A, tau_B. The reservoir CM is [[wA I, G], [G, wB I]], G = diag(g, g'),
// constrained by positivity and the uncertainty principle.

namespace cvmdi {

struct AttackParams {
  double tau_a = 1.0;      // Alice-link transmissivity, (0, 1]
  double tau_b = 1.0;      // Bob-link transmissivity, (0, 1]
  double omega_a = 1.0;    // thermal variance injected in Alice's link, >= 1
  double omega_b = 1.0;    // thermal variance injected in Bob's link, >= 1
  double g = 0.0;          // q-quadrature correlation of (E1, E2)
  double g_prime = 0.0;    // p-quadrature correlation of (E1, E2)
};

enum class AttackClass {
  Unphysical,           // violates positivity or the uncertainty principle
  SeparableProduct,     // g = g' = 0: two independent entangling cloners
  SeparableCorrelated,  // correlated but separable reservoir
  Entangled,            // partial transpose eigenvalue below 1
};

std::string to_string(AttackClass c);

/// Extremal correlation reachable on the bisector g' = -g:
/// phi = min{ sqrt((wA-1)(wB+1)), sqrt((wA+1)(wB-1)) }.
double phi_bound(double omega_a, double omega_b);

/// Reservoir CM of the attack (no bona-fide validation).
CovarianceMatrix reservoir_cm(const AttackParams& p);

/// Least symplectic eigenvalue squared of the reservoir CM,
/// 2 nu^2 = Delta - sqrt(Delta^2 - 4 det V), Delta = wA^2 + wB^2 + 2 g g'.
double reservoir_nu_minus_sq(const AttackParams& p);

/// Partial-transpose analogue with Delta~ = wA^2 + wB^2 - 2 g g';
/// the reservoir is separable iff this is >= 1.
double reservoir_nu_tilde_sq(const AttackParams& p);

/// Bona-fide classification. Boundary inequalities are relaxed by 1e-9 so
/// the extremal EPR attacks (which sit exactly on nu_- = 1) count as physical.
AttackClass validate(const AttackParams& p);

/// Worst-case entangled attack: (g, g') = (-phi, +phi). Always physical.
AttackParams negative_epr_attack(double tau_a, double tau_b, double omega_a,
                                 double omega_b);

/// Most favourable entangled attack: (g, g') = (+phi, -phi).
AttackParams positive_epr_attack(double tau_a, double tau_b, double omega_a,
                                 double omega_b);

struct CorrelationPlanePoint {
  double g;
  double g_prime;
  AttackClass cls;
};

struct CorrelationPlaneScan {
  double omega_a;
  double omega_b;
  int grid_n;
  std::vector<CorrelationPlanePoint> points;  // row-major over (g, g')
};

/// Classify a grid_n x grid_n grid over the positivity square, endpoints at
/// +-sqrt(wA wB) (1 - 1e-6); positivity is an open condition.
CorrelationPlaneScan scan_correlation_plane(double omega_a, double omega_b,
                                            int grid_n);

std::string to_csv(const CorrelationPlaneScan& scan);
std::string to_json(const CorrelationPlaneScan& scan);

}  // namespace cvmdi
