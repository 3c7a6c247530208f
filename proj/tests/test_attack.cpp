#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "cvmdi/attack.hpp"
#include "test_util.hpp"

using namespace cvmdi;

TEST_CASE("phi bound") {
  CHECK(phi_bound(1.0, 3.0) == 0.0);
  CHECK(phi_bound(3.0, 1.0) == 0.0);
  CHECK(phi_bound(2.0, 2.0) == doctest::Approx(std::sqrt(3.0)));
  CHECK(phi_bound(5.0, 2.0) == doctest::Approx(std::sqrt(6.0)));
  CHECK_THROWS_AS(phi_bound(0.5, 2.0), std::domain_error);
}

TEST_CASE("validate: classification") {
  // No correlations: collective entangling-cloner attack, for any omegas.
  CHECK(validate({0.9, 0.8, 1.0, 1.0, 0.0, 0.0}) == AttackClass::SeparableProduct);
  CHECK(validate({0.9, 0.8, 7.0, 3.0, 0.0, 0.0}) == AttackClass::SeparableProduct);

  // omega = 1 collapses the accessible region to the origin.
  CHECK(validate({0.9, 0.8, 1.0, 1.0, 0.1, 0.0}) == AttackClass::Unphysical);
  CHECK(validate({0.9, 0.8, 1.0, 1.0, 0.0, -0.1}) == AttackClass::Unphysical);

  // omega < 1 is never bona fide.
  CHECK(validate({0.9, 0.8, 0.99, 1.0, 0.0, 0.0}) == AttackClass::Unphysical);

  // Positivity bound.
  CHECK(validate({0.9, 0.8, 5.0, 2.0, 3.3, 0.0}) == AttackClass::Unphysical);

  // Small same-sign correlations are separable but not a product.
  CHECK(validate({0.9, 0.8, 5.0, 2.0, 0.3, 0.3}) == AttackClass::SeparableCorrelated);
}

TEST_CASE("extremal EPR attacks sit on the physical boundary") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> omega(1.0, 6.0);
  std::uniform_real_distribution<double> tau(0.05, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double wa = omega(rng), wb = omega(rng);
    const AttackParams neg = negative_epr_attack(tau(rng), tau(rng), wa, wb);
    const AttackParams pos = positive_epr_attack(tau(rng), tau(rng), wa, wb);
    CHECK(validate(neg) != AttackClass::Unphysical);
    CHECK(validate(pos) != AttackClass::Unphysical);
    const double phi = phi_bound(wa, wb);
    if (phi == 0.0) {
      CHECK(validate(neg) == AttackClass::SeparableProduct);
    } else {
      CHECK(validate(neg) == AttackClass::Entangled);
      CHECK(validate(pos) == AttackClass::Entangled);
      CHECK(neg.g == doctest::Approx(-phi));
      CHECK(neg.g_prime == doctest::Approx(phi));
    }
  }

  // omega = 1 on both links: the extremal point is the origin.
  const AttackParams origin = negative_epr_attack(0.7, 0.7, 1.0, 1.0);
  CHECK(origin.g == 0.0);
  CHECK(origin.g_prime == 0.0);
}

TEST_CASE("phi is exactly the bisector boundary") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> omega(1.05, 6.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double wa = omega(rng), wb = omega(rng);
    const double phi = phi_bound(wa, wb);
    const double delta = 1e-6 * std::max(1.0, phi);
    CHECK(validate({0.9, 0.8, wa, wb, -(phi - delta), phi - delta}) !=
          AttackClass::Unphysical);
    CHECK(validate({0.9, 0.8, wa, wb, -(phi + delta), phi + delta}) ==
          AttackClass::Unphysical);

    // Bisection on the bisector against validate() recovers phi.
    double lo = 0.0, hi = std::sqrt(wa * wb);
    for (int it = 0; it < 60; ++it) {
      const double mid = (lo + hi) / 2.0;
      if (validate({0.9, 0.8, wa, wb, -mid, mid}) != AttackClass::Unphysical) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    CHECK(lo == doctest::Approx(phi).epsilon(1e-7));
  }
}

TEST_CASE("accessibility symmetry under global sign flip") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> omega(1.05, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double wa = omega(rng), wb = omega(rng);
    std::uniform_real_distribution<double> corr(-std::sqrt(wa * wb), std::sqrt(wa * wb));
    const double g = corr(rng), gp = corr(rng);
    const AttackClass c1 = validate({0.9, 0.8, wa, wb, g, gp});
    const AttackClass c2 = validate({0.9, 0.8, wa, wb, -g, -gp});
    CHECK(c1 == c2);
  }
}

TEST_CASE("accessible region is convex (sampled midpoints)") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> omega(1.2, 5.0);
  const double wa = omega(rng), wb = omega(rng);
  const double gmax = std::sqrt(wa * wb);
  std::uniform_real_distribution<double> corr(-gmax, gmax);
  int found = 0;
  while (found < 10000) {
    const AttackParams p1{0.9, 0.8, wa, wb, corr(rng), corr(rng)};
    const AttackParams p2{0.9, 0.8, wa, wb, corr(rng), corr(rng)};
    if (validate(p1) == AttackClass::Unphysical || validate(p2) == AttackClass::Unphysical) {
      continue;
    }
    ++found;
    const AttackParams mid{0.9, 0.8, wa, wb, (p1.g + p2.g) / 2.0,
                           (p1.g_prime + p2.g_prime) / 2.0};
    CHECK(validate(mid) != AttackClass::Unphysical);
  }
}

TEST_CASE("correlation-plane scan") {
  const CorrelationPlaneScan scan = scan_correlation_plane(5.0, 2.0, 81);
  int accessible = 0, entangled = 0, neg_quadrant_entangled = 0;
  for (const auto& pt : scan.points) {
    if (pt.cls == AttackClass::Unphysical) continue;
    ++accessible;
    if (pt.cls == AttackClass::Entangled) {
      ++entangled;
      // Entangled sub-regions live where g and g' have opposite signs.
      if (pt.g * pt.g_prime < 0.0) ++neg_quadrant_entangled;
    }
  }
  CHECK(accessible > 0);
  CHECK(entangled > 0);
  CHECK(neg_quadrant_entangled == entangled);

  // omega = 1: only the origin is accessible.
  const CorrelationPlaneScan collapsed = scan_correlation_plane(1.0, 1.0, 41);
  for (const auto& pt : collapsed.points) {
    if (pt.cls != AttackClass::Unphysical) {
      CHECK(std::abs(pt.g) < 1e-6);
      CHECK(std::abs(pt.g_prime) < 1e-6);
    }
  }

  // Serialization smoke checks.
  const std::string csv = to_csv(scan);
  CHECK(csv.rfind("g,g_prime,class\n", 0) == 0);
  CHECK(to_json(scan).find("\"points\"") != std::string::npos);
}

TEST_CASE("reservoir eigenvalue formulas match the generic eigensolver") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const AttackParams p = testing::random_accessible_attack(rng);
    const double nu_min = symplectic_eigenvalues(reservoir_cm(p)).min();
    CHECK(nu_min * nu_min == doctest::Approx(reservoir_nu_minus_sq(p)).epsilon(1e-8));
  }
}
