#include "cvmdi/attack.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cvmdi {

namespace {

constexpr double kBoundaryTol = 1e-9;

double reservoir_det(const AttackParams& p) {
  const double ww = p.omega_a * p.omega_b;
  return (ww - p.g * p.g) * (ww - p.g_prime * p.g_prime);
}

double least_ev_sq(double delta, double det_v) {
  const double disc = delta * delta - 4.0 * det_v;
  if (disc < 0.0) {
    // Complex pair: positivity already failed; report something < 1.
    return 0.0;
  }
  return (delta - std::sqrt(disc)) / 2.0;
}

}  // namespace

std::string to_string(AttackClass c) {
  switch (c) {
    case AttackClass::Unphysical: return "unphysical";
    case AttackClass::SeparableProduct: return "separable_product";
    case AttackClass::SeparableCorrelated: return "separable_correlated";
    case AttackClass::Entangled: return "entangled";
  }
  return "unknown";
}

double phi_bound(double omega_a, double omega_b) {
  if (!(omega_a >= 1.0) || !(omega_b >= 1.0)) {
    throw std::domain_error("phi_bound requires omegas >= 1");
  }
  return std::min(std::sqrt((omega_a - 1.0) * (omega_b + 1.0)),
                  std::sqrt((omega_a + 1.0) * (omega_b - 1.0)));
}

CovarianceMatrix reservoir_cm(const AttackParams& p) {
  return two_mode_thermal_cm(p.omega_a, p.omega_b, p.g, p.g_prime);
}

double reservoir_nu_minus_sq(const AttackParams& p) {
  const double delta = p.omega_a * p.omega_a + p.omega_b * p.omega_b + 2.0 * p.g * p.g_prime;
  return least_ev_sq(delta, reservoir_det(p));
}

double reservoir_nu_tilde_sq(const AttackParams& p) {
  const double delta = p.omega_a * p.omega_a + p.omega_b * p.omega_b - 2.0 * p.g * p.g_prime;
  return least_ev_sq(delta, reservoir_det(p));
}

AttackClass validate(const AttackParams& p) {
  if (!(p.omega_a >= 1.0) || !(p.omega_b >= 1.0)) return AttackClass::Unphysical;
  const double gmax = std::sqrt(p.omega_a * p.omega_b);
  if (std::abs(p.g) >= gmax + kBoundaryTol || std::abs(p.g_prime) >= gmax + kBoundaryTol) {
    return AttackClass::Unphysical;
  }
  if (reservoir_nu_minus_sq(p) < 1.0 - kBoundaryTol) return AttackClass::Unphysical;
  if (std::abs(p.g) <= kBoundaryTol && std::abs(p.g_prime) <= kBoundaryTol) {
    return AttackClass::SeparableProduct;
  }
  if (reservoir_nu_tilde_sq(p) < 1.0 - kBoundaryTol) return AttackClass::Entangled;
  return AttackClass::SeparableCorrelated;
}

AttackParams negative_epr_attack(double tau_a, double tau_b, double omega_a,
                                 double omega_b) {
  const double phi = phi_bound(omega_a, omega_b);
  return AttackParams{tau_a, tau_b, omega_a, omega_b, -phi, phi};
}

AttackParams positive_epr_attack(double tau_a, double tau_b, double omega_a,
                                 double omega_b) {
  const double phi = phi_bound(omega_a, omega_b);
  return AttackParams{tau_a, tau_b, omega_a, omega_b, phi, -phi};
}

CorrelationPlaneScan scan_correlation_plane(double omega_a, double omega_b,
                                            int grid_n) {
  if (grid_n < 2) throw std::invalid_argument("grid_n must be at least 2");
  const double gmax = std::sqrt(omega_a * omega_b) * (1.0 - 1e-6);
  CorrelationPlaneScan scan{omega_a, omega_b, grid_n, {}};
  scan.points.reserve(static_cast<std::size_t>(grid_n) * static_cast<std::size_t>(grid_n));
  for (int i = 0; i < grid_n; ++i) {
    const double g = -gmax + 2.0 * gmax * i / (grid_n - 1);
    for (int j = 0; j < grid_n; ++j) {
      const double gp = -gmax + 2.0 * gmax * j / (grid_n - 1);
      AttackParams p{1.0, 1.0, omega_a, omega_b, g, gp};
      scan.points.push_back({g, gp, validate(p)});
    }
  }
  return scan;
}

std::string to_csv(const CorrelationPlaneScan& scan) {
  std::ostringstream out;
  out.precision(17);
  out << "g,g_prime,class\n";
  for (const auto& pt : scan.points) {
    out << pt.g << ',' << pt.g_prime << ',' << to_string(pt.cls) << '\n';
  }
  return out.str();
}

std::string to_json(const CorrelationPlaneScan& scan) {
  nlohmann::json j;
  j["omega_a"] = scan.omega_a;
  j["omega_b"] = scan.omega_b;
  j["grid_n"] = scan.grid_n;
  auto& pts = j["points"];
  pts = nlohmann::json::array();
  for (const auto& pt : scan.points) {
    pts.push_back({{"g", pt.g}, {"g_prime", pt.g_prime}, {"class", to_string(pt.cls)}});
  }
  return j.dump(2);
}

}  // namespace cvmdi
