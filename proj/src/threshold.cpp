#include "cvmdi/threshold.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cvmdi {

double tau_from_distance(double d_km, double loss_rate_db_per_km) {
  if (!(d_km >= 0.0)) throw std::domain_error("distance must be >= 0");
  if (!(loss_rate_db_per_km > 0.0)) throw std::domain_error("loss rate must be > 0");
  return std::pow(10.0, -loss_rate_db_per_km * d_km / 10.0);
}

double distance_from_tau(double tau, double loss_rate_db_per_km) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::domain_error("tau must lie in (0, 1]");
  if (!(loss_rate_db_per_km > 0.0)) throw std::domain_error("loss rate must be > 0");
  return -10.0 * std::log10(tau) / loss_rate_db_per_km;
}

std::string to_string(ThresholdFlag f) {
  switch (f) {
    case ThresholdFlag::Ok: return "ok";
    case ThresholdFlag::NoRate: return "no_rate";
    case ThresholdFlag::Capped: return "capped";
  }
  return "unknown";
}

double rate_at_distances(double r_km, double d_km, double epsilon,
                         double loss_rate_db_per_km) {
  const double tau_a = tau_from_distance(r_km, loss_rate_db_per_km);
  const double tau_b = tau_from_distance(d_km, loss_rate_db_per_km);
  return rate_min_fixed_chi(tau_a, tau_b, chi_loss(tau_a, tau_b) + epsilon).rate;
}

MaxDistanceResult max_bob_distance(double r_km, double epsilon,
                                   double loss_rate_db_per_km,
                                   const ThresholdOptions& opts) {
  if (!(epsilon >= 0.0)) throw std::domain_error("epsilon must be >= 0");
  const auto rate_at = [&](double d) {
    return rate_at_distances(r_km, d, epsilon, loss_rate_db_per_km);
  };
  if (!(rate_at(0.0) > 0.0)) return {0.0, ThresholdFlag::NoRate};
  if (rate_at(opts.cap_km) > 0.0) return {opts.cap_km, ThresholdFlag::Capped};

  // Bracket [lo, hi] with R(lo) > 0 > R(hi) by doubling, then bisect.
  double lo = 0.0;
  double hi = 1.0;
  while (hi < opts.cap_km && rate_at(hi) > 0.0) {
    lo = hi;
    hi = std::min(2.0 * hi, opts.cap_km);
  }
  for (int it = 0; it < opts.max_iterations; ++it) {
    const double mid = (lo + hi) / 2.0;
    const double r = rate_at(mid);
    if (std::abs(r) < opts.rate_tol_bits) return {mid, ThresholdFlag::Ok};
    (r > 0.0 ? lo : hi) = mid;
  }
  return {(lo + hi) / 2.0, ThresholdFlag::Ok};
}

ThresholdCurve threshold_curve(const std::vector<double>& r_values_km, double epsilon,
                               double loss_rate_db_per_km,
                               const ThresholdOptions& opts) {
  ThresholdCurve curve;
  curve.epsilon = epsilon;
  curve.loss_rate_db_per_km = loss_rate_db_per_km;
  curve.points.reserve(r_values_km.size());
  for (double r : r_values_km) {
    const MaxDistanceResult res = max_bob_distance(r, epsilon, loss_rate_db_per_km, opts);
    curve.points.push_back({r, res.d_max_km, res.flag});
  }
  return curve;
}

RateSurface rate_surface(const std::vector<double>& tau_grid_a,
                         const std::vector<double>& tau_grid_b, double epsilon) {
  RateSurface surface;
  surface.tau_a = tau_grid_a;
  surface.tau_b = tau_grid_b;
  surface.epsilon = epsilon;
  surface.rate.assign(tau_grid_a.size(), std::vector<double>(tau_grid_b.size(), 0.0));
  for (std::size_t i = 0; i < tau_grid_a.size(); ++i) {
    for (std::size_t j = 0; j < tau_grid_b.size(); ++j) {
      const double chi = chi_loss(tau_grid_a[i], tau_grid_b[j]) + epsilon;
      surface.rate[i][j] = rate_min_fixed_chi(tau_grid_a[i], tau_grid_b[j], chi).rate;
    }
  }
  return surface;
}

std::string to_csv(const ThresholdCurve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "r_km,d_max_km,epsilon,flag\n";
  for (const auto& pt : curve.points) {
    out << pt.r_km << ',' << pt.d_max_km << ',' << curve.epsilon << ','
        << to_string(pt.flag) << '\n';
  }
  return out.str();
}

std::string to_json(const ThresholdCurve& curve) {
  nlohmann::json j;
  j["epsilon"] = curve.epsilon;
  j["loss_rate_db_per_km"] = curve.loss_rate_db_per_km;
  j["points"] = nlohmann::json::array();
  for (const auto& pt : curve.points) {
    j["points"].push_back({{"r_km", pt.r_km},
                           {"d_max_km", pt.d_max_km},
                           {"flag", to_string(pt.flag)}});
  }
  return j.dump(2);
}

std::string to_csv(const RateSurface& surface) {
  std::ostringstream out;
  out.precision(17);
  out << "tau_a,tau_b,rate\n";
  for (std::size_t i = 0; i < surface.tau_a.size(); ++i) {
    for (std::size_t j = 0; j < surface.tau_b.size(); ++j) {
      out << surface.tau_a[i] << ',' << surface.tau_b[j] << ','
          << surface.rate[i][j] << '\n';
    }
  }
  return out.str();
}

std::string to_json(const RateSurface& surface) {
  nlohmann::json j;
  j["epsilon"] = surface.epsilon;
  j["tau_a"] = surface.tau_a;
  j["tau_b"] = surface.tau_b;
  j["rate"] = surface.rate;
  return j.dump(2);
}

}  // namespace cvmdi
