#pragma once

#include <string>
#include <vector>

#include "cvmdi/rate.hpp"

// Security-threshold machinery: fibre-loss <-> transmissivity conversion,
// maximum Bob distance for a given relay radius (both links at the same
// dB/km loss rate), and rate surfaces over the transmissivity plane.

namespace cvmdi {

inline constexpr double kDefaultLossDbPerKm = 0.2;

/// tau = 10^(-loss_rate * d / 10).
double tau_from_distance(double d_km, double loss_rate_db_per_km = kDefaultLossDbPerKm);

/// d = -10 log10(tau) / loss_rate.
double distance_from_tau(double tau, double loss_rate_db_per_km = kDefaultLossDbPerKm);

struct LinkBudget {
  double loss_rate_db_per_km = kDefaultLossDbPerKm;
  double distance_km = 0.0;

  double tau() const { return tau_from_distance(distance_km, loss_rate_db_per_km); }
};

enum class ThresholdFlag {
  Ok,        // bisection converged
  NoRate,    // R <= 0 already at d = 0
  Capped,    // R > 0 at the search cap; true maximum lies beyond it
};

std::string to_string(ThresholdFlag f);

struct MaxDistanceResult {
  double d_max_km = 0.0;
  ThresholdFlag flag = ThresholdFlag::Ok;
};

struct ThresholdOptions {
  double cap_km = 500.0;       // tau_A -> 1 makes the supremum infinite
  double rate_tol_bits = 1e-9;
  int max_iterations = 200;
};

/// Asymptotic minimum rate R(tau_A(r), tau_B(d), chi_loss + epsilon).
double rate_at_distances(double r_km, double d_km, double epsilon,
                         double loss_rate_db_per_km = kDefaultLossDbPerKm);

/// Largest d with R > 0 for a relay at radius r from Alice, by bracketed
/// bisection of the signed rate to |R| < rate_tol_bits.
MaxDistanceResult max_bob_distance(double r_km, double epsilon,
                                   double loss_rate_db_per_km = kDefaultLossDbPerKm,
                                   const ThresholdOptions& opts = {});

struct ThresholdPoint {
  double r_km;
  double d_max_km;
  ThresholdFlag flag;
};

struct ThresholdCurve {
  std::vector<ThresholdPoint> points;
  double epsilon = 0.0;
  double loss_rate_db_per_km = kDefaultLossDbPerKm;
};

ThresholdCurve threshold_curve(const std::vector<double>& r_values_km, double epsilon,
                               double loss_rate_db_per_km = kDefaultLossDbPerKm,
                               const ThresholdOptions& opts = {});

struct RateSurface {
  std::vector<double> tau_a;
  std::vector<double> tau_b;
  std::vector<std::vector<double>> rate;  // rate[i][j] at (tau_a[i], tau_b[j])
  double epsilon = 0.0;
};

RateSurface rate_surface(const std::vector<double>& tau_grid_a,
                         const std::vector<double>& tau_grid_b, double epsilon);

std::string to_csv(const ThresholdCurve& curve);
std::string to_json(const ThresholdCurve& curve);
std::string to_csv(const RateSurface& surface);
std::string to_json(const RateSurface& surface);

}  // namespace cvmdi
