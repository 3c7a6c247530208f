#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvmdi/rate.hpp"

// Sample-level simulation of the protocol and the estimation pipeline used
// on the experimental data: Gaussian modulation, modulation-attenuation
// channel, r-parametrized relay outcomes, gain calibration, moment
// estimation, conditional-CM reconstruction, normal-form symmetrization,
// eta correction, and the empirical rate R = xi I_AB - I_E.

namespace cvmdi {

/// Relay post-processing parameters. r = 1 is the ideal Bell relay; other
/// values mix the measured quadrature combinations with weights
/// kappa1 = (1-r)/sqrt(2(1+r^2)), kappa2 = (1+r)/sqrt(2(1+r^2)).
struct RelaySettings {
  double r = 1.0;
  double detection_noise_variance = 1.0;  // >= 1, vacuum = 1

  double kappa1() const;
  double kappa2() const;
};

/// Per-party 2x2 quadrature mixing applied between the recorded electronic
/// displacements and the optical displacements reaching the relay
/// (modulator cross-talk imperfection model).
struct CrossTalk {
  Eigen::Matrix2d alice = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d bob = Eigen::Matrix2d::Identity();
};

/// Bob's loss model: scale the modulation variance (the experiment's
/// method), or scale full-modulation samples through an explicit
/// beam-splitter factor. Identical statistics for pure loss.
enum class ChannelMode { Attenuation, BeamSplitter };

struct SimConfig {
  double phi = 65.0;        // modulation variance, vacuum units
  double tau_b = 1.0;       // equivalent transmissivity of Bob's link
  std::size_t n_rounds = 1'000'000;
  std::uint64_t seed = 1;
  double xi = 1.0;          // reconciliation efficiency
  double excess_noise = 0.0;  // target epsilon on top of chi_loss
  std::optional<CrossTalk> cross_talk;
  ChannelMode channel_mode = ChannelMode::Attenuation;
};

/// One protocol round. Party columns hold the recorded displacements
/// (Bob's at the attenuated modulation tau_b * phi); x_minus/x_plus are the
/// relay outcomes in vacuum units.
struct SampleRecord {
  double q_a;
  double p_a;
  double q_b;
  double p_b;
  double x_minus;
  double x_plus;
};

/// First and second moments of (q_A, p_A, q_B, p_B, x_-, x_+).
struct Moments {
  std::size_t n = 0;
  Eigen::Matrix<double, 6, 1> mean = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 6> cov = Eigen::Matrix<double, 6, 6>::Zero();  // unbiased
};

/// Variance of excess-noise injection per relay-input quadrature that lifts
/// the reconstructed chi by epsilon: v = epsilon tau_A tau_B / (2(tau_A+tau_B)).
double excess_noise_injection_variance(double epsilon, double tau_a, double tau_b);

/// Draw n_rounds protocol rounds.
std::vector<SampleRecord> simulate(const SimConfig& config, const RelaySettings& relay);

/// Unbiased sample moments of a batch of records.
Moments estimate_moments(const std::vector<SampleRecord>& samples);

/// Exact model moments (the analytic limit of estimate_moments(simulate())).
Moments model_moments(const SimConfig& config, const RelaySettings& relay);

/// Generate and accumulate moments without materializing samples.
/// Deterministic for a given seed and config, independent of thread count.
Moments simulate_moments(const SimConfig& config, const RelaySettings& relay,
                         unsigned threads = 0);

/// Electro-optical gains fitted by minimizing
/// <[x_- - (t1 A_q - t2 B_q)/sqrt(2)]^2> and the x_+ analogue.
struct GainCalibration {
  double t1 = 1.0;  // Alice q
  double t2 = 1.0;  // Bob q
  double t3 = 1.0;  // Alice p
  double t4 = 1.0;  // Bob p
  double residual_minus = 0.0;  // unexplained variance of x_-
  double residual_plus = 0.0;
  bool identifiable = true;
};

GainCalibration calibrate_gains(const Moments& m);

/// Conditional CM of the four party variables given the relay outcomes,
/// V_{A+B} - C R^{-1} C^T. Throws on singular R.
Eigen::Matrix4d condition_classical(const Eigen::Matrix<double, 6, 6>& cov);

/// Two-mode normal form [[a I, c Z], [c Z, b I]] reached by local rotations
/// and symplectic rescalings. a = sqrt(det A), b = sqrt(det B); c comes from
/// the invariants det C and det V, whose mismatch is reported.
struct NormalForm {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double c_q = 0.0;  // diagonalized correlation, q quadrature
  double c_p = 0.0;  // diagonalized correlation, p quadrature (typically -c)
  Eigen::Matrix2d transform_alice = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d transform_bob = Eigen::Matrix2d::Identity();
  double invariant_mismatch = 0.0;  // |c^2(det C) - c^2(det V)|

  Eigen::Matrix4d matrix() const;
};

NormalForm symmetrize_to_normal_form(const Eigen::Matrix4d& conditional_cm);

/// Classical-to-quantum bridge V_ab|gamma = eta^2 V_cond - I.
CovarianceMatrix classical_to_quantum_cm(const Eigen::Matrix4d& conditional_cm,
                                         double eta);

struct EstimationOptions {
  bool refit_gains = true;
  /// Reconstructed CMs with nu_min below 1 - tol are rejected (estimation
  /// bug or bad data); small dips are sampling noise and clamp to 1. The
  /// estimate() pipeline widens the tolerance by sqrt(1e6 / n) for sampled
  /// moments: near-pure states make nu_min an ill-conditioned estimate.
  double physicality_tol = 0.1;
};

/// Empirical rate from a reconstructed post-relay CM: I_AB from the
/// conditional variances, I_E from the symplectic spectra.
RateResult empirical_rate(const CovarianceMatrix& quantum_cm, double xi,
                          const EstimationOptions& opts = {});

struct ConvergencePoint {
  std::size_t n;
  double tau_b_hat;
  double det_ratio;  // det V_n / det V_final of the recorded 6x6 CM
  double rate;
};

/// Full estimation pipeline output.
struct EstimationReport {
  double tau_b_hat = 1.0;
  double tau_b_sigma = 0.0;  // propagated standard error of tau_b_hat
  double phi_hat = 0.0;
  double mu_hat = 0.0;
  double eta_hat = 1.0;
  GainCalibration gains;
  Eigen::Matrix<double, 6, 6> global_cm;      // optical units
  Eigen::Matrix4d conditional_cm;             // bridge variables
  NormalForm normal_form;
  Eigen::Matrix4d quantum_cm;
  double nu_min = 1.0;                        // least symplectic eigenvalue
  double lambda_hat = 0.0;
  double chi_hat = 0.0;
  double epsilon_hat = 0.0;
  RateResult rate;
  double rate_stderr = 0.0;                   // batch-means MC error (0 if n/a)
  std::vector<ConvergencePoint> convergence;
  std::string rng = "mt19937_64/polar-gauss/batch65536/splitmix64-substreams";
};

/// Estimate from accumulated moments (no convergence series, no stderr).
EstimationReport estimate(const Moments& moments, const RelaySettings& relay,
                          double xi, const EstimationOptions& opts = {});

/// Convergence of tau_hat, the scaled CM determinant, and the rate over
/// sample-count checkpoints (default decades 1e3 ... n_rounds).
std::vector<ConvergencePoint> convergence_study(
    const SimConfig& config, const RelaySettings& relay,
    std::vector<std::size_t> checkpoints = {},
    const EstimationOptions& opts = {});

/// Simulate, estimate, attach batch-means rate error and convergence series.
EstimationReport run_simulation_report(const SimConfig& config,
                                       const RelaySettings& relay,
                                       const EstimationOptions& opts = {},
                                       bool with_convergence = true);

struct ROptimum {
  double r_opt = 1.0;
  double rate_opt = 0.0;
  int evaluations = 0;
};

/// Maximize the estimated rate over r in [0.2, 2.0] by golden-section
/// search. Falls back to r = 1 when no candidate improves on the ideal Bell
/// combination by more than improvement_tol. model=true evaluates on exact
/// model moments; otherwise regenerates samples at each candidate r.
ROptimum optimize_r(const SimConfig& config, const RelaySettings& relay_base,
                    bool model = true, double improvement_tol = 1e-9,
                    const EstimationOptions& opts = {});

std::string to_csv(const std::vector<SampleRecord>& samples);
std::string to_json(const EstimationReport& report, const SimConfig& config,
                    const RelaySettings& relay);

}  // namespace cvmdi
