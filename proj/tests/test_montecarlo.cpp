#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "cvmdi/montecarlo.hpp"
#include "cvmdi/rate.hpp"

using namespace cvmdi;

namespace {

SimConfig clean_config(double tau_b, std::size_t n = 200000, std::uint64_t seed = 42) {
  SimConfig c;
  c.phi = 65.0;
  c.tau_b = tau_b;
  c.n_rounds = n;
  c.seed = seed;
  return c;
}

RateResult analytic_rate(double tau_b, double mu, double xi = 1.0) {
  return rate_general({1.0, tau_b, 1.0, 1.0, 0.0, 0.0}, mu, xi);
}

}  // namespace

TEST_CASE("relay combination weights") {
  for (double r : {0.2, 0.45, 1.0, 1.7}) {
    const RelaySettings relay{r, 1.0};
    CHECK(relay.kappa1() * relay.kappa1() + relay.kappa2() * relay.kappa2() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  const RelaySettings ideal{1.0, 1.0};
  CHECK(ideal.kappa1() == 0.0);
  CHECK(ideal.kappa2() == doctest::Approx(1.0));
}

TEST_CASE("model moments: hand-checked entries") {
  const RelaySettings relay;
  // r = 1, tau_B = 1, phi = 65: Var(x_-) = phi + 1.
  const Moments m1 = model_moments(clean_config(1.0), relay);
  CHECK(m1.cov(4, 4) == doctest::Approx(66.0).epsilon(1e-12));
  CHECK(m1.cov(5, 5) == doctest::Approx(66.0).epsilon(1e-12));
  CHECK(m1.cov(0, 4) == doctest::Approx(65.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(m1.cov(1, 5) == doctest::Approx(65.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(m1.cov(0, 5) == doctest::Approx(0.0));
  CHECK(m1.cov(4, 5) == doctest::Approx(0.0));

  // Attenuated link: recorded Bob variance tau phi, coupling -tau phi/sqrt(2).
  const Moments m2 = model_moments(clean_config(0.3), relay);
  CHECK(m2.cov(2, 2) == doctest::Approx(0.3 * 65.0));
  CHECK(m2.cov(2, 4) == doctest::Approx(-0.3 * 65.0 / std::sqrt(2.0)));
  CHECK(m2.cov(4, 4) == doctest::Approx((1.0 + 0.3) * 65.0 / 2.0 + 1.0));

  // r != 1 mixes the p_+ combination into x_- with weight kappa1; in the
  // kappa2-rescaled convention that is ((1-r)/(1+r)) phi_eff / sqrt(2).
  const RelaySettings tilted{0.6, 1.0};
  const Moments m3 = model_moments(clean_config(1.0), tilted);
  CHECK(m3.cov(1, 4) == doctest::Approx(tilted.kappa1() * 65.0 / std::sqrt(2.0)));
  const double phi_eff = tilted.kappa2() * tilted.kappa2() * 65.0;
  CHECK(m3.cov(1, 4) * tilted.kappa2() ==
        doctest::Approx((1.0 - 0.6) / (1.0 + 0.6) * phi_eff / std::sqrt(2.0)));
  // Relay outcomes keep unit quantum noise on top of the classical signal.
  CHECK(m3.cov(4, 4) == doctest::Approx(65.0 + 1.0));
  // Correlated vacuum mixing between the two outcomes at r != 1.
  CHECK(m3.cov(4, 5) != doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("sampled moments match the model within statistical error") {
  const SimConfig config = clean_config(0.4, 100000);
  const RelaySettings relay{0.8, 1.0};
  const Moments sampled = simulate_moments(config, relay);
  const Moments exact = model_moments(config, relay);
  CHECK(sampled.n == config.n_rounds);
  CHECK(sampled.mean.cwiseAbs().maxCoeff() < 0.15);  // zero-mean within noise
  for (int i = 0; i < 6; ++i) {
    for (int j = i; j < 6; ++j) {
      const double sigma = std::sqrt((exact.cov(i, i) * exact.cov(j, j) +
                                      exact.cov(i, j) * exact.cov(i, j)) /
                                     static_cast<double>(config.n_rounds));
      CHECK(std::abs(sampled.cov(i, j) - exact.cov(i, j)) < 5.0 * sigma);
    }
  }
}

TEST_CASE("simulate agrees with simulate_moments and is thread-stable") {
  const SimConfig config = clean_config(0.5, 30000);
  const RelaySettings relay;
  const Moments direct = estimate_moments(simulate(config, relay));
  const Moments fused1 = simulate_moments(config, relay, 1);
  const Moments fused4 = simulate_moments(config, relay, 4);
  CHECK((direct.cov - fused1.cov).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((fused1.cov - fused4.cov).cwiseAbs().maxCoeff() == 0.0);  // bitwise
}

TEST_CASE("attenuation and beam-splitter channel modes coincide") {
  SimConfig att = clean_config(0.35, 20000);
  SimConfig bs = att;
  bs.channel_mode = ChannelMode::BeamSplitter;
  const RelaySettings relay;
  CHECK((model_moments(att, relay).cov - model_moments(bs, relay).cov)
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  const Moments ma = simulate_moments(att, relay);
  const Moments mb = simulate_moments(bs, relay);
  CHECK((ma.cov - mb.cov).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gain calibration") {
  const RelaySettings relay;
  const SimConfig config = clean_config(0.6);
  const Moments exact = model_moments(config, relay);

  // Unit gains on clean optical-unit data; residual is the detection noise.
  const GainCalibration unit = calibrate_gains(exact);
  CHECK(unit.identifiable);
  CHECK(unit.t1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(unit.t2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(unit.residual_minus == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(unit.residual_plus == doctest::Approx(1.0).epsilon(1e-9));

  // Electronic records scaled by 1/t recover t exactly on analytic moments.
  const Eigen::Vector4d gains(1.0, 0.8, 1.1, 0.9);  // t1..t4
  Eigen::Matrix<double, 6, 1> scale;
  scale << 1.0 / gains(0), 1.0 / gains(2), 1.0 / gains(1), 1.0 / gains(3), 1.0, 1.0;
  Moments electronic = exact;
  electronic.cov = scale.asDiagonal() * exact.cov * scale.asDiagonal();
  const GainCalibration fit = calibrate_gains(electronic);
  CHECK(fit.t1 == doctest::Approx(gains(0)).epsilon(1e-10));
  CHECK(fit.t2 == doctest::Approx(gains(1)).epsilon(1e-10));
  CHECK(fit.t3 == doctest::Approx(gains(2)).epsilon(1e-10));
  CHECK(fit.t4 == doctest::Approx(gains(3)).epsilon(1e-10));

  // Sampled version within a loose statistical band.
  SimConfig sampled_cfg = clean_config(0.6, 200000);
  Moments sampled = simulate_moments(sampled_cfg, relay);
  sampled.cov = scale.asDiagonal() * sampled.cov * scale.asDiagonal();
  const GainCalibration sampled_fit = calibrate_gains(sampled);
  CHECK(sampled_fit.t1 == doctest::Approx(gains(0)).epsilon(0.02));
  CHECK(sampled_fit.t2 == doctest::Approx(gains(1)).epsilon(0.02));

  // Zero-signal data is unidentifiable.
  Moments dead;
  dead.n = 1000;
  dead.cov.setZero();
  dead.cov(4, 4) = dead.cov(5, 5) = 1.0;
  CHECK_FALSE(calibrate_gains(dead).identifiable);
}

TEST_CASE("classical conditioning") {
  // Uncorrelated relay block leaves the party CM unchanged.
  Eigen::Matrix<double, 6, 6> cov = Eigen::Matrix<double, 6, 6>::Identity();
  cov.diagonal().head<4>().setConstant(3.0);
  const Eigen::Matrix4d cond = condition_classical(cov);
  CHECK((cond - 3.0 * Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-14);

  // Singular relay block rejected.
  Eigen::Matrix<double, 6, 6> bad = cov;
  bad(4, 4) = bad(5, 5) = 0.0;
  CHECK_THROWS(condition_classical(bad));
}

TEST_CASE("normal-form symmetrization") {
  // Already-normal input: identity transforms, invariants read off.
  Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
  normal(0, 0) = normal(1, 1) = 5.0;
  normal(2, 2) = normal(3, 3) = 4.0;
  normal(0, 2) = normal(2, 0) = 3.0;
  normal(1, 3) = normal(3, 1) = -3.0;
  const NormalForm nf = symmetrize_to_normal_form(normal);
  CHECK(nf.a == doctest::Approx(5.0));
  CHECK(nf.b == doctest::Approx(4.0));
  CHECK(nf.c == doctest::Approx(3.0));
  CHECK(nf.c_q == doctest::Approx(3.0));
  CHECK(nf.c_p == doctest::Approx(-3.0));
  CHECK((nf.transform_alice - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(nf.invariant_mismatch < 1e-9);

  // Local symplectics leave the four block invariants unchanged.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> sq(-0.3, 0.3);
  const auto rot = [](double t) {
    Eigen::Matrix2d r;
    r << std::cos(t), std::sin(t), -std::sin(t), std::cos(t);
    return r;
  };
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Matrix2d sa = rot(angle(rng));
    sa(0, 0) *= std::exp(sq(rng));
    sa(1, 1) *= std::exp(sq(rng));
    sa /= std::sqrt(std::abs(sa.determinant()));  // det 1
    Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
    local.block<2, 2>(0, 0) = sa;
    local.block<2, 2>(2, 2) = rot(angle(rng));
    const Eigen::Matrix4d twisted = local * normal * local.transpose();
    const NormalForm rec = symmetrize_to_normal_form(twisted);
    CHECK(rec.a == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(rec.b == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(rec.c == doctest::Approx(3.0).epsilon(1e-9));
    // The recovered transforms really map the data to normal form.
    Eigen::Matrix4d w = Eigen::Matrix4d::Zero();
    w.block<2, 2>(0, 0) = rec.transform_alice;
    w.block<2, 2>(2, 2) = rec.transform_bob;
    const Eigen::Matrix4d mapped = w * twisted * w.transpose();
    CHECK((mapped - rec.matrix()).cwiseAbs().maxCoeff() < 1e-8);
  }

  // Same-sign quadrature correlations have no Bell-type normal form.
  Eigen::Matrix4d inconsistent = normal;
  inconsistent(1, 3) = inconsistent(3, 1) = 3.0;
  CHECK_THROWS(symmetrize_to_normal_form(inconsistent));
}

TEST_CASE("quantum bridge and eta") {
  CHECK(ProtocolParams::from_phi(65.0).eta() == doctest::Approx(1.0153).epsilon(1e-3));
  // eta = 1 round trip.
  Eigen::Matrix4d v = Eigen::Matrix4d::Identity() * 2.0;
  const CovarianceMatrix q = classical_to_quantum_cm(v + Eigen::Matrix4d::Identity(), 1.0);
  CHECK((q.matrix() - v).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("pipeline is exact on analytic moments") {
  const EstimationOptions opts;
  for (double tau_b : {1.0, 0.5, 0.1}) {
    for (double r : {1.0, 0.7, 1.4}) {
      const SimConfig config = clean_config(tau_b);
      const RelaySettings relay{r, 1.0};
      const EstimationReport rep = estimate(model_moments(config, relay), relay, 1.0, opts);
      CHECK(rep.tau_b_hat == doctest::Approx(tau_b).epsilon(1e-10));
      CHECK(rep.phi_hat == doctest::Approx(65.0).epsilon(1e-10));

      // Reconstructed CM equals the closed-form post-relay CM.
      const AttackParams pure_loss{1.0, tau_b, 1.0, 1.0, 0.0, 0.0};
      const CovarianceMatrix expected = post_relay_cm_closed(pure_loss, 66.0);
      CHECK((rep.quantum_cm - expected.matrix()).cwiseAbs().maxCoeff() < 1e-8);

      // And the empirical rate matches the finite-mu analytic rate. At
      // tau_b = 1 the reconstruction sits on a pure state where the entropy
      // kernel has a log kink, so round-off is amplified to ~1e-7 there.
      const RateResult truth = analytic_rate(tau_b, 66.0);
      const double rate_tol = tau_b == 1.0 ? 5e-7 : 1e-9;
      CHECK(std::abs(rep.rate.rate - truth.rate) < rate_tol);
      CHECK(*rep.rate.i_ab == doctest::Approx(*truth.i_ab).epsilon(1e-9));

      // Equivalent-noise readback: clean pure loss has epsilon ~ 0.
      CHECK(std::abs(rep.epsilon_hat) < 1e-7);
    }
  }
}

TEST_CASE("empirical rate is invariant under a uniform sample rescale") {
  const SimConfig config = clean_config(0.4);
  const RelaySettings relay;
  const Moments base = model_moments(config, relay);
  const EstimationReport ref = estimate(base, relay, 1.0);
  for (double s : {0.2, 3.7}) {
    Moments scaled = base;
    Eigen::Matrix<double, 6, 1> d;
    d << s, s, s, s, 1.0, 1.0;
    scaled.cov = d.asDiagonal() * base.cov * d.asDiagonal();
    const EstimationReport rep = estimate(scaled, relay, 1.0);
    CHECK(std::abs(rep.rate.rate - ref.rate.rate) < 1e-9);
  }
}

TEST_CASE("excess-noise injection reproduces the requested epsilon") {
  for (double eps : {0.02, 0.1}) {
    for (double tau_b : {0.8, 0.3}) {
      SimConfig config = clean_config(tau_b);
      config.excess_noise = eps;
      const RelaySettings relay;
      const EstimationReport rep = estimate(model_moments(config, relay), relay, 1.0);
      CHECK(rep.epsilon_hat == doctest::Approx(eps).epsilon(1e-6));
    }
  }
}

TEST_CASE("empirical rate: xi scaling") {
  const SimConfig config = clean_config(0.5);
  const RelaySettings relay;
  const Moments m = model_moments(config, relay);
  const EstimationReport full = estimate(m, relay, 1.0);
  const EstimationReport partial = estimate(m, relay, 0.97);
  CHECK(full.rate.rate - partial.rate.rate ==
        doctest::Approx(0.03 * *full.rate.i_ab).epsilon(1e-10));
}

TEST_CASE("monte-carlo closure at moderate sample count") {
  SimConfig config = clean_config(0.5, 200000, 7);
  const RelaySettings relay;
  const EstimationReport rep = run_simulation_report(config, relay, {}, false);
  const RateResult truth = analytic_rate(0.5, 66.0);
  CHECK(rep.rate_stderr > 0.0);
  CHECK(std::abs(rep.rate.rate - truth.rate) < 3.0 * rep.rate_stderr);
  CHECK(std::abs(rep.tau_b_hat - 0.5) < 3.0 * rep.tau_b_sigma);
}

TEST_CASE("convergence study") {
  SimConfig config = clean_config(0.77, 100000, 11);
  const RelaySettings relay;
  const auto series = convergence_study(config, relay);
  CHECK(series.size() >= 3);
  CHECK(series.back().n == config.n_rounds);
  CHECK(series.back().det_ratio == doctest::Approx(1.0));
  CHECK(std::abs(series.back().tau_b_hat - 0.77) < 0.01);

  // Deterministic given the seed.
  const auto repeat = convergence_study(config, relay);
  for (std::size_t k = 0; k < series.size(); ++k) {
    CHECK(series[k].rate == repeat[k].rate);
  }
}

TEST_CASE("relay rescale optimization") {
  // Clean symmetric data: nothing to correct, r_opt = 1.
  const SimConfig clean = clean_config(0.8);
  const ROptimum ideal = optimize_r(clean, RelaySettings{}, /*model=*/true);
  CHECK(ideal.r_opt == 1.0);

  // Same on sampled data: noise along the flat r direction must not move it.
  const ROptimum sampled = optimize_r(clean_config(0.8, 50000), RelaySettings{},
                                      /*model=*/false);
  CHECK(sampled.r_opt == 1.0);

  // Quadrature cross-talk shifts the optimum away from 1 and the optimized
  // rate cannot be worse than the ideal-combination estimate.
  SimConfig skew = clean_config(0.8);
  CrossTalk ct;
  ct.alice << 1.0, 0.2, -0.0667, 1.0;
  ct.bob << 1.0, -0.1, 0.2, 1.0;
  skew.cross_talk = ct;
  const ROptimum tuned = optimize_r(skew, RelaySettings{}, /*model=*/true);
  EstimationOptions loose;
  loose.physicality_tol = 0.25;
  RelaySettings at_one;
  const double rate_at_one =
      estimate(model_moments(skew, at_one), at_one, skew.xi, loose).rate.rate;
  CHECK(tuned.rate_opt >= rate_at_one - 1e-12);
  CHECK(tuned.r_opt != doctest::Approx(1.0).epsilon(1e-3));

  // Stronger cross-talk pushes the optimum into the band the relay
  // rescaling is meant to cover.
  SimConfig heavy = clean_config(0.8);
  CrossTalk hc;
  hc.alice << 1.0, 0.35, -0.117, 1.0;
  hc.bob << 1.0, -0.175, 0.35, 1.0;
  heavy.cross_talk = hc;
  const ROptimum strong = optimize_r(heavy, RelaySettings{}, /*model=*/true);
  CHECK(strong.r_opt > 0.4);
  CHECK(strong.r_opt < 0.95);
}

TEST_CASE("reports and dumps") {
  SimConfig config = clean_config(0.9, 20000, 3);
  const RelaySettings relay;
  const EstimationReport rep1 = run_simulation_report(config, relay, {}, true);
  const EstimationReport rep2 = run_simulation_report(config, relay, {}, true);
  CHECK(to_json(rep1, config, relay) == to_json(rep2, config, relay));  // seeded determinism

  const auto samples = simulate(clean_config(0.9, 10, 3), relay);
  const std::string csv = to_csv(samples);
  CHECK(csv.rfind("q_A,p_A,q_B,p_B,x_minus,x_plus\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}
