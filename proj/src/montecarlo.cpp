#include "cvmdi/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace cvmdi {

namespace {

constexpr std::size_t kGenBatch = 65536;
constexpr int kLatents = 10;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Marsaglia polar Gaussian on top of mt19937_64; fully specified here so
/// reports are reproducible across standard libraries.
class GaussRng {
 public:
  explicit GaussRng(std::uint64_t seed) : eng_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  double uniform() {
    return (eng_() >> 11) * 0x1.0p-53;
  }

  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Linear latent model: the six recorded variables are L z with z a vector
/// of independent zero-mean Gaussians of standard deviation sd. Shared by
/// the sampler and the analytic moments so they agree by construction.
/// Latent order: uAq uAp uBq uBp | nAq nAp nBq nBp | dq dp.
struct LatentModel {
  Eigen::Matrix<double, 6, kLatents> loading;
  Eigen::Matrix<double, kLatents, 1> sd;
};

LatentModel build_latent_model(const SimConfig& config, const RelaySettings& relay) {
  if (!(config.phi > 0.0)) throw std::invalid_argument("phi must be > 0");
  if (!(config.tau_b > 0.0 && config.tau_b <= 1.0)) {
    throw std::invalid_argument("tau_b must lie in (0, 1]");
  }
  if (!(relay.detection_noise_variance >= 1.0)) {
    throw std::invalid_argument("detection noise variance must be >= 1");
  }
  LatentModel model;
  auto& l = model.loading;
  l.setZero();

  const double mod_sd = std::sqrt(config.phi);
  const double noise_sd = std::sqrt(excess_noise_injection_variance(
      config.excess_noise, 1.0, config.tau_b));
  const double det_sd = std::sqrt(relay.detection_noise_variance);
  const double bs = config.channel_mode == ChannelMode::BeamSplitter
                        ? std::sqrt(config.tau_b)
                        : 1.0;
  const double bob_sd = config.channel_mode == ChannelMode::BeamSplitter
                            ? mod_sd
                            : std::sqrt(config.tau_b * config.phi);
  model.sd << mod_sd, mod_sd, bob_sd, bob_sd, noise_sd, noise_sd, noise_sd,
      noise_sd, det_sd, det_sd;

  // Recorded displacements.
  l(0, 0) = 1.0;
  l(1, 1) = 1.0;
  l(2, 2) = bs;
  l(3, 3) = bs;

  const Eigen::Matrix2d ma =
      config.cross_talk ? config.cross_talk->alice : Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d mb =
      config.cross_talk ? config.cross_talk->bob : Eigen::Matrix2d::Identity();

  // Bell-detected combinations of the optical displacements plus injected
  // excess noise: q_- = (oAq + nAq - oBq - nBq)/sqrt(2), p_+ likewise.
  Eigen::Matrix<double, 1, kLatents> qm = Eigen::Matrix<double, 1, kLatents>::Zero();
  Eigen::Matrix<double, 1, kLatents> pp = Eigen::Matrix<double, 1, kLatents>::Zero();
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  qm(0) = ma(0, 0) * inv_sqrt2;
  qm(1) = ma(0, 1) * inv_sqrt2;
  qm(2) = -mb(0, 0) * bs * inv_sqrt2;
  qm(3) = -mb(0, 1) * bs * inv_sqrt2;
  qm(4) = inv_sqrt2;
  qm(6) = -inv_sqrt2;
  pp(0) = ma(1, 0) * inv_sqrt2;
  pp(1) = ma(1, 1) * inv_sqrt2;
  pp(2) = mb(1, 0) * bs * inv_sqrt2;
  pp(3) = mb(1, 1) * bs * inv_sqrt2;
  pp(5) = inv_sqrt2;
  pp(7) = inv_sqrt2;

  const double k1 = relay.kappa1();
  const double k2 = relay.kappa2();
  Eigen::Matrix<double, 1, kLatents> dq = Eigen::Matrix<double, 1, kLatents>::Zero();
  Eigen::Matrix<double, 1, kLatents> dp = Eigen::Matrix<double, 1, kLatents>::Zero();
  dq(8) = 1.0;
  dp(9) = 1.0;
  l.row(4) = k2 * (qm + dq) + k1 * (pp + dp);
  l.row(5) = k1 * (qm + dq) + k2 * (pp + dp);
  return model;
}

struct RawSums {
  std::size_t n = 0;
  Eigen::Matrix<double, 6, 1> sum = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 6> sum_sq = Eigen::Matrix<double, 6, 6>::Zero();

  void add(const Eigen::Matrix<double, 6, 1>& x) {
    ++n;
    sum += x;
    sum_sq += x * x.transpose();
  }

  void merge(const RawSums& other) {
    n += other.n;
    sum += other.sum;
    sum_sq += other.sum_sq;
  }

  Moments finalize() const {
    if (n < 2) throw std::invalid_argument("need at least two samples");
    Moments m;
    m.n = n;
    m.mean = sum / static_cast<double>(n);
    m.cov = (sum_sq - static_cast<double>(n) * m.mean * m.mean.transpose()) /
            static_cast<double>(n - 1);
    m.cov = ((m.cov + m.cov.transpose()) / 2.0).eval();
    return m;
  }
};

Eigen::Matrix<double, 6, 1> draw_sample(const LatentModel& model, GaussRng& rng) {
  Eigen::Matrix<double, kLatents, 1> z;
  for (int i = 0; i < kLatents; ++i) z(i) = model.sd(i) * rng();
  return model.loading * z;
}

RawSums accumulate_batch(const LatentModel& model, std::uint64_t seed,
                         std::size_t batch_index, std::size_t count) {
  GaussRng rng(splitmix64(seed ^ (0xa5a5a5a5a5a5a5a5ULL + batch_index)));
  RawSums sums;
  for (std::size_t i = 0; i < count; ++i) sums.add(draw_sample(model, rng));
  return sums;
}

/// Symplectic single-mode transform mapping a 2x2 SPD block to sqrt(det) I:
/// rotate to principal axes, then squeeze-rescale (det = 1 throughout).
Eigen::Matrix2d whiten_block(const Eigen::Matrix2d& block) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(block);
  if (!(es.eigenvalues()(0) > 0.0)) {
    throw std::runtime_error("conditional CM block not positive definite");
  }
  Eigen::Matrix2d rot = es.eigenvectors();
  if (rot.determinant() < 0.0) rot.col(1) *= -1.0;
  const double gm = std::sqrt(es.eigenvalues()(0) * es.eigenvalues()(1));
  const Eigen::Matrix2d squeeze =
      Eigen::Vector2d(std::sqrt(gm / es.eigenvalues()(0)),
                      std::sqrt(gm / es.eigenvalues()(1)))
          .asDiagonal();
  return squeeze * rot.transpose();
}

double golden_section_max(const std::function<double(double)>& f, double lo,
                          double hi, int iterations, int& evals) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  evals += 2;
  for (int i = 0; i < iterations; ++i) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
    ++evals;
  }
  return (a + b) / 2.0;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

double RelaySettings::kappa1() const {
  return (1.0 - r) / std::sqrt(2.0 * (1.0 + r * r));
}

double RelaySettings::kappa2() const {
  return (1.0 + r) / std::sqrt(2.0 * (1.0 + r * r));
}

double excess_noise_injection_variance(double epsilon, double tau_a, double tau_b) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  return epsilon * tau_a * tau_b / (2.0 * (tau_a + tau_b));
}

std::vector<SampleRecord> simulate(const SimConfig& config, const RelaySettings& relay) {
  const LatentModel model = build_latent_model(config, relay);
  std::vector<SampleRecord> out;
  out.reserve(config.n_rounds);
  for (std::size_t b = 0; b * kGenBatch < config.n_rounds; ++b) {
    GaussRng rng(splitmix64(config.seed ^ (0xa5a5a5a5a5a5a5a5ULL + b)));
    const std::size_t count = std::min(kGenBatch, config.n_rounds - b * kGenBatch);
    for (std::size_t i = 0; i < count; ++i) {
      const auto x = draw_sample(model, rng);
      out.push_back({x(0), x(1), x(2), x(3), x(4), x(5)});
    }
  }
  return out;
}

Moments estimate_moments(const std::vector<SampleRecord>& samples) {
  RawSums sums;
  for (const auto& s : samples) {
    Eigen::Matrix<double, 6, 1> x;
    x << s.q_a, s.p_a, s.q_b, s.p_b, s.x_minus, s.x_plus;
    sums.add(x);
  }
  return sums.finalize();
}

Moments model_moments(const SimConfig& config, const RelaySettings& relay) {
  const LatentModel model = build_latent_model(config, relay);
  Moments m;
  m.n = 0;  // analytic
  m.mean.setZero();
  m.cov = model.loading * model.sd.cwiseProduct(model.sd).asDiagonal() *
          model.loading.transpose();
  return m;
}

Moments simulate_moments(const SimConfig& config, const RelaySettings& relay,
                         unsigned threads) {
  const LatentModel model = build_latent_model(config, relay);
  const std::size_t n_batches = (config.n_rounds + kGenBatch - 1) / kGenBatch;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(n_batches));

  std::vector<RawSums> partials(n_batches);
  std::vector<std::thread> workers;
  std::atomic<std::size_t> next{0};
  for (unsigned t = 0; t < threads; ++t) {
    workers.emplace_back([&]() {
      for (std::size_t b = next.fetch_add(1); b < n_batches; b = next.fetch_add(1)) {
        const std::size_t count =
            std::min(kGenBatch, config.n_rounds - b * kGenBatch);
        partials[b] = accumulate_batch(model, config.seed, b, count);
      }
    });
  }
  for (auto& w : workers) w.join();

  // Merge in batch order so the result is independent of the thread count.
  RawSums total;
  for (const auto& p : partials) total.merge(p);
  return total.finalize();
}

GainCalibration calibrate_gains(const Moments& m) {
  GainCalibration g;
  const auto& v = m.cov;
  const double scale = std::max({v(0, 0), v(1, 1), v(2, 2), v(3, 3)});
  if (!(scale > 0.0)) {
    g.identifiable = false;
    return g;
  }
  // x_- ~ (t1 q_A - t2 q_B)/sqrt(2): least squares in (t1, t2).
  const double s2 = std::sqrt(2.0);
  {
    Eigen::Matrix2d a;
    a << v(0, 0), -v(0, 2), -v(0, 2), v(2, 2);
    Eigen::Vector2d b(v(0, 4), -v(2, 4));
    if (std::abs(a.determinant()) < 1e-12 * scale * scale) {
      g.identifiable = false;
      return g;
    }
    const Eigen::Vector2d t = a.colPivHouseholderQr().solve(b) * s2;
    g.t1 = t(0);
    g.t2 = t(1);
    g.residual_minus =
        v(4, 4) - (g.t1 * g.t1 * v(0, 0) - 2.0 * g.t1 * g.t2 * v(0, 2) +
                   g.t2 * g.t2 * v(2, 2)) / 2.0;
  }
  // x_+ ~ (t3 p_A + t4 p_B)/sqrt(2).
  {
    Eigen::Matrix2d a;
    a << v(1, 1), v(1, 3), v(1, 3), v(3, 3);
    Eigen::Vector2d b(v(1, 5), v(3, 5));
    if (std::abs(a.determinant()) < 1e-12 * scale * scale) {
      g.identifiable = false;
      return g;
    }
    const Eigen::Vector2d t = a.colPivHouseholderQr().solve(b) * s2;
    g.t3 = t(0);
    g.t4 = t(1);
    g.residual_plus =
        v(5, 5) - (g.t3 * g.t3 * v(1, 1) + 2.0 * g.t3 * g.t4 * v(1, 3) +
                   g.t4 * g.t4 * v(3, 3)) / 2.0;
  }
  if (!(std::abs(g.t1) > 1e-6 && std::abs(g.t2) > 1e-6 && std::abs(g.t3) > 1e-6 &&
        std::abs(g.t4) > 1e-6)) {
    g.identifiable = false;
  }
  return g;
}

Eigen::Matrix4d condition_classical(const Eigen::Matrix<double, 6, 6>& cov) {
  const Eigen::Matrix4d v4 = cov.block<4, 4>(0, 0);
  const Eigen::Matrix<double, 4, 2> c = cov.block<4, 2>(0, 4);
  const Eigen::Matrix2d r = cov.block<2, 2>(4, 4);
  if (std::abs(r.determinant()) < 1e-12 * std::max(1.0, r.cwiseAbs().maxCoeff())) {
    throw std::runtime_error("singular relay-outcome block in Gaussian elimination");
  }
  const Eigen::Matrix4d out = v4 - c * r.inverse() * c.transpose();
  return ((out + out.transpose()) / 2.0).eval();
}

Eigen::Matrix4d NormalForm::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 0) = m(1, 1) = a;
  m(2, 2) = m(3, 3) = b;
  m(0, 2) = m(2, 0) = c;
  m(1, 3) = m(3, 1) = -c;
  return m;
}

NormalForm symmetrize_to_normal_form(const Eigen::Matrix4d& conditional_cm) {
  NormalForm nf;
  const Eigen::Matrix2d block_a = conditional_cm.block<2, 2>(0, 0);
  const Eigen::Matrix2d block_b = conditional_cm.block<2, 2>(2, 2);
  const Eigen::Matrix2d block_c = conditional_cm.block<2, 2>(0, 2);

  nf.a = std::sqrt(block_a.determinant());
  nf.b = std::sqrt(block_b.determinant());

  Eigen::Matrix2d wa = whiten_block(block_a);
  Eigen::Matrix2d wb = whiten_block(block_b);
  Eigen::Matrix2d c_mid = wa * block_c * wb.transpose();

  // Residual rotational freedom diagonalizes the correlation block.
  const double off = std::max(std::abs(c_mid(0, 1)), std::abs(c_mid(1, 0)));
  if (off > 1e-14 * std::max(1.0, c_mid.cwiseAbs().maxCoeff())) {
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(c_mid,
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix2d u = svd.matrixU();
    Eigen::Matrix2d v = svd.matrixV();
    Eigen::Vector2d su(1.0, u.determinant() < 0 ? -1.0 : 1.0);
    Eigen::Vector2d sv(1.0, v.determinant() < 0 ? -1.0 : 1.0);
    const Eigen::Matrix2d ra = su.asDiagonal() * u.transpose();
    const Eigen::Matrix2d rb = sv.asDiagonal() * v.transpose();
    wa = (ra * wa).eval();
    wb = (rb * wb).eval();
    c_mid = (ra * c_mid * rb.transpose()).eval();
  }
  // Fix the sign convention c_q >= 0 with the pi rotation -I on one side.
  if (c_mid(0, 0) < 0.0) {
    wa = (-wa).eval();
    c_mid = (-c_mid).eval();
  }
  nf.transform_alice = wa;
  nf.transform_bob = wb;
  nf.c_q = c_mid(0, 0);
  nf.c_p = c_mid(1, 1);

  // c from the symplectic invariants: det C = -c^2, cross-checked against
  // det V = (ab - c^2)^2.
  const double det_c = block_c.determinant();
  const double scale = std::max(1.0, nf.a * nf.b);
  if (det_c > 1e-9 * scale) {
    throw std::runtime_error(
        "normal form has complex c (det C > 0): inconsistent correlations");
  }
  const double c_sq = std::max(0.0, -det_c);
  const double det_v = conditional_cm.determinant();
  const double c_sq_from_det = nf.a * nf.b - std::sqrt(std::max(0.0, det_v));
  nf.invariant_mismatch = std::abs(c_sq - c_sq_from_det);
  nf.c = std::sqrt(c_sq);
  return nf;
}

CovarianceMatrix classical_to_quantum_cm(const Eigen::Matrix4d& conditional_cm,
                                         double eta) {
  if (!(eta >= 1.0)) throw std::invalid_argument("eta must be >= 1");
  return CovarianceMatrix(eta * eta * conditional_cm - Eigen::Matrix4d::Identity());
}

RateResult empirical_rate(const CovarianceMatrix& quantum_cm, double xi,
                          const EstimationOptions& opts) {
  if (quantum_cm.modes() != 2) {
    throw std::invalid_argument("empirical rate expects a two-mode CM");
  }
  if (!(xi > 0.0 && xi <= 1.0)) throw infeasible_error("xi must lie in (0, 1]");
  const SymplecticSpectrum spec = symplectic_eigenvalues_two_mode(quantum_cm);
  if (spec.min() < 1.0 - opts.physicality_tol) {
    throw std::runtime_error("reconstructed CM unphysical: nu_min = " +
                             std::to_string(spec.min()));
  }
  const Eigen::Matrix2d vb = quantum_cm.block(1, 1);
  const Eigen::Matrix2d vba = condition_on_heterodyne(quantum_cm);
  const double num = 1.0 + vb.determinant() + vb.trace();
  const double den = 1.0 + vba.determinant() + vba.trace();
  if (!(num > 0.0 && den > 0.0)) {
    throw std::runtime_error("conditional variances inconsistent in empirical rate");
  }
  RateResult r;
  r.i_ab = 0.5 * std::log2(num / den);
  double s_ab = 0.0;
  for (double nu : spec.eigenvalues) s_ab += h_entropy(nu, opts.physicality_tol);
  const double nu_cond = std::sqrt(std::max(0.0, vba.determinant()));
  r.i_e = s_ab - h_entropy(nu_cond, opts.physicality_tol);
  r.rate = xi * *r.i_ab - *r.i_e;
  r.xi = xi;
  return r;
}

EstimationReport estimate(const Moments& moments, const RelaySettings& relay,
                          double xi, const EstimationOptions& opts) {
  EstimationOptions eff = opts;
  if (moments.n > 0) {
    eff.physicality_tol *= std::max(1.0, std::sqrt(1e6 / static_cast<double>(moments.n)));
  }
  EstimationReport rep;
  rep.gains = opts.refit_gains ? calibrate_gains(moments) : GainCalibration{};
  if (!rep.gains.identifiable) {
    throw std::runtime_error("gain calibration unidentifiable (zero-signal data)");
  }

  // Optical units: fitted gains divided by the known kappa2(r), which the
  // current rescaling otherwise folds into the classical modulations.
  const double k2 = relay.kappa2();
  Eigen::Matrix<double, 6, 1> unit_scale;
  unit_scale << rep.gains.t1 / k2, rep.gains.t3 / k2, rep.gains.t2 / k2,
      rep.gains.t4 / k2, 1.0, 1.0;
  const Eigen::Matrix<double, 6, 6> optical =
      unit_scale.asDiagonal() * moments.cov * unit_scale.asDiagonal();
  rep.global_cm = optical;

  rep.phi_hat = (optical(0, 0) + optical(1, 1)) / 2.0;
  const double bob_mod = (optical(2, 2) + optical(3, 3)) / 2.0;
  if (!(rep.phi_hat > 0.0 && bob_mod > 0.0)) {
    throw std::runtime_error("vanishing modulation in estimation");
  }
  rep.tau_b_hat = bob_mod / rep.phi_hat;
  rep.tau_b_sigma =
      moments.n > 0 ? rep.tau_b_hat * std::sqrt(2.0 / static_cast<double>(moments.n))
                    : 0.0;
  rep.mu_hat = rep.phi_hat + 1.0;
  rep.eta_hat = ProtocolParams{rep.mu_hat}.eta();

  // Bridge variables: Bob's pre-channel modulation, i.e. his optical
  // displacements scaled back by sqrt(tau_b).
  Eigen::Matrix<double, 6, 1> bridge_scale = Eigen::Matrix<double, 6, 1>::Ones();
  bridge_scale(2) = bridge_scale(3) = 1.0 / std::sqrt(rep.tau_b_hat);
  const Eigen::Matrix<double, 6, 6> bridge =
      bridge_scale.asDiagonal() * optical * bridge_scale.asDiagonal();

  rep.conditional_cm = condition_classical(bridge);
  rep.normal_form = symmetrize_to_normal_form(rep.conditional_cm);
  const CovarianceMatrix quantum =
      classical_to_quantum_cm(rep.normal_form.matrix(), rep.eta_hat);
  rep.quantum_cm = quantum.matrix();
  rep.nu_min = symplectic_eigenvalues_two_mode(quantum).min();
  rep.rate = empirical_rate(quantum, xi, eff);

  // Equivalent-noise readback (tau_A = 1 geometry): theta from Bob's block,
  // then lambda = theta - (1 + tau_B) mu and the asymptotic chi.
  const double b_q = quantum.matrix()(2, 2);
  const double k = rep.mu_hat * rep.mu_hat - 1.0;
  if (rep.mu_hat - b_q > 1e-9) {
    const double theta = k * rep.tau_b_hat / (rep.mu_hat - b_q);
    rep.lambda_hat = theta - (1.0 + rep.tau_b_hat) * rep.mu_hat;
    rep.chi_hat = (1.0 + rep.tau_b_hat) / rep.tau_b_hat *
                  (1.0 + rep.tau_b_hat + rep.lambda_hat);
    rep.epsilon_hat = rep.chi_hat - chi_loss(1.0, rep.tau_b_hat);
    rep.rate.chi = rep.chi_hat;
    rep.rate.epsilon = rep.epsilon_hat;
  }
  return rep;
}

std::vector<ConvergencePoint> convergence_study(const SimConfig& config,
                                                const RelaySettings& relay,
                                                std::vector<std::size_t> checkpoints,
                                                const EstimationOptions& opts) {
  if (checkpoints.empty()) {
    for (std::size_t n = 1000; n < config.n_rounds; n *= 10) {
      checkpoints.push_back(n);
      if (3 * n < config.n_rounds) checkpoints.push_back(3 * n);
    }
    checkpoints.push_back(config.n_rounds);
  }
  std::sort(checkpoints.begin(), checkpoints.end());
  checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()),
                    checkpoints.end());
  if (checkpoints.back() > config.n_rounds) {
    throw std::invalid_argument("checkpoint beyond n_rounds");
  }

  const LatentModel model = build_latent_model(config, relay);
  std::vector<Moments> snapshots;
  snapshots.reserve(checkpoints.size());
  RawSums running;
  std::size_t next_cp = 0;
  for (std::size_t b = 0; b * kGenBatch < config.n_rounds && next_cp < checkpoints.size();
       ++b) {
    GaussRng rng(splitmix64(config.seed ^ (0xa5a5a5a5a5a5a5a5ULL + b)));
    const std::size_t count = std::min(kGenBatch, config.n_rounds - b * kGenBatch);
    for (std::size_t i = 0; i < count; ++i) {
      running.add(draw_sample(model, rng));
      while (next_cp < checkpoints.size() && running.n == checkpoints[next_cp]) {
        snapshots.push_back(running.finalize());
        ++next_cp;
      }
    }
  }

  const double det_final = snapshots.back().cov.determinant();
  std::vector<ConvergencePoint> out;
  out.reserve(snapshots.size());
  for (const auto& m : snapshots) {
    const EstimationReport rep = estimate(m, relay, config.xi, opts);
    out.push_back({m.n, rep.tau_b_hat, m.cov.determinant() / det_final,
                   rep.rate.rate});
  }
  return out;
}

EstimationReport run_simulation_report(const SimConfig& config,
                                       const RelaySettings& relay,
                                       const EstimationOptions& opts,
                                       bool with_convergence) {
  const Moments m = simulate_moments(config, relay);
  EstimationReport rep = estimate(m, relay, config.xi, opts);

  // Batch-means error bar: split the run into 16 contiguous super-batches
  // and take the spread of their independent rate estimates.
  const std::size_t k_batches = 16;
  if (config.n_rounds >= k_batches * 1000) {
    std::vector<double> rates;
    const std::size_t per = config.n_rounds / k_batches;
    for (std::size_t kb = 0; kb < k_batches; ++kb) {
      SimConfig sub = config;
      sub.n_rounds = per;
      sub.seed = splitmix64(config.seed + 0x5eedULL * (kb + 1));
      try {
        const EstimationReport sub_rep =
            estimate(simulate_moments(sub, relay), relay, config.xi, opts);
        rates.push_back(sub_rep.rate.rate);
      } catch (const std::exception&) {
        // A failed batch estimate only degrades the error bar.
      }
    }
    if (rates.size() >= 4) {
      double mean = 0.0;
      for (double r : rates) mean += r;
      mean /= static_cast<double>(rates.size());
      double var = 0.0;
      for (double r : rates) var += (r - mean) * (r - mean);
      var /= static_cast<double>(rates.size() - 1);
      rep.rate_stderr = std::sqrt(var / static_cast<double>(rates.size()));
    }
  }

  if (with_convergence) {
    rep.convergence = convergence_study(config, relay, {}, opts);
  }
  return rep;
}

ROptimum optimize_r(const SimConfig& config, const RelaySettings& relay_base,
                    bool model, double improvement_tol,
                    const EstimationOptions& opts) {
  EstimationOptions loose = opts;
  loose.physicality_tol = std::max(opts.physicality_tol, 0.25);
  const auto rate_at = [&](double r) {
    RelaySettings relay = relay_base;
    relay.r = r;
    try {
      const Moments m =
          model ? model_moments(config, relay) : simulate_moments(config, relay);
      return estimate(m, relay, config.xi, loose).rate.rate;
    } catch (const std::exception&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  ROptimum result;
  const double rate_ideal = rate_at(1.0);
  result.evaluations = 1;
  // On sampled data a candidate must beat the ideal combination by more
  // than its Monte Carlo error, or noise drags r along the flat direction.
  double threshold = improvement_tol;
  if (!model) {
    RelaySettings ideal = relay_base;
    ideal.r = 1.0;
    const EstimationReport rep =
        run_simulation_report(config, ideal, loose, /*with_convergence=*/false);
    threshold = std::max(improvement_tol, 3.0 * rep.rate_stderr);
  }
  const double r_star = golden_section_max(rate_at, 0.2, 2.0, 40, result.evaluations);
  const double rate_star = rate_at(r_star);
  ++result.evaluations;
  if (rate_star > rate_ideal + threshold) {
    result.r_opt = r_star;
    result.rate_opt = rate_star;
  } else {
    // No material asymmetry to correct: keep the ideal Bell combination.
    result.r_opt = 1.0;
    result.rate_opt = rate_ideal;
  }
  return result;
}

std::string to_csv(const std::vector<SampleRecord>& samples) {
  std::ostringstream out;
  out.precision(17);
  out << "q_A,p_A,q_B,p_B,x_minus,x_plus\n";
  for (const auto& s : samples) {
    out << s.q_a << ',' << s.p_a << ',' << s.q_b << ',' << s.p_b << ','
        << s.x_minus << ',' << s.x_plus << '\n';
  }
  return out.str();
}

std::string to_json(const EstimationReport& report, const SimConfig& config,
                    const RelaySettings& relay) {
  nlohmann::json j;
  j["config"] = {
      {"phi", config.phi},
      {"tau_b", config.tau_b},
      {"n_rounds", config.n_rounds},
      {"seed", config.seed},
      {"xi", config.xi},
      {"excess_noise", config.excess_noise},
      {"channel_mode",
       config.channel_mode == ChannelMode::Attenuation ? "attenuation" : "beamsplitter"},
      {"relay", {{"r", relay.r},
                 {"detection_noise_variance", relay.detection_noise_variance}}},
  };
  if (config.cross_talk) {
    j["config"]["cross_talk"] = {
        {"alice", matrix_to_json(config.cross_talk->alice)},
        {"bob", matrix_to_json(config.cross_talk->bob)},
    };
  }
  j["rng"] = report.rng;
  j["tau_b_hat"] = report.tau_b_hat;
  j["tau_b_sigma"] = report.tau_b_sigma;
  j["phi_hat"] = report.phi_hat;
  j["mu_hat"] = report.mu_hat;
  j["eta_hat"] = report.eta_hat;
  j["gains"] = {{"t1", report.gains.t1},
                {"t2", report.gains.t2},
                {"t3", report.gains.t3},
                {"t4", report.gains.t4},
                {"residual_minus", report.gains.residual_minus},
                {"residual_plus", report.gains.residual_plus}};
  j["global_cm"] = matrix_to_json(report.global_cm);
  j["conditional_cm"] = matrix_to_json(report.conditional_cm);
  j["normal_form"] = {{"a", report.normal_form.a},
                      {"b", report.normal_form.b},
                      {"c", report.normal_form.c},
                      {"c_q", report.normal_form.c_q},
                      {"c_p", report.normal_form.c_p},
                      {"invariant_mismatch", report.normal_form.invariant_mismatch}};
  j["quantum_cm"] = matrix_to_json(report.quantum_cm);
  j["nu_min"] = report.nu_min;
  j["lambda_hat"] = report.lambda_hat;
  j["chi_hat"] = report.chi_hat;
  j["epsilon_hat"] = report.epsilon_hat;
  j["rate"] = {{"i_ab", report.rate.i_ab.value_or(0.0)},
               {"i_e", report.rate.i_e.value_or(0.0)},
               {"rate", report.rate.rate},
               {"xi", report.rate.xi},
               {"chi", report.rate.chi},
               {"epsilon", report.rate.epsilon}};
  j["rate_stderr"] = report.rate_stderr;
  j["convergence"] = nlohmann::json::array();
  for (const auto& pt : report.convergence) {
    j["convergence"].push_back({{"n", pt.n},
                                {"tau_b_hat", pt.tau_b_hat},
                                {"det_ratio", pt.det_ratio},
                                {"rate", pt.rate}});
  }
  return j.dump(2);
}

}  // namespace cvmdi
