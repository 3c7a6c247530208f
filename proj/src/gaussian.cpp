#include "cvmdi/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cvmdi {

namespace {

const Eigen::Matrix2d kZ = (Eigen::Matrix2d() << 1, 0, 0, -1).finished();
const Eigen::Matrix2d kOmega2 = (Eigen::Matrix2d() << 0, 1, -1, 0).finished();

}  // namespace

CovarianceMatrix::CovarianceMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols() || m_.rows() == 0 || m_.rows() % 2 != 0) {
    throw std::invalid_argument("covariance matrix must be square with even dimension");
  }
  const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, m_.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("covariance matrix is not symmetric");
  }
  m_ = ((m_ + m_.transpose()) / 2).eval();
  modes_ = static_cast<int>(m_.rows()) / 2;
}

Eigen::Matrix2d CovarianceMatrix::block(int mode_i, int mode_j) const {
  if (mode_i < 0 || mode_i >= modes_ || mode_j < 0 || mode_j >= modes_) {
    throw std::out_of_range("mode index out of range");
  }
  return m_.block<2, 2>(2 * mode_i, 2 * mode_j);
}

bool CovarianceMatrix::is_physical(double tol) const {
  return symplectic_eigenvalues(*this).min() >= 1.0 - tol;
}

double SymplecticSpectrum::min() const {
  if (eigenvalues.empty()) throw std::logic_error("empty symplectic spectrum");
  return eigenvalues.front();
}

GaussianState::GaussianState(Eigen::VectorXd mean_in, CovarianceMatrix cm_in)
    : mean(std::move(mean_in)), cm(std::move(cm_in)) {
  if (mean.size() != cm.size()) {
    throw std::invalid_argument("mean length must equal 2 x modes");
  }
}

Eigen::MatrixXd symplectic_form(int modes) {
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(2 * modes, 2 * modes);
  for (int k = 0; k < modes; ++k) omega.block<2, 2>(2 * k, 2 * k) = kOmega2;
  return omega;
}

CovarianceMatrix epr_cm(double mu) {
  if (!(mu >= 1.0)) throw std::domain_error("epr_cm requires mu >= 1");
  const double mup = std::sqrt(mu * mu - 1.0);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(4, 4);
  v.block<2, 2>(0, 0) = mu * Eigen::Matrix2d::Identity();
  v.block<2, 2>(2, 2) = mu * Eigen::Matrix2d::Identity();
  v.block<2, 2>(0, 2) = mup * kZ;
  v.block<2, 2>(2, 0) = mup * kZ;
  return CovarianceMatrix(v);
}

CovarianceMatrix two_mode_thermal_cm(double omega_a, double omega_b, double g,
                                     double g_prime) {
  if (!(omega_a >= 1.0) || !(omega_b >= 1.0)) {
    throw std::domain_error("thermal variances must be >= 1");
  }
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(4, 4);
  v.block<2, 2>(0, 0) = omega_a * Eigen::Matrix2d::Identity();
  v.block<2, 2>(2, 2) = omega_b * Eigen::Matrix2d::Identity();
  Eigen::Matrix2d gmat;
  gmat << g, 0, 0, g_prime;
  v.block<2, 2>(0, 2) = gmat;
  v.block<2, 2>(2, 0) = gmat;
  return CovarianceMatrix(v);
}

Eigen::MatrixXd beam_splitter_symplectic(double tau, int mode_i, int mode_j,
                                         int total_modes) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::domain_error("tau must lie in [0, 1]");
  if (mode_i == mode_j || mode_i < 0 || mode_j < 0 || mode_i >= total_modes ||
      mode_j >= total_modes) {
    throw std::out_of_range("beam splitter mode indices invalid");
  }
  const double st = std::sqrt(tau);
  const double sr = std::sqrt(1.0 - tau);
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2 * total_modes, 2 * total_modes);
  const Eigen::Matrix2d i2 = Eigen::Matrix2d::Identity();
  s.block<2, 2>(2 * mode_i, 2 * mode_i) = st * i2;
  s.block<2, 2>(2 * mode_i, 2 * mode_j) = sr * i2;
  s.block<2, 2>(2 * mode_j, 2 * mode_i) = -sr * i2;
  s.block<2, 2>(2 * mode_j, 2 * mode_j) = st * i2;
  return s;
}

CovarianceMatrix apply_symplectic(const CovarianceMatrix& cm,
                                  const Eigen::MatrixXd& s) {
  if (s.rows() != cm.size() || s.cols() != cm.size()) {
    throw std::invalid_argument("symplectic dimension mismatch");
  }
  return CovarianceMatrix(s * cm.matrix() * s.transpose());
}

CovarianceMatrix partial_trace(const CovarianceMatrix& cm,
                               const std::vector<int>& keep_modes) {
  if (keep_modes.empty()) throw std::invalid_argument("must keep at least one mode");
  for (std::size_t k = 0; k < keep_modes.size(); ++k) {
    if (keep_modes[k] < 0 || keep_modes[k] >= cm.modes()) {
      throw std::out_of_range("partial_trace mode index out of range");
    }
    if (k > 0 && keep_modes[k] <= keep_modes[k - 1]) {
      throw std::invalid_argument("keep_modes must be strictly increasing");
    }
  }
  const int n = static_cast<int>(keep_modes.size());
  Eigen::MatrixXd out(2 * n, 2 * n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      out.block<2, 2>(2 * a, 2 * b) =
          cm.matrix().block<2, 2>(2 * keep_modes[a], 2 * keep_modes[b]);
    }
  }
  return CovarianceMatrix(out);
}

CovarianceMatrix permute_modes(const CovarianceMatrix& cm,
                               const std::vector<int>& order) {
  if (static_cast<int>(order.size()) != cm.modes()) {
    throw std::invalid_argument("permutation length must equal mode count");
  }
  std::vector<bool> seen(order.size(), false);
  for (int idx : order) {
    if (idx < 0 || idx >= cm.modes() || seen[idx]) {
      throw std::invalid_argument("invalid mode permutation");
    }
    seen[idx] = true;
  }
  const int n = cm.modes();
  Eigen::MatrixXd out(2 * n, 2 * n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      out.block<2, 2>(2 * a, 2 * b) =
          cm.matrix().block<2, 2>(2 * order[a], 2 * order[b]);
    }
  }
  return CovarianceMatrix(out);
}

Eigen::Matrix2d condition_on_heterodyne(const CovarianceMatrix& cm) {
  if (cm.modes() != 2) throw std::invalid_argument("heterodyne conditioning expects 2 modes");
  const Eigen::Matrix2d a = cm.block(0, 0);
  const Eigen::Matrix2d c = cm.block(0, 1);
  const Eigen::Matrix2d b = cm.block(1, 1);
  const Eigen::Matrix2d ai = a + Eigen::Matrix2d::Identity();
  const double det = ai.determinant();
  if (std::abs(det) < 1e-14) {
    // a + I is positive definite for any physical CM.
    throw std::logic_error("singular (a + I) in heterodyne conditioning");
  }
  return b - c.transpose() * ai.inverse() * c;
}

Eigen::Matrix2d condition_on_heterodyne_alt(const CovarianceMatrix& cm) {
  if (cm.modes() != 2) throw std::invalid_argument("heterodyne conditioning expects 2 modes");
  const Eigen::Matrix2d a = cm.block(0, 0);
  const Eigen::Matrix2d c = cm.block(0, 1);
  const Eigen::Matrix2d b = cm.block(1, 1);
  const double zeta = a.determinant() + a.trace() + 1.0;
  if (std::abs(zeta) < 1e-14) {
    throw std::logic_error("singular zeta in heterodyne conditioning");
  }
  const Eigen::Matrix2d core =
      kOmega2 * a * kOmega2.transpose() + Eigen::Matrix2d::Identity();
  return b - (c.transpose() * core * c) / zeta;
}

Eigen::Matrix2d bell_theta(const CovarianceMatrix& cm) {
  if (cm.modes() != 4) throw std::invalid_argument("Bell conditioning expects 4 modes");
  const Eigen::Matrix2d a = cm.block(2, 2);
  const Eigen::Matrix2d b = cm.block(3, 3);
  const Eigen::Matrix2d d = cm.block(2, 3);
  return 0.5 * (kZ * a * kZ + b - kZ * d - d.transpose() * kZ);
}

CovarianceMatrix condition_on_bell(const CovarianceMatrix& cm) {
  const Eigen::Matrix2d theta = bell_theta(cm);
  const double det_theta = theta.determinant();
  if (det_theta <= 1e-12) {
    throw std::runtime_error("degenerate Bell detection: det Theta <= 1e-12");
  }
  Eigen::Matrix2d x1, x2;
  x1 << 0, 1, 1, 0;
  x2 << 0, 1, -1, 0;
  const Eigen::Matrix2d xs[2] = {x1, x2};

  Eigen::Matrix<double, 4, 2> c[2];
  c[0] = cm.matrix().block<4, 2>(0, 4);  // coupling of (a, b) to A'
  c[1] = cm.matrix().block<4, 2>(0, 6);  // coupling of (a, b) to B'
  const Eigen::Matrix4d v_ab = cm.matrix().block<4, 4>(0, 0);

  Eigen::Matrix4d corr = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      corr += c[i] * (xs[i].transpose() * theta * xs[j]) * c[j].transpose();
    }
  }
  return CovarianceMatrix(v_ab - corr / (2.0 * det_theta));
}

SymplecticSpectrum symplectic_eigenvalues(const CovarianceMatrix& cm) {
  if (cm.modes() == 2) return symplectic_eigenvalues_two_mode(cm);
  const Eigen::MatrixXd m = symplectic_form(cm.modes()) * cm.matrix();
  Eigen::ComplexEigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
  std::vector<double> moduli(static_cast<std::size_t>(cm.size()));
  for (int k = 0; k < cm.size(); ++k) moduli[static_cast<std::size_t>(k)] = std::abs(solver.eigenvalues()(k));
  std::sort(moduli.begin(), moduli.end());
  // Eigenvalues of i Omega V come in +-nu pairs; average each pair.
  SymplecticSpectrum spec;
  spec.eigenvalues.reserve(static_cast<std::size_t>(cm.modes()));
  for (int k = 0; k < cm.modes(); ++k) {
    spec.eigenvalues.push_back((moduli[2 * static_cast<std::size_t>(k)] +
                                moduli[2 * static_cast<std::size_t>(k) + 1]) / 2.0);
  }
  return spec;
}

SymplecticSpectrum symplectic_eigenvalues_two_mode(const CovarianceMatrix& cm) {
  if (cm.modes() != 2) throw std::invalid_argument("expected a two-mode CM");
  const double det_a = cm.block(0, 0).determinant();
  const double det_b = cm.block(1, 1).determinant();
  const double det_c = cm.block(0, 1).determinant();
  const double det_v = cm.matrix().determinant();
  const double delta = det_a + det_b + 2.0 * det_c;
  const double disc = std::max(0.0, delta * delta - 4.0 * det_v);
  const double root = std::sqrt(disc);
  const double nu_plus_sq = (delta + root) / 2.0;
  // Small eigenvalue via the product form; avoids the cancellation in
  // (delta - root)/2 when nu_plus >> nu_minus.
  const double nu_minus_sq =
      nu_plus_sq > 0 ? std::max(0.0, det_v) / nu_plus_sq : (delta - root) / 2.0;
  SymplecticSpectrum spec;
  spec.eigenvalues = {std::sqrt(std::max(0.0, nu_minus_sq)),
                      std::sqrt(std::max(0.0, nu_plus_sq))};
  return spec;
}

double h_entropy(double x, double tol) {
  if (x < 1.0 - tol) throw std::domain_error("h_entropy requires x >= 1");
  if (x <= 1.0) return 0.0;
  if (x < 2.0) {
    const double hp = (x + 1.0) / 2.0;
    const double hm = (x - 1.0) / 2.0;
    return hp * std::log2(hp) - hm * std::log2(hm);
  }
  // h(x) = [x atanh(1/x) + (1/2) ln((x^2-1)/4)] / ln 2, stable for large x.
  return (x * std::atanh(1.0 / x) + 0.5 * std::log((x * x - 1.0) / 4.0)) / M_LN2;
}

double von_neumann_entropy(const CovarianceMatrix& cm, double tol) {
  double s = 0.0;
  for (double nu : symplectic_eigenvalues(cm).eigenvalues) s += h_entropy(nu, tol);
  return s;
}

}  // namespace cvmdi
