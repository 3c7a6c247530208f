#pragma once

#include <Eigen/Dense>
#include <vector>

// Covariance-matrix algebra for Gaussian bosonic states.
//
// Conventions: hbar = 2, vacuum variance = 1, quadrature ordering
// (q1, p1, q2, p2, ...). All matrices are real and symmetric; a state of
// n modes is a 2n x 2n covariance matrix (CM).

namespace cvmdi {

/// Real symmetric covariance matrix of an n-mode Gaussian state.
/// Construction symmetrizes the input and rejects asymmetry above 1e-12.
class CovarianceMatrix {
 public:
  explicit CovarianceMatrix(Eigen::MatrixXd m);

  int modes() const { return modes_; }
  int size() const { return 2 * modes_; }
  const Eigen::MatrixXd& matrix() const { return m_; }

  double operator()(int i, int j) const { return m_(i, j); }

  /// 2x2 block coupling mode i to mode j.
  Eigen::Matrix2d block(int mode_i, int mode_j) const;

  /// True when every symplectic eigenvalue is >= 1 - tol.
  bool is_physical(double tol = 1e-9) const;

 private:
  Eigen::MatrixXd m_;
  int modes_;
};

/// Symplectic eigenvalues, ascending, one entry per mode.
struct SymplecticSpectrum {
  std::vector<double> eigenvalues;

  double min() const;
};

/// Gaussian state: first moments plus CM. The paper's analysis is zero-mean;
/// the mean vector carries displacement bookkeeping for sampling code.
struct GaussianState {
  Eigen::VectorXd mean;
  CovarianceMatrix cm;

  GaussianState(Eigen::VectorXd mean_in, CovarianceMatrix cm_in);
};

/// Symplectic form Omega = direct sum of [[0,1],[-1,0]] over n modes.
Eigen::MatrixXd symplectic_form(int modes);

/// Two-mode squeezed vacuum (EPR) CM [[mu I, mu' Z], [mu' Z, mu I]] with
/// mu' = sqrt(mu^2 - 1), Z = diag(1, -1). Requires mu >= 1.
CovarianceMatrix epr_cm(double mu);

/// Correlated two-mode thermal CM [[wa I, G], [G, wb I]], G = diag(g, gp).
/// Requires wa, wb >= 1. Does not check the bona-fide (uncertainty)
/// constraints on g, gp; that classification lives in attack.hpp.
CovarianceMatrix two_mode_thermal_cm(double omega_a, double omega_b, double g,
                                     double g_prime);

/// Beam-splitter symplectic of transmissivity tau acting on (mode_i, mode_j),
/// embedded in a 2*total_modes identity. Block form
/// [[sqrt(tau) I, sqrt(1-tau) I], [-sqrt(1-tau) I, sqrt(tau) I]]; transpose
/// the returned matrix for the mirrored convention.
Eigen::MatrixXd beam_splitter_symplectic(double tau, int mode_i, int mode_j,
                                         int total_modes);

/// V -> S V S^T.
CovarianceMatrix apply_symplectic(const CovarianceMatrix& cm,
                                  const Eigen::MatrixXd& s);

/// Keep the listed modes (strictly increasing indices), dropping the rest.
CovarianceMatrix partial_trace(const CovarianceMatrix& cm,
                               const std::vector<int>& keep_modes);

/// Reorder modes: new mode k is old mode order[k].
CovarianceMatrix permute_modes(const CovarianceMatrix& cm,
                               const std::vector<int>& order);

/// Heterodyne conditioning of a two-mode CM [[a, c], [c^T, b]] on the first
/// mode: returns b - c^T (a + I)^{-1} c.
Eigen::Matrix2d condition_on_heterodyne(const CovarianceMatrix& cm);

/// Same conditioning through the determinant identity
/// b - zeta^{-1} c^T (Omega a Omega^T + I) c, zeta = det a + tr a + 1.
/// Must agree with condition_on_heterodyne; the equivalence is a test.
Eigen::Matrix2d condition_on_heterodyne_alt(const CovarianceMatrix& cm);

/// Theta matrix (1/2)(Z A Z + B - Z D - D^T Z) of a Bell detection on the
/// last two modes of a 4-mode CM ordered (a, b, A', B').
Eigen::Matrix2d bell_theta(const CovarianceMatrix& cm);

/// Conditional CM of modes (a, b) after a Bell detection (balanced beam
/// splitter + conjugate homodynes) of modes (A', B'). Input ordered
/// (a, b, A', B'). Throws when det Theta <= 1e-12 (degenerate detection).
CovarianceMatrix condition_on_bell(const CovarianceMatrix& cm);

/// Moduli of the eigenvalues of i Omega V, each reported once.
/// Unphysical inputs simply yield eigenvalues < 1; callers decide.
SymplecticSpectrum symplectic_eigenvalues(const CovarianceMatrix& cm);

/// Symplectic spectrum of a two-mode CM through the closed form
/// 2 nu_{-+}^2 = Delta -+ sqrt(Delta^2 - 4 det V), Delta = det A + det B + 2 det C,
/// evaluated in a cancellation-safe arrangement.
SymplecticSpectrum symplectic_eigenvalues_two_mode(const CovarianceMatrix& cm);

/// Entropy kernel h(x) = ((x+1)/2)log2((x+1)/2) - ((x-1)/2)log2((x-1)/2),
/// in bits. Values in [1 - tol, 1] clamp to 1 (h = 0); below that is a
/// domain error. For large x, h(x) ~ log2(e x / 2).
double h_entropy(double x, double tol = 1e-9);

/// Von Neumann entropy in bits: sum of h over the symplectic spectrum.
double von_neumann_entropy(const CovarianceMatrix& cm, double tol = 1e-9);

}  // namespace cvmdi
