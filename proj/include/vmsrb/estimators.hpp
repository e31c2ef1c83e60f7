#pragma once

#include "vmsrb/rb_model.hpp"

#include <Eigen/SparseCholesky>

namespace vmsrb {

/// Index map for the expanded residual functionals. The reduced state is
/// extended with a trailing lifting slot, zext = [z; 1], so W = dim_Y + 1
/// columns cover every velocity field entering the residual. Velocity
/// functionals, in storage order:
///   0                      load (theta = -1)
///   1 .. W                 diffusion K zeta~_a        (theta = zext_a / mu)
///   next W^2               convection C(zeta~_a) zeta~_b, a-major
///                                                     (theta = zext_a zext_b)
///   next M1*W              Smagorinsky S(q^S_s) zeta~_a, s-major
///                                                     (theta = sigmaS_s zext_a)
///   next N                 pressure coupling -D^T xi_q (theta = p_q)
/// Pressure functionals:
///   0 .. W                 divergence D zeta~_a       (theta = zext_a)
///   next M2*N              LPS P(q^P_s) xi_q, s-major (theta = sigmaP_s p_q)
struct ResidualLayout {
  int w = 0;
  int n = 0;
  int m1 = 0;
  int m2 = 0;

  int load() const { return 0; }
  int diff(int a) const { return 1 + a; }
  int conv(int a, int b) const { return 1 + w + a * w + b; }
  int sma(int s, int a) const { return 1 + w + w * w + s * w + a; }
  int divp(int q) const { return 1 + w + w * w + m1 * w + q; }
  int n_velocity() const { return 1 + w + w * w + m1 * w + n; }

  int divu(int a) const { return a; }
  int pres(int s, int q) const { return w + s * n + q; }
  int n_pressure() const { return w + m2 * n; }
};

ResidualLayout residual_layout(const ReducedModel& m);

/// Everything the online bound needs at one mu.
struct EstimatorState {
  double beta = 0.0;   // smallest tangent singular value in the X metric
  double gamma = 0.0;  // largest, only filled on request
  double eps = 0.0;    // residual dual norm
  double tau = 0.0;    // 4 eps rho_T / beta^2
  double delta = 0.0;  // error bound; Taylor fallback when tau > 1
  double rho_t = 0.0;
  bool singular = false;   // beta vanished, bound undefined
  bool certified = false;  // tau <= 1 with beta > 0: delta is rigorous
};

struct RhoReport {
  double rho_t = 0.0;
  double c_pass = 0.0;  // C_{S4,T} mu_bar^{1/4}
  double c_hat = 0.0;   // safety * max sampled Smagorinsky Lipschitz ratio
  double c_s4t = 0.0;
  double h = 0.0;
  double max_ratio = 0.0;
  int n_samples = 0;
};

/// Smallest generalized singular value of j in the g metric: sqrt of the
/// smallest eigenvalue of the pencil (j^T g^{-1} j, g), by inverse iteration.
/// A nonempty border column c makes the factorization of the bordered matrix
/// [[j, c], [c^T, 0]] regular when j carries a known rank-one kernel (the
/// constant pressure); iterates then live in {c^T z = 0} automatically.
double pencil_smallest_sv(const SpMat& j, const SpMat& g, const VectorXd& border,
                          int max_iters = 500, double tol = 1e-8);

/// Largest generalized singular value of j in the g metric (power iteration
/// on the same pencil; a kernel of j is harmless here).
double pencil_largest_sv(const SpMat& j, const SpMat& g, int max_iters = 500,
                         double tol = 1e-8);

/// Lipschitz constant of the tangent in the T ⊕ L2 metric,
///   rho_T = 2 C_pass^2 + C_hat h   (d = 2),
/// with C_pass = C_{S4,T} mu_bar^{1/4} from the measured L4 embedding and
/// C_hat a safety factor times the largest Smagorinsky tangent-difference
/// ratio over random zero-pressure quadruples. With C_S = 0 the sampled part
/// vanishes and rho_T = 2 C_pass^2 exactly.
RhoReport calibrate_rho_t(const FeSystem& sys, const TInnerProduct& t,
                          int n_quadruples = 200, unsigned seed = 2024,
                          double safety = 1.5);

/// Residual dual norms, stability factors, and the error bound for one
/// reduced model. Holds the factorizations of the free-velocity T Gram and
/// the pressure mass matrix; build() stacks the expanded residual functionals
/// and stores their Riesz Grams in the model (g_v, g_p). The model, solver,
/// and inner product must outlive the certifier.
class Certifier {
 public:
  Certifier(ReducedModel& m, const FomSolver& solver, const TInnerProduct& t,
            VectorXd load_full = VectorXd());

  const ResidualLayout& layout() const { return lay_; }

  /// Rebuilds the functional stacks and the Grams. Call after every basis or
  /// EIM extension; cost is full-order and quadratic in the functional count.
  void build();

  /// theta vectors for a reduced state; sigma_s/sigma_p are the EIM
  /// coefficients the online operators used.
  void thetas(const VectorXd& z, const VectorXd& q, const VectorXd& sigma_s,
              const VectorXd& sigma_p, double mu, VectorXd& theta_v,
              VectorXd& theta_p) const;

  /// eps_N through the precomputed Grams (online cost).
  double eps_fast(const VectorXd& z, const VectorXd& q, const VectorXd& sigma_s,
                  const VectorXd& sigma_p, double mu) const;

  /// eps_N by assembling the same EIM'd residual at full order and measuring
  /// it through the Riesz maps directly. Validation route.
  double eps_full(const VectorXd& z, const VectorXd& q, const VectorXd& sigma_s,
                  const VectorXd& sigma_p, double mu) const;

  /// Both routes; relative mismatch above 1e-8 means tensor corruption.
  double eps_checked(const VectorXd& z, const VectorXd& q, const VectorXd& sigma_s,
                     const VectorXd& sigma_p, double mu) const;

  /// beta_N at the reconstructed reduced state: tangent with EIM'd tau,
  /// restricted to free velocity ⊕ pressure, measured against
  /// G = blockdiag(T_ff, Mp) with the constant-pressure border.
  double beta_n(const VectorXd& z, const VectorXd& q, double mu) const;

  double gamma_n(const VectorXd& z, const VectorXd& q, double mu) const;

  /// Full state: eps (fast route), beta, tau, delta. EIM coefficients are
  /// recomputed from the reduced state unless provided.
  EstimatorState certify(const VectorXd& z, const VectorXd& q, double mu,
                         const VectorXd* sigma_s = nullptr,
                         const VectorXd* sigma_p = nullptr,
                         bool with_gamma = false) const;

 private:
  SpMat tangent_free(const VectorXd& z, const VectorXd& q, double mu) const;

  ReducedModel* m_;
  const FomSolver* solver_;
  const TInnerProduct* t_;
  VectorXd load_full_;
  ResidualLayout lay_;
  SpMat tff_;
  Eigen::SimplicialLDLT<SpMat> tff_ldlt_;
  Eigen::SimplicialLDLT<SpMat> mp_ldlt_;
  VectorXd e_;  // Mp * 1, the mean functional
  double area_ = 0.0;
  SpMat pz_;         // blockdiag(free-velocity restriction, I_p)
  SpMat g_big_;      // blockdiag(T_ff, Mp)
  VectorXd border_;  // [0; e]
  MatrixXd r_v_, r_p_;
};

}  // namespace vmsrb
