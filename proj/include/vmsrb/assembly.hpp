#pragma once

#include <functional>
#include <vector>

#include "vmsrb/fe_space.hpp"
#include "vmsrb/mesh.hpp"
#include "vmsrb/parallel.hpp"
#include "vmsrb/quadrature.hpp"

namespace vmsrb {

/// Which velocity feeds the eddy viscosity: the fluctuation Pi_h* u
/// (small-small) or the full field (large-small).
enum class VmsVariant { SmallSmall, LargeSmall };

/// Physical/stabilization constants and the parameter domain.
struct ModelCoefficients {
  double c_s = 0.1;  // Smagorinsky constant
  double c1 = 4.0;   // Codina constants
  double c2 = 2.0;
  double mu_min = 1000.0;
  double mu_max = 5100.0;
  VmsVariant variant = VmsVariant::SmallSmall;

  void validate() const;
  bool in_domain(double mu) const { return mu >= mu_min && mu <= mu_max; }
};

/// nu_T = c_s^2 h_K^2 |grad u_small|_F at every quadrature point, computed
/// from raw basis-gradient sums. u_small is component-blocked and already
/// scale-separated (or the full field for the large-small variant).
VectorXd eddy_viscosity(const ModelCoefficients& coeffs, const DofHandler& velocity,
                        const VectorXd& u_small);

/// Codina pressure-stabilization coefficient
///   tau = 1 / ( c1 (1/mu + nu_bar)/h^2 + c2 U / h ).
/// Rejects mu outside the parameter domain and negative local scales.
double codina_tau(const ModelCoefficients& coeffs, double mu, double h_K,
                  double nu_bar_K, double u_K);

/// Selection matrix R with R(i, rows[i]) = 1, so R x picks the listed
/// entries and R A R^T restricts a square operator.
SpMat row_selection(const std::vector<int>& rows, int n);

/// Assembled forms of the LPS-VMS-Smagorinsky model on one mesh.
///
/// Velocity is always degree 2; pressure degree 1 (Taylor-Hood) or 2
/// (equal-order). Velocity coefficient vectors are component-blocked
/// [all x; all y]. State-dependent matrices are assembled by
/// element-parallel kernels with element-index-ordered accumulation, so
/// results are bitwise reproducible for any worker count.
///
/// The mesh must outlive the system. Not copyable (members hold internal
/// pointers).
class FeSystem {
 public:
  FeSystem(const Mesh& mesh, int pressure_degree, const ModelCoefficients& coeffs,
           int quad_degree = 6, Exec exec = default_exec());
  FeSystem(const FeSystem&) = delete;
  FeSystem& operator=(const FeSystem&) = delete;

  const Mesh& mesh() const { return *mesh_; }
  const ModelCoefficients& coeffs() const { return coeffs_; }
  const DofHandler& velocity() const { return vel_; }
  const DofHandler& pressure() const { return pres_; }
  const ScaleSeparation& scales() const { return sep_; }
  const FluctuationOperator& fluct() const { return fluct_; }
  Exec exec() const { return exec_; }
  void set_exec(Exec e) { exec_ = e; }

  int n_us() const { return vel_.n_scalar(); }
  int n_u() const { return 2 * vel_.n_scalar(); }
  int n_p() const { return pres_.n_scalar(); }
  int n_dofs() const { return n_u() + n_p(); }

  /// Scalar velocity stiffness / mass.
  const SpMat& Ks() const { return Ks_; }
  const SpMat& Ms() const { return Ms_; }
  /// Vector (component-blocked) velocity stiffness / mass.
  const SpMat& K() const { return K_; }
  const SpMat& Mv() const { return Mv_; }
  /// Pressure mass / stiffness.
  const SpMat& Mp() const { return Mp_; }
  const SpMat& Kp() const { return Kp_; }
  /// Divergence coupling D(i,j) = (div phi_j, psi_i); the p-row block.
  const SpMat& D() const { return D_; }
  /// Gradient samplers at quadrature points, row 4*qp + 2*comp + deriv.
  const SpMat& Gfull() const { return Gfull_; }
  const SpMat& Gs() const { return Gs_; }
  /// Velocity value sampler, row 2*qp + comp.
  const SpMat& Vq() const { return Vq_; }
  /// Pressure-fluctuation sampler sigma*(grad p), row 2*qp + comp.
  const SpMat& E() const { return fluct_.E(); }

  /// Physical quadrature weights (size nq_total) and owning element ids.
  const VectorXd& qw() const { return qw_; }
  const VectorXi& qelem() const { return qelem_; }

  /// Scalar velocity dofs not on the Dirichlet boundary (sorted).
  std::vector<int> free_velocity_scalar_dofs() const;

  /// nu_T at every quadrature point for the given full velocity field;
  /// applies the configured variant branch internally.
  VectorXd nu_field(const VectorXd& u) const;
  /// Per-element Codina coefficients, freezing nu_bar (mean of nu_T over
  /// the element's quadrature points) and U_K (componentwise max over the
  /// element's dofs) at the given state.
  VectorXd tau_field(const VectorXd& u, double mu) const;

  /// Skew convection matrix C(z): (C(z)u, v) = c(z, u, v).
  SpMat conv_matrix(const VectorXd& z) const;
  /// Derivative of z -> C(z) u at fixed u: (M z, v) = c(z, u, v).
  SpMat conv_matrix_dz(const VectorXd& u) const;
  /// Smagorinsky matrix for a frozen per-quadrature-point viscosity:
  /// (M u, v) = sum_qp nu w grad(Pi* u) : grad(Pi* v).
  SpMat smag_matrix(const VectorXd& nu_qp) const;
  /// Weighted vector stiffness for a frozen per-quadrature-point scalar
  /// weight: (M u, v) = sum_qp w_qp grad u : grad v with full gradients.
  /// With w = 1 this reproduces K(); the weighted inner product of the
  /// reduced-basis machinery passes 1/mu_bar + nu_T'*.
  SpMat weighted_stiffness(const VectorXd& w_qp) const;
  /// Rank part of the Smagorinsky tangent at state u (the term with the
  /// |grad filter(u)| denominator; zero wherever that gradient vanishes).
  SpMat smag_rank_matrix(const VectorXd& u) const;
  /// LPS pressure stabilization for frozen per-element tau:
  /// (S p, q) = sum_K tau_K (sigma*(grad p), sigma*(grad q))_K.
  SpMat lps_matrix(const VectorXd& tau_elem) const;

  /// Load functional (f, v) by quadrature of a user function.
  VectorXd load_vector(const std::function<Vector2d(double, double)>& f) const;

  /// Residual of the nonlinear system at raw coefficients (no boundary
  /// handling):
  ///   R_u = (1/mu) K u + C(u) u + M_S(nu(u)) u - D^T p - load
  ///   R_p = D u + S(tau) p
  VectorXd residual(const VectorXd& u, const VectorXd& p, double mu,
                    const VectorXd& tau_elem, const VectorXd& load) const;
  /// Directional-derivative operator of the residual at (u, .), with tau
  /// frozen (its state dependence is not differentiated).
  SpMat tangent(const VectorXd& u, double mu, const VectorXd& tau_elem) const;

 private:
  void build_constant_operators();
  // local small-scale gradient table for element k: row 2*q+d, col i
  MatrixXd small_grad_table(int k) const;
  MatrixXd full_grad_table(int k) const;

  const Mesh* mesh_;
  ModelCoefficients coeffs_;
  Exec exec_;
  DofHandler vel_;
  DofHandler pres_;
  ScaleSeparation sep_;
  FluctuationOperator fluct_;
  VectorXd qw_;
  VectorXi qelem_;
  SpMat Ks_, Ms_, K_, Mv_, Mp_, Kp_, D_, Gfull_, Gs_, Vq_;
};

}  // namespace vmsrb
