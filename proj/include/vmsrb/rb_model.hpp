#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vmsrb/container.hpp"
#include "vmsrb/eim.hpp"

namespace vmsrb {

/// Weighted velocity inner product anchoring the reduced-basis machinery:
///   (u, v)_T = sum_qp (1/mu_bar + nu_T'*) grad u : grad v
/// with the eddy viscosity frozen from the full-order solution at mu_bar.
struct TInnerProduct {
  double mu_bar = 0.0;
  VectorXd weight_qp;  // 1/mu_bar + nu_T'* at every quadrature point
  SpMat gram;          // assembled velocity Gram, component-blocked size
};

/// Anchor parameter: argmin over a coarse grid of
///   F(mu) = sum_K min over the element's quadrature points of nu_T
/// evaluated on converged solutions (nu_T already carries the (C_S h_K)^2
/// factor). Ties resolve to the smallest mu. Every grid point is solved
/// through the cache, so continuation order matters for cost only.
double find_mu_bar(const FomSolver& solver, SnapshotCache& cache, int grid_size = 20);

TInnerProduct build_t_product(const FomSolver& solver, SnapshotCache& cache,
                              int grid_size = 20);

/// Pressure supremizer: solves the vector Poisson problem
///   (grad T, grad v) = b(v, q) = -(q, div v)   for all v in Y_h
/// with homogeneous Dirichlet data. mu is validated against the parameter
/// domain; the right-hand side itself does not depend on it.
VectorXd compute_supremizer(const FomSolver& solver, const VectorXd& q, double mu);

/// Extends a gram-orthonormal basis by one column via modified
/// Gram-Schmidt with one re-orthogonalization pass. Returns false and
/// leaves the basis untouched when the orthogonal remainder is below
/// drop_tol relative to the input norm (numerically dependent direction).
bool mgs_extend(MatrixXd& basis, const SpMat& gram, const VectorXd& v,
                double drop_tol = 1e-10);

/// Offline data of the reduced solver. Velocity basis columns are
/// T-orthonormal and vanish on the Dirichlet boundary; pressure columns
/// are L2-orthonormal with zero mean. All tensors are rebuilt from
/// scratch after each basis extension (build_reduced_tensors).
///
/// Tensor conventions, with zeta_j the velocity columns, xi_q the
/// pressure columns, u_D the lifting, and q^S_s / q^P_s the EIM basis
/// columns for the eddy viscosity / stabilization coefficient:
///   kr(i,j)  = (grad zeta_j, grad zeta_i)      kd_i  = (grad u_D, grad zeta_i)
///   dr(q,j)  = (div zeta_j, xi_q)              dd_q  = (div u_D, xi_q)
///   cr[j](i,k) = c(zeta_j, zeta_k, zeta_i)     cd1(i,k) = c(u_D, zeta_k, zeta_i)
///   cd2(i,j) = c(zeta_j, u_D, zeta_i)          cdd_i = c(u_D, u_D, zeta_i)
///   ss[s](i,j) = (q^S_s grad Pi* zeta_j, grad Pi* zeta_i)
///   sd(i,s)  = (q^S_s grad Pi* u_D, grad Pi* zeta_i)
///   ps[s](i,j) = (q^P_s sigma*(grad xi_j), sigma*(grad xi_i))
///   fr_i     = (f, zeta_i)
///
/// Magic-point pipelines reproduce nu_field / tau_field restricted to the
/// EIM sample points as dense functions of the reduced coefficients z:
///   sigma^S: g_m = magic_s_lift[4m..] + magic_s_basis.rows(4m..) z,
///            nu_m = magic_s_fac[m] * |g_m|  (Frobenius norm of the 2x2 block)
///   sigma^P: per magic element, gradients at all its quadrature points
///            (magic_p_gbasis/glift, stride 4*nq) give nu_bar, velocity
///            coefficients at its local dofs (magic_p_vbasis/vlift, stride
///            2*nloc) give U_K, and codina_tau(coeffs, mu, magic_p_h[m],
///            nu_bar, U_K) gives the coefficient value.
struct ReducedModel {
  ModelCoefficients coeffs;  // echoed from the system at tensor build time
  bool supremizers = false;
  std::string status;  // greedy termination: converged | n_max | exhausted
  std::vector<double> selected_mus;
  std::vector<double> anchor_betas;

  double mu_bar = 0.0;

  MatrixXd zeta;  // n_u x dim_y
  MatrixXd xi;    // n_p x n

  EimModel eim_nu;
  EimModel eim_tau;

  MatrixXd kr, dr, cd1, cd2, sd;
  VectorXd kd, dd, cdd, fr;
  std::vector<MatrixXd> cr;
  std::vector<MatrixXd> ss;
  std::vector<MatrixXd> ps;

  MatrixXd magic_s_basis;
  VectorXd magic_s_lift, magic_s_fac;
  MatrixXd magic_p_gbasis, magic_p_vbasis;
  VectorXd magic_p_glift, magic_p_vlift, magic_p_h;

  // estimator calibration and reduced residual Grams (filled by the
  // certifier; empty when the model is not certified)
  double rho_t = 0.0, c_pass = 0.0, c_hat = 0.0;
  MatrixXd g_v, g_p;

  int dim_y() const { return static_cast<int>(zeta.cols()); }
  int n() const { return static_cast<int>(xi.cols()); }
  int m1() const { return eim_nu.size(); }
  int m2() const { return eim_tau.size(); }
};

/// Rebuilds every dense tensor and magic-point pipeline from the current
/// bases and EIM models. Requires trained EIM models and at least one
/// basis column on each side.
void build_reduced_tensors(ReducedModel& model, const FomSolver& solver);

/// nu_T at the eddy-viscosity magic points as a function of the reduced
/// coefficients; mirrors nu_field restricted to those quadrature points.
VectorXd magic_nu_values(const ReducedModel& model, const VectorXd& z);

/// Codina coefficient at the stabilization magic elements; mirrors
/// tau_field restricted to those elements. Rejects mu outside the domain.
VectorXd magic_tau_values(const ReducedModel& model, const VectorXd& z, double mu);

std::string variant_name(VmsVariant v);
VmsVariant parse_variant(const std::string& name);

/// Full-order fields from reduced coefficients: u = zeta z (homogeneous;
/// the physical field adds the lifting), p = xi q re-centered to exact
/// zero mean.
Snapshot reconstruct_full(const ReducedModel& model, const FomSolver& solver,
                          const VectorXd& z, const VectorXd& q, double mu);

/// Directory persistence: manifest.json (dims, status, constants, full
/// configuration echo, hashes), mesh.txt, arrays.bin, eim_nu.bin,
/// eim_tau.bin. The manifest carries everything needed to rebuild the
/// full-order side.
void save_model(const ReducedModel& model, const FomSolver& solver,
                const std::string& dir);

/// A loaded model owning its rebuilt full-order machinery. Member order
/// fixes destruction order (solver before system before mesh).
struct ModelBundle {
  std::unique_ptr<Mesh> mesh;
  std::unique_ptr<FeSystem> system;
  std::unique_ptr<FomSolver> solver;
  ReducedModel model;
};

/// Loads a persisted model and reconstructs mesh, FE system, and solver
/// from the manifest. Mesh and configuration hashes are validated; any
/// mismatch throws ConfigError.
ModelBundle load_model(const std::string& dir);

}  // namespace vmsrb
