#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "vmsrb/assembly.hpp"

namespace vmsrb {

struct SolverOptions {
  double tol_nl = 1e-10;   // increment tolerance in the X-norm
  double tol_r = 1e-10;    // residual dual-norm tolerance
  int max_iters = 200;
  double relax = 0.8;      // damping factor engaged on residual increase
  double lid_speed = 1.0;  // lid velocity magnitude for the cavity lifting
  bool verbose = false;
};

/// Converged full-order solution at one parameter value. `u` holds the
/// homogeneous velocity part (zero at every Dirichlet dof); the physical
/// field is lifting() + u. `p` has exactly zero mean.
struct Snapshot {
  double mu = 0.0;
  VectorXd u;
  VectorXd p;
  std::string lifting_id = "none";
  double residual_norm = 0.0;
  int iterations = 0;
};

struct AprioriBound {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

struct AprioriReport {
  bool applicable = false;
  std::string reason;
  std::array<AprioriBound, 3> bounds;
  double c_p = 0.0, c_s4 = 0.0, c_f = 0.0, alpha = 0.0, f_l2 = 0.0;
  bool all_hold() const {
    return applicable && bounds[0].holds && bounds[1].holds && bounds[2].holds;
  }
};

/// Semi-implicit Picard solver for the full-order problem. Each iteration
/// freezes the eddy viscosity, the stabilization coefficients, and the
/// convecting field at the current iterate and solves one linear saddle
/// system (sparse LU) with a scalar multiplier pinning the pressure mean.
///
/// Steps are full Picard updates while the residual decreases; on an
/// increase a damping factor (default 0.8) engages, halves on each further
/// increase (floor 0.05), and recovers gradually while decreases last.
class FomSolver {
 public:
  explicit FomSolver(const FeSystem& sys, SolverOptions opts = {});
  FomSolver(const FomSolver&) = delete;
  FomSolver& operator=(const FomSolver&) = delete;

  const FeSystem& system() const { return *sys_; }
  const SolverOptions& options() const { return opts_; }

  /// Harmonic lifting of the regularized cavity lid data (lid_speed, 0);
  /// the top corners take the wall value 0.
  const VectorXd& lifting() const { return u_d_; }

  /// Fingerprint of everything that determines a solve besides mu and the
  /// mesh: model coefficients, discretization degrees, tolerances.
  std::uint64_t config_hash() const;

  /// Lid-driven cavity problem (zero body force).
  Snapshot solve(double mu, const Snapshot* init = nullptr) const;

  /// Homogeneous Dirichlet problem with the given assembled load vector.
  Snapshot solve_homogeneous(double mu, const VectorXd& load,
                             const Snapshot* init = nullptr) const;

  /// Verifies the a priori estimates on a homogeneous-data snapshot with
  /// body force f (the measured constants are computed on the fly). A
  /// lifted snapshot yields an explicit not-applicable report.
  AprioriReport check_apriori(const Snapshot& snap,
                              const std::function<Vector2d(double, double)>& f) const;

  /// K_ff^{-1} rhs on the free velocity dofs (plain gradient product);
  /// used by the supremizer construction and the Riesz machinery.
  VectorXd stiffness_solve(const VectorXd& rhs_free) const;

  /// Plain X-norm of an increment: sqrt(|grad du|^2 + |dp|^2).
  double xnorm(const VectorXd& du, const VectorXd& dp) const;

  /// Dual norm of an assembled residual over free velocity dofs and the
  /// zero-mean pressure subspace, with the plain X Gram matrix.
  double residual_dual_norm(const VectorXd& r) const;

  const std::vector<int>& free_vector_dofs() const { return free_vec_; }
  const SpMat& restriction() const { return rv_; }

 private:
  Snapshot solve_impl(double mu, const VectorXd& u_d, const VectorXd& load,
                      const std::string& lifting_id, const Snapshot* init) const;
  void build_lifting();

  const FeSystem* sys_;
  SolverOptions opts_;
  std::vector<int> free_vec_;
  SpMat rv_;    // free-velocity restriction
  SpMat kff_;   // velocity Gram on free dofs
  Eigen::SimplicialLDLT<SpMat> kff_ldlt_;
  Eigen::SimplicialLDLT<SpMat> mp_ldlt_;
  VectorXd e_;      // Mp * 1 (pressure mean functional)
  double area_ = 0.0;
  VectorXd u_d_;
  VectorXd d_u_d_;  // D * u_d, fixed per problem
};

/// Memory + optional disk cache of converged snapshots, with continuation:
/// a new parameter value is warm-started from the nearest solved one.
/// Disk entries are keyed by (mesh hash, config hash, mu bit pattern) and
/// validated against the solver on load.
class SnapshotCache {
 public:
  explicit SnapshotCache(const FomSolver& solver, std::string dir = "");

  const Snapshot& get(double mu);
  bool contains(double mu) const;
  std::size_t size() const { return memory_.size(); }
  const std::map<double, Snapshot>& entries() const { return memory_; }

  static void save_snapshot(const Snapshot& snap, const FomSolver& solver,
                            const std::string& path);
  static Snapshot load_snapshot(const std::string& path, const FomSolver& solver);

 private:
  std::string file_path(double mu) const;

  const FomSolver* solver_;
  std::string dir_;
  std::map<double, Snapshot> memory_;
};

}  // namespace vmsrb
