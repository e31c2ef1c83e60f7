#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vmsrb/fom.hpp"

namespace vmsrb {

enum class EimTarget { EddyViscosity, StabCoefficient };

std::string eim_target_name(EimTarget t);

/// A mu-parametrized coefficient field sampled at a fixed sample set:
/// quadrature points for the eddy viscosity, one point per element for the
/// stabilization coefficient. The evaluator must be deterministic in mu.
struct CoefficientManifold {
  EimTarget target = EimTarget::EddyViscosity;
  std::vector<double> training_mus;
  std::function<VectorXd(double)> evaluate;
  std::uint64_t sample_set_hash = 0;
};

/// Interpolation model from the greedy EIM construction. Basis columns are
/// sup-normalized with value exactly 1 at their own magic point, so B with
/// B_ij = q_j(t_i) is lower triangular with unit diagonal and all entries
/// in [-1, 1].
struct EimModel {
  EimTarget target = EimTarget::EddyViscosity;
  MatrixXd basis;                     // n_samples x M
  std::vector<int> magic;             // sample indices t_1..t_M
  MatrixXd b;                         // M x M interpolation matrix
  std::vector<double> selected_mus;   // greedy picks, aligned with basis
  std::vector<double> error_history;  // history[m] = max training error of the m-term model
  double eps_target = 0.0;
  bool hit_m_max = false;
  std::uint64_t sample_set_hash = 0;

  int size() const { return static_cast<int>(magic.size()); }
  int n_samples() const { return static_cast<int>(basis.rows()); }

  /// Solve B sigma = g(t_1..t_M); O(M^2).
  VectorXd coefficients(const VectorXd& g_at_magic) const;
  /// I_M[g] over the whole sample set given the magic-point values.
  VectorXd interpolate(const VectorXd& g_at_magic) const;
  /// Leading m-term sub-model (greedy hierarchy).
  EimModel truncated(int m) const;
};

struct EimOptions {
  double eps = 5e-5;
  int m_max = 150;
  Exec exec = default_exec();
  bool verbose = false;
};

/// Greedy EIM training on the manifold's training set: pick the worst
/// parameter in the sup norm, take its residual's largest sample as the
/// magic point, normalize, deflate all residuals. Stops at eps, at an
/// exactly zero residual, or at m_max (warning flag on the model).
EimModel train_eim(const CoefficientManifold& manifold, const EimOptions& opts = {});

/// max row sum of |B^{-1}|: Lebesgue-constant proxy for conditioning.
double lebesgue_proxy(const EimModel& model);

void save_eim(const EimModel& model, const std::string& path);
EimModel load_eim(const std::string& path);

/// Decay-curve CSV: "m,max_training_error" rows from the error history.
std::string eim_history_csv(const EimModel& model);

/// Manifolds backed by converged full-order snapshots from the cache.
CoefficientManifold make_nu_manifold(const FomSolver& solver, SnapshotCache& cache,
                                     std::vector<double> training_mus);
CoefficientManifold make_tau_manifold(const FomSolver& solver, SnapshotCache& cache,
                                      std::vector<double> training_mus);

/// n equispaced points covering [lo, hi] inclusive.
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace vmsrb
