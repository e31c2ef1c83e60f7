#pragma once

#include <map>

#include "vmsrb/rb_model.hpp"

namespace vmsrb {

struct OnlineOptions {
  double tol_nl = 1e-9;  // increment in the reduced X-norm (euclidean here:
                         // both bases are orthonormal in their inner products)
  int max_iters = 200;
  double relax = 0.8;
  bool verbose = false;
};

struct ReducedSolution {
  double mu = 0.0;
  VectorXd z;        // velocity coefficients, dim_Y
  VectorXd q;        // pressure coefficients, N
  VectorXd sigma_s;  // EIM eddy-viscosity coefficients at the final state
  VectorXd sigma_p;  // EIM tau coefficients at the final state
  int iterations = 0;
  double increment = 0.0;
  double residual = 0.0;  // euclidean norm of the reduced nonlinear residual
};

/// Dense semi-implicit iteration on the reduced tensors: freeze the
/// convecting field, the eddy viscosity, and tau at the current iterate,
/// solve one (dim_Y + N) saddle system, relax like the full-order solver.
/// Stateless and reentrant; warm starts are the caller's business (see
/// OnlineSession for the serial convenience wrapper).
class OnlineSolver {
 public:
  explicit OnlineSolver(const ReducedModel& model, OnlineOptions opts = {});

  const ReducedModel& model() const { return *m_; }
  const OnlineOptions& options() const { return opts_; }

  ReducedSolution solve(double mu, const ReducedSolution* init = nullptr) const;

  /// Reduced nonlinear residual at a state, with the EIM coefficients the
  /// online operators would use there.
  VectorXd residual(const VectorXd& z, const VectorXd& q, double mu) const;

 private:
  const ReducedModel* m_;
  OnlineOptions opts_;
};

/// Serial session cache: warm-starts each solve from the nearest previously
/// converged mu.
class OnlineSession {
 public:
  explicit OnlineSession(const OnlineSolver& solver) : solver_(&solver) {}

  const ReducedSolution& solve(double mu);
  const std::map<double, ReducedSolution>& entries() const { return cache_; }

 private:
  const OnlineSolver* solver_;
  std::map<double, ReducedSolution> cache_;
};

/// Validation-only twin of OnlineSolver::solve that replaces the hatted EIM
/// forms by the exact nu_T / tau fields of the reconstructed iterate
/// (full-order cost per iteration).
ReducedSolution solve_online_exact(const ReducedModel& model,
                                   const FomSolver& solver, double mu,
                                   const ReducedSolution* init = nullptr,
                                   OnlineOptions opts = {});

}  // namespace vmsrb
