#include "vmsrb/rb_online.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

namespace vmsrb {

namespace {

/// Frozen operators of one semi-implicit step, evaluated at a state z.
struct StepOps {
  MatrixXd a_vv;
  VectorXd rhs_v;
  MatrixXd s_pp;
  VectorXd sigma_s, sigma_p;
};

using StepBuilder = std::function<StepOps(const VectorXd&)>;

/// Applying the frozen operators to their own linearization state gives the
/// exact nonlinear residual: convection is trilinear and the EIM fields are
/// frozen at that same state.
void reduced_residual(const ReducedModel& m, const StepOps& ops,
                      const VectorXd& z, const VectorXd& q, VectorXd& r_v,
                      VectorXd& r_p) {
  r_v = ops.a_vv * z - ops.rhs_v - m.dr.transpose() * q;
  r_p = m.dr * z + ops.s_pp * q + m.dd;
}

StepOps build_eim_ops(const ReducedModel& m, const VectorXd& z, double mu) {
  StepOps ops;
  ops.sigma_s = m.eim_nu.coefficients(magic_nu_values(m, z));
  ops.sigma_p = m.eim_tau.coefficients(magic_tau_values(m, z, mu));
  ops.a_vv = (1.0 / mu) * m.kr + m.cd1;
  for (int j = 0; j < m.dim_y(); ++j) ops.a_vv += z(j) * m.cr[j];
  for (int s = 0; s < m.m1(); ++s) ops.a_vv += ops.sigma_s(s) * m.ss[s];
  ops.rhs_v = m.fr - (1.0 / mu) * m.kd - m.cdd - m.cd2 * z - m.sd * ops.sigma_s;
  ops.s_pp = MatrixXd::Zero(m.n(), m.n());
  for (int s = 0; s < m.m2(); ++s) ops.s_pp += ops.sigma_p(s) * m.ps[s];
  return ops;
}

ReducedSolution iterate(const ReducedModel& m, double mu,
                        const ReducedSolution* init, const OnlineOptions& opts,
                        const StepBuilder& build) {
  require(m.coeffs.in_domain(mu),
          "solve_online: mu outside the training domain");
  const int dy = m.dim_y();
  const int n = m.n();
  require(dy > 0 && n > 0, "solve_online: empty reduced bases");

  ReducedSolution sol;
  sol.mu = mu;
  if (init) {
    require(init->z.size() == dy && init->q.size() == n,
            "solve_online: warm start dims disagree with the model");
    sol.z = init->z;
    sol.q = init->q;
  } else {
    sol.z = VectorXd::Zero(dy);
    sol.q = VectorXd::Zero(n);
  }

  double omega = 1.0;
  bool safeguard = false;
  double prev_rn = std::numeric_limits<double>::infinity();
  double rn = prev_rn;
  bool converged = false;
  double inc = 0.0;

  StepOps ops = build(sol.z);
  MatrixXd big(dy + n, dy + n);
  VectorXd rhs(dy + n), r_v, r_p;
  int it = 0;
  for (it = 1; it <= opts.max_iters; ++it) {
    big.topLeftCorner(dy, dy) = ops.a_vv;
    big.topRightCorner(dy, n) = -m.dr.transpose();
    big.bottomLeftCorner(n, dy) = m.dr;
    big.bottomRightCorner(n, n) = ops.s_pp;
    rhs.head(dy) = ops.rhs_v;
    rhs.tail(n) = -m.dd;

    const Eigen::PartialPivLU<MatrixXd> lu(big);
    const VectorXd x = lu.solve(rhs);
    check_numeric(x.allFinite(),
                  "solve_online: non-finite step at iteration " +
                      std::to_string(it));

    const VectorXd dz = x.head(dy) - sol.z;
    const VectorXd dq = x.tail(n) - sol.q;
    sol.z += omega * dz;
    sol.q += omega * dq;
    inc = omega * std::sqrt(dz.squaredNorm() + dq.squaredNorm());
    check_numeric(sol.z.norm() < 1e10,
                  "solve_online: iteration diverged at iteration " +
                      std::to_string(it));

    ops = build(sol.z);
    reduced_residual(m, ops, sol.z, sol.q, r_v, r_p);
    rn = std::sqrt(r_v.squaredNorm() + r_p.squaredNorm());
    if (opts.verbose)
      std::fprintf(stderr, "  rb it %3d  inc %.3e  res %.3e  omega %.3g\n", it,
                   inc, rn, omega);

    if (inc <= opts.tol_nl) {
      converged = true;
      break;
    }
    if (rn > prev_rn) {
      omega = safeguard ? std::max(0.05, 0.5 * omega) : opts.relax;
      safeguard = true;
    } else if (safeguard) {
      omega = std::min(1.0, 1.15 * omega);
    }
    prev_rn = rn;
  }

  if (!converged) {
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "solve_online: no convergence after %d iterations "
                  "(mu=%.6g, increment=%.3e, residual=%.3e)",
                  opts.max_iters, mu, inc, rn);
    throw NumericalError(msg);
  }

  sol.iterations = it;
  sol.increment = inc;
  sol.residual = rn;
  sol.sigma_s = ops.sigma_s;
  sol.sigma_p = ops.sigma_p;
  return sol;
}

}  // namespace

OnlineSolver::OnlineSolver(const ReducedModel& model, OnlineOptions opts)
    : m_(&model), opts_(opts) {
  require(model.dim_y() > 0 && model.n() > 0,
          "OnlineSolver: empty reduced bases");
  require(model.kr.rows() == model.dim_y() &&
              model.dr.rows() == model.n() &&
              static_cast<int>(model.cr.size()) == model.dim_y() &&
              static_cast<int>(model.ss.size()) == model.m1() &&
              static_cast<int>(model.ps.size()) == model.m2(),
          "OnlineSolver: tensors not built");
}

ReducedSolution OnlineSolver::solve(double mu,
                                    const ReducedSolution* init) const {
  const ReducedModel& m = *m_;
  const auto build = [&m, mu](const VectorXd& z) {
    return build_eim_ops(m, z, mu);
  };
  return iterate(m, mu, init, opts_, build);
}

VectorXd OnlineSolver::residual(const VectorXd& z, const VectorXd& q,
                                double mu) const {
  const ReducedModel& m = *m_;
  require(z.size() == m.dim_y() && q.size() == m.n(),
          "residual: reduced state dims");
  require(m.coeffs.in_domain(mu), "residual: mu outside the training domain");
  const StepOps ops = build_eim_ops(m, z, mu);
  VectorXd r_v, r_p;
  reduced_residual(m, ops, z, q, r_v, r_p);
  VectorXd r(r_v.size() + r_p.size());
  r << r_v, r_p;
  return r;
}

const ReducedSolution& OnlineSession::solve(double mu) {
  const auto exact = cache_.find(mu);
  if (exact != cache_.end()) return exact->second;

  const ReducedSolution* init = nullptr;
  if (!cache_.empty()) {
    auto lo = cache_.lower_bound(mu);
    if (lo == cache_.end()) {
      init = &std::prev(lo)->second;
    } else if (lo == cache_.begin()) {
      init = &lo->second;
    } else {
      const auto before = std::prev(lo);
      init = (mu - before->first <= lo->first - mu) ? &before->second
                                                    : &lo->second;
    }
  }
  const ReducedSolution sol = solver_->solve(mu, init);
  return cache_.emplace(mu, sol).first->second;
}

ReducedSolution solve_online_exact(const ReducedModel& m,
                                   const FomSolver& solver, double mu,
                                   const ReducedSolution* init,
                                   OnlineOptions opts) {
  const FeSystem& sys = solver.system();
  require(m.zeta.rows() == sys.n_u() && m.xi.rows() == sys.n_p(),
          "solve_online_exact: model and system disagree");
  const auto build = [&](const VectorXd& z) {
    const VectorXd u = m.zeta * z + solver.lifting();
    const VectorXd nu = sys.nu_field(u);
    const VectorXd tau = sys.tau_field(u, mu);
    const SpMat sm = sys.smag_matrix(nu);
    const SpMat lp = sys.lps_matrix(tau);

    StepOps ops;
    // report the EIM coefficients the fast path would have used, so callers
    // can compare states like for like
    ops.sigma_s = m.eim_nu.coefficients(magic_nu_values(m, z));
    ops.sigma_p = m.eim_tau.coefficients(magic_tau_values(m, z, mu));
    ops.a_vv = (1.0 / mu) * m.kr + m.cd1;
    for (int j = 0; j < m.dim_y(); ++j) ops.a_vv += z(j) * m.cr[j];
    ops.a_vv += m.zeta.transpose() * (sm * m.zeta);
    ops.rhs_v = m.fr - (1.0 / mu) * m.kd - m.cdd - m.cd2 * z -
                m.zeta.transpose() * (sm * solver.lifting());
    ops.s_pp = m.xi.transpose() * (lp * m.xi);
    return ops;
  };
  return iterate(m, mu, init, opts, build);
}

}  // namespace vmsrb
