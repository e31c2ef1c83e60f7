#include "vmsrb/fom.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>
#include <set>

#include "vmsrb/constants.hpp"
#include "vmsrb/container.hpp"

namespace vmsrb {

namespace {

std::uint64_t double_bits(double x) {
  std::uint64_t bits = 0;
  static_assert(sizeof(bits) == sizeof(x));
  std::memcpy(&bits, &x, sizeof(bits));
  return bits;
}

}  // namespace

FomSolver::FomSolver(const FeSystem& sys, SolverOptions opts)
    : sys_(&sys), opts_(opts) {
  require(opts_.tol_nl > 0 && opts_.tol_r > 0, "fom: tolerances must be positive");
  require(opts_.max_iters > 0, "fom: max_iters must be positive");
  require(opts_.relax > 0 && opts_.relax <= 1, "fom: relax must be in (0,1]");

  free_vec_ = free_velocity_vector_dofs(sys);
  rv_ = row_selection(free_vec_, sys.n_u());
  kff_ = rv_ * sys.K() * SpMat(rv_.transpose());
  kff_ldlt_.compute(kff_);
  check_numeric(kff_ldlt_.info() == Eigen::Success, "fom: velocity Gram factorization failed");
  mp_ldlt_.compute(sys.Mp());
  check_numeric(mp_ldlt_.info() == Eigen::Success, "fom: pressure mass factorization failed");

  e_ = sys.Mp() * VectorXd::Ones(sys.n_p());
  area_ = e_.sum();
  build_lifting();
  d_u_d_ = sys.D() * u_d_;
}

void FomSolver::build_lifting() {
  const FeSystem& sys = *sys_;
  const DofHandler& vel = sys.velocity();
  const int ns = vel.n_scalar();

  const std::vector<int> lid = vel.boundary_scalar_dofs(kLidTag);
  const std::vector<int> wall = vel.boundary_scalar_dofs(kWallTag);
  const std::set<int> wall_set(wall.begin(), wall.end());

  // Regularized cavity: corners shared by lid and wall take the wall value.
  VectorXd ux_bc = VectorXd::Zero(ns);
  for (int d : lid)
    if (!wall_set.count(d)) ux_bc(d) = opts_.lid_speed;

  const std::vector<int> bnd = vel.all_boundary_scalar_dofs();
  std::vector<char> fixed(ns, 0);
  for (int d : bnd) fixed[d] = 1;
  std::vector<int> free_s;
  free_s.reserve(ns - static_cast<int>(bnd.size()));
  for (int d = 0; d < ns; ++d)
    if (!fixed[d]) free_s.push_back(d);

  const SpMat rs = row_selection(free_s, ns);
  const SpMat ks_ff = rs * sys.Ks() * SpMat(rs.transpose());
  Eigen::SimplicialLDLT<SpMat> ldlt(ks_ff);
  check_numeric(ldlt.info() == Eigen::Success, "lifting: Laplace factorization failed");
  const VectorXd rhs = -(rs * (sys.Ks() * ux_bc));
  const VectorXd ux_f = ldlt.solve(rhs);
  const VectorXd ux = ux_bc + rs.transpose() * ux_f;

  u_d_ = VectorXd::Zero(sys.n_u());
  u_d_.head(ns) = ux;
}

std::uint64_t FomSolver::config_hash() const {
  const ModelCoefficients& c = sys_->coeffs();
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "cs=%.17g;c1=%.17g;c2=%.17g;mumin=%.17g;mumax=%.17g;variant=%d;"
                "pdeg=%d;qdeg=%d;tolnl=%.17g;tolr=%.17g;relax=%.17g;maxit=%d;lid=%.17g",
                c.c_s, c.c1, c.c2, c.mu_min, c.mu_max, static_cast<int>(c.variant),
                sys_->pressure().degree(), sys_->velocity().rule().degree, opts_.tol_nl,
                opts_.tol_r, opts_.relax, opts_.max_iters, opts_.lid_speed);
  return fnv1a64(buf);
}

VectorXd FomSolver::stiffness_solve(const VectorXd& rhs_free) const {
  require(rhs_free.size() == static_cast<Eigen::Index>(free_vec_.size()),
          "stiffness_solve: expected a free-dof vector");
  return kff_ldlt_.solve(rhs_free);
}

double FomSolver::xnorm(const VectorXd& du, const VectorXd& dp) const {
  const double a = du.dot(sys_->K() * du);
  const double b = dp.dot(sys_->Mp() * dp);
  return std::sqrt(std::max(0.0, a) + std::max(0.0, b));
}

double FomSolver::residual_dual_norm(const VectorXd& r) const {
  const int nu = sys_->n_u();
  const int np = sys_->n_p();
  const VectorXd rf = rv_ * r.head(nu);
  VectorXd rp = r.tail(np);
  // Functional norm over the zero-mean subspace: remove the optimal
  // constant-direction component.
  rp -= (rp.sum() / area_) * e_;
  const double a = rf.dot(kff_ldlt_.solve(rf));
  const double b = rp.dot(mp_ldlt_.solve(rp));
  return std::sqrt(std::max(0.0, a) + std::max(0.0, b));
}

Snapshot FomSolver::solve(double mu, const Snapshot* init) const {
  const VectorXd load = VectorXd::Zero(sys_->n_u());
  return solve_impl(mu, u_d_, load, "cavity-lid", init);
}

Snapshot FomSolver::solve_homogeneous(double mu, const VectorXd& load,
                                      const Snapshot* init) const {
  const VectorXd u_d = VectorXd::Zero(sys_->n_u());
  return solve_impl(mu, u_d, load, "none", init);
}

Snapshot FomSolver::solve_impl(double mu, const VectorXd& u_d, const VectorXd& load,
                               const std::string& lifting_id, const Snapshot* init) const {
  const FeSystem& sys = *sys_;
  require(sys.coeffs().in_domain(mu), "solve_fom: mu outside parameter domain");

  const int nu = sys.n_u();
  const int np = sys.n_p();
  const int nf = static_cast<int>(free_vec_.size());
  const int n = nf + np + 1;
  const bool lifted = lifting_id != "none";
  const VectorXd d_ud = lifted ? d_u_d_ : VectorXd::Zero(np);

  VectorXd u0 = init ? init->u : VectorXd::Zero(nu);
  VectorXd p = init ? init->p : VectorXd::Zero(np);
  VectorXd u_full = u_d + u0;

  double omega = 1.0;      // full Picard steps until the safeguard engages
  bool safeguard = false;  // set on the first residual increase
  double prev_rn = std::numeric_limits<double>::infinity();
  double rn = prev_rn;
  bool converged = false;
  int it = 0;

  for (it = 1; it <= opts_.max_iters; ++it) {
    const VectorXd nu_qp = sys.nu_field(u_full);
    const VectorXd tau = sys.tau_field(u_full, mu);
    SpMat a_lin = SpMat((1.0 / mu) * sys.K());
    a_lin += sys.conv_matrix(u_full);
    a_lin += sys.smag_matrix(nu_qp);
    const SpMat s = sys.lps_matrix(tau);
    const SpMat a_ff = rv_ * a_lin * SpMat(rv_.transpose());
    const SpMat d_f = sys.D() * SpMat(rv_.transpose());

    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(a_ff.nonZeros() + 2 * d_f.nonZeros() +
                                           s.nonZeros() + 2 * np));
    for (int c = 0; c < a_ff.outerSize(); ++c)
      for (SpMat::InnerIterator itv(a_ff, c); itv; ++itv)
        trips.emplace_back(static_cast<int>(itv.row()), c, itv.value());
    for (int c = 0; c < d_f.outerSize(); ++c)
      for (SpMat::InnerIterator itv(d_f, c); itv; ++itv) {
        const int i = static_cast<int>(itv.row());
        trips.emplace_back(nf + i, c, itv.value());
        trips.emplace_back(c, nf + i, -itv.value());
      }
    for (int c = 0; c < s.outerSize(); ++c)
      for (SpMat::InnerIterator itv(s, c); itv; ++itv)
        trips.emplace_back(nf + static_cast<int>(itv.row()), nf + c, itv.value());
    for (int i = 0; i < np; ++i) {
      trips.emplace_back(nf + i, nf + np, e_(i));
      trips.emplace_back(nf + np, nf + i, e_(i));
    }
    SpMat big(n, n);
    big.setFromTriplets(trips.begin(), trips.end());
    big.makeCompressed();

    VectorXd rhs(n);
    if (lifted)
      rhs.head(nf) = rv_ * (load - a_lin * u_d);
    else
      rhs.head(nf) = rv_ * load;
    rhs.segment(nf, np) = -d_ud;
    rhs(n - 1) = 0.0;

    Eigen::SparseLU<SpMat> lu;
    lu.compute(big);
    check_numeric(lu.info() == Eigen::Success,
                  "solve_fom: saddle LU failed at iteration " + std::to_string(it) +
                      " (nf=" + std::to_string(nf) + ", np=" + std::to_string(np) + ")");
    const VectorXd x = lu.solve(rhs);
    check_numeric(x.allFinite(), "solve_fom: non-finite linear solution at iteration " +
                                     std::to_string(it));

    const VectorXd u0_new = rv_.transpose() * x.head(nf);
    const VectorXd p_new = x.segment(nf, np);
    const VectorXd du = omega * (u0_new - u0);
    const VectorXd dp = omega * (p_new - p);
    u0 += du;
    p += dp;
    u_full = u_d + u0;
    check_numeric(u_full.norm() < 1e10, "solve_fom: iteration diverged at iteration " +
                                            std::to_string(it));

    const double inc = xnorm(du, dp);
    const VectorXd r = sys.residual(u_full, p, mu, sys.tau_field(u_full, mu), load);
    rn = residual_dual_norm(r);
    if (opts_.verbose)
      std::fprintf(stderr, "  fom it %3d  inc %.3e  res %.3e  omega %.3g\n", it, inc, rn,
                   omega);

    if (inc <= opts_.tol_nl && rn <= opts_.tol_r) {
      converged = true;
      break;
    }
    // Damp on residual growth, recover slowly on decrease. The floor keeps a
    // rough start from freezing the iteration; recovery restores full steps
    // once the damped map contracts again.
    if (rn > prev_rn) {
      omega = safeguard ? std::max(0.05, 0.5 * omega) : opts_.relax;
      safeguard = true;
    } else if (safeguard) {
      omega = std::min(1.0, 1.15 * omega);
    }
    prev_rn = rn;
  }

  if (!converged) {
    char msg[160];
    std::snprintf(msg, sizeof(msg),
                  "solve_fom: no convergence after %d iterations (mu=%.6g, residual=%.3e)",
                  opts_.max_iters, mu, rn);
    throw NumericalError(msg);
  }

  // The multiplier pins the mean at solver precision; remove the remainder.
  const double mean = e_.dot(p) / area_;
  check_numeric(std::abs(mean) <= 1e-12 * std::max(1.0, p.norm()),
                "solve_fom: pressure mean drifted beyond tolerance");
  p.array() -= mean;

  Snapshot snap;
  snap.mu = mu;
  snap.u = std::move(u0);
  snap.p = std::move(p);
  snap.lifting_id = lifting_id;
  snap.residual_norm = rn;
  snap.iterations = it;
  return snap;
}

AprioriReport FomSolver::check_apriori(
    const Snapshot& snap, const std::function<Vector2d(double, double)>& f) const {
  AprioriReport rep;
  if (snap.lifting_id != "none") {
    rep.applicable = false;
    rep.reason = "estimates assume the homogeneous Dirichlet problem; snapshot is lifted";
    return rep;
  }
  rep.applicable = true;
  const FeSystem& sys = *sys_;

  // ||f||_0 by quadrature on the velocity handler.
  const DofHandler& vel = sys.velocity();
  double f2 = 0.0;
  for (int k = 0; k < sys.mesh().n_triangles(); ++k)
    for (int q = 0; q < vel.nq(); ++q) {
      const Vector2d x = vel.qpoint(k, q);
      f2 += vel.qweight(k, q) * f(x(0), x(1)).squaredNorm();
    }
  rep.f_l2 = std::sqrt(f2);

  rep.c_p = measure_c_p(sys);
  rep.c_s4 = measure_c_s4(sys);
  rep.c_f = measure_c_f(sys);

  const double mu = snap.mu;
  const double gn = std::sqrt(std::max(0.0, snap.u.dot(sys.K() * snap.u)));
  const VectorXd tau = sys.tau_field(snap.u, mu);

  rep.bounds[0].name = "gradient";
  rep.bounds[0].lhs = gn;
  rep.bounds[0].rhs = mu * rep.c_p * rep.f_l2;

  // ||sigma*(grad p)||_tau at the converged state.
  const VectorXd sp = sys.E() * snap.p;
  double lps2 = 0.0;
  const VectorXd& qw = sys.qw();
  const VectorXi& qelem = sys.qelem();
  for (int g = 0; g < qw.size(); ++g) {
    const double t = tau(qelem(g));
    const double sx = sp(2 * g);
    const double sy = sp(2 * g + 1);
    lps2 += t * qw(g) * (sx * sx + sy * sy);
  }
  rep.bounds[1].name = "pressure-fluctuation";
  rep.bounds[1].lhs = std::sqrt(lps2);
  rep.bounds[1].rhs = std::sqrt(mu) * rep.c_p * rep.f_l2;

  rep.alpha = measure_inf_sup_alpha(sys, tau);
  const double h_max = sys.mesh().h_K.maxCoeff();
  const double c_s = sys.coeffs().c_s;
  rep.bounds[2].name = "pressure";
  rep.bounds[2].lhs = std::sqrt(std::max(0.0, snap.p.dot(sys.Mp() * snap.p)));
  rep.bounds[2].rhs = (1.0 / rep.alpha) *
                      ((1.0 / mu) * gn +
                       (rep.c_s4 * rep.c_s4 + rep.c_f * c_s * c_s * h_max) * gn * gn +
                       (1.0 + std::sqrt(mu)) * rep.c_p * rep.f_l2);

  for (auto& b : rep.bounds) b.holds = b.lhs <= b.rhs * (1.0 + 1e-12);
  return rep;
}

SnapshotCache::SnapshotCache(const FomSolver& solver, std::string dir)
    : solver_(&solver), dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::string SnapshotCache::file_path(double mu) const {
  const std::uint64_t mh = mesh_hash(solver_->system().mesh());
  return dir_ + "/snap_" + hex16(mh) + "_" + hex16(solver_->config_hash()) + "_" +
         hex16(double_bits(mu)) + ".bin";
}

bool SnapshotCache::contains(double mu) const {
  if (memory_.count(mu)) return true;
  return !dir_.empty() && std::filesystem::exists(file_path(mu));
}

const Snapshot& SnapshotCache::get(double mu) {
  auto it = memory_.find(mu);
  if (it != memory_.end()) return it->second;

  if (!dir_.empty()) {
    const std::string path = file_path(mu);
    if (std::filesystem::exists(path)) {
      Snapshot snap = load_snapshot(path, *solver_);
      return memory_.emplace(mu, std::move(snap)).first->second;
    }
  }

  const Snapshot* init = nullptr;
  if (!memory_.empty()) {
    auto hi = memory_.lower_bound(mu);
    if (hi == memory_.end())
      init = &std::prev(hi)->second;
    else if (hi == memory_.begin())
      init = &hi->second;
    else {
      auto lo = std::prev(hi);
      init = (mu - lo->first <= hi->first - mu) ? &lo->second : &hi->second;
    }
  }
  Snapshot snap = solver_->solve(mu, init);
  if (!dir_.empty()) save_snapshot(snap, *solver_, file_path(mu));
  return memory_.emplace(mu, std::move(snap)).first->second;
}

void SnapshotCache::save_snapshot(const Snapshot& snap, const FomSolver& solver,
                                  const std::string& path) {
  Container c;
  c.meta()["kind"] = "snapshot";
  c.meta()["mu"] = snap.mu;
  c.meta()["mu_hex"] = hex16(double_bits(snap.mu));
  c.meta()["mesh_hash"] = hex16(mesh_hash(solver.system().mesh()));
  c.meta()["config_hash"] = hex16(solver.config_hash());
  c.meta()["lifting_id"] = snap.lifting_id;
  c.meta()["residual_norm"] = snap.residual_norm;
  c.meta()["iterations"] = snap.iterations;
  c.meta()["velocity_degree"] = 2;
  c.meta()["pressure_degree"] = solver.system().pressure().degree();
  c.meta()["tol_nl"] = solver.options().tol_nl;
  c.meta()["tol_r"] = solver.options().tol_r;
  c.add("u", snap.u);
  c.add("p", snap.p);
  c.save(path);
}

Snapshot SnapshotCache::load_snapshot(const std::string& path, const FomSolver& solver) {
  const Container c = Container::load(path);
  require(c.meta().value("kind", "") == "snapshot", "snapshot load: wrong kind in " + path);
  const std::string mh = hex16(mesh_hash(solver.system().mesh()));
  require(c.meta().value("mesh_hash", "") == mh,
          "snapshot load: mesh hash mismatch in " + path);
  require(c.meta().value("config_hash", "") == hex16(solver.config_hash()),
          "snapshot load: config hash mismatch in " + path);
  Snapshot snap;
  snap.mu = c.meta().at("mu").get<double>();
  snap.u = c.vector("u");
  snap.p = c.vector("p");
  snap.lifting_id = c.meta().value("lifting_id", "none");
  snap.residual_norm = c.meta().value("residual_norm", 0.0);
  snap.iterations = c.meta().value("iterations", 0);
  require(snap.u.size() == solver.system().n_u() && snap.p.size() == solver.system().n_p(),
          "snapshot load: size mismatch in " + path);
  return snap;
}

}  // namespace vmsrb
