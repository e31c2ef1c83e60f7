#include "vmsrb/estimators.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <vector>

#include "vmsrb/constants.hpp"

namespace vmsrb {

namespace {

// [[j, c], [c^T, 0]]; the extra unknown pins the known rank-one kernel.
SpMat bordered(const SpMat& j, const VectorXd& c) {
  const int n = static_cast<int>(j.rows());
  std::vector<Triplet> trips;
  trips.reserve(j.nonZeros() + 2 * static_cast<std::size_t>(n));
  for (int k = 0; k < j.outerSize(); ++k)
    for (SpMat::InnerIterator it(j, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int i = 0; i < n; ++i)
    if (c(i) != 0.0) {
      trips.emplace_back(i, n, c(i));
      trips.emplace_back(n, i, c(i));
    }
  SpMat out(n + 1, n + 1);
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

[[noreturn]] void throw_no_convergence(const char* who, int iters, double lam,
                                       double prev) {
  char buf[192];
  std::snprintf(buf, sizeof buf,
                "%s: no convergence after %d iterations (rayleigh %.9e, "
                "previous %.9e, rel change %.3e)",
                who, iters, lam, prev,
                std::abs(lam - prev) / std::max(std::abs(lam), 1e-300));
  throw NumericalError(buf);
}

VectorXd random_unit(int n, const SpMat& g, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = nd(rng);
  return z / std::sqrt(z.dot(g * z));
}

}  // namespace

ResidualLayout residual_layout(const ReducedModel& m) {
  ResidualLayout lay;
  lay.w = m.dim_y() + 1;
  lay.n = m.n();
  lay.m1 = m.m1();
  lay.m2 = m.m2();
  return lay;
}

double pencil_smallest_sv(const SpMat& j, const SpMat& g, const VectorXd& border,
                          int max_iters, double tol) {
  const int n = static_cast<int>(j.rows());
  require(j.cols() == n && g.rows() == n && g.cols() == n,
          "pencil_smallest_sv: dimensions disagree");
  const bool with_border = border.size() > 0;
  require(!with_border || border.size() == n, "pencil_smallest_sv: border size");

  Eigen::SimplicialLDLT<SpMat> gf(g);
  check_numeric(gf.info() == Eigen::Success,
                "pencil_smallest_sv: metric factorization failed");
  Eigen::SparseLU<SpMat> lu;
  lu.compute(with_border ? bordered(j, border) : j);
  check_numeric(lu.info() == Eigen::Success,
                "pencil_smallest_sv: tangent factorization failed");

  const auto apply_inv = [&](const VectorXd& b, bool transpose) {
    if (!with_border)
      return transpose ? VectorXd(lu.adjoint().solve(b)) : VectorXd(lu.solve(b));
    VectorXd rhs(n + 1);
    rhs.head(n) = b;
    rhs(n) = 0.0;
    const VectorXd y =
        transpose ? VectorXd(lu.adjoint().solve(rhs)) : VectorXd(lu.solve(rhs));
    return VectorXd(y.head(n));
  };

  std::mt19937 rng(987654321u);
  VectorXd z = random_unit(n, g, rng);
  double lam = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    const VectorXd jz = j * z;
    lam = jz.dot(gf.solve(jz));  // z is G-normalized
    if (it >= 3 && std::abs(lam - prev) <= tol * std::abs(lam))
      return std::sqrt(std::max(0.0, lam));
    prev = lam;
    const VectorXd t2 = apply_inv(g * z, true);
    VectorXd w = apply_inv(g * t2, false);
    const double nw = std::sqrt(w.dot(g * w));
    check_numeric(nw > 0.0 && std::isfinite(nw),
                  "pencil_smallest_sv: iterate collapsed");
    z = w / nw;
  }
  throw_no_convergence("pencil_smallest_sv", max_iters, lam, prev);
}

double pencil_largest_sv(const SpMat& j, const SpMat& g, int max_iters,
                         double tol) {
  const int n = static_cast<int>(j.rows());
  require(j.cols() == n && g.rows() == n && g.cols() == n,
          "pencil_largest_sv: dimensions disagree");
  Eigen::SimplicialLDLT<SpMat> gf(g);
  check_numeric(gf.info() == Eigen::Success,
                "pencil_largest_sv: metric factorization failed");

  std::mt19937 rng(192837465u);
  VectorXd z = random_unit(n, g, rng);
  double lam = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    const VectorXd jz = j * z;
    const VectorXd s = gf.solve(jz);
    lam = jz.dot(s);
    if (it >= 3 && std::abs(lam - prev) <= tol * std::abs(lam))
      return std::sqrt(std::max(0.0, lam));
    prev = lam;
    VectorXd w = gf.solve(SpMat(j.transpose()) * s);
    const double nw = std::sqrt(w.dot(g * w));
    check_numeric(nw > 0.0 && std::isfinite(nw),
                  "pencil_largest_sv: iterate collapsed");
    z = w / nw;
  }
  throw_no_convergence("pencil_largest_sv", max_iters, lam, prev);
}

RhoReport calibrate_rho_t(const FeSystem& sys, const TInnerProduct& t,
                          int n_quadruples, unsigned seed, double safety) {
  require(n_quadruples > 0, "calibrate_rho_t: empty sample set");
  RhoReport rep;
  rep.n_samples = n_quadruples;
  rep.h = sys.mesh().h_max();
  rep.c_s4t = measure_c_s4_gram(sys, t.gram);
  rep.c_pass = rep.c_s4t * std::pow(t.mu_bar, 0.25);

  // Smagorinsky tangent-difference ratios over random H^1_0 fields. The
  // diffusion, convection, and pressure parts of the tangent are handled by
  // the C_pass term; only the eddy-viscosity part is sampled.
  if (sys.coeffs().c_s > 0.0) {
    const std::vector<int> fs = sys.free_velocity_scalar_dofs();
    const int ns = sys.n_us();
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    const auto draw = [&]() {
      VectorXd u = VectorXd::Zero(sys.n_u());
      for (const int d : fs) {
        u(d) = nd(rng);
        u(ns + d) = nd(rng);
      }
      return u;
    };
    const auto tnorm = [&](const VectorXd& u) {
      return std::sqrt(u.dot(t.gram * u));
    };
    double worst = 0.0;
    for (int k = 0; k < n_quadruples; ++k) {
      const VectorXd u1 = draw();
      const VectorXd u2 = draw();
      const VectorXd zf = draw();
      const VectorXd vf = draw();
      const VectorXd d1 = sys.smag_matrix(sys.nu_field(u1)) * zf +
                          sys.smag_rank_matrix(u1) * zf;
      const VectorXd d2 = sys.smag_matrix(sys.nu_field(u2)) * zf +
                          sys.smag_rank_matrix(u2) * zf;
      const double num = std::abs(vf.dot(d1 - d2));
      const double den = rep.h * tnorm(u1 - u2) * tnorm(zf) * tnorm(vf);
      if (den > 0.0) worst = std::max(worst, num / den);
    }
    rep.max_ratio = worst;
    rep.c_hat = safety * worst;
  }
  rep.rho_t = 2.0 * rep.c_pass * rep.c_pass + rep.c_hat * rep.h;
  return rep;
}

Certifier::Certifier(ReducedModel& m, const FomSolver& solver,
                     const TInnerProduct& t, VectorXd load_full)
    : m_(&m), solver_(&solver), t_(&t), load_full_(std::move(load_full)) {
  const FeSystem& sys = solver.system();
  if (load_full_.size() == 0) load_full_ = VectorXd::Zero(sys.n_u());
  require(load_full_.size() == sys.n_u(), "Certifier: load vector size");
  lay_ = residual_layout(m);

  const SpMat& rv = solver.restriction();
  const SpMat rvt = rv.transpose();
  const SpMat a = rv * t.gram;
  tff_ = a * rvt;
  tff_ldlt_.compute(tff_);
  check_numeric(tff_ldlt_.info() == Eigen::Success,
                "Certifier: T Gram factorization failed");
  mp_ldlt_.compute(sys.Mp());
  check_numeric(mp_ldlt_.info() == Eigen::Success,
                "Certifier: pressure mass factorization failed");
  e_ = sys.Mp() * VectorXd(VectorXd::Ones(sys.n_p()));
  area_ = e_.sum();

  const int nf = static_cast<int>(rv.rows());
  const int nu = sys.n_u();
  const int np = sys.n_p();
  std::vector<Triplet> trips;
  trips.reserve(rv.nonZeros() + static_cast<std::size_t>(np));
  for (int k = 0; k < rv.outerSize(); ++k)
    for (SpMat::InnerIterator it(rv, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int i = 0; i < np; ++i) trips.emplace_back(nf + i, nu + i, 1.0);
  pz_.resize(nf + np, nu + np);
  pz_.setFromTriplets(trips.begin(), trips.end());

  trips.clear();
  for (int k = 0; k < tff_.outerSize(); ++k)
    for (SpMat::InnerIterator it(tff_, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  const SpMat& mp = sys.Mp();
  for (int k = 0; k < mp.outerSize(); ++k)
    for (SpMat::InnerIterator it(mp, k); it; ++it)
      trips.emplace_back(nf + static_cast<int>(it.row()),
                         nf + static_cast<int>(it.col()), it.value());
  g_big_.resize(nf + np, nf + np);
  g_big_.setFromTriplets(trips.begin(), trips.end());

  border_ = VectorXd::Zero(nf + np);
  border_.tail(np) = e_;
}

void Certifier::build() {
  const FeSystem& sys = solver_->system();
  lay_ = residual_layout(*m_);
  const SpMat& rv = solver_->restriction();
  const int nf = static_cast<int>(rv.rows());
  const int np = sys.n_p();
  const int w = lay_.w;

  MatrixXd ztil(sys.n_u(), w);
  ztil.leftCols(w - 1) = m_->zeta;
  ztil.col(w - 1) = solver_->lifting();

  r_v_.resize(nf, lay_.n_velocity());
  r_v_.col(lay_.load()) = rv * load_full_;
  {
    const MatrixXd kz = sys.K() * ztil;
    r_v_.middleCols(lay_.diff(0), w) = rv * kz;
  }
  for (int a = 0; a < w; ++a) {
    const MatrixXd cz = sys.conv_matrix(ztil.col(a)) * ztil;
    r_v_.middleCols(lay_.conv(a, 0), w) = rv * cz;
  }
  for (int s = 0; s < lay_.m1; ++s) {
    const MatrixXd sz = sys.smag_matrix(m_->eim_nu.basis.col(s)) * ztil;
    r_v_.middleCols(lay_.sma(s, 0), w) = rv * sz;
  }
  if (lay_.n > 0) {
    const SpMat dt = sys.D().transpose();
    const MatrixXd dtxi = dt * m_->xi;
    r_v_.middleCols(lay_.divp(0), lay_.n) = rv * (-dtxi);
  }

  r_p_.resize(np, lay_.n_pressure());
  r_p_.leftCols(w) = sys.D() * ztil;
  for (int s = 0; s < lay_.m2; ++s)
    r_p_.middleCols(lay_.pres(s, 0), lay_.n) =
        sys.lps_matrix(m_->eim_tau.basis.col(s)) * m_->xi;
  // Constrained Riesz over zero-mean pressures: shift every functional to
  // zero total integral, then the plain mass solve is the right inverse.
  for (int c = 0; c < r_p_.cols(); ++c)
    r_p_.col(c) -= (r_p_.col(c).sum() / area_) * e_;

  const MatrixXd gv = r_v_.transpose() * tff_ldlt_.solve(r_v_);
  const MatrixXd gp = r_p_.transpose() * mp_ldlt_.solve(r_p_);
  m_->g_v = 0.5 * (gv + gv.transpose());
  m_->g_p = 0.5 * (gp + gp.transpose());
}

void Certifier::thetas(const VectorXd& z, const VectorXd& q,
                       const VectorXd& sigma_s, const VectorXd& sigma_p,
                       double mu, VectorXd& theta_v, VectorXd& theta_p) const {
  const ResidualLayout& L = lay_;
  require(z.size() == L.w - 1 && q.size() == L.n && sigma_s.size() == L.m1 &&
              sigma_p.size() == L.m2,
          "thetas: reduced state sizes disagree with the layout");
  require(m_->coeffs.in_domain(mu), "thetas: mu outside the training domain");
  VectorXd zext(L.w);
  zext.head(L.w - 1) = z;
  zext(L.w - 1) = 1.0;

  theta_v.setZero(L.n_velocity());
  theta_v(L.load()) = -1.0;
  theta_v.segment(L.diff(0), L.w) = zext / mu;
  for (int a = 0; a < L.w; ++a)
    theta_v.segment(L.conv(a, 0), L.w) = zext(a) * zext;
  for (int s = 0; s < L.m1; ++s)
    theta_v.segment(L.sma(s, 0), L.w) = sigma_s(s) * zext;
  if (L.n > 0) theta_v.segment(L.divp(0), L.n) = q;

  theta_p.setZero(L.n_pressure());
  theta_p.head(L.w) = zext;
  for (int s = 0; s < L.m2; ++s)
    theta_p.segment(L.pres(s, 0), L.n) = sigma_p(s) * q;
}

double Certifier::eps_fast(const VectorXd& z, const VectorXd& q,
                           const VectorXd& sigma_s, const VectorXd& sigma_p,
                           double mu) const {
  require(m_->g_v.rows() == lay_.n_velocity() &&
              m_->g_p.rows() == lay_.n_pressure(),
          "eps_fast: residual Grams not built");
  VectorXd tv, tp;
  thetas(z, q, sigma_s, sigma_p, mu, tv, tp);
  const double s2 = tv.dot(m_->g_v * tv) + tp.dot(m_->g_p * tp);
  return std::sqrt(std::max(0.0, s2));
}

double Certifier::eps_full(const VectorXd& z, const VectorXd& q,
                           const VectorXd& sigma_s, const VectorXd& sigma_p,
                           double mu) const {
  const FeSystem& sys = solver_->system();
  const ResidualLayout& L = lay_;
  require(z.size() == L.w - 1 && q.size() == L.n && sigma_s.size() == L.m1 &&
              sigma_p.size() == L.m2,
          "eps_full: reduced state sizes disagree with the layout");
  require(m_->coeffs.in_domain(mu), "eps_full: mu outside the training domain");

  const VectorXd u = m_->zeta * z + solver_->lifting();
  const VectorXd p = m_->xi * q;
  const VectorXd nu = m_->eim_nu.basis * sigma_s;
  const VectorXd tau = m_->eim_tau.basis * sigma_p;

  const SpMat dt = sys.D().transpose();
  VectorXd ru = (1.0 / mu) * (sys.K() * u);
  ru += sys.conv_matrix(u) * u;
  ru += sys.smag_matrix(nu) * u;
  ru -= dt * p;
  ru -= load_full_;
  const VectorXd ruf = solver_->restriction() * ru;

  VectorXd rp = sys.D() * u + sys.lps_matrix(tau) * p;
  rp -= (rp.sum() / area_) * e_;

  const double s2 = ruf.dot(tff_ldlt_.solve(ruf)) + rp.dot(mp_ldlt_.solve(rp));
  return std::sqrt(std::max(0.0, s2));
}

double Certifier::eps_checked(const VectorXd& z, const VectorXd& q,
                              const VectorXd& sigma_s, const VectorXd& sigma_p,
                              double mu) const {
  const double fast = eps_fast(z, q, sigma_s, sigma_p, mu);
  const double full = eps_full(z, q, sigma_s, sigma_p, mu);
  // The fast route cancels O(scale) Gram terms, so its round-off floor is
  // relative to the incoherent magnitude of the expansion, not to eps.
  VectorXd tv, tp;
  thetas(z, q, sigma_s, sigma_p, mu, tv, tp);
  const double scale = std::sqrt(
      (tv.array().square() * m_->g_v.diagonal().array()).sum() +
      (tp.array().square() * m_->g_p.diagonal().array()).sum());
  check_numeric(std::abs(fast - full) <= 1e-8 * std::max(scale, 1e-300),
                "residual dual norm: fast and fallback routes disagree "
                "(tensor corruption)");
  return fast;
}

SpMat Certifier::tangent_free(const VectorXd& z, const VectorXd& q,
                              double mu) const {
  (void)q;  // the tangent does not depend on the pressure iterate
  const FeSystem& sys = solver_->system();
  const VectorXd u = m_->zeta * z + solver_->lifting();
  const VectorXd tau = m_->eim_tau.interpolate(magic_tau_values(*m_, z, mu));
  const SpMat j = sys.tangent(u, mu, tau);
  const SpMat a = pz_ * j;
  const SpMat pzt = pz_.transpose();
  return SpMat(a * pzt);
}

double Certifier::beta_n(const VectorXd& z, const VectorXd& q, double mu) const {
  return pencil_smallest_sv(tangent_free(z, q, mu), g_big_, border_);
}

double Certifier::gamma_n(const VectorXd& z, const VectorXd& q, double mu) const {
  return pencil_largest_sv(tangent_free(z, q, mu), g_big_);
}

EstimatorState Certifier::certify(const VectorXd& z, const VectorXd& q,
                                  double mu, const VectorXd* sigma_s,
                                  const VectorXd* sigma_p,
                                  bool with_gamma) const {
  require(m_->rho_t > 0.0, "certify: rho_T not calibrated");
  const VectorXd ss =
      sigma_s ? *sigma_s
              : VectorXd(m_->eim_nu.coefficients(magic_nu_values(*m_, z)));
  const VectorXd sp =
      sigma_p ? *sigma_p
              : VectorXd(m_->eim_tau.coefficients(magic_tau_values(*m_, z, mu)));

  EstimatorState st;
  st.rho_t = m_->rho_t;
  st.eps = eps_fast(z, q, ss, sp, mu);
  st.beta = beta_n(z, q, mu);
  if (with_gamma) st.gamma = gamma_n(z, q, mu);
  st.singular = !(st.beta > 1e-14);
  if (st.singular) return st;
  st.tau = 4.0 * st.eps * st.rho_t / (st.beta * st.beta);
  if (st.tau <= 1.0) {
    // (beta/2rho)(1 - sqrt(1-tau)) in the cancellation-free form
    st.delta = st.beta / (2.0 * st.rho_t) * st.tau / (1.0 + std::sqrt(1.0 - st.tau));
    st.certified = true;
  } else {
    st.delta = st.beta / (4.0 * st.rho_t) * st.tau;  // Taylor fallback
  }
  return st;
}

}  // namespace vmsrb
