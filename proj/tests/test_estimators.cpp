#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "vmsrb/constants.hpp"
#include "vmsrb/estimators.hpp"

using namespace vmsrb;

namespace {

/// Deterministic pseudo-random vector in [-1, 1].
VectorXd lcg_vector(int n, std::uint64_t seed) {
  VectorXd v(n);
  std::uint64_t s = seed * 2862933555777941757ull + 3037000493ull;
  for (int i = 0; i < n; ++i) {
    s = s * 6364136223846793005ull + 1442695040888963407ull;
    v[i] = 2.0 * (static_cast<double>(s >> 11) / 9007199254740992.0) - 1.0;
  }
  return v;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30});
}

struct Setup {
  Mesh mesh;
  ModelCoefficients coeffs;
  FeSystem sys;
  SolverOptions opts;
  FomSolver solver;
  SnapshotCache cache;

  Setup()
      : mesh(build_unit_square_mesh(6)),
        coeffs(make_coeffs()),
        sys(mesh, 1, coeffs),
        opts(make_opts()),
        solver(sys, opts),
        cache(solver) {}

  static ModelCoefficients make_coeffs() {
    ModelCoefficients c;
    c.mu_min = 1000.0;
    c.mu_max = 2000.0;
    return c;
  }
  static SolverOptions make_opts() {
    SolverOptions o;
    o.lid_speed = 0.3;
    return o;
  }

  static Setup& instance() {
    static Setup s;
    return s;
  }
};

/// Two-snapshot model with EIM expansions deep enough that an injected
/// snapshot leaves only the full-order solver tolerance in the residual.
struct MiniEst {
  ReducedModel model;
  TInnerProduct t;
  RhoReport rho;

  MiniEst() {
    Setup& s = Setup::instance();
    t = build_t_product(s.solver, s.cache, 5);

    EimOptions eopts;
    eopts.eps = 1e-12;
    eopts.m_max = 25;
    const std::vector<double> grid = linspace(1000.0, 2000.0, 9);
    model.eim_nu = train_eim(make_nu_manifold(s.solver, s.cache, grid), eopts);
    model.eim_tau = train_eim(make_tau_manifold(s.solver, s.cache, grid), eopts);

    for (double mu : {1000.0, 2000.0}) {
      const Snapshot& snap = s.cache.get(mu);
      REQUIRE(mgs_extend(model.zeta, t.gram, snap.u));
      REQUIRE(mgs_extend(model.xi, s.sys.Mp(), snap.p));
      model.selected_mus.push_back(mu);
    }
    model.mu_bar = t.mu_bar;
    model.status = "n_max";
    build_reduced_tensors(model, s.solver);

    rho = calibrate_rho_t(s.sys, t, 60);
    model.rho_t = rho.rho_t;
    model.c_pass = rho.c_pass;
    model.c_hat = rho.c_hat;
  }

  static MiniEst& instance() {
    static MiniEst m;
    return m;
  }
};

/// One certifier per binary, grams built once.
Certifier& certifier() {
  static Certifier c(MiniEst::instance().model, Setup::instance().solver,
                     MiniEst::instance().t);
  static bool built = false;
  if (!built) {
    c.build();
    built = true;
  }
  return c;
}

/// Projection coefficients of a cached snapshot onto the model bases. Both
/// snapshots are in the span, so this reproduces them exactly.
void snapshot_coefficients(const MiniEst& m, const Setup& s, double mu,
                           VectorXd& z, VectorXd& q) {
  const Snapshot& snap = s.cache.entries().at(mu);
  z = m.model.zeta.transpose() * (m.t.gram * snap.u);
  q = m.model.xi.transpose() * (s.sys.Mp() * snap.p);
}

/// blockdiag(free-velocity restriction, pressure identity) and the matching
/// metric, rebuilt independently of the certifier internals.
void build_restriction_and_metric(const Setup& s, const TInnerProduct& t,
                                  SpMat& pz, SpMat& g, VectorXd& border) {
  const SpMat& rv = s.solver.restriction();
  const int nf = static_cast<int>(rv.rows());
  const int nu = s.sys.n_u();
  const int np = s.sys.n_p();
  std::vector<Triplet> trips;
  for (int k = 0; k < rv.outerSize(); ++k)
    for (SpMat::InnerIterator it(rv, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int i = 0; i < np; ++i) trips.emplace_back(nf + i, nu + i, 1.0);
  pz.resize(nf + np, nu + np);
  pz.setFromTriplets(trips.begin(), trips.end());

  const SpMat rvt = rv.transpose();
  const SpMat a = rv * t.gram;
  const SpMat tff = a * rvt;
  trips.clear();
  for (int k = 0; k < tff.outerSize(); ++k)
    for (SpMat::InnerIterator it(tff, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  const SpMat& mp = s.sys.Mp();
  for (int k = 0; k < mp.outerSize(); ++k)
    for (SpMat::InnerIterator it(mp, k); it; ++it)
      trips.emplace_back(nf + static_cast<int>(it.row()),
                         nf + static_cast<int>(it.col()), it.value());
  g.resize(nf + np, nf + np);
  g.setFromTriplets(trips.begin(), trips.end());

  border = VectorXd::Zero(nf + np);
  border.tail(np) = s.sys.Mp() * VectorXd(VectorXd::Ones(np));
}

}  // namespace

TEST_CASE("residual layout indexes every slot exactly once") {
  ResidualLayout lay;
  lay.w = 3;
  lay.n = 2;
  lay.m1 = 2;
  lay.m2 = 2;
  CHECK(lay.n_velocity() == 1 + 3 + 9 + 6 + 2);
  CHECK(lay.n_pressure() == 3 + 4);

  std::vector<int> hits(lay.n_velocity(), 0);
  hits[lay.load()]++;
  for (int a = 0; a < lay.w; ++a) hits[lay.diff(a)]++;
  for (int a = 0; a < lay.w; ++a)
    for (int b = 0; b < lay.w; ++b) hits[lay.conv(a, b)]++;
  for (int s = 0; s < lay.m1; ++s)
    for (int a = 0; a < lay.w; ++a) hits[lay.sma(s, a)]++;
  for (int q = 0; q < lay.n; ++q) hits[lay.divp(q)]++;
  CHECK(*std::min_element(hits.begin(), hits.end()) == 1);
  CHECK(*std::max_element(hits.begin(), hits.end()) == 1);

  std::vector<int> phits(lay.n_pressure(), 0);
  for (int a = 0; a < lay.w; ++a) phits[lay.divu(a)]++;
  for (int s = 0; s < lay.m2; ++s)
    for (int q = 0; q < lay.n; ++q) phits[lay.pres(s, q)]++;
  CHECK(*std::min_element(phits.begin(), phits.end()) == 1);
  CHECK(*std::max_element(phits.begin(), phits.end()) == 1);
}

TEST_CASE("pencil singular values match a dense SVD in the identity metric") {
  const int n = 40;
  MatrixXd jd(n, n);
  for (int i = 0; i < n; ++i) jd.col(i) = lcg_vector(n, 100 + i);
  jd += 5.0 * MatrixXd::Identity(n, n);
  const SpMat j = jd.sparseView();
  SpMat g(n, n);
  g.setIdentity();

  const Eigen::JacobiSVD<MatrixXd> svd(jd);
  const double lo = svd.singularValues()(n - 1);
  const double hi = svd.singularValues()(0);

  const double beta = pencil_smallest_sv(j, g, VectorXd());
  const double gamma = pencil_largest_sv(j, g, 2000, 1e-10);
  CHECK(rel_diff(beta, lo) < 1e-6);
  CHECK(rel_diff(gamma, hi) < 1e-4);

  // homogeneity
  const double beta3 = pencil_smallest_sv(SpMat(3.0 * j), g, VectorXd());
  CHECK(rel_diff(beta3, 3.0 * beta) < 1e-8);
}

TEST_CASE("bordered beta matches the dense generalized eigensolve") {
  Setup& s = Setup::instance();
  MiniEst& m = MiniEst::instance();
  Certifier& cert = certifier();
  const double mu = 1500.0;

  // Tangent at the mid-domain reduced state, restricted like the certifier
  // does but assembled independently here.
  VectorXd z, q;
  snapshot_coefficients(m, s, 1000.0, z, q);
  const VectorXd u = m.model.zeta * z + s.solver.lifting();
  const VectorXd tau =
      m.model.eim_tau.interpolate(magic_tau_values(m.model, z, mu));
  const SpMat jfull = s.sys.tangent(u, mu, tau);

  SpMat pz, g;
  VectorXd border;
  build_restriction_and_metric(s, m.t, pz, g, border);
  const SpMat a = pz * jfull;
  const SpMat pzt = pz.transpose();
  const SpMat jf = a * pzt;

  const double beta = pencil_smallest_sv(jf, g, border);

  const MatrixXd jd(jf);
  const MatrixXd gd(g);
  const MatrixXd at = jd.transpose() * gd.ldlt().solve(jd);
  const Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(at, gd);
  const VectorXd ev = ges.eigenvalues();
  // exactly one kernel direction: the constant pressure. Forming the dense
  // normal matrix leaves the kernel eigenvalue near 1e-11, eight orders
  // below the physical one.
  CHECK(ev(0) < 1e-8 * ev(1));
  CHECK(rel_diff(beta * beta, ev(1)) < 1e-6);

  const double gamma = pencil_largest_sv(jf, g, 3000, 1e-9);
  CHECK(rel_diff(gamma * gamma, ev(ev.size() - 1)) < 1e-4);

  // the certifier assembles the same operator
  CHECK(rel_diff(cert.beta_n(z, q, mu), beta) < 1e-10);

  // homogeneity survives the border
  const double beta2 = pencil_smallest_sv(SpMat(2.0 * jf), g, border);
  CHECK(rel_diff(beta2, 2.0 * beta) < 1e-8);
}

TEST_CASE("fast residual dual norm equals the full-order fallback") {
  Setup& s = Setup::instance();
  MiniEst& m = MiniEst::instance();
  Certifier& cert = certifier();
  const ResidualLayout& lay = cert.layout();

  for (const std::uint64_t seed : {11ull, 12ull, 13ull}) {
    const VectorXd z = lcg_vector(lay.w - 1, seed);
    const VectorXd q = lcg_vector(lay.n, seed + 50);
    const VectorXd ss = lcg_vector(lay.m1, seed + 100);
    const VectorXd sp = lcg_vector(lay.m2, seed + 150);
    const double mu = 1000.0 + 700.0 * static_cast<double>(seed % 3) / 2.0;

    const double fast = cert.eps_fast(z, q, ss, sp, mu);
    const double full = cert.eps_full(z, q, ss, sp, mu);
    CHECK(fast > 0.0);
    CHECK(rel_diff(fast, full) < 1e-10);
    CHECK(cert.eps_checked(z, q, ss, sp, mu) == fast);
  }

  // out-of-domain mu rejected on both routes
  const VectorXd z0 = VectorXd::Zero(lay.w - 1);
  const VectorXd q0 = VectorXd::Zero(lay.n);
  const VectorXd s0 = VectorXd::Zero(lay.m1);
  const VectorXd p0 = VectorXd::Zero(lay.m2);
  CHECK_THROWS_AS((void)cert.eps_fast(z0, q0, s0, p0, 999.0), ConfigError);
  CHECK_THROWS_AS((void)cert.eps_full(z0, q0, s0, p0, 2024.5), ConfigError);
  (void)s;
  (void)m;
}

TEST_CASE("injected full-order snapshot leaves only solver-level residual") {
  Setup& s = Setup::instance();
  MiniEst& m = MiniEst::instance();
  Certifier& cert = certifier();

  for (const double mu : {1000.0, 2000.0}) {
    VectorXd z, q;
    snapshot_coefficients(m, s, mu, z, q);
    const VectorXd ss = m.model.eim_nu.coefficients(magic_nu_values(m.model, z));
    const VectorXd sp =
        m.model.eim_tau.coefficients(magic_tau_values(m.model, z, mu));
    const double eps = cert.eps_full(z, q, ss, sp, mu);
    CHECK(eps <= 1e-9);
  }
}

TEST_CASE("zero state with a body force reproduces the load dual norm") {
  const Mesh mesh = build_unit_square_mesh(4);
  ModelCoefficients coeffs = Setup::make_coeffs();
  const FeSystem sys(mesh, 1, coeffs);
  SolverOptions opts;
  opts.lid_speed = 0.0;  // zero lifting
  const FomSolver solver(sys, opts);

  TInnerProduct t;
  t.mu_bar = 1500.0;
  t.weight_qp = VectorXd::Constant(sys.velocity().nq_total(), 1.0 / t.mu_bar);
  t.gram = sys.weighted_stiffness(t.weight_qp);

  ReducedModel m;
  m.coeffs = coeffs;
  m.zeta.resize(sys.n_u(), 0);
  m.xi.resize(sys.n_p(), 0);
  m.eim_nu.basis.resize(sys.velocity().nq_total(), 0);
  m.eim_tau.basis.resize(static_cast<int>(mesh.triangles.rows()), 0);

  const VectorXd f = sys.load_vector([](double x, double y) {
    return Vector2d(std::sin(3.0 * x + y), std::cos(2.0 * y) - x);
  });

  Certifier cert(m, solver, t, f);
  cert.build();

  const VectorXd none;
  const double eps = cert.eps_fast(none, none, none, none, 1500.0);

  // oracle: direct Riesz solve of the load in the free-velocity T metric
  const SpMat& rv = solver.restriction();
  const SpMat rvt = rv.transpose();
  const SpMat a = rv * t.gram;
  const SpMat tff = a * rvt;
  const Eigen::SimplicialLDLT<SpMat> ldlt(tff);
  const VectorXd lf = rv * f;
  const double oracle = std::sqrt(lf.dot(ldlt.solve(lf)));
  CHECK(rel_diff(eps, oracle) < 1e-12);
  CHECK(rel_diff(eps, cert.eps_full(none, none, none, none, 1500.0)) < 1e-12);

  // doubling the functional doubles the norm
  Certifier cert2(m, solver, t, VectorXd(2.0 * f));
  cert2.build();
  CHECK(rel_diff(cert2.eps_fast(none, none, none, none, 1500.0), 2.0 * eps) <
        1e-13);
}

TEST_CASE("rho_T calibration: structure, determinism, trivial Smagorinsky") {
  Setup& s = Setup::instance();
  MiniEst& m = MiniEst::instance();
  const RhoReport& rep = m.rho;

  CHECK(rep.c_pass > 0.0);
  CHECK(rep.c_hat > 0.0);
  CHECK(rep.rho_t > 2.0 * rep.c_pass * rep.c_pass);
  CHECK(rel_diff(rep.rho_t - 2.0 * rep.c_pass * rep.c_pass,
                 rep.c_hat * rep.h) < 1e-12);
  CHECK(rep.c_hat == 1.5 * rep.max_ratio);

  const RhoReport again = calibrate_rho_t(s.sys, m.t, 60);
  CHECK(again.rho_t == rep.rho_t);

  // C_S = 0 kills the sampled part exactly
  ModelCoefficients c0 = Setup::make_coeffs();
  c0.c_s = 0.0;
  const Mesh mesh4 = build_unit_square_mesh(4);
  const FeSystem sys0(mesh4, 1, c0);
  TInnerProduct t0;
  t0.mu_bar = 1200.0;
  t0.weight_qp = VectorXd::Constant(sys0.velocity().nq_total(), 1.0 / t0.mu_bar);
  t0.gram = sys0.weighted_stiffness(t0.weight_qp);
  const RhoReport r0 = calibrate_rho_t(sys0, t0, 20);
  CHECK(r0.c_hat == 0.0);
  CHECK(r0.rho_t == 2.0 * r0.c_pass * r0.c_pass);

  CHECK_THROWS_AS((void)calibrate_rho_t(s.sys, m.t, 0), ConfigError);
}

TEST_CASE("tangent differences stay below rho_T on fresh quadruples") {
  Setup& s = Setup::instance();
  MiniEst& m = MiniEst::instance();

  const std::vector<int> fs = s.sys.free_velocity_scalar_dofs();
  const int ns = s.sys.n_us();
  const int np = s.sys.n_p();
  std::mt19937 rng(777);
  std::normal_distribution<double> nd;
  const auto draw_vel = [&]() {
    VectorXd u = VectorXd::Zero(s.sys.n_u());
    for (const int d : fs) {
      u(d) = nd(rng);
      u(ns + d) = nd(rng);
    }
    return u;
  };
  const auto draw_pres = [&]() {
    VectorXd p(np);
    for (int i = 0; i < np; ++i) p(i) = nd(rng);
    return p;
  };
  const auto xnorm = [&](const VectorXd& u, const VectorXd& p) {
    return std::sqrt(u.dot(m.t.gram * u) + p.dot(s.sys.Mp() * p));
  };

  const double mu = 1500.0;
  const VectorXd tau = s.sys.tau_field(s.solver.lifting(), mu);
  int checked = 0;
  for (int k = 0; k < 50; ++k) {
    const VectorXd u1 = s.solver.lifting() + draw_vel();
    const VectorXd u2 = s.solver.lifting() + draw_vel();
    const VectorXd zu = draw_vel();
    const VectorXd zp = draw_pres();
    const VectorXd vu = draw_vel();
    const VectorXd vp = draw_pres();

    VectorXd zvec(s.sys.n_u() + np), vvec(s.sys.n_u() + np);
    zvec << zu, zp;
    vvec << vu, vp;

    const SpMat j1 = s.sys.tangent(u1, mu, tau);
    const SpMat j2 = s.sys.tangent(u2, mu, tau);
    const double num = std::abs(vvec.dot(j1 * zvec) - vvec.dot(j2 * zvec));
    const double den =
        xnorm(u1 - u2, VectorXd::Zero(np)) * xnorm(zu, zp) * xnorm(vu, vp);
    if (den == 0.0) continue;
    CHECK(num / den <= m.model.rho_t);
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("certify: invariants, Taylor fallback, positive beta on a grid") {
  Setup& s = Setup::instance();
  MiniEst& m = MiniEst::instance();
  Certifier& cert = certifier();

  VectorXd z, q;
  snapshot_coefficients(m, s, 1000.0, z, q);
  const EstimatorState st = cert.certify(z, q, 1000.0);
  CHECK(st.beta > 0.0);
  CHECK(!st.singular);
  CHECK(st.rho_t == m.model.rho_t);
  CHECK(rel_diff(st.tau, 4.0 * st.eps * st.rho_t / (st.beta * st.beta)) < 1e-12);
  CHECK(st.tau <= 1.0);
  CHECK(st.certified);
  CHECK(rel_diff(st.delta,
                 st.beta / (2.0 * st.rho_t) * (1.0 - std::sqrt(1.0 - st.tau))) <
        1e-9);
  // near the exact solution the bound collapses to eps/beta
  CHECK(st.delta <= 1.01 * st.eps / st.beta + 1e-30);

  // a wild state overflows tau and lands in the Taylor branch
  const VectorXd zbig = 50.0 * VectorXd::Ones(z.size());
  const VectorXd qbig = VectorXd::Zero(q.size());
  const EstimatorState wild = cert.certify(zbig, qbig, 1500.0);
  CHECK(wild.tau > 1.0);
  CHECK(!wild.certified);
  CHECK(rel_diff(wild.delta, wild.beta / (4.0 * wild.rho_t) * wild.tau) < 1e-12);

  // coercive regime: beta stays positive across the parameter grid
  for (const double mu : linspace(1000.0, 2000.0, 5)) {
    const EstimatorState g = cert.certify(z, q, mu);
    CHECK(g.beta > 0.0);
  }

  ReducedModel& writable = m.model;
  const double saved = writable.rho_t;
  writable.rho_t = 0.0;
  CHECK_THROWS_AS((void)cert.certify(z, q, 1500.0), ConfigError);
  writable.rho_t = saved;
}
