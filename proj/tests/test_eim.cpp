#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "vmsrb/eim.hpp"

using namespace vmsrb;

namespace {

/// Smooth synthetic manifold with slowly decaying Kolmogorov width:
/// g(mu, x) = 1 / (1 + mu * (x + 0.5)) sampled on an x grid.
CoefficientManifold hard_manifold(int n_samples, int n_train) {
  CoefficientManifold m;
  m.target = EimTarget::EddyViscosity;
  m.training_mus = linspace(1.0, 10.0, n_train);
  m.sample_set_hash = 0x1234;
  m.evaluate = [n_samples](double mu) {
    VectorXd g(n_samples);
    for (int i = 0; i < n_samples; ++i) {
      const double x = static_cast<double>(i) / (n_samples - 1);
      g(i) = 1.0 / (1.0 + mu * (x + 0.5));
    }
    return g;
  };
  return m;
}

VectorXd at_magic(const EimModel& model, const VectorXd& g) {
  VectorXd out(model.size());
  for (int i = 0; i < model.size(); ++i) out(i) = g(model.magic[i]);
  return out;
}

}  // namespace

TEST_CASE("rank-one manifold terminates after one basis") {
  CoefficientManifold m;
  m.target = EimTarget::StabCoefficient;
  m.training_mus = linspace(1.0, 10.0, 12);
  VectorXd g0(40);
  unsigned state = 123;
  for (int i = 0; i < 40; ++i) {
    state = state * 1664525u + 1013904223u;
    g0(i) = static_cast<double>(state % 1000) / 500.0 - 1.0;
  }
  m.evaluate = [g0](double mu) { return VectorXd(mu * g0); };

  EimOptions opts;
  opts.eps = 1e-8;
  const EimModel model = train_eim(m, opts);

  CHECK(model.size() == 1);
  CHECK(!model.hit_m_max);
  REQUIRE(model.error_history.size() == 2);
  CHECK(model.error_history[0] == doctest::Approx(10.0 * g0.lpNorm<Eigen::Infinity>()));
  CHECK(model.error_history[1] <= 1e-14 * model.error_history[0]);
  CHECK(model.b(0, 0) == 1.0);
  CHECK(model.basis.col(0).lpNorm<Eigen::Infinity>() == 1.0);

  // Held-out parameter is reproduced to roundoff.
  const VectorXd g = m.evaluate(3.7);
  const VectorXd err = model.interpolate(at_magic(model, g)) - g;
  CHECK(err.lpNorm<Eigen::Infinity>() <= 1e-14 * g.lpNorm<Eigen::Infinity>());
}

TEST_CASE("greedy EIM on a smooth manifold") {
  const CoefficientManifold m = hard_manifold(200, 60);
  EimOptions opts;
  opts.eps = 1e-10;
  opts.m_max = 60;
  const EimModel model = train_eim(m, opts);

  REQUIRE(model.size() >= 4);
  CHECK(model.size() < 30);
  CHECK(!model.hit_m_max);
  CHECK(model.error_history.back() < 1e-10);

  SUBCASE("structure: triangular B, sup-normalized basis, distinct magic points") {
    const int sz = model.size();
    for (int j = 0; j < sz; ++j) {
      CHECK(model.b(j, j) == 1.0);
      for (int i = 0; i < j; ++i) CHECK(model.b(i, j) == 0.0);
      CHECK(model.basis.col(j).lpNorm<Eigen::Infinity>() == 1.0);
    }
    std::set<int> uniq(model.magic.begin(), model.magic.end());
    CHECK(static_cast<int>(uniq.size()) == sz);
    CHECK(model.b.cwiseAbs().maxCoeff() <= 1.0);
  }

  SUBCASE("training error history is non-increasing") {
    for (std::size_t k = 1; k < model.error_history.size(); ++k)
      CHECK(model.error_history[k] <= model.error_history[k - 1] * (1.0 + 1e-12));
  }

  SUBCASE("basis reproduction gives exact unit coefficients") {
    const VectorXd sigma = model.coefficients(at_magic(model, model.basis.col(0)));
    CHECK(sigma(0) == 1.0);
    CHECK(sigma.tail(sigma.size() - 1).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("exactness on the span") {
    VectorXd c = VectorXd::LinSpaced(model.size(), -1.0, 2.0);
    const VectorXd g = model.basis * c;
    const VectorXd sigma = model.coefficients(at_magic(model, g));
    CHECK((sigma - c).lpNorm<Eigen::Infinity>() <= 1e-12 * c.lpNorm<Eigen::Infinity>());
  }

  SUBCASE("held-out parameters: exact at magic points, small everywhere") {
    const double tail = std::max(model.error_history.back(), 1e-300);
    for (const double mu : {1.43, 4.81, 9.27}) {
      const VectorXd g = m.evaluate(mu);
      const VectorXd ig = model.interpolate(at_magic(model, g));
      for (int i = 0; i < model.size(); ++i)
        CHECK(std::abs(ig(model.magic[i]) - g(model.magic[i])) <= 1e-12);
      CHECK((ig - g).lpNorm<Eigen::Infinity>() <= 10.0 * tail);
    }
  }

  SUBCASE("Lebesgue proxy stays sub-exponential") {
    CHECK(lebesgue_proxy(model) < std::pow(10.0, model.size() / 10.0));
  }

  SUBCASE("nested models coincide with early-stopped training") {
    const int mm = model.size() / 2;
    EimOptions opts2 = opts;
    opts2.m_max = mm;
    const EimModel small = train_eim(m, opts2);
    const EimModel trunc = model.truncated(mm);
    REQUIRE(small.size() == mm);
    CHECK((small.basis - trunc.basis).norm() == 0.0);
    CHECK((small.b - trunc.b).norm() == 0.0);
    CHECK(small.magic == trunc.magic);
    CHECK(small.selected_mus == trunc.selected_mus);
    for (int k = 0; k <= mm; ++k)
      CHECK(small.error_history[k] == trunc.error_history[k]);
    CHECK(small.hit_m_max);  // stopped by the cap, flagged
  }

  SUBCASE("serial and parallel training agree bitwise") {
    EimOptions opts_s = opts;
    opts_s.exec = Exec::Serial;
    EimOptions opts_p = opts;
    opts_p.exec = Exec::Parallel;
    const EimModel a = train_eim(m, opts_s);
    const EimModel b = train_eim(m, opts_p);
    CHECK((a.basis - b.basis).norm() == 0.0);
    CHECK(a.magic == b.magic);
    CHECK(a.error_history == b.error_history);
  }
}

TEST_CASE("persistence round trip and CSV export") {
  const CoefficientManifold m = hard_manifold(120, 40);
  EimOptions opts;
  opts.eps = 1e-8;
  const EimModel model = train_eim(m, opts);

  const auto dir = std::filesystem::temp_directory_path() /
                   ("vmsrb_eim_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "eim_nu.bin").string();
  save_eim(model, path);
  const EimModel loaded = load_eim(path);

  CHECK(loaded.target == model.target);
  CHECK(loaded.sample_set_hash == model.sample_set_hash);
  CHECK(loaded.eps_target == model.eps_target);
  CHECK(loaded.hit_m_max == model.hit_m_max);
  CHECK((loaded.basis - model.basis).norm() == 0.0);
  CHECK((loaded.b - model.b).norm() == 0.0);
  CHECK(loaded.magic == model.magic);
  CHECK(loaded.selected_mus == model.selected_mus);
  CHECK(loaded.error_history == model.error_history);

  const std::string csv = eim_history_csv(model);
  CHECK(csv.rfind("m,max_training_error\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(model.error_history.size()) + 1);

  std::filesystem::remove_all(dir);
}

TEST_CASE("eddy-viscosity and stabilization manifolds from cached snapshots") {
  ModelCoefficients coeffs;
  coeffs.mu_min = 1000.0;
  coeffs.mu_max = 2000.0;
  const Mesh mesh = build_unit_square_mesh(6);
  const FeSystem sys(mesh, 1, coeffs);
  SolverOptions sopts;
  sopts.lid_speed = 0.3;
  const FomSolver solver(sys, sopts);
  SnapshotCache cache(solver);

  const std::vector<double> train = linspace(1000.0, 2000.0, 33);
  const CoefficientManifold mf_nu = make_nu_manifold(solver, cache, train);
  const CoefficientManifold mf_tau = make_tau_manifold(solver, cache, train);

  EimOptions opts;
  opts.eps = 1e-5;
  opts.m_max = 40;

  const EimModel em_nu = train_eim(mf_nu, opts);
  const EimModel em_tau = train_eim(mf_tau, opts);
  CHECK(em_nu.n_samples() == sys.velocity().nq_total());
  CHECK(em_tau.n_samples() == mesh.n_triangles());
  CHECK(!em_nu.hit_m_max);
  CHECK(!em_tau.hit_m_max);
  CHECK(em_nu.error_history.back() < 1e-5);
  CHECK(em_tau.error_history.back() < 1e-5);
  CHECK(em_nu.sample_set_hash != em_tau.sample_set_hash);

  // Held-out parameter: interpolation exact at magic points and controlled
  // globally (relative to the field scale).
  for (const double mu : {1160.0, 1730.0}) {
    const VectorXd g = mf_nu.evaluate(mu);
    const VectorXd ig = em_nu.interpolate(at_magic(em_nu, g));
    for (int i = 0; i < em_nu.size(); ++i)
      CHECK(std::abs(ig(em_nu.magic[i]) - g(em_nu.magic[i])) <=
            1e-12 * g.lpNorm<Eigen::Infinity>());
    CHECK((ig - g).lpNorm<Eigen::Infinity>() <=
          10.0 * std::max(em_nu.error_history.back(), 1e-7));

    const VectorXd gt = mf_tau.evaluate(mu);
    const VectorXd igt = em_tau.interpolate(at_magic(em_tau, gt));
    CHECK((igt - gt).lpNorm<Eigen::Infinity>() <=
          10.0 * std::max(em_tau.error_history.back(), 1e-7));
  }

  // The coefficient fields must live on positive scales (tau bounded by
  // Hypothesis 1, nu_T nonnegative).
  CHECK(mf_tau.evaluate(1500.0).minCoeff() > 0.0);
  CHECK(mf_nu.evaluate(1500.0).minCoeff() >= 0.0);
}
