#include "vmsrb/eim.hpp"

#include <cmath>
#include <cstdio>

#include "vmsrb/container.hpp"

namespace vmsrb {

std::string eim_target_name(EimTarget t) {
  return t == EimTarget::EddyViscosity ? "nu_t" : "tau";
}

VectorXd EimModel::coefficients(const VectorXd& g_at_magic) const {
  const int m = size();
  require(g_at_magic.size() == m, "eim: magic-point value count mismatch");
  return b.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(g_at_magic);
}

VectorXd EimModel::interpolate(const VectorXd& g_at_magic) const {
  return basis.leftCols(size()) * coefficients(g_at_magic);
}

EimModel EimModel::truncated(int m) const {
  require(m >= 1 && m <= size(), "eim: invalid truncation size");
  EimModel out;
  out.target = target;
  out.basis = basis.leftCols(m);
  out.magic.assign(magic.begin(), magic.begin() + m);
  out.b = b.topLeftCorner(m, m);
  out.selected_mus.assign(selected_mus.begin(), selected_mus.begin() + m);
  out.error_history.assign(error_history.begin(), error_history.begin() + m + 1);
  out.eps_target = eps_target;
  out.hit_m_max = false;
  out.sample_set_hash = sample_set_hash;
  return out;
}

EimModel train_eim(const CoefficientManifold& manifold, const EimOptions& opts) {
  require(!manifold.training_mus.empty(), "train_eim: empty training set");
  require(opts.eps > 0, "train_eim: eps must be positive");
  require(opts.m_max >= 1, "train_eim: m_max must be positive");

  const int n_train = static_cast<int>(manifold.training_mus.size());
  VectorXd first = manifold.evaluate(manifold.training_mus[0]);
  const int n_samples = static_cast<int>(first.size());
  require(n_samples > 0, "train_eim: empty sample set");

  // Residual columns start as the raw fields and are deflated in place.
  MatrixXd r(n_samples, n_train);
  r.col(0) = first;
  for (int j = 1; j < n_train; ++j) {
    r.col(j) = manifold.evaluate(manifold.training_mus[j]);
    require(r.col(j).size() == n_samples, "train_eim: inconsistent sample count");
  }
  check_numeric(r.allFinite(), "train_eim: non-finite field sample");

  EimModel model;
  model.target = manifold.target;
  model.eps_target = opts.eps;
  model.sample_set_hash = manifold.sample_set_hash;
  model.basis.resize(n_samples, 0);

  // Per-column sup norms of the current residuals (parallel over mu).
  VectorXd col_err(n_train);
  const auto refresh_errors = [&](int from_col) {
    (void)from_col;
    parallel_for(n_train, opts.exec,
                 [&](std::ptrdiff_t j) { col_err(j) = r.col(j).lpNorm<Eigen::Infinity>(); });
  };
  refresh_errors(0);
  model.error_history.push_back(col_err.maxCoeff());

  while (model.size() < opts.m_max) {
    int jstar = 0;
    const double err = col_err.maxCoeff(&jstar);
    if (err < opts.eps) break;
    if (err == 0.0) break;  // degenerate manifold: exact already

    int istar = 0;
    r.col(jstar).cwiseAbs().maxCoeff(&istar);
    const double pivot = r(istar, jstar);

    const VectorXd q = r.col(jstar) / pivot;
    const int m = model.size();
    model.basis.conservativeResize(Eigen::NoChange, m + 1);
    model.basis.col(m) = q;
    model.magic.push_back(istar);
    model.selected_mus.push_back(manifold.training_mus[jstar]);

    // Deflate every residual so row istar becomes exactly zero.
    parallel_for(n_train, opts.exec, [&](std::ptrdiff_t j) {
      const double c = r(istar, j);
      r.col(j) -= c * q;
      r(istar, j) = 0.0;
      col_err(j) = r.col(j).lpNorm<Eigen::Infinity>();
    });
    model.error_history.push_back(col_err.maxCoeff());
    if (opts.verbose)
      std::fprintf(stderr, "  eim[%s] m=%3d  mu=%.6g  err=%.3e\n",
                   eim_target_name(model.target).c_str(), m + 1,
                   manifold.training_mus[jstar], model.error_history.back());
  }
  model.hit_m_max = model.size() == opts.m_max && model.error_history.back() >= opts.eps &&
                    model.error_history.back() > 0.0;

  // B_ij = q_j(t_i): lower triangular with unit diagonal by construction.
  const int m = model.size();
  model.b = MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j) model.b(i, j) = model.basis(model.magic[i], j);
  return model;
}

double lebesgue_proxy(const EimModel& model) {
  const int m = model.size();
  if (m == 0) return 0.0;
  const MatrixXd inv = model.b.topLeftCorner(m, m)
                           .triangularView<Eigen::Lower>()
                           .solve(MatrixXd::Identity(m, m));
  return inv.cwiseAbs().rowwise().sum().maxCoeff();
}

void save_eim(const EimModel& model, const std::string& path) {
  Container c;
  c.meta()["kind"] = "eim";
  c.meta()["target"] = eim_target_name(model.target);
  c.meta()["sample_set_hash"] = hex16(model.sample_set_hash);
  c.meta()["eps_target"] = model.eps_target;
  c.meta()["hit_m_max"] = model.hit_m_max;
  c.add("basis", model.basis);
  c.add("b", model.b);
  VectorXd magic(model.size());
  for (int i = 0; i < model.size(); ++i) magic(i) = model.magic[i];
  c.add("magic", magic);
  c.add("selected_mus",
        VectorXd(Eigen::Map<const VectorXd>(model.selected_mus.data(),
                                            static_cast<Eigen::Index>(model.selected_mus.size()))));
  c.add("error_history",
        VectorXd(Eigen::Map<const VectorXd>(model.error_history.data(),
                                            static_cast<Eigen::Index>(model.error_history.size()))));
  c.save(path);
}

EimModel load_eim(const std::string& path) {
  const Container c = Container::load(path);
  require(c.meta().value("kind", "") == "eim", "load_eim: wrong container kind in " + path);
  EimModel model;
  const std::string target = c.meta().value("target", "");
  if (target == "nu_t")
    model.target = EimTarget::EddyViscosity;
  else if (target == "tau")
    model.target = EimTarget::StabCoefficient;
  else
    throw ConfigError("load_eim: unknown target '" + target + "' in " + path);
  model.sample_set_hash =
      std::stoull(c.meta().value("sample_set_hash", "0"), nullptr, 16);
  model.eps_target = c.meta().value("eps_target", 0.0);
  model.hit_m_max = c.meta().value("hit_m_max", false);
  model.basis = c.matrix("basis");
  model.b = c.matrix("b");
  const VectorXd magic = c.vector("magic");
  for (int i = 0; i < magic.size(); ++i) model.magic.push_back(static_cast<int>(magic(i)));
  const VectorXd mus = c.vector("selected_mus");
  model.selected_mus.assign(mus.data(), mus.data() + mus.size());
  const VectorXd hist = c.vector("error_history");
  model.error_history.assign(hist.data(), hist.data() + hist.size());
  require(model.b.rows() == model.size() && model.basis.cols() == model.size(),
          "load_eim: inconsistent dimensions in " + path);
  return model;
}

std::string eim_history_csv(const EimModel& model) {
  std::string out = "m,max_training_error\n";
  char line[64];
  for (std::size_t m = 0; m < model.error_history.size(); ++m) {
    std::snprintf(line, sizeof(line), "%zu,%.17g\n", m, model.error_history[m]);
    out += line;
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
  require(n >= 2 && hi > lo, "linspace: need n >= 2 and hi > lo");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  out.back() = hi;
  return out;
}

namespace {

std::uint64_t sample_hash(const FeSystem& sys, EimTarget target) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s;mesh=%016llx;qdeg=%d;nsamp=%lld",
                eim_target_name(target).c_str(),
                static_cast<unsigned long long>(mesh_hash(sys.mesh())),
                sys.velocity().rule().degree,
                target == EimTarget::EddyViscosity
                    ? static_cast<long long>(sys.velocity().nq_total())
                    : static_cast<long long>(sys.mesh().n_triangles()));
  return fnv1a64(buf);
}

}  // namespace

CoefficientManifold make_nu_manifold(const FomSolver& solver, SnapshotCache& cache,
                                     std::vector<double> training_mus) {
  CoefficientManifold m;
  m.target = EimTarget::EddyViscosity;
  m.training_mus = std::move(training_mus);
  m.sample_set_hash = sample_hash(solver.system(), m.target);
  m.evaluate = [&solver, &cache](double mu) {
    const Snapshot& snap = cache.get(mu);
    return solver.system().nu_field(solver.lifting() + snap.u);
  };
  return m;
}

CoefficientManifold make_tau_manifold(const FomSolver& solver, SnapshotCache& cache,
                                      std::vector<double> training_mus) {
  CoefficientManifold m;
  m.target = EimTarget::StabCoefficient;
  m.training_mus = std::move(training_mus);
  m.sample_set_hash = sample_hash(solver.system(), m.target);
  m.evaluate = [&solver, &cache](double mu) {
    const Snapshot& snap = cache.get(mu);
    return solver.system().tau_field(solver.lifting() + snap.u, mu);
  };
  return m;
}

}  // namespace vmsrb
