#include "vmsrb/rb_model.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

namespace vmsrb {

namespace {

SpMat row_selector(const std::vector<int>& rows, int n_cols) {
  std::vector<Triplet> t;
  t.reserve(rows.size());
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    require(rows[i] >= 0 && rows[i] < n_cols, "row_selector: index out of range");
    t.emplace_back(i, rows[i], 1.0);
  }
  SpMat s(static_cast<int>(rows.size()), n_cols);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

std::string indexed(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d", stem, i);
  return buf;
}

}  // namespace

std::string variant_name(VmsVariant v) {
  return v == VmsVariant::SmallSmall ? "small_small" : "large_small";
}

VmsVariant parse_variant(const std::string& name) {
  if (name == "small_small") return VmsVariant::SmallSmall;
  if (name == "large_small") return VmsVariant::LargeSmall;
  throw ConfigError("unknown VMS variant: " + name);
}

double find_mu_bar(const FomSolver& solver, SnapshotCache& cache, int grid_size) {
  require(grid_size >= 2, "find_mu_bar: grid_size must be at least 2");
  const FeSystem& sys = solver.system();
  const auto& c = sys.coeffs();
  const DofHandler& vel = sys.velocity();
  const int nq = vel.nq();

  double best_mu = c.mu_min;
  double best_f = std::numeric_limits<double>::infinity();
  for (double mu : linspace(c.mu_min, c.mu_max, grid_size)) {
    const Snapshot& snap = cache.get(mu);
    const VectorXd nu = sys.nu_field(solver.lifting() + snap.u);
    double f = 0.0;
    for (int k = 0; k < sys.mesh().n_triangles(); ++k) {
      double mn = std::numeric_limits<double>::infinity();
      for (int q = 0; q < nq; ++q) mn = std::min(mn, nu[vel.qindex(k, q)]);
      f += mn;
    }
    if (f < best_f) {
      best_f = f;
      best_mu = mu;
    }
  }
  return best_mu;
}

TInnerProduct build_t_product(const FomSolver& solver, SnapshotCache& cache,
                              int grid_size) {
  TInnerProduct t;
  t.mu_bar = find_mu_bar(solver, cache, grid_size);
  const Snapshot& snap = cache.get(t.mu_bar);
  const FeSystem& sys = solver.system();
  t.weight_qp = sys.nu_field(solver.lifting() + snap.u);
  t.weight_qp.array() += 1.0 / t.mu_bar;
  t.gram = sys.weighted_stiffness(t.weight_qp);
  return t;
}

VectorXd compute_supremizer(const FomSolver& solver, const VectorXd& q, double mu) {
  const FeSystem& sys = solver.system();
  require(q.size() == sys.n_p(), "compute_supremizer: pressure size mismatch");
  require(sys.coeffs().in_domain(mu), "compute_supremizer: mu outside the domain");
  // b(v, q) = -(q, div v), so the free-dof right-hand side is -(D^T q).
  const VectorXd rhs = solver.restriction() * VectorXd(-sys.D().transpose() * q);
  return solver.restriction().transpose() * solver.stiffness_solve(rhs);
}

bool mgs_extend(MatrixXd& basis, const SpMat& gram, const VectorXd& v, double drop_tol) {
  require(v.size() == gram.rows(), "mgs_extend: vector/gram size mismatch");
  if (basis.size() == 0) basis = MatrixXd(v.size(), 0);
  require(basis.rows() == v.size(), "mgs_extend: basis/vector size mismatch");

  VectorXd w = v;
  const double norm0 = std::sqrt(std::max(0.0, w.dot(gram * w)));
  if (!(norm0 > 0.0)) return false;
  for (int pass = 0; pass < 2; ++pass)
    for (int j = 0; j < basis.cols(); ++j) {
      const VectorXd bj = basis.col(j);
      w -= bj.dot(gram * w) * bj;
    }
  const double norm1 = std::sqrt(std::max(0.0, w.dot(gram * w)));
  if (norm1 <= drop_tol * norm0) return false;

  basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
  basis.col(basis.cols() - 1) = w / norm1;
  return true;
}

namespace {

void build_magic_pipelines(ReducedModel& m, const FomSolver& solver) {
  const FeSystem& sys = solver.system();
  const DofHandler& vel = sys.velocity();
  const auto& c = sys.coeffs();
  const double cs2 = c.c_s * c.c_s;
  const SpMat& gsam = c.variant == VmsVariant::SmallSmall ? sys.Gs() : sys.Gfull();
  const VectorXd& ud = solver.lifting();
  const int m1 = m.m1();
  const int m2 = m.m2();

  std::vector<int> grows;
  grows.reserve(4 * m1);
  m.magic_s_fac = VectorXd(m1);
  for (int t = 0; t < m1; ++t) {
    const int gq = m.eim_nu.magic[t];
    require(gq >= 0 && gq < vel.nq_total(), "magic pipeline: bad nu magic index");
    for (int r = 0; r < 4; ++r) grows.push_back(4 * gq + r);
    const double h = sys.mesh().h_K[sys.qelem()[gq]];
    m.magic_s_fac[t] = cs2 * h * h;
  }
  const SpMat gm = SpMat(row_selector(grows, static_cast<int>(gsam.rows())) * gsam);
  m.magic_s_basis = gm * m.zeta;
  m.magic_s_lift = gm * ud;

  const int nq = vel.nq();
  const int nloc = vel.nloc();
  const int ns = sys.n_us();
  std::vector<int> prows, vrows;
  prows.reserve(4 * nq * m2);
  vrows.reserve(2 * nloc * m2);
  m.magic_p_h = VectorXd(m2);
  for (int t = 0; t < m2; ++t) {
    const int k = m.eim_tau.magic[t];
    require(k >= 0 && k < sys.mesh().n_triangles(), "magic pipeline: bad tau magic index");
    for (int q = 0; q < nq; ++q)
      for (int r = 0; r < 4; ++r) prows.push_back(4 * vel.qindex(k, q) + r);
    for (int i = 0; i < nloc; ++i) {
      const int d = vel.elem_dofs()(k, i);
      vrows.push_back(d);
      vrows.push_back(ns + d);
    }
    m.magic_p_h[t] = sys.mesh().h_K[k];
  }
  const SpMat gp = SpMat(row_selector(prows, static_cast<int>(gsam.rows())) * gsam);
  m.magic_p_gbasis = gp * m.zeta;
  m.magic_p_glift = gp * ud;
  const SpMat vsel = row_selector(vrows, sys.n_u());
  m.magic_p_vbasis = vsel * m.zeta;
  m.magic_p_vlift = vsel * ud;
}

}  // namespace

void build_reduced_tensors(ReducedModel& m, const FomSolver& solver) {
  const FeSystem& sys = solver.system();
  const int dy = m.dim_y();
  const int n = m.n();
  const int m1 = m.m1();
  const int m2 = m.m2();
  require(dy > 0 && n > 0, "build_reduced_tensors: empty basis");
  require(m1 > 0 && m2 > 0, "build_reduced_tensors: EIM models not trained");
  require(m.zeta.rows() == sys.n_u() && m.xi.rows() == sys.n_p(),
          "build_reduced_tensors: basis sized for a different system");
  require(m.eim_nu.n_samples() == sys.velocity().nq_total() &&
              m.eim_tau.n_samples() == sys.mesh().n_triangles(),
          "build_reduced_tensors: EIM sample sets do not match the system");

  m.coeffs = sys.coeffs();
  const VectorXd& ud = solver.lifting();

  m.kr = m.zeta.transpose() * (sys.K() * m.zeta);
  m.kd = m.zeta.transpose() * (sys.K() * ud);
  m.dr = m.xi.transpose() * (sys.D() * m.zeta);
  m.dd = m.xi.transpose() * (sys.D() * ud);

  m.cr.assign(dy, MatrixXd());
  m.cd2 = MatrixXd(dy, dy);
  for (int j = 0; j < dy; ++j) {
    const SpMat cj = sys.conv_matrix(m.zeta.col(j));
    m.cr[j] = m.zeta.transpose() * (cj * m.zeta);
    m.cd2.col(j) = m.zeta.transpose() * (cj * ud);
  }
  const SpMat cd = sys.conv_matrix(ud);
  m.cd1 = m.zeta.transpose() * (cd * m.zeta);
  m.cdd = m.zeta.transpose() * (cd * ud);

  m.ss.assign(m1, MatrixXd());
  m.sd = MatrixXd(dy, m1);
  for (int s = 0; s < m1; ++s) {
    const SpMat a = sys.smag_matrix(m.eim_nu.basis.col(s));
    m.ss[s] = m.zeta.transpose() * (a * m.zeta);
    m.sd.col(s) = m.zeta.transpose() * (a * ud);
  }
  m.ps.assign(m2, MatrixXd());
  for (int s = 0; s < m2; ++s) {
    const SpMat a = sys.lps_matrix(m.eim_tau.basis.col(s));
    m.ps[s] = m.xi.transpose() * (a * m.xi);
  }
  // Lid-driven cavity: zero body force. The slot stays so a general load
  // only touches this line.
  m.fr = VectorXd::Zero(dy);

  build_magic_pipelines(m, solver);
}

VectorXd magic_nu_values(const ReducedModel& m, const VectorXd& z) {
  require(z.size() == m.dim_y(), "magic_nu_values: coefficient size mismatch");
  VectorXd out(m.m1());
  const VectorXd g = m.magic_s_lift + m.magic_s_basis * z;
  for (int t = 0; t < m.m1(); ++t)
    out[t] = m.magic_s_fac[t] * std::sqrt(g.segment<4>(4 * t).squaredNorm());
  return out;
}

VectorXd magic_tau_values(const ReducedModel& m, const VectorXd& z, double mu) {
  require(z.size() == m.dim_y(), "magic_tau_values: coefficient size mismatch");
  const int m2 = m.m2();
  require(m2 > 0, "magic_tau_values: no stabilization EIM model");
  const int nq = static_cast<int>(m.magic_p_gbasis.rows()) / (4 * m2);
  const int nv = static_cast<int>(m.magic_p_vbasis.rows()) / m2;
  const double cs2 = m.coeffs.c_s * m.coeffs.c_s;
  const VectorXd g = m.magic_p_glift + m.magic_p_gbasis * z;
  const VectorXd v = m.magic_p_vlift + m.magic_p_vbasis * z;
  VectorXd out(m2);
  for (int t = 0; t < m2; ++t) {
    const double h = m.magic_p_h[t];
    double nu_bar = 0.0;
    for (int q = 0; q < nq; ++q)
      nu_bar += cs2 * h * h * std::sqrt(g.segment<4>(4 * (t * nq + q)).squaredNorm());
    nu_bar /= nq;
    double uk = 0.0;
    for (int i = 0; i < nv; ++i) uk = std::max(uk, std::abs(v[t * nv + i]));
    out[t] = codina_tau(m.coeffs, mu, h, nu_bar, uk);
  }
  return out;
}

Snapshot reconstruct_full(const ReducedModel& m, const FomSolver& solver,
                          const VectorXd& z, const VectorXd& q, double mu) {
  require(z.size() == m.dim_y() && q.size() == m.n(),
          "reconstruct_full: coefficient dimension mismatch");
  const FeSystem& sys = solver.system();
  Snapshot s;
  s.mu = mu;
  s.lifting_id = "cavity-lid";
  s.u = m.zeta * z;
  s.p = m.xi * q;
  const VectorXd e = sys.Mp() * VectorXd(VectorXd::Ones(sys.n_p()));
  s.p.array() -= e.dot(s.p) / e.sum();
  return s;
}

void save_model(const ReducedModel& m, const FomSolver& solver, const std::string& dir) {
  const FeSystem& sys = solver.system();
  std::filesystem::create_directories(dir);

  nlohmann::json j;
  j["format"] = "VMSRB-MODEL";
  j["version"] = 1;
  j["dims"] = {{"dim_y", m.dim_y()}, {"n", m.n()},     {"m1", m.m1()},
               {"m2", m.m2()},       {"n_u", sys.n_u()}, {"n_p", sys.n_p()}};
  j["supremizers"] = m.supremizers;
  j["status"] = m.status;
  j["selected_mus"] = m.selected_mus;
  j["anchor_betas"] = m.anchor_betas;
  j["mu_bar"] = m.mu_bar;
  j["constants"] = {{"rho_t", m.rho_t}, {"c_pass", m.c_pass}, {"c_hat", m.c_hat}};
  const auto& c = sys.coeffs();
  const auto& o = solver.options();
  j["config"] = {{"c_s", c.c_s},
                 {"c1", c.c1},
                 {"c2", c.c2},
                 {"mu_min", c.mu_min},
                 {"mu_max", c.mu_max},
                 {"variant", variant_name(c.variant)},
                 {"pressure_degree", sys.pressure().degree()},
                 {"quad_degree", sys.velocity().rule().degree},
                 {"tol_nl", o.tol_nl},
                 {"tol_r", o.tol_r},
                 {"max_iters", o.max_iters},
                 {"relax", o.relax},
                 {"lid_speed", o.lid_speed}};
  j["mesh_hash"] = hex16(mesh_hash(sys.mesh()));
  j["config_hash"] = hex16(solver.config_hash());
  std::ofstream out(dir + "/manifest.json");
  require(out.good(), "save_model: cannot write manifest in " + dir);
  out << j.dump(2) << "\n";
  out.close();

  write_mesh_file(sys.mesh(), dir + "/mesh.txt");
  save_eim(m.eim_nu, dir + "/eim_nu.bin");
  save_eim(m.eim_tau, dir + "/eim_tau.bin");

  Container a;
  a.meta()["model"] = "vmsrb-reduced";
  a.add("zeta", m.zeta);
  a.add("xi", m.xi);
  a.add("kr", m.kr);
  a.add("kd", m.kd);
  a.add("dr", m.dr);
  a.add("dd", m.dd);
  a.add("cd1", m.cd1);
  a.add("cd2", m.cd2);
  a.add("cdd", m.cdd);
  a.add("fr", m.fr);
  a.add("sd", m.sd);
  for (int i = 0; i < m.dim_y(); ++i) a.add(indexed("cr", i), m.cr[i]);
  for (int s = 0; s < m.m1(); ++s) a.add(indexed("ss", s), m.ss[s]);
  for (int s = 0; s < m.m2(); ++s) a.add(indexed("ps", s), m.ps[s]);
  a.add("magic_s_basis", m.magic_s_basis);
  a.add("magic_s_lift", m.magic_s_lift);
  a.add("magic_s_fac", m.magic_s_fac);
  a.add("magic_p_gbasis", m.magic_p_gbasis);
  a.add("magic_p_glift", m.magic_p_glift);
  a.add("magic_p_vbasis", m.magic_p_vbasis);
  a.add("magic_p_vlift", m.magic_p_vlift);
  a.add("magic_p_h", m.magic_p_h);
  if (m.g_v.size() > 0) a.add("g_v", m.g_v);
  if (m.g_p.size() > 0) a.add("g_p", m.g_p);
  a.save(dir + "/arrays.bin");
}

ModelBundle load_model(const std::string& dir) {
  const std::string man_path = dir + "/manifest.json";
  std::ifstream in(man_path);
  require(in.good(), "load_model: cannot open " + man_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("load_model: bad manifest: " + std::string(e.what()));
  }
  require(j.value("format", std::string()) == "VMSRB-MODEL",
          "load_model: not a reduced model directory: " + dir);
  require(j.value("version", 0) == 1, "load_model: unsupported manifest version");

  ModelBundle b;
  b.mesh = std::make_unique<Mesh>(read_mesh_file(dir + "/mesh.txt"));
  const auto& jc = j.at("config");
  ModelCoefficients mc;
  mc.c_s = jc.at("c_s").get<double>();
  mc.c1 = jc.at("c1").get<double>();
  mc.c2 = jc.at("c2").get<double>();
  mc.mu_min = jc.at("mu_min").get<double>();
  mc.mu_max = jc.at("mu_max").get<double>();
  mc.variant = parse_variant(jc.at("variant").get<std::string>());
  SolverOptions so;
  so.tol_nl = jc.at("tol_nl").get<double>();
  so.tol_r = jc.at("tol_r").get<double>();
  so.max_iters = jc.at("max_iters").get<int>();
  so.relax = jc.at("relax").get<double>();
  so.lid_speed = jc.at("lid_speed").get<double>();
  b.system = std::make_unique<FeSystem>(*b.mesh, jc.at("pressure_degree").get<int>(), mc,
                                        jc.at("quad_degree").get<int>());
  b.solver = std::make_unique<FomSolver>(*b.system, so);
  require(hex16(mesh_hash(*b.mesh)) == j.at("mesh_hash").get<std::string>(),
          "load_model: mesh hash mismatch");
  require(hex16(b.solver->config_hash()) == j.at("config_hash").get<std::string>(),
          "load_model: config hash mismatch");

  ReducedModel& m = b.model;
  m.coeffs = mc;
  m.supremizers = j.value("supremizers", false);
  m.status = j.value("status", std::string());
  m.selected_mus = j.value("selected_mus", std::vector<double>());
  m.anchor_betas = j.value("anchor_betas", std::vector<double>());
  m.mu_bar = j.at("mu_bar").get<double>();
  m.rho_t = j.at("constants").at("rho_t").get<double>();
  m.c_pass = j.at("constants").at("c_pass").get<double>();
  m.c_hat = j.at("constants").at("c_hat").get<double>();

  m.eim_nu = load_eim(dir + "/eim_nu.bin");
  m.eim_tau = load_eim(dir + "/eim_tau.bin");

  const Container a = Container::load(dir + "/arrays.bin");
  m.zeta = a.matrix("zeta");
  m.xi = a.matrix("xi");
  m.kr = a.matrix("kr");
  m.kd = a.vector("kd");
  m.dr = a.matrix("dr");
  m.dd = a.vector("dd");
  m.cd1 = a.matrix("cd1");
  m.cd2 = a.matrix("cd2");
  m.cdd = a.vector("cdd");
  m.fr = a.vector("fr");
  m.sd = a.matrix("sd");
  const int dy = j.at("dims").at("dim_y").get<int>();
  const int m1 = j.at("dims").at("m1").get<int>();
  const int m2 = j.at("dims").at("m2").get<int>();
  require(m.dim_y() == dy && m.m1() == m1 && m.m2() == m2,
          "load_model: manifest dims disagree with stored arrays");
  require(m.zeta.rows() == b.system->n_u() && m.xi.rows() == b.system->n_p(),
          "load_model: basis sized for a different system");
  m.cr.resize(dy);
  for (int i = 0; i < dy; ++i) m.cr[i] = a.matrix(indexed("cr", i));
  m.ss.resize(m1);
  for (int s = 0; s < m1; ++s) m.ss[s] = a.matrix(indexed("ss", s));
  m.ps.resize(m2);
  for (int s = 0; s < m2; ++s) m.ps[s] = a.matrix(indexed("ps", s));
  m.magic_s_basis = a.matrix("magic_s_basis");
  m.magic_s_lift = a.vector("magic_s_lift");
  m.magic_s_fac = a.vector("magic_s_fac");
  m.magic_p_gbasis = a.matrix("magic_p_gbasis");
  m.magic_p_glift = a.vector("magic_p_glift");
  m.magic_p_vbasis = a.matrix("magic_p_vbasis");
  m.magic_p_vlift = a.vector("magic_p_vlift");
  m.magic_p_h = a.vector("magic_p_h");
  if (a.has("g_v")) m.g_v = a.matrix("g_v");
  if (a.has("g_p")) m.g_p = a.matrix("g_p");
  return b;
}

}  // namespace vmsrb
