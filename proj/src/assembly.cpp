#include "vmsrb/assembly.hpp"

#include <cmath>

namespace vmsrb {

namespace {

// Local coefficient map of Pi_h* on one P2 element: vertex rows vanish,
// midpoint m(a,b) keeps u_m - (u_a + u_b)/2.
const Eigen::Matrix<double, 6, 6>& pi_star_local() {
  static const Eigen::Matrix<double, 6, 6> p = [] {
    Eigen::Matrix<double, 6, 6> m = Eigen::Matrix<double, 6, 6>::Zero();
    m(3, 0) = -0.5; m(3, 1) = -0.5; m(3, 3) = 1.0;
    m(4, 1) = -0.5; m(4, 2) = -0.5; m(4, 4) = 1.0;
    m(5, 2) = -0.5; m(5, 0) = -0.5; m(5, 5) = 1.0;
    return m;
  }();
  return p;
}

// Element-parallel assembly with element-index-ordered accumulation:
// local triplets are computed concurrently but merged serially in element
// order, so the result is bitwise reproducible for any worker count.
template <class Kernel>
SpMat assemble_elements(int rows, int cols, int nt, int per_elem, Exec exec, Kernel&& kernel) {
  std::vector<std::vector<Triplet>> local(static_cast<size_t>(nt));
  parallel_for(nt, exec, [&](std::ptrdiff_t k) {
    local[k].reserve(static_cast<size_t>(per_elem));
    kernel(static_cast<int>(k), local[k]);
  });
  std::vector<Triplet> all;
  all.reserve(static_cast<size_t>(nt) * per_elem);
  for (const auto& t : local) all.insert(all.end(), t.begin(), t.end());
  SpMat m(rows, cols);
  m.setFromTriplets(all.begin(), all.end());
  return m;
}

double frob4(const double* g) {
  return std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]);
}

}  // namespace

void ModelCoefficients::validate() const {
  require(c_s >= 0, "ModelCoefficients: c_s must be nonnegative");
  require(c1 > 0 && c2 > 0, "ModelCoefficients: c1, c2 must be positive");
  require(mu_min > 0, "ModelCoefficients: mu_min must be positive");
  require(mu_min < mu_max, "ModelCoefficients: mu_min < mu_max required");
}

VectorXd eddy_viscosity(const ModelCoefficients& coeffs, const DofHandler& velocity,
                        const VectorXd& u_small) {
  const Mesh& mesh = velocity.mesh();
  const int ns = velocity.n_scalar();
  require(u_small.size() == 2 * ns, "eddy_viscosity: velocity size mismatch");
  const int nl = velocity.nloc();
  const int nq = velocity.nq();
  VectorXd nu(velocity.nq_total());
  for (int k = 0; k < mesh.n_triangles(); ++k) {
    const double scale = coeffs.c_s * coeffs.c_s * mesh.h_K[k] * mesh.h_K[k];
    for (int q = 0; q < nq; ++q) {
      double g[4] = {0, 0, 0, 0};
      for (int i = 0; i < nl; ++i) {
        const int d = velocity.elem_dofs()(k, i);
        const Vector2d gp = velocity.grad_phys(k, q, i);
        g[0] += u_small[d] * gp[0];
        g[1] += u_small[d] * gp[1];
        g[2] += u_small[ns + d] * gp[0];
        g[3] += u_small[ns + d] * gp[1];
      }
      nu[velocity.qindex(k, q)] = scale * frob4(g);
    }
  }
  return nu;
}

double codina_tau(const ModelCoefficients& coeffs, double mu, double h_K,
                  double nu_bar_K, double u_K) {
  require(coeffs.in_domain(mu), "codina_tau: mu outside parameter domain");
  require(h_K > 0, "codina_tau: h_K must be positive");
  require(nu_bar_K >= 0 && u_K >= 0, "codina_tau: negative local scales");
  return 1.0 / (coeffs.c1 * (1.0 / mu + nu_bar_K) / (h_K * h_K) + coeffs.c2 * u_K / h_K);
}

SpMat row_selection(const std::vector<int>& rows, int n) {
  SpMat r(static_cast<int>(rows.size()), n);
  std::vector<Triplet> t;
  t.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < n, "row_selection: index out of range");
    t.emplace_back(static_cast<int>(i), rows[i], 1.0);
  }
  r.setFromTriplets(t.begin(), t.end());
  return r;
}

FeSystem::FeSystem(const Mesh& mesh, int pressure_degree, const ModelCoefficients& coeffs,
                   int quad_degree, Exec exec)
    : mesh_(&mesh),
      coeffs_(coeffs),
      exec_(exec),
      vel_(mesh, 2, triangle_rule(quad_degree)),
      pres_(mesh, pressure_degree, triangle_rule(quad_degree)),
      sep_(vel_),
      fluct_(vel_, pres_) {
  require(pressure_degree == 1 || pressure_degree == 2,
          "FeSystem: pressure degree must be 1 or 2");
  coeffs_.validate();
  const int nq = vel_.nq();
  qw_.resize(vel_.nq_total());
  qelem_.resize(vel_.nq_total());
  for (int k = 0; k < mesh.n_triangles(); ++k)
    for (int q = 0; q < nq; ++q) {
      qw_[vel_.qindex(k, q)] = vel_.qweight(k, q);
      qelem_[vel_.qindex(k, q)] = k;
    }
  build_constant_operators();
}

void FeSystem::build_constant_operators() {
  const int nt = mesh_->n_triangles();
  const int ns = n_us();
  const int nlv = vel_.nloc();
  const int nlp = pres_.nloc();
  const int nq = vel_.nq();

  // scalar velocity stiffness and mass
  std::vector<Triplet> tk, tm;
  tk.reserve(static_cast<size_t>(nt) * nlv * nlv);
  tm.reserve(static_cast<size_t>(nt) * nlv * nlv);
  for (int k = 0; k < nt; ++k) {
    MatrixXd lk = MatrixXd::Zero(nlv, nlv), lm = MatrixXd::Zero(nlv, nlv);
    for (int q = 0; q < nq; ++q) {
      const double w = vel_.qweight(k, q);
      for (int i = 0; i < nlv; ++i) {
        const Vector2d gi = vel_.grad_phys(k, q, i);
        for (int j = 0; j < nlv; ++j) {
          lk(i, j) += w * gi.dot(vel_.grad_phys(k, q, j));
          lm(i, j) += w * vel_.phi(q, i) * vel_.phi(q, j);
        }
      }
    }
    for (int i = 0; i < nlv; ++i)
      for (int j = 0; j < nlv; ++j) {
        tk.emplace_back(vel_.elem_dofs()(k, i), vel_.elem_dofs()(k, j), lk(i, j));
        tm.emplace_back(vel_.elem_dofs()(k, i), vel_.elem_dofs()(k, j), lm(i, j));
      }
  }
  Ks_.resize(ns, ns);
  Ks_.setFromTriplets(tk.begin(), tk.end());
  Ms_.resize(ns, ns);
  Ms_.setFromTriplets(tm.begin(), tm.end());

  auto block_diag2 = [ns](const SpMat& a) {
    std::vector<Triplet> t;
    t.reserve(2 * a.nonZeros());
    for (int c = 0; c < a.outerSize(); ++c)
      for (SpMat::InnerIterator it(a, c); it; ++it) {
        t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        t.emplace_back(static_cast<int>(it.row()) + ns, static_cast<int>(it.col()) + ns,
                       it.value());
      }
    SpMat m(2 * ns, 2 * ns);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  };
  K_ = block_diag2(Ks_);
  Mv_ = block_diag2(Ms_);

  // pressure mass and stiffness
  std::vector<Triplet> tmp, tkp;
  tmp.reserve(static_cast<size_t>(nt) * nlp * nlp);
  tkp.reserve(static_cast<size_t>(nt) * nlp * nlp);
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nq; ++q) {
      const double w = pres_.qweight(k, q);
      for (int i = 0; i < nlp; ++i)
        for (int j = 0; j < nlp; ++j) {
          tmp.emplace_back(pres_.elem_dofs()(k, i), pres_.elem_dofs()(k, j),
                           w * pres_.phi(q, i) * pres_.phi(q, j));
          tkp.emplace_back(pres_.elem_dofs()(k, i), pres_.elem_dofs()(k, j),
                           w * pres_.grad_phys(k, q, i).dot(pres_.grad_phys(k, q, j)));
        }
    }
  Mp_.resize(n_p(), n_p());
  Mp_.setFromTriplets(tmp.begin(), tmp.end());
  Kp_.resize(n_p(), n_p());
  Kp_.setFromTriplets(tkp.begin(), tkp.end());

  // divergence coupling: D(i, c*ns+j) = int psi_i d_c phi_j
  std::vector<Triplet> td;
  td.reserve(static_cast<size_t>(nt) * nlp * nlv * 2);
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nq; ++q) {
      const double w = vel_.qweight(k, q);
      for (int j = 0; j < nlv; ++j) {
        const Vector2d gj = vel_.grad_phys(k, q, j);
        for (int i = 0; i < nlp; ++i) {
          const double pi = pres_.phi(q, i);
          td.emplace_back(pres_.elem_dofs()(k, i), vel_.elem_dofs()(k, j), w * pi * gj[0]);
          td.emplace_back(pres_.elem_dofs()(k, i), ns + vel_.elem_dofs()(k, j), w * pi * gj[1]);
        }
      }
    }
  D_.resize(n_p(), n_u());
  D_.setFromTriplets(td.begin(), td.end());

  // gradient and value samplers at quadrature points
  std::vector<Triplet> tg, tv;
  tg.reserve(static_cast<size_t>(vel_.nq_total()) * nlv * 4);
  tv.reserve(static_cast<size_t>(vel_.nq_total()) * nlv * 2);
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nq; ++q) {
      const int g = vel_.qindex(k, q);
      for (int i = 0; i < nlv; ++i) {
        const int d = vel_.elem_dofs()(k, i);
        const Vector2d gi = vel_.grad_phys(k, q, i);
        for (int c = 0; c < 2; ++c) {
          tg.emplace_back(4 * g + 2 * c + 0, c * ns + d, gi[0]);
          tg.emplace_back(4 * g + 2 * c + 1, c * ns + d, gi[1]);
          tv.emplace_back(2 * g + c, c * ns + d, vel_.phi(q, i));
        }
      }
    }
  Gfull_.resize(4 * vel_.nq_total(), n_u());
  Gfull_.setFromTriplets(tg.begin(), tg.end());
  Vq_.resize(2 * vel_.nq_total(), n_u());
  Vq_.setFromTriplets(tv.begin(), tv.end());

  // small-scale sampler: compose with Pi_h* per component
  const SpMat& ps = sep_.pi_star_scalar();
  std::vector<Triplet> tps;
  tps.reserve(2 * ps.nonZeros());
  for (int c = 0; c < ps.outerSize(); ++c)
    for (SpMat::InnerIterator it(ps, c); it; ++it) {
      tps.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      tps.emplace_back(static_cast<int>(it.row()) + ns, static_cast<int>(it.col()) + ns,
                       it.value());
    }
  SpMat pvec(n_u(), n_u());
  pvec.setFromTriplets(tps.begin(), tps.end());
  Gs_ = Gfull_ * pvec;
  Gs_.makeCompressed();
}

std::vector<int> FeSystem::free_velocity_scalar_dofs() const {
  std::vector<int> boundary = vel_.all_boundary_scalar_dofs();
  std::vector<int> free;
  free.reserve(n_us() - boundary.size());
  size_t b = 0;
  for (int d = 0; d < n_us(); ++d) {
    if (b < boundary.size() && boundary[b] == d) {
      ++b;
    } else {
      free.push_back(d);
    }
  }
  return free;
}

MatrixXd FeSystem::full_grad_table(int k) const {
  const int nq = vel_.nq();
  const int nl = vel_.nloc();
  MatrixXd gp(2 * nq, nl);
  for (int q = 0; q < nq; ++q)
    for (int i = 0; i < nl; ++i) {
      const Vector2d g = vel_.grad_phys(k, q, i);
      gp(2 * q + 0, i) = g[0];
      gp(2 * q + 1, i) = g[1];
    }
  return gp;
}

MatrixXd FeSystem::small_grad_table(int k) const {
  return full_grad_table(k) * pi_star_local();
}

VectorXd FeSystem::nu_field(const VectorXd& u) const {
  require(u.size() == n_u(), "nu_field: velocity size mismatch");
  const VectorXd g =
      (coeffs_.variant == VmsVariant::SmallSmall ? Gs_ : Gfull_) * u;
  const double cs2 = coeffs_.c_s * coeffs_.c_s;
  VectorXd nu(vel_.nq_total());
  for (int gq = 0; gq < vel_.nq_total(); ++gq) {
    const double h = mesh_->h_K[qelem_[gq]];
    nu[gq] = cs2 * h * h * frob4(g.data() + 4 * gq);
  }
  return nu;
}

VectorXd FeSystem::tau_field(const VectorXd& u, double mu) const {
  require(u.size() == n_u(), "tau_field: velocity size mismatch");
  const VectorXd nu = nu_field(u);
  const int nt = mesh_->n_triangles();
  const int nq = vel_.nq();
  const int ns = n_us();
  VectorXd tau(nt);
  for (int k = 0; k < nt; ++k) {
    double nu_bar = 0;
    for (int q = 0; q < nq; ++q) nu_bar += nu[vel_.qindex(k, q)];
    nu_bar /= nq;
    double u_k = 0;
    for (int i = 0; i < vel_.nloc(); ++i) {
      const int d = vel_.elem_dofs()(k, i);
      u_k = std::max(u_k, std::max(std::abs(u[d]), std::abs(u[ns + d])));
    }
    tau[k] = codina_tau(coeffs_, mu, mesh_->h_K[k], nu_bar, u_k);
  }
  return tau;
}

SpMat FeSystem::conv_matrix(const VectorXd& z) const {
  require(z.size() == n_u(), "conv_matrix: velocity size mismatch");
  const int ns = n_us();
  const int nl = vel_.nloc();
  const int nq = vel_.nq();
  return assemble_elements(
      n_u(), n_u(), mesh_->n_triangles(), 2 * nl * nl, exec_,
      [&](int k, std::vector<Triplet>& out) {
        MatrixXd n = MatrixXd::Zero(nl, nl);
        for (int q = 0; q < nq; ++q) {
          const double w = vel_.qweight(k, q);
          double zx = 0, zy = 0;
          for (int i = 0; i < nl; ++i) {
            const int d = vel_.elem_dofs()(k, i);
            zx += z[d] * vel_.phi(q, i);
            zy += z[ns + d] * vel_.phi(q, i);
          }
          for (int j = 0; j < nl; ++j) {
            const Vector2d gj = vel_.grad_phys(k, q, j);
            const double adv = zx * gj[0] + zy * gj[1];
            for (int i = 0; i < nl; ++i) n(i, j) += w * vel_.phi(q, i) * adv;
          }
        }
        for (int i = 0; i < nl; ++i)
          for (int j = 0; j < nl; ++j) {
            const double v = 0.5 * (n(i, j) - n(j, i));
            const int di = vel_.elem_dofs()(k, i), dj = vel_.elem_dofs()(k, j);
            out.emplace_back(di, dj, v);
            out.emplace_back(ns + di, ns + dj, v);
          }
      });
}

SpMat FeSystem::conv_matrix_dz(const VectorXd& u) const {
  require(u.size() == n_u(), "conv_matrix_dz: velocity size mismatch");
  const int ns = n_us();
  const int nl = vel_.nloc();
  const int nq = vel_.nq();
  return assemble_elements(
      n_u(), n_u(), mesh_->n_triangles(), 4 * nl * nl, exec_,
      [&](int k, std::vector<Triplet>& out) {
        // m[(a,i),(b,j)] = 1/2 int phi_i phi_j d_b u_a - 1/2 int phi_j d_b phi_i u_a
        MatrixXd m = MatrixXd::Zero(2 * nl, 2 * nl);
        for (int q = 0; q < nq; ++q) {
          const double w = vel_.qweight(k, q);
          double ua[2] = {0, 0};
          double du[2][2] = {{0, 0}, {0, 0}};
          for (int i = 0; i < nl; ++i) {
            const int d = vel_.elem_dofs()(k, i);
            const Vector2d gi = vel_.grad_phys(k, q, i);
            for (int a = 0; a < 2; ++a) {
              ua[a] += u[a * ns + d] * vel_.phi(q, i);
              du[a][0] += u[a * ns + d] * gi[0];
              du[a][1] += u[a * ns + d] * gi[1];
            }
          }
          for (int i = 0; i < nl; ++i) {
            const Vector2d gi = vel_.grad_phys(k, q, i);
            for (int j = 0; j < nl; ++j) {
              const double pij = vel_.phi(q, i) * vel_.phi(q, j);
              for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                  m(a * nl + i, b * nl + j) +=
                      w * 0.5 * (pij * du[a][b] - vel_.phi(q, j) * gi[b] * ua[a]);
            }
          }
        }
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int i = 0; i < nl; ++i)
              for (int j = 0; j < nl; ++j)
                out.emplace_back(a * ns + vel_.elem_dofs()(k, i),
                                 b * ns + vel_.elem_dofs()(k, j), m(a * nl + i, b * nl + j));
      });
}

SpMat FeSystem::smag_matrix(const VectorXd& nu_qp) const {
  require(nu_qp.size() == vel_.nq_total(), "smag_matrix: field size mismatch");
  const int ns = n_us();
  const int nl = vel_.nloc();
  const int nq = vel_.nq();
  return assemble_elements(
      n_u(), n_u(), mesh_->n_triangles(), 2 * nl * nl, exec_,
      [&](int k, std::vector<Triplet>& out) {
        const MatrixXd sg = small_grad_table(k);
        MatrixXd m = MatrixXd::Zero(nl, nl);
        for (int q = 0; q < nq; ++q) {
          const double c = nu_qp[vel_.qindex(k, q)] * vel_.qweight(k, q);
          if (c == 0) continue;
          // scale the factor into the vector so the rank-1 update is
          // exactly symmetric entry by entry; interpolated viscosities may
          // undershoot zero, so carry the sign outside the square root
          const double sc = std::sqrt(std::abs(c));
          for (int d = 0; d < 2; ++d) {
            const VectorXd sv = sc * sg.row(2 * q + d).transpose();
            if (c > 0)
              m += sv * sv.transpose();
            else
              m -= sv * sv.transpose();
          }
        }
        for (int i = 0; i < nl; ++i)
          for (int j = 0; j < nl; ++j) {
            const int di = vel_.elem_dofs()(k, i), dj = vel_.elem_dofs()(k, j);
            out.emplace_back(di, dj, m(i, j));
            out.emplace_back(ns + di, ns + dj, m(i, j));
          }
      });
}

SpMat FeSystem::weighted_stiffness(const VectorXd& w_qp) const {
  require(w_qp.size() == vel_.nq_total(), "weighted_stiffness: field size mismatch");
  const int ns = n_us();
  const int nl = vel_.nloc();
  const int nq = vel_.nq();
  return assemble_elements(
      n_u(), n_u(), mesh_->n_triangles(), 2 * nl * nl, exec_,
      [&](int k, std::vector<Triplet>& out) {
        const MatrixXd fg = full_grad_table(k);
        MatrixXd m = MatrixXd::Zero(nl, nl);
        for (int q = 0; q < nq; ++q) {
          const double c = w_qp[vel_.qindex(k, q)] * vel_.qweight(k, q);
          if (c == 0) continue;
          const double sc = std::sqrt(std::abs(c));
          for (int d = 0; d < 2; ++d) {
            const VectorXd sv = sc * fg.row(2 * q + d).transpose();
            if (c > 0)
              m += sv * sv.transpose();
            else
              m -= sv * sv.transpose();
          }
        }
        for (int i = 0; i < nl; ++i)
          for (int j = 0; j < nl; ++j) {
            const int di = vel_.elem_dofs()(k, i), dj = vel_.elem_dofs()(k, j);
            out.emplace_back(di, dj, m(i, j));
            out.emplace_back(ns + di, ns + dj, m(i, j));
          }
      });
}

SpMat FeSystem::smag_rank_matrix(const VectorXd& u) const {
  require(u.size() == n_u(), "smag_rank_matrix: velocity size mismatch");
  const bool small = coeffs_.variant == VmsVariant::SmallSmall;
  const int ns = n_us();
  const int nl = vel_.nloc();
  const int nq = vel_.nq();
  const double cs2 = coeffs_.c_s * coeffs_.c_s;
  return assemble_elements(
      n_u(), n_u(), mesh_->n_triangles(), 4 * nl * nl, exec_,
      [&](int k, std::vector<Triplet>& out) {
        const MatrixXd sg = small_grad_table(k);
        const MatrixXd fg = small ? sg : full_grad_table(k);
        const double h = mesh_->h_K[k];
        MatrixXd m = MatrixXd::Zero(2 * nl, 2 * nl);
        VectorXd rvec(2 * nl), cvec(2 * nl);
        for (int q = 0; q < nq; ++q) {
          double gs[4], gf[4];
          for (int c = 0; c < 2; ++c)
            for (int d = 0; d < 2; ++d) {
              double vs = 0, vf = 0;
              for (int i = 0; i < nl; ++i) {
                vs += sg(2 * q + d, i) * u[c * ns + vel_.elem_dofs()(k, i)];
                vf += fg(2 * q + d, i) * u[c * ns + vel_.elem_dofs()(k, i)];
              }
              gs[2 * c + d] = vs;
              gf[2 * c + d] = vf;
            }
          const double den = frob4(gf);
          if (den == 0) continue;  // nu_T derivative contributes nothing here
          const double coef = vel_.qweight(k, q) * cs2 * h * h / den;
          for (int c = 0; c < 2; ++c)
            for (int i = 0; i < nl; ++i) {
              rvec[c * nl + i] =
                  sg(2 * q + 0, i) * gs[2 * c + 0] + sg(2 * q + 1, i) * gs[2 * c + 1];
              cvec[c * nl + i] =
                  fg(2 * q + 0, i) * gf[2 * c + 0] + fg(2 * q + 1, i) * gf[2 * c + 1];
            }
          m += coef * (rvec * cvec.transpose());
        }
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int i = 0; i < nl; ++i)
              for (int j = 0; j < nl; ++j)
                out.emplace_back(a * ns + vel_.elem_dofs()(k, i),
                                 b * ns + vel_.elem_dofs()(k, j), m(a * nl + i, b * nl + j));
      });
}

SpMat FeSystem::lps_matrix(const VectorXd& tau_elem) const {
  require(tau_elem.size() == mesh_->n_triangles(), "lps_matrix: tau size mismatch");
  VectorXd d(2 * vel_.nq_total());
  for (int g = 0; g < vel_.nq_total(); ++g) {
    const double v = tau_elem[qelem_[g]] * qw_[g];
    d[2 * g] = v;
    d[2 * g + 1] = v;
  }
  const SpMat& e = fluct_.E();
  SpMat ed = d.asDiagonal() * e;
  SpMat s = SpMat(e.transpose()) * ed;
  s.makeCompressed();
  return s;
}

VectorXd FeSystem::load_vector(const std::function<Vector2d(double, double)>& f) const {
  const int ns = n_us();
  VectorXd load = VectorXd::Zero(n_u());
  for (int k = 0; k < mesh_->n_triangles(); ++k)
    for (int q = 0; q < vel_.nq(); ++q) {
      const Vector2d x = vel_.qpoint(k, q);
      const Vector2d fx = f(x[0], x[1]);
      const double w = vel_.qweight(k, q);
      for (int i = 0; i < vel_.nloc(); ++i) {
        const int d = vel_.elem_dofs()(k, i);
        load[d] += w * vel_.phi(q, i) * fx[0];
        load[ns + d] += w * vel_.phi(q, i) * fx[1];
      }
    }
  return load;
}

VectorXd FeSystem::residual(const VectorXd& u, const VectorXd& p, double mu,
                            const VectorXd& tau_elem, const VectorXd& load) const {
  require(u.size() == n_u() && p.size() == n_p(), "residual: state size mismatch");
  require(load.size() == n_u(), "residual: load size mismatch");
  VectorXd r(n_dofs());
  r.head(n_u()) = (1.0 / mu) * (K_ * u) + conv_matrix(u) * u +
                  smag_matrix(nu_field(u)) * u - D_.transpose() * p - load;
  r.tail(n_p()) = D_ * u + lps_matrix(tau_elem) * p;
  check_numeric(r.allFinite(), "residual: non-finite values in assembled residual");
  return r;
}

SpMat FeSystem::tangent(const VectorXd& u, double mu, const VectorXd& tau_elem) const {
  require(u.size() == n_u(), "tangent: state size mismatch");
  SpMat juu = SpMat((1.0 / mu) * K_) + conv_matrix(u) + conv_matrix_dz(u) +
              smag_matrix(nu_field(u)) + smag_rank_matrix(u);
  SpMat s = lps_matrix(tau_elem);
  const int nu = n_u();
  std::vector<Triplet> t;
  t.reserve(juu.nonZeros() + 2 * D_.nonZeros() + s.nonZeros());
  for (int c = 0; c < juu.outerSize(); ++c)
    for (SpMat::InnerIterator it(juu, c); it; ++it)
      t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
  for (int c = 0; c < D_.outerSize(); ++c)
    for (SpMat::InnerIterator it(D_, c); it; ++it) {
      t.emplace_back(nu + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      t.emplace_back(static_cast<int>(it.col()), nu + static_cast<int>(it.row()), -it.value());
    }
  for (int c = 0; c < s.outerSize(); ++c)
    for (SpMat::InnerIterator it(s, c); it; ++it)
      t.emplace_back(nu + static_cast<int>(it.row()), nu + static_cast<int>(it.col()),
                     it.value());
  SpMat j(n_dofs(), n_dofs());
  j.setFromTriplets(t.begin(), t.end());
  check_numeric(VectorXd(j.diagonal()).allFinite(), "tangent: non-finite entries");
  return j;
}

}  // namespace vmsrb
