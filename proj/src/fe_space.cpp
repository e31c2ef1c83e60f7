#include "vmsrb/fe_space.hpp"

#include <algorithm>
#include <map>

namespace vmsrb {

void RefShape::eval(int degree, double x, double y, double* phi) {
  const double l1 = 1.0 - x - y, l2 = x, l3 = y;
  if (degree == 1) {
    phi[0] = l1;
    phi[1] = l2;
    phi[2] = l3;
    return;
  }
  phi[0] = l1 * (2.0 * l1 - 1.0);
  phi[1] = l2 * (2.0 * l2 - 1.0);
  phi[2] = l3 * (2.0 * l3 - 1.0);
  phi[3] = 4.0 * l1 * l2;
  phi[4] = 4.0 * l2 * l3;
  phi[5] = 4.0 * l3 * l1;
}

void RefShape::eval_grad(int degree, double x, double y, double (*grad)[2]) {
  const double l1 = 1.0 - x - y;
  if (degree == 1) {
    grad[0][0] = -1.0;
    grad[0][1] = -1.0;
    grad[1][0] = 1.0;
    grad[1][1] = 0.0;
    grad[2][0] = 0.0;
    grad[2][1] = 1.0;
    return;
  }
  // d l1 = (-1,-1), d l2 = (1,0), d l3 = (0,1)
  grad[0][0] = -(4.0 * l1 - 1.0);
  grad[0][1] = -(4.0 * l1 - 1.0);
  grad[1][0] = 4.0 * x - 1.0;
  grad[1][1] = 0.0;
  grad[2][0] = 0.0;
  grad[2][1] = 4.0 * y - 1.0;
  grad[3][0] = 4.0 * (l1 - x);
  grad[3][1] = -4.0 * x;
  grad[4][0] = 4.0 * y;
  grad[4][1] = 4.0 * x;
  grad[5][0] = -4.0 * y;
  grad[5][1] = 4.0 * (l1 - y);
}

Eigen::Matrix<double, Eigen::Dynamic, 2> RefShape::ref_nodes(int degree) {
  Eigen::Matrix<double, Eigen::Dynamic, 2> nodes(nloc(degree), 2);
  nodes.row(0) << 0.0, 0.0;
  nodes.row(1) << 1.0, 0.0;
  nodes.row(2) << 0.0, 1.0;
  if (degree == 2) {
    nodes.row(3) << 0.5, 0.0;
    nodes.row(4) << 0.5, 0.5;
    nodes.row(5) << 0.0, 0.5;
  }
  return nodes;
}

DofHandler::DofHandler(const Mesh& mesh, int degree, const QuadratureRule& rule)
    : mesh_(&mesh), degree_(degree), rule_(rule) {
  require(degree == 1 || degree == 2, "DofHandler: only degrees 1 and 2 are supported");
  const int nt = mesh.n_triangles();
  const int nv = mesh.n_vertices();

  // undirected edges, lexicographic (min,max) order
  std::map<std::array<int, 2>, int> edge_index;
  for (int k = 0; k < nt; ++k)
    for (int e = 0; e < 3; ++e) {
      int a = mesh.triangles(k, e), b = mesh.triangles(k, (e + 1) % 3);
      if (a > b) std::swap(a, b);
      edge_index.emplace(std::array<int, 2>{a, b}, 0);
    }
  edges_.reserve(edge_index.size());
  int idx = 0;
  for (auto& [edge, i] : edge_index) {
    i = idx++;
    edges_.push_back(edge);
  }

  n_scalar_ = (degree == 1) ? nv : nv + static_cast<int>(edges_.size());
  elem_dofs_.resize(nt, nloc());
  for (int k = 0; k < nt; ++k) {
    for (int e = 0; e < 3; ++e) elem_dofs_(k, e) = mesh.triangles(k, e);
    if (degree == 2)
      for (int e = 0; e < 3; ++e) {
        int a = mesh.triangles(k, e), b = mesh.triangles(k, (e + 1) % 3);
        if (a > b) std::swap(a, b);
        elem_dofs_(k, 3 + e) = nv + edge_index.at({a, b});
      }
  }

  dof_coords_.resize(n_scalar_, 2);
  dof_coords_.topRows(nv) = mesh.vertices;
  if (degree == 2)
    for (std::size_t e = 0; e < edges_.size(); ++e)
      dof_coords_.row(nv + static_cast<int>(e)) =
          0.5 * (mesh.vertices.row(edges_[e][0]) + mesh.vertices.row(edges_[e][1]));

  detJ_.resize(nt);
  invJT_.resize(nt);
  for (int k = 0; k < nt; ++k) {
    const Vector2d a = mesh.vertices.row(mesh.triangles(k, 0));
    const Vector2d b = mesh.vertices.row(mesh.triangles(k, 1));
    const Vector2d c = mesh.vertices.row(mesh.triangles(k, 2));
    Eigen::Matrix2d J;
    J.col(0) = b - a;
    J.col(1) = c - a;
    detJ_[k] = J.determinant();
    check_numeric(detJ_[k] > 0.0, "DofHandler: non-positive Jacobian");
    invJT_[k] = J.inverse().transpose();
  }

  phi_.resize(nq(), nloc());
  dphi_.resize(nq(), 2 * nloc());
  for (int q = 0; q < nq(); ++q) {
    double vals[6];
    double grads[6][2];
    RefShape::eval(degree_, rule_.points(q, 0), rule_.points(q, 1), vals);
    RefShape::eval_grad(degree_, rule_.points(q, 0), rule_.points(q, 1), grads);
    for (int i = 0; i < nloc(); ++i) {
      phi_(q, i) = vals[i];
      dphi_(q, 2 * i) = grads[i][0];
      dphi_(q, 2 * i + 1) = grads[i][1];
    }
  }
}

std::vector<int> DofHandler::boundary_scalar_dofs(int tag) const {
  std::vector<int> dofs;
  const int nv = mesh_->n_vertices();
  std::map<std::array<int, 2>, int> edge_index;
  if (degree_ == 2)
    for (std::size_t e = 0; e < edges_.size(); ++e) edge_index[edges_[e]] = static_cast<int>(e);
  for (int e = 0; e < mesh_->n_boundary_edges(); ++e) {
    if (mesh_->boundary_edges(e, 2) != tag) continue;
    int a = mesh_->boundary_edges(e, 0), b = mesh_->boundary_edges(e, 1);
    dofs.push_back(a);
    dofs.push_back(b);
    if (degree_ == 2) {
      if (a > b) std::swap(a, b);
      dofs.push_back(nv + edge_index.at({a, b}));
    }
  }
  std::sort(dofs.begin(), dofs.end());
  dofs.erase(std::unique(dofs.begin(), dofs.end()), dofs.end());
  return dofs;
}

std::vector<int> DofHandler::all_boundary_scalar_dofs() const {
  std::vector<int> dofs;
  const int nv = mesh_->n_vertices();
  std::map<std::array<int, 2>, int> edge_index;
  if (degree_ == 2)
    for (std::size_t e = 0; e < edges_.size(); ++e) edge_index[edges_[e]] = static_cast<int>(e);
  for (int e = 0; e < mesh_->n_boundary_edges(); ++e) {
    int a = mesh_->boundary_edges(e, 0), b = mesh_->boundary_edges(e, 1);
    dofs.push_back(a);
    dofs.push_back(b);
    if (degree_ == 2) {
      if (a > b) std::swap(a, b);
      dofs.push_back(nv + edge_index.at({a, b}));
    }
  }
  std::sort(dofs.begin(), dofs.end());
  dofs.erase(std::unique(dofs.begin(), dofs.end()), dofs.end());
  return dofs;
}

Vector2d DofHandler::qpoint(int k, int q) const {
  const Vector2d a = mesh_->vertices.row(mesh_->triangles(k, 0));
  const Vector2d b = mesh_->vertices.row(mesh_->triangles(k, 1));
  const Vector2d c = mesh_->vertices.row(mesh_->triangles(k, 2));
  const double x = rule_.points(q, 0), y = rule_.points(q, 1);
  return a + x * (b - a) + y * (c - a);
}

double DofHandler::eval_scalar(const VectorXd& coefs, int k, double x, double y) const {
  double vals[6];
  RefShape::eval(degree_, x, y, vals);
  double s = 0.0;
  for (int i = 0; i < nloc(); ++i) s += vals[i] * coefs[elem_dofs_(k, i)];
  return s;
}

Vector2d DofHandler::eval_scalar_grad(const VectorXd& coefs, int k, double x, double y) const {
  double grads[6][2];
  RefShape::eval_grad(degree_, x, y, grads);
  Vector2d g = Vector2d::Zero();
  for (int i = 0; i < nloc(); ++i)
    g += coefs[elem_dofs_(k, i)] * (invJT_[k] * Vector2d(grads[i][0], grads[i][1]));
  return g;
}

std::array<double, 3> locate_structured(const Mesh& mesh, int n_per_side, double x, double y) {
  const int n = n_per_side;
  require(x >= -1e-12 && x <= 1.0 + 1e-12 && y >= -1e-12 && y <= 1.0 + 1e-12,
          "locate_structured: point outside unit square");
  int i = std::min(n - 1, std::max(0, static_cast<int>(std::floor(x * n))));
  int j = std::min(n - 1, std::max(0, static_cast<int>(std::floor(y * n))));
  const double fx = x * n - i, fy = y * n - j;
  // square (i,j) holds triangles 2*(j*n+i) = (a,b,c) lower and +1 = (a,c,d)
  // upper; the shared diagonal is fy = fx.
  int k;
  double xi, eta;
  if (fy <= fx) {
    k = 2 * (j * n + i);
    // vertices a=(i,j), b=(i+1,j), c=(i+1,j+1): x = a + xi*(b-a) + eta*(c-a)
    xi = fx - fy;
    eta = fy;
  } else {
    k = 2 * (j * n + i) + 1;
    // vertices a=(i,j), c=(i+1,j+1), d=(i,j+1)
    xi = fx;
    eta = fy - fx;
  }
  (void)mesh;
  return {static_cast<double>(k), xi, eta};
}

ScaleSeparation::ScaleSeparation(const DofHandler& velocity) : vel_(&velocity) {
  require(velocity.degree() == 2, "ScaleSeparation: velocity space must be degree 2");
  const int ns = velocity.n_scalar();
  const int nv = velocity.mesh().n_vertices();
  std::vector<Triplet> tp, ts;
  for (int v = 0; v < nv; ++v) tp.emplace_back(v, v, 1.0);
  const auto& edges = velocity.edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const int m = nv + static_cast<int>(e);
    tp.emplace_back(m, edges[e][0], 0.5);
    tp.emplace_back(m, edges[e][1], 0.5);
    ts.emplace_back(m, m, 1.0);
    ts.emplace_back(m, edges[e][0], -0.5);
    ts.emplace_back(m, edges[e][1], -0.5);
  }
  pi_.resize(ns, ns);
  pi_.setFromTriplets(tp.begin(), tp.end());
  pi_star_.resize(ns, ns);
  pi_star_.setFromTriplets(ts.begin(), ts.end());
}

VectorXd ScaleSeparation::apply_pi(const VectorXd& u) const {
  const int ns = vel_->n_scalar();
  require(u.size() == 2 * ns, "apply_pi: dimension mismatch");
  VectorXd out(2 * ns);
  out.head(ns) = pi_ * u.head(ns);
  out.tail(ns) = pi_ * u.tail(ns);
  return out;
}

VectorXd ScaleSeparation::apply_pi_star(const VectorXd& u) const {
  const int ns = vel_->n_scalar();
  require(u.size() == 2 * ns, "apply_pi_star: dimension mismatch");
  VectorXd out(2 * ns);
  out.head(ns) = pi_star_ * u.head(ns);
  out.tail(ns) = pi_star_ * u.tail(ns);
  return out;
}

FluctuationOperator::FluctuationOperator(const DofHandler& velocity, const DofHandler& pressure)
    : vel_(&velocity), pres_(&pressure) {
  const int nt = velocity.mesh().n_triangles();
  const int nlv = velocity.nloc();
  const int nlp = pressure.nloc();
  const int nsv = velocity.n_scalar();
  const int np = pressure.n_scalar();
  const int nq = velocity.nq();

  // multiplicity of each velocity-space node over elements
  VectorXd count = VectorXd::Zero(nsv);
  for (int k = 0; k < nt; ++k)
    for (int i = 0; i < nlv; ++i) count[velocity.elem_dofs()(k, i)] += 1.0;

  const auto nodes = RefShape::ref_nodes(velocity.degree());

  // O: pressure coefs -> Oswald coefficients of grad p (rows c*nsv + m)
  std::vector<Triplet> to;
  double pgrads[6][2];
  for (int k = 0; k < nt; ++k) {
    for (int i = 0; i < nlv; ++i) {
      const int m = velocity.elem_dofs()(k, i);
      RefShape::eval_grad(pressure.degree(), nodes(i, 0), nodes(i, 1), pgrads);
      for (int j = 0; j < nlp; ++j) {
        const Vector2d g =
            pressure.invJT(k) * Vector2d(pgrads[j][0], pgrads[j][1]) / count[m];
        const int col = pressure.elem_dofs()(k, j);
        to.emplace_back(0 * nsv + m, col, g[0]);
        to.emplace_back(1 * nsv + m, col, g[1]);
      }
    }
  }
  SpMat O(2 * nsv, np);
  O.setFromTriplets(to.begin(), to.end());

  // V: continuous component-blocked coefs -> values at quadrature points
  std::vector<Triplet> tv;
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nq; ++q)
      for (int i = 0; i < nlv; ++i) {
        const int m = velocity.elem_dofs()(k, i);
        const double v = velocity.phi(q, i);
        const int row = 2 * velocity.qindex(k, q);
        tv.emplace_back(row + 0, 0 * nsv + m, v);
        tv.emplace_back(row + 1, 1 * nsv + m, v);
      }
  SpMat V(2 * velocity.nq_total(), 2 * nsv);
  V.setFromTriplets(tv.begin(), tv.end());

  // Gp: pressure coefs -> grad p at quadrature points
  std::vector<Triplet> tg;
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nq; ++q)
      for (int j = 0; j < nlp; ++j) {
        const Vector2d g = pressure.grad_phys(k, q, j);
        const int row = 2 * velocity.qindex(k, q);
        const int col = pressure.elem_dofs()(k, j);
        tg.emplace_back(row + 0, col, g[0]);
        tg.emplace_back(row + 1, col, g[1]);
      }
  SpMat Gp(2 * velocity.nq_total(), np);
  Gp.setFromTriplets(tg.begin(), tg.end());

  E_ = Gp - SpMat(V * O);
  E_.prune(0.0);
  E_.makeCompressed();
}

FluctuationOperator::NodalField FluctuationOperator::gradient_nodal(const VectorXd& p_coefs) const {
  const int nt = vel_->mesh().n_triangles();
  const int nlv = vel_->nloc();
  const auto nodes = RefShape::ref_nodes(vel_->degree());
  NodalField out(nt * nlv, 2);
  for (int k = 0; k < nt; ++k)
    for (int i = 0; i < nlv; ++i)
      out.row(k * nlv + i) = pres_->eval_scalar_grad(p_coefs, k, nodes(i, 0), nodes(i, 1));
  return out;
}

VectorXd FluctuationOperator::oswald_coefs(const NodalField& nodal) const {
  const int nt = vel_->mesh().n_triangles();
  const int nlv = vel_->nloc();
  const int nsv = vel_->n_scalar();
  require(nodal.rows() == nt * nlv, "oswald_coefs: sample count mismatch");
  VectorXd out = VectorXd::Zero(2 * nsv);
  VectorXd count = VectorXd::Zero(nsv);
  for (int k = 0; k < nt; ++k)
    for (int i = 0; i < nlv; ++i) {
      const int m = vel_->elem_dofs()(k, i);
      count[m] += 1.0;
      out[m] += nodal(k * nlv + i, 0);
      out[nsv + m] += nodal(k * nlv + i, 1);
    }
  for (int m = 0; m < nsv; ++m) {
    out[m] /= count[m];
    out[nsv + m] /= count[m];
  }
  return out;
}

FluctuationOperator::NodalField FluctuationOperator::sigma_star_nodal(const NodalField& nodal) const {
  const int nt = vel_->mesh().n_triangles();
  const int nlv = vel_->nloc();
  const int nsv = vel_->n_scalar();
  const VectorXd c = oswald_coefs(nodal);
  NodalField out = nodal;
  for (int k = 0; k < nt; ++k)
    for (int i = 0; i < nlv; ++i) {
      const int m = vel_->elem_dofs()(k, i);
      out(k * nlv + i, 0) -= c[m];
      out(k * nlv + i, 1) -= c[nsv + m];
    }
  return out;
}

FluctuationOperator::NodalField FluctuationOperator::eval_qp(const NodalField& nodal) const {
  const int nt = vel_->mesh().n_triangles();
  const int nlv = vel_->nloc();
  const int nq = vel_->nq();
  NodalField out(vel_->nq_total(), 2);
  for (int k = 0; k < nt; ++k)
    for (int q = 0; q < nq; ++q) {
      Vector2d v = Vector2d::Zero();
      for (int i = 0; i < nlv; ++i) v += vel_->phi(q, i) * nodal.row(k * nlv + i).transpose();
      out.row(vel_->qindex(k, q)) = v;
    }
  return out;
}

}  // namespace vmsrb
