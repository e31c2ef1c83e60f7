#pragma once

#include <array>
#include <vector>

#include "vmsrb/common.hpp"
#include "vmsrb/mesh.hpp"
#include "vmsrb/quadrature.hpp"

namespace vmsrb {

/// Lagrange shape functions on the reference triangle, degrees 1 and 2.
/// Local node order: vertices (v0,v1,v2), then edge midpoints
/// m(v0,v1), m(v1,v2), m(v2,v0) for degree 2.
struct RefShape {
  static int nloc(int degree) { return degree == 1 ? 3 : 6; }
  static void eval(int degree, double x, double y, double* phi);
  static void eval_grad(int degree, double x, double y, double (*grad)[2]);
  /// Reference coordinates of the local nodes, nloc x 2.
  static Eigen::Matrix<double, Eigen::Dynamic, 2> ref_nodes(int degree);
};

/// Scalar continuous Lagrange space V^(n) on a mesh with its quadrature
/// tables. Global dof numbering: vertices first (mesh order), then edge
/// midpoints ordered by the lexicographically sorted (min,max) vertex-pair
/// list. Immutable after construction.
class DofHandler {
 public:
  DofHandler(const Mesh& mesh, int degree, const QuadratureRule& rule);

  const Mesh& mesh() const { return *mesh_; }
  int degree() const { return degree_; }
  int nloc() const { return RefShape::nloc(degree_); }
  int n_scalar() const { return n_scalar_; }
  int n_edges() const { return static_cast<int>(edges_.size()); }
  const MatrixXi& elem_dofs() const { return elem_dofs_; }
  const Eigen::Matrix<double, Eigen::Dynamic, 2>& dof_coords() const { return dof_coords_; }
  /// Edge e as the (a,b) vertex pair with a < b; midpoint dof is
  /// n_vertices + e when degree == 2.
  const std::vector<std::array<int, 2>>& edges() const { return edges_; }

  /// Scalar dofs lying on boundary edges with the given tag (sorted).
  std::vector<int> boundary_scalar_dofs(int tag) const;
  std::vector<int> all_boundary_scalar_dofs() const;

  const QuadratureRule& rule() const { return rule_; }
  int nq() const { return rule_.size(); }
  int nq_total() const { return nq() * mesh_->n_triangles(); }
  int qindex(int k, int q) const { return k * nq() + q; }

  double detJ(int k) const { return detJ_[k]; }
  const Eigen::Matrix2d& invJT(int k) const { return invJT_[k]; }
  /// Reference shape value at quadrature point q.
  double phi(int q, int i) const { return phi_(q, i); }
  /// Physical gradient of local basis i at quadrature point q of element k.
  Vector2d grad_phys(int k, int q, int i) const {
    return invJT_[k] * Vector2d(dphi_(q, 2 * i), dphi_(q, 2 * i + 1));
  }
  Vector2d qpoint(int k, int q) const;
  /// Physical integration weight: rule weight * detJ; sums to area_K.
  double qweight(int k, int q) const { return rule_.weights[q] * detJ_[k]; }

  /// Evaluate a scalar coefficient field at reference coords (x,y) of
  /// element k.
  double eval_scalar(const VectorXd& coefs, int k, double x, double y) const;
  /// Gradient version.
  Vector2d eval_scalar_grad(const VectorXd& coefs, int k, double x, double y) const;

 private:
  const Mesh* mesh_;
  int degree_;
  int n_scalar_;
  QuadratureRule rule_;
  MatrixXi elem_dofs_;
  Eigen::Matrix<double, Eigen::Dynamic, 2> dof_coords_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<double> detJ_;
  std::vector<Eigen::Matrix2d> invJT_;
  MatrixXd phi_;   // nq x nloc
  MatrixXd dphi_;  // nq x 2*nloc (reference gradients)
};

/// Locate the element containing (x,y) in a structured unit-square mesh
/// with n squares per side and return (element, reference coords).
std::array<double, 3> locate_structured(const Mesh& mesh, int n_per_side, double x, double y);

/// VMS scale separation for the degree-2 velocity space: Pi_h is nodal
/// interpolation onto the P1 companion space re-expressed in P2
/// coefficients; Pi_h* = Id - Pi_h. Vector fields are component-blocked:
/// [all x-coefficients; all y-coefficients].
class ScaleSeparation {
 public:
  explicit ScaleSeparation(const DofHandler& velocity);

  const SpMat& pi_scalar() const { return pi_; }
  const SpMat& pi_star_scalar() const { return pi_star_; }
  VectorXd apply_pi(const VectorXd& u) const;
  VectorXd apply_pi_star(const VectorXd& u) const;

 private:
  const DofHandler* vel_;
  SpMat pi_, pi_star_;
};

/// LPS fluctuation operator sigma_h* = Id - sigma_h where sigma_h is the
/// Oswald averaged nodal interpolation onto the continuous degree-n vector
/// space of the velocity handler (an instance of the paper's "locally
/// stable ... interpolator operator"; a lumped L2 projection is singular
/// for P2 because vertex basis functions have zero integral).
///
/// Elementwise vector fields are stored as (nt*nloc_v) x 2 matrices of
/// samples at the velocity-space nodes of each element.
class FluctuationOperator {
 public:
  FluctuationOperator(const DofHandler& velocity, const DofHandler& pressure);

  using NodalField = Eigen::Matrix<double, Eigen::Dynamic, 2>;

  /// grad p sampled at the velocity-space nodes of each element.
  NodalField gradient_nodal(const VectorXd& p_coefs) const;
  /// Oswald interpolation: continuous coefficients, component-blocked
  /// (2 * n_scalar of the velocity space).
  VectorXd oswald_coefs(const NodalField& nodal) const;
  /// sigma_h*(field) as a nodal field again.
  NodalField sigma_star_nodal(const NodalField& nodal) const;
  /// Evaluate a nodal field at all quadrature points; row = global qp.
  NodalField eval_qp(const NodalField& nodal) const;

  /// Sparse map: pressure coefficients -> sigma_h*(grad p) samples at
  /// quadrature points, row layout (global qp)*2 + component.
  const SpMat& E() const { return E_; }

 private:
  const DofHandler* vel_;
  const DofHandler* pres_;
  SpMat E_;
};

}  // namespace vmsrb
