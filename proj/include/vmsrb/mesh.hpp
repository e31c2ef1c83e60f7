#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vmsrb/common.hpp"

namespace vmsrb {

/// Boundary tags used by the cavity setup. Arbitrary positive tags are
/// allowed in mesh files; these two are the shipped convention.
constexpr int kWallTag = 1;
constexpr int kLidTag = 2;

/// Conforming 2D triangulation. Immutable after construction; safe for
/// concurrent reads.
struct Mesh {
  /// Vertex coordinates, nv x 2.
  Eigen::Matrix<double, Eigen::Dynamic, 2> vertices;
  /// Vertex indices per triangle, nt x 3, positively oriented.
  Eigen::Matrix<int, Eigen::Dynamic, 3> triangles;
  /// Boundary edges as (v0, v1, tag), ne x 3.
  Eigen::Matrix<int, Eigen::Dynamic, 3> boundary_edges;
  /// Per-triangle diameter (longest edge).
  VectorXd h_K;
  /// Per-triangle area.
  VectorXd area_K;

  int n_vertices() const { return static_cast<int>(vertices.rows()); }
  int n_triangles() const { return static_cast<int>(triangles.rows()); }
  int n_boundary_edges() const { return static_cast<int>(boundary_edges.rows()); }

  double h_max() const { return h_K.maxCoeff(); }
  double h_min() const { return h_K.minCoeff(); }
};

/// Structured unit-square mesh: n x n squares, each cut along the
/// lower-left to upper-right diagonal. 2n^2 triangles, (n+1)^2 vertices.
/// The top edge (y=1) carries lid_tag, the rest wall_tag.
Mesh build_unit_square_mesh(int n_per_side, int lid_tag = kLidTag, int wall_tag = kWallTag);

/// Longest edge of triangle K.
double element_diameter(const Mesh& mesh, int K);

/// Recompute h_K/area_K and check invariants: positive oriented areas,
/// conformity (each edge shared by at most two triangles; boundary edge
/// list matches the single-triangle edges), and the uniform-regularity
/// proxy max h / min h <= regularity_bound. Throws ConfigError.
void validate_mesh(const Mesh& mesh, double regularity_bound = 4.0);

/// Plain-text serialization. Format (documented in README):
///   nv nt ne
///   x y            (nv lines, %.17g)
///   v0 v1 v2       (nt lines)
///   v0 v1 tag      (ne lines)
/// Round-trips bit-exactly.
std::string write_mesh_text(const Mesh& mesh);
Mesh read_mesh_text(const std::string& text);
void write_mesh_file(const Mesh& mesh, const std::string& path);
Mesh read_mesh_file(const std::string& path);

/// FNV-1a 64-bit hash of the text serialization; identifies the mesh in
/// snapshot and model containers.
std::uint64_t mesh_hash(const Mesh& mesh);

}  // namespace vmsrb
