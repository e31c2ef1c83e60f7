#include "vmsrb/mesh.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace vmsrb {

namespace {

double signed_area(const Mesh& m, int k) {
  const auto t = m.triangles.row(k);
  const Vector2d a = m.vertices.row(t[0]);
  const Vector2d b = m.vertices.row(t[1]);
  const Vector2d c = m.vertices.row(t[2]);
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

void fill_geometry(Mesh& m) {
  const int nt = m.n_triangles();
  m.h_K.resize(nt);
  m.area_K.resize(nt);
  for (int k = 0; k < nt; ++k) {
    const auto t = m.triangles.row(k);
    double h = 0.0;
    for (int e = 0; e < 3; ++e) {
      const Vector2d a = m.vertices.row(t[e]);
      const Vector2d b = m.vertices.row(t[(e + 1) % 3]);
      h = std::max(h, (a - b).norm());
    }
    m.h_K[k] = h;
    m.area_K[k] = signed_area(m, k);
  }
}

}  // namespace

Mesh build_unit_square_mesh(int n_per_side, int lid_tag, int wall_tag) {
  require(n_per_side >= 1, "build_unit_square_mesh: n_per_side must be >= 1");
  const int n = n_per_side;
  Mesh m;
  m.vertices.resize((n + 1) * (n + 1), 2);
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) {
      const int v = j * (n + 1) + i;
      m.vertices(v, 0) = static_cast<double>(i) / n;
      m.vertices(v, 1) = static_cast<double>(j) / n;
    }
  m.triangles.resize(2 * n * n, 3);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const int a = j * (n + 1) + i;
      const int b = a + 1;
      const int c = a + n + 2;  // (i+1, j+1)
      const int d = a + n + 1;  // (i, j+1)
      // diagonal a -> c
      m.triangles.row(k++) << a, b, c;
      m.triangles.row(k++) << a, c, d;
    }
  m.boundary_edges.resize(4 * n, 3);
  int e = 0;
  for (int i = 0; i < n; ++i) {  // bottom, y=0
    m.boundary_edges.row(e++) << i, i + 1, wall_tag;
  }
  for (int j = 0; j < n; ++j) {  // right, x=1
    m.boundary_edges.row(e++) << j * (n + 1) + n, (j + 1) * (n + 1) + n, wall_tag;
  }
  for (int i = 0; i < n; ++i) {  // top, y=1
    m.boundary_edges.row(e++) << n * (n + 1) + i, n * (n + 1) + i + 1, lid_tag;
  }
  for (int j = 0; j < n; ++j) {  // left, x=0
    m.boundary_edges.row(e++) << j * (n + 1), (j + 1) * (n + 1), wall_tag;
  }
  fill_geometry(m);
  validate_mesh(m);
  return m;
}

double element_diameter(const Mesh& mesh, int K) {
  require(K >= 0 && K < mesh.n_triangles(), "element_diameter: element index out of range");
  return mesh.h_K[K];
}

void validate_mesh(const Mesh& mesh, double regularity_bound) {
  require(mesh.n_vertices() >= 3 && mesh.n_triangles() >= 1, "mesh: too small");
  for (int k = 0; k < mesh.n_triangles(); ++k) {
    for (int e = 0; e < 3; ++e)
      require(mesh.triangles(k, e) >= 0 && mesh.triangles(k, e) < mesh.n_vertices(),
              "mesh: triangle vertex index out of range");
    require(signed_area(mesh, k) > 0.0, "mesh: non-positive triangle area (orientation or degeneracy)");
  }
  // conformity: count triangles per undirected edge
  std::map<std::pair<int, int>, int> edge_count;
  for (int k = 0; k < mesh.n_triangles(); ++k)
    for (int e = 0; e < 3; ++e) {
      int a = mesh.triangles(k, e), b = mesh.triangles(k, (e + 1) % 3);
      if (a > b) std::swap(a, b);
      edge_count[{a, b}] += 1;
    }
  for (const auto& [edge, cnt] : edge_count)
    require(cnt <= 2, "mesh: edge shared by more than two triangles (non-conforming)");
  for (int e = 0; e < mesh.n_boundary_edges(); ++e) {
    int a = mesh.boundary_edges(e, 0), b = mesh.boundary_edges(e, 1);
    if (a > b) std::swap(a, b);
    auto it = edge_count.find({a, b});
    require(it != edge_count.end() && it->second == 1,
            "mesh: boundary edge not matching exactly one triangle");
  }
  int n_single = 0;
  for (const auto& [edge, cnt] : edge_count)
    if (cnt == 1) ++n_single;
  require(n_single == mesh.n_boundary_edges(),
          "mesh: boundary edge list incomplete (conformity)");
  require(mesh.h_K.size() == mesh.n_triangles() && mesh.area_K.size() == mesh.n_triangles(),
          "mesh: geometry arrays not filled");
  for (int k = 0; k < mesh.n_triangles(); ++k) {
    double h = 0.0;
    const auto t = mesh.triangles.row(k);
    for (int e = 0; e < 3; ++e) {
      const Vector2d a = mesh.vertices.row(t[e]);
      const Vector2d b = mesh.vertices.row(t[(e + 1) % 3]);
      h = std::max(h, (a - b).norm());
    }
    require(std::abs(mesh.h_K[k] - h) <= 1e-14 * (1.0 + h), "mesh: h_K is not the longest edge");
  }
  require(mesh.h_max() <= regularity_bound * mesh.h_min(),
          "mesh: uniform regularity proxy violated (max h / min h too large)");
}

std::string write_mesh_text(const Mesh& mesh) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d %d %d\n", mesh.n_vertices(), mesh.n_triangles(),
                mesh.n_boundary_edges());
  out += buf;
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", mesh.vertices(v, 0), mesh.vertices(v, 1));
    out += buf;
  }
  for (int k = 0; k < mesh.n_triangles(); ++k) {
    std::snprintf(buf, sizeof buf, "%d %d %d\n", mesh.triangles(k, 0), mesh.triangles(k, 1),
                  mesh.triangles(k, 2));
    out += buf;
  }
  for (int e = 0; e < mesh.n_boundary_edges(); ++e) {
    std::snprintf(buf, sizeof buf, "%d %d %d\n", mesh.boundary_edges(e, 0),
                  mesh.boundary_edges(e, 1), mesh.boundary_edges(e, 2));
    out += buf;
  }
  return out;
}

Mesh read_mesh_text(const std::string& text) {
  std::istringstream in(text);
  int nv = 0, nt = 0, ne = 0;
  if (!(in >> nv >> nt >> ne)) throw ConfigError("mesh read: bad header");
  require(nv >= 3 && nt >= 1 && ne >= 0, "mesh read: implausible counts");
  Mesh m;
  m.vertices.resize(nv, 2);
  for (int v = 0; v < nv; ++v)
    if (!(in >> m.vertices(v, 0) >> m.vertices(v, 1)))
      throw ConfigError("mesh read: truncated vertex block");
  m.triangles.resize(nt, 3);
  for (int k = 0; k < nt; ++k)
    if (!(in >> m.triangles(k, 0) >> m.triangles(k, 1) >> m.triangles(k, 2)))
      throw ConfigError("mesh read: truncated triangle block");
  m.boundary_edges.resize(ne, 3);
  for (int e = 0; e < ne; ++e)
    if (!(in >> m.boundary_edges(e, 0) >> m.boundary_edges(e, 1) >> m.boundary_edges(e, 2)))
      throw ConfigError("mesh read: truncated boundary block");
  fill_geometry(m);
  validate_mesh(m);
  return m;
}

void write_mesh_file(const Mesh& mesh, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open mesh file for writing: " + path);
  const std::string text = write_mesh_text(mesh);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(f.good(), "failed writing mesh file: " + path);
}

Mesh read_mesh_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open mesh file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return read_mesh_text(ss.str());
}

std::uint64_t mesh_hash(const Mesh& mesh) { return fnv1a64(write_mesh_text(mesh)); }

}  // namespace vmsrb
