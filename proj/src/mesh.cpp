#include "avh/mesh.hpp"

#include <cmath>
#include <string>

namespace avh {

void TriMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (faces[f][k] < 0 || faces[f][k] >= n) {
        throw MeshError("face " + std::to_string(f) + " references vertex " + std::to_string(faces[f][k]) +
                        " but mesh has " + std::to_string(n) + " vertices");
      }
    }
  }
  if (!uv_corners.empty() && uv_corners.size() != faces.size()) {
    throw MeshError("uv_corners must cover every face corner");
  }
  if (!vertex_normals.empty() && vertex_normals.size() != vertices.size()) {
    throw MeshError("vertex_normals must have one entry per vertex");
  }
}

Aabb bounds(const TriMesh& mesh) {
  Aabb box;
  for (const auto& v : mesh.vertices) box.extend(v);
  return box;
}

Vec3 face_cross(const TriMesh& mesh, int face) {
  const Face& f = mesh.faces[face];
  const Vec3& a = mesh.vertices[f[0]];
  return (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a);
}

TriMesh compute_normals(TriMesh mesh) {
  if (mesh.faces.empty()) throw MeshError("compute_normals: mesh has no faces");
  mesh.validate();
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
  bool any = false;
  for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
    // |cross| = 2 * area, so summing raw cross products is area weighting.
    const Vec3 n = face_cross(mesh, f);
    if (!(n.squaredNorm() > 0.0)) continue;
    any = true;
    for (int k = 0; k < 3; ++k) acc[mesh.faces[f][k]] += n;
  }
  if (!any) throw MeshError("degenerate mesh");
  mesh.vertex_normals.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double len = acc[i].norm();
    mesh.vertex_normals[i] = len > 0.0 ? Vec3(acc[i] / len) : Vec3::Zero();
  }
  return mesh;
}

Vec3 surface_normal(const TriMesh& mesh, int face, const Vec3& bary) {
  if (mesh.has_normals()) {
    const Vec3 n = interpolate(mesh.vertex_normals, mesh.faces[face], bary);
    const double len = n.norm();
    if (len > 1e-12) return n / len;
  }
  const Vec3 c = face_cross(mesh, face);
  const double len = c.norm();
  return len > 0.0 ? Vec3(c / len) : Vec3::Zero();
}

}  // namespace avh
