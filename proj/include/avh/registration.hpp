#pragma once

#include <vector>

#include "avh/accel.hpp"
#include "avh/mesh.hpp"

namespace avh {

struct RegistrationParams {
  double lambda_laplacian = 1.0;
  double step_size = 0.5;
  int max_iters = 100;
  double convergence_tol = 1e-5;
  int max_backtracks = 30;

  void validate() const;
};

struct RegistrationResult {
  TriMesh mesh;
  std::vector<double> energy;  // energy[0] is the initial energy, then one entry per accepted step
  int iterations = 0;
  bool converged = false;
};

/// Vertex one-ring adjacency (sorted, unique) from the face list.
std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh);

/// L(v)_i = mean of the one-ring neighbours minus v_i; isolated vertices get zero.
std::vector<Vec3> uniform_laplacian(const TriMesh& mesh);
std::vector<Vec3> uniform_laplacian(const std::vector<Vec3>& positions, const std::vector<std::vector<int>>& neighbors);

/// E = sum |v_i - closest_scan(v_i)|^2 + lambda * sum |L(v)_i - L(v0)_i|^2.
double registration_energy(const std::vector<Vec3>& positions, const std::vector<Vec3>& rest_laplacian,
                           const std::vector<std::vector<int>>& neighbors, const SurfaceAccel& scan,
                           double lambda);

/// Moves the shadow mesh's vertices onto the scan by gradient descent with backtracking.
/// Closest points are refreshed each iteration; a step that raises the energy is halved until it
/// does not. Faces and UVs are untouched; normals are recomputed on the result.
RegistrationResult register_to_scan(const TriMesh& shadow, const SurfaceAccel& scan, const RegistrationParams& params);

}  // namespace avh
