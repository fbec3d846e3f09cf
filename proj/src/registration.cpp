#include "avh/registration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace avh {

void RegistrationParams::validate() const {
  if (!(lambda_laplacian >= 0.0)) throw std::invalid_argument("registration: lambda_laplacian must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("registration: step_size must be > 0");
  if (max_iters < 0) throw std::invalid_argument("registration: max_iters must be >= 0");
  if (!(convergence_tol > 0.0)) throw std::invalid_argument("registration: convergence_tol must be > 0");
}

std::vector<std::vector<int>> vertex_neighbors(const TriMesh& mesh) {
  std::vector<std::vector<int>> nbrs(mesh.vertices.size());
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      if (a == b) continue;
      nbrs[a].push_back(b);
      nbrs[b].push_back(a);
    }
  }
  for (auto& n : nbrs) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return nbrs;
}

std::vector<Vec3> uniform_laplacian(const std::vector<Vec3>& positions,
                                    const std::vector<std::vector<int>>& neighbors) {
  std::vector<Vec3> out(positions.size(), Vec3::Zero());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (neighbors[i].empty()) continue;
    Vec3 sum = Vec3::Zero();
    for (int j : neighbors[i]) sum += positions[j];
    out[i] = sum / static_cast<double>(neighbors[i].size()) - positions[i];
  }
  return out;
}

std::vector<Vec3> uniform_laplacian(const TriMesh& mesh) {
  return uniform_laplacian(mesh.vertices, vertex_neighbors(mesh));
}

namespace {

struct EnergyEval {
  double energy = 0.0;
  std::vector<Vec3> closest;
  std::vector<Vec3> lap_residual;  // L(v) - L(v0)
};

EnergyEval evaluate(const std::vector<Vec3>& pos, const std::vector<Vec3>& rest_lap,
                    const std::vector<std::vector<int>>& nbrs, const SurfaceAccel& scan, double lambda) {
  EnergyEval e;
  e.closest.resize(pos.size());
  double data = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const ClosestPoint cp = scan.closest_point(pos[i]);
    e.closest[i] = cp.position;
    data += cp.distance_sq;
  }
  double reg = 0.0;
  if (lambda > 0.0) {
    e.lap_residual = uniform_laplacian(pos, nbrs);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      e.lap_residual[i] -= rest_lap[i];
      reg += e.lap_residual[i].squaredNorm();
    }
  }
  e.energy = data + lambda * reg;
  return e;
}

}  // namespace

double registration_energy(const std::vector<Vec3>& positions, const std::vector<Vec3>& rest_laplacian,
                           const std::vector<std::vector<int>>& neighbors, const SurfaceAccel& scan,
                           double lambda) {
  return evaluate(positions, rest_laplacian, neighbors, scan, lambda).energy;
}

RegistrationResult register_to_scan(const TriMesh& shadow, const SurfaceAccel& scan,
                                    const RegistrationParams& params) {
  params.validate();
  shadow.validate();
  const auto nbrs = vertex_neighbors(shadow);
  const auto rest_lap = uniform_laplacian(shadow.vertices, nbrs);
  const double lambda = params.lambda_laplacian;

  std::vector<Vec3> pos = shadow.vertices;
  EnergyEval cur = evaluate(pos, rest_lap, nbrs, scan, lambda);
  if (!std::isfinite(cur.energy)) throw std::runtime_error("registration: non-finite initial energy");

  RegistrationResult result;
  result.energy.push_back(cur.energy);
  std::vector<Vec3> grad(pos.size());
  std::vector<Vec3> trial(pos.size());

  for (int iter = 0; iter < params.max_iters; ++iter) {
    if (cur.energy == 0.0) {
      result.converged = true;
      break;
    }
    // dE/dv_i = 2 (v_i - c_i) + 2 lambda (L^T r)_i with r = L(v) - L(v0) and L = A - I.
    for (std::size_t i = 0; i < pos.size(); ++i) grad[i] = 2.0 * (pos[i] - cur.closest[i]);
    if (lambda > 0.0) {
      for (std::size_t i = 0; i < pos.size(); ++i) {
        const Vec3& r = cur.lap_residual[i];
        grad[i] -= 2.0 * lambda * r;
        if (nbrs[i].empty()) continue;
        const Vec3 share = 2.0 * lambda * r / static_cast<double>(nbrs[i].size());
        for (int j : nbrs[i]) grad[j] += share;
      }
    }

    double step = params.step_size;
    bool accepted = false;
    EnergyEval next;
    for (int bt = 0; bt <= params.max_backtracks; ++bt) {
      for (std::size_t i = 0; i < pos.size(); ++i) trial[i] = pos[i] - step * grad[i];
      next = evaluate(trial, rest_lap, nbrs, scan, lambda);
      if (!std::isfinite(next.energy)) {
        throw std::runtime_error("registration: non-finite energy at iteration " + std::to_string(iter));
      }
      if (next.energy <= cur.energy) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.converged = true;  // no descent direction left at machine precision
      break;
    }
    const double rel = (cur.energy - next.energy) / std::max(cur.energy, 1e-300);
    pos.swap(trial);
    cur = std::move(next);
    result.energy.push_back(cur.energy);
    result.iterations = iter + 1;
    if (rel < params.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  spdlog::debug("registration: {} iterations, energy {:.6g} -> {:.6g}", result.iterations, result.energy.front(),
                result.energy.back());

  result.mesh = shadow;
  result.mesh.vertices = std::move(pos);
  result.mesh = compute_normals(std::move(result.mesh));
  return result;
}

}  // namespace avh
