#include "doctest.h"

#include <cmath>

#include "avh/registration.hpp"
#include "support.hpp"

using namespace avh;

namespace {

// Shadow patch over [0.25, 0.75]^2 at z = 0.01 above a larger scan plane at z = 0.
struct OffsetPlane {
  TriMesh shadow;
  TriMesh scan;
  OffsetPlane() {
    shadow = test::grid_mesh(8, 0.5, 0.01);
    for (Vec3& v : shadow.vertices) v += Vec3(0.25, 0.25, 0.0);
    scan = test::grid_mesh(4, 1.0, 0.0);
  }
};

void check_monotone(const RegistrationResult& r) {
  for (std::size_t i = 1; i < r.energy.size(); ++i) CHECK(r.energy[i] <= r.energy[i - 1]);
}

}  // namespace

TEST_SUITE("registration") {
  TEST_CASE("Laplacian of a regular grid interior vertex vanishes") {
    const TriMesh g = test::grid_mesh(4, 1.0);
    const auto L = uniform_laplacian(g);
    // Interior vertex (2, 2): its six grid neighbours are symmetric about it.
    CHECK(L[2 * 5 + 2].norm() < 1e-12);
  }

  TEST_CASE("Laplacian of a vertex with a single neighbour is the offset") {
    std::vector<Vec3> p = {Vec3(1, 2, 3), Vec3(1.5, 2, 2)};
    const auto L = uniform_laplacian(p, {{1}, {0}});
    CHECK((L[0] - Vec3(0.5, 0, -1)).norm() < 1e-15);
  }

  TEST_CASE("Laplacian equals the dense adjacency matrix product") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const TriMesh m = test::bumpy_sphere(7, 9, 0.2, seed);
      const auto got = uniform_laplacian(m);
      const auto want = test::reference_laplacian(m);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK((got[i] - want[i]).norm() < 1e-12);
    }
  }

  TEST_CASE("scan identical to the shadow is a fixed point") {
    const TriMesh s = test::bumpy_sphere(8, 10, 0.1, 4);
    const RegistrationResult r = register_to_scan(s, SurfaceAccel(s), {});
    CHECK(r.energy.front() == 0.0);
    CHECK(r.mesh.vertices == s.vertices);
  }

  TEST_CASE("offset plane lands on the scan with lambda 0") {
    const OffsetPlane fx;
    RegistrationParams p;
    p.lambda_laplacian = 0.0;
    const RegistrationResult r = register_to_scan(fx.shadow, SurfaceAccel(fx.scan), p);
    check_monotone(r);
    double mean = 0.0;
    for (const Vec3& v : r.mesh.vertices) mean += std::abs(v.z());
    mean /= static_cast<double>(r.mesh.vertices.size());
    CHECK(mean < 1e-4);
    CHECK(r.mesh.faces == fx.shadow.faces);
  }

  TEST_CASE("large lambda keeps the displacement field smooth") {
    TriMesh shadow = test::grid_mesh(10, 1.0, 0.02);
    const TriMesh scan = test::bumpy_sphere(12, 16, 0.0, 1);  // unit sphere: pulls vertices unevenly
    for (Vec3& v : shadow.vertices) v += Vec3(-0.5, -0.5, 1.0);
    const auto rest = uniform_laplacian(shadow);
    const auto bending = [&](const TriMesh& m) {
      const auto L = uniform_laplacian(m);
      double sum = 0.0;
      for (std::size_t i = 0; i < L.size(); ++i) sum += (L[i] - rest[i]).squaredNorm();
      return sum;
    };
    RegistrationParams p;
    p.lambda_laplacian = 100.0;
    const RegistrationResult stiff = register_to_scan(shadow, SurfaceAccel(scan), p);
    check_monotone(stiff);
    p.lambda_laplacian = 0.0;
    const RegistrationResult free = register_to_scan(shadow, SurfaceAccel(scan), p);
    check_monotone(free);
    INFO("stiff ", bending(stiff.mesh), " free ", bending(free.mesh));
    CHECK(bending(free.mesh) > 0.0);
    CHECK(bending(stiff.mesh) < 0.1 * bending(free.mesh));
  }

  TEST_CASE("registration is deterministic and keeps faces and UVs") {
    const SkinnedTemplate t = test::small_person();
    TriMesh scan = t.rest_mesh;
    for (std::size_t v = 0; v < scan.vertices.size(); ++v) scan.vertices[v] += 0.01 * scan.vertex_normals[v];
    scan = compute_normals(std::move(scan));
    const SurfaceAccel accel(scan);
    RegistrationParams p;
    p.max_iters = 15;
    const auto a = register_to_scan(t.rest_mesh, accel, p);
    const auto b = register_to_scan(t.rest_mesh, accel, p);
    check_monotone(a);
    CHECK(a.energy.back() < a.energy.front());
    CHECK(a.mesh.vertices == b.mesh.vertices);
    CHECK(a.mesh.faces == t.rest_mesh.faces);
    CHECK(a.mesh.uv_corners.size() == t.rest_mesh.uv_corners.size());
    for (std::size_t f = 0; f < a.mesh.uv_corners.size(); ++f) {
      for (int k = 0; k < 3; ++k) CHECK(a.mesh.uv_corners[f][k] == t.rest_mesh.uv_corners[f][k]);
    }
  }

  TEST_CASE("invalid parameters are rejected") {
    RegistrationParams p;
    p.step_size = 0.0;
    CHECK_THROWS(p.validate());
    p = {};
    p.lambda_laplacian = -1.0;
    CHECK_THROWS(p.validate());
  }
}
