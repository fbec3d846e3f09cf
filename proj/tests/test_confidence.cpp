#include "doctest.h"

#include <cmath>
#include <random>

#include "avh/confidence.hpp"
#include "support.hpp"

using namespace avh;

namespace {

// A small +z facing square at the centre of `outer`, one face pair.
TriMesh inner_square(double half, double z) {
  TriMesh m = test::grid_mesh(1, 2 * half, z);
  for (Vec3& v : m.vertices) v += Vec3(0.5 - half, 0.5 - half, 0.0);
  return compute_normals(std::move(m));
}

}  // namespace

TEST_SUITE("confidence") {
  TEST_CASE("hemisphere directions are unit, upward and deterministic") {
    const auto d = hemisphere_directions(64);
    CHECK(d.size() == 64);
    for (const Vec3& v : d) {
      CHECK(std::abs(v.norm() - 1.0) < 1e-12);
      CHECK(v.z() > 0.0);
    }
    CHECK(d == hemisphere_directions(64));
    const auto o = oriented_directions(d, Vec3(0, -1, 0));
    for (const Vec3& v : o) CHECK(v.y() < 0.0);
  }

  TEST_CASE("an isolated triangle sees the whole hemisphere") {
    const SurfaceAccel a(test::single_triangle());
    CHECK(face_visibility(a)[0] == 1.0);
  }

  TEST_CASE("a face enclosed by a box is fully occluded either way up") {
    for (double flip : {1.0, -1.0}) {
      TriMesh inner = inner_square(0.05, 0.5);
      if (flip < 0) {
        for (Face& f : inner.faces) std::swap(f[1], f[2]);
        inner = compute_normals(std::move(inner));
      }
      const TriMesh scene = test::merge({test::box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1)), inner});
      const auto v = face_visibility(SurfaceAccel(scene));
      CHECK(v[v.size() - 1] == 0.0);
      CHECK(v[v.size() - 2] == 0.0);
    }
  }

  TEST_CASE("floor of an open box: partial visibility equal to the linear-scan count") {
    const TriMesh open = test::merge({test::box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1), false), inner_square(0.1, 0.01)});
    const SurfaceAccel accel(open);
    const auto got = face_visibility(accel);
    const auto want = test::reference_face_visibility(open, 64, accel.self_hit_epsilon());
    REQUIRE(got.size() == want.size());
    for (std::size_t f = 0; f < got.size(); ++f) CHECK(got[f] == want[f]);
    const double floor = got[got.size() - 1];
    CHECK(floor > 0.0);
    CHECK(floor < 1.0);
  }

  TEST_CASE("adding occluders never raises visibility") {
    const TriMesh floor = inner_square(0.1, 0.01);
    const TriMesh small = test::box_mesh(Vec3(-0.2, -0.2, -0.2), Vec3(1.2, 1.2, 0.8), false);
    const TriMesh large = test::box_mesh(Vec3(-0.5, -0.5, -0.5), Vec3(1.5, 1.5, 0.6), false);
    const auto v0 = face_visibility(SurfaceAccel(floor));
    const auto v1 = face_visibility(SurfaceAccel(test::merge({floor, small})));
    const auto v2 = face_visibility(SurfaceAccel(test::merge({floor, small, large})));
    for (int f = 0; f < 2; ++f) {
      CHECK(v1[f] <= v0[f]);
      CHECK(v2[f] <= v1[f]);
    }
  }

  TEST_CASE("inverse distance score") {
    CHECK(inverse_distance_score(0.0, 5.0) == 1.0);
    CHECK(inverse_distance_score(0.1, 5.0) == 0.0);
    CHECK(inverse_distance_score(7.0, 5.0) == 0.0);
    CHECK(inverse_distance_score(0.05, 5.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS(inverse_distance_score(0.1, 0.0));
  }

  TEST_CASE("normal match score") {
    const Vec3 n = Vec3(1, 2, 3).normalized();
    CHECK(normal_match_score(n, n) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(normal_match_score(Vec3(0, 0, 1), Vec3(0, 0, 1)) == 1.0);
    CHECK(normal_match_score(Vec3(0, 0, 1), Vec3(0, 0, -1)) == 0.0);
    CHECK(normal_match_score(Vec3(1, 0, 0), Vec3(0, 1, 0)) == 0.5);
  }

  TEST_CASE("confidence is the elementwise product") {
    FloatGrid one(2, 2, 1, 1.0f), half(2, 2, 1, 0.5f), zero(2, 2, 1, 0.0f);
    CHECK(combine_confidence(one, one, one, one).data == one.data);
    CHECK(combine_confidence(one, zero, one, one).data == zero.data);
    CHECK(combine_confidence(half, half, one, one).data == FloatGrid(2, 2, 1, 0.25f).data);
    CHECK_THROWS(combine_confidence(one, FloatGrid(3, 2, 1), one, one));
  }

  TEST_CASE("frame gating at 130/255") {
    CHECK(frame_quality(FloatGrid(4, 4, 1, 1.0f)).keep);
    CHECK_FALSE(frame_quality(FloatGrid(4, 4, 1, 0.0f)).keep);
    CHECK_FALSE(frame_quality(FloatGrid(4, 4, 1, 0.509f)).keep);
    CHECK(frame_quality(FloatGrid(4, 4, 1, 0.511f)).keep);
    // Only chart texels count, and an unmatched chart texel counts as 0.
    FloatGrid k(2, 1, 1, 0.0f);
    k.data[0] = 1.0f;
    CHECK(frame_quality(k, {1, 0}).keep);
    CHECK_FALSE(frame_quality(k, {1, 1}).keep);
  }

  TEST_CASE("scored identity bake stays in [0, 1] and is bright where visible") {
    const TriMesh s = test::uv_sphere(10, 20, 0.5, 16);
    const SurfaceAccel accel(s);
    BakeConfig cfg;
    cfg.resolution = 32;
    BakeBundle b = bake_frame(s, s, accel, cfg);
    score_confidence(b, accel, accel, {});
    for (const FloatGrid* g : {&b.confidence, &b.visibility_scan, &b.visibility_registered, &b.inverse_distance,
                               &b.normal_match}) {
      for (float x : g->data) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
      }
    }
    // A convex sphere occludes nothing: every matched texel scores 1.
    for (std::size_t t = 0; t < b.texel_count(); ++t) {
      if (b.matched_mask[t]) CHECK(b.confidence.data[t] == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(frame_quality(b.confidence, b.chart_mask).keep);
  }
}
