#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "avh/io.hpp"
#include "avh/skinning.hpp"
#include "support.hpp"

using namespace avh;

namespace {

// Root at the origin, joint 1 at (1, 0, 0); all other joints hang off the root at the origin.
SkinnedTemplate two_bone() {
  SkinnedTemplate t;
  t.parents.fill(0);
  t.parents[0] = -1;
  t.rest_joints.fill(Vec3::Zero());
  t.rest_joints[1] = Vec3(1, 0, 0);
  TriMesh& m = t.rest_mesh;
  m.vertices = {Vec3(0.5, 0, 0), Vec3(0.5, 0.1, 0), Vec3(2, 0, 0), Vec3(2, 0.1, 0)};
  m.faces = {{0, 2, 1}, {1, 2, 3}};
  m = compute_normals(std::move(m));
  t.skin_weights = {{{0, 1.0}}, {{0, 1.0}}, {{1, 1.0}}, {{1, 1.0}}};
  return t;
}

double max_vertex_gap(const TriMesh& a, const TriMesh& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.vertices.size(); ++i) g = std::max(g, (a.vertices[i] - b.vertices[i]).norm());
  return g;
}

}  // namespace

TEST_SUITE("skinning") {
  TEST_CASE("identity pose with zero shape reproduces the rest mesh") {
    const SkinnedTemplate t = test::small_person();
    const Shape beta{std::vector<double>(t.shape_count(), 0.0)};
    const TriMesh posed = pose_mesh(t, beta, Pose{});
    CHECK(max_vertex_gap(posed, t.rest_mesh) < 1e-12);
    CHECK(posed.uv_corners.size() == t.rest_mesh.uv_corners.size());
  }

  TEST_CASE("global translation shifts every vertex") {
    const SkinnedTemplate t = test::small_person();
    Pose p;
    p.global_translation = Vec3(0.3, -1.0, 2.5);
    const TriMesh posed = pose_mesh(t, Shape{std::vector<double>(t.shape_count(), 0.0)}, p);
    for (std::size_t i = 0; i < posed.vertices.size(); ++i) {
      CHECK((posed.vertices[i] - t.rest_mesh.vertices[i] - p.global_translation).norm() < 1e-12);
    }
  }

  TEST_CASE("90 degree rotation of a child bone matches the rigid transform") {
    const SkinnedTemplate t = two_bone();
    t.validate();
    Pose p;
    p.theta[2] = std::numbers::pi / 2;  // joint 1 about z
    const TriMesh posed = pose_mesh(t, Shape{std::vector<double>(t.shape_count(), 0.0)}, p);
    CHECK((posed.vertices[0] - Vec3(0.5, 0, 0)).norm() < 1e-12);
    CHECK((posed.vertices[2] - Vec3(1, 1, 0)).norm() < 1e-12);
    CHECK((posed.vertices[3] - Vec3(0.9, 1, 0)).norm() < 1e-12);
  }

  TEST_CASE("posing then transforming equals transforming the global part") {
    const SkinnedTemplate t = test::small_person();
    std::mt19937_64 rng(4);
    Pose p;
    p.theta = test::random_theta(rng, 0.5);
    const Shape beta{{0.3, -0.2, 0.1, 0.5}};
    const TriMesh local = pose_mesh(t, beta, p);
    Pose g = p;
    g.global_rotation = Vec3(0.2, -0.4, 0.7);
    g.global_translation = Vec3(1, 2, 3);
    const TriMesh world = pose_mesh(t, beta, g);
    const Eigen::Matrix3d R = axis_angle_to_matrix(g.global_rotation);
    for (std::size_t i = 0; i < local.vertices.size(); ++i) {
      CHECK((world.vertices[i] - (R * local.vertices[i] + g.global_translation)).norm() < 1e-12);
    }
  }

  TEST_CASE("Rodrigues near zero uses the series and stays orthonormal") {
    for (double s : {0.0, 1e-10, 1e-7, 0.5, 3.0}) {
      const Eigen::Matrix3d R = axis_angle_to_matrix(Vec3(s, -2 * s, 0.5 * s));
      CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    }
    const Eigen::Matrix3d Rz = axis_angle_to_matrix(Vec3(0, 0, std::numbers::pi / 2));
    CHECK((Rz * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() < 1e-12);
  }

  TEST_CASE("pose encoding") {
    Theta zero{};
    const auto e0 = encode_pose(zero);
    for (int i = 0; i < kPoseValues; ++i) {
      CHECK(e0[2 * i] == 0.0);
      CHECK(e0[2 * i + 1] == 1.0);
    }
    Theta one{};
    one[5] = std::numbers::pi / 2;
    const auto e1 = encode_pose(one);
    CHECK(e1[10] == doctest::Approx(1.0));
    CHECK(std::abs(e1[11]) < 1e-15);

    Theta a{}, b{};
    a.fill(std::numbers::pi - 1e-6);
    b.fill(-std::numbers::pi + 1e-6);
    const auto ea = encode_pose(a), eb = encode_pose(b);
    for (int i = 0; i < kEncodedPoseSize; ++i) CHECK(std::abs(ea[i] - eb[i]) < 1e-5);

    std::mt19937_64 rng(8);
    const Theta r = test::random_theta(rng, 3.0);
    Theta shifted = r;
    for (double& x : shifted) x += 2 * std::numbers::pi;
    const auto er = encode_pose(r), es = encode_pose(shifted);
    for (int i = 0; i < kEncodedPoseSize; ++i) CHECK(std::abs(er[i] - es[i]) < 1e-12);
  }

  TEST_CASE("capsule person validates and template files round trip") {
    const SkinnedTemplate t = make_capsule_person();
    t.validate();
    CHECK(joint_names().size() == kJointCount);
    const auto dir = test::temp_dir("template");
    save_template(t, dir / "template.json");
    const SkinnedTemplate back = load_template(dir / "template.json");
    back.validate();
    std::mt19937_64 rng(1);
    Pose p;
    p.theta = test::random_theta(rng, 0.4);
    const Shape beta{{0.1, 0.2, 0.3, 0.4}};
    CHECK(max_vertex_gap(pose_mesh(t, beta, p), pose_mesh(back, beta, p)) < 1e-5);
  }

  TEST_CASE("invalid templates are rejected") {
    SkinnedTemplate t = two_bone();
    t.skin_weights[0] = {{0, 0.7}};
    CHECK_THROWS(t.validate());
    SkinnedTemplate c = two_bone();
    c.parents[1] = 2;  // parent after child
    CHECK_THROWS(c.validate());
    Pose bad;
    bad.theta[0] = std::nan("");
    CHECK_THROWS(bad.validate());
  }
}
