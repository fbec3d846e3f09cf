#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "avh/mesh.hpp"

namespace avh {

/// Articulated joints excluding the root; each carries a 3-component axis-angle rotation.
inline constexpr int kPoseJoints = 23;
/// Joints including the root.
inline constexpr int kJointCount = kPoseJoints + 1;
inline constexpr int kPoseValues = kPoseJoints * 3;          // 69
inline constexpr int kEncodedPoseSize = kPoseValues * 2;     // 138
inline constexpr int kMaxInfluences = 4;

using Theta = std::array<double, kPoseValues>;  // joint-major: joint j rotation at [3j, 3j+3)

struct Pose {
  Theta theta{};
  Vec3 global_translation = Vec3::Zero();
  Vec3 global_rotation = Vec3::Zero();  // axis-angle
  double global_scale = 1.0;

  void validate() const;
};

struct Shape {
  std::vector<double> beta;
};

struct SkinInfluence {
  int joint = 0;
  double weight = 0.0;
};

/// Skinned body template with an SMPL-like structure: 24 joints (root + 23), linear shape
/// blendshapes and linear blend skinning. Joint 0 is the root; parents precede children.
struct SkinnedTemplate {
  TriMesh rest_mesh;
  std::array<int, kJointCount> parents{};
  std::array<Vec3, kJointCount> rest_joints{};
  std::vector<std::vector<SkinInfluence>> skin_weights;  // per vertex, at most kMaxInfluences entries
  /// shape_basis[k][v]: offset of vertex v per unit of beta[k].
  std::vector<std::vector<Vec3>> shape_basis;
  /// joint_shape_basis[k][j]: offset of joint j per unit of beta[k] (may be empty).
  std::vector<std::array<Vec3, kJointCount>> joint_shape_basis;

  int shape_count() const { return static_cast<int>(shape_basis.size()); }

  /// Checks weight rows sum to 1, at most 4 influences, a single root and an acyclic parent chain.
  void validate() const;
};

/// Rodrigues' formula; uses the second-order Taylor expansion when |axis_angle| < 1e-8.
Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle);

/// Shape blendshapes at rest, LBS over the joint chain, then the global similarity transform
/// x' = R_global * (s * x) + t (scale, then rotate, then translate). UVs are copied, normals recomputed.
TriMesh pose_mesh(const SkinnedTemplate& tmpl, const Shape& shape, const Pose& pose);

/// World transforms (rotation, translation) of every joint for a pose, before the global transform.
std::array<Eigen::Matrix<double, 3, 4>, kJointCount> joint_transforms(const SkinnedTemplate& tmpl, const Shape& shape,
                                                                      const Pose& pose);

/// [sin(a0), cos(a0), sin(a1), cos(a1), ...] over the 69 angles in joint-major order.
std::array<double, kEncodedPoseSize> encode_pose(const Theta& theta);

/// JSON manifest + OBJ rest mesh + little-endian f32 arrays; see docs/formats.md.
SkinnedTemplate load_template(const std::filesystem::path& manifest);
void save_template(const SkinnedTemplate& tmpl, const std::filesystem::path& manifest);

/// Options for the synthetic capsule-person body used by tests and the demo project.
struct CapsulePersonOptions {
  int ring_segments = 16;     // vertices around each capsule
  int body_rings = 8;         // rings along each capsule's cylindrical part
  int cap_rings = 3;          // rings per hemispherical cap (excluding the pole)
  int shape_count = 4;
};

/// Builds a 24-joint T-pose body out of capsules, one UV chart per capsule in a non-overlapping atlas.
SkinnedTemplate make_capsule_person(const CapsulePersonOptions& options = {});

/// Names of the 24 joints in index order.
const std::array<const char*, kJointCount>& joint_names();

}  // namespace avh
