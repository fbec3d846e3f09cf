#include "avh/skinning.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>
#include "json.hpp"

#include "avh/io.hpp"

namespace avh {

using Affine34 = Eigen::Matrix<double, 3, 4>;

namespace {

Affine34 compose(const Affine34& a, const Affine34& b) {
  Affine34 out;
  out.leftCols<3>() = a.leftCols<3>() * b.leftCols<3>();
  out.col(3) = a.leftCols<3>() * b.col(3) + a.col(3);
  return out;
}

std::array<Vec3, kJointCount> shaped_joints(const SkinnedTemplate& tmpl, const Shape& shape) {
  std::array<Vec3, kJointCount> joints = tmpl.rest_joints;
  for (std::size_t k = 0; k < tmpl.joint_shape_basis.size() && k < shape.beta.size(); ++k) {
    for (int j = 0; j < kJointCount; ++j) joints[j] += shape.beta[k] * tmpl.joint_shape_basis[k][j];
  }
  return joints;
}

}  // namespace

void Pose::validate() const {
  for (double a : theta) {
    if (!std::isfinite(a)) throw std::invalid_argument("pose: non-finite joint angle");
  }
  if (!global_translation.allFinite() || !global_rotation.allFinite()) {
    throw std::invalid_argument("pose: non-finite global transform");
  }
  if (!(global_scale > 0.0) || !std::isfinite(global_scale)) {
    throw std::invalid_argument("pose: global_scale must be positive");
  }
}

void SkinnedTemplate::validate() const {
  rest_mesh.validate();
  const std::size_t nv = rest_mesh.vertices.size();
  if (parents[0] != -1) throw MeshError("template: joint 0 must be the root");
  for (int j = 1; j < kJointCount; ++j) {
    if (parents[j] < 0 || parents[j] >= j) {
      throw MeshError("template: joint " + std::to_string(j) + " must have a parent with a lower index");
    }
  }
  if (skin_weights.size() != nv) throw MeshError("template: skin_weights must have one row per vertex");
  for (std::size_t v = 0; v < nv; ++v) {
    const auto& row = skin_weights[v];
    if (row.empty() || row.size() > kMaxInfluences) {
      throw MeshError("template: vertex " + std::to_string(v) + " has " + std::to_string(row.size()) + " influences");
    }
    double sum = 0.0;
    for (const auto& inf : row) {
      if (inf.joint < 0 || inf.joint >= kJointCount) throw MeshError("template: influence joint out of range");
      sum += inf.weight;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw MeshError("template: weights of vertex " + std::to_string(v) + " sum to " + std::to_string(sum));
    }
  }
  for (const auto& basis : shape_basis) {
    if (basis.size() != nv) throw MeshError("template: shape basis size mismatch");
  }
  if (!joint_shape_basis.empty() && joint_shape_basis.size() != shape_basis.size()) {
    throw MeshError("template: joint shape basis count must match shape basis count");
  }
}

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  Eigen::Matrix3d k;
  k << 0, -axis_angle.z(), axis_angle.y(), axis_angle.z(), 0, -axis_angle.x(), -axis_angle.y(), axis_angle.x(), 0;
  if (angle < 1e-8) {
    return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  }
  const Eigen::Matrix3d kn = k / angle;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * kn + (1.0 - std::cos(angle)) * kn * kn;
}

std::array<Affine34, kJointCount> joint_transforms(const SkinnedTemplate& tmpl, const Shape& shape,
                                                   const Pose& pose) {
  const auto joints = shaped_joints(tmpl, shape);
  std::array<Affine34, kJointCount> world;
  world[0].leftCols<3>().setIdentity();
  world[0].col(3) = joints[0];
  for (int j = 1; j < kJointCount; ++j) {
    const int p = tmpl.parents[j];
    const Vec3 aa(pose.theta[3 * (j - 1)], pose.theta[3 * (j - 1) + 1], pose.theta[3 * (j - 1) + 2]);
    Affine34 local;
    local.leftCols<3>() = axis_angle_to_matrix(aa);
    local.col(3) = joints[j] - joints[p];
    world[j] = compose(world[p], local);
  }
  return world;
}

TriMesh pose_mesh(const SkinnedTemplate& tmpl, const Shape& shape, const Pose& pose) {
  pose.validate();
  if (shape.beta.size() != tmpl.shape_basis.size()) {
    throw std::invalid_argument("pose_mesh: template has " + std::to_string(tmpl.shape_basis.size()) +
                                " shape coefficients, got " + std::to_string(shape.beta.size()));
  }
  const std::size_t nv = tmpl.rest_mesh.vertices.size();
  if (tmpl.skin_weights.size() != nv) throw std::invalid_argument("pose_mesh: skin weight rows != vertex count");

  const auto joints = shaped_joints(tmpl, shape);
  const auto world = joint_transforms(tmpl, shape, pose);
  // Skinning matrices map rest-space points: A_j = G_j * [I | -J_j].
  std::array<Affine34, kJointCount> skin;
  for (int j = 0; j < kJointCount; ++j) {
    skin[j].leftCols<3>() = world[j].leftCols<3>();
    skin[j].col(3) = world[j].col(3) - world[j].leftCols<3>() * joints[j];
  }

  const Eigen::Matrix3d global_rot = axis_angle_to_matrix(pose.global_rotation);
  TriMesh out = tmpl.rest_mesh;
  out.vertex_normals.clear();
  for (std::size_t v = 0; v < nv; ++v) {
    Vec3 rest = tmpl.rest_mesh.vertices[v];
    for (std::size_t k = 0; k < shape.beta.size(); ++k) rest += shape.beta[k] * tmpl.shape_basis[k][v];
    Affine34 blend = Affine34::Zero();
    for (const auto& inf : tmpl.skin_weights[v]) blend += inf.weight * skin[inf.joint];
    const Vec3 posed = blend.leftCols<3>() * rest + blend.col(3);
    out.vertices[v] = global_rot * (pose.global_scale * posed) + pose.global_translation;
  }
  return compute_normals(std::move(out));
}

std::array<double, kEncodedPoseSize> encode_pose(const Theta& theta) {
  std::array<double, kEncodedPoseSize> out;
  for (int i = 0; i < kPoseValues; ++i) {
    out[2 * i] = std::sin(theta[i]);
    out[2 * i + 1] = std::cos(theta[i]);
  }
  return out;
}

const std::array<const char*, kJointCount>& joint_names() {
  static const std::array<const char*, kJointCount> names = {
      "pelvis",     "left_hip",       "right_hip",      "spine1",      "left_knee",   "right_knee",
      "spine2",     "left_ankle",     "right_ankle",    "spine3",      "left_foot",   "right_foot",
      "neck",       "left_collar",    "right_collar",   "head",        "left_shoulder", "right_shoulder",
      "left_elbow", "right_elbow",    "left_wrist",     "right_wrist", "left_hand",   "right_hand"};
  return names;
}

SkinnedTemplate load_template(const std::filesystem::path& manifest) {
  using nlohmann::json;
  const json j = json::parse(read_text_file(manifest));
  if (j.value("format", "") != "avh-skinned-template") throw IoError(manifest.string() + ": not a template manifest");
  if (j.value("version", 0) != 1) throw IoError(manifest.string() + ": unsupported template version");
  const auto dir = manifest.parent_path();

  SkinnedTemplate t;
  t.rest_mesh = read_obj(dir / j.at("rest_mesh").get<std::string>());
  const auto parents = j.at("parents").get<std::vector<int>>();
  const auto joints = j.at("rest_joints").get<std::vector<std::array<double, 3>>>();
  if (parents.size() != kJointCount || joints.size() != kJointCount) {
    throw IoError(manifest.string() + ": expected " + std::to_string(kJointCount) + " joints");
  }
  for (int i = 0; i < kJointCount; ++i) {
    t.parents[i] = parents[i];
    t.rest_joints[i] = Vec3(joints[i][0], joints[i][1], joints[i][2]);
  }

  const std::size_t nv = t.rest_mesh.vertices.size();
  if (j.at("vertex_count").get<std::size_t>() != nv) throw IoError(manifest.string() + ": vertex_count mismatch");
  const int shape_count = j.at("shape_count").get<int>();

  const auto weights = read_f32_file(dir / j.at("skin_weights").get<std::string>());
  if (weights.size() != nv * kJointCount) throw IoError("skin_weights: expected vertex_count x 24 floats");
  t.skin_weights.resize(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    for (int jt = 0; jt < kJointCount; ++jt) {
      const float w = weights[v * kJointCount + jt];
      if (w != 0.0f) t.skin_weights[v].push_back({jt, static_cast<double>(w)});
    }
    // Stored as f32: renormalize so rows sum to 1 in double precision.
    double sum = 0.0;
    for (const auto& inf : t.skin_weights[v]) sum += inf.weight;
    if (sum > 0.0) {
      for (auto& inf : t.skin_weights[v]) inf.weight /= sum;
    }
  }

  const auto basis = read_f32_file(dir / j.at("shape_basis").get<std::string>());
  if (basis.size() != static_cast<std::size_t>(shape_count) * nv * 3) {
    throw IoError("shape_basis: expected shape_count x vertex_count x 3 floats");
  }
  t.shape_basis.assign(shape_count, std::vector<Vec3>(nv));
  for (int k = 0; k < shape_count; ++k) {
    for (std::size_t v = 0; v < nv; ++v) {
      const std::size_t o = (static_cast<std::size_t>(k) * nv + v) * 3;
      t.shape_basis[k][v] = Vec3(basis[o], basis[o + 1], basis[o + 2]);
    }
  }

  if (j.contains("joint_shape_basis")) {
    const auto jb = read_f32_file(dir / j.at("joint_shape_basis").get<std::string>());
    if (jb.size() != static_cast<std::size_t>(shape_count) * kJointCount * 3) {
      throw IoError("joint_shape_basis: expected shape_count x 24 x 3 floats");
    }
    t.joint_shape_basis.resize(shape_count);
    for (int k = 0; k < shape_count; ++k) {
      for (int jt = 0; jt < kJointCount; ++jt) {
        const std::size_t o = (static_cast<std::size_t>(k) * kJointCount + jt) * 3;
        t.joint_shape_basis[k][jt] = Vec3(jb[o], jb[o + 1], jb[o + 2]);
      }
    }
  }
  t.validate();
  return t;
}

void save_template(const SkinnedTemplate& tmpl, const std::filesystem::path& manifest) {
  using nlohmann::json;
  tmpl.validate();
  const auto dir = manifest.parent_path();
  const std::string stem = manifest.stem().string();
  const std::size_t nv = tmpl.rest_mesh.vertices.size();

  TriMesh rest = tmpl.rest_mesh;
  rest.texture.reset();
  write_obj(rest, dir / (stem + "_rest.obj"));

  std::vector<float> weights(nv * kJointCount, 0.0f);
  for (std::size_t v = 0; v < nv; ++v) {
    for (const auto& inf : tmpl.skin_weights[v]) weights[v * kJointCount + inf.joint] = static_cast<float>(inf.weight);
  }
  write_f32_file(weights, dir / (stem + "_skin_weights.f32"));

  std::vector<float> basis;
  basis.reserve(tmpl.shape_basis.size() * nv * 3);
  for (const auto& b : tmpl.shape_basis) {
    for (const auto& o : b) {
      for (int c = 0; c < 3; ++c) basis.push_back(static_cast<float>(o[c]));
    }
  }
  write_f32_file(basis, dir / (stem + "_shape_basis.f32"));

  json j;
  j["format"] = "avh-skinned-template";
  j["version"] = 1;
  j["rest_mesh"] = stem + "_rest.obj";
  j["vertex_count"] = nv;
  j["shape_count"] = tmpl.shape_count();
  j["skin_weights"] = stem + "_skin_weights.f32";
  j["shape_basis"] = stem + "_shape_basis.f32";
  std::vector<std::string> names(joint_names().begin(), joint_names().end());
  j["joint_names"] = names;
  j["parents"] = std::vector<int>(tmpl.parents.begin(), tmpl.parents.end());
  json joints = json::array();
  for (const auto& p : tmpl.rest_joints) joints.push_back({p.x(), p.y(), p.z()});
  j["rest_joints"] = joints;

  if (!tmpl.joint_shape_basis.empty()) {
    std::vector<float> jb;
    for (const auto& b : tmpl.joint_shape_basis) {
      for (const auto& o : b) {
        for (int c = 0; c < 3; ++c) jb.push_back(static_cast<float>(o[c]));
      }
    }
    write_f32_file(jb, dir / (stem + "_joint_shape_basis.f32"));
    j["joint_shape_basis"] = stem + "_joint_shape_basis.f32";
  }
  write_text_file(manifest, j.dump(2) + "\n");
}

}  // namespace avh
