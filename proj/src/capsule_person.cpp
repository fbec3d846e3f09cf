#include <cmath>
#include <numbers>

#include "avh/skinning.hpp"

namespace avh {

namespace {

// Skinning knots along a capsule axis: at parameter s the vertex follows `joint`.
struct Knot {
  double s;
  int joint;
};

struct CapsuleSpec {
  Vec3 a;
  Vec3 b;
  double radius;
  std::vector<Knot> knots;  // sorted by s, covering the capsule's [0, 1] axis parameter
  // UV chart rectangle [u0, u0 + du] x [v0, v0 + dv].
  double u0, v0, du, dv;
};

constexpr double kPi = std::numbers::pi;

// T-pose joint layout, y up, x to the body's left, z forward. Meters.
const std::array<Vec3, kJointCount> kRestJoints = {{
    {0.0, 0.95, 0.0},     // pelvis
    {0.10, 0.88, 0.0},    // left_hip
    {-0.10, 0.88, 0.0},   // right_hip
    {0.0, 1.05, 0.0},     // spine1
    {0.10, 0.46, 0.0},    // left_knee
    {-0.10, 0.46, 0.0},   // right_knee
    {0.0, 1.18, 0.0},     // spine2
    {0.10, 0.12, 0.0},    // left_ankle
    {-0.10, 0.12, 0.0},   // right_ankle
    {0.0, 1.30, 0.0},     // spine3
    {0.10, 0.05, 0.12},   // left_foot
    {-0.10, 0.05, 0.12},  // right_foot
    {0.0, 1.50, 0.0},     // neck
    {0.08, 1.42, 0.0},    // left_collar
    {-0.08, 1.42, 0.0},   // right_collar
    {0.0, 1.60, 0.0},     // head
    {0.18, 1.42, 0.0},    // left_shoulder
    {-0.18, 1.42, 0.0},   // right_shoulder
    {0.45, 1.42, 0.0},    // left_elbow
    {-0.45, 1.42, 0.0},   // right_elbow
    {0.70, 1.42, 0.0},    // left_wrist
    {-0.70, 1.42, 0.0},   // right_wrist
    {0.78, 1.42, 0.0},    // left_hand
    {-0.78, 1.42, 0.0},   // right_hand
}};

const std::array<int, kJointCount> kParents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

// Axis parameter of point p on segment ab, unclamped.
double axis_param(const Vec3& p, const Vec3& a, const Vec3& b) { return (p - a).dot(b - a) / (b - a).squaredNorm(); }

std::vector<SkinInfluence> knot_weights(const std::vector<Knot>& knots, double s) {
  if (s <= knots.front().s) return {{knots.front().joint, 1.0}};
  if (s >= knots.back().s) return {{knots.back().joint, 1.0}};
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    if (s <= knots[k + 1].s) {
      const double t = (s - knots[k].s) / (knots[k + 1].s - knots[k].s);
      if (knots[k].joint == knots[k + 1].joint || t <= 0.0) return {{knots[k].joint, 1.0}};
      if (t >= 1.0) return {{knots[k + 1].joint, 1.0}};
      return {{knots[k].joint, 1.0 - t}, {knots[k + 1].joint, t}};
    }
  }
  return {{knots.back().joint, 1.0}};
}

// Knots that hand a capsule from joint to joint at the given world positions, with a blend zone.
std::vector<Knot> chain_knots(const Vec3& a, const Vec3& b, const std::vector<std::pair<Vec3, int>>& joints,
                              double blend) {
  std::vector<Knot> knots;
  const double len = (b - a).norm();
  const double half = 0.5 * blend / len;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const double s = axis_param(joints[i].first, a, b);
    if (i == 0) {
      knots.push_back({s, joints[i].second});
      continue;
    }
    knots.push_back({s - half, joints[i - 1].second});
    knots.push_back({s + half, joints[i].second});
  }
  return knots;
}

std::vector<CapsuleSpec> capsule_layout() {
  const auto& J = kRestJoints;
  std::vector<CapsuleSpec> caps;
  // Atlas: 4 x 3 cells with a margin; the torso spans two cells.
  const double cw = 0.25;
  const double ch = 1.0 / 3.0;
  const double m = 0.02;
  const auto cell = [&](int cx, int cy, int span) {
    return std::array<double, 4>{cx * cw + m, cy * ch + m, span * cw - 2 * m, ch - 2 * m};
  };
  const auto add = [&](Vec3 a, Vec3 b, double r, std::vector<Knot> knots, std::array<double, 4> uv) {
    caps.push_back({a, b, r, std::move(knots), uv[0], uv[1], uv[2], uv[3]});
  };

  // Capsules touch rather than interpenetrate: buried surface would be permanently occluded and
  // drag every frame's confidence down.
  {
    const Vec3 a(0.0, 0.96, 0.0);
    const Vec3 b(0.0, 1.36, 0.0);
    add(a, b, 0.14, chain_knots(a, b, {{J[0], 0}, {J[3], 3}, {J[6], 6}, {J[9], 9}}, 0.08), cell(0, 2, 2));
  }
  {
    const Vec3 a(0.0, 1.62, 0.0);
    const Vec3 b(0.0, 1.80, 0.0);
    add(a, b, 0.10, chain_knots(a, b, {{J[12], 12}, {J[15], 15}}, 0.06), cell(2, 2, 1));
  }
  for (int side = 0; side < 2; ++side) {
    const int hip = 1 + side, knee = 4 + side, ankle = 7 + side, foot = 10 + side;
    const int shoulder = 16 + side, elbow = 18 + side, wrist = 20 + side, hand = 22 + side;
    const double sx = side == 0 ? 1.0 : -1.0;
    {
      const Vec3 a(J[hip].x(), 0.72, 0.0);
      const Vec3 b(J[hip].x(), 0.16, 0.0);
      add(a, b, 0.07, chain_knots(a, b, {{J[hip], hip}, {J[knee], knee}, {J[ankle], ankle}}, 0.08), cell(side, 1, 1));
    }
    {
      const Vec3 a(J[ankle].x(), 0.05, 0.07);
      const Vec3 b(J[ankle].x(), 0.05, 0.18);
      add(a, b, 0.04, chain_knots(a, b, {{J[ankle], ankle}, {J[foot], foot}}, 0.04), cell(2 + side, 1, 1));
    }
    {
      const Vec3 a(sx * 0.19, J[shoulder].y(), 0.0);
      const Vec3 b(sx * 0.78, J[shoulder].y(), 0.0);
      add(a, b, 0.05, chain_knots(a, b, {{J[shoulder], shoulder}, {J[elbow], elbow}, {J[wrist], wrist}}, 0.06),
          cell(side, 0, 1));
    }
    {
      const Vec3 a(sx * 0.88, J[wrist].y(), 0.0);
      const Vec3 b(sx * 0.96, J[wrist].y(), 0.0);
      add(a, b, 0.04, chain_knots(a, b, {{J[wrist], wrist}, {J[hand], hand}}, 0.03), cell(2 + side, 0, 1));
    }
  }
  return caps;
}

// Orthonormal frame (p, q) perpendicular to axis e.
std::pair<Vec3, Vec3> perpendicular_frame(const Vec3& e) {
  const Vec3 helper = std::abs(e.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
  const Vec3 p = helper.cross(e).normalized();
  return {p, e.cross(p)};
}

}  // namespace

SkinnedTemplate make_capsule_person(const CapsulePersonOptions& options) {
  const int M = std::max(3, options.ring_segments);
  const int B = std::max(1, options.body_rings);
  const int C = std::max(1, options.cap_rings);

  SkinnedTemplate t;
  t.parents = kParents;
  t.rest_joints = kRestJoints;
  TriMesh& mesh = t.rest_mesh;

  // Per-vertex record of which capsule owns it, for the girth basis.
  std::vector<std::pair<int, Vec3>> axis_point;

  const auto caps = capsule_layout();
  for (int ci = 0; ci < static_cast<int>(caps.size()); ++ci) {
    const CapsuleSpec& cap = caps[ci];
    const Vec3 axis = cap.b - cap.a;
    const double len = axis.norm();
    const Vec3 e = axis / len;
    const auto [p, q] = perpendicular_frame(e);

    // Profile rings: (axial offset from a, ring radius, arc-length coordinate).
    struct Ring {
      double h, rho, arc;
    };
    std::vector<Ring> rings;
    const double cap_arc = 0.5 * kPi * cap.radius;
    for (int k = 1; k <= C; ++k) {
      const double alpha = -0.5 * kPi + k * 0.5 * kPi / (C + 1);
      rings.push_back({cap.radius * std::sin(alpha), cap.radius * std::cos(alpha), cap_arc * k / (C + 1)});
    }
    for (int k = 0; k <= B; ++k) rings.push_back({len * k / B, cap.radius, cap_arc + len * k / B});
    for (int k = C; k >= 1; --k) {
      const double alpha = 0.5 * kPi - k * 0.5 * kPi / (C + 1);
      rings.push_back({len + cap.radius * std::sin(alpha), cap.radius * std::cos(alpha),
                       cap_arc + len + cap_arc * (C + 1 - k) / (C + 1)});
    }
    const double total_arc = 2 * cap_arc + len;

    const auto add_vertex = [&](const Vec3& pos) {
      mesh.vertices.push_back(pos);
      const double s = axis_param(pos, cap.a, cap.b);
      t.skin_weights.push_back(knot_weights(cap.knots, s));
      axis_point.push_back({ci, cap.a + std::clamp(s, 0.0, 1.0) * axis});
      return static_cast<int>(mesh.vertices.size()) - 1;
    };
    const auto uv_of = [&](double col, double arc) {
      return Vec2(cap.u0 + cap.du * col / M, cap.v0 + cap.dv * arc / total_arc);
    };

    const int bottom = add_vertex(cap.a - cap.radius * e);
    std::vector<int> ring_start;
    for (const Ring& r : rings) {
      ring_start.push_back(static_cast<int>(mesh.vertices.size()));
      for (int j = 0; j < M; ++j) {
        const double phi = 2 * kPi * j / M;
        add_vertex(cap.a + r.h * e + r.rho * (std::cos(phi) * p + std::sin(phi) * q));
      }
    }
    const int top = add_vertex(cap.b + cap.radius * e);

    const auto idx = [&](int ring, int j) { return ring_start[ring] + (j % M); };
    // Bottom fan: outward normals point along -e, so wind (pole, j+1, j).
    for (int j = 0; j < M; ++j) {
      mesh.faces.push_back({bottom, idx(0, j + 1), idx(0, j)});
      mesh.uv_corners.push_back({uv_of(j + 0.5, 0.0), uv_of(j + 1, rings[0].arc), uv_of(j, rings[0].arc)});
    }
    for (int r = 0; r + 1 < static_cast<int>(rings.size()); ++r) {
      for (int j = 0; j < M; ++j) {
        const int a00 = idx(r, j), a01 = idx(r, j + 1), a10 = idx(r + 1, j), a11 = idx(r + 1, j + 1);
        const Vec2 t00 = uv_of(j, rings[r].arc), t01 = uv_of(j + 1, rings[r].arc);
        const Vec2 t10 = uv_of(j, rings[r + 1].arc), t11 = uv_of(j + 1, rings[r + 1].arc);
        mesh.faces.push_back({a00, a01, a11});
        mesh.uv_corners.push_back({t00, t01, t11});
        mesh.faces.push_back({a00, a11, a10});
        mesh.uv_corners.push_back({t00, t11, t10});
      }
    }
    const int last = static_cast<int>(rings.size()) - 1;
    for (int j = 0; j < M; ++j) {
      mesh.faces.push_back({top, idx(last, j), idx(last, j + 1)});
      mesh.uv_corners.push_back({uv_of(j + 0.5, total_arc), uv_of(j, rings[last].arc), uv_of(j + 1, rings[last].arc)});
    }
  }
  mesh = compute_normals(std::move(mesh));

  // Shape basis: 0 height, 1 girth, 2 shoulder width, 3 belly.
  const std::size_t nv = mesh.vertices.size();
  const int K = std::max(0, std::min(options.shape_count, 4));
  t.shape_basis.assign(K, std::vector<Vec3>(nv, Vec3::Zero()));
  t.joint_shape_basis.assign(K, {});
  for (int k = 0; k < K; ++k) t.joint_shape_basis[k].fill(Vec3::Zero());
  for (std::size_t v = 0; v < nv; ++v) {
    const Vec3& x = mesh.vertices[v];
    if (K > 0) t.shape_basis[0][v] = Vec3(0, 0.05 * x.y(), 0);
    if (K > 1) {
      const Vec3 radial = x - axis_point[v].second;
      const double rl = radial.norm();
      if (rl > 0) t.shape_basis[1][v] = 0.01 * radial / rl;
    }
    if (K > 2) t.shape_basis[2][v] = Vec3(0.05 * x.x(), 0, 0);
    if (K > 3 && axis_point[v].first == 0) {
      const double front = std::max(0.0, mesh.vertex_normals[v].z());
      const double belly = std::exp(-std::pow((x.y() - 1.05) / 0.12, 2));
      t.shape_basis[3][v] = Vec3(0, 0, 0.03 * front * belly);
    }
  }
  for (int j = 0; j < kJointCount; ++j) {
    if (K > 0) t.joint_shape_basis[0][j] = Vec3(0, 0.05 * kRestJoints[j].y(), 0);
    if (K > 2) t.joint_shape_basis[2][j] = Vec3(0.05 * kRestJoints[j].x(), 0, 0);
  }
  t.validate();
  return t;
}

}  // namespace avh
