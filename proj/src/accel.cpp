#include "avh/accel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace avh {

namespace {

constexpr int kLeafSize = 4;

bool finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

// Slab test against [min(t_min, 0), t_max]. A miss is reported explicitly: with t_max = +inf an
// "infinite entry distance" sentinel would not compare greater than the limit.
bool ray_box(const Aabb& box, const Vec3& origin, const Vec3& inv_dir, double t_min, double t_max) {
  double t0 = std::min(t_min, 0.0);
  double t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    double lo = (box.min[a] - origin[a]) * inv_dir[a];
    double hi = (box.max[a] - origin[a]) * inv_dir[a];
    if (lo > hi) std::swap(lo, hi);
    // NaN from 0 * inf (origin on a slab plane with zero direction) keeps the interval.
    if (lo > t0) t0 = lo;
    if (hi < t1) t1 = hi;
    if (t0 > t1) return false;
  }
  return true;
}

double point_box_sq(const Aabb& box, const Vec3& p) {
  const Vec3 d = (box.min - p).cwiseMax(Vec3::Zero()).cwiseMax(p - box.max);
  return d.squaredNorm();
}

}  // namespace

std::optional<TriangleHit> intersect_triangle(const Vec3& origin, const Vec3& direction, const Vec3& a,
                                              const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = direction.cross(e2);
  const double det = e1.dot(p);
  if (det == 0.0 || !std::isfinite(det)) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (!std::isfinite(t)) return std::nullopt;
  return TriangleHit{t, Vec3(1.0 - u - v, u, v)};
}

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const auto make = [&](double wa, double wb, double wc) {
    ClosestPoint cp;
    cp.barycentric = Vec3(wa, wb, wc);
    cp.position = wa * a + wb * b + wc * c;
    cp.distance_sq = (cp.position - p).squaredNorm();
    return cp;
  };
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return make(1, 0, 0);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return make(0, 1, 0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return make(1 - v, v, 0);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return make(0, 0, 1);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return make(1 - w, 0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return make(0, 1 - w, w);
  }

  const double denom = va + vb + vc;
  if (denom == 0.0) {
    // Degenerate triangle: nearest of the three edges handled above, fall back to vertex a.
    return make(1, 0, 0);
  }
  const double v = vb / denom;
  const double w = vc / denom;
  return make(1 - v - w, v, w);
}

SurfaceAccel::SurfaceAccel(TriMesh mesh, double self_hit_factor) {
  if (mesh.faces.empty()) throw MeshError("SurfaceAccel: mesh has no faces");
  mesh.validate();
  mesh_ = std::make_shared<const TriMesh>(std::move(mesh));
  self_eps_ = self_hit_factor * bounds(*mesh_).diagonal();

  const int n = static_cast<int>(mesh_->faces.size());
  face_order_.resize(n);
  std::iota(face_order_.begin(), face_order_.end(), 0);
  std::vector<Vec3> centroids(n);
  for (int f = 0; f < n; ++f) {
    const Face& fc = mesh_->faces[f];
    centroids[f] = (mesh_->vertices[fc[0]] + mesh_->vertices[fc[1]] + mesh_->vertices[fc[2]]) / 3.0;
  }
  nodes_.reserve(2 * n / kLeafSize + 2);
  build(0, n, centroids);
}

int SurfaceAccel::build(int first, int count, std::vector<Vec3>& centroids) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Aabb box;
  Aabb centroid_box;
  for (int i = first; i < first + count; ++i) {
    const Face& f = mesh_->faces[face_order_[i]];
    for (int k = 0; k < 3; ++k) box.extend(mesh_->vertices[f[k]]);
    centroid_box.extend(centroids[face_order_[i]]);
  }
  nodes_[index].box = box;

  if (count <= kLeafSize) {
    nodes_[index].first = first;
    nodes_[index].count = count;
    return index;
  }

  // Median split on the widest centroid axis; ties by face index keep the build deterministic.
  const Vec3 extent = centroid_box.max - centroid_box.min;
  int axis = 0;
  if (extent[1] > extent[axis]) axis = 1;
  if (extent[2] > extent[axis]) axis = 2;
  const int mid = first + count / 2;
  std::nth_element(face_order_.begin() + first, face_order_.begin() + mid, face_order_.begin() + first + count,
                   [&](int a, int b) {
                     if (centroids[a][axis] != centroids[b][axis]) return centroids[a][axis] < centroids[b][axis];
                     return a < b;
                   });
  const int left = build(first, mid - first, centroids);
  const int right = build(mid, first + count - mid, centroids);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

std::size_t SurfaceAccel::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.left < 0; }));
}

void SurfaceAccel::validate_ray(const Vec3& origin, const Vec3& direction, double max_dist) const {
  if (!finite(origin) || !finite(direction) || std::isnan(max_dist)) {
    throw MeshError("ray_cast: non-finite ray");
  }
}

std::optional<RayHit> SurfaceAccel::ray_cast(const Vec3& origin, const Vec3& direction, double max_dist) const {
  return ray_cast_range(origin, direction, self_eps_, max_dist);
}

std::optional<RayHit> SurfaceAccel::ray_cast_range(const Vec3& origin, const Vec3& direction, double min_dist,
                                                   double max_dist) const {
  validate_ray(origin, direction, max_dist);
  const Vec3 inv_dir = direction.cwiseInverse();
  double best_t = max_dist;
  int best_face = -1;
  Vec3 best_bary = Vec3::Zero();

  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!ray_box(node.box, origin, inv_dir, min_dist, best_t)) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int f = face_order_[i];
        const Face& fc = mesh_->faces[f];
        const auto hit = intersect_triangle(origin, direction, mesh_->vertices[fc[0]], mesh_->vertices[fc[1]],
                                            mesh_->vertices[fc[2]]);
        if (!hit || hit->t < min_dist || hit->t > best_t) continue;
        if (hit->t < best_t || best_face < 0 || f < best_face) {
          best_t = hit->t;
          best_face = f;
          best_bary = hit->barycentric;
        }
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.left;
    }
  }
  if (best_face < 0) return std::nullopt;

  RayHit hit;
  hit.face_index = best_face;
  hit.barycentric = best_bary;
  hit.distance = std::max(best_t, 0.0);
  hit.position = origin + best_t * direction;
  hit.hit_normal = surface_normal(*mesh_, best_face, best_bary);
  return hit;
}

bool SurfaceAccel::occluded(const Vec3& origin, const Vec3& direction, double max_dist) const {
  validate_ray(origin, direction, max_dist);
  const Vec3 inv_dir = direction.cwiseInverse();
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!ray_box(node.box, origin, inv_dir, self_eps_, max_dist)) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const Face& fc = mesh_->faces[face_order_[i]];
        const auto hit = intersect_triangle(origin, direction, mesh_->vertices[fc[0]], mesh_->vertices[fc[1]],
                                            mesh_->vertices[fc[2]]);
        if (hit && hit->t >= self_eps_ && hit->t <= max_dist) return true;
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.left;
    }
  }
  return false;
}

ClosestPoint SurfaceAccel::closest_point(const Vec3& p) const {
  if (!finite(p)) throw MeshError("closest_point: non-finite query");
  ClosestPoint best;
  best.distance_sq = std::numeric_limits<double>::infinity();

  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (point_box_sq(node.box, p) > best.distance_sq) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int f = face_order_[i];
        const Face& fc = mesh_->faces[f];
        ClosestPoint cp =
            closest_point_on_triangle(p, mesh_->vertices[fc[0]], mesh_->vertices[fc[1]], mesh_->vertices[fc[2]]);
        if (cp.distance_sq < best.distance_sq || (cp.distance_sq == best.distance_sq && f < best.face_index)) {
          cp.face_index = f;
          best = cp;
        }
      }
    } else {
      // Visit the nearer child first.
      const double dl = point_box_sq(nodes_[node.left].box, p);
      const double dr = point_box_sq(nodes_[node.right].box, p);
      if (dl <= dr) {
        stack[top++] = node.right;
        stack[top++] = node.left;
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
  }
  return best;
}

}  // namespace avh
