#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "avh/mesh.hpp"

namespace avh {

struct RayHit {
  Vec3 position;
  int face_index = -1;
  Vec3 barycentric;  // weights of the face's three corners
  double distance = 0.0;
  Vec3 hit_normal;
};

struct ClosestPoint {
  Vec3 position;
  int face_index = -1;
  Vec3 barycentric;
  double distance_sq = 0.0;
};

/// Moller-Trumbore intersection with inclusive edges, so rays through shared edges
/// never slip between adjacent triangles. Returns the ray parameter and barycentrics.
struct TriangleHit {
  double t;
  Vec3 barycentric;
};
std::optional<TriangleHit> intersect_triangle(const Vec3& origin, const Vec3& direction, const Vec3& a,
                                              const Vec3& b, const Vec3& c);

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Default self-hit guard relative to the bounding-box diagonal.
inline constexpr double kDefaultSelfHitFactor = 1e-6;

/// Immutable bounding-volume hierarchy over a triangle mesh.
///
/// All queries are const and touch no shared mutable state, so one instance can be
/// queried from any number of threads. Results match an exhaustive per-face scan:
/// the nearest hit wins and equal distances resolve to the lowest face index.
class SurfaceAccel {
 public:
  explicit SurfaceAccel(TriMesh mesh, double self_hit_factor = kDefaultSelfHitFactor);

  const TriMesh& mesh() const { return *mesh_; }

  /// Hits with distance below this value are treated as self-hits and skipped.
  double self_hit_epsilon() const { return self_eps_; }

  /// Nearest hit with self_hit_epsilon() <= distance <= max_dist.
  std::optional<RayHit> ray_cast(const Vec3& origin, const Vec3& direction, double max_dist) const;

  /// Nearest hit with min_dist <= t <= max_dist. A slightly negative min_dist accepts hits at the
  /// origin itself; the reported distance is clamped to be non-negative.
  std::optional<RayHit> ray_cast_range(const Vec3& origin, const Vec3& direction, double min_dist,
                                       double max_dist) const;

  /// True when any face is hit beyond the self-hit guard. Cheaper than ray_cast.
  bool occluded(const Vec3& origin, const Vec3& direction, double max_dist) const;

  /// Nearest surface point; ties resolve to the lowest face index.
  ClosestPoint closest_point(const Vec3& p) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const;

 private:
  struct Node {
    Aabb box;
    int left = -1;   // child index, or -1 for a leaf
    int right = -1;
    int first = 0;   // first entry in face_order_ for leaves
    int count = 0;
  };

  int build(int first, int count, std::vector<Vec3>& centroids);
  void validate_ray(const Vec3& origin, const Vec3& direction, double max_dist) const;

  std::shared_ptr<const TriMesh> mesh_;
  std::vector<Node> nodes_;
  std::vector<int> face_order_;
  double self_eps_ = 0.0;
};

}  // namespace avh
