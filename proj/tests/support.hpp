#pragma once

// Test fixtures and independent reference implementations shared by the unit tests and the
// acceptance runner. The references favour the most literal formulation over speed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "avh/accel.hpp"
#include "avh/baking.hpp"
#include "avh/decoder.hpp"
#include "avh/mesh.hpp"
#include "avh/skinning.hpp"

namespace avh::test {

// ---- fixtures ----

/// Axis-aligned box [lo, hi], outward winding, one UV chart per side in a 3 x 2 atlas.
TriMesh box_mesh(const Vec3& lo, const Vec3& hi, bool with_top = true);

/// n x n quad grid in the plane z = `z` over [0, size]^2, +z facing, UV = xy / size.
TriMesh grid_mesh(int n, double size, double z = 0.0);

/// Unit triangle in the z = 0 plane, +z facing, covering the lower-left UV half.
TriMesh single_triangle();

/// `count` random triangles of edge scale `scale` inside the unit cube, with smooth normals.
TriMesh random_soup(int count, double scale, std::uint64_t seed);

/// Random closed-ish surface: a UV sphere with radially jittered vertices.
TriMesh bumpy_sphere(int rings, int segments, double jitter, std::uint64_t seed);

/// Latitude-longitude sphere with per-corner UVs (u around, v from the south pole up) and a
/// procedural texture when `texture_size` > 0.
TriMesh uv_sphere(int rings, int segments, double radius, int texture_size = 0);

/// Concatenates meshes (UVs kept when every part has them).
TriMesh merge(const std::vector<TriMesh>& parts);

/// A capsule-person template with few vertices for quick tests.
SkinnedTemplate small_person();

/// Fresh empty directory under the system temp directory.
std::filesystem::path temp_dir(const std::string& name);

// ---- references ----

struct RefHit {
  int face = -1;
  double t = 0.0;
  Vec3 bary = Vec3::Zero();
};

/// Every face tested in index order; nearest t in [t_min, t_max] wins, the first face on equal t.
std::optional<RefHit> scan_ray(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min, double t_max);

/// Count of faces hit with t >= eps (used for visibility); any hit at all means occluded.
bool scan_occluded(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double eps);

/// Brute-force nearest surface point distance.
double scan_closest_distance(const TriMesh& mesh, const Vec3& p);

struct RefMatch {
  int face = -1;
  double distance = 0.0;
  bool positive = false;
};

/// Correspondence rule written out literally: collect every intersection along +n and -n within
/// [-eps, max_dist], keep the nearest per direction, take the scan normal there, then
///  - both candidates with the same polarity: the nearer one;
///  - mixed polarity: the positive one, unless it is more than twice as far as the negative one.
std::optional<RefMatch> reference_match(const TriMesh& scan, const Vec3& r, const Vec3& n, double eps,
                                        double max_dist);

/// Per-face visibility with the library's direction set but a linear scan over every face.
std::vector<double> reference_face_visibility(const TriMesh& mesh, int samples, double eps);

/// Uniform Laplacian through a dense adjacency matrix: (D^-1 A - I) X.
std::vector<Vec3> reference_laplacian(const TriMesh& mesh);

/// Fast marching inpainting without a heap: each step rescans all band texels for the smallest
/// (T, index). Same update rule and weights as the library.
FloatGrid reference_inpaint(const FloatGrid& image, const std::vector<std::uint8_t>& known, double radius);

/// Optimal k-means partition by enumerating every assignment of n points to k labels.
/// Returns the labels with the smallest within-cluster sum of squares (first such labeling wins).
std::vector<int> exhaustive_kmeans(const Eigen::MatrixXd& points, int k);

/// Two-sided Hausdorff distance approximated on vertices: max over vertices of a of the distance
/// to surface b, and vice versa (surface distance computed exactly per face).
double vertex_hausdorff(const TriMesh& a, const TriMesh& b);

/// Random pose with every angle uniform in [-range, range].
Theta random_theta(std::mt19937_64& rng, double range);

/// Smooth deterministic training target at `side` resolution: both masks 1 everywhere.
DecoderTargetT<double> smooth_target(int side, double phase, double displacement_max);

}  // namespace avh::test
