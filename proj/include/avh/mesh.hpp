#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace avh {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Raised for malformed geometry (index out of range, degenerate input, missing UVs).
class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB image, rows stored top to bottom.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const { return width <= 0 || height <= 0; }

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// W x H x C grid of 32-bit floats, rows stored top to bottom, channels interleaved.
///
/// Texel (x, y) has its center at uv = ((x + 0.5) / W, 1 - (y + 0.5) / H), so uv (0, 0)
/// is the center of the bottom-left texel after clamping.
struct FloatGrid {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  FloatGrid() = default;
  FloatGrid(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t texel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool same_shape(const FloatGrid& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// UV coordinate of the center of texel (x, y) in a W x H grid.
inline Vec2 texel_center_uv(int x, int y, int width, int height) {
  return {(x + 0.5) / width, 1.0 - (y + 0.5) / height};
}

using Face = std::array<int, 3>;
using FaceUv = std::array<Vec2, 3>;

/// Indexed triangle mesh. UVs are stored per face corner so chart seams need no vertex splits.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<FaceUv> uv_corners;   // empty, or one entry per face
  std::vector<Vec3> vertex_normals; // empty, or one entry per vertex
  std::optional<RgbImage> texture;

  bool has_uvs() const { return !uv_corners.empty() && uv_corners.size() == faces.size(); }
  bool has_normals() const { return !vertex_normals.empty() && vertex_normals.size() == vertices.size(); }

  /// Throws MeshError when an index is out of range or UV/normal arrays have the wrong length.
  void validate() const;
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
  bool valid() const { return (min.array() <= max.array()).all(); }
  Vec3 center() const { return 0.5 * (min + max); }
  double diagonal() const { return valid() ? (max - min).norm() : 0.0; }
};

Aabb bounds(const TriMesh& mesh);

/// Unnormalized face normal (cross product of the two edges); its norm is twice the area.
Vec3 face_cross(const TriMesh& mesh, int face);

/// Area-weighted unit vertex normals. Zero-area faces contribute nothing;
/// throws MeshError("degenerate mesh") when every face is degenerate.
TriMesh compute_normals(TriMesh mesh);

/// Barycentric interpolation of a per-vertex attribute over one face.
template <typename T>
T interpolate(const std::vector<T>& values, const Face& f, const Vec3& bary) {
  return bary[0] * values[f[0]] + bary[1] * values[f[1]] + bary[2] * values[f[2]];
}

/// Smooth normal at a surface point; falls back to the face normal when vertex normals are absent.
Vec3 surface_normal(const TriMesh& mesh, int face, const Vec3& bary);

}  // namespace avh
