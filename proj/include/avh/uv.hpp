#pragma once

#include <atomic>
#include <optional>
#include <vector>

#include "avh/mesh.hpp"

namespace avh {

/// Location of a UV coordinate on a mesh: the face whose UV triangle contains it plus barycentrics.
struct UvLocation {
  int face_index = -1;
  Vec3 barycentric;
};

struct SurfaceSample {
  Vec3 position;
  Vec3 normal;
  int face_index = -1;
  Vec3 barycentric;
};

/// Barycentric coordinates of p in the 2D triangle (a, b, c); nullopt for a zero-area triangle.
std::optional<Vec3> uv_barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);

/// Bucket grid over the UV square for point-in-UV-triangle lookups.
///
/// When UV triangles overlap, the lowest face index wins and overlap_warnings() is bumped.
class UvIndex {
 public:
  explicit UvIndex(const TriMesh& mesh, int cells = 0);

  std::optional<UvLocation> locate(const Vec2& uv) const;

  std::size_t overlap_warnings() const { return overlaps_.load(std::memory_order_relaxed); }

 private:
  std::vector<FaceUv> uvs_;
  int cells_;
  std::vector<std::vector<int>> buckets_;
  mutable std::atomic<std::size_t> overlaps_{0};
};

/// Texel -> face assignment for a W x H grid (texel centers, first face index wins).
struct TexelRaster {
  int width = 0;
  int height = 0;
  std::vector<UvLocation> texels;  // face_index < 0 outside every chart
  std::size_t overlap_warnings = 0;

  bool covered(int x, int y) const { return texels[static_cast<std::size_t>(y) * width + x].face_index >= 0; }
  const UvLocation& at(int x, int y) const { return texels[static_cast<std::size_t>(y) * width + x]; }
  std::vector<std::uint8_t> coverage_mask() const;
};

TexelRaster rasterize_texels(const TriMesh& mesh, int width, int height);

/// Surface position and interpolated unit normal at a UV location.
SurfaceSample surface_at(const TriMesh& mesh, const UvLocation& loc);

/// Maps a UV coordinate onto the mesh surface; nullopt when uv lies in no chart.
std::optional<SurfaceSample> texel_to_surface(const TriMesh& mesh, const Vec2& uv);
std::optional<SurfaceSample> texel_to_surface(const TriMesh& mesh, const UvIndex& index, const Vec2& uv);

/// UV coordinate of a point given by face and barycentrics.
Vec2 uv_at(const TriMesh& mesh, int face, const Vec3& bary);

/// Bilinear lookup with clamp-to-edge addressing, returned in [0, 1].
/// uv (0, 0) addresses the center of the bottom-left texel; texel x has its center at u = (x + 0.5) / W.
Vec3 sample_texture(const RgbImage& image, const Vec2& uv);

/// Same addressing for float grids; returns all channels.
std::vector<float> sample_grid(const FloatGrid& grid, const Vec2& uv);

/// Bilinear resample of a grid to a new resolution (texel centers mapped through UV space).
FloatGrid resample_grid(const FloatGrid& grid, int width, int height);

}  // namespace avh
