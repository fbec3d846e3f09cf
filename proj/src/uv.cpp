#include "avh/uv.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace avh {

namespace {

constexpr double kInsideTol = 1e-12;
constexpr double kStrictInside = 1e-9;

bool inside(const Vec3& b) { return b[0] >= -kInsideTol && b[1] >= -kInsideTol && b[2] >= -kInsideTol; }
bool strictly_inside(const Vec3& b) { return b[0] > kStrictInside && b[1] > kStrictInside && b[2] > kStrictInside; }

Vec3 clamp_bary(Vec3 b) {
  b = b.cwiseMax(Vec3::Zero());
  return b / b.sum();
}

struct Bilinear {
  int x0, x1, y0, y1;
  double fx, fy;
};

// Texel-space sample position: x = u * W - 0.5, y (top-down rows) = (1 - v) * H - 0.5.
Bilinear bilinear_taps(const Vec2& uv, int width, int height) {
  const double x = uv.x() * width - 0.5;
  const double y = (1.0 - uv.y()) * height - 0.5;
  const double xf = std::floor(x);
  const double yf = std::floor(y);
  Bilinear b;
  b.fx = x - xf;
  b.fy = y - yf;
  const auto clamp = [](double v, int hi) { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi))); };
  b.x0 = clamp(xf, width - 1);
  b.x1 = clamp(xf + 1, width - 1);
  b.y0 = clamp(yf, height - 1);
  b.y1 = clamp(yf + 1, height - 1);
  return b;
}

}  // namespace

std::optional<Vec3> uv_barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  const Vec2 v0 = b - a;
  const Vec2 v1 = c - a;
  const Vec2 v2 = p - a;
  const double den = v0.x() * v1.y() - v1.x() * v0.y();
  if (den == 0.0 || !std::isfinite(den)) return std::nullopt;
  const double v = (v2.x() * v1.y() - v1.x() * v2.y()) / den;
  const double w = (v0.x() * v2.y() - v2.x() * v0.y()) / den;
  return Vec3(1.0 - v - w, v, w);
}

UvIndex::UvIndex(const TriMesh& mesh, int cells) : uvs_(mesh.uv_corners) {
  if (!mesh.has_uvs()) throw MeshError("UvIndex: mesh has no UVs");
  cells_ = cells > 0 ? cells
                     : std::clamp(static_cast<int>(std::sqrt(static_cast<double>(mesh.faces.size()) / 2.0)), 1, 512);
  buckets_.resize(static_cast<std::size_t>(cells_) * cells_);
  for (int f = 0; f < static_cast<int>(uvs_.size()); ++f) {
    Vec2 lo = uvs_[f][0];
    Vec2 hi = uvs_[f][0];
    for (int k = 1; k < 3; ++k) {
      lo = lo.cwiseMin(uvs_[f][k]);
      hi = hi.cwiseMax(uvs_[f][k]);
    }
    const auto cell = [&](double t) { return std::clamp(static_cast<int>(std::floor(t * cells_)), 0, cells_ - 1); };
    for (int cy = cell(lo.y()); cy <= cell(hi.y()); ++cy) {
      for (int cx = cell(lo.x()); cx <= cell(hi.x()); ++cx) {
        buckets_[static_cast<std::size_t>(cy) * cells_ + cx].push_back(f);
      }
    }
  }
}

std::optional<UvLocation> UvIndex::locate(const Vec2& uv) const {
  if (!(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0)) return std::nullopt;
  const int cx = std::clamp(static_cast<int>(std::floor(uv.x() * cells_)), 0, cells_ - 1);
  const int cy = std::clamp(static_cast<int>(std::floor(uv.y() * cells_)), 0, cells_ - 1);
  std::optional<UvLocation> found;
  for (int f : buckets_[static_cast<std::size_t>(cy) * cells_ + cx]) {
    const auto b = uv_barycentric(uv, uvs_[f][0], uvs_[f][1], uvs_[f][2]);
    if (!b || !inside(*b)) continue;
    if (!found) {
      found = UvLocation{f, clamp_bary(*b)};
    } else if (strictly_inside(*b)) {
      overlaps_.fetch_add(1, std::memory_order_relaxed);
      break;
    }
  }
  return found;
}

std::vector<std::uint8_t> TexelRaster::coverage_mask() const {
  std::vector<std::uint8_t> mask(texels.size());
  for (std::size_t i = 0; i < texels.size(); ++i) mask[i] = texels[i].face_index >= 0 ? 1 : 0;
  return mask;
}

TexelRaster rasterize_texels(const TriMesh& mesh, int width, int height) {
  if (!mesh.has_uvs()) throw MeshError("rasterize_texels: mesh has no UVs");
  if (width <= 0 || height <= 0) throw MeshError("rasterize_texels: resolution must be positive");
  TexelRaster raster;
  raster.width = width;
  raster.height = height;
  raster.texels.assign(static_cast<std::size_t>(width) * height, UvLocation{});

  for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
    const FaceUv& t = mesh.uv_corners[f];
    Vec2 lo = t[0];
    Vec2 hi = t[0];
    for (int k = 1; k < 3; ++k) {
      lo = lo.cwiseMin(t[k]);
      hi = hi.cwiseMax(t[k]);
    }
    // Texel x covers u-centers (x + 0.5) / W; rows run top-down.
    const int x0 = std::max(0, static_cast<int>(std::ceil(lo.x() * width - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(hi.x() * width - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil((1.0 - hi.y()) * height - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor((1.0 - lo.y()) * height - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Vec2 uv = texel_center_uv(x, y, width, height);
        const auto b = uv_barycentric(uv, t[0], t[1], t[2]);
        if (!b || !inside(*b)) continue;
        UvLocation& slot = raster.texels[static_cast<std::size_t>(y) * width + x];
        if (slot.face_index < 0) {
          slot = UvLocation{f, clamp_bary(*b)};
        } else if (strictly_inside(*b)) {
          ++raster.overlap_warnings;
        }
      }
    }
  }
  if (raster.overlap_warnings > 0) {
    spdlog::warn("rasterize_texels: {} texels fall inside overlapping UV triangles; lowest face index kept",
                 raster.overlap_warnings);
  }
  return raster;
}

SurfaceSample surface_at(const TriMesh& mesh, const UvLocation& loc) {
  SurfaceSample s;
  s.face_index = loc.face_index;
  s.barycentric = loc.barycentric;
  s.position = interpolate(mesh.vertices, mesh.faces[loc.face_index], loc.barycentric);
  s.normal = surface_normal(mesh, loc.face_index, loc.barycentric);
  return s;
}

std::optional<SurfaceSample> texel_to_surface(const TriMesh& mesh, const UvIndex& index, const Vec2& uv) {
  const auto loc = index.locate(uv);
  if (!loc) return std::nullopt;
  return surface_at(mesh, *loc);
}

std::optional<SurfaceSample> texel_to_surface(const TriMesh& mesh, const Vec2& uv) {
  const UvIndex index(mesh);
  auto result = texel_to_surface(mesh, index, uv);
  if (index.overlap_warnings() > 0) spdlog::warn("texel_to_surface: uv lies in overlapping UV triangles");
  return result;
}

Vec2 uv_at(const TriMesh& mesh, int face, const Vec3& bary) {
  const FaceUv& t = mesh.uv_corners[face];
  return bary[0] * t[0] + bary[1] * t[1] + bary[2] * t[2];
}

Vec3 sample_texture(const RgbImage& image, const Vec2& uv) {
  if (image.empty()) throw MeshError("sample_texture: empty image");
  const Bilinear b = bilinear_taps(uv, image.width, image.height);
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - b.fx) * image.at(b.x0, b.y0, c) + b.fx * image.at(b.x1, b.y0, c);
    const double bottom = (1 - b.fx) * image.at(b.x0, b.y1, c) + b.fx * image.at(b.x1, b.y1, c);
    out[c] = ((1 - b.fy) * top + b.fy * bottom) / 255.0;
  }
  return out;
}

std::vector<float> sample_grid(const FloatGrid& grid, const Vec2& uv) {
  const Bilinear b = bilinear_taps(uv, grid.width, grid.height);
  std::vector<float> out(grid.channels);
  for (int c = 0; c < grid.channels; ++c) {
    const double top = (1 - b.fx) * grid.at(b.x0, b.y0, c) + b.fx * grid.at(b.x1, b.y0, c);
    const double bottom = (1 - b.fx) * grid.at(b.x0, b.y1, c) + b.fx * grid.at(b.x1, b.y1, c);
    out[c] = static_cast<float>((1 - b.fy) * top + b.fy * bottom);
  }
  return out;
}

FloatGrid resample_grid(const FloatGrid& grid, int width, int height) {
  if (grid.width == width && grid.height == height) return grid;
  FloatGrid out(width, height, grid.channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto v = sample_grid(grid, texel_center_uv(x, y, width, height));
      for (int c = 0; c < grid.channels; ++c) out.at(x, y, c) = v[c];
    }
  }
  return out;
}

}  // namespace avh
