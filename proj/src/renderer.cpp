#include "avh/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "avh/io.hpp"
#include "avh/uv.hpp"

namespace avh {

namespace {

struct PosLess {
  bool operator()(const Vec3& a, const Vec3& b) const {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  }
};

TriMesh subdivide_once(const TriMesh& m) {
  // Canonical vertex per exact position, so edges across position-duplicated vertices share a midpoint.
  std::map<Vec3, int, PosLess> first_at;
  std::vector<int> canon(m.vertices.size());
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    canon[v] = first_at.emplace(m.vertices[v], static_cast<int>(v)).first->second;
  }
  TriMesh out;
  out.vertices = m.vertices;
  const bool normals = m.has_normals();
  if (normals) out.vertex_normals = m.vertex_normals;
  out.texture = m.texture;
  std::map<std::pair<int, int>, int> midpoint;
  const auto mid = [&](int a, int b) {
    const std::pair<int, int> key = std::minmax(canon[a], canon[b]);
    const auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    const int idx = static_cast<int>(out.vertices.size());
    out.vertices.push_back(0.5 * (m.vertices[key.first] + m.vertices[key.second]));
    if (normals) {
      const Vec3 n = m.vertex_normals[key.first] + m.vertex_normals[key.second];
      out.vertex_normals.push_back(n.norm() > 0.0 ? Vec3(n.normalized()) : m.vertex_normals[key.first]);
    }
    midpoint.emplace(key, idx);
    return idx;
  };
  const bool uvs = m.has_uvs();
  out.faces.reserve(m.faces.size() * 4);
  if (uvs) out.uv_corners.reserve(m.faces.size() * 4);
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto [a, b, c] = m.faces[f];
    const int ab = mid(a, b);
    const int bc = mid(b, c);
    const int ca = mid(c, a);
    out.faces.push_back({a, ab, ca});
    out.faces.push_back({ab, b, bc});
    out.faces.push_back({ca, bc, c});
    out.faces.push_back({ab, bc, ca});
    if (uvs) {
      const FaceUv& t = m.uv_corners[f];
      const Vec2 tab = 0.5 * (t[0] + t[1]);
      const Vec2 tbc = 0.5 * (t[1] + t[2]);
      const Vec2 tca = 0.5 * (t[2] + t[0]);
      out.uv_corners.push_back({t[0], tab, tca});
      out.uv_corners.push_back({tab, t[1], tbc});
      out.uv_corners.push_back({tca, tbc, t[2]});
      out.uv_corners.push_back({tab, tbc, tca});
    }
  }
  return out;
}

}  // namespace

TriMesh subdivide(const TriMesh& mesh, int levels) {
  if (levels < 0) throw std::invalid_argument("subdivide: levels must be >= 0");
  mesh.validate();
  TriMesh m = mesh;
  for (int i = 0; i < levels; ++i) m = subdivide_once(m);
  return m;
}

std::vector<std::optional<Vec2>> vertex_uvs(const TriMesh& mesh) {
  std::vector<std::optional<Vec2>> uv(mesh.vertices.size());
  if (!mesh.has_uvs()) return uv;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      auto& slot = uv[mesh.faces[f][k]];
      if (!slot) slot = mesh.uv_corners[f][k];
    }
  }
  return uv;
}

TriMesh apply_displacement(const TriMesh& mesh, const FloatGrid& d, const FloatGrid* finger_mask,
                           DisplaceStats* stats) {
  if (d.channels != 3) throw std::invalid_argument("apply_displacement: displacement grid must have 3 channels");
  const FloatGrid* field = &d;
  FloatGrid masked;
  if (finger_mask) {
    if (finger_mask->width != d.width || finger_mask->height != d.height || finger_mask->channels < 1) {
      throw std::invalid_argument("apply_displacement: finger mask must match the displacement grid");
    }
    masked = d;
    for (std::size_t t = 0; t < d.texel_count(); ++t) {
      if (finger_mask->data[t * finger_mask->channels] >= 0.5f) {
        for (int c = 0; c < 3; ++c) masked.data[t * 3 + c] = 0.0f;
      }
    }
    field = &masked;
  }
  DisplaceStats local;
  TriMesh out = mesh;
  const auto uvs = vertex_uvs(mesh);
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const auto& uv = uvs[v];
    if (!uv || !uv->allFinite() || (uv->array() < 0.0).any() || (uv->array() > 1.0).any()) {
      ++local.invalid_uv;
      continue;
    }
    const auto s = sample_grid(*field, *uv);
    out.vertices[v] += Vec3(s[0], s[1], s[2]);
  }
  if (local.invalid_uv > 0) spdlog::warn("apply_displacement: {} vertices without a valid UV", local.invalid_uv);
  if (stats) *stats = local;
  if (!out.faces.empty()) out = compute_normals(std::move(out));
  return out;
}

Synthesis synthesize(const DecoderWeights& weights, const SkinnedTemplate& tmpl, const Shape& shape, const Pose& pose,
                     const SynthOptions& options) {
  const TriMesh posed = pose_mesh(tmpl, shape, pose);
  const DecoderOutput pred = forward(weights, pose.theta);
  const int side = weights.config.out_resolution;
  Synthesis s;
  s.color = output_grid(pred.color, side);
  s.displacement = output_grid(pred.displacement, side);
  const FloatGrid* mask = options.finger_mask;
  FloatGrid resized_mask;
  if (mask && (mask->width != side || mask->height != side)) {
    resized_mask = resample_grid(*mask, side, side);
    mask = &resized_mask;
  }
  s.mesh = apply_displacement(subdivide(posed, options.subdivision_levels), s.displacement, mask, &s.stats);
  s.mesh.texture = grid_to_image(s.color, 0.0f, 1.0f);
  return s;
}

RgbImage render_preview(const TriMesh& mesh, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("render_preview: size must be positive");
  RgbImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height * 3, 0);
  const Aabb box = bounds(mesh);
  if (!box.valid()) return img;
  const Vec3 ext = box.max - box.min;
  const double scale = 0.9 * std::min(width / std::max(ext.x(), 1e-12), height / std::max(ext.y(), 1e-12));
  const Vec3 c = box.center();
  const auto to_screen = [&](const Vec3& p) {
    return Vec3(0.5 * width + (p.x() - c.x()) * scale, 0.5 * height - (p.y() - c.y()) * scale, p.z());
  };
  std::vector<double> depth(static_cast<std::size_t>(width) * height, -std::numeric_limits<double>::infinity());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Vec3 n = face_cross(mesh, static_cast<int>(f));
    if (!(n.norm() > 0.0)) continue;
    const double shade = std::clamp(0.15 + 0.85 * std::abs(n.normalized().z()), 0.0, 1.0);
    const Vec3 a = to_screen(mesh.vertices[mesh.faces[f][0]]);
    const Vec3 b = to_screen(mesh.vertices[mesh.faces[f][1]]);
    const Vec3 d = to_screen(mesh.vertices[mesh.faces[f][2]]);
    const double area = (b.x() - a.x()) * (d.y() - a.y()) - (b.y() - a.y()) * (d.x() - a.x());
    if (std::abs(area) < 1e-18) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), d.x()}))));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), d.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), d.y()}))));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), d.y()}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        const double w0 = ((b.x() - px) * (d.y() - py) - (b.y() - py) * (d.x() - px)) / area;
        const double w1 = ((d.x() - px) * (a.y() - py) - (d.y() - py) * (a.x() - px)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double z = w0 * a.z() + w1 * b.z() + w2 * d.z();
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        if (z <= depth[i]) continue;
        depth[i] = z;
        const auto v = static_cast<std::uint8_t>(std::lround(shade * 255.0));
        img.pixels[i * 3] = img.pixels[i * 3 + 1] = img.pixels[i * 3 + 2] = v;
      }
    }
  }
  return img;
}

}  // namespace avh
