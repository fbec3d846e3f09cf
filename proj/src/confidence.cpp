#include "avh/confidence.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "avh/uv.hpp"

namespace avh {

void ConfidenceConfig::validate() const {
  if (hemisphere_samples < 4) throw std::invalid_argument("confidence: hemisphere_samples must be >= 4");
  if (!(distance_clip_fraction > 0.0)) throw std::invalid_argument("confidence: distance_clip_fraction must be > 0");
}

std::vector<Vec3> hemisphere_directions(int samples) {
  if (samples < 1) throw std::invalid_argument("hemisphere_directions: samples must be positive");
  // Equal-area spiral: z uniform in (0, 1), azimuth advancing by the golden angle.
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> dirs(samples);
  for (int i = 0; i < samples; ++i) {
    const double z = 1.0 - (i + 0.5) / samples;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    dirs[i] = Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }
  return dirs;
}

std::vector<Vec3> oriented_directions(const std::vector<Vec3>& hemisphere, const Vec3& normal) {
  const Vec3 n = normal.normalized();
  const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  const Vec3 t = n.cross(helper).normalized();
  const Vec3 b = n.cross(t);
  std::vector<Vec3> out(hemisphere.size());
  for (std::size_t i = 0; i < hemisphere.size(); ++i) {
    out[i] = hemisphere[i].x() * t + hemisphere[i].y() * b + hemisphere[i].z() * n;
  }
  return out;
}

std::vector<double> face_visibility(const SurfaceAccel& accel, int samples) {
  const TriMesh& mesh = accel.mesh();
  const auto hemi = hemisphere_directions(samples);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> vis(mesh.faces.size(), 0.0);
  for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
    const Vec3 cross = face_cross(mesh, f);
    if (!(cross.squaredNorm() > 0.0)) continue;  // degenerate face: no defined hemisphere
    const Face& fc = mesh.faces[f];
    const Vec3 centroid = (mesh.vertices[fc[0]] + mesh.vertices[fc[1]] + mesh.vertices[fc[2]]) / 3.0;
    int hits = 0;
    for (const Vec3& d : oriented_directions(hemi, cross)) {
      if (accel.occluded(centroid, d, inf)) ++hits;
    }
    vis[f] = 1.0 - static_cast<double>(hits) / samples;
  }
  return vis;
}

std::vector<double> face_to_vertex(const TriMesh& mesh, const std::vector<double>& face_values) {
  std::vector<double> sum(mesh.vertices.size(), 0.0);
  std::vector<int> count(mesh.vertices.size(), 0);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      sum[mesh.faces[f][k]] += face_values[f];
      ++count[mesh.faces[f][k]];
    }
  }
  for (std::size_t v = 0; v < sum.size(); ++v) sum[v] = count[v] > 0 ? sum[v] / count[v] : 1.0;
  return sum;
}

std::vector<double> vertex_visibility(const SurfaceAccel& accel, int samples) {
  return face_to_vertex(accel.mesh(), face_visibility(accel, samples));
}

FloatGrid visibility_map(const SurfaceAccel& accel, int resolution, int samples) {
  const TriMesh& mesh = accel.mesh();
  const auto vv = vertex_visibility(accel, samples);
  const TexelRaster raster = rasterize_texels(mesh, resolution, resolution);
  FloatGrid out(resolution, resolution, 1);
  for (std::size_t t = 0; t < raster.texels.size(); ++t) {
    const UvLocation& loc = raster.texels[t];
    if (loc.face_index < 0) continue;
    out.data[t] = static_cast<float>(interpolate(vv, mesh.faces[loc.face_index], loc.barycentric));
  }
  return out;
}

double inverse_distance_score(double distance, double fit_diagonal, double clip_fraction) {
  if (!(fit_diagonal > 0.0)) throw std::invalid_argument("inverse_distance_score: fit_diagonal must be > 0");
  const double clip = fit_diagonal * clip_fraction;
  return 1.0 - std::min(std::max(distance, 0.0), clip) / clip;
}

FloatGrid inverse_distance_score(const FloatGrid& distances, double fit_diagonal, double clip_fraction) {
  FloatGrid out(distances.width, distances.height, distances.channels);
  for (std::size_t i = 0; i < distances.data.size(); ++i) {
    out.data[i] = static_cast<float>(inverse_distance_score(distances.data[i], fit_diagonal, clip_fraction));
  }
  return out;
}

double normal_match_score(const Vec3& n, const Vec3& m) {
  return std::clamp((n.dot(m) + 1.0) / 2.0, 0.0, 1.0);
}

FloatGrid combine_confidence(const FloatGrid& v, const FloatGrid& w, const FloatGrid& delta, const FloatGrid& nms) {
  if (!v.same_shape(w) || !v.same_shape(delta) || !v.same_shape(nms)) {
    throw std::invalid_argument("combine_confidence: grid shape mismatch");
  }
  FloatGrid out(v.width, v.height, v.channels);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    out.data[i] = static_cast<float>(static_cast<double>(v.data[i]) * w.data[i] * delta.data[i] * nms.data[i]);
  }
  return out;
}

std::vector<double> combine_confidence(std::span<const double> v, std::span<const double> w,
                                       std::span<const double> delta, std::span<const double> nms) {
  if (v.size() != w.size() || v.size() != delta.size() || v.size() != nms.size()) {
    throw std::invalid_argument("combine_confidence: grid shape mismatch");
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * w[i] * delta[i] * nms[i];
  return out;
}

FrameQuality frame_quality(const FloatGrid& confidence, const std::vector<std::uint8_t>& chart_mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < confidence.data.size(); ++i) {
    if (!chart_mask.empty() && !chart_mask[i]) continue;
    sum += confidence.data[i];
    ++n;
  }
  FrameQuality q;
  q.mean_confidence = n > 0 ? sum / static_cast<double>(n) : 0.0;
  q.keep = q.mean_confidence >= kFrameQualityThreshold;
  return q;
}

FrameQuality frame_quality(const FloatGrid& confidence) { return frame_quality(confidence, {}); }

void score_confidence(BakeBundle& b, const SurfaceAccel& registered, const SurfaceAccel& scan,
                      const ConfidenceConfig& config) {
  config.validate();
  if (b.trace.size() != b.texel_count()) throw std::invalid_argument("score_confidence: bundle has no bake trace");
  const auto scan_vis = vertex_visibility(scan, config.hemisphere_samples);
  const auto reg_vis = vertex_visibility(registered, config.hemisphere_samples);
  const double fit_diagonal = bounds(registered.mesh()).diagonal();
  const TriMesh& rm = registered.mesh();
  const TriMesh& sm = scan.mesh();

  for (std::size_t t = 0; t < b.texel_count(); ++t) {
    const TexelTrace& tr = b.trace[t];
    b.visibility_scan.data[t] = 0.0f;
    b.visibility_registered.data[t] = 0.0f;
    b.inverse_distance.data[t] = 0.0f;
    b.normal_match.data[t] = 0.0f;
    if (tr.source_face >= 0) {
      b.visibility_registered.data[t] =
          static_cast<float>(interpolate(reg_vis, rm.faces[tr.source_face], tr.source_barycentric));
    }
    if (!b.matched_mask[t]) continue;
    b.visibility_scan.data[t] =
        static_cast<float>(interpolate(scan_vis, sm.faces[tr.target_face], tr.target_barycentric));
    b.inverse_distance.data[t] = static_cast<float>(
        inverse_distance_score(b.match_distance.data[t], fit_diagonal, config.distance_clip_fraction));
    const Vec3 n(b.source_normal.data[t * 3], b.source_normal.data[t * 3 + 1], b.source_normal.data[t * 3 + 2]);
    const Vec3 m(b.target_normal.data[t * 3], b.target_normal.data[t * 3 + 1], b.target_normal.data[t * 3 + 2]);
    b.normal_match.data[t] = static_cast<float>(normal_match_score(n, m));
  }
  b.confidence = combine_confidence(b.visibility_scan, b.visibility_registered, b.inverse_distance, b.normal_match);
}

}  // namespace avh
