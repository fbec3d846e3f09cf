#include "avh/baking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "avh/io.hpp"

namespace avh {

Polarity polarity_of(const Vec3& source_normal, const Vec3& target_normal) {
  return source_normal.dot(target_normal) > 0.0 ? Polarity::positive : Polarity::negative;
}

std::optional<std::size_t> select_candidate(std::span<const MatchCandidate> candidates) {
  if (candidates.empty()) return std::nullopt;
  const bool mixed = std::any_of(candidates.begin(), candidates.end(),
                                 [&](const MatchCandidate& c) { return c.polarity != candidates[0].polarity; });
  const auto nearest = [&](std::optional<Polarity> only) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (only && candidates[i].polarity != *only) continue;
      if (!best || candidates[i].distance < candidates[*best].distance) best = i;
    }
    return best;
  };
  if (!mixed) return nearest(std::nullopt);
  const std::size_t pos = *nearest(Polarity::positive);
  const std::size_t neg = *nearest(Polarity::negative);
  return candidates[pos].distance > 2.0 * candidates[neg].distance ? neg : pos;
}

std::optional<Match> find_match(const Vec3& r, const Vec3& n, const SurfaceAccel& scan, double max_dist) {
  // Rays start on the registered surface, not on the scan, so a hit at the origin is a real
  // match; accept t down to -eps so a coincident surface is not lost to rounding.
  const double t_min = -scan.self_hit_epsilon();
  const std::optional<RayHit> hits[2] = {scan.ray_cast_range(r, n, t_min, max_dist),
                                         scan.ray_cast_range(r, -n, t_min, max_dist)};
  MatchCandidate cands[2];
  const RayHit* sources[2];
  std::size_t count = 0;
  for (const auto& h : hits) {
    if (!h) continue;
    cands[count] = {h->distance, polarity_of(n, h->hit_normal)};
    sources[count] = &*h;
    ++count;
  }
  const auto pick = select_candidate(std::span<const MatchCandidate>(cands, count));
  if (!pick) return std::nullopt;

  const RayHit& hit = *sources[*pick];
  Match m;
  m.source_point = r;
  m.source_normal = n;
  m.target_point = hit.position;
  m.target_normal = hit.hit_normal;
  m.distance = (hit.position - r).norm();
  m.polarity = cands[*pick].polarity;
  m.target_face = hit.face_index;
  m.target_barycentric = hit.barycentric;
  return m;
}

std::size_t BakeBundle::matched_count() const {
  return static_cast<std::size_t>(std::count(matched_mask.begin(), matched_mask.end(), 1));
}

std::size_t BakeBundle::chart_count() const {
  return static_cast<std::size_t>(std::count(chart_mask.begin(), chart_mask.end(), 1));
}

namespace {

void require_shared_layout(const TriMesh& registered, const TriMesh& shadow) {
  if (!registered.has_uvs() || !shadow.has_uvs()) throw MeshError("bake_frame: meshes without UVs");
  if (registered.faces != shadow.faces || registered.vertices.size() != shadow.vertices.size()) {
    throw MeshError("bake_frame: registered and shadow meshes must share topology");
  }
  for (std::size_t f = 0; f < registered.uv_corners.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (registered.uv_corners[f][k] != shadow.uv_corners[f][k]) {
        throw MeshError("bake_frame: registered and shadow meshes must share UVs");
      }
    }
  }
}

void put3(FloatGrid& g, std::size_t texel, const Vec3& v) {
  for (int c = 0; c < 3; ++c) g.data[texel * 3 + c] = static_cast<float>(v[c]);
}

}  // namespace

BakeBundle bake_frame(const TriMesh& registered, const TriMesh& shadow, const SurfaceAccel& scan,
                      const BakeConfig& config) {
  require_shared_layout(registered, shadow);
  const TriMesh& scan_mesh = scan.mesh();
  if (!scan_mesh.texture || scan_mesh.texture->empty()) throw MeshError("bake_frame: scan has no texture");
  if (!scan_mesh.has_uvs()) throw MeshError("bake_frame: meshes without UVs");
  if (config.resolution <= 0) throw MeshError("bake_frame: resolution must be positive");

  const int W = config.resolution;
  const int H = config.resolution;
  const TexelRaster raster = rasterize_texels(registered, W, H);
  const double max_dist = config.max_match_fraction * bounds(registered).diagonal();

  BakeBundle b;
  b.width = W;
  b.height = H;
  b.texture = FloatGrid(W, H, 3);
  b.displacement = FloatGrid(W, H, 3);
  b.match_offset = FloatGrid(W, H, 3);
  b.match_distance = FloatGrid(W, H, 1);
  b.source_normal = FloatGrid(W, H, 3);
  b.target_normal = FloatGrid(W, H, 3);
  b.confidence = FloatGrid(W, H, 1);
  b.visibility_scan = FloatGrid(W, H, 1);
  b.visibility_registered = FloatGrid(W, H, 1);
  b.inverse_distance = FloatGrid(W, H, 1);
  b.normal_match = FloatGrid(W, H, 1);
  b.chart_mask = raster.coverage_mask();
  b.matched_mask.assign(b.texel_count(), 0);
  b.trace.assign(b.texel_count(), TexelTrace{});
  b.uv_overlap_warnings = raster.overlap_warnings;

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t t = static_cast<std::size_t>(y) * W + x;
      const UvLocation& loc = raster.texels[t];
      if (loc.face_index < 0) continue;
      const SurfaceSample r = surface_at(registered, loc);
      const Vec3 s = interpolate(shadow.vertices, shadow.faces[loc.face_index], loc.barycentric);
      b.trace[t].source_face = loc.face_index;
      b.trace[t].source_barycentric = loc.barycentric;
      put3(b.source_normal, t, r.normal);

      const auto match = find_match(r.position, r.normal, scan, max_dist);
      if (!match) continue;
      b.matched_mask[t] = 1;
      b.trace[t].target_face = match->target_face;
      b.trace[t].target_barycentric = match->target_barycentric;
      const Vec2 scan_uv = uv_at(scan_mesh, match->target_face, match->target_barycentric);
      put3(b.texture, t, sample_texture(*scan_mesh.texture, scan_uv));
      put3(b.displacement, t, match->target_point - s);
      put3(b.match_offset, t, match->target_point - r.position);
      put3(b.target_normal, t, match->target_normal);
      b.match_distance.data[t] = static_cast<float>(match->distance);
    }
  }
  spdlog::debug("bake_frame: {} of {} chart texels matched", b.matched_count(), b.chart_count());
  return b;
}

BakeBundle bake_frame(const TriMesh& registered, const TriMesh& shadow, const TriMesh& scan,
                      const BakeConfig& config) {
  const SurfaceAccel accel(scan, config.self_hit_factor);
  return bake_frame(registered, shadow, accel, config);
}

BakeBundle filter_outliers(BakeBundle bundle, double limit) {
  std::size_t removed = 0;
  for (std::size_t t = 0; t < bundle.texel_count(); ++t) {
    if (!bundle.matched_mask[t]) continue;
    bool outlier = false;
    for (int c = 0; c < 3; ++c) outlier = outlier || std::abs(bundle.match_offset.data[t * 3 + c]) > limit;
    if (!outlier) continue;
    ++removed;
    bundle.matched_mask[t] = 0;
    for (FloatGrid* g : {&bundle.confidence, &bundle.visibility_scan, &bundle.inverse_distance, &bundle.normal_match}) {
      if (!g->data.empty()) g->data[t] = 0.0f;
    }
  }
  if (removed > 0) spdlog::debug("filter_outliers: removed {} texels beyond {} m", removed, limit);
  return bundle;
}

RgbImage texture_to_image(const FloatGrid& texture) { return grid_to_image(texture, 0.0f, 1.0f); }

namespace {

FloatGrid mask_to_grid(const std::vector<std::uint8_t>& mask, int w, int h) {
  FloatGrid g(w, h, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) g.data[i] = mask[i] ? 1.0f : 0.0f;
  return g;
}

std::vector<std::uint8_t> image_to_mask(const RgbImage& img) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img.pixels[i * 3] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace

void save_bundle(const BakeBundle& b, const std::filesystem::path& dir, const std::string& stem,
                 const nlohmann::json& sidecar) {
  std::filesystem::create_directories(dir);
  const auto p = [&](const std::string& suffix) { return dir / (stem + suffix); };
  write_png(texture_to_image(b.texture), p("_texture.png"));
  write_png(grid_to_image(mask_to_grid(b.matched_mask, b.width, b.height)), p("_matched.png"));
  write_png(grid_to_image(mask_to_grid(b.chart_mask, b.width, b.height)), p("_chart.png"));
  write_png(grid_to_image(b.confidence), p("_kappa.png"));
  write_pfm(b.displacement, p("_displacement.pfm"));
  write_pfm(b.match_offset, p("_offset.pfm"));
  write_pfm(b.match_distance, p("_distance.pfm"));
  write_pfm(b.confidence, p("_kappa.pfm"));
  write_pfm(b.visibility_scan, p("_v.pfm"));
  write_pfm(b.visibility_registered, p("_w.pfm"));
  write_pfm(b.inverse_distance, p("_delta.pfm"));
  write_pfm(b.normal_match, p("_nms.pfm"));
  nlohmann::json j = sidecar;
  j["resolution"] = b.width;
  j["matched_texels"] = b.matched_count();
  j["chart_texels"] = b.chart_count();
  j["uv_overlap_warnings"] = b.uv_overlap_warnings;
  write_text_file(p(".json"), j.dump(2) + "\n");
}

nlohmann::json load_bundle_sidecar(const std::filesystem::path& dir, const std::string& stem) {
  return nlohmann::json::parse(read_text_file(dir / (stem + ".json")));
}

BakeBundle load_bundle(const std::filesystem::path& dir, const std::string& stem) {
  const auto p = [&](const std::string& suffix) { return dir / (stem + suffix); };
  BakeBundle b;
  b.texture = image_to_grid(read_png(p("_texture.png")));
  b.width = b.texture.width;
  b.height = b.texture.height;
  b.matched_mask = image_to_mask(read_png(p("_matched.png")));
  b.chart_mask = image_to_mask(read_png(p("_chart.png")));
  b.displacement = read_pfm(p("_displacement.pfm"));
  b.match_offset = read_pfm(p("_offset.pfm"));
  b.match_distance = read_pfm(p("_distance.pfm"));
  b.confidence = read_pfm(p("_kappa.pfm"));
  b.visibility_scan = read_pfm(p("_v.pfm"));
  b.visibility_registered = read_pfm(p("_w.pfm"));
  b.inverse_distance = read_pfm(p("_delta.pfm"));
  b.normal_match = read_pfm(p("_nms.pfm"));
  for (const FloatGrid* g : {&b.displacement, &b.confidence, &b.visibility_registered}) {
    if (g->width != b.width || g->height != b.height) throw IoError("bundle " + stem + ": inconsistent map sizes");
  }
  b.source_normal = FloatGrid(b.width, b.height, 3);
  b.target_normal = FloatGrid(b.width, b.height, 3);
  return b;
}

}  // namespace avh
