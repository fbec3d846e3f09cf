#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "avh/accel.hpp"
#include "avh/mesh.hpp"
#include "avh/uv.hpp"

namespace avh {

enum class Polarity { positive, negative };

/// One texel correspondence: query r on the registered mesh, its twin s on the shadow mesh
/// (same uv), and the scan point x hit by a ray along +/- the registered normal n.
struct Match {
  Vec2 source_uv = Vec2::Zero();
  Vec3 source_point = Vec3::Zero();  // r
  Vec3 twin_point = Vec3::Zero();    // s
  Vec3 target_point = Vec3::Zero();  // x
  Vec3 target_normal = Vec3::Zero(); // m
  Vec3 source_normal = Vec3::Zero(); // n
  double distance = 0.0;             // |x - r|
  Polarity polarity = Polarity::negative;
  int target_face = -1;
  Vec3 target_barycentric = Vec3::Zero();
};

/// A candidate hit with its polarity, as seen by the selection rule.
struct MatchCandidate {
  double distance;
  Polarity polarity;
};

/// Polarity is positive iff n . m > 0 (a zero dot product counts as negative).
Polarity polarity_of(const Vec3& source_normal, const Vec3& target_normal);

/// Selection over the (at most two) ray candidates: with equal polarity the nearer wins; with
/// mixed polarity the positive one wins unless it is more than twice as far as the negative one.
/// Returns the index of the chosen candidate.
std::optional<std::size_t> select_candidate(std::span<const MatchCandidate> candidates);

/// Casts rays from r along +n and -n (length max_dist) and applies select_candidate.
std::optional<Match> find_match(const Vec3& r, const Vec3& n, const SurfaceAccel& scan, double max_dist);

struct BakeConfig {
  int resolution = 1024;
  /// Ray length cap as a fraction of the registered mesh's bounding-box diagonal.
  double max_match_fraction = 0.1;
  double self_hit_factor = kDefaultSelfHitFactor;
};

/// Where a texel landed on the registered mesh and on the scan. In-memory only (not serialized).
struct TexelTrace {
  int source_face = -1;
  Vec3 source_barycentric = Vec3::Zero();
  int target_face = -1;
  Vec3 target_barycentric = Vec3::Zero();
};

/// Per-frame baked maps. All grids share width x height; rows top to bottom.
struct BakeBundle {
  int width = 0;
  int height = 0;
  FloatGrid texture;         // 3 channels, [0, 1]
  FloatGrid displacement;    // 3 channels, meters, x - s
  FloatGrid match_offset;    // 3 channels, meters, x - r (for the outlier test)
  FloatGrid match_distance;  // 1 channel, |x - r|
  FloatGrid source_normal;   // 3 channels, n at r (zero off-chart)
  FloatGrid target_normal;   // 3 channels, m at x (zero when unmatched)
  std::vector<std::uint8_t> chart_mask;    // texel center covered by a UV triangle
  std::vector<std::uint8_t> matched_mask;  // a correspondence was found (and survived filtering)
  FloatGrid confidence;      // kappa
  FloatGrid visibility_scan; // v
  FloatGrid visibility_registered;  // w
  FloatGrid inverse_distance;       // delta
  FloatGrid normal_match;           // nms
  std::size_t uv_overlap_warnings = 0;
  std::vector<TexelTrace> trace;  // filled by bake_frame, empty after load_bundle

  std::size_t texel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t matched_count() const;
  std::size_t chart_count() const;
};

/// Per-texel correspondence search and texture/displacement baking. Requires registered and
/// shadow to share faces and UVs, and a textured scan. Confidence grids are allocated (zeros)
/// and left for score_confidence.
BakeBundle bake_frame(const TriMesh& registered, const TriMesh& shadow, const SurfaceAccel& scan,
                      const BakeConfig& config);

/// Convenience overload building the scan accelerator internally.
BakeBundle bake_frame(const TriMesh& registered, const TriMesh& shadow, const TriMesh& scan, const BakeConfig& config);

/// Unmatches texels whose scan point lies more than `limit` meters from the registered surface
/// in any axis (|x - r| per component). The displacement d = x - s is not consulted.
/// Filtered texels are cleared in every confidence map as well.
BakeBundle filter_outliers(BakeBundle bundle, double limit = 0.05);

/// Files written: <stem>_texture.png, <stem>_matched.png, <stem>_chart.png, <stem>_kappa.png (preview),
/// <stem>_displacement.pfm, <stem>_offset.pfm, <stem>_{kappa,v,w,delta,nms,distance}.pfm and
/// <stem>.json sidecar (frame id, theta, resolution, config hash, plus `extra`).
void save_bundle(const BakeBundle& bundle, const std::filesystem::path& dir, const std::string& stem,
                 const nlohmann::json& sidecar);
BakeBundle load_bundle(const std::filesystem::path& dir, const std::string& stem);
nlohmann::json load_bundle_sidecar(const std::filesystem::path& dir, const std::string& stem);

/// Texel-wise 8-bit quantization used for the PNG texture; float data is kept in memory.
RgbImage texture_to_image(const FloatGrid& texture);

}  // namespace avh
