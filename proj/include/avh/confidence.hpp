#pragma once

#include <span>
#include <vector>

#include "avh/accel.hpp"
#include "avh/baking.hpp"
#include "avh/mesh.hpp"

namespace avh {

struct ConfidenceConfig {
  int hemisphere_samples = 64;
  double distance_clip_fraction = 1.0 / 50.0;

  void validate() const;
};

/// Frame-discard threshold on mean confidence.
inline constexpr double kFrameQualityThreshold = 130.0 / 255.0;

/// Deterministic "evenly distributed" unit directions over the +z hemisphere (Fibonacci spiral).
std::vector<Vec3> hemisphere_directions(int samples);

/// Rotates the +z hemisphere set into the frame of `normal`.
std::vector<Vec3> oriented_directions(const std::vector<Vec3>& hemisphere, const Vec3& normal);

/// v per face: 1 - (rays from the centroid that hit the mesh again) / samples.
std::vector<double> face_visibility(const SurfaceAccel& accel, int samples = 64);

/// Unweighted mean of incident face values; vertices without faces get 1.
std::vector<double> face_to_vertex(const TriMesh& mesh, const std::vector<double>& face_values);

/// Vertex visibility (face values averaged onto vertices).
std::vector<double> vertex_visibility(const SurfaceAccel& accel, int samples = 64);

/// Visibility rasterized into the mesh's own UV layout (barycentric interpolation of vertex values).
/// Texels outside every chart are 0.
FloatGrid visibility_map(const SurfaceAccel& accel, int resolution, int samples = 64);

/// delta = 1 - min(d, D/50) / (D/50), D the fit diagonal. Throws on fit_diagonal <= 0.
double inverse_distance_score(double distance, double fit_diagonal, double clip_fraction = 1.0 / 50.0);
FloatGrid inverse_distance_score(const FloatGrid& distances, double fit_diagonal, double clip_fraction = 1.0 / 50.0);

/// nms = (n . m + 1) / 2.
double normal_match_score(const Vec3& n, const Vec3& m);

/// kappa = v * w * delta * nms, elementwise. Throws on shape mismatch.
FloatGrid combine_confidence(const FloatGrid& v, const FloatGrid& w, const FloatGrid& delta, const FloatGrid& nms);
std::vector<double> combine_confidence(std::span<const double> v, std::span<const double> w,
                                       std::span<const double> delta, std::span<const double> nms);

struct FrameQuality {
  double mean_confidence = 0.0;
  bool keep = false;
};

/// Mean kappa over chart texels (unmatched texels count as 0); keep iff mean >= 130/255.
FrameQuality frame_quality(const FloatGrid& confidence, const std::vector<std::uint8_t>& chart_mask);
FrameQuality frame_quality(const FloatGrid& confidence);

/// Fills v, w, delta, nms and kappa of a freshly baked bundle. `registered` and `scan` are the
/// accelerators of the meshes the bundle was baked from (the trace must be present).
void score_confidence(BakeBundle& bundle, const SurfaceAccel& registered, const SurfaceAccel& scan,
                      const ConfidenceConfig& config);

}  // namespace avh
