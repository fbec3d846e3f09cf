#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "avh/decoder.hpp"
#include "avh/mesh.hpp"
#include "avh/skinning.hpp"

namespace avh {

/// Midpoint 1-to-4 subdivision, `levels` times. Edge midpoints are shared between faces whose edge
/// endpoints coincide in position (so welded seams stay welded); UVs are interpolated per corner, so
/// chart seams stay split in UV. Normals are interpolated and renormalized when present.
TriMesh subdivide(const TriMesh& mesh, int levels = 2);

/// UV used to look up per-vertex data: the first corner (lowest face, then corner) referencing the vertex.
/// Vertices not referenced by any face get no UV.
std::vector<std::optional<Vec2>> vertex_uvs(const TriMesh& mesh);

struct DisplaceStats {
  std::size_t invalid_uv = 0;  // vertices left in place: no UV, or a UV outside [0, 1]
};

/// Moves each vertex by the bilinear sample of the 3-channel grid `d` at its UV. Texels where the
/// optional 1-channel `finger_mask` is >= 0.5 contribute zero displacement. Normals are recomputed.
TriMesh apply_displacement(const TriMesh& mesh, const FloatGrid& d, const FloatGrid* finger_mask = nullptr,
                           DisplaceStats* stats = nullptr);

struct SynthOptions {
  int subdivision_levels = 2;
  const FloatGrid* finger_mask = nullptr;
};

struct Synthesis {
  TriMesh mesh;           // displaced, textured with the predicted color map
  FloatGrid color;        // predicted texture, [0, 1]
  FloatGrid displacement; // predicted displacement, meters
  DisplaceStats stats;
};

/// pose_mesh -> decoder forward -> subdivide -> apply_displacement -> attach the color map.
Synthesis synthesize(const DecoderWeights& weights, const SkinnedTemplate& tmpl, const Shape& shape, const Pose& pose,
                     const SynthOptions& options = {});

/// Orthographic view along -z of the mesh's bounding box, Lambert-shaded by the face normal with a
/// headlight; background black. For visual inspection only.
RgbImage render_preview(const TriMesh& mesh, int width, int height);

}  // namespace avh
