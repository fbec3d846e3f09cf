#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "avh/mesh.hpp"

namespace avh {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

/// Wavefront OBJ subset: `v`, `vt`, `vn`, `f` (v, v/vt, v//vn, v/vt/vn, negative indices),
/// polygons fan-triangulated. `mtllib` + `map_Kd` load the diffuse texture when present.
/// Per-vertex normals come from the first `vn` referenced by each vertex; when the file has
/// none they are computed from the geometry.
TriMesh read_obj(const fs::path& path);

/// Writes v / vt / vn / f v/vt/vn. When the mesh has a texture and texture_name is non-empty, a
/// sibling .mtl and PNG are written and referenced. Numbers use "%.9g", so output is deterministic.
void write_obj(const TriMesh& mesh, const fs::path& path, const std::string& texture_name = {});

RgbImage read_png(const fs::path& path);
void write_png(const RgbImage& image, const fs::path& path);

/// 1-channel mask (0/1) or [0,1] grid as 8-bit grayscale-in-RGB PNG, value * 255 rounded.
RgbImage grid_to_image(const FloatGrid& grid, float lo = 0.0f, float hi = 1.0f);
FloatGrid image_to_grid(const RgbImage& image);

/// Portable float map: "PF" (3 channels) or "Pf" (1 channel), scale -1.0 (little endian),
/// rows written bottom to top. Round trip is bit-exact.
void write_pfm(const FloatGrid& grid, const fs::path& path);
FloatGrid read_pfm(const fs::path& path);

/// Little-endian f32 array files used by the template format.
std::vector<float> read_f32_file(const fs::path& path);
void write_f32_file(std::span<const float> values, const fs::path& path);

std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const fs::path& path);

}  // namespace avh
