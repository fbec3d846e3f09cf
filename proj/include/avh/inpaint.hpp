#pragma once

#include <cstdint>
#include <vector>

#include "avh/baking.hpp"
#include "avh/mesh.hpp"

namespace avh {

struct InpaintOptions {
  double radius = 3.0;
  /// Clamp each filled value to the [min, max] of the known values of its channel.
  bool clamp_to_known_range = true;
};

/// Fast-marching inpainting (Telea 2004).
///
/// Unknown texels are visited in order of increasing arrival time T of a front starting at the
/// known region (upwind Eikonal update on the 4-neighbourhood, binary heap, ties broken by
/// texel index). Each newly reached texel p gets
///   I(p) = sum_q w(p,q) [I(q) + grad I(q) . (p - q)] / sum_q w(p,q)
/// over already-valued q with |p - q| <= radius, where w = dir * dst * lev:
///   dir = |(p - q) / |p - q| . N(p)| (N = normalized grad T, floored at 1e-6),
///   dst = 1 / |p - q|^2,  lev = 1 / (1 + |T(q) - T(p)|).
///
/// `domain` (optional, same size) restricts the operation: texels outside it are neither read
/// nor written. Unknown texels not 4-connected to a known one inside the domain stay as they were;
/// `valued`, when given, receives the final known-or-filled mask. Throws when the domain contains
/// no known texel while unknown texels exist.
FloatGrid fmm_inpaint(const FloatGrid& image, const std::vector<std::uint8_t>& known,
                      const InpaintOptions& options = {}, const std::vector<std::uint8_t>& domain = {},
                      std::vector<std::uint8_t>* valued = nullptr);

/// Two-pass fill of a baked bundle's texture and displacement: first the unmatched texels inside
/// the charts (from matched texels), then everything outside the charts (from all chart texels).
/// Masks and confidence maps are left untouched. A bundle without any matched texel is zero-filled.
BakeBundle fill_bundle(BakeBundle bundle, const InpaintOptions& options = {});

}  // namespace avh
