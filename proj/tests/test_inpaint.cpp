#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "avh/inpaint.hpp"
#include "support.hpp"

using namespace avh;

namespace {

FloatGrid gradient_image(int w, int h, int c) {
  FloatGrid g(w, h, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) g.at(x, y, k) = static_cast<float>(0.1 * x + 0.05 * y + 0.2 * k);
    }
  }
  return g;
}

}  // namespace

TEST_SUITE("inpaint") {
  TEST_CASE("fully known image is returned unchanged") {
    const FloatGrid g = gradient_image(6, 5, 3);
    CHECK(fmm_inpaint(g, std::vector<std::uint8_t>(30, 1)).data == g.data);
  }

  TEST_CASE("constant image fills a hole with the constant") {
    FloatGrid g(7, 7, 2, 0.3f);
    std::vector<std::uint8_t> known(49, 1);
    known[24] = 0;
    g.data[48] = g.data[49] = 99.0f;  // garbage under the hole
    const FloatGrid out = fmm_inpaint(g, known);
    CHECK(out.data[48] == doctest::Approx(0.3));
    CHECK(out.data[49] == doctest::Approx(0.3));
  }

  TEST_CASE("gradient with a 2x2 hole matches the naive reference") {
    FloatGrid g = gradient_image(8, 8, 3);
    std::vector<std::uint8_t> known(64, 1);
    for (int y = 3; y < 5; ++y) {
      for (int x = 3; x < 5; ++x) known[y * 8 + x] = 0;
    }
    const FloatGrid got = fmm_inpaint(g, known);
    const FloatGrid want = test::reference_inpaint(g, known, 3.0);
    for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) < 1e-3);
  }

  TEST_CASE("random masks match the naive reference and respect the known range") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 4; ++trial) {
      FloatGrid g(16, 16, 2);
      for (float& x : g.data) x = u(rng);
      std::vector<std::uint8_t> known(256);
      for (auto& k : known) k = u(rng) < 0.5f ? 1 : 0;
      known[0] = 1;
      const FloatGrid got = fmm_inpaint(g, known);
      const FloatGrid want = test::reference_inpaint(g, known, 3.0);
      float lo[2] = {1, 1}, hi[2] = {0, 0};
      for (int i = 0; i < 256; ++i) {
        if (!known[i]) continue;
        for (int c = 0; c < 2; ++c) {
          lo[c] = std::min(lo[c], g.data[i * 2 + c]);
          hi[c] = std::max(hi[c], g.data[i * 2 + c]);
        }
      }
      for (int i = 0; i < 256; ++i) {
        for (int c = 0; c < 2; ++c) {
          CHECK(std::abs(got.data[i * 2 + c] - want.data[i * 2 + c]) < 1e-3);
          CHECK(got.data[i * 2 + c] >= lo[c]);
          CHECK(got.data[i * 2 + c] <= hi[c]);
        }
      }
    }
  }

  TEST_CASE("domain restricts reads and writes") {
    FloatGrid g(4, 1, 1);
    g.data = {1.0f, 0.0f, 5.0f, 7.0f};
    const std::vector<std::uint8_t> known = {1, 0, 0, 1};
    const std::vector<std::uint8_t> domain = {1, 1, 0, 0};
    std::vector<std::uint8_t> valued;
    const FloatGrid out = fmm_inpaint(g, known, {}, domain, &valued);
    CHECK(out.data[1] == doctest::Approx(1.0));  // only texel 0 may be read
    CHECK(out.data[2] == 5.0f);                   // outside the domain: untouched
    CHECK(valued == std::vector<std::uint8_t>{1, 1, 0, 0});
    CHECK_THROWS(fmm_inpaint(g, {0, 0, 0, 0}));
  }

  TEST_CASE("fill_bundle leaves no unknown or non-finite texel and keeps masks") {
    BakeBundle b;
    b.width = b.height = 12;
    b.texture = FloatGrid(12, 12, 3, std::nanf(""));
    b.displacement = FloatGrid(12, 12, 3, std::nanf(""));
    b.chart_mask.assign(144, 0);
    b.matched_mask.assign(144, 0);
    b.confidence = FloatGrid(12, 12, 1, 0.0f);
    for (int y = 2; y < 10; ++y) {
      for (int x = 2; x < 6; ++x) {
        const std::size_t t = y * 12 + x;
        b.chart_mask[t] = 1;
        if (!(y == 5 && x == 3)) {  // an unmatched "armpit" texel inside the chart
          b.matched_mask[t] = 1;
          b.confidence.data[t] = 0.9f;
          for (int c = 0; c < 3; ++c) {
            b.texture.data[t * 3 + c] = 0.1f * x;
            b.displacement.data[t * 3 + c] = 0.001f * y;
          }
        }
      }
    }
    // A separate chart with no matched texel at all: reached only by the second pass.
    b.chart_mask[11 * 12 + 11] = 1;
    const BakeBundle f = fill_bundle(b);
    for (float x : f.texture.data) CHECK(std::isfinite(x));
    for (float x : f.displacement.data) CHECK(std::isfinite(x));
    CHECK(f.matched_mask == b.matched_mask);
    CHECK(f.confidence.data == b.confidence.data);
    CHECK(f.texture.data[(5 * 12 + 3) * 3] == doctest::Approx(0.3).epsilon(0.05));
    // Gutter values continue the chart border: no jump above the in-chart gradient.
    CHECK(std::abs(f.texture.data[(5 * 12 + 6) * 3] - f.texture.data[(5 * 12 + 5) * 3]) <= 0.1f + 1e-6f);
  }

  TEST_CASE("fully matched bundle is unchanged; empty bundle is zero filled") {
    BakeBundle b;
    b.width = b.height = 4;
    b.texture = gradient_image(4, 4, 3);
    b.displacement = gradient_image(4, 4, 3);
    b.chart_mask.assign(16, 1);
    b.matched_mask.assign(16, 1);
    CHECK(fill_bundle(b).texture.data == b.texture.data);
    b.matched_mask.assign(16, 0);
    const BakeBundle z = fill_bundle(b);
    for (float x : z.texture.data) CHECK(x == 0.0f);
  }
}
