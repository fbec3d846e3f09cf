#include "avh/inpaint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace avh {

namespace {

enum Flag : std::uint8_t { kKnown = 0, kBand = 1, kInside = 2, kOutside = 3 };

constexpr double kFar = 1.0e6;

struct Field {
  int w, h;
  std::vector<std::uint8_t> flag;
  std::vector<double> t;

  bool usable(int x, int y) const {
    if (x < 0 || y < 0 || x >= w || y >= h) return false;
    const auto f = flag[static_cast<std::size_t>(y) * w + x];
    return f == kKnown || f == kBand;
  }
  double time(int x, int y) const { return t[static_cast<std::size_t>(y) * w + x]; }
};

// Upwind solution of |grad T| = 1 from two orthogonal neighbours.
double solve(const Field& fd, int x1, int y1, int x2, int y2) {
  const bool u1 = fd.usable(x1, y1);
  const bool u2 = fd.usable(x2, y2);
  if (u1 && u2) {
    const double a = fd.time(x1, y1);
    const double b = fd.time(x2, y2);
    if (std::abs(a - b) >= 1.0) return 1.0 + std::min(a, b);
    return 0.5 * (a + b + std::sqrt(2.0 - (a - b) * (a - b)));
  }
  if (u1) return 1.0 + fd.time(x1, y1);
  if (u2) return 1.0 + fd.time(x2, y2);
  return kFar;
}

double arrival_time(const Field& fd, int x, int y) {
  return std::min({solve(fd, x - 1, y, x, y - 1), solve(fd, x + 1, y, x, y - 1), solve(fd, x - 1, y, x, y + 1),
                   solve(fd, x + 1, y, x, y + 1)});
}

// One-sided / central difference of a per-texel quantity along one axis, using only usable texels.
template <typename Get>
double difference(const Field& fd, int x, int y, int dx, int dy, Get get) {
  const bool fwd = fd.usable(x + dx, y + dy);
  const bool bwd = fd.usable(x - dx, y - dy);
  if (fwd && bwd) return 0.5 * (get(x + dx, y + dy) - get(x - dx, y - dy));
  if (fwd) return get(x + dx, y + dy) - get(x, y);
  if (bwd) return get(x, y) - get(x - dx, y - dy);
  return 0.0;
}

void inpaint_texel(const Field& fd, FloatGrid& img, int px, int py, double radius) {
  const auto time_at = [&](int x, int y) { return fd.time(x, y); };
  // grad T at p; p itself is not usable yet, so use the p-relative differences explicitly.
  const auto grad_t_axis = [&](int dx, int dy) {
    const bool fwd = fd.usable(px + dx, py + dy);
    const bool bwd = fd.usable(px - dx, py - dy);
    const double tp = fd.time(px, py);
    if (fwd && bwd) return 0.5 * (time_at(px + dx, py + dy) - time_at(px - dx, py - dy));
    if (fwd) return time_at(px + dx, py + dy) - tp;
    if (bwd) return tp - time_at(px - dx, py - dy);
    return 0.0;
  };
  Eigen::Vector2d grad_t(grad_t_axis(1, 0), grad_t_axis(0, 1));
  const double gn = grad_t.norm();
  const Eigen::Vector2d normal = gn > 0.0 ? Eigen::Vector2d(grad_t / gn) : Eigen::Vector2d::Zero();
  const double tp = fd.time(px, py);

  const int r = static_cast<int>(std::ceil(radius));
  const int C = img.channels;
  std::vector<double> acc(C, 0.0);
  double wsum = 0.0;
  for (int qy = py - r; qy <= py + r; ++qy) {
    for (int qx = px - r; qx <= px + r; ++qx) {
      if ((qx == px && qy == py) || !fd.usable(qx, qy)) continue;
      const Eigen::Vector2d d(px - qx, py - qy);
      const double len2 = d.squaredNorm();
      if (len2 > radius * radius) continue;
      const double len = std::sqrt(len2);
      double dir = std::abs(d.dot(normal) / len);
      if (dir < 1e-6) dir = 1e-6;
      const double dst = 1.0 / len2;
      const double lev = 1.0 / (1.0 + std::abs(fd.time(qx, qy) - tp));
      const double w = dir * dst * lev;
      for (int c = 0; c < C; ++c) {
        const auto value = [&](int x, int y) { return static_cast<double>(img.at(x, y, c)); };
        const double gx = difference(fd, qx, qy, 1, 0, value);
        const double gy = difference(fd, qx, qy, 0, 1, value);
        acc[c] += w * (value(qx, qy) + gx * d.x() + gy * d.y());
      }
      wsum += w;
    }
  }
  for (int c = 0; c < C; ++c) img.at(px, py, c) = wsum > 0.0 ? static_cast<float>(acc[c] / wsum) : 0.0f;
}

}  // namespace

FloatGrid fmm_inpaint(const FloatGrid& image, const std::vector<std::uint8_t>& known, const InpaintOptions& options,
                      const std::vector<std::uint8_t>& domain, std::vector<std::uint8_t>* valued) {
  const std::size_t n = image.texel_count();
  if (known.size() != n) throw std::invalid_argument("fmm_inpaint: mask size mismatch");
  if (!domain.empty() && domain.size() != n) throw std::invalid_argument("fmm_inpaint: domain size mismatch");
  if (!(options.radius > 0.0)) throw std::invalid_argument("fmm_inpaint: radius must be positive");

  Field fd{image.width, image.height, std::vector<std::uint8_t>(n), std::vector<double>(n, kFar)};
  std::size_t known_count = 0;
  std::size_t unknown_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!domain.empty() && !domain[i]) {
      fd.flag[i] = kOutside;
    } else if (known[i]) {
      fd.flag[i] = kKnown;
      fd.t[i] = 0.0;
      ++known_count;
    } else {
      fd.flag[i] = kInside;
      ++unknown_count;
    }
  }
  FloatGrid out = image;
  if (unknown_count == 0) {
    if (valued) {
      valued->assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) (*valued)[i] = fd.flag[i] == kKnown ? 1 : 0;
    }
    return out;
  }
  if (known_count == 0) throw std::invalid_argument("fmm_inpaint: no known texels");

  std::vector<float> lo(image.channels, std::numeric_limits<float>::infinity());
  std::vector<float> hi(image.channels, -std::numeric_limits<float>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    if (fd.flag[i] != kKnown) continue;
    for (int c = 0; c < image.channels; ++c) {
      lo[c] = std::min(lo[c], image.data[i * image.channels + c]);
      hi[c] = std::max(hi[c], image.data[i * image.channels + c]);
    }
  }

  using Entry = std::pair<double, std::size_t>;  // (T, texel index); lexicographic order breaks ties by index
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  const int dx4[4] = {0, -1, 1, 0};
  const int dy4[4] = {-1, 0, 0, 1};
  const int W = image.width;
  const int H = image.height;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (fd.flag[i] != kKnown) continue;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx4[k];
        const int ny = y + dy4[k];
        if (nx >= 0 && ny >= 0 && nx < W && ny < H && fd.flag[static_cast<std::size_t>(ny) * W + nx] == kInside) {
          heap.push({0.0, i});
          break;
        }
      }
    }
  }

  while (!heap.empty()) {
    const std::size_t i = heap.top().second;
    heap.pop();
    fd.flag[i] = kKnown;
    const int x = static_cast<int>(i % W);
    const int y = static_cast<int>(i / W);
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx4[k];
      const int ny = y + dy4[k];
      if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
      const std::size_t j = static_cast<std::size_t>(ny) * W + nx;
      if (fd.flag[j] != kInside) continue;
      fd.t[j] = arrival_time(fd, nx, ny);
      inpaint_texel(fd, out, nx, ny, options.radius);
      if (options.clamp_to_known_range) {
        for (int c = 0; c < image.channels; ++c) out.at(nx, ny, c) = std::clamp(out.at(nx, ny, c), lo[c], hi[c]);
      }
      fd.flag[j] = kBand;
      heap.push({fd.t[j], j});
    }
  }

  if (valued) {
    valued->assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) (*valued)[i] = fd.flag[i] == kKnown ? 1 : 0;
  }
  return out;
}

BakeBundle fill_bundle(BakeBundle b, const InpaintOptions& options) {
  const bool any_matched = std::any_of(b.matched_mask.begin(), b.matched_mask.end(), [](auto m) { return m != 0; });
  if (!any_matched) {
    spdlog::warn("fill_bundle: no matched texels; texture and displacement zero-filled");
    std::fill(b.texture.data.begin(), b.texture.data.end(), 0.0f);
    std::fill(b.displacement.data.begin(), b.displacement.data.end(), 0.0f);
    return b;
  }
  for (FloatGrid* g : {&b.texture, &b.displacement}) {
    // Pass 1: unmatched texels inside the charts, from matched texels only.
    std::vector<std::uint8_t> valued;
    FloatGrid pass1 = fmm_inpaint(*g, b.matched_mask, options, b.chart_mask, &valued);
    // Pass 2: everything else (gutters, plus any chart island pass 1 could not reach).
    *g = fmm_inpaint(pass1, valued, options, {}, nullptr);
  }
  return b;
}

}  // namespace avh
