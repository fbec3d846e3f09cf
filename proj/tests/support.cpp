#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "avh/confidence.hpp"

namespace avh::test {

namespace {

void add_quad(TriMesh& m, int a, int b, int c, int d, const FaceUv& t0, const FaceUv& t1) {
  m.faces.push_back({a, b, c});
  m.uv_corners.push_back(t0);
  m.faces.push_back({a, c, d});
  m.uv_corners.push_back(t1);
}

}  // namespace

TriMesh box_mesh(const Vec3& lo, const Vec3& hi, bool with_top) {
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  }
  // Sides as (a, b, c, d) counter-clockwise seen from outside.
  const int sides[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (int s = 0; s < 6; ++s) {
    if (!with_top && s == 1) continue;
    const double u0 = (s % 3) / 3.0 + 0.01;
    const double v0 = (s / 3) / 2.0 + 0.01;
    const double du = 1.0 / 3.0 - 0.02;
    const double dv = 0.5 - 0.02;
    const Vec2 ta(u0, v0), tb(u0 + du, v0), tc(u0 + du, v0 + dv), td(u0, v0 + dv);
    add_quad(m, sides[s][0], sides[s][1], sides[s][2], sides[s][3], {ta, tb, tc}, {ta, tc, td});
  }
  return compute_normals(std::move(m));
}

TriMesh grid_mesh(int n, double size, double z) {
  TriMesh m;
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) m.vertices.emplace_back(size * i / n, size * j / n, z);
  }
  const auto id = [n](int i, int j) { return j * (n + 1) + i; };
  const auto uv = [n](int i, int j) { return Vec2(static_cast<double>(i) / n, static_cast<double>(j) / n); };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      add_quad(m, id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1), {uv(i, j), uv(i + 1, j), uv(i + 1, j + 1)},
               {uv(i, j), uv(i + 1, j + 1), uv(i, j + 1)});
    }
  }
  return compute_normals(std::move(m));
}

TriMesh single_triangle() {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.faces = {{0, 1, 2}};
  m.uv_corners = {{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)}};
  return compute_normals(std::move(m));
}

TriMesh random_soup(int count, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> e(-scale, scale);
  TriMesh m;
  for (int f = 0; f < count; ++f) {
    const Vec3 c(u(rng), u(rng), u(rng));
    for (int k = 0; k < 3; ++k) m.vertices.push_back(c + Vec3(e(rng), e(rng), e(rng)));
    m.faces.push_back({3 * f, 3 * f + 1, 3 * f + 2});
  }
  return compute_normals(std::move(m));
}

TriMesh bumpy_sphere(int rings, int segments, double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  TriMesh m;
  const double pi = std::numbers::pi;
  m.vertices.emplace_back(0, 0, -1.0 + u(rng));
  for (int r = 1; r < rings; ++r) {
    const double th = pi * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double ph = 2 * pi * s / segments;
      const double rad = 1.0 + u(rng);
      m.vertices.emplace_back(rad * std::sin(th) * std::cos(ph), rad * std::sin(th) * std::sin(ph), -rad * std::cos(th));
    }
  }
  m.vertices.emplace_back(0, 0, 1.0 + u(rng));
  const int top = static_cast<int>(m.vertices.size()) - 1;
  const auto id = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) m.faces.push_back({0, id(1, s + 1), id(1, s)});
  for (int r = 1; r + 1 < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      m.faces.push_back({id(r, s), id(r, s + 1), id(r + 1, s + 1)});
      m.faces.push_back({id(r, s), id(r + 1, s + 1), id(r + 1, s)});
    }
  }
  for (int s = 0; s < segments; ++s) m.faces.push_back({top, id(rings - 1, s), id(rings - 1, s + 1)});
  return compute_normals(std::move(m));
}

TriMesh uv_sphere(int rings, int segments, double radius, int texture_size) {
  TriMesh m;
  const double pi = std::numbers::pi;
  m.vertices.emplace_back(0, 0, -radius);
  for (int r = 1; r < rings; ++r) {
    const double th = pi * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double ph = 2 * pi * s / segments;
      m.vertices.emplace_back(radius * std::sin(th) * std::cos(ph), radius * std::sin(th) * std::sin(ph),
                              -radius * std::cos(th));
    }
  }
  m.vertices.emplace_back(0, 0, radius);
  const int top = static_cast<int>(m.vertices.size()) - 1;
  const auto id = [&](int r, int s) { return r == 0 ? 0 : r == rings ? top : 1 + (r - 1) * segments + (s % segments); };
  // Inset UVs slightly so no texel centre lands exactly on the atlas border.
  const auto uv = [&](double r, double s) { return Vec2(0.01 + 0.98 * s / segments, 0.01 + 0.98 * r / rings); };
  for (int r = 0; r < rings; ++r) {
    for (int s = 0; s < segments; ++s) {
      if (r > 0) {
        m.faces.push_back({id(r, s), id(r, s + 1), id(r + 1, s + 1)});
        m.uv_corners.push_back({uv(r, s), uv(r, s + 1), uv(r + 1, r + 1 == rings ? s + 0.5 : s + 1)});
      }
      if (r + 1 < rings) {
        m.faces.push_back({id(r, s), id(r + 1, s + 1), id(r + 1, s)});
        m.uv_corners.push_back({uv(r, r == 0 ? s + 0.5 : s), uv(r + 1, s + 1), uv(r + 1, s)});
      }
    }
  }
  if (texture_size > 0) {
    RgbImage tex(texture_size, texture_size);
    for (int y = 0; y < texture_size; ++y) {
      for (int x = 0; x < texture_size; ++x) {
        const double u = (x + 0.5) / texture_size, v = (y + 0.5) / texture_size;
        tex.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(127.5 + 100 * std::sin(6 * pi * u)));
        tex.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(127.5 + 100 * std::cos(4 * pi * v)));
        tex.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(255 * u * v));
      }
    }
    m.texture = tex;
  }
  return compute_normals(std::move(m));
}

TriMesh merge(const std::vector<TriMesh>& parts) {
  TriMesh out;
  bool uvs = true;
  for (const auto& p : parts) uvs = uvs && p.has_uvs();
  for (const auto& p : parts) {
    const int base = static_cast<int>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), p.vertices.begin(), p.vertices.end());
    for (const Face& f : p.faces) out.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
    if (uvs) out.uv_corners.insert(out.uv_corners.end(), p.uv_corners.begin(), p.uv_corners.end());
  }
  return compute_normals(std::move(out));
}

SkinnedTemplate small_person() {
  CapsulePersonOptions o;
  o.ring_segments = 8;
  o.body_rings = 3;
  o.cap_rings = 1;
  return make_capsule_person(o);
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("avh_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::optional<RefHit> scan_ray(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min, double t_max) {
  std::optional<RefHit> best;
  for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
    const Face& fc = mesh.faces[f];
    const auto h = intersect_triangle(origin, dir, mesh.vertices[fc[0]], mesh.vertices[fc[1]], mesh.vertices[fc[2]]);
    if (!h || h->t < t_min || h->t > t_max) continue;
    if (!best || h->t < best->t) best = RefHit{f, h->t, h->barycentric};
  }
  return best;
}

bool scan_occluded(const TriMesh& mesh, const Vec3& origin, const Vec3& dir, double eps) {
  return scan_ray(mesh, origin, dir, eps, std::numeric_limits<double>::infinity()).has_value();
}

double scan_closest_distance(const TriMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const Face& f : mesh.faces) {
    const auto cp = closest_point_on_triangle(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    best = std::min(best, cp.distance_sq);
  }
  return std::sqrt(best);
}

std::optional<RefMatch> reference_match(const TriMesh& scan, const Vec3& r, const Vec3& n, double eps,
                                        double max_dist) {
  struct Candidate {
    int face;
    double t;         // clamped at 0, used by the selection rule
    double distance;  // |x - r|
    bool positive;
  };
  std::vector<Candidate> nearest;
  for (const Vec3& dir : {Vec3(n), Vec3(-n)}) {
    std::vector<RefHit> all;
    for (int f = 0; f < static_cast<int>(scan.faces.size()); ++f) {
      const Face& fc = scan.faces[f];
      const auto h = intersect_triangle(r, dir, scan.vertices[fc[0]], scan.vertices[fc[1]], scan.vertices[fc[2]]);
      if (h && h->t >= -eps && h->t <= max_dist) all.push_back({f, h->t, h->barycentric});
    }
    if (all.empty()) continue;
    // Nearest along this direction; stable so equal distances keep the lowest face.
    std::stable_sort(all.begin(), all.end(), [](const RefHit& a, const RefHit& b) { return a.t < b.t; });
    const RefHit& h = all.front();
    const Face& fc = scan.faces[h.face];
    Vec3 m = h.bary[0] * scan.vertex_normals[fc[0]] + h.bary[1] * scan.vertex_normals[fc[1]] +
             h.bary[2] * scan.vertex_normals[fc[2]];
    if (m.norm() > 1e-12) {
      m.normalize();
    } else {
      m = face_cross(scan, h.face).normalized();
    }
    nearest.push_back({h.face, std::max(h.t, 0.0), std::abs(h.t), n.dot(m) > 0.0});
  }
  if (nearest.empty()) return std::nullopt;
  const Candidate* pick = &nearest[0];
  if (nearest.size() == 2) {
    const Candidate& a = nearest[0];
    const Candidate& b = nearest[1];
    if (a.positive == b.positive) {
      pick = b.t < a.t ? &b : &a;
    } else {
      const Candidate& pos = a.positive ? a : b;
      const Candidate& neg = a.positive ? b : a;
      pick = pos.t > 2.0 * neg.t ? &neg : &pos;
    }
  }
  return RefMatch{pick->face, pick->distance, pick->positive};
}

std::vector<double> reference_face_visibility(const TriMesh& mesh, int samples, double eps) {
  const auto hemi = hemisphere_directions(samples);
  std::vector<double> v(mesh.faces.size(), 0.0);
  for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
    const Vec3 c = face_cross(mesh, f);
    if (!(c.squaredNorm() > 0.0)) continue;
    const Face& fc = mesh.faces[f];
    const Vec3 o = (mesh.vertices[fc[0]] + mesh.vertices[fc[1]] + mesh.vertices[fc[2]]) / 3.0;
    int hits = 0;
    for (const Vec3& d : oriented_directions(hemi, c)) hits += scan_occluded(mesh, o, d, eps) ? 1 : 0;
    v[f] = 1.0 - static_cast<double>(hits) / samples;
  }
  return v;
}

std::vector<Vec3> reference_laplacian(const TriMesh& mesh) {
  const int n = static_cast<int>(mesh.vertices.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      if (a == b) continue;
      A(a, b) = 1.0;
      A(b, a) = 1.0;
    }
  }
  Eigen::MatrixXd X(n, 3);
  for (int i = 0; i < n; ++i) X.row(i) = mesh.vertices[i].transpose();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double deg = A.row(i).sum();
    if (deg == 0.0) continue;
    L.row(i) = A.row(i) / deg;
    L(i, i) -= 1.0;
  }
  const Eigen::MatrixXd Y = L * X;
  std::vector<Vec3> out(n);
  for (int i = 0; i < n; ++i) out[i] = Y.row(i).transpose();
  return out;
}

FloatGrid reference_inpaint(const FloatGrid& image, const std::vector<std::uint8_t>& known, double radius) {
  enum State { Done, Front, Todo };
  const int W = image.width;
  const int H = image.height;
  const int C = image.channels;
  const double far = 1e6;
  std::vector<State> st(W * H);
  std::vector<double> T(W * H, far);
  std::vector<bool> queued(W * H, false);
  std::vector<double> img(image.data.begin(), image.data.end());
  std::vector<double> lo(C, std::numeric_limits<double>::infinity()), hi(C, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < W * H; ++i) {
    st[i] = known[i] ? Done : Todo;
    if (known[i]) {
      T[i] = 0.0;
      for (int c = 0; c < C; ++c) {
        lo[c] = std::min(lo[c], img[i * C + c]);
        hi[c] = std::max(hi[c], img[i * C + c]);
      }
    }
  }
  const auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < W && y < H; };
  const auto valued = [&](int x, int y) { return inside(x, y) && st[y * W + x] != Todo; };
  const int nx4[4] = {0, -1, 1, 0};
  const int ny4[4] = {-1, 0, 0, 1};
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (st[y * W + x] != Done) continue;
      for (int k = 0; k < 4; ++k) {
        if (inside(x + nx4[k], y + ny4[k]) && st[(y + ny4[k]) * W + x + nx4[k]] == Todo) queued[y * W + x] = true;
      }
    }
  }

  // Eikonal update from a horizontal neighbour a and a vertical neighbour b.
  const auto pair_time = [&](int ax, int ay, int bx, int by) {
    const bool ha = valued(ax, ay), hb = valued(bx, by);
    if (!ha && !hb) return far;
    if (ha != hb) return 1.0 + (ha ? T[ay * W + ax] : T[by * W + bx]);
    const double ta = T[ay * W + ax], tb = T[by * W + bx];
    const double diff = ta - tb;
    if (std::abs(diff) >= 1.0) return 1.0 + std::min(ta, tb);
    return (ta + tb + std::sqrt(2.0 - diff * diff)) / 2.0;
  };
  // One-sided or central difference over valued texels of field[(y * W + x) * stride + offset].
  const auto axis_diff = [&](const std::vector<double>& field, int stride, int offset, int x, int y, int dx, int dy,
                             double centre) {
    const bool f = valued(x + dx, y + dy), b = valued(x - dx, y - dy);
    const auto at = [&](int xx, int yy) { return field[(yy * W + xx) * stride + offset]; };
    if (f && b) return (at(x + dx, y + dy) - at(x - dx, y - dy)) / 2.0;
    if (f) return at(x + dx, y + dy) - centre;
    if (b) return centre - at(x - dx, y - dy);
    return 0.0;
  };

  while (true) {
    int cur = -1;
    for (int i = 0; i < W * H; ++i) {
      if (queued[i] && (cur < 0 || T[i] < T[cur])) cur = i;
    }
    if (cur < 0) break;
    queued[cur] = false;
    st[cur] = Done;
    const int x = cur % W;
    const int y = cur / W;
    for (int k = 0; k < 4; ++k) {
      const int px = x + nx4[k], py = y + ny4[k];
      if (!inside(px, py) || st[py * W + px] != Todo) continue;
      const int p = py * W + px;
      T[p] = std::min({pair_time(px - 1, py, px, py - 1), pair_time(px + 1, py, px, py - 1),
                       pair_time(px - 1, py, px, py + 1), pair_time(px + 1, py, px, py + 1)});
      const double gtx = axis_diff(T, 1, 0, px, py, 1, 0, T[p]);
      const double gty = axis_diff(T, 1, 0, px, py, 0, 1, T[p]);
      const double gl = std::hypot(gtx, gty);
      const double Nx = gl > 0 ? gtx / gl : 0.0, Ny = gl > 0 ? gty / gl : 0.0;
      const int R = static_cast<int>(std::ceil(radius));
      std::vector<double> num(C, 0.0);
      double den = 0.0;
      for (int qy = py - R; qy <= py + R; ++qy) {
        for (int qx = px - R; qx <= px + R; ++qx) {
          if ((qx == px && qy == py) || !valued(qx, qy)) continue;
          const double dx = px - qx, dy = py - qy;
          const double r2 = dx * dx + dy * dy;
          if (r2 > radius * radius) continue;
          const double dir = std::max(std::abs((dx * Nx + dy * Ny) / std::sqrt(r2)), 1e-6);
          const double w = dir / r2 / (1.0 + std::abs(T[qy * W + qx] - T[p]));
          for (int c = 0; c < C; ++c) {
            const double v = img[(qy * W + qx) * C + c];
            const double gx = axis_diff(img, C, c, qx, qy, 1, 0, v);
            const double gy = axis_diff(img, C, c, qx, qy, 0, 1, v);
            num[c] += w * (v + gx * dx + gy * dy);
          }
          den += w;
        }
      }
      for (int c = 0; c < C; ++c) {
        // The library stores values as float between steps; do the same so later estimates agree.
        const float value = den > 0 ? static_cast<float>(num[c] / den) : 0.0f;
        img[p * C + c] = std::clamp(static_cast<double>(value), lo[c], hi[c]);
      }
      st[p] = Front;
      queued[p] = true;
    }
  }
  FloatGrid out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(img[i]);
  return out;
}

std::vector<int> exhaustive_kmeans(const Eigen::MatrixXd& points, int k) {
  const int n = static_cast<int>(points.rows());
  std::vector<int> labels(n, 0), best;
  double best_sse = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<int> count(k, 0);
    for (int l : labels) ++count[l];
    if (std::all_of(count.begin(), count.end(), [](int c) { return c > 0; })) {
      Eigen::MatrixXd centre = Eigen::MatrixXd::Zero(k, points.cols());
      for (int i = 0; i < n; ++i) centre.row(labels[i]) += points.row(i);
      for (int c = 0; c < k; ++c) centre.row(c) /= count[c];
      double sse = 0.0;
      for (int i = 0; i < n; ++i) sse += (points.row(i) - centre.row(labels[i])).squaredNorm();
      if (sse < best_sse) {
        best_sse = sse;
        best = labels;
      }
    }
    int pos = 0;
    while (pos < n && ++labels[pos] == k) labels[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

double vertex_hausdorff(const TriMesh& a, const TriMesh& b) {
  const SurfaceAccel sa(a), sb(b);
  double h = 0.0;
  for (const Vec3& v : a.vertices) h = std::max(h, std::sqrt(sb.closest_point(v).distance_sq));
  for (const Vec3& v : b.vertices) h = std::max(h, std::sqrt(sa.closest_point(v).distance_sq));
  return h;
}

Theta random_theta(std::mt19937_64& rng, double range) {
  std::uniform_real_distribution<double> u(-range, range);
  Theta t{};
  for (double& x : t) x = u(rng);
  return t;
}

DecoderTargetT<double> smooth_target(int side, double phase, double displacement_max) {
  const int P = side * side;
  DecoderTargetT<double> t;
  t.color.resize(3, P);
  t.displacement.resize(3, P);
  t.kappa = Vec<double>::Ones(P);
  t.weight = Vec<double>::Ones(P);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int p = y * side + x;
      const double u = (x + 0.5) / side, v = (y + 0.5) / side;
      for (int c = 0; c < 3; ++c) {
        t.color(c, p) = 0.5 + 0.3 * std::sin(2.0 * std::numbers::pi * (u + 0.3 * c) + phase) * std::cos(3.0 * v);
        t.displacement(c, p) = 0.5 * displacement_max * std::cos(2.0 * std::numbers::pi * (v + 0.2 * c) - phase) * u;
      }
    }
  }
  return t;
}

}  // namespace avh::test
