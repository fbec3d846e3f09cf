#include "avh/pose_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace avh {

std::array<double, kPoseValues> pose_features(const Theta& theta) {
  std::array<double, kPoseValues> out{};
  for (int i = 0; i < kPoseValues; ++i) out[i] = std::cos(theta[i]);
  return out;
}

namespace {

// Portable draws: std distributions differ between standard libraries, raw engine output does not.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Assignment {
  std::vector<int> label;
  double sse = 0.0;
};

Assignment assign(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c) {
  Assignment a;
  a.label.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double d = (x.row(i) - c.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    a.label[i] = arg;
    a.sse += best;
  }
  return a;
}

Eigen::MatrixXd seed_plus_plus(const Eigen::MatrixXd& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd c(k, x.cols());
  std::vector<char> used(n, 0);
  std::size_t first = rng() % static_cast<std::uint64_t>(n);
  c.row(0) = x.row(first);
  used[first] = 1;
  std::vector<double> d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i) - c.row(0)).squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = -1;
    if (total > 0.0) {
      const double target = unit_draw(rng) * total;
      double run = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        run += d2[i];
        pick = i;
        if (run > target) break;
      }
    } else {
      // All points coincide with chosen centers: take the first unused point.
      for (Eigen::Index i = 0; i < n && pick < 0; ++i) {
        if (!used[i]) pick = i;
      }
    }
    c.row(j) = x.row(pick);
    used[pick] = 1;
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - c.row(j)).squaredNorm());
  }
  return c;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& x, int k, const KMeansOptions& options) {
  if (k < 1 || k > x.rows()) throw std::invalid_argument("kmeans: k must be in [1, number of points]");
  if (!x.allFinite()) throw std::invalid_argument("kmeans: non-finite input");
  std::mt19937_64 rng(options.seed);
  KMeansResult r;
  r.centroids = seed_plus_plus(x, k, rng);
  Assignment a = assign(x, r.centroids);
  r.sse.push_back(a.sse);

  for (int it = 0; it < options.max_iters; ++it) {
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> count(k, 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      next.row(a.label[i]) += x.row(i);
      ++count[a.label[i]];
    }
    for (int j = 0; j < k; ++j) {
      if (count[j] > 0) {
        next.row(j) /= count[j];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its current center.
      Eigen::Index far = 0;
      double worst = -1.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double d = (x.row(i) - r.centroids.row(a.label[i])).squaredNorm();
        if (d > worst) {
          worst = d;
          far = i;
        }
      }
      next.row(j) = x.row(far);
      ++r.reseeded;
    }
    r.centroids = next;
    Assignment b = assign(x, r.centroids);
    r.sse.push_back(b.sse);
    ++r.iterations;
    const bool same = b.label == a.label;
    const double drop = a.sse - b.sse;
    a = std::move(b);
    if (same || drop <= options.rel_tol * std::max(a.sse, std::numeric_limits<double>::min())) break;
  }
  r.assignment = std::move(a.label);
  return r;
}

FrameSelection select_frames(const std::vector<Theta>& poses, int f, int validation_count,
                             const KMeansOptions& options) {
  const int n = static_cast<int>(poses.size());
  if (f < 1 || f > n) throw std::invalid_argument("select_frames: f exceeds the number of usable frames");
  Eigen::MatrixXd x(n, kPoseValues);
  for (int i = 0; i < n; ++i) {
    const auto feat = pose_features(poses[i]);
    for (int j = 0; j < kPoseValues; ++j) x(i, j) = feat[j];
  }

  FrameSelection s;
  s.clusters = kmeans(x, f, options);
  const auto& c = s.clusters.centroids;
  const auto& label = s.clusters.assignment;
  std::vector<char> taken(n, 0);
  const auto nearest = [&](int cluster, bool members_only) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (taken[i] || (members_only && label[i] != cluster)) continue;
      const double d = (x.row(i) - c.row(cluster)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return best;
  };

  std::vector<int> pick(f, -1);
  for (int j = 0; j < f; ++j) {
    pick[j] = nearest(j, true);
    if (pick[j] >= 0) taken[pick[j]] = 1;
  }
  for (int j = 0; j < f; ++j) {
    if (pick[j] >= 0) continue;
    pick[j] = nearest(j, false);
    taken[pick[j]] = 1;
    s.degenerate_clusters.push_back(j);
  }
  if (!s.degenerate_clusters.empty()) {
    spdlog::warn("select_frames: {} degenerate cluster(s); poses are not distinct enough for f = {}",
                 s.degenerate_clusters.size(), f);
  }
  s.training = pick;
  std::sort(s.training.begin(), s.training.end());

  if (validation_count > 0) {
    std::vector<int> size(f, 0);
    for (int l : label) ++size[l];
    std::vector<int> order(f);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return size[a] > size[b]; });
    for (int j : order) {
      if (static_cast<int>(s.validation.size()) >= validation_count) break;
      const int v = nearest(j, true);
      if (v < 0) continue;
      taken[v] = 1;
      s.validation.push_back(v);
    }
    std::sort(s.validation.begin(), s.validation.end());
  }
  return s;
}

}  // namespace avh
