#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "avh/pose_select.hpp"
#include "support.hpp"

using namespace avh;

namespace {

// Tight clusters of poses around well-separated centres.
std::vector<Theta> clustered_poses(int clusters, int per_cluster, double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  std::vector<Theta> out;
  for (int c = 0; c < clusters; ++c) {
    Theta centre{};
    for (int i = 0; i < kPoseValues; ++i) centre[i] = (i % clusters == c) ? 1.5 : 0.0;
    for (int k = 0; k < per_cluster; ++k) {
      Theta t = centre;
      for (double& x : t) x += g(rng);
      out.push_back(t);
    }
  }
  return out;
}

Eigen::MatrixXd features(const std::vector<Theta>& poses) {
  Eigen::MatrixXd m(static_cast<int>(poses.size()), kPoseValues);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto f = pose_features(poses[i]);
    for (int j = 0; j < kPoseValues; ++j) m(static_cast<int>(i), j) = f[j];
  }
  return m;
}

}  // namespace

TEST_SUITE("pose_select") {
  TEST_CASE("features are cosines") {
    Theta t{};
    for (double x : pose_features(t)) CHECK(x == 1.0);
    t[7] = std::numbers::pi;
    CHECK(pose_features(t)[7] == -1.0);
    std::mt19937_64 rng(1);
    const Theta r = test::random_theta(rng, 3.0);
    Theta s = r;
    for (double& x : s) x += 2 * std::numbers::pi;
    const auto a = pose_features(r), b = pose_features(s);
    for (int i = 0; i < kPoseValues; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }

  TEST_CASE("k-means never increases the within-cluster sum of squares") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    Eigen::MatrixXd pts(200, 4);
    for (int i = 0; i < 200; ++i) {
      for (int j = 0; j < 4; ++j) pts(i, j) = g(rng);
    }
    const KMeansResult r = kmeans(pts, 7, {});
    for (std::size_t i = 1; i < r.sse.size(); ++i) CHECK(r.sse[i] <= r.sse[i - 1] * (1 + 1e-12));
    CHECK(r.assignment.size() == 200);
    CHECK_THROWS(kmeans(pts, 0, {}));
    CHECK_THROWS(kmeans(pts, 201, {}));
  }

  TEST_CASE("distinct well-separated poses are all selected") {
    const auto poses = clustered_poses(5, 1, 0.0, 1);
    const FrameSelection s = select_frames(poses, 5);
    CHECK(s.training == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(s.degenerate_clusters.empty());
  }

  TEST_CASE("two tight clusters give one nearest-to-centre member each") {
    const auto poses = clustered_poses(2, 5, 0.05, 2);
    const FrameSelection s = select_frames(poses, 2);
    REQUIRE(s.training.size() == 2);
    const Eigen::MatrixXd f = features(poses);
    const auto labels = test::exhaustive_kmeans(f, 2);
    for (int c = 0; c < 2; ++c) {
      Eigen::RowVectorXd centre = Eigen::RowVectorXd::Zero(kPoseValues);
      int n = 0;
      for (int i = 0; i < 10; ++i) {
        if (labels[i] == c) {
          centre += f.row(i);
          ++n;
        }
      }
      centre /= n;
      int best = -1;
      for (int i = 0; i < 10; ++i) {
        if (labels[i] == c && (best < 0 || (f.row(i) - centre).squaredNorm() < (f.row(best) - centre).squaredNorm())) {
          best = i;
        }
      }
      CHECK(std::count(s.training.begin(), s.training.end(), best) == 1);
    }
  }

  TEST_CASE("f = 1 picks the frame nearest the mean feature") {
    const auto poses = clustered_poses(3, 3, 0.3, 4);
    const Eigen::MatrixXd f = features(poses);
    const Eigen::RowVectorXd mean = f.colwise().mean();
    int best = 0;
    for (int i = 1; i < f.rows(); ++i) {
      if ((f.row(i) - mean).squaredNorm() < (f.row(best) - mean).squaredNorm()) best = i;
    }
    CHECK(select_frames(poses, 1).training == std::vector<int>{best});
  }

  TEST_CASE("selection output is sorted, unique, disjoint and deterministic") {
    const auto poses = clustered_poses(6, 8, 0.2, 9);
    const FrameSelection a = select_frames(poses, 10, 4, {.seed = 3});
    const FrameSelection b = select_frames(poses, 10, 4, {.seed = 3});
    CHECK(a.training == b.training);
    CHECK(a.validation == b.validation);
    CHECK(a.training.size() == 10);
    CHECK(a.validation.size() == 4);
    CHECK(std::is_sorted(a.training.begin(), a.training.end()));
    CHECK(std::adjacent_find(a.training.begin(), a.training.end()) == a.training.end());
    for (int v : a.validation) CHECK(std::count(a.training.begin(), a.training.end(), v) == 0);
  }

  TEST_CASE("identical poses: degenerate clusters still yield f distinct frames") {
    std::vector<Theta> same(200, Theta{});
    const FrameSelection s = select_frames(same, 5);
    CHECK(s.training.size() == 5);
    CHECK(std::adjacent_find(s.training.begin(), s.training.end()) == s.training.end());
    CHECK(s.degenerate_clusters.size() >= 1);
    CHECK_THROWS(select_frames(same, 201));
    CHECK_THROWS(select_frames(same, 0));
  }
}
