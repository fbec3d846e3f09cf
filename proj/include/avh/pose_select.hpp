#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "avh/skinning.hpp"

namespace avh {

/// Elementwise cosine of the 69 joint angles (joint-major order).
std::array<double, kPoseValues> pose_features(const Theta& theta);

struct KMeansOptions {
  std::uint64_t seed = 0;
  int max_iters = 300;
  double rel_tol = 1e-6;  // stop when the relative SSE decrease falls below this
};

struct KMeansResult {
  Eigen::MatrixXd centroids;      // k x D
  std::vector<int> assignment;    // per point, ties go to the lowest cluster index
  std::vector<double> sse;        // within-cluster sum of squares after every assignment step
  int iterations = 0;
  int reseeded = 0;               // empty clusters moved to the farthest point
};

/// Lloyd's algorithm with k-means++ seeding. Points are rows. Throws if k < 1 or k > rows.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, const KMeansOptions& options = {});

struct FrameSelection {
  std::vector<int> training;             // sorted, unique
  std::vector<int> validation;           // sorted, disjoint from training
  std::vector<int> degenerate_clusters;  // clusters that had no member to pick from
  KMeansResult clusters;
};

/// Clusters pose features into f groups and picks, per cluster, the member nearest its centroid
/// (ties to the lowest frame index). A cluster without an unpicked member takes the nearest unpicked
/// frame overall and is reported as degenerate. Validation frames are the next-nearest members of
/// up to `validation_count` distinct clusters, largest clusters first.
FrameSelection select_frames(const std::vector<Theta>& poses, int f, int validation_count = 0,
                             const KMeansOptions& options = {});

}  // namespace avh
