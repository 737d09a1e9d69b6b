#pragma once

#include <cstdint>
#include <vector>

namespace surfpool {

struct KMeansResult {
  std::vector<int> labels;              // one per point
  std::vector<std::vector<double>> centroids;  // k x dim
  double objective = 0.0;               // sum of squared distances
  std::vector<double> objective_trace;  // objective after each Lloyd step
};

struct KMeansOptions {
  int max_iters = 50;
  int restarts = 3;       // ignored when initial centroids are supplied
  double tol = 1e-10;     // relative objective improvement stop
};

/// Seeded Lloyd k-means with k-means++ initialization and a fixed number of
/// restarts; the best-objective run wins. Empty clusters are re-seeded from
/// the point farthest from its centroid. Deterministic for a fixed seed.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    std::uint64_t seed, const KMeansOptions& opts = {});

/// Same, but starting from caller-supplied centroids (single run).
KMeansResult kmeans_from_centroids(const std::vector<std::vector<double>>& points,
                                   std::vector<std::vector<double>> centroids,
                                   const KMeansOptions& opts = {});

}  // namespace surfpool
