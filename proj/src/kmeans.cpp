#include "surfpool/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "surfpool/errors.hpp"

namespace surfpool {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

std::vector<std::vector<double>> kmeanspp_init(
    const std::vector<std::vector<double>>& points, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.push_back(points[first(rng)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (int i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

KMeansResult lloyd(const std::vector<std::vector<double>>& points,
                   std::vector<std::vector<double>> centroids,
                   const KMeansOptions& opts) {
  const int n = static_cast<int>(points.size());
  const int k = static_cast<int>(centroids.size());
  const std::size_t dim = points[0].size();

  KMeansResult res;
  res.labels.assign(n, 0);

  double prev_obj = std::numeric_limits<double>::max();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    // Assignment step; ties go to the lower cluster index.
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      res.labels[i] = best;
      obj += best_d;
    }
    res.objective_trace.push_back(obj);
    res.objective = obj;
    if (prev_obj - obj <= opts.tol * std::max(1.0, prev_obj) && iter > 0) break;
    prev_obj = obj;

    // Update step.
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      counts[res.labels[i]]++;
      for (std::size_t c = 0; c < dim; ++c) sums[res.labels[i]][c] += points[i][c];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster from the farthest point.
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = sq_dist(points[i], centroids[res.labels[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids[c] = points[far];
      } else {
        for (std::size_t cc = 0; cc < dim; ++cc) centroids[c][cc] = sums[c][cc] / counts[c];
      }
    }
  }
  res.centroids = std::move(centroids);
  return res;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    std::uint64_t seed, const KMeansOptions& opts) {
  if (points.empty()) throw ArgumentError("kmeans: empty point set");
  if (k < 1 || k > static_cast<int>(points.size()))
    throw ArgumentError("kmeans: k out of range");

  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.objective = std::numeric_limits<double>::max();
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    auto run = lloyd(points, kmeanspp_init(points, k, rng), opts);
    if (run.objective < best.objective) best = std::move(run);
  }
  return best;
}

KMeansResult kmeans_from_centroids(const std::vector<std::vector<double>>& points,
                                   std::vector<std::vector<double>> centroids,
                                   const KMeansOptions& opts) {
  if (points.empty()) throw ArgumentError("kmeans: empty point set");
  if (centroids.empty() || centroids.size() > points.size())
    throw ArgumentError("kmeans: bad centroid count");
  return lloyd(points, std::move(centroids), opts);
}

}  // namespace surfpool
