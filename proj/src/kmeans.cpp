#include <cmath>
#include <limits>

#include "dsts/common.hpp"
#include "dsts/eval.hpp"

namespace dsts {

namespace {

double sqdist(const float* a, const float* b, int dim) {
  double d = 0.0;
  for (int j = 0; j < dim; ++j) {
    double t = static_cast<double>(a[j]) - b[j];
    d += t * t;
  }
  return d;
}

// k-means++: first centroid uniform, the rest proportional to the squared
// distance to the nearest chosen one.
Tensor seed_centroids(const Tensor& pts, int k, Rng& rng) {
  int n = pts.dim(0), dim = pts.dim(1);
  Tensor cent({k, dim});
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  int64_t first = rng.uniform_int(0, n);
  for (int j = 0; j < dim; ++j) cent[j] = pts[first * dim + j];
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = sqdist(pts.data() + static_cast<int64_t>(i) * dim,
                        cent.data() + static_cast<int64_t>(c - 1) * dim, dim);
      if (d < d2[i]) d2[i] = d;
      total += d2[i];
    }
    int64_t pick;
    if (total > 0.0) {
      double r = rng.next_double() * total;
      pick = n - 1;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(0, n);  // all points coincide with a centroid
    }
    for (int j = 0; j < dim; ++j) cent[static_cast<int64_t>(c) * dim + j] = pts[pick * dim + j];
  }
  return cent;
}

KMeansResult lloyd(const Tensor& pts, int k, Rng& rng, int max_iters) {
  int n = pts.dim(0), dim = pts.dim(1);
  KMeansResult res;
  res.centroids = seed_centroids(pts, k, rng);
  res.assign.assign(n, -1);

  std::vector<double> pdist(n, 0.0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* p = pts.data() + static_cast<int64_t>(i) * dim;
      int a = nearest_centroid(p, dim, res.centroids);
      pdist[i] = sqdist(p, res.centroids.data() + static_cast<int64_t>(a) * dim, dim);
      inertia += pdist[i];
      if (a != res.assign[i]) {
        res.assign[i] = a;
        changed = true;
      }
    }
    res.inertia_history.push_back(inertia);
    res.iters = iter + 1;
    if (!changed && iter > 0) break;

    std::vector<double> sums(static_cast<size_t>(k) * dim, 0.0);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      const float* p = pts.data() + static_cast<int64_t>(i) * dim;
      double* s = sums.data() + static_cast<size_t>(res.assign[i]) * dim;
      for (int j = 0; j < dim; ++j) s[j] += p[j];
      ++counts[res.assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      float* ctr = res.centroids.data() + static_cast<int64_t>(c) * dim;
      if (counts[c] > 0) {
        const double* s = sums.data() + static_cast<size_t>(c) * dim;
        for (int j = 0; j < dim; ++j) ctr[j] = static_cast<float>(s[j] / counts[c]);
      } else {
        // Reseed an emptied cluster at the point worst served right now.
        int far = 0;
        for (int i = 1; i < n; ++i)
          if (pdist[i] > pdist[far]) far = i;
        const float* p = pts.data() + static_cast<int64_t>(far) * dim;
        for (int j = 0; j < dim; ++j) ctr[j] = p[j];
        pdist[far] = 0.0;
      }
    }
  }

  res.inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* p = pts.data() + static_cast<int64_t>(i) * dim;
    res.assign[i] = nearest_centroid(p, dim, res.centroids);
    res.inertia += sqdist(p, res.centroids.data() + static_cast<int64_t>(res.assign[i]) * dim, dim);
  }
  return res;
}

}  // namespace

int nearest_centroid(const float* p, int dim, const Tensor& centroids) {
  int k = centroids.dim(0);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) {
    double d = sqdist(p, centroids.data() + static_cast<int64_t>(c) * dim, dim);
    if (d < best_d) {  // strict: ties keep the lowest id
      best_d = d;
      best = c;
    }
  }
  return best;
}

KMeansResult kmeans(const Tensor& points, int k, Rng& rng, int restarts, int max_iters) {
  if (points.rank() != 2) throw ConfigError("kmeans: points must be n x dim, got " + points.shape_str());
  int n = points.dim(0);
  if (k < 1) throw ConfigError("kmeans: k must be positive");
  if (n < k)
    throw ConfigError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) +
                      " clusters");
  if (restarts < 1) throw ConfigError("kmeans: restarts must be positive");
  points.require_finite("kmeans points");

  KMeansResult best;
  for (int r = 0; r < restarts; ++r) {
    KMeansResult run = lloyd(points, k, rng, max_iters);
    if (r == 0 || run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

}  // namespace dsts
