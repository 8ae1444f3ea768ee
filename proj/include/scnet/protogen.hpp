#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "scnet/common.hpp"
#include "scnet/mask.hpp"
#include "scnet/rng.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

enum class PrototypeOrigin { kForegroundSupport, kBackgroundQuery, kBackgroundSupport, kSpp };

/// Length-c summary vector of a masked feature region.
struct Prototype {
  Tensor values;  // rank-1 [c]
  PrototypeOrigin origin = PrototypeOrigin::kForegroundSupport;

  int channels() const { return values.dim(0); }
};

/// Masked average pooling over a feature map; differentiable w.r.t. features.
inline Prototype map_pool(Tape& tape, const Tensor& features, const BinaryMask& mask,
                          PrototypeOrigin origin = PrototypeOrigin::kForegroundSupport) {
  if (features.rank() != 3) throw ShapeError("map_pool: features must be rank 3");
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  if (mask.height() != h || mask.width() != w) throw ShapeError("map_pool: mask shape mismatch");
  const std::size_t area = mask.count();
  if (area == 0) throw EmptyMaskError("map_pool: mask has no foreground pixel");

  Tensor values = Tensor::zeros({c});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      if (!mask.at(i, j)) continue;
      for (int k = 0; k < c; ++k) values.at(k) += features.at3(i, j, k);
    }
  const double inv = 1.0 / static_cast<double>(area);
  for (int k = 0; k < c; ++k) values.at(k) *= inv;

  if (detail::track_inputs({&features})) {
    Tensor f_t = features, v_t = values;
    f_t.ensure_grad();
    v_t.set_requires_grad(true);
    BinaryMask m = mask;
    tape.record("map_pool", [f_t, v_t, m, h, w, c, inv]() mutable {
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          if (!m.at(i, j)) continue;
          for (int k = 0; k < c; ++k)
            f_t.grad()[(static_cast<std::size_t>(i) * w + j) * c + k] += inv * v_t.grad()[k];
        }
    });
  }
  return Prototype{values, origin};
}

/// Outcome of clustering a feature grid into n regions.
struct ClusterResult {
  std::vector<int> assignments;              // h*w entries in [0, n)
  std::vector<std::vector<double>> centers;  // n unit-norm vectors
  std::vector<double> objective_trace;       // one entry per assignment pass
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Unit-normalizes in place; leaves `fallback` when the norm vanishes.
inline std::vector<double> normalize_or(std::vector<double> v, const std::vector<double>& fallback) {
  double n2 = dot(v, v);
  if (n2 < 1e-24) return fallback;
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

/// Classical k-means under cosine distance (1 - cosine similarity) on the
/// pixel vectors of `features`. Features are unit-normalized up front, so the
/// center update is the normalized cluster mean. Initial centers come from
/// seeded farthest-point sampling; assignment ties go to the lowest cluster
/// index; a cluster emptied during iteration is reseeded to the pixel
/// currently farthest from its own center. Stops when assignments no longer
/// change or after max_iter passes.
inline ClusterResult cosine_kmeans(const Tensor& features, int n, int max_iter, Rng& rng) {
  if (features.rank() != 3) throw ShapeError("cosine_kmeans: features must be rank 3");
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  const int hw = h * w;
  if (n < 1) throw ConfigError("cosine_kmeans: n must be >= 1");
  if (n > hw) throw ConfigError("cosine_kmeans: more clusters than pixels");
  if (max_iter < 1) throw ConfigError("cosine_kmeans: max_iter must be >= 1");

  // unit-sphere projection of every pixel vector
  std::vector<std::vector<double>> pts(static_cast<std::size_t>(hw), std::vector<double>(c, 0.0));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      auto& p = pts[static_cast<std::size_t>(i) * w + j];
      for (int k = 0; k < c; ++k) p[k] = features.at3(i, j, k);
      p = detail::normalize_or(std::move(p), std::vector<double>(c, 0.0));
    }

  auto cos_dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    return 1.0 - detail::dot(a, b);
  };

  // farthest-point seeding
  std::vector<char> chosen(static_cast<std::size_t>(hw), 0);
  std::vector<int> seeds;
  seeds.reserve(n);
  {
    const int first = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hw)));
    seeds.push_back(first);
    chosen[first] = 1;
    std::vector<double> min_dist(static_cast<std::size_t>(hw));
    for (int i = 0; i < hw; ++i) min_dist[i] = cos_dist(pts[i], pts[first]);
    while (static_cast<int>(seeds.size()) < n) {
      int best = -1;
      double best_d = -1.0;
      for (int i = 0; i < hw; ++i) {
        if (chosen[i]) continue;
        if (min_dist[i] > best_d) {
          best_d = min_dist[i];
          best = i;
        }
      }
      seeds.push_back(best);
      chosen[best] = 1;
      for (int i = 0; i < hw; ++i) min_dist[i] = std::min(min_dist[i], cos_dist(pts[i], pts[best]));
    }
  }

  std::vector<double> basis(c, 0.0);
  ClusterResult result;
  result.centers.reserve(n);
  for (int k = 0; k < n; ++k) {
    basis.assign(c, 0.0);
    basis[k % c] = 1.0;
    result.centers.push_back(detail::normalize_or(pts[seeds[k]], basis));
  }

  std::vector<int> prev(static_cast<std::size_t>(hw), -1);
  result.assignments.assign(static_cast<std::size_t>(hw), 0);
  std::vector<double> pixel_dist(static_cast<std::size_t>(hw), 0.0);

  for (int iter = 0; iter < max_iter; ++iter) {
    double objective = 0.0;
    for (int i = 0; i < hw; ++i) {
      int arg = 0;
      double best = cos_dist(pts[i], result.centers[0]);
      for (int k = 1; k < n; ++k) {
        const double d = cos_dist(pts[i], result.centers[k]);
        if (d < best) {
          best = d;
          arg = k;
        }
      }
      result.assignments[i] = arg;
      pixel_dist[i] = best;
      objective += best;
    }
    result.objective_trace.push_back(objective);
    if (result.assignments == prev) break;
    prev = result.assignments;

    std::vector<std::vector<double>> sums(n, std::vector<double>(c, 0.0));
    std::vector<int> counts(n, 0);
    for (int i = 0; i < hw; ++i) {
      const int k = result.assignments[i];
      ++counts[k];
      for (int d = 0; d < c; ++d) sums[k][d] += pts[i][d];
    }
    std::vector<char> reseed_used(static_cast<std::size_t>(hw), 0);
    for (int k = 0; k < n; ++k) {
      if (counts[k] > 0) {
        result.centers[k] = detail::normalize_or(std::move(sums[k]), result.centers[k]);
      } else {
        // reseed to the worst-assigned pixel not already taken by another reseed
        int worst = -1;
        double worst_d = -1.0;
        for (int i = 0; i < hw; ++i) {
          if (reseed_used[i]) continue;
          if (pixel_dist[i] > worst_d) {
            worst_d = pixel_dist[i];
            worst = i;
          }
        }
        reseed_used[worst] = 1;
        basis.assign(c, 0.0);
        basis[k % c] = 1.0;
        result.centers[k] = detail::normalize_or(pts[worst], basis);
      }
    }
  }
  return result;
}

/// Expands cluster assignments into one binary mask per cluster.
inline std::vector<BinaryMask> cluster_masks(const ClusterResult& clusters, int h, int w, int n) {
  std::vector<BinaryMask> masks(static_cast<std::size_t>(n), BinaryMask(h, w));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      masks[clusters.assignments[static_cast<std::size_t>(i) * w + j]].set(i, j, true);
  return masks;
}

/// Removes the foreground from every cluster mask and drops masks that end up
/// empty.
inline std::vector<BinaryMask> refine_background_masks(const std::vector<BinaryMask>& masks,
                                                       const BinaryMask& fg_mask) {
  std::vector<BinaryMask> out;
  out.reserve(masks.size());
  for (const auto& m : masks) {
    BinaryMask refined = mask_subtract(m, fg_mask);
    if (refined.any()) out.push_back(std::move(refined));
  }
  return out;
}

/// Full background-prototype pipeline: cluster the high-level features,
/// refine the cluster masks against the foreground, then average-pool the
/// working features over each surviving region. Returns aligned
/// prototype/mask lists.
inline std::pair<std::vector<Prototype>, std::vector<BinaryMask>> background_prototypes(
    Tape& tape, const Tensor& features, const Tensor& cluster_feat, const BinaryMask& fg_mask,
    int n, Rng& rng, int max_iter = 10) {
  if (features.rank() != 3 || cluster_feat.rank() != 3)
    throw ShapeError("background_prototypes: features must be rank 3");
  if (features.dim(0) != cluster_feat.dim(0) || features.dim(1) != cluster_feat.dim(1))
    throw ShapeError("background_prototypes: spatial dims differ");
  const int h = features.dim(0), w = features.dim(1);
  if (fg_mask.height() != h || fg_mask.width() != w)
    throw ShapeError("background_prototypes: fg_mask shape mismatch");
  if (fg_mask.all()) throw NoBackgroundError("background_prototypes: foreground covers the grid");

  ClusterResult clusters = cosine_kmeans(cluster_feat, n, max_iter, rng);
  std::vector<BinaryMask> refined = refine_background_masks(cluster_masks(clusters, h, w, n), fg_mask);

  std::vector<Prototype> protos;
  protos.reserve(refined.size());
  for (const auto& m : refined) protos.push_back(map_pool(tape, features, m, PrototypeOrigin::kBackgroundQuery));
  return {std::move(protos), std::move(refined)};
}

/// Average-pooled prototypes over an a x a grid of near-equal spatial bins.
inline std::pair<std::vector<Prototype>, std::vector<BinaryMask>> spp_prototypes(Tape& tape,
                                                                                 const Tensor& features,
                                                                                 int level) {
  if (features.rank() != 3) throw ShapeError("spp_prototypes: features must be rank 3");
  const int h = features.dim(0), w = features.dim(1);
  if (level < 1) throw ConfigError("spp_prototypes: level must be >= 1");
  if (level > h || level > w) throw ConfigError("spp_prototypes: level exceeds feature grid");

  std::vector<Prototype> protos;
  std::vector<BinaryMask> masks;
  protos.reserve(static_cast<std::size_t>(level) * level);
  for (int bi = 0; bi < level; ++bi) {
    const int r0 = bi * h / level, r1 = (bi + 1) * h / level;
    for (int bj = 0; bj < level; ++bj) {
      const int c0 = bj * w / level, c1 = (bj + 1) * w / level;
      BinaryMask bin(h, w);
      for (int i = r0; i < r1; ++i)
        for (int j = c0; j < c1; ++j) bin.set(i, j, true);
      protos.push_back(map_pool(tape, features, bin, PrototypeOrigin::kSpp));
      masks.push_back(std::move(bin));
    }
  }
  return {std::move(protos), std::move(masks)};
}

/// Background prototype taken from the support image: MAP over 1 - support_mask.
inline Prototype support_background_prototype(Tape& tape, const Tensor& features,
                                              const BinaryMask& support_mask) {
  BinaryMask bg = support_mask.complement();
  if (!bg.any()) throw EmptyMaskError("support_background_prototype: support mask covers the grid");
  return map_pool(tape, features, bg, PrototypeOrigin::kBackgroundSupport);
}

}  // namespace scnet
