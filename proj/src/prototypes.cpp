#include "protoseg/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "protoseg/random.hpp"
#include "protoseg/resample.hpp"

namespace protoseg {

namespace {

// Directions closer than this (in cosine) are counted as one.
constexpr double kSameDirection = 1e-12;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

// Unit-normalised copy of the rows; throws on a zero row.
std::vector<double> normalized_rows(const ClassFeatureSet& set) {
  std::vector<double> unit(set.values);
  const auto d = static_cast<std::size_t>(set.dims);
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::span<double> row(unit.data() + i * d, d);
    const double n = std::sqrt(dot(row, row));
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error("degenerate feature: zero or non-finite norm at row " + std::to_string(i) + " of class " +
                  std::to_string(set.class_id));
    }
    for (auto& x : row) x /= n;
  }
  return unit;
}

std::optional<ClassFeatureSet> try_collect(std::span<const AnnotatedFeatures> sources, int class_id,
                                           double threshold) {
  ClassFeatureSet out;
  out.class_id = class_id;
  for (const auto& src : sources) {
    const FeatureMap& fm = *src.features;
    if (out.dims == 0) out.dims = fm.channels();
    if (fm.channels() != out.dims) throw Error("collect: feature dimension differs between sources");
    const SoftMask soft = downsample_mask(*src.mask, {fm.height(), fm.width()});
    const auto plane = soft.planes.find(class_id);
    if (plane == soft.planes.end()) continue;
    for (std::size_t p = 0; p < fm.positions(); ++p) {
      if (plane->second[p] < threshold) continue;
      const auto f = fm.at(p);
      if (norm_of(f) == 0.0) continue;
      out.values.insert(out.values.end(), f.begin(), f.end());
    }
  }
  if (out.values.empty()) return std::nullopt;
  return out;
}

// One k-means++ seeding followed by Lloyd iterations on unit rows already in
// canonical order. The assignment is returned in that order.
KMeansResult lloyd(const std::vector<double>& unit, std::size_t n, std::size_t d, std::size_t k_eff, int max_iter,
                   std::uint64_t seed) {
  auto row = [&](std::size_t i) { return std::span<const double>(unit.data() + i * d, d); };
  // k-means++ seeding; sampling weight is the cosine distance to the nearest
  // chosen seed, i.e. half the squared chord length.
  Rng rng(seed);
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k_eff);
  {
    const std::size_t first = rng.index(n);
    centroids.emplace_back(row(first).begin(), row(first).end());
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::max(0.0, 1.0 - dot(row(i), centroids[0]));
    while (centroids.size() < k_eff) {
      const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
      std::size_t pick = n - 1;
      if (total > 0.0) {
        double target = rng.uniform() * total;
        for (std::size_t i = 0; i < n; ++i) {
          if (dist[i] <= 0.0) continue;
          target -= dist[i];
          if (target < 0.0) {
            pick = i;
            break;
          }
        }
        while (dist[pick] <= 0.0 && pick > 0) --pick;
      }
      centroids.emplace_back(row(pick).begin(), row(pick).end());
      for (std::size_t i = 0; i < n; ++i) {
        dist[i] = std::min(dist[i], std::max(0.0, 1.0 - dot(row(i), centroids.back())));
      }
    }
  }

  std::vector<int> assign(n, -1);
  std::vector<double> best_cos(n);
  auto assign_all = [&](std::vector<int>& out) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bc = dot(row(i), centroids[0]);
      for (std::size_t c = 1; c < centroids.size(); ++c) {
        const double v = dot(row(i), centroids[c]);
        if (v > bc) {
          bc = v;
          best = static_cast<int>(c);
        }
      }
      out[i] = best;
      best_cos[i] = bc;
      objective += 1.0 - bc;
    }
    return objective;
  };

  KMeansResult result;
  result.objective_trace.push_back(assign_all(assign));

  std::vector<int> next(n);
  for (int it = 0; it < max_iter; ++it) {
    // Update step: renormalised member sums.
    std::vector<std::vector<double>> sums(k_eff, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(k_eff, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[static_cast<std::size_t>(assign[i])];
      const auto r = row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += r[j];
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < k_eff; ++c) {
      if (counts[c] == 0) {
        // Reseed to the feature farthest from its own centroid.
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (best_cos[i] < best_cos[far]) far = i;
        }
        centroids[c].assign(row(far).begin(), row(far).end());
        best_cos[far] = 1.0;
        continue;
      }
      const double len = std::sqrt(dot(sums[c], sums[c]));
      if (len > 0.0) {
        for (std::size_t j = 0; j < d; ++j) centroids[c][j] = sums[c][j] / len;
      }
    }
    result.iterations = it + 1;
    result.objective_trace.push_back(assign_all(next));
    if (next == assign) {
      result.converged = true;
      break;
    }
    assign.swap(next);
  }

  result.centroids = std::move(centroids);
  result.assignment = std::move(assign);
  return result;
}

}  // namespace

SoftMask downsample_mask(const ClassMask& mask, ImageSize grid) {
  SoftMask out;
  out.height = grid.height;
  out.width = grid.width;
  const auto labels = mask.labels();
  for (int c : mask.classes_present()) {
    std::vector<double> onehot(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) onehot[i] = labels[i] == c ? 1.0 : 0.0;
    out.planes.emplace(c, resize_bilinear(onehot, mask.size(), grid));
  }
  return out;
}

ClassFeatureSet collect_class_features(std::span<const AnnotatedFeatures> sources, int class_id,
                                       double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error("collect: threshold must lie in (0, 1)");
  }
  auto set = try_collect(sources, class_id, threshold);
  if (!set) {
    throw Error("class empty at feature resolution (class " + std::to_string(class_id) + ")");
  }
  return std::move(*set);
}

ClassFeatureSet collect_class_features(std::span<const Support> supports, int layer, int class_id,
                                       double threshold) {
  const auto views = support_views(supports, layer);
  return collect_class_features(views, class_id, threshold);
}

std::vector<AnnotatedFeatures> support_views(std::span<const Support> supports, int layer) {
  std::vector<AnnotatedFeatures> views;
  views.reserve(supports.size());
  for (const auto& s : supports) views.push_back({&s.features.patches(layer), &s.mask});
  return views;
}

double spherical_objective(const ClassFeatureSet& features, std::span<const std::vector<double>> centroids) {
  const auto unit = normalized_rows(features);
  const auto d = static_cast<std::size_t>(features.dims);
  double total = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::span<const double> row(unit.data() + i * d, d);
    double best = -2.0;
    for (const auto& c : centroids) best = std::max(best, dot(row, c));
    total += 1.0 - best;
  }
  return total;
}

KMeansResult spherical_kmeans_detailed(const ClassFeatureSet& features, int k, int max_iter,
                                       std::uint64_t seed, int restarts) {
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (max_iter < 1) throw Error("kmeans: max_iter must be >= 1");
  if (restarts < 1) throw Error("kmeans: restarts must be >= 1");
  const std::size_t n = features.size();
  if (n == 0) throw Error("kmeans: empty feature set");
  const auto d = static_cast<std::size_t>(features.dims);

  const auto unit_input = normalized_rows(features);

  // Canonical order: lexicographic on the unit vectors.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(unit_input.begin() + static_cast<std::ptrdiff_t>(a * d),
                                        unit_input.begin() + static_cast<std::ptrdiff_t>((a + 1) * d),
                                        unit_input.begin() + static_cast<std::ptrdiff_t>(b * d),
                                        unit_input.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
  });
  std::vector<double> unit(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(unit_input.begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                unit.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto row = [&](std::size_t i) { return std::span<const double>(unit.data() + i * d, d); };

  // Cap k by the number of distinct directions.
  std::size_t distinct = 0;
  {
    std::vector<std::size_t> reps;
    for (std::size_t i = 0; i < n && reps.size() < static_cast<std::size_t>(k); ++i) {
      const bool seen = std::any_of(reps.begin(), reps.end(),
                                    [&](std::size_t r) { return dot(row(i), row(r)) >= 1.0 - kSameDirection; });
      if (!seen) reps.push_back(i);
    }
    distinct = reps.size();
  }
  const std::size_t k_eff = std::min(static_cast<std::size_t>(k), distinct);

  // Independent seedings; the lowest final objective wins, earliest on ties.
  KMeansResult best;
  for (int r = 0; r < restarts; ++r) {
    auto run = lloyd(unit, n, d, k_eff, max_iter, derive_seed(seed, static_cast<std::uint64_t>(r)));
    if (r == 0 || run.objective_trace.back() < best.objective_trace.back()) best = std::move(run);
  }
  std::vector<int> canonical = std::move(best.assignment);
  best.assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) best.assignment[order[i]] = canonical[i];
  return best;
}

std::vector<std::vector<double>> spherical_kmeans(const ClassFeatureSet& features, int k, int max_iter,
                                                  std::uint64_t seed, int restarts) {
  return spherical_kmeans_detailed(features, k, max_iter, seed, restarts).centroids;
}

GramMatrix class_gram(const ClassFeatureSet& features) {
  const std::size_t n = features.size();
  if (n == 0) throw Error("gram: empty feature set");
  const auto unit = normalized_rows(features);
  const auto d = static_cast<std::size_t>(features.dims);
  GramMatrix g;
  g.dims = features.dims;
  g.values.assign(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* f = unit.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      const double fa = f[a];
      if (fa == 0.0) continue;
      double* out = g.values.data() + a * d;
      for (std::size_t b = a; b < d; ++b) out[b] += fa * f[b];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      const double v = g.values[a * d + b] * inv;
      g.values[a * d + b] = v;
      g.values[b * d + a] = v;
    }
  }
  return g;
}

void validate(const PrototypeParams& params) {
  if (params.n_clusters < 1) throw Error("n_clusters must be >= 1");
  if (!(params.mask_threshold > 0.0 && params.mask_threshold < 1.0)) {
    throw Error("mask threshold must lie in (0, 1)");
  }
  if (params.max_iter < 1) throw Error("max_iter must be >= 1");
  if (params.n_init < 1) throw Error("n_init must be >= 1");
}

PrototypeBank build_prototypes(std::span<const AnnotatedFeatures> sources, std::span<const int> class_ids,
                               const PrototypeParams& params) {
  validate(params);
  PrototypeBank bank;
  for (int c : class_ids) {
    auto set = try_collect(sources, c, params.mask_threshold);
    if (!set) continue;
    PrototypeSet ps;
    ps.class_id = c;
    ps.feature_count = set->size();
    ps.prototypes = spherical_kmeans(*set, params.n_clusters, params.max_iter,
                                     derive_seed(params.seed, static_cast<std::uint64_t>(c)), params.n_init);
    ps.gram = class_gram(*set);
    bank.emplace(c, std::move(ps));
  }
  if (bank.empty()) {
    throw Error("episode unusable at this layer: every class is empty at feature resolution");
  }
  return bank;
}

PrototypeBank build_prototypes(const Episode& ep, int layer, const PrototypeParams& params) {
  std::vector<int> classes{ClassMask::kBackground};
  classes.insert(classes.end(), ep.class_list.begin(), ep.class_list.end());
  const auto views = support_views(ep.supports, layer);
  return build_prototypes(views, classes, params);
}

}  // namespace protoseg
