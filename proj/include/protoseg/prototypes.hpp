#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "protoseg/types.hpp"

namespace protoseg {

/// Per-class membership in [0, 1] at feature resolution.
struct SoftMask {
  int height = 0;
  int width = 0;
  std::map<int, std::vector<double>> planes;
};

/// Bilinearly downsamples the one-hot planes of every class present in mask.
/// Ignore pixels contribute zero to every plane.
SoftMask downsample_mask(const ClassMask& mask, ImageSize grid);

/// Feature map paired with the labels that annotate it. The mask may be at
/// any resolution; it is resampled to the feature grid on use.
struct AnnotatedFeatures {
  const FeatureMap* features;
  const ClassMask* mask;
};

/// Row-major N x d set of features belonging to one class.
struct ClassFeatureSet {
  int class_id = 0;
  int dims = 0;
  std::vector<double> values;

  std::size_t size() const { return dims == 0 ? 0 : values.size() / static_cast<std::size_t>(dims); }
  std::span<const double> at(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(dims), static_cast<std::size_t>(dims)};
  }
};

/// Gathers every patch whose soft membership for class_id is >= threshold.
/// Zero-norm feature vectors carry no direction and are skipped.
/// Throws if nothing is collected.
ClassFeatureSet collect_class_features(std::span<const AnnotatedFeatures> sources, int class_id,
                                       double threshold);
ClassFeatureSet collect_class_features(std::span<const Support> supports, int layer, int class_id,
                                       double threshold);

inline constexpr int kDefaultRestarts = 10;

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  /// Cluster index for every input feature, in input order.
  std::vector<int> assignment;
  /// Sum of cosine distances after every assignment step.
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

/// Lloyd iterations on unit-normalised features with k-means++ seeding under
/// cosine distance. The number of centroids is min(k, distinct directions).
/// Inputs are clustered in a canonical (sorted) order so the result does not
/// depend on the order of the input rows.
/// restarts independent seedings are run and the one with the lowest final
/// objective is kept; its trace is reported.
KMeansResult spherical_kmeans_detailed(const ClassFeatureSet& features, int k, int max_iter,
                                       std::uint64_t seed, int restarts = kDefaultRestarts);
std::vector<std::vector<double>> spherical_kmeans(const ClassFeatureSet& features, int k, int max_iter,
                                                  std::uint64_t seed, int restarts = kDefaultRestarts);

/// Sum over features of (1 - max_j cos(f, centroid_j)).
double spherical_objective(const ClassFeatureSet& features, std::span<const std::vector<double>> centroids);

/// Symmetric d x d matrix, row-major.
struct GramMatrix {
  int dims = 0;
  std::vector<double> values;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * dims + col]; }
};

/// Mean outer product of the unit-normalised features.
GramMatrix class_gram(const ClassFeatureSet& features);

struct PrototypeSet {
  int class_id = 0;
  std::vector<std::vector<double>> prototypes;
  GramMatrix gram;
  std::size_t feature_count = 0;
};

using PrototypeBank = std::map<int, PrototypeSet>;

struct PrototypeParams {
  int n_clusters = 5;
  double mask_threshold = 0.5;
  int max_iter = 50;
  /// k-means seedings per class.
  int n_init = kDefaultRestarts;
  std::uint64_t seed = 0;
};

void validate(const PrototypeParams& params);

/// Builds a PrototypeSet for every class in class_ids that is non-empty at
/// feature resolution; empty classes are left out. Throws when all are empty.
PrototypeBank build_prototypes(std::span<const AnnotatedFeatures> sources, std::span<const int> class_ids,
                               const PrototypeParams& params);

/// Background plus every class of the episode, from the supports at layer.
PrototypeBank build_prototypes(const Episode& ep, int layer, const PrototypeParams& params);

/// Support features at a given layer viewed as AnnotatedFeatures.
std::vector<AnnotatedFeatures> support_views(std::span<const Support> supports, int layer);

}  // namespace protoseg
