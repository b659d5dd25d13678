#pragma once

#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "protoseg/prototypes.hpp"
#include "protoseg/types.hpp"

namespace protoseg {

/// One real value per grid position, row-major.
struct SimilarityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ImageSize size() const { return {height, width}; }
};

enum class MatchMode { kCombined, kPrototypeOnly, kGramOnly };

MatchMode parse_match_mode(std::string_view text);
std::string_view to_string(MatchMode mode);

/// Cosine similarity of every query position with a unit prototype. Positions
/// with a zero feature vector score 0.
SimilarityMap prototype_similarity(const FeatureMap& query, std::span<const double> prototype);

/// Quadratic form q^T G q per position, on the raw (unnormalised) query.
SimilarityMap gram_similarity_raw(const FeatureMap& query, const GramMatrix& gram);

/// Relative range under which a raw gram map counts as constant.
inline constexpr double kGramFlatTolerance = 1e-10;

/// gram_similarity_raw min-max normalised to [0, 1]. A map that is constant,
/// up to kGramFlatTolerance times the largest query energy, becomes 0.
SimilarityMap gram_similarity(const FeatureMap& query, const GramMatrix& gram);

/// Similarity set of one class: prototype maps, the gram map, or both.
std::vector<SimilarityMap> assemble_class_stack(const FeatureMap& query, const PrototypeSet& ps, MatchMode mode);

SimilarityMap upsample_bilinear(const SimilarityMap& map, int height, int width);

struct ScoreMaps {
  SimilarityMap mean;
  SimilarityMap max;
  SimilarityMap score;
};

/// Elementwise mean, max and their product over a non-empty stack.
ScoreMaps aggregate_scores(std::span<const SimilarityMap> stack);

/// Per-pixel argmax over class ids; exact ties go to the lowest id.
ClassMask assign_classes(const std::map<int, SimilarityMap>& per_class_scores);

struct PipelineParams {
  PrototypeParams prototypes;
  MatchMode mode = MatchMode::kCombined;
};

struct Segmentation {
  ClassMask prediction;
  /// Full-resolution score map of every competing class.
  std::map<int, SimilarityMap> scores;
};

/// Scores a query feature map against a prototype bank and labels every pixel
/// of an output_size image.
Segmentation segment_features(const FeatureMap& query, ImageSize output_size, const PrototypeBank& bank,
                              MatchMode mode);

/// build_prototypes, per-class stacks, upsampling, aggregation and argmax.
Segmentation segment_episode_detailed(const Episode& ep, int layer, const PipelineParams& params);
ClassMask segment_episode(const Episode& ep, int layer, const PipelineParams& params);

}  // namespace protoseg
