#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protoseg/matching.hpp"
#include "protoseg/metrics.hpp"
#include "protoseg/prototypes.hpp"
#include "protoseg/types.hpp"

namespace protoseg {

// ---------------------------------------------------------------------------
// Per-layer outcomes and oracle selection

struct LayerOutcome {
  int layer = 0;
  ClassMask prediction;
  std::optional<double> miou;
  std::optional<ConfusionMatrix> confusion;
};

/// Largest class id of the episode; sizes every confusion matrix it produces.
int episode_num_classes(const Episode& ep);

/// Segments the query at every layer. mIoU and confusion are filled only
/// when the episode carries query ground truth.
std::vector<LayerOutcome> per_layer_outcomes(const Episode& ep, const PipelineParams& params);

/// 1-based layer with the highest per-episode mIoU; ties go to the lowest.
int oracle_select(std::span<const LayerOutcome> outcomes);
int oracle_select(std::span<const double> per_layer_miou);

// ---------------------------------------------------------------------------
// Layer quality heuristics

enum class Heuristic : std::size_t {
  kFisher = 0,
  kReverseMiou,
  kSelfIou,
  kGramDistance,
  kRegisterRatio,
  kEntropy,
};

inline constexpr std::size_t kHeuristicCount = 6;
inline constexpr std::array<Heuristic, kHeuristicCount> kAllHeuristics{
    Heuristic::kFisher,       Heuristic::kReverseMiou,   Heuristic::kSelfIou,
    Heuristic::kGramDistance, Heuristic::kRegisterRatio, Heuristic::kEntropy};

/// CSV column name: fisher, rev_miou, self_iou, gram_dist, reg_ratio, entropy.
std::string_view column_name(Heuristic h);
Heuristic parse_heuristic(std::string_view name);

/// One value per heuristic for one layer; nullopt marks "unavailable".
using HeuristicRow = std::array<std::optional<double>, kHeuristicCount>;

/// Between-class over within-class cosine scatter of the query features,
/// with classes taken from the prediction (nearest-resampled to the grid).
double fisher_score(const FeatureMap& query, const ClassMask& pred, double eps);

/// Mean mIoU of the supports re-segmented with their own prototypes.
std::optional<double> support_self_iou(const Episode& ep, int layer, const PipelineParams& params);

/// Prototypes built from the query and its prediction segment the supports;
/// mean mIoU against the support masks. Unavailable when the prediction has
/// fewer than two classes or no foreground.
std::optional<double> reverse_miou(const Episode& ep, int layer, const ClassMask& query_pred,
                                   const PipelineParams& params);

/// Frobenius distance between two Gram matrices.
double gram_distance(const GramMatrix& a, const GramMatrix& b);

/// Mean Gram distance between support-side and prediction-side class Grams,
/// over classes non-empty on both sides.
std::optional<double> gram_consistency(const Episode& ep, int layer, const ClassMask& query_pred,
                                       const PipelineParams& params);

/// ||registers|| / (||patches|| + eps); unavailable without registers.
std::optional<double> register_patch_ratio(const LayerFeatures& layer, double eps);

/// Pixel-mean entropy of the per-pixel softmax over class scores.
std::optional<double> map_entropy(const std::map<int, SimilarityMap>& per_class_scores);

struct AnalysisParams {
  PipelineParams pipeline;
  double eps = 1e-8;
};

struct LayerEvaluation {
  LayerOutcome outcome;
  HeuristicRow heuristics;
};

/// per_layer_outcomes plus, when requested, all six heuristics per layer.
std::vector<LayerEvaluation> analyze_layers(const Episode& ep, const AnalysisParams& params,
                                            bool with_heuristics);

// ---------------------------------------------------------------------------
// Weighted selection score and grid search

enum class Transform { kIdentity, kLog1p };

struct WeightConfig {
  std::array<double, kHeuristicCount> weights{};
  std::array<int, kHeuristicCount> directions{};
  std::array<Transform, kHeuristicCount> transforms{};
};

/// +1 for fisher, rev_miou and self_iou; -1 for gram_dist, reg_ratio and entropy.
std::array<int, kHeuristicCount> default_directions();
/// log(1+x) for fisher, identity elsewhere.
std::array<Transform, kHeuristicCount> default_transforms();

void validate(const WeightConfig& cfg);

/// Per heuristic and layer: transformed, min-max normalised across layers,
/// unavailable entries imputed with the worst value for the heuristic's
/// direction, multiplied by the direction. A heuristic with no available
/// entry yields nullopt.
std::array<std::optional<std::vector<double>>, kHeuristicCount> signed_normalized(
    std::span<const HeuristicRow> per_layer, const std::array<int, kHeuristicCount>& directions,
    const std::array<Transform, kHeuristicCount>& transforms);

/// Weighted signed sum of the normalised heuristics, one score per layer.
std::vector<double> selection_score(std::span<const HeuristicRow> per_layer, const WeightConfig& cfg);

/// Index (0-based) of the largest score; ties go to the lowest index.
std::size_t argmax_first(std::span<const double> values);

struct EpisodeTable {
  std::string episode_id;
  /// Indexed by layer - 1.
  std::vector<HeuristicRow> heuristics;
  std::vector<double> miou;
};

enum class GridObjective { kMeanMiou, kLayerAgreement };

struct GridSearchOptions {
  double step = 0.1;
  std::array<int, kHeuristicCount> directions = default_directions();
  std::array<Transform, kHeuristicCount> transforms = default_transforms();
  /// Heuristics that take part in the lattice; the rest stay at weight 0.
  std::array<bool, kHeuristicCount> active{true, true, true, true, true, true};
  GridObjective objective = GridObjective::kMeanMiou;
  int workers = 0;
};

struct GridSearchResult {
  WeightConfig best;
  /// Mean per-episode mIoU of the layers the best config selects.
  double achieved_miou = 0.0;
  /// Value of the search objective for the best config.
  double objective_value = 0.0;
  std::size_t configs_evaluated = 0;
  double oracle_miou = 0.0;
  double last_layer_miou = 0.0;
  double regret = 0.0;
  /// 1-based selected layer per episode.
  std::vector<int> selected_layers;
};

/// Number of lattice points for a step and number of active heuristics,
/// excluding the all-zero point.
std::size_t lattice_size(double step, std::size_t active_heuristics);

/// Mean per-episode mIoU of the layers cfg selects.
double evaluate_config(std::span<const EpisodeTable> tables, const WeightConfig& cfg);

/// Exhaustive search over weights {0, step, ..., 1} for the active
/// heuristics. Ties go to the lexicographically smallest weight vector.
GridSearchResult grid_search(std::span<const EpisodeTable> tables, const GridSearchOptions& options);

// ---------------------------------------------------------------------------
// Heuristic table CSV

/// Columns: episode_id,layer,fisher,rev_miou,self_iou,gram_dist,reg_ratio,entropy,miou
void write_heuristic_table(std::ostream& out, std::span<const EpisodeTable> tables);
/// Missing mIoU values are read as NaN.
std::vector<EpisodeTable> read_heuristic_table(std::istream& in);

}  // namespace protoseg
