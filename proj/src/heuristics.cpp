#include <algorithm>
#include <cmath>
#include <set>

#include "protoseg/layer_analysis.hpp"
#include "protoseg/resample.hpp"

namespace protoseg {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<int> with_background(std::span<const int> classes) {
  std::vector<int> out{ClassMask::kBackground};
  out.insert(out.end(), classes.begin(), classes.end());
  return out;
}

// Mean mIoU of the supports segmented with bank; supports with no foreground
// in either mask are skipped.
std::optional<double> mean_support_miou(const Episode& ep, int layer, const PrototypeBank& bank, MatchMode mode) {
  const int num_classes = episode_num_classes(ep);
  double sum = 0.0;
  int used = 0;
  for (const auto& s : ep.supports) {
    const auto seg = segment_features(s.features.patches(layer), s.features.image_size(), bank, mode);
    const auto cm = confusion(seg.prediction, s.mask.restricted_to(ep.class_list), num_classes);
    if (class_ious(cm).empty()) continue;
    sum += miou(cm);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

std::optional<double> reverse_miou_impl(const Episode& ep, int layer, const ClassMask& query_pred,
                                        const PipelineParams& params) {
  const FeatureMap& q = ep.query.patches(layer);
  const ClassMask grid_pred = resize_nearest(query_pred, {q.height(), q.width()});
  const auto present = grid_pred.classes_present();
  const bool has_foreground = std::any_of(present.begin(), present.end(), [](int c) { return c != 0; });
  if (present.size() < 2 || !has_foreground) return std::nullopt;

  const AnnotatedFeatures source{&q, &grid_pred};
  const auto classes = with_background(ep.class_list);
  PrototypeBank bank;
  try {
    bank = build_prototypes(std::span(&source, 1), classes, params.prototypes);
  } catch (const Error&) {
    return std::nullopt;
  }
  return mean_support_miou(ep, layer, bank, params.mode);
}

std::optional<double> gram_consistency_impl(const Episode& ep, int layer, const PrototypeBank& support_bank,
                                            const ClassMask& query_pred, double threshold) {
  const FeatureMap& q = ep.query.patches(layer);
  const ClassMask grid_pred = resize_nearest(query_pred, {q.height(), q.width()});
  const AnnotatedFeatures source{&q, &grid_pred};
  double sum = 0.0;
  int used = 0;
  for (const auto& [c, ps] : support_bank) {
    ClassFeatureSet query_set;
    try {
      query_set = collect_class_features(std::span(&source, 1), c, threshold);
    } catch (const Error&) {
      continue;
    }
    sum += gram_distance(ps.gram, class_gram(query_set));
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / used;
}

}  // namespace

int episode_num_classes(const Episode& ep) {
  int n = 0;
  for (int c : ep.class_list) n = std::max(n, c);
  return n;
}

std::vector<LayerOutcome> per_layer_outcomes(const Episode& ep, const PipelineParams& params) {
  AnalysisParams ap;
  ap.pipeline = params;
  std::vector<LayerOutcome> out;
  for (auto& e : analyze_layers(ep, ap, false)) out.push_back(std::move(e.outcome));
  return out;
}

int oracle_select(std::span<const double> per_layer_miou) {
  if (per_layer_miou.empty()) throw Error("oracle: no layers");
  return static_cast<int>(argmax_first(per_layer_miou)) + 1;
}

int oracle_select(std::span<const LayerOutcome> outcomes) {
  std::vector<double> values;
  values.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    if (!o.miou) throw Error("oracle: layer " + std::to_string(o.layer) + " has no mIoU");
    values.push_back(*o.miou);
  }
  return outcomes[static_cast<std::size_t>(oracle_select(values) - 1)].layer;
}

std::string_view column_name(Heuristic h) {
  switch (h) {
    case Heuristic::kFisher:
      return "fisher";
    case Heuristic::kReverseMiou:
      return "rev_miou";
    case Heuristic::kSelfIou:
      return "self_iou";
    case Heuristic::kGramDistance:
      return "gram_dist";
    case Heuristic::kRegisterRatio:
      return "reg_ratio";
    case Heuristic::kEntropy:
      return "entropy";
  }
  return "";
}

Heuristic parse_heuristic(std::string_view name) {
  for (auto h : kAllHeuristics) {
    if (column_name(h) == name) return h;
  }
  throw Error("unknown heuristic '" + std::string(name) + "'");
}

double fisher_score(const FeatureMap& query, const ClassMask& pred, double eps) {
  const ClassMask grid = resize_nearest(pred, {query.height(), query.width()});
  const auto d = static_cast<std::size_t>(query.channels());
  const auto labels = grid.labels();

  std::map<int, std::vector<double>> sums;
  std::map<int, std::size_t> counts;
  std::vector<double> global(d, 0.0);
  std::size_t total = 0;
  for (std::size_t p = 0; p < query.positions(); ++p) {
    if (labels[p] == ClassMask::kIgnore) continue;
    auto& s = sums[labels[p]];
    s.resize(d, 0.0);
    const auto f = query.at(p);
    for (std::size_t j = 0; j < d; ++j) {
      s[j] += f[j];
      global[j] += f[j];
    }
    ++counts[labels[p]];
    ++total;
  }
  if (sums.size() < 2) return 0.0;

  for (auto& [c, s] : sums) {
    for (auto& v : s) v /= static_cast<double>(counts[c]);
  }
  for (auto& v : global) v /= static_cast<double>(total);

  double between = 0.0;
  for (const auto& [c, mean] : sums) {
    between += static_cast<double>(counts[c]) * (1.0 - cosine(mean, global));
  }
  double within = 0.0;
  std::vector<double> f(d);
  for (std::size_t p = 0; p < query.positions(); ++p) {
    if (labels[p] == ClassMask::kIgnore) continue;
    const auto src = query.at(p);
    std::copy(src.begin(), src.end(), f.begin());
    within += 1.0 - cosine(f, sums[labels[p]]);
  }
  return std::max(0.0, between) / (std::max(0.0, within) + eps);
}

std::optional<double> support_self_iou(const Episode& ep, int layer, const PipelineParams& params) {
  validate_episode(ep);
  const auto bank = build_prototypes(ep, layer, params.prototypes);
  return mean_support_miou(ep, layer, bank, params.mode);
}

std::optional<double> reverse_miou(const Episode& ep, int layer, const ClassMask& query_pred,
                                   const PipelineParams& params) {
  validate_episode(ep);
  return reverse_miou_impl(ep, layer, query_pred, params);
}

double gram_distance(const GramMatrix& a, const GramMatrix& b) {
  if (a.dims != b.dims) throw Error("gram distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double diff = a.values[i] - b.values[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

std::optional<double> gram_consistency(const Episode& ep, int layer, const ClassMask& query_pred,
                                       const PipelineParams& params) {
  validate_episode(ep);
  const auto bank = build_prototypes(ep, layer, params.prototypes);
  return gram_consistency_impl(ep, layer, bank, query_pred, params.prototypes.mask_threshold);
}

std::optional<double> register_patch_ratio(const LayerFeatures& layer, double eps) {
  if (layer.registers.count() == 0) return std::nullopt;
  auto norm = [](std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
  };
  return norm(layer.registers.data()) / (norm(layer.patches.data()) + eps);
}

std::optional<double> map_entropy(const std::map<int, SimilarityMap>& per_class_scores) {
  if (per_class_scores.size() < 2) return std::nullopt;
  const auto& first = per_class_scores.begin()->second;
  const std::size_t n = first.values.size();
  std::vector<const std::vector<double>*> maps;
  for (const auto& [c, m] : per_class_scores) {
    if (m.values.size() != n) throw Error("entropy: score map shapes differ");
    maps.push_back(&m.values);
  }
  if (n == 0) return std::nullopt;
  double total = 0.0;
  std::vector<double> e(maps.size());
  for (std::size_t i = 0; i < n; ++i) {
    double peak = (*maps[0])[i];
    for (const auto* m : maps) peak = std::max(peak, (*m)[i]);
    double z = 0.0;
    for (std::size_t c = 0; c < maps.size(); ++c) {
      e[c] = std::exp((*maps[c])[i] - peak);
      z += e[c];
    }
    double h = 0.0;
    for (double v : e) {
      const double p = v / z;
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return std::max(0.0, total / static_cast<double>(n));
}

std::vector<LayerEvaluation> analyze_layers(const Episode& ep, const AnalysisParams& params, bool with_heuristics) {
  validate_episode(ep);
  const int num_classes = episode_num_classes(ep);
  std::optional<ClassMask> gt;
  if (ep.query_gt) gt = ep.query_gt->restricted_to(ep.class_list);

  std::vector<LayerEvaluation> out;
  out.reserve(static_cast<std::size_t>(ep.query.num_layers()));
  for (int layer = 1; layer <= ep.query.num_layers(); ++layer) {
    const auto bank = build_prototypes(ep, layer, params.pipeline.prototypes);
    auto seg = segment_features(ep.query.patches(layer), ep.query.image_size(), bank, params.pipeline.mode);

    LayerEvaluation ev;
    ev.outcome.layer = layer;
    if (gt) {
      auto cm = confusion(seg.prediction, *gt, num_classes);
      if (!class_ious(cm).empty()) ev.outcome.miou = miou(cm);
      ev.outcome.confusion = std::move(cm);
    }
    if (with_heuristics) {
      auto& h = ev.heuristics;
      const auto& q = ep.query.layer(layer);
      h[static_cast<std::size_t>(Heuristic::kFisher)] = fisher_score(q.patches, seg.prediction, params.eps);
      h[static_cast<std::size_t>(Heuristic::kReverseMiou)] =
          reverse_miou_impl(ep, layer, seg.prediction, params.pipeline);
      h[static_cast<std::size_t>(Heuristic::kSelfIou)] = mean_support_miou(ep, layer, bank, params.pipeline.mode);
      h[static_cast<std::size_t>(Heuristic::kGramDistance)] =
          gram_consistency_impl(ep, layer, bank, seg.prediction, params.pipeline.prototypes.mask_threshold);
      h[static_cast<std::size_t>(Heuristic::kRegisterRatio)] = register_patch_ratio(q, params.eps);
      h[static_cast<std::size_t>(Heuristic::kEntropy)] = map_entropy(seg.scores);
    }
    ev.outcome.prediction = std::move(seg.prediction);
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace protoseg
