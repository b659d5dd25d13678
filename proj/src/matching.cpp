#include "protoseg/matching.hpp"

#include <algorithm>
#include <cmath>

#include "protoseg/resample.hpp"

namespace protoseg {

MatchMode parse_match_mode(std::string_view text) {
  if (text == "combined") return MatchMode::kCombined;
  if (text == "prototype_only") return MatchMode::kPrototypeOnly;
  if (text == "gram_only") return MatchMode::kGramOnly;
  throw Error("unknown mode '" + std::string(text) + "' (expected combined, prototype_only or gram_only)");
}

std::string_view to_string(MatchMode mode) {
  switch (mode) {
    case MatchMode::kCombined:
      return "combined";
    case MatchMode::kPrototypeOnly:
      return "prototype_only";
    case MatchMode::kGramOnly:
      return "gram_only";
  }
  return "combined";
}

SimilarityMap prototype_similarity(const FeatureMap& query, std::span<const double> prototype) {
  if (prototype.size() != static_cast<std::size_t>(query.channels())) {
    throw Error("prototype similarity: dimension mismatch");
  }
  double pnorm = 0.0;
  for (double v : prototype) pnorm += v * v;
  pnorm = std::sqrt(pnorm);

  SimilarityMap out{query.height(), query.width(), std::vector<double>(query.positions(), 0.0)};
  if (pnorm == 0.0) return out;
  for (std::size_t p = 0; p < query.positions(); ++p) {
    const auto f = query.at(p);
    double dot = 0.0;
    double fnorm = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
      const double x = f[j];
      dot += x * prototype[j];
      fnorm += x * x;
    }
    if (fnorm == 0.0) continue;
    out.values[p] = std::clamp(dot / (std::sqrt(fnorm) * pnorm), -1.0, 1.0);
  }
  return out;
}

SimilarityMap gram_similarity_raw(const FeatureMap& query, const GramMatrix& gram) {
  const auto d = static_cast<std::size_t>(query.channels());
  if (static_cast<std::size_t>(gram.dims) != d) throw Error("gram similarity: dimension mismatch");
  SimilarityMap out{query.height(), query.width(), std::vector<double>(query.positions(), 0.0)};
  std::vector<double> q(d);
  for (std::size_t p = 0; p < query.positions(); ++p) {
    const auto f = query.at(p);
    std::copy(f.begin(), f.end(), q.begin());
    double energy = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      if (q[a] == 0.0) continue;
      const double* g = gram.values.data() + a * d;
      double projected = 0.0;
      for (std::size_t b = 0; b < d; ++b) projected += g[b] * q[b];
      energy += q[a] * projected;
    }
    out.values[p] = energy;
  }
  return out;
}

SimilarityMap gram_similarity(const FeatureMap& query, const GramMatrix& gram) {
  auto map = gram_similarity_raw(query, gram);
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  // Raw values are bounded by the query energy ||q||^2 (trace G = 1). A range
  // below float32 resolution of that bound is rounding residue, not signal.
  double energy = 0.0;
  for (std::size_t p = 0; p < query.positions(); ++p) {
    double e = 0.0;
    for (float x : query.at(p)) e += static_cast<double>(x) * x;
    energy = std::max(energy, e);
  }
  const bool flat = !(range > kGramFlatTolerance * energy);
  for (auto& v : map.values) v = flat ? 0.0 : std::clamp((v - min) / range, 0.0, 1.0);
  return map;
}

std::vector<SimilarityMap> assemble_class_stack(const FeatureMap& query, const PrototypeSet& ps, MatchMode mode) {
  std::vector<SimilarityMap> stack;
  if (mode != MatchMode::kGramOnly) {
    for (const auto& p : ps.prototypes) stack.push_back(prototype_similarity(query, p));
  }
  if (mode != MatchMode::kPrototypeOnly) {
    stack.push_back(gram_similarity(query, ps.gram));
  }
  return stack;
}

SimilarityMap upsample_bilinear(const SimilarityMap& map, int height, int width) {
  if (height < map.height || width < map.width) {
    throw Error("upsample: target smaller than source");
  }
  return {height, width, resize_bilinear(map.values, map.size(), {height, width})};
}

ScoreMaps aggregate_scores(std::span<const SimilarityMap> stack) {
  if (stack.empty()) throw Error("no maps for class");
  const auto& first = stack.front();
  for (const auto& m : stack) {
    if (m.height != first.height || m.width != first.width) throw Error("aggregate: map shapes differ");
  }
  const std::size_t n = first.values.size();
  ScoreMaps out{first, first, first};
  for (std::size_t s = 1; s < stack.size(); ++s) {
    const auto& v = stack[s].values;
    for (std::size_t i = 0; i < n; ++i) {
      out.mean.values[i] += v[i];
      out.max.values[i] = std::max(out.max.values[i], v[i]);
    }
  }
  const double inv = 1.0 / static_cast<double>(stack.size());
  for (std::size_t i = 0; i < n; ++i) {
    out.mean.values[i] *= inv;
    out.score.values[i] = out.mean.values[i] * out.max.values[i];
  }
  return out;
}

ClassMask assign_classes(const std::map<int, SimilarityMap>& per_class_scores) {
  if (per_class_scores.empty()) throw Error("assign: no classes");
  const auto& first = per_class_scores.begin()->second;
  for (const auto& [c, m] : per_class_scores) {
    if (c < 0 || c > 254) throw Error("assign: class id out of range");
    if (m.height != first.height || m.width != first.width) throw Error("assign: score map shapes differ");
  }
  const std::size_t n = first.values.size();
  std::vector<std::uint8_t> labels(n, static_cast<std::uint8_t>(per_class_scores.begin()->first));
  std::vector<double> best(first.values);
  for (auto it = std::next(per_class_scores.begin()); it != per_class_scores.end(); ++it) {
    const auto label = static_cast<std::uint8_t>(it->first);
    const auto& v = it->second.values;
    for (std::size_t i = 0; i < n; ++i) {
      if (v[i] > best[i]) {
        best[i] = v[i];
        labels[i] = label;
      }
    }
  }
  return ClassMask(first.height, first.width, std::move(labels));
}

Segmentation segment_features(const FeatureMap& query, ImageSize output_size, const PrototypeBank& bank,
                              MatchMode mode) {
  Segmentation out;
  for (const auto& [c, ps] : bank) {
    auto stack = assemble_class_stack(query, ps, mode);
    for (auto& m : stack) m = upsample_bilinear(m, output_size.height, output_size.width);
    out.scores.emplace(c, aggregate_scores(stack).score);
  }
  out.prediction = assign_classes(out.scores);
  return out;
}

Segmentation segment_episode_detailed(const Episode& ep, int layer, const PipelineParams& params) {
  validate_episode(ep);
  const auto bank = build_prototypes(ep, layer, params.prototypes);
  return segment_features(ep.query.patches(layer), ep.query.image_size(), bank, params.mode);
}

ClassMask segment_episode(const Episode& ep, int layer, const PipelineParams& params) {
  return segment_episode_detailed(ep, layer, params).prediction;
}

}  // namespace protoseg
