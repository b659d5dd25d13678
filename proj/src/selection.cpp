#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "protoseg/layer_analysis.hpp"

namespace protoseg {

namespace {

using Normalized = std::array<std::optional<std::vector<double>>, kHeuristicCount>;

double apply(Transform t, double x) {
  return t == Transform::kLog1p ? std::log1p(std::max(x, 0.0)) : x;
}

int levels_for_step(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw Error("grid step must lie in (0, 1]");
  const double n = std::round(1.0 / step);
  if (std::abs(n * step - 1.0) > 1e-9) throw Error("grid step must divide 1 evenly");
  return static_cast<int>(n);
}

// Scores of one episode under integer weight levels; weights are level / n.
void weighted_scores(const Normalized& norm, std::span<const int> level, int n, std::size_t layers,
                     std::vector<double>& scores) {
  scores.assign(layers, 0.0);
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    if (level[m] == 0 || !norm[m]) continue;
    const double w = static_cast<double>(level[m]) / n;
    const auto& v = *norm[m];
    for (std::size_t l = 0; l < layers; ++l) scores[l] += w * v[l];
  }
}

std::string format_value(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return "NA";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

std::optional<double> parse_value(const std::string& field, const std::string& context) {
  if (field == "NA" || field.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw Error("heuristic table: bad number '" + field + "' " + context);
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::array<int, kHeuristicCount> default_directions() { return {+1, +1, +1, -1, -1, -1}; }

std::array<Transform, kHeuristicCount> default_transforms() {
  return {Transform::kLog1p,    Transform::kIdentity, Transform::kIdentity,
          Transform::kIdentity, Transform::kIdentity, Transform::kIdentity};
}

void validate(const WeightConfig& cfg) {
  bool any = false;
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    if (!(cfg.weights[m] >= 0.0 && cfg.weights[m] <= 1.0)) throw Error("weights must lie in [0, 1]");
    if (cfg.directions[m] != 1 && cfg.directions[m] != -1) throw Error("directions must be +1 or -1");
    any = any || cfg.weights[m] != 0.0;
  }
  if (!any) throw Error("weight config needs at least one nonzero weight");
}

Normalized signed_normalized(std::span<const HeuristicRow> per_layer, const std::array<int, kHeuristicCount>& directions,
                             const std::array<Transform, kHeuristicCount>& transforms) {
  Normalized out;
  const std::size_t layers = per_layer.size();
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& row : per_layer) {
      if (!row[m] || !std::isfinite(*row[m])) continue;
      const double v = apply(transforms[m], *row[m]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(lo <= hi)) continue;
    const double range = hi - lo;
    const double worst = directions[m] > 0 ? lo : hi;
    std::vector<double> v(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& raw = per_layer[l][m];
      const double x = raw && std::isfinite(*raw) ? apply(transforms[m], *raw) : worst;
      v[l] = directions[m] * (range > 0.0 ? (x - lo) / range : 0.0);
    }
    out[m] = std::move(v);
  }
  return out;
}

std::vector<double> selection_score(std::span<const HeuristicRow> per_layer, const WeightConfig& cfg) {
  validate(cfg);
  const auto norm = signed_normalized(per_layer, cfg.directions, cfg.transforms);
  bool signal = false;
  std::vector<double> scores(per_layer.size(), 0.0);
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    if (cfg.weights[m] == 0.0 || !norm[m]) continue;
    signal = true;
    for (std::size_t l = 0; l < scores.size(); ++l) scores[l] += cfg.weights[m] * (*norm[m])[l];
  }
  if (!signal) throw Error("no signal: every weighted heuristic is unavailable on every layer");
  return scores;
}

std::size_t argmax_first(std::span<const double> values) {
  if (values.empty()) throw Error("argmax of empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t lattice_size(double step, std::size_t active_heuristics) {
  const auto levels = static_cast<std::size_t>(levels_for_step(step)) + 1;
  std::size_t total = 1;
  for (std::size_t i = 0; i < active_heuristics; ++i) total *= levels;
  return total - 1;
}

double evaluate_config(std::span<const EpisodeTable> tables, const WeightConfig& cfg) {
  if (tables.empty()) throw Error("evaluate: no episodes");
  double sum = 0.0;
  for (const auto& t : tables) {
    const auto scores = selection_score(t.heuristics, cfg);
    sum += t.miou[argmax_first(scores)];
  }
  return sum / static_cast<double>(tables.size());
}

GridSearchResult grid_search(std::span<const EpisodeTable> tables, const GridSearchOptions& options) {
  if (tables.empty()) throw Error("grid search: empty heuristic table");
  for (const auto& t : tables) {
    if (t.heuristics.size() < 2) throw Error("grid search: episode " + t.episode_id + " has fewer than 2 layers");
    if (t.miou.size() != t.heuristics.size()) throw Error("grid search: episode " + t.episode_id + " mIoU length mismatch");
    for (double v : t.miou) {
      if (!std::isfinite(v)) throw Error("grid search: episode " + t.episode_id + " lacks mIoU values");
    }
  }
  const int n = levels_for_step(options.step);
  std::vector<std::size_t> active;
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    if (options.active[m]) active.push_back(m);
  }
  if (active.empty()) throw Error("grid search: no active heuristics");

  std::vector<Normalized> norms;
  std::vector<int> oracle;
  norms.reserve(tables.size());
  for (const auto& t : tables) {
    norms.push_back(signed_normalized(t.heuristics, options.directions, options.transforms));
    oracle.push_back(oracle_select(t.miou));
  }

  const std::size_t levels = static_cast<std::size_t>(n) + 1;
  std::size_t rest = 1;
  for (std::size_t i = 1; i < active.size(); ++i) rest *= levels;

  struct Best {
    double objective = -1.0;
    std::array<int, kHeuristicCount> level{};
    bool found = false;
  };

  auto evaluate = [&](const std::array<int, kHeuristicCount>& level, std::vector<double>& scores,
                      double& mean_miou) {
    double miou_sum = 0.0;
    std::size_t agree = 0;
    for (std::size_t e = 0; e < tables.size(); ++e) {
      weighted_scores(norms[e], level, n, tables[e].miou.size(), scores);
      const std::size_t pick = argmax_first(scores);
      miou_sum += tables[e].miou[pick];
      if (static_cast<int>(pick) + 1 == oracle[e]) ++agree;
    }
    mean_miou = miou_sum / static_cast<double>(tables.size());
    return options.objective == GridObjective::kMeanMiou
               ? mean_miou
               : static_cast<double>(agree) / static_cast<double>(tables.size());
  };

  // Each chunk covers one level of the leading active heuristic, enumerated in
  // lexicographic order; chunks are reduced in order so ties keep the
  // lexicographically smallest vector.
  std::vector<Best> chunk_best(levels);
  std::atomic<std::size_t> next_chunk{0};
  auto worker = [&]() {
    std::vector<double> scores;
    for (std::size_t chunk = next_chunk++; chunk < levels; chunk = next_chunk++) {
      Best best;
      for (std::size_t idx = 0; idx < rest; ++idx) {
        std::array<int, kHeuristicCount> level{};
        level[active[0]] = static_cast<int>(chunk);
        std::size_t r = idx;
        for (std::size_t a = active.size(); a-- > 1;) {
          level[active[a]] = static_cast<int>(r % levels);
          r /= levels;
        }
        if (std::all_of(level.begin(), level.end(), [](int v) { return v == 0; })) continue;
        double mean_miou = 0.0;
        const double obj = evaluate(level, scores, mean_miou);
        if (!best.found || obj > best.objective) {
          best = {obj, level, true};
        }
      }
      chunk_best[chunk] = best;
    }
  };
  std::size_t threads = options.workers > 0 ? static_cast<std::size_t>(options.workers)
                                            : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, levels);
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  Best best;
  for (const auto& b : chunk_best) {
    if (b.found && (!best.found || b.objective > best.objective)) best = b;
  }

  GridSearchResult result;
  result.configs_evaluated = lattice_size(options.step, active.size());
  result.best.directions = options.directions;
  result.best.transforms = options.transforms;
  for (std::size_t m = 0; m < kHeuristicCount; ++m) {
    result.best.weights[m] = static_cast<double>(best.level[m]) / n;
  }
  result.objective_value = best.objective;
  std::vector<double> scores;
  double achieved = 0.0;
  evaluate(best.level, scores, achieved);
  result.achieved_miou = achieved;
  double oracle_sum = 0.0;
  double last_sum = 0.0;
  for (std::size_t e = 0; e < tables.size(); ++e) {
    weighted_scores(norms[e], best.level, n, tables[e].miou.size(), scores);
    result.selected_layers.push_back(static_cast<int>(argmax_first(scores)) + 1);
    oracle_sum += tables[e].miou[static_cast<std::size_t>(oracle[e] - 1)];
    last_sum += tables[e].miou.back();
  }
  result.oracle_miou = oracle_sum / static_cast<double>(tables.size());
  result.last_layer_miou = last_sum / static_cast<double>(tables.size());
  result.regret = result.oracle_miou - result.achieved_miou;
  return result;
}

void write_heuristic_table(std::ostream& out, std::span<const EpisodeTable> tables) {
  out << "episode_id,layer";
  for (auto h : kAllHeuristics) out << ',' << column_name(h);
  out << ",miou\n";
  for (const auto& t : tables) {
    for (std::size_t l = 0; l < t.heuristics.size(); ++l) {
      out << t.episode_id << ',' << (l + 1);
      for (const auto& v : t.heuristics[l]) out << ',' << format_value(v);
      const std::optional<double> m = l < t.miou.size() ? std::optional(t.miou[l]) : std::nullopt;
      out << ',' << format_value(m) << '\n';
    }
  }
}

std::vector<EpisodeTable> read_heuristic_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("heuristic table: empty input");
  const auto header = split_csv(line);
  std::vector<std::string> expected{"episode_id", "layer"};
  for (auto h : kAllHeuristics) expected.emplace_back(column_name(h));
  expected.emplace_back("miou");
  if (header != expected) throw Error("heuristic table: unexpected header '" + line + "'");

  std::vector<EpisodeTable> tables;
  std::map<std::string, std::size_t> index;
  std::vector<std::map<int, std::pair<HeuristicRow, double>>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    const std::string context = "at line " + std::to_string(line_no);
    if (fields.size() != expected.size()) throw Error("heuristic table: wrong field count " + context);
    const auto layer_value = parse_value(fields[1], context);
    if (!layer_value || *layer_value < 1 || *layer_value != std::floor(*layer_value)) {
      throw Error("heuristic table: bad layer " + context);
    }
    HeuristicRow row;
    for (std::size_t m = 0; m < kHeuristicCount; ++m) row[m] = parse_value(fields[2 + m], context);
    const auto m = parse_value(fields.back(), context);
    auto [it, inserted] = index.emplace(fields[0], tables.size());
    if (inserted) {
      tables.push_back({fields[0], {}, {}});
      rows.emplace_back();
    }
    const int layer = static_cast<int>(*layer_value);
    if (!rows[it->second].emplace(layer, std::pair{row, m.value_or(std::nan(""))}).second) {
      throw Error("heuristic table: duplicate layer " + std::to_string(layer) + " for episode " + fields[0]);
    }
  }
  for (std::size_t i = 0; i < tables.size(); ++i) {
    int expected_layer = 1;
    for (auto& [layer, value] : rows[i]) {
      if (layer != expected_layer++) {
        throw Error("heuristic table: episode " + tables[i].episode_id + " has non-contiguous layers");
      }
      tables[i].heuristics.push_back(value.first);
      tables[i].miou.push_back(value.second);
    }
  }
  return tables;
}

}  // namespace protoseg
