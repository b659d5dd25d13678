#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "protoseg/layer_analysis.hpp"
#include "protoseg/matching.hpp"
#include "protoseg/metrics.hpp"

namespace protoseg::cli {

namespace {

namespace fs = std::filesystem;

struct Failure {
  std::string episode_id;
  std::string message;
};

PipelineParams pipeline_params(const RunConfig& cfg) {
  PipelineParams p;
  p.prototypes.n_clusters = cfg.n_clusters;
  p.prototypes.mask_threshold = cfg.mask_threshold;
  p.prototypes.max_iter = cfg.max_iter;
  p.prototypes.n_init = cfg.n_init;
  p.prototypes.seed = cfg.seed;
  try {
    validate(p.prototypes);
    p.mode = parse_match_mode(cfg.mode);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return p;
}

struct Workload {
  DatasetManifest manifest;
  std::vector<EpisodeDescriptor> episodes;
};

Workload load_workload(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw UsageError("--manifest is required");
  Workload w;
  w.manifest = read_manifest(cfg.manifest);
  if (cfg.episode_file) {
    w.episodes = read_episode_spec(*cfg.episode_file).episodes;
  } else {
    EpisodeSpec spec;
    spec.n_way = cfg.n_way;
    spec.k_shot = cfg.k_shot;
    spec.seed = cfg.seed;
    spec.episode_count = cfg.episodes;
    w.episodes = sample_episodes(w.manifest, spec);
  }
  if (w.episodes.empty()) throw UsageError("no episodes to run");
  return w;
}

int query_layer_count(const Workload& w) {
  const auto& rec = w.manifest.find(w.episodes.front().query_id);
  return read_feature_file(w.manifest.resolve(rec.feature_path), rec.image_size).num_layers();
}

// Runs fn for every episode on a bounded worker pool; results keep episode
// order. Failures are collected instead of aborting the run.
template <typename T>
std::vector<std::optional<T>> for_each_episode(const Workload& w, int workers,
                                               const std::function<T(std::size_t, const Episode&)>& fn,
                                               std::vector<Failure>& failures) {
  const std::size_t n = w.episodes.size();
  std::vector<std::optional<T>> results(n);
  std::vector<std::optional<Failure>> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const Episode ep = load_episode(w.manifest, w.episodes[i]);
        results[i] = fn(i, ep);
      } catch (const std::exception& e) {
        errors[i] = Failure{w.episodes[i].episode_id, e.what()};
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) failures.push_back(std::move(*e));
  }
  return results;
}

int finish(const std::vector<Failure>& failures, std::ostream& err) {
  if (failures.empty()) return 0;
  err << failures.size() << " episode(s) failed:\n";
  for (const auto& f : failures) err << "  " << f.episode_id << ": " << f.message << '\n';
  return 1;
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  return out;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string maybe(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

int max_class(const std::vector<EpisodeDescriptor>& episodes) {
  int n = 0;
  for (const auto& e : episodes) {
    for (int c : e.class_list) n = std::max(n, c);
  }
  return n;
}

// Every episode's confusion matrix is sized to the workload's largest class.
ConfusionMatrix widen(const ConfusionMatrix& cm, int num_classes) {
  if (cm.num_classes() == num_classes) return cm;
  ConfusionMatrix out(num_classes);
  for (int g = 0; g <= cm.num_classes(); ++g) {
    for (int p = 0; p <= cm.num_classes(); ++p) out.add(g, p, cm.at(g, p));
  }
  return out;
}

std::string aggregate_line(const std::optional<ConfusionMatrix>& cm) {
  if (!cm || class_ious(*cm).empty()) return "NA";
  return fixed(miou(*cm));
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

std::vector<int> resolve_layers(const std::string& selector, int num_layers) {
  if (selector == "last") return {num_layers};
  std::vector<int> out;
  if (selector == "all") {
    for (int l = 1; l <= num_layers; ++l) out.push_back(l);
    return out;
  }
  int value = 0;
  try {
    std::size_t used = 0;
    value = std::stoi(selector, &used);
    if (used != selector.size()) throw std::invalid_argument(selector);
  } catch (const std::exception&) {
    throw UsageError("--layer must be an index, 'last' or 'all' (got '" + selector + "')");
  }
  if (value < 1 || value > num_layers) {
    throw UsageError("--layer " + selector + " out of range 1.." + std::to_string(num_layers));
  }
  return {value};
}

int cmd_segment(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const auto params = pipeline_params(cfg);
    const Workload w = load_workload(cfg);
    const auto layers = resolve_layers(cfg.layer, query_layer_count(w));
    const int num_classes = max_class(w.episodes);
    const fs::path pred_dir = cfg.output_dir / "predictions";
    fs::create_directories(pred_dir);

    struct Row {
      std::vector<std::optional<double>> miou;
      std::vector<std::optional<ConfusionMatrix>> cms;
    };
    std::vector<Failure> failures;
    const auto rows = for_each_episode<Row>(
        w, cfg.workers,
        [&](std::size_t i, const Episode& ep) {
          Row row;
          const auto gt = ep.query_gt->restricted_to(ep.class_list);
          for (int layer : layers) {
            const ClassMask pred = segment_episode(ep, layer, params);
            write_mask(pred, pred_dir / (w.episodes[i].episode_id + "_l" + std::to_string(layer) + ".png"));
            auto cm = confusion(pred, gt, num_classes);
            row.miou.push_back(class_ious(cm).empty() ? std::nullopt : std::optional(miou(cm)));
            row.cms.push_back(std::move(cm));
          }
          return row;
        },
        failures);

    auto csv = open_output(cfg.output_dir / "segment_episodes.csv");
    csv << "episode_id,layer,miou\n";
    std::vector<std::optional<ConfusionMatrix>> merged(layers.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i]) continue;
      for (std::size_t j = 0; j < layers.size(); ++j) {
        csv << w.episodes[i].episode_id << ',' << layers[j] << ',' << maybe(rows[i]->miou[j]) << '\n';
        const auto& cm = *rows[i]->cms[j];
        if (merged[j]) {
          *merged[j] += cm;
        } else {
          merged[j] = cm;
        }
      }
    }
    out << "episodes: " << w.episodes.size() << " (" << failures.size() << " failed), mode "
        << to_string(params.mode) << '\n';
    for (std::size_t j = 0; j < layers.size(); ++j) {
      if (merged[j]) {
        auto iou_csv = open_output(cfg.output_dir / ("iou_layer" + std::to_string(layers[j]) + ".csv"));
        write_iou_csv(iou_csv, *merged[j]);
      }
      out << "layer " << layers[j] << " aggregated mIoU: " << aggregate_line(merged[j]) << '\n';
    }
    return finish(failures, err);
  });
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const Workload w = load_workload(cfg);
    const auto layers = resolve_layers(cfg.layer, query_layer_count(w));
    if (layers.size() != 1) throw UsageError("evaluate needs a single --layer");
    const fs::path pred_dir = cfg.predictions_dir.value_or(cfg.output_dir / "predictions");
    const int num_classes = max_class(w.episodes);

    std::optional<ConfusionMatrix> merged;
    std::vector<Failure> failures;
    for (const auto& desc : w.episodes) {
      try {
        const auto& rec = w.manifest.find(desc.query_id);
        const ClassMask gt =
            read_mask(w.manifest.resolve(rec.mask_path), rec.image_size).restricted_to(desc.class_list);
        const ClassMask pred =
            read_mask(pred_dir / (desc.episode_id + "_l" + std::to_string(layers[0]) + ".png"), rec.image_size);
        const auto cm = confusion(pred, gt, num_classes);
        if (merged) {
          *merged += cm;
        } else {
          merged = cm;
        }
      } catch (const std::exception& e) {
        failures.push_back({desc.episode_id, e.what()});
      }
    }
    if (merged) {
      auto csv = open_output(cfg.output_dir / "evaluate_iou.csv");
      write_iou_csv(csv, *merged);
      for (const auto& r : class_ious(*merged)) {
        out << "class " << r.class_id << ": IoU " << fixed(r.iou) << " (tp " << r.tp << ", fp " << r.fp << ", fn "
            << r.fn << ")\n";
      }
    }
    out << "aggregated mIoU: " << aggregate_line(merged) << '\n';
    return finish(failures, err);
  });
}

int cmd_oracle(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    AnalysisParams params;
    params.pipeline = pipeline_params(cfg);
    params.eps = cfg.eps;
    const Workload w = load_workload(cfg);
    const int num_classes = max_class(w.episodes);

    struct Row {
      std::vector<std::optional<double>> miou;
      std::vector<ConfusionMatrix> cms;
    };
    std::vector<Failure> failures;
    const auto rows = for_each_episode<Row>(
        w, cfg.workers,
        [&](std::size_t, const Episode& ep) {
          Row row;
          for (auto& ev : analyze_layers(ep, params, false)) {
            row.miou.push_back(ev.outcome.miou);
            row.cms.push_back(widen(*ev.outcome.confusion, num_classes));
          }
          return row;
        },
        failures);

    std::size_t num_layers = 0;
    for (const auto& r : rows) {
      if (r) num_layers = std::max(num_layers, r->cms.size());
    }
    std::vector<ConfusionMatrix> per_layer(num_layers, ConfusionMatrix(num_classes));
    ConfusionMatrix oracle_cm(num_classes);
    std::map<int, int> oracle_counts;
    auto episodes_csv = open_output(cfg.output_dir / "oracle_episodes.csv");
    episodes_csv << "episode_id,oracle_layer,oracle_miou,last_layer_miou\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i]) continue;
      const auto& r = *rows[i];
      if (r.cms.size() != num_layers) {
        failures.push_back({w.episodes[i].episode_id, "layer count differs from other episodes"});
        continue;
      }
      std::vector<double> values;
      for (const auto& m : r.miou) values.push_back(m.value_or(-1.0));
      const int best = oracle_select(values);
      for (std::size_t l = 0; l < num_layers; ++l) per_layer[l] += r.cms[l];
      oracle_cm += r.cms[static_cast<std::size_t>(best - 1)];
      ++oracle_counts[best];
      episodes_csv << w.episodes[i].episode_id << ',' << best << ','
                   << maybe(r.miou[static_cast<std::size_t>(best - 1)]) << ',' << maybe(r.miou.back()) << '\n';
    }
    if (num_layers == 0) return finish(failures, err);

    auto layers_csv = open_output(cfg.output_dir / "oracle_layers.csv");
    layers_csv << "layer,aggregated_miou\n";
    std::ostringstream report;
    report << "per-layer aggregated mIoU (merged confusion over episodes):\n";
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::optional<ConfusionMatrix> cm = per_layer[l];
      layers_csv << (l + 1) << ',' << aggregate_line(cm) << '\n';
      report << "  layer " << std::setw(2) << (l + 1) << ": " << aggregate_line(cm) << '\n';
    }
    const std::optional<ConfusionMatrix> oracle_opt = oracle_cm;
    const std::optional<ConfusionMatrix> last_opt = per_layer.back();
    report << "oracle aggregated mIoU: " << aggregate_line(oracle_opt) << '\n';
    report << "last-layer aggregated mIoU: " << aggregate_line(last_opt) << '\n';
    if (!class_ious(oracle_cm).empty() && !class_ious(per_layer.back()).empty()) {
      report << "gap (oracle - last): " << fixed(miou(oracle_cm) - miou(per_layer.back())) << '\n';
    }
    const auto dominant = std::max_element(oracle_counts.begin(), oracle_counts.end(),
                                           [](const auto& a, const auto& b) { return a.second < b.second; });
    int evaluated = 0;
    for (const auto& [l, c] : oracle_counts) evaluated += c;
    report << "dominant oracle layer: " << dominant->first << " (" << dominant->second << "/" << evaluated
           << " episodes)\n";
    auto report_file = open_output(cfg.output_dir / "oracle_report.txt");
    report_file << report.str();
    out << report.str();
    return finish(failures, err);
  });
}

int cmd_heuristics(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    AnalysisParams params;
    params.pipeline = pipeline_params(cfg);
    params.eps = cfg.eps;
    const Workload w = load_workload(cfg);

    std::vector<Failure> failures;
    const auto rows = for_each_episode<EpisodeTable>(
        w, cfg.workers,
        [&](std::size_t i, const Episode& ep) {
          EpisodeTable t;
          t.episode_id = w.episodes[i].episode_id;
          for (auto& ev : analyze_layers(ep, params, true)) {
            t.heuristics.push_back(ev.heuristics);
            t.miou.push_back(ev.outcome.miou.value_or(std::nan("")));
          }
          return t;
        },
        failures);
    std::vector<EpisodeTable> tables;
    for (const auto& r : rows) {
      if (r) tables.push_back(*r);
    }
    const fs::path path = cfg.output_dir / "heuristics.csv";
    auto csv = open_output(path);
    write_heuristic_table(csv, tables);
    std::size_t count = 0;
    for (const auto& t : tables) count += t.heuristics.size();
    out << "wrote " << count << " rows for " << tables.size() << " episodes to " << path.string() << '\n';
    return finish(failures, err);
  });
}

int cmd_gridsearch(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    if (cfg.table.empty()) throw UsageError("--table is required");
    std::ifstream in(cfg.table);
    if (!in) throw UsageError("cannot open table " + cfg.table.string());
    const auto tables = read_heuristic_table(in);
    if (tables.empty()) throw Error("heuristic table has no rows");

    GridSearchOptions options;
    options.step = cfg.step;
    options.workers = cfg.workers;
    if (cfg.objective == "miou") {
      options.objective = GridObjective::kMeanMiou;
    } else if (cfg.objective == "agreement") {
      options.objective = GridObjective::kLayerAgreement;
    } else {
      throw UsageError("--objective must be 'miou' or 'agreement'");
    }
    if (!cfg.heuristics.empty()) {
      options.active.fill(false);
      for (const auto& name : cfg.heuristics) {
        try {
          options.active[static_cast<std::size_t>(parse_heuristic(name))] = true;
        } catch (const Error& e) {
          throw UsageError(e.what());
        }
      }
    }
    std::size_t active = 0;
    for (bool a : options.active) active += a ? 1 : 0;
    const auto result = grid_search(tables, options);

    std::ostringstream report;
    report << "episodes: " << tables.size() << '\n';
    report << "configurations evaluated: " << result.configs_evaluated << " (" << (std::lround(1.0 / cfg.step) + 1)
           << "^" << active << " - 1)\n";
    report << "best weights:";
    for (auto h : kAllHeuristics) {
      const auto m = static_cast<std::size_t>(h);
      report << ' ' << column_name(h) << '=' << fixed(result.best.weights[m], 1) << "(d="
             << (result.best.directions[m] > 0 ? "+1" : "-1") << ')';
    }
    report << '\n';
    report << "achieved mIoU: " << fixed(result.achieved_miou) << '\n';
    report << "oracle mIoU: " << fixed(result.oracle_miou) << '\n';
    report << "last-layer mIoU: " << fixed(result.last_layer_miou) << '\n';
    report << "regret: " << fixed(result.regret) << '\n';
    out << report.str();

    auto csv = open_output(cfg.output_dir / "gridsearch_report.csv");
    csv << "key,value\n";
    for (auto h : kAllHeuristics) {
      csv << "weight_" << column_name(h) << ',' << result.best.weights[static_cast<std::size_t>(h)] << '\n';
    }
    csv << "configs_evaluated," << result.configs_evaluated << '\n';
    csv << "achieved_miou," << result.achieved_miou << '\n';
    csv << "oracle_miou," << result.oracle_miou << '\n';
    csv << "last_layer_miou," << result.last_layer_miou << '\n';
    csv << "regret," << result.regret << '\n';
    return 0;
  });
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    SyntheticConfig synth = cfg.synth;
    synth.n_way = cfg.n_way;
    synth.k_shot = cfg.k_shot;
    synth.seed = cfg.seed;
    try {
      validate(synth);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const auto ds = write_synthetic_dataset(synth, cfg.episodes, cfg.output_dir);
    out << "wrote " << ds.manifest.records.size() << " images for " << ds.spec.episodes.size() << " episodes\n";
    out << "manifest: " << ds.manifest_path.string() << '\n';
    out << "episodes: " << ds.episodes_path.string() << '\n';
    return 0;
  });
}

}  // namespace protoseg::cli
