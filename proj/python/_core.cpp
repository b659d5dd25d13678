#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "protoseg/episodes_io.hpp"
#include "protoseg/layer_analysis.hpp"
#include "protoseg/matching.hpp"
#include "protoseg/metrics.hpp"
#include "protoseg/prototypes.hpp"

namespace py = pybind11;
using namespace protoseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

FeatureMap to_feature_map(const FloatArray& a) {
  if (a.ndim() != 3) throw Error("patch array must have shape (h, w, d)");
  return FeatureMap(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                    std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> from_feature_map(const FeatureMap& fm) {
  py::array_t<float> out({fm.height(), fm.width(), fm.channels()});
  std::copy(fm.data().begin(), fm.data().end(), out.mutable_data());
  return out;
}

ClassMask to_mask(const LabelArray& a) {
  if (a.ndim() != 2) throw Error("mask array must have shape (H, W)");
  return ClassMask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                   std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

py::array_t<std::uint8_t> from_mask(const ClassMask& m) {
  py::array_t<std::uint8_t> out({m.height(), m.width()});
  std::copy(m.labels().begin(), m.labels().end(), out.mutable_data());
  return out;
}

py::array_t<double> from_map(const SimilarityMap& m) {
  py::array_t<double> out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

ClassFeatureSet to_feature_set(const DoubleArray& a) {
  if (a.ndim() != 2) throw Error("feature array must have shape (N, d)");
  ClassFeatureSet s;
  s.dims = static_cast<int>(a.shape(1));
  s.values.assign(a.data(), a.data() + a.size());
  return s;
}

PipelineParams pipeline(int n_clusters, double mask_threshold, int max_iter, int n_init, std::uint64_t seed,
                        const std::string& mode) {
  PipelineParams p;
  p.prototypes = {n_clusters, mask_threshold, max_iter, n_init, seed};
  p.mode = parse_match_mode(mode);
  return p;
}

#define PIPELINE_ARGS                                                                                     \
  py::arg("n_clusters") = 5, py::arg("mask_threshold") = 0.5, py::arg("max_iter") = 50,                 \
      py::arg("n_init") = kDefaultRestarts, py::arg("seed") = 0, py::arg("mode") = "combined"

py::dict heuristics_dict(const HeuristicRow& row) {
  py::dict d;
  for (auto h : kAllHeuristics) {
    const auto& v = row[static_cast<std::size_t>(h)];
    d[py::str(std::string(column_name(h)))] = v ? py::cast(*v) : py::none();
  }
  return d;
}

HeuristicRow heuristics_row(const py::dict& d) {
  HeuristicRow row;
  for (auto item : d) {
    const auto h = parse_heuristic(py::cast<std::string>(item.first));
    if (!item.second.is_none()) row[static_cast<std::size_t>(h)] = py::cast<double>(item.second);
  }
  return row;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Training-free few-shot segmentation over per-layer features";
  py::register_exception<Error>(m, "ProtosegError", PyExc_ValueError);

  py::class_<LayerStack>(m, "LayerStack")
      .def(py::init([](const std::vector<FloatArray>& patches, const std::vector<FloatArray>& registers,
                       std::pair<int, int> image_size) {
             if (!registers.empty() && registers.size() != patches.size()) {
               throw Error("registers must be empty or one array per layer");
             }
             std::vector<LayerFeatures> layers;
             for (std::size_t i = 0; i < patches.size(); ++i) {
               FeatureMap fm = to_feature_map(patches[i]);
               RegisterTokens regs(0, fm.channels(), {});
               if (!registers.empty()) {
                 const auto& r = registers[i];
                 if (r.ndim() != 2) throw Error("register array must have shape (r, d)");
                 regs = RegisterTokens(static_cast<int>(r.shape(0)), static_cast<int>(r.shape(1)),
                                       std::vector<float>(r.data(), r.data() + r.size()));
               }
               layers.push_back({std::move(fm), std::move(regs)});
             }
             return LayerStack(std::move(layers), {image_size.first, image_size.second});
           }),
           py::arg("patches"), py::arg("registers") = std::vector<FloatArray>{}, py::arg("image_size"))
      .def_property_readonly("num_layers", &LayerStack::num_layers)
      .def_property_readonly("image_size",
                             [](const LayerStack& s) { return std::pair(s.image_size().height, s.image_size().width); })
      .def("patches", [](const LayerStack& s, int layer) { return from_feature_map(s.patches(layer)); })
      .def("registers", [](const LayerStack& s, int layer) {
        const auto& r = s.layer(layer).registers;
        py::array_t<float> out({r.count(), r.channels()});
        std::copy(r.data().begin(), r.data().end(), out.mutable_data());
        return out;
      });

  py::class_<Episode>(m, "Episode")
      .def(py::init([](const std::vector<std::pair<LayerStack, LabelArray>>& supports, LayerStack query,
                       std::optional<LabelArray> query_gt, std::vector<int> class_list) {
             Episode ep;
             for (const auto& [features, mask] : supports) ep.supports.push_back({features, to_mask(mask)});
             ep.query = std::move(query);
             if (query_gt) ep.query_gt = to_mask(*query_gt);
             ep.class_list = std::move(class_list);
             validate_episode(ep);
             return ep;
           }),
           py::arg("supports"), py::arg("query"), py::arg("query_gt") = py::none(), py::arg("class_list"))
      .def_property_readonly("query", [](const Episode& e) { return e.query; })
      .def_property_readonly("query_gt",
                             [](const Episode& e) -> py::object {
                               return e.query_gt ? py::object(from_mask(*e.query_gt)) : py::none();
                             })
      .def_property_readonly("class_list", [](const Episode& e) { return e.class_list; })
      .def_property_readonly("support_count", [](const Episode& e) { return e.supports.size(); });

  m.def("read_feature_file", [](const std::filesystem::path& p) { return read_feature_file(p); });
  m.def("write_feature_file", &write_feature_file, py::arg("stack"), py::arg("path"));
  m.def("encode_feature_file", [](const LayerStack& s) {
    const auto bytes = encode_feature_file(s);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });
  m.def("read_mask", [](const std::filesystem::path& p) { return from_mask(read_mask(p)); });
  m.def("write_mask", [](const LabelArray& mask, const std::filesystem::path& p) { write_mask(to_mask(mask), p); });

  m.def(
      "generate_synthetic",
      [](int n_way, int k_shot, int layers, int height, int width, int channels, int patch_size, int registers,
         double noise_sigma, double layer_noise_gain, int peak_layer, std::uint64_t seed, std::uint64_t index) {
        SyntheticConfig c{n_way,     k_shot,    layers,      height,           width,      channels,
                          patch_size, registers, noise_sigma, layer_noise_gain, peak_layer, seed};
        return generate_synthetic(c, index);
      },
      py::arg("n_way") = 1, py::arg("k_shot") = 1, py::arg("layers") = 12, py::arg("height") = 16,
      py::arg("width") = 16, py::arg("channels") = 64, py::arg("patch_size") = 4, py::arg("registers") = 4,
      py::arg("noise_sigma") = 0.05, py::arg("layer_noise_gain") = 8.0, py::arg("peak_layer") = 7, py::arg("seed") = 0,
      py::arg("index") = 0);

  m.def(
      "segment_episode",
      [](const Episode& ep, int layer, int n_clusters, double mask_threshold, int max_iter, int n_init,
         std::uint64_t seed, const std::string& mode) {
        return from_mask(
            segment_episode(ep, layer, pipeline(n_clusters, mask_threshold, max_iter, n_init, seed, mode)));
      },
      py::arg("episode"), py::arg("layer"), PIPELINE_ARGS);

  m.def(
      "class_scores",
      [](const Episode& ep, int layer, int n_clusters, double mask_threshold, int max_iter, int n_init,
         std::uint64_t seed, const std::string& mode) {
        const auto seg =
            segment_episode_detailed(ep, layer, pipeline(n_clusters, mask_threshold, max_iter, n_init, seed, mode));
        std::map<int, py::array_t<double>> out;
        for (const auto& [c, s] : seg.scores) out.emplace(c, from_map(s));
        return out;
      },
      py::arg("episode"), py::arg("layer"), PIPELINE_ARGS);

  m.def(
      "spherical_kmeans",
      [](const DoubleArray& x, int k, int max_iter, std::uint64_t seed, int restarts) {
        const auto c = spherical_kmeans(to_feature_set(x), k, max_iter, seed, restarts);
        py::array_t<double> out({static_cast<py::ssize_t>(c.size()), static_cast<py::ssize_t>(x.shape(1))});
        auto* dst = out.mutable_data();
        for (const auto& row : c) dst = std::copy(row.begin(), row.end(), dst);
        return out;
      },
      py::arg("features"), py::arg("k"), py::arg("max_iter") = 50, py::arg("seed") = 0,
      py::arg("restarts") = kDefaultRestarts);

  m.def(
      "class_gram",
      [](const DoubleArray& x) {
        const auto g = class_gram(to_feature_set(x));
        py::array_t<double> out({g.dims, g.dims});
        std::copy(g.values.begin(), g.values.end(), out.mutable_data());
        return out;
      },
      py::arg("features"));

  m.def(
      "episode_miou",
      [](const LabelArray& pred, const LabelArray& gt, int num_classes) {
        return episode_miou(to_mask(pred), to_mask(gt), num_classes);
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"));

  m.def(
      "analyze_layers",
      [](const Episode& ep, bool with_heuristics, int n_clusters, double mask_threshold, int max_iter, int n_init,
         std::uint64_t seed, const std::string& mode, double eps) {
        AnalysisParams ap;
        ap.pipeline = pipeline(n_clusters, mask_threshold, max_iter, n_init, seed, mode);
        ap.eps = eps;
        py::list out;
        for (const auto& ev : analyze_layers(ep, ap, with_heuristics)) {
          py::dict d;
          d["layer"] = ev.outcome.layer;
          d["miou"] = ev.outcome.miou ? py::cast(*ev.outcome.miou) : py::none();
          if (with_heuristics) d["heuristics"] = heuristics_dict(ev.heuristics);
          out.append(d);
        }
        return out;
      },
      py::arg("episode"), py::arg("with_heuristics") = true, PIPELINE_ARGS, py::arg("eps") = 1e-8);

  m.def("oracle_select", [](const std::vector<double>& miou) { return oracle_select(miou); }, py::arg("per_layer_miou"));

  m.def(
      "grid_search",
      [](const std::vector<std::vector<py::dict>>& heuristics, const std::vector<std::vector<double>>& miou,
         double step, std::optional<std::vector<std::string>> active, int workers) {
        if (heuristics.size() != miou.size()) throw Error("heuristics and miou must list the same episodes");
        std::vector<EpisodeTable> tables;
        for (std::size_t e = 0; e < heuristics.size(); ++e) {
          EpisodeTable t;
          t.episode_id = std::to_string(e);
          for (const auto& d : heuristics[e]) t.heuristics.push_back(heuristics_row(d));
          t.miou = miou[e];
          tables.push_back(std::move(t));
        }
        GridSearchOptions opt;
        opt.step = step;
        opt.workers = workers;
        if (active) {
          opt.active.fill(false);
          for (const auto& name : *active) opt.active[static_cast<std::size_t>(parse_heuristic(name))] = true;
        }
        const auto r = grid_search(tables, opt);
        py::dict weights;
        for (auto h : kAllHeuristics) {
          weights[py::str(std::string(column_name(h)))] = r.best.weights[static_cast<std::size_t>(h)];
        }
        py::dict out;
        out["weights"] = weights;
        out["achieved_miou"] = r.achieved_miou;
        out["oracle_miou"] = r.oracle_miou;
        out["last_layer_miou"] = r.last_layer_miou;
        out["regret"] = r.regret;
        out["configs_evaluated"] = r.configs_evaluated;
        out["selected_layers"] = r.selected_layers;
        return out;
      },
      py::arg("heuristics"), py::arg("miou"), py::arg("step") = 0.1, py::arg("active") = py::none(),
      py::arg("workers") = 1);

  m.def(
      "write_synthetic_dataset",
      [](const std::filesystem::path& dir, int episodes, int n_way, int k_shot, double noise_sigma, int layers,
         int peak_layer, std::uint64_t seed) {
        SyntheticConfig c;
        c.n_way = n_way;
        c.k_shot = k_shot;
        c.noise_sigma = noise_sigma;
        c.layers = layers;
        c.peak_layer = peak_layer;
        c.seed = seed;
        const auto ds = write_synthetic_dataset(c, episodes, dir);
        return std::pair(ds.manifest_path, ds.episodes_path);
      },
      py::arg("directory"), py::arg("episodes") = 10, py::arg("n_way") = 1, py::arg("k_shot") = 1,
      py::arg("noise_sigma") = 0.05, py::arg("layers") = 12, py::arg("peak_layer") = 7, py::arg("seed") = 0);
}
