#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "protoseg/episodes_io.hpp"
#include "protoseg/random.hpp"

namespace protoseg {

namespace {

constexpr std::uint64_t kDirectionStream = 0xD1EC7;
constexpr std::uint64_t kEpisodeStream = 0xE915;
// Probability that a support also shows a class beyond the one it must cover.
constexpr double kExtraClassRate = 0.3;

// Stripe layout: classes in random order, each a contiguous run of whole
// patch columns.
ClassMask paint_stripes(const SyntheticConfig& cfg, std::vector<int> classes, Rng& rng) {
  rng.shuffle(classes.begin(), classes.end());
  const int stripes = static_cast<int>(classes.size());
  std::vector<int> cuts(static_cast<std::size_t>(cfg.width - 1));
  for (int i = 0; i < cfg.width - 1; ++i) cuts[static_cast<std::size_t>(i)] = i + 1;
  rng.shuffle(cuts.begin(), cuts.end());
  cuts.resize(static_cast<std::size_t>(stripes - 1));
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(cfg.width);

  std::vector<std::uint8_t> column_label(static_cast<std::size_t>(cfg.width));
  int stripe = 0;
  for (int x = 0; x < cfg.width; ++x) {
    while (x >= cuts[static_cast<std::size_t>(stripe)]) ++stripe;
    column_label[static_cast<std::size_t>(x)] = static_cast<std::uint8_t>(classes[static_cast<std::size_t>(stripe)]);
  }
  const int H = cfg.height * cfg.patch_size;
  const int W = cfg.width * cfg.patch_size;
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      labels[static_cast<std::size_t>(y) * W + x] = column_label[static_cast<std::size_t>(x / cfg.patch_size)];
    }
  }
  return ClassMask(H, W, std::move(labels));
}

LayerStack render_features(const SyntheticConfig& cfg, const ClassMask& mask,
                           const std::vector<std::vector<double>>& directions, Rng& rng) {
  const auto d = static_cast<std::size_t>(cfg.channels);
  std::vector<LayerFeatures> layers;
  for (int l = 1; l <= cfg.layers; ++l) {
    const double sigma = synthetic_layer_sigma(cfg, l);
    std::vector<float> data(static_cast<std::size_t>(cfg.height) * cfg.width * d);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const int label = mask.at(y * cfg.patch_size, x * cfg.patch_size);
        const auto& dir = directions[static_cast<std::size_t>(label)];
        float* out = data.data() + (static_cast<std::size_t>(y) * cfg.width + x) * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double noise = sigma > 0.0 ? sigma * rng.normal() : 0.0;
          out[j] = static_cast<float>(dir[j] + noise);
        }
      }
    }
    // Register energy grows with distance from the peak layer.
    const double reg_scale = 0.05 * (1.0 + std::abs(l - cfg.peak_layer));
    std::vector<float> regs(static_cast<std::size_t>(cfg.registers) * d);
    for (auto& v : regs) v = static_cast<float>(reg_scale * rng.normal());
    layers.push_back({FeatureMap(cfg.height, cfg.width, cfg.channels, std::move(data)),
                      RegisterTokens(cfg.registers, cfg.channels, std::move(regs))});
  }
  return LayerStack(std::move(layers), {cfg.height * cfg.patch_size, cfg.width * cfg.patch_size});
}

}  // namespace

void validate(const SyntheticConfig& cfg) {
  if (cfg.n_way < 1 || cfg.n_way > 254) throw Error("synthetic: n_way must lie in 1..254");
  if (cfg.k_shot < 1) throw Error("synthetic: k_shot must be >= 1");
  if (cfg.layers < 1) throw Error("synthetic: layers must be >= 1");
  if (cfg.height < 1 || cfg.patch_size < 1) throw Error("synthetic: grid and patch size must be positive");
  if (cfg.width < cfg.n_way + 1) throw Error("synthetic: width must be >= n_way + 1 to fit every class stripe");
  if (cfg.channels < cfg.n_way + 1) throw Error("synthetic: channels must be >= n_way + 1");
  if (cfg.registers < 0) throw Error("synthetic: registers must be >= 0");
  if (cfg.noise_sigma < 0.0 || cfg.layer_noise_gain < 0.0) throw Error("synthetic: noise must be >= 0");
  if (cfg.peak_layer < 1 || cfg.peak_layer > cfg.layers) throw Error("synthetic: peak_layer must lie in 1..layers");
}

double synthetic_layer_sigma(const SyntheticConfig& cfg, int layer) {
  return cfg.noise_sigma * (1.0 + cfg.layer_noise_gain * std::abs(layer - cfg.peak_layer));
}

std::vector<std::vector<double>> synthetic_directions(const SyntheticConfig& cfg) {
  validate(cfg);
  Rng rng(derive_seed(cfg.seed, kDirectionStream));
  const auto d = static_cast<std::size_t>(cfg.channels);
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < static_cast<std::size_t>(cfg.n_way) + 1) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    // Two passes of Gram-Schmidt for numerical orthogonality.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : dirs) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * u[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (auto& x : v) x /= n;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

Episode generate_synthetic(const SyntheticConfig& cfg, std::uint64_t episode_index) {
  validate(cfg);
  const auto directions = synthetic_directions(cfg);
  Rng rng(derive_seed(cfg.seed, kEpisodeStream + episode_index * 0x10001ull));

  Episode ep;
  for (int c = 1; c <= cfg.n_way; ++c) ep.class_list.push_back(c);

  // Every class is assigned to one support; supports may show extra classes.
  std::vector<int> order = ep.class_list;
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<int>> support_classes(static_cast<std::size_t>(cfg.k_shot));
  for (std::size_t i = 0; i < order.size(); ++i) {
    support_classes[i % static_cast<std::size_t>(cfg.k_shot)].push_back(order[i]);
  }
  for (auto& classes : support_classes) {
    for (int c : ep.class_list) {
      if (std::find(classes.begin(), classes.end(), c) != classes.end()) continue;
      if (static_cast<int>(classes.size()) + 1 >= cfg.width) break;
      if (rng.uniform() < kExtraClassRate) classes.push_back(c);
    }
    if (classes.empty()) classes.push_back(ep.class_list[rng.index(ep.class_list.size())]);
    std::sort(classes.begin(), classes.end());
    classes.insert(classes.begin(), ClassMask::kBackground);
  }

  std::vector<int> query_classes{ClassMask::kBackground};
  for (int c : ep.class_list) {
    if (rng.uniform() < 0.5) query_classes.push_back(c);
  }
  if (query_classes.size() == 1) query_classes.push_back(ep.class_list[rng.index(ep.class_list.size())]);

  for (const auto& classes : support_classes) {
    ClassMask mask = paint_stripes(cfg, classes, rng);
    LayerStack features = render_features(cfg, mask, directions, rng);
    ep.supports.push_back({std::move(features), std::move(mask)});
  }
  ClassMask query_mask = paint_stripes(cfg, query_classes, rng);
  ep.query = render_features(cfg, query_mask, directions, rng);
  ep.query_gt = std::move(query_mask);
  return ep;
}

SyntheticDataset write_synthetic_dataset(const SyntheticConfig& cfg, int episode_count,
                                         const std::filesystem::path& dir) {
  validate(cfg);
  if (episode_count < 1) throw Error("synthetic: episode count must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "masks");

  SyntheticDataset out;
  out.manifest.base_dir = dir;
  out.spec.n_way = cfg.n_way;
  out.spec.k_shot = cfg.k_shot;
  out.spec.seed = cfg.seed;
  out.spec.episode_count = episode_count;

  auto add_image = [&](const std::string& id, const LayerStack& features, const ClassMask& mask) {
    const fs::path feature_rel = fs::path("features") / (id + ".fssd");
    const fs::path mask_rel = fs::path("masks") / (id + ".png");
    write_feature_file(features, dir / feature_rel);
    write_mask(mask, dir / mask_rel);
    ManifestRecord r;
    r.image_id = id;
    r.feature_path = feature_rel;
    r.mask_path = mask_rel;
    for (int c : mask.classes_present()) {
      if (c != ClassMask::kBackground) r.classes_present.push_back(c);
    }
    r.image_size = mask.size();
    out.manifest.records.push_back(std::move(r));
  };

  for (int e = 0; e < episode_count; ++e) {
    const Episode ep = generate_synthetic(cfg, static_cast<std::uint64_t>(e));
    EpisodeDescriptor desc;
    desc.episode_id = episode_id_for(static_cast<std::size_t>(e));
    desc.class_list = ep.class_list;
    for (std::size_t k = 0; k < ep.supports.size(); ++k) {
      const std::string id = desc.episode_id + "_s" + std::to_string(k);
      add_image(id, ep.supports[k].features, ep.supports[k].mask);
      desc.support_ids.push_back(id);
    }
    desc.query_id = desc.episode_id + "_q";
    add_image(desc.query_id, ep.query, *ep.query_gt);
    out.spec.episodes.push_back(std::move(desc));
  }
  out.manifest_path = dir / "manifest.json";
  out.episodes_path = dir / "episodes.json";
  write_manifest(out.manifest, out.manifest_path);
  write_episode_spec(out.spec, out.episodes_path);
  return out;
}

}  // namespace protoseg
