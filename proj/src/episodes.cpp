#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "protoseg/episodes_io.hpp"
#include "protoseg/random.hpp"

namespace protoseg {

namespace {

using nlohmann::json;

constexpr int kSamplingAttempts = 200;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string(what) + ": invalid JSON: " + e.what());
  }
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

const ManifestRecord& DatasetManifest::find(const std::string& image_id) const {
  for (const auto& r : records) {
    if (r.image_id == image_id) return r;
  }
  throw Error("manifest has no image '" + image_id + "'");
}

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
  const json doc = parse_json(json_text, "manifest");
  const json& list = doc.is_array() ? doc : doc.value("records", json::array());
  if (!list.is_array()) throw Error("manifest: 'records' must be an array");
  DatasetManifest m;
  m.base_dir = base_dir;
  std::set<std::string> ids;
  try {
    for (const auto& item : list) {
      ManifestRecord r;
      r.image_id = item.at("image_id").get<std::string>();
      r.feature_path = item.at("feature_path").get<std::string>();
      r.mask_path = item.at("mask_path").get<std::string>();
      r.classes_present = item.at("classes_present").get<std::vector<int>>();
      const auto size = item.at("image_size").get<std::vector<int>>();
      if (size.size() != 2 || size[0] < 1 || size[1] < 1) {
        throw Error("manifest: image_size of '" + r.image_id + "' must be [H, W]");
      }
      r.image_size = {size[0], size[1]};
      if (r.classes_present.empty()) throw Error("manifest: classes_present of '" + r.image_id + "' is empty");
      if (!ids.insert(r.image_id).second) throw Error("manifest: duplicate image_id '" + r.image_id + "'");
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("manifest: ") + e.what());
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text(path), path.parent_path());
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json list = json::array();
  for (const auto& r : manifest.records) {
    list.push_back({{"image_id", r.image_id},
                    {"feature_path", r.feature_path.generic_string()},
                    {"mask_path", r.mask_path.generic_string()},
                    {"classes_present", r.classes_present},
                    {"image_size", {r.image_size.height, r.image_size.width}}});
  }
  return json{{"records", list}}.dump(2) + "\n";
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_text(manifest_to_json(manifest), path);
}

EpisodeSpec parse_episode_spec(const std::string& json_text) {
  const json doc = parse_json(json_text, "episode spec");
  EpisodeSpec spec;
  try {
    spec.n_way = doc.value("n_way", 1);
    spec.k_shot = doc.value("k_shot", 1);
    spec.seed = doc.value("seed", std::uint64_t{0});
    for (const auto& e : doc.value("episodes", json::array())) {
      EpisodeDescriptor d;
      d.episode_id = e.at("episode_id").get<std::string>();
      d.support_ids = e.at("support_ids").get<std::vector<std::string>>();
      d.query_id = e.at("query_id").get<std::string>();
      d.class_list = e.at("class_list").get<std::vector<int>>();
      spec.episodes.push_back(std::move(d));
    }
    spec.episode_count = doc.value("episode_count", static_cast<int>(spec.episodes.size()));
  } catch (const json::exception& e) {
    throw Error(std::string("episode spec: ") + e.what());
  }
  return spec;
}

EpisodeSpec read_episode_spec(const std::filesystem::path& path) { return parse_episode_spec(read_text(path)); }

std::string episode_spec_to_json(const EpisodeSpec& spec) {
  json episodes = json::array();
  for (const auto& e : spec.episodes) {
    episodes.push_back({{"episode_id", e.episode_id},
                        {"support_ids", e.support_ids},
                        {"query_id", e.query_id},
                        {"class_list", e.class_list}});
  }
  return json{{"n_way", spec.n_way},
              {"k_shot", spec.k_shot},
              {"seed", spec.seed},
              {"episode_count", spec.episode_count},
              {"episodes", episodes}}
             .dump(2) +
         "\n";
}

void write_episode_spec(const EpisodeSpec& spec, const std::filesystem::path& path) {
  write_text(episode_spec_to_json(spec), path);
}

std::string episode_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep%05zu", index);
  return buf;
}

std::vector<EpisodeDescriptor> sample_episodes(const DatasetManifest& manifest, const EpisodeSpec& spec) {
  if (spec.n_way < 1 || spec.k_shot < 1 || spec.episode_count < 0) {
    throw Error("cannot satisfy episode spec: n_way, k_shot must be >= 1");
  }
  std::set<int> all;
  for (const auto& r : manifest.records) {
    for (int c : r.classes_present) {
      if (c != ClassMask::kBackground && c != ClassMask::kIgnore) all.insert(c);
    }
  }
  const std::vector<int> classes(all.begin(), all.end());
  if (static_cast<std::size_t>(spec.n_way) > classes.size()) {
    throw Error("cannot satisfy episode spec: n_way " + std::to_string(spec.n_way) + " exceeds " +
                std::to_string(classes.size()) + " available classes");
  }
  if (manifest.records.size() < static_cast<std::size_t>(spec.k_shot) + 1) {
    throw Error("cannot satisfy episode spec: need at least k_shot + 1 images");
  }

  const auto& records = manifest.records;
  auto has_any = [&](std::size_t i, const std::vector<int>& chosen) {
    return std::any_of(chosen.begin(), chosen.end(), [&](int c) { return contains(records[i].classes_present, c); });
  };

  std::vector<EpisodeDescriptor> out;
  for (int e = 0; e < spec.episode_count; ++e) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(e)));
    std::optional<EpisodeDescriptor> found;
    for (int attempt = 0; attempt < kSamplingAttempts && !found; ++attempt) {
      std::vector<int> pool = classes;
      rng.shuffle(pool.begin(), pool.end());
      std::vector<int> chosen(pool.begin(), pool.begin() + spec.n_way);
      std::sort(chosen.begin(), chosen.end());

      std::vector<std::size_t> query_options;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (has_any(i, chosen)) query_options.push_back(i);
      }
      if (query_options.empty()) continue;
      const std::size_t query = query_options[rng.index(query_options.size())];

      std::vector<std::size_t> supports;
      auto used = [&](std::size_t i) {
        return i == query || std::find(supports.begin(), supports.end(), i) != supports.end();
      };
      std::vector<int> order = chosen;
      rng.shuffle(order.begin(), order.end());
      bool ok = true;
      for (int c : order) {
        const bool covered = std::any_of(supports.begin(), supports.end(),
                                         [&](std::size_t s) { return contains(records[s].classes_present, c); });
        if (covered) continue;
        std::vector<std::size_t> options;
        for (std::size_t i = 0; i < records.size(); ++i) {
          if (!used(i) && contains(records[i].classes_present, c)) options.push_back(i);
        }
        if (options.empty() || supports.size() == static_cast<std::size_t>(spec.k_shot)) {
          ok = false;
          break;
        }
        supports.push_back(options[rng.index(options.size())]);
      }
      while (ok && supports.size() < static_cast<std::size_t>(spec.k_shot)) {
        std::vector<std::size_t> options;
        for (std::size_t i = 0; i < records.size(); ++i) {
          if (!used(i) && has_any(i, chosen)) options.push_back(i);
        }
        if (options.empty()) {
          ok = false;
          break;
        }
        supports.push_back(options[rng.index(options.size())]);
      }
      if (!ok) continue;

      EpisodeDescriptor d;
      d.episode_id = episode_id_for(static_cast<std::size_t>(e));
      d.query_id = records[query].image_id;
      for (auto s : supports) d.support_ids.push_back(records[s].image_id);
      d.class_list = chosen;
      found = std::move(d);
    }
    if (!found) {
      throw Error("cannot satisfy episode spec: no valid draw for episode " + std::to_string(e) + " after " +
                  std::to_string(kSamplingAttempts) + " attempts");
    }
    out.push_back(std::move(*found));
  }
  return out;
}

Episode load_episode(const DatasetManifest& manifest, const EpisodeDescriptor& desc) {
  auto load = [&](const std::string& id) {
    const auto& rec = manifest.find(id);
    Support s;
    s.features = read_feature_file(manifest.resolve(rec.feature_path), rec.image_size);
    s.mask = read_mask(manifest.resolve(rec.mask_path), rec.image_size).restricted_to(desc.class_list);
    return s;
  };
  Episode ep;
  ep.class_list = desc.class_list;
  for (const auto& id : desc.support_ids) {
    if (id == desc.query_id) throw Error("episode " + desc.episode_id + ": query image is also a support");
    ep.supports.push_back(load(id));
  }
  auto q = load(desc.query_id);
  ep.query = std::move(q.features);
  ep.query_gt = std::move(q.mask);
  validate_episode(ep);
  return ep;
}

}  // namespace protoseg
