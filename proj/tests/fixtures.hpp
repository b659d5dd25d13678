#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "protoseg/random.hpp"
#include "protoseg/types.hpp"

namespace fixtures {

using namespace protoseg;

inline FeatureMap make_map(int h, int w, const std::vector<std::vector<double>>& rows) {
  std::vector<float> data;
  for (const auto& r : rows) {
    for (double v : r) data.push_back(static_cast<float>(v));
  }
  return FeatureMap(h, w, static_cast<int>(rows.front().size()), std::move(data));
}

inline FeatureMap random_map(int h, int w, int d, Rng& rng) {
  std::vector<float> data(static_cast<std::size_t>(h) * w * d);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return FeatureMap(h, w, d, std::move(data));
}

inline LayerStack single_layer(FeatureMap fm, ImageSize size, int registers = 0) {
  const int d = fm.channels();
  std::vector<LayerFeatures> layers;
  layers.push_back({std::move(fm), RegisterTokens(registers, d, std::vector<float>(static_cast<std::size_t>(registers) * d, 0.0f))});
  return LayerStack(std::move(layers), size);
}

inline LayerStack repeat_layers(const FeatureMap& fm, int count, ImageSize size) {
  std::vector<LayerFeatures> layers;
  for (int i = 0; i < count; ++i) layers.push_back({fm, RegisterTokens(0, fm.channels(), {})});
  return LayerStack(std::move(layers), size);
}

inline std::vector<double> unit(int d, int axis) {
  std::vector<double> v(static_cast<std::size_t>(d), 0.0);
  v[static_cast<std::size_t>(axis)] = 1.0;
  return v;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("protoseg_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
