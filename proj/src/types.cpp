#include "protoseg/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace protoseg {

namespace {

void require_finite(std::span<const float> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(std::string(what) + ": non-finite value at offset " + std::to_string(i));
    }
  }
}

}  // namespace

FeatureMap::FeatureMap(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 1 || width < 1 || channels < 1) {
    throw Error("feature map: dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error("feature map: data length does not match h*w*d");
  }
  require_finite(data_, "feature map");
}

RegisterTokens::RegisterTokens(int count, int channels, std::vector<float> data)
    : count_(count), channels_(channels), data_(std::move(data)) {
  if (count < 0 || channels < 1) {
    throw Error("register tokens: invalid shape");
  }
  if (data_.size() != static_cast<std::size_t>(count) * channels) {
    throw Error("register tokens: data length does not match r*d");
  }
  require_finite(data_, "register tokens");
}

LayerStack::LayerStack(std::vector<LayerFeatures> layers, ImageSize image_size)
    : layers_(std::move(layers)), image_size_(image_size) {
  if (layers_.empty()) {
    throw Error("layer stack: at least one layer required");
  }
  if (image_size.height < 1 || image_size.width < 1) {
    throw Error("layer stack: image size must be positive");
  }
  const auto& first = layers_.front();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.patches.height() != first.patches.height() || l.patches.width() != first.patches.width() ||
        l.patches.channels() != first.patches.channels()) {
      throw Error("layer stack: layer " + std::to_string(i + 1) + " shape differs from layer 1");
    }
    if (l.registers.count() != first.registers.count()) {
      throw Error("layer stack: layer " + std::to_string(i + 1) + " register count differs from layer 1");
    }
    if (l.registers.count() > 0 && l.registers.channels() != l.patches.channels()) {
      throw Error("layer stack: layer " + std::to_string(i + 1) + " register width differs from patch width");
    }
  }
}

const LayerFeatures& LayerStack::layer(int index) const {
  if (index < 1 || index > num_layers()) {
    throw Error("layer index " + std::to_string(index) + " out of range 1.." + std::to_string(num_layers()));
  }
  return layers_[static_cast<std::size_t>(index - 1)];
}

ImageSize LayerStack::grid() const {
  const auto& p = layers_.front().patches;
  return {p.height(), p.width()};
}

int LayerStack::channels() const { return layers_.front().patches.channels(); }

int LayerStack::register_count() const { return layers_.front().registers.count(); }

ClassMask::ClassMask(int height, int width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (height < 1 || width < 1) {
    throw Error("class mask: dimensions must be positive");
  }
  if (labels_.size() != static_cast<std::size_t>(height) * width) {
    throw Error("class mask: label count does not match H*W");
  }
}

ClassMask::ClassMask(int height, int width, std::uint8_t fill)
    : ClassMask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(height, 0)) *
                                                             static_cast<std::size_t>(std::max(width, 0)),
                                                         fill)) {}

std::vector<int> ClassMask::classes_present() const {
  std::array<bool, 256> seen{};
  for (auto v : labels_) seen[v] = true;
  std::vector<int> out;
  for (int c = 0; c < 255; ++c) {
    if (seen[static_cast<std::size_t>(c)]) out.push_back(c);
  }
  return out;
}

ClassMask ClassMask::restricted_to(std::span<const int> keep) const {
  std::array<bool, 256> allowed{};
  allowed[kBackground] = true;
  allowed[kIgnore] = true;
  for (int c : keep) {
    if (c >= 0 && c < 256) allowed[static_cast<std::size_t>(c)] = true;
  }
  std::vector<std::uint8_t> out(labels_);
  for (auto& v : out) {
    if (!allowed[v]) v = kBackground;
  }
  return ClassMask(height_, width_, std::move(out));
}

const Episode& validate_episode(const Episode& ep) {
  if (ep.supports.empty()) {
    throw Error("invalid episode: no support images");
  }
  if (ep.class_list.empty()) {
    throw Error("invalid episode: empty class list");
  }
  std::set<int> distinct;
  for (int c : ep.class_list) {
    if (c < 1 || c > 254) {
      throw Error("invalid episode: class id " + std::to_string(c) + " outside 1..254");
    }
    if (!distinct.insert(c).second) {
      throw Error("invalid episode: duplicate class id " + std::to_string(c));
    }
  }

  const int layers = ep.query.num_layers();
  const int channels = ep.query.channels();
  if (ep.query_gt && ep.query_gt->size() != ep.query.image_size()) {
    throw Error("invalid episode: query mask size differs from query image size");
  }
  std::set<int> covered;
  for (std::size_t k = 0; k < ep.supports.size(); ++k) {
    const auto& s = ep.supports[k];
    const std::string where = "support " + std::to_string(k);
    if (s.features.num_layers() != layers) {
      throw Error("invalid episode: layer count mismatch (" + where + " has " +
                  std::to_string(s.features.num_layers()) + ", query has " + std::to_string(layers) + ")");
    }
    if (s.features.channels() != channels) {
      throw Error("invalid episode: feature dimension mismatch at " + where);
    }
    if (s.features.register_count() != ep.query.register_count()) {
      throw Error("invalid episode: register count mismatch at " + where);
    }
    if (s.mask.size() != s.features.image_size()) {
      throw Error("invalid episode: " + where + " mask size differs from its image size");
    }
    for (int c : s.mask.classes_present()) covered.insert(c);
  }
  for (int c : ep.class_list) {
    if (!covered.contains(c)) {
      throw Error("invalid episode: class absent from every support mask (class " + std::to_string(c) + ")");
    }
  }
  return ep;
}

}  // namespace protoseg
