#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace protoseg {

/// Raised for every violated precondition, malformed input or degenerate
/// computation in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageSize {
  int height = 0;
  int width = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Dense patch features of one image at one layer.
///
/// Layout is channel-last, row-major: the vector for patch (row, col) starts
/// at offset (row * width + col) * channels.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t positions() const { return static_cast<std::size_t>(height_) * width_; }

  std::span<const float> at(int row, int col) const {
    return at(static_cast<std::size_t>(row) * width_ + col);
  }
  std::span<const float> at(std::size_t position) const {
    return {data_.data() + position * channels_, static_cast<std::size_t>(channels_)};
  }
  std::span<const float> data() const { return data_; }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Non-spatial auxiliary tokens of one layer. May be empty.
class RegisterTokens {
 public:
  RegisterTokens() = default;
  RegisterTokens(int count, int channels, std::vector<float> data);

  int count() const { return count_; }
  int channels() const { return channels_; }
  std::span<const float> data() const { return data_; }

 private:
  int count_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

struct LayerFeatures {
  FeatureMap patches;
  RegisterTokens registers;
};

/// Per-layer features of one image. Layers are addressed 1..L.
class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(std::vector<LayerFeatures> layers, ImageSize image_size);

  int num_layers() const { return static_cast<int>(layers_.size()); }
  const LayerFeatures& layer(int index) const;
  const FeatureMap& patches(int index) const { return layer(index).patches; }
  std::span<const LayerFeatures> layers() const { return layers_; }
  ImageSize image_size() const { return image_size_; }
  /// Grid shape shared by every layer.
  ImageSize grid() const;
  int channels() const;
  int register_count() const;

 private:
  std::vector<LayerFeatures> layers_;
  ImageSize image_size_;
};

/// Pixel labels: 0 is background, 1..254 foreground class ids, 255 ignore.
class ClassMask {
 public:
  static constexpr std::uint8_t kIgnore = 255;
  static constexpr int kBackground = 0;

  ClassMask() = default;
  ClassMask(int height, int width, std::vector<std::uint8_t> labels);
  ClassMask(int height, int width, std::uint8_t fill);

  int height() const { return height_; }
  int width() const { return width_; }
  ImageSize size() const { return {height_, width_}; }
  std::uint8_t at(int row, int col) const { return labels_[static_cast<std::size_t>(row) * width_ + col]; }
  std::span<const std::uint8_t> labels() const { return labels_; }

  /// Sorted labels that occur at least once, ignore excluded.
  std::vector<int> classes_present() const;
  /// Copy where every label outside {0} ∪ keep (and not ignore) becomes background.
  ClassMask restricted_to(std::span<const int> keep) const;

  friend bool operator==(const ClassMask&, const ClassMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

struct Support {
  LayerStack features;
  ClassMask mask;
};

/// One few-shot task: K annotated supports and a query over class_list.
struct Episode {
  std::vector<Support> supports;
  LayerStack query;
  std::optional<ClassMask> query_gt;
  std::vector<int> class_list;
};

/// Throws Error naming the first violated invariant, otherwise returns ep.
const Episode& validate_episode(const Episode& ep);

}  // namespace protoseg
