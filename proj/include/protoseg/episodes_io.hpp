#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoseg/types.hpp"

namespace protoseg {

// ---------------------------------------------------------------------------
// Feature files
//
// Little-endian layout:
//   "FSSD"  u16 version (= 1)  u16 layer count L
//   L times: u32 h, u32 w, u32 d, u32 r, h*w*d f32 patch values (channel-last,
//            row-major), r*d f32 register values

enum class FormatErrorKind { kIo, kBadMagic, kBadVersion, kTruncated, kSizeMismatch, kNonFinite };

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& message) : Error(message), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

inline constexpr std::uint16_t kFeatureFileVersion = 1;

std::vector<std::byte> encode_feature_file(const LayerStack& stack);
/// image_size defaults to the feature grid when not given.
LayerStack decode_feature_file(std::span<const std::byte> bytes, std::optional<ImageSize> image_size = std::nullopt);

void write_feature_file(const LayerStack& stack, const std::filesystem::path& path);
LayerStack read_feature_file(const std::filesystem::path& path, std::optional<ImageSize> image_size = std::nullopt);

// ---------------------------------------------------------------------------
// Masks (8-bit single-channel PNG; palette PNGs are read as raw indices)

ClassMask read_mask(const std::filesystem::path& path, std::optional<ImageSize> expected_size = std::nullopt);
void write_mask(const ClassMask& mask, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest and episode specs (JSON)

struct ManifestRecord {
  std::string image_id;
  std::filesystem::path feature_path;
  std::filesystem::path mask_path;
  std::vector<int> classes_present;
  ImageSize image_size;
};

struct DatasetManifest {
  /// Relative paths in records resolve against this directory.
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  const ManifestRecord& find(const std::string& image_id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
DatasetManifest read_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct EpisodeDescriptor {
  std::string episode_id;
  std::vector<std::string> support_ids;
  std::string query_id;
  std::vector<int> class_list;

  friend bool operator==(const EpisodeDescriptor&, const EpisodeDescriptor&) = default;
};

struct EpisodeSpec {
  int n_way = 1;
  int k_shot = 1;
  std::uint64_t seed = 0;
  int episode_count = 1;
  std::vector<EpisodeDescriptor> episodes;
};

EpisodeSpec parse_episode_spec(const std::string& json_text);
EpisodeSpec read_episode_spec(const std::filesystem::path& path);
std::string episode_spec_to_json(const EpisodeSpec& spec);
void write_episode_spec(const EpisodeSpec& spec, const std::filesystem::path& path);

std::string episode_id_for(std::size_t index);

/// Draws spec.episode_count episodes. Each draws n_way classes, a query that
/// contains at least one of them and k_shot distinct supports that jointly
/// cover all of them. Deterministic in spec.seed.
std::vector<EpisodeDescriptor> sample_episodes(const DatasetManifest& manifest, const EpisodeSpec& spec);

/// Reads features and masks of an episode; labels outside class_list become
/// background in every mask.
Episode load_episode(const DatasetManifest& manifest, const EpisodeDescriptor& desc);

// ---------------------------------------------------------------------------
// Synthetic fixtures

struct SyntheticConfig {
  int n_way = 1;
  int k_shot = 1;
  int layers = 12;
  int height = 16;
  int width = 16;
  int channels = 64;
  int patch_size = 4;
  int registers = 4;
  double noise_sigma = 0.05;
  /// Layer l gets noise sigma * (1 + gain * |l - peak_layer|).
  double layer_noise_gain = 8.0;
  int peak_layer = 7;
  std::uint64_t seed = 0;
};

void validate(const SyntheticConfig& cfg);

/// Noise level applied to a given layer.
double synthetic_layer_sigma(const SyntheticConfig& cfg, int layer);

/// Orthonormal class directions (row c for class c, row 0 is background).
std::vector<std::vector<double>> synthetic_directions(const SyntheticConfig& cfg);

/// Episode with query ground truth. Masks are vertical stripes aligned to
/// patch boundaries; every patch feature is its class direction plus noise.
Episode generate_synthetic(const SyntheticConfig& cfg, std::uint64_t episode_index = 0);

struct SyntheticDataset {
  std::filesystem::path manifest_path;
  std::filesystem::path episodes_path;
  DatasetManifest manifest;
  EpisodeSpec spec;
};

/// Writes episode_count synthetic episodes as feature files, mask PNGs, a
/// manifest.json and an episodes.json under dir.
SyntheticDataset write_synthetic_dataset(const SyntheticConfig& cfg, int episode_count,
                                         const std::filesystem::path& dir);

}  // namespace protoseg
