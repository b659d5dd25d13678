#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "protoseg/episodes_io.hpp"
#include "protoseg/types.hpp"

namespace protoseg::cli {

/// Bad flag values; reported as usage errors (exit status 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::filesystem::path manifest;
  /// Fixed episode list; when absent episodes are sampled from the manifest.
  std::optional<std::filesystem::path> episode_file;
  int n_way = 1;
  int k_shot = 1;
  int episodes = 100;
  std::uint64_t seed = 0;

  int n_clusters = 5;
  double mask_threshold = 0.5;
  int max_iter = 50;
  int n_init = 10;
  /// Layer index, "last" or "all".
  std::string layer = "last";
  std::string mode = "combined";
  std::filesystem::path output_dir = "protoseg_out";
  double eps = 1e-8;
  int workers = 1;

  // evaluate
  std::optional<std::filesystem::path> predictions_dir;

  // gridsearch
  std::filesystem::path table;
  double step = 0.1;
  std::string objective = "miou";
  std::vector<std::string> heuristics;

  // synth
  SyntheticConfig synth;
};

int cmd_segment(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_oracle(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_heuristics(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_gridsearch(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Resolves "last", "all" or an index against a stack with num_layers layers.
std::vector<int> resolve_layers(const std::string& selector, int num_layers);

}  // namespace protoseg::cli
