#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using protoseg::cli::RunConfig;

void add_episode_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--manifest", cfg.manifest, "dataset manifest JSON")->required();
  cmd->add_option("--episode-file", cfg.episode_file, "fixed episode list JSON (skips sampling)");
  cmd->add_option("--n-way", cfg.n_way, "foreground classes per episode")->capture_default_str();
  cmd->add_option("--k-shot", cfg.k_shot, "support images per episode")->capture_default_str();
  cmd->add_option("--episodes", cfg.episodes, "number of sampled episodes")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "root seed")->capture_default_str();
  cmd->add_option("--output-dir", cfg.output_dir, "where reports are written")->capture_default_str();
  cmd->add_option("--workers", cfg.workers, "episode worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_pipeline_flags(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--n-clusters", cfg.n_clusters, "prototypes per class")->capture_default_str();
  cmd->add_option("--mask-threshold", cfg.mask_threshold, "soft mask cut-off at feature resolution")
      ->capture_default_str();
  cmd->add_option("--max-iter", cfg.max_iter, "k-means iteration cap")->capture_default_str();
  cmd->add_option("--n-init", cfg.n_init, "k-means seedings per class")->capture_default_str();
  cmd->add_option("--mode", cfg.mode, "combined | prototype_only | gram_only")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"protoseg: training-free few-shot segmentation over per-layer features"};
  app.require_subcommand(1);
  RunConfig cfg;

  auto* segment = app.add_subcommand("segment", "segment sampled episodes at one or all layers");
  add_episode_flags(segment, cfg);
  add_pipeline_flags(segment, cfg);
  segment->add_option("--layer", cfg.layer, "layer index, 'last' or 'all'")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "score saved prediction masks against ground truth");
  add_episode_flags(evaluate, cfg);
  evaluate->add_option("--layer", cfg.layer, "layer whose predictions are scored")->capture_default_str();
  evaluate->add_option("--predictions-dir", cfg.predictions_dir, "defaults to <output-dir>/predictions");

  auto* oracle = app.add_subcommand("oracle", "per-layer mIoU and ground-truth-guided layer choice");
  add_episode_flags(oracle, cfg);
  add_pipeline_flags(oracle, cfg);
  oracle->add_option("--eps", cfg.eps, "numerical guard")->capture_default_str();

  auto* heuristics = app.add_subcommand("heuristics", "label-free layer heuristics table");
  add_episode_flags(heuristics, cfg);
  add_pipeline_flags(heuristics, cfg);
  heuristics->add_option("--eps", cfg.eps, "numerical guard")->capture_default_str();

  auto* grid = app.add_subcommand("gridsearch", "search heuristic weights over a lattice");
  grid->add_option("--table", cfg.table, "heuristics CSV")->required();
  grid->add_option("--step", cfg.step, "lattice step; must divide 1")->capture_default_str();
  grid->add_option("--objective", cfg.objective, "miou | agreement")->capture_default_str();
  grid->add_option("--heuristics", cfg.heuristics, "restrict to these heuristics")->delimiter(',');
  grid->add_option("--output-dir", cfg.output_dir)->capture_default_str();
  grid->add_option("--workers", cfg.workers)->capture_default_str()->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset with manifest and episode list");
  synth->add_option("--n-way", cfg.n_way)->capture_default_str();
  synth->add_option("--k-shot", cfg.k_shot)->capture_default_str();
  synth->add_option("--episodes", cfg.episodes)->capture_default_str();
  synth->add_option("--seed", cfg.seed)->capture_default_str();
  synth->add_option("--output-dir", cfg.output_dir)->capture_default_str();
  synth->add_option("--layers", cfg.synth.layers)->capture_default_str();
  synth->add_option("--height", cfg.synth.height, "feature grid rows")->capture_default_str();
  synth->add_option("--width", cfg.synth.width, "feature grid columns")->capture_default_str();
  synth->add_option("--channels", cfg.synth.channels)->capture_default_str();
  synth->add_option("--patch-size", cfg.synth.patch_size, "pixels per patch side")->capture_default_str();
  synth->add_option("--registers", cfg.synth.registers)->capture_default_str();
  synth->add_option("--noise-sigma", cfg.synth.noise_sigma)->capture_default_str();
  synth->add_option("--layer-noise-gain", cfg.synth.layer_noise_gain)->capture_default_str();
  synth->add_option("--peak-layer", cfg.synth.peak_layer)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*segment) return protoseg::cli::cmd_segment(cfg, std::cout, std::cerr);
  if (*evaluate) return protoseg::cli::cmd_evaluate(cfg, std::cout, std::cerr);
  if (*oracle) return protoseg::cli::cmd_oracle(cfg, std::cout, std::cerr);
  if (*heuristics) return protoseg::cli::cmd_heuristics(cfg, std::cout, std::cerr);
  if (*grid) return protoseg::cli::cmd_gridsearch(cfg, std::cout, std::cerr);
  return protoseg::cli::cmd_synth(cfg, std::cout, std::cerr);
}
