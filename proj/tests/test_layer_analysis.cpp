#include <cmath>
#include <sstream>

#include "brute_force.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "protoseg/episodes_io.hpp"
#include "protoseg/layer_analysis.hpp"

using namespace protoseg;
using fixtures::make_map;

namespace {

constexpr std::size_t kFisher = 0, kRev = 1, kSelf = 2, kGram = 3, kReg = 4, kEnt = 5;

SyntheticConfig noiseless(int n_way, int layers) {
  SyntheticConfig cfg;
  cfg.n_way = n_way;
  cfg.layers = layers;
  cfg.peak_layer = 1;
  cfg.noise_sigma = 0.0;
  return cfg;
}

HeuristicRow row(std::initializer_list<std::pair<std::size_t, double>> values) {
  HeuristicRow r;
  for (auto [m, v] : values) r[m] = v;
  return r;
}

EpisodeTable table(std::string id, std::vector<HeuristicRow> h, std::vector<double> miou) {
  return {std::move(id), std::move(h), std::move(miou)};
}

}  // namespace

TEST_CASE("one outcome per layer") {
  auto cfg = noiseless(1, 12);
  cfg.noise_sigma = 0.05;
  cfg.peak_layer = 7;
  const auto outcomes = per_layer_outcomes(generate_synthetic(cfg, 0), {});
  REQUIRE(outcomes.size() == 12);
  for (int l = 0; l < 12; ++l) CHECK(outcomes[static_cast<std::size_t>(l)].layer == l + 1);
}

TEST_CASE("identical layers give identical predictions") {
  Episode ep = generate_synthetic(noiseless(2, 1), 4);
  auto copy_layers = [](const LayerStack& s) {
    return fixtures::repeat_layers(s.patches(1), 4, s.image_size());
  };
  for (auto& sup : ep.supports) sup.features = copy_layers(sup.features);
  ep.query = copy_layers(ep.query);
  const auto outcomes = per_layer_outcomes(ep, {});
  for (const auto& o : outcomes) CHECK(o.prediction == outcomes.front().prediction);
}

TEST_CASE("only the separable layer wins") {
  SyntheticConfig cfg = noiseless(2, 12);
  cfg.noise_sigma = 0.1;
  cfg.layer_noise_gain = 20.0;
  cfg.peak_layer = 7;
  const auto outcomes = per_layer_outcomes(generate_synthetic(cfg, 2), {});
  for (const auto& o : outcomes) {
    if (o.layer != 7) CHECK(*o.miou < *outcomes[6].miou);
  }
  CHECK(oracle_select(outcomes) == 7);
}

TEST_CASE("oracle selection") {
  CHECK(oracle_select(std::vector{0.3, 0.5, 0.4}) == 2);
  CHECK(oracle_select(std::vector{0.4, 0.4, 0.4}) == 1);
  CHECK(oracle_select(std::vector{0.1, 0.2, 0.3, 0.9}) == 4);
}

TEST_CASE("fisher score") {
  const ClassMask one_class(2, 2, std::uint8_t{1});
  CHECK(fisher_score(make_map(1, 2, {{1, 0}, {0, 1}}), one_class, 1e-8) == 0.0);

  // Every feature equals its class mean; the two means are not collinear.
  const auto fm = make_map(1, 4, {{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  const ClassMask pred(1, 4, std::vector<std::uint8_t>{0, 0, 1, 1});
  const double eps = 1e-8;
  // mu_G = (0.5, 0.5); each class is 45 degrees away.
  const double between = 4.0 * (1.0 - std::sqrt(0.5));
  const double f = fisher_score(fm, pred, eps);
  CHECK(std::isfinite(f));
  CHECK(f == doctest::Approx(between / eps).epsilon(1e-9));

  Rng rng(8);
  const auto noise = fixtures::random_map(8, 8, 16, rng);
  std::vector<std::uint8_t> labels(64);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.index(2));
  const double random_f = fisher_score(noise, ClassMask(8, 8, labels), eps);
  std::vector<float> sep(64 * 16);
  for (std::size_t p = 0; p < 64; ++p) {
    for (std::size_t j = 0; j < 16; ++j) {
      sep[p * 16 + j] = static_cast<float>((j == labels[p] ? 3.0 : 0.0) + 0.3 * rng.normal());
    }
  }
  CHECK(random_f < fisher_score(FeatureMap(8, 8, 16, sep), ClassMask(8, 8, labels), eps));
}

TEST_CASE("support self IoU") {
  const Episode clean = generate_synthetic(noiseless(2, 1), 0);
  CHECK(*support_self_iou(clean, 1, {}) == doctest::Approx(1.0));

  // Same layout on a larger grid, features replaced by isotropic noise.
  SyntheticConfig big = noiseless(2, 1);
  big.height = big.width = 32;
  big.channels = 16;
  Episode noise = generate_synthetic(big, 0);
  Rng rng(12);
  for (auto& s : noise.supports) {
    const auto& fm = s.features.patches(1);
    s.features = fixtures::single_layer(fixtures::random_map(fm.height(), fm.width(), fm.channels(), rng),
                                        s.features.image_size(), s.features.register_count());
  }
  const double noisy = *support_self_iou(noise, 1, {});
  MESSAGE("self IoU on pure-noise supports: " << noisy);
  CHECK(noisy < 0.5);

  SyntheticConfig k3 = noiseless(2, 1);
  k3.k_shot = 3;
  k3.noise_sigma = 0.4;
  Episode ep = generate_synthetic(k3, 1);
  ep.supports.resize(1);
  ep.class_list.clear();
  for (int c : ep.supports[0].mask.classes_present()) {
    if (c != 0) ep.class_list.push_back(c);
  }
  const auto bank = build_prototypes(ep, 1, {});
  const auto seg = segment_features(ep.supports[0].features.patches(1), ep.supports[0].features.image_size(), bank,
                                    MatchMode::kCombined);
  const double direct = episode_miou(seg.prediction, ep.supports[0].mask, episode_num_classes(ep));
  CHECK(*support_self_iou(ep, 1, {}) == doctest::Approx(direct));
}

TEST_CASE("reverse mIoU") {
  SyntheticConfig cfg = noiseless(2, 1);
  cfg.noise_sigma = 0.1;
  const Episode ep = generate_synthetic(cfg, 5);
  const ClassMask& gt = *ep.query_gt;
  const double perfect = *reverse_miou(ep, 1, gt, {});
  const Episode clean = generate_synthetic(noiseless(2, 1), 5);
  CHECK(*reverse_miou(clean, 1, *clean.query_gt, {}) == doctest::Approx(1.0));
  CHECK_FALSE(reverse_miou(ep, 1, ClassMask(gt.height(), gt.width(), std::uint8_t{0}), {}).has_value());

  // Swap foreground labels on the right half of the prediction.
  std::vector<std::uint8_t> corrupt(gt.labels().begin(), gt.labels().end());
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = gt.width() / 2; x < gt.width(); ++x) {
      auto& v = corrupt[static_cast<std::size_t>(y) * gt.width() + x];
      v = static_cast<std::uint8_t>((v + 1) % 3);
    }
  }
  const auto worse = reverse_miou(ep, 1, ClassMask(gt.height(), gt.width(), corrupt), {});
  REQUIRE(worse.has_value());
  CHECK(*worse < perfect);
}

TEST_CASE("gram distance and consistency") {
  GramMatrix a{2, {1, 0, 0, 0}}, b{2, {0, 0, 0, 1}};
  CHECK(gram_distance(a, b) == doctest::Approx(std::sqrt(2.0)));
  CHECK(gram_distance(a, b) == gram_distance(b, a));

  // Query identical to the single support: identical Grams.
  Episode ep = generate_synthetic(noiseless(1, 1), 0);
  ep.supports.resize(1);
  SyntheticConfig noisy = noiseless(1, 1);
  noisy.noise_sigma = 0.3;
  Episode n = generate_synthetic(noisy, 0);
  n.supports.resize(1);
  n.query = n.supports[0].features;
  n.query_gt = n.supports[0].mask;
  CHECK(*gram_consistency(n, 1, *n.query_gt, {}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("register to patch ratio") {
  // ||r|| = 2, ||p|| = 4
  LayerFeatures lf{FeatureMap(1, 1, 2, {4.0f, 0.0f}), RegisterTokens(1, 2, {0.0f, 2.0f})};
  CHECK(*register_patch_ratio(lf, 1e-8) == doctest::Approx(0.5).epsilon(1e-9));
  lf.registers = RegisterTokens(2, 2, std::vector<float>(4, 0.0f));
  CHECK(*register_patch_ratio(lf, 1e-8) == 0.0);
  lf.registers = RegisterTokens(0, 2, {});
  CHECK_FALSE(register_patch_ratio(lf, 1e-8).has_value());
}

TEST_CASE("map entropy") {
  auto flat = [](double v) { return SimilarityMap{2, 2, std::vector<double>(4, v)}; };
  CHECK(*map_entropy({{0, flat(0.3)}, {1, flat(0.3)}, {2, flat(0.3)}, {5, flat(0.3)}}) ==
        doctest::Approx(std::log(4.0)));
  CHECK(*map_entropy({{0, flat(1000.0)}, {1, flat(0.0)}}) == doctest::Approx(0.0));
  CHECK(*map_entropy({{0, flat(0.7)}, {1, flat(0.7)}}) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK_FALSE(map_entropy({{0, flat(0.5)}}).has_value());
}

TEST_CASE("heuristic names round-trip") {
  for (auto h : kAllHeuristics) CHECK(parse_heuristic(column_name(h)) == h);
  CHECK_THROWS_AS(parse_heuristic("sharpness"), Error);
}

TEST_CASE("selection score") {
  SUBCASE("single heuristic keeps its argmax") {
    WeightConfig cfg;
    cfg.directions = default_directions();
    cfg.transforms = default_transforms();
    cfg.weights[kSelf] = 1.0;
    const std::vector<HeuristicRow> rows{row({{kSelf, 0.3}}), row({{kSelf, 0.9}}), row({{kSelf, 0.1}})};
    CHECK(argmax_first(selection_score(rows, cfg)) == 1);
  }
  SUBCASE("equal rows score equally") {
    WeightConfig cfg;
    cfg.directions = default_directions();
    cfg.weights[kFisher] = 0.4;
    cfg.weights[kEnt] = 0.6;
    const std::vector<HeuristicRow> rows{row({{kFisher, 2.0}, {kEnt, 0.1}}), row({{kFisher, 2.0}, {kEnt, 0.1}}),
                                         row({{kFisher, 1.0}, {kEnt, 0.4}})};
    const auto s = selection_score(rows, cfg);
    CHECK(s[0] == s[1]);
  }
  SUBCASE("hand computed weighted sum") {
    WeightConfig cfg;
    cfg.directions = default_directions();
    cfg.weights[kSelf] = 0.5;
    cfg.weights[kEnt] = 1.0;
    const std::vector<HeuristicRow> rows{row({{kSelf, 0.2}, {kEnt, 1.0}}), row({{kSelf, 0.6}, {kEnt, 0.5}}),
                                         row({{kSelf, 1.0}, {kEnt, 0.0}})};
    const auto s = selection_score(rows, cfg);
    CHECK(s[0] == doctest::Approx(-1.0));
    CHECK(s[1] == doctest::Approx(-0.25));
    CHECK(s[2] == doctest::Approx(0.5));
  }
  SUBCASE("fisher goes through log1p") {
    WeightConfig cfg;
    cfg.directions = default_directions();
    cfg.transforms = default_transforms();
    cfg.weights[kFisher] = 1.0;
    const std::vector<HeuristicRow> rows{row({{kFisher, 0.0}}), row({{kFisher, 1.0}}), row({{kFisher, 3.0}})};
    const auto s = selection_score(rows, cfg);
    CHECK(s[1] == doctest::Approx(std::log(2.0) / std::log(4.0)));
  }
  SUBCASE("unavailable entries take the worst value") {
    WeightConfig cfg;
    cfg.directions = default_directions();
    cfg.weights[kReg] = 1.0;
    const std::vector<HeuristicRow> rows{row({{kReg, 0.2}}), HeuristicRow{}, row({{kReg, 0.6}})};
    CHECK(selection_score(rows, cfg) == std::vector<double>{-0.0, -1.0, -1.0});
  }
  SUBCASE("no signal") {
    WeightConfig cfg;
    cfg.directions = default_directions();
    cfg.weights[kRev] = 1.0;
    const std::vector<HeuristicRow> rows{HeuristicRow{}, HeuristicRow{}};
    CHECK_THROWS_WITH_AS(selection_score(rows, cfg), doctest::Contains("no signal"), Error);
  }
}

TEST_CASE("grid search finds a perfectly tracking heuristic") {
  std::vector<EpisodeTable> tables;
  Rng rng(4);
  for (int e = 0; e < 6; ++e) {
    std::vector<HeuristicRow> h;
    std::vector<double> m;
    for (int l = 0; l < 5; ++l) {
      const double v = rng.uniform();
      m.push_back(v);
      h.push_back(row({{kSelf, 2.0 * v}, {kFisher, rng.uniform()}, {kEnt, rng.uniform()}}));
    }
    tables.push_back(table("e" + std::to_string(e), h, m));
  }
  GridSearchOptions opt;
  const auto r = grid_search(tables, opt);
  CHECK(r.regret == doctest::Approx(0.0));
  CHECK(r.achieved_miou == r.oracle_miou);
  for (std::size_t e = 0; e < tables.size(); ++e) CHECK(r.selected_layers[e] == oracle_select(tables[e].miou));
  CHECK(r.configs_evaluated == 11 * 11 * 11 * 11 * 11 * 11 - 1);
}

TEST_CASE("constant heuristics pick the tie-break layer") {
  std::vector<EpisodeTable> tables{
      table("a", {row({{kSelf, 1.0}, {kEnt, 0.2}}), row({{kSelf, 1.0}, {kEnt, 0.2}}), row({{kSelf, 1.0}, {kEnt, 0.2}})},
            {0.1, 0.5, 0.9})};
  GridSearchOptions opt;
  opt.step = 0.5;
  const auto r = grid_search(tables, opt);
  CHECK(r.achieved_miou == 0.1);
  // Lexicographically smallest nonzero lattice point.
  CHECK(r.best.weights == std::array<double, 6>{0, 0, 0, 0, 0, 0.5});
}

TEST_CASE("grid search matches exhaustive enumeration on a small table") {
  const std::vector<EpisodeTable> tables{
      table("a", {row({{kSelf, 0.9}, {kGram, 0.3}}), row({{kSelf, 0.5}, {kGram, 0.1}}), row({{kSelf, 0.7}, {kGram, 0.2}})},
            {0.2, 0.8, 0.5}),
      table("b", {row({{kSelf, 0.1}, {kGram, 0.4}}), row({{kSelf, 0.2}, {kGram, 0.9}}), row({{kSelf, 0.3}, {kGram, 0.5}})},
            {0.6, 0.4, 0.7})};
  GridSearchOptions opt;
  opt.active = {false, false, true, true, false, false};
  const auto r = grid_search(tables, opt);
  const auto b = brute::enumerate(tables, 10, opt.active);
  CHECK(r.achieved_miou == b.mean_miou);
  for (std::size_t m = 0; m < kHeuristicCount; ++m) CHECK(r.best.weights[m] == b.level[m] / 10.0);
  CHECK(r.configs_evaluated == 120);
}

TEST_CASE("grid search is independent of worker count") {
  std::vector<EpisodeTable> tables;
  Rng rng(21);
  for (int e = 0; e < 4; ++e) {
    std::vector<HeuristicRow> h(4);
    std::vector<double> m(4);
    for (int l = 0; l < 4; ++l) {
      for (std::size_t k = 0; k < kHeuristicCount; ++k) h[static_cast<std::size_t>(l)][k] = rng.uniform();
      m[static_cast<std::size_t>(l)] = rng.uniform();
    }
    tables.push_back(table(std::to_string(e), h, m));
  }
  GridSearchOptions opt;
  opt.step = 0.25;
  opt.workers = 1;
  const auto a = grid_search(tables, opt);
  opt.workers = 4;
  const auto b = grid_search(tables, opt);
  CHECK(a.best.weights == b.best.weights);
  CHECK(a.achieved_miou == b.achieved_miou);
  CHECK(a.configs_evaluated == lattice_size(0.25, 6));
  CHECK(lattice_size(0.5, 6) == 728);
}

TEST_CASE("agreement objective") {
  const std::vector<EpisodeTable> tables{
      table("a", {row({{kSelf, 0.1}}), row({{kSelf, 0.9}})}, {0.3, 0.6}),
      table("b", {row({{kSelf, 0.8}}), row({{kSelf, 0.2}})}, {0.7, 0.1})};
  GridSearchOptions opt;
  opt.objective = GridObjective::kLayerAgreement;
  opt.active = {false, false, true, false, false, false};
  const auto r = grid_search(tables, opt);
  CHECK(r.objective_value == 1.0);
}

TEST_CASE("grid search input checks") {
  CHECK_THROWS_WITH_AS(grid_search(std::vector<EpisodeTable>{}, {}), doctest::Contains("empty"), Error);
  CHECK_THROWS_AS(grid_search(std::vector{table("a", {row({{kSelf, 1.0}})}, {0.5})}, {}), Error);
  GridSearchOptions opt;
  opt.step = 0.3;
  CHECK_THROWS_AS(
      grid_search(std::vector{table("a", {row({{kSelf, 1.0}}), row({{kSelf, 0.0}})}, {0.5, 0.2})}, opt), Error);
}

TEST_CASE("heuristic table CSV round trip") {
  std::vector<EpisodeTable> tables{
      table("ep00000", {row({{kFisher, 0.1}, {kEnt, 1.0 / 3.0}}), row({{kSelf, 2.5e-7}})}, {0.25, std::nan("")})};
  std::stringstream ss;
  write_heuristic_table(ss, tables);
  const std::string text = ss.str();
  CHECK(text.rfind("episode_id,layer,fisher,rev_miou,self_iou,gram_dist,reg_ratio,entropy,miou\n", 0) == 0);
  CHECK(text.find("ep00000,1,0.10000000000000001,NA,NA,NA,NA,") != std::string::npos);
  const auto back = read_heuristic_table(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].heuristics == tables[0].heuristics);
  CHECK(back[0].miou[0] == 0.25);
  CHECK(std::isnan(back[0].miou[1]));

  std::istringstream bad("episode_id,layer\n");
  CHECK_THROWS_AS(read_heuristic_table(bad), Error);
}

TEST_CASE("analysis fills all heuristics on a synthetic episode") {
  SyntheticConfig cfg = noiseless(2, 3);
  cfg.noise_sigma = 0.1;
  cfg.peak_layer = 2;
  const auto evals = analyze_layers(generate_synthetic(cfg, 0), {}, true);
  REQUIRE(evals.size() == 3);
  for (const auto& ev : evals) {
    for (auto h : kAllHeuristics) CHECK(ev.heuristics[static_cast<std::size_t>(h)].has_value());
    CHECK(ev.outcome.miou.has_value());
  }
}
