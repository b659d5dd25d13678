#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "protoseg/prototypes.hpp"

using namespace protoseg;
using fixtures::make_map;

namespace {

ClassFeatureSet set_of(const std::vector<std::vector<double>>& rows, int class_id = 1) {
  ClassFeatureSet s;
  s.class_id = class_id;
  s.dims = static_cast<int>(rows.front().size());
  for (const auto& r : rows) s.values.insert(s.values.end(), r.begin(), r.end());
  return s;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// 2x2 grid over a 4x4 image; the top-left patch is class 1, the rest background.
struct QuadrantFixture {
  FeatureMap fm = make_map(2, 2, {{1, 0, 0}, {0, 1, 0}, {0, 1, 0}, {0, 0, 1}});
  ClassMask mask{4, 4, std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}};
};

}  // namespace

TEST_CASE("saturated mask collects every position") {
  const auto fm = make_map(2, 3, {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 1}, {2, 3}});
  const ClassMask mask(8, 12, std::uint8_t{4});
  const AnnotatedFeatures src{&fm, &mask};
  for (double t : {0.01, 0.5, 0.99}) {
    const auto set = collect_class_features(std::span(&src, 1), 4, t);
    CHECK(set.size() == 6);
    CHECK(set.at(5)[1] == 3.0);
  }
}

TEST_CASE("class absent at feature resolution") {
  const auto fm = make_map(1, 2, {{1, 0}, {0, 1}});
  const ClassMask mask(2, 4, std::uint8_t{0});
  const AnnotatedFeatures src{&fm, &mask};
  CHECK_THROWS_WITH_AS(collect_class_features(std::span(&src, 1), 3, 0.5), doctest::Contains("class empty"), Error);
}

TEST_CASE("one saturated patch yields exactly one feature") {
  QuadrantFixture f;
  const auto soft = downsample_mask(f.mask, {2, 2});
  CHECK(soft.planes.at(1) == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  const AnnotatedFeatures src{&f.fm, &f.mask};
  const auto set = collect_class_features(std::span(&src, 1), 1, 0.5);
  REQUIRE(set.size() == 1);
  CHECK(std::vector<double>(set.at(0).begin(), set.at(0).end()) == std::vector<double>{1, 0, 0});
}

TEST_CASE("features from all supports are concatenated") {
  QuadrantFixture a, b;
  std::vector<AnnotatedFeatures> srcs{{&a.fm, &a.mask}, {&b.fm, &b.mask}};
  CHECK(collect_class_features(srcs, 1, 0.5).size() == 2);
  CHECK(collect_class_features(srcs, 0, 0.5).size() == 6);
}

TEST_CASE("ignore pixels belong to no class") {
  const auto fm = make_map(1, 1, {{1, 1}});
  const ClassMask mask(2, 2, ClassMask::kIgnore);
  const auto soft = downsample_mask(mask, {1, 1});
  CHECK(soft.planes.empty());
}

TEST_CASE("identical features collapse to one centroid") {
  const auto set = set_of(std::vector<std::vector<double>>(7, {3.0, 4.0}));
  const auto c = spherical_kmeans(set, 5, 50, 1);
  REQUIRE(c.size() == 1);
  CHECK(c[0][0] == doctest::Approx(0.6));
  CHECK(c[0][1] == doctest::Approx(0.8));
}

TEST_CASE("orthogonal groups are separated") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 10; ++i) rows.push_back({1, 0, 0});
  for (int i = 0; i < 10; ++i) rows.push_back({0, 1, 0});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto c = spherical_kmeans(set_of(rows), 2, 50, seed);
    REQUIRE(c.size() == 2);
    std::sort(c.begin(), c.end());
    CHECK(c[0] == std::vector<double>{0, 1, 0});
    CHECK(c[1] == std::vector<double>{1, 0, 0});
  }
}

TEST_CASE("single cluster centroid is the normalised mean direction") {
  const std::vector<std::vector<double>> rows{{2, 0, 0}, {0, 5, 0}, {1, 1, 1}, {0, 0, -3}};
  std::vector<double> mean(3, 0.0);
  for (const auto& r : rows) {
    const double n = norm(r);
    for (int j = 0; j < 3; ++j) mean[static_cast<std::size_t>(j)] += r[static_cast<std::size_t>(j)] / n;
  }
  const double mn = norm(mean);
  const auto c = spherical_kmeans(set_of(rows), 1, 50, 0);
  REQUIRE(c.size() == 1);
  for (int j = 0; j < 3; ++j) CHECK(c[0][static_cast<std::size_t>(j)] == doctest::Approx(mean[static_cast<std::size_t>(j)] / mn));
}

TEST_CASE("k-means objective never increases and centroids are unit norm") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<double>> rows(40, std::vector<double>(6));
    for (auto& r : rows) {
      for (auto& v : r) v = rng.normal();
    }
    const auto res = spherical_kmeans_detailed(set_of(rows), 4, 50, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i) {
      CHECK(res.objective_trace[i] <= res.objective_trace[i - 1] + 1e-12);
    }
    for (const auto& c : res.centroids) CHECK(norm(c) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(res.assignment.size() == rows.size());
  }
}

TEST_CASE("restarts keep the lowest objective") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::vector<double>> rows(12, std::vector<double>(3));
    for (auto& r : rows) {
      for (auto& v : r) v = rng.normal();
    }
    const auto set = set_of(rows);
    const auto many = spherical_kmeans_detailed(set, 3, 50, static_cast<std::uint64_t>(trial), 8);
    const auto one = spherical_kmeans_detailed(set, 3, 50, static_cast<std::uint64_t>(trial), 1);
    CHECK(many.objective_trace.back() <= one.objective_trace.back() + 1e-12);
    CHECK(spherical_objective(set, many.centroids) == doctest::Approx(many.objective_trace.back()));
  }
  CHECK_THROWS_AS(spherical_kmeans(set_of({{1, 0}}), 1, 10, 0, 0), Error);
}

TEST_CASE("k-means ignores input order") {
  Rng rng(11);
  std::vector<std::vector<double>> rows(25, std::vector<double>(4));
  for (auto& r : rows) {
    for (auto& v : r) v = rng.normal();
  }
  auto a = spherical_kmeans(set_of(rows), 3, 50, 9);
  rng.shuffle(rows.begin(), rows.end());
  auto b = spherical_kmeans(set_of(rows), 3, 50, 9);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("gram of a single feature") {
  const auto g = class_gram(set_of({{3, 4}}));
  CHECK(g.at(0, 0) == doctest::Approx(0.36));
  CHECK(g.at(0, 1) == doctest::Approx(0.48));
  CHECK(g.at(1, 0) == doctest::Approx(0.48));
  CHECK(g.at(1, 1) == doctest::Approx(0.64));
}

TEST_CASE("gram of two orthonormal features") {
  const auto g = class_gram(set_of({{1, 0}, {0, 1}}));
  CHECK(g.values == std::vector<double>{0.5, 0.0, 0.0, 0.5});
}

TEST_CASE("gram is symmetric, PSD and has unit trace") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.index(8));
    const int n = 1 + static_cast<int>(rng.index(20));
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
    for (auto& r : rows) {
      for (auto& v : r) v = rng.normal() * 10.0;
    }
    const auto g = class_gram(set_of(rows));
    Eigen::MatrixXd m(d, d);
    double trace = 0.0;
    for (int i = 0; i < d; ++i) {
      trace += g.at(i, i);
      for (int j = 0; j < d; ++j) {
        m(i, j) = g.at(i, j);
        CHECK(g.at(i, j) == g.at(j, i));
      }
    }
    CHECK(trace == doctest::Approx(1.0).epsilon(1e-9));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("zero feature vector is degenerate for the gram") {
  CHECK_THROWS_WITH_AS(class_gram(set_of({{1, 0}, {0, 0}})), doctest::Contains("degenerate"), Error);
}

TEST_CASE("building prototypes for a 1-way episode") {
  // 2x4 grid, left half class 1 with three patches of a different direction.
  const auto fm = make_map(2, 4, {{1, 0, 0}, {1, 0.1, 0}, {0, 0, 1}, {0, 0.1, 1},
                                  {1, 0, 0.2}, {0.9, 0, 0}, {0, 0, 1}, {0.1, 0, 1}});
  std::vector<std::uint8_t> labels(32);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 8; ++x) labels[static_cast<std::size_t>(y) * 8 + x] = x < 4 ? 1 : 0;
  }
  Episode ep;
  ep.supports.push_back({fixtures::single_layer(fm, {4, 8}), ClassMask(4, 8, labels)});
  ep.query = fixtures::single_layer(fm, {4, 8});
  ep.class_list = {1};

  PrototypeParams params;
  SUBCASE("one prototype per class") {
    params.n_clusters = 1;
    const auto bank = build_prototypes(ep, 1, params);
    REQUIRE(bank.size() == 2);
    CHECK(bank.count(0) == 1);
    CHECK(bank.count(1) == 1);
    CHECK(bank.at(1).prototypes.size() == 1);
    CHECK(bank.at(1).feature_count == 4);
  }
  SUBCASE("cluster count is capped by the point count") {
    std::vector<std::uint8_t> small(32, 0);
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 6; ++x) small[static_cast<std::size_t>(y) * 8 + x] = 1;
    }
    ep.supports[0].mask = ClassMask(4, 8, small);
    const auto bank = build_prototypes(ep, 1, params);
    CHECK(bank.at(1).feature_count == 3);
    CHECK(bank.at(1).prototypes.size() <= 3);
    CHECK(bank.at(1).prototypes.size() >= 1);
  }
  SUBCASE("deterministic for a fixed seed") {
    params.n_clusters = 3;
    params.seed = 42;
    const auto a = build_prototypes(ep, 1, params);
    const auto b = build_prototypes(ep, 1, params);
    for (const auto& [c, ps] : a) {
      CHECK(ps.prototypes == b.at(c).prototypes);
      CHECK(ps.gram.values == b.at(c).gram.values);
    }
  }
  SUBCASE("prototypes are unit norm") {
    params.n_clusters = 5;
    for (const auto& [c, ps] : build_prototypes(ep, 1, params)) {
      for (const auto& p : ps.prototypes) CHECK(norm(p) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("prototype parameter validation") {
  PrototypeParams p;
  CHECK_NOTHROW(validate(p));
  p.n_clusters = 0;
  CHECK_THROWS_AS(validate(p), Error);
  p = {};
  p.mask_threshold = 1.0;
  CHECK_THROWS_AS(validate(p), Error);
}
