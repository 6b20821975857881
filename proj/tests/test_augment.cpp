#include "support.hpp"

#include <gtest/gtest.h>

using namespace wbt;

TEST(DropFeatures, ZeroProbabilityIsIdentity) {
  Rng rng(1);
  const Matrix x = oracle::random_matrix(10, 4, rng);
  EXPECT_EQ(drop_features(x, 0.0, 7), x);
}

TEST(DropFeatures, ZeroedFractionNearP) {
  const Matrix x = Matrix::Ones(1000, 100);
  const Matrix y = drop_features(x, 0.1, 42);
  const double zeroed = static_cast<double>((y.array() == 0.0).count()) / static_cast<double>(x.size());
  EXPECT_NEAR(zeroed, 0.1, 0.01);
}

TEST(DropFeatures, SameSeedSameMask) {
  Rng rng(2);
  const Matrix x = oracle::random_matrix(30, 8, rng);
  EXPECT_EQ(drop_features(x, 0.3, 5), drop_features(x, 0.3, 5));
  EXPECT_NE(drop_features(x, 0.3, 5), drop_features(x, 0.3, 6));
}

TEST(DropEdges, KeepProbabilityClosedForm) {
  EXPECT_DOUBLE_EQ(keep_probability(1.0, 2.0, 0.5), 0.25);
  EXPECT_DOUBLE_EQ(keep_probability(3.0, 2.0, 0.5), 0.75);
  EXPECT_DOUBLE_EQ(keep_probability(1.0, 377.0, 0.8), kMinKeepProbability);
  EXPECT_DOUBLE_EQ(keep_probability(377.0, 2.0, 0.8), 1.0);
}

TEST(DropEdges, TwoWeightRetentionFrequencies) {
  const std::vector<WeightedPair> edges{{0, 0, 1.0}, {1, 1, 3.0}};
  const auto freq = oracle::retention_frequencies(edges, 0.5, 10000, 42);
  EXPECT_NEAR(freq[0], 0.25, 0.02);
  EXPECT_NEAR(freq[1], 0.75, 0.02);
}

TEST(DropEdges, EqualWeightsKeepAtBaseRate) {
  std::vector<WeightedPair> edges;
  for (Index i = 0; i < 20000; ++i) edges.push_back({i, i, 4.0});
  const auto kept = drop_edges_weight_aware(edges, 0.6, 9);
  EXPECT_NEAR(static_cast<double>(kept.size()) / 20000.0, 0.6, 0.015);
}

TEST(DropEdges, FullKeepRetainsEverything) {
  const std::vector<WeightedPair> edges{{0, 0, 1.0}, {1, 0, 1.0}, {0, 1, 1.0}};
  EXPECT_EQ(drop_edges_weight_aware(edges, 1.0, 3).size(), 3u);
  EXPECT_TRUE(drop_edges_weight_aware({}, 0.5, 3).empty());
}

TEST(DropEdges, RetainedEdgesKeepTheirWeights) {
  const std::vector<WeightedPair> edges{{0, 0, 2.0}, {1, 0, 5.0}, {0, 1, 9.0}};
  for (const WeightedPair& e : drop_edges_weight_aware(edges, 0.9, 11)) {
    const auto it = std::find_if(edges.begin(), edges.end(), [&](const auto& s) { return s.u == e.u && s.v == e.v; });
    ASSERT_NE(it, edges.end());
    EXPECT_EQ(it->weight, e.weight);
  }
}

TEST(CorruptView, PermutesFeatureRowsAndStaysBipartite) {
  Rng rng(3);
  const Matrix xu = oracle::random_matrix(12, 3, rng), xv = oracle::random_matrix(9, 2, rng);
  const GraphView c = corrupt_view(xu, xv, 40, 77);
  EXPECT_EQ(c.kind, ViewKind::Corrupted);
  EXPECT_EQ(c.edges.size(), 40u);
  for (const WeightedPair& e : c.edges) {
    EXPECT_LT(e.u, 12u);
    EXPECT_LT(e.v, 9u);
    EXPECT_EQ(e.weight, 1.0);
  }
  // Same multiset of rows.
  auto sorted_rows = [](const Matrix& m) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.emplace_back(m.row(i).data(), m.row(i).data() + m.cols());
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  EXPECT_EQ(sorted_rows(c.x_u), sorted_rows(xu));
  EXPECT_EQ(sorted_rows(c.x_v), sorted_rows(xv));
  EXPECT_NE(c.x_u, xu);
}

TEST(CorruptView, OverlapWithTrueEdgesMatchesDensity) {
  SyntheticParams p;
  p.n_u = 100;
  p.n_v = 100;
  p.n_edges = 1000;
  p.blocks = 0;
  const BipartiteGraph g = generate_synthetic(p).graph;
  std::unordered_set<std::uint64_t> truth;
  for (const Edge& e : g.edges) truth.insert(pair_key(e.u, e.v));
  double overlap = 0.0;
  const int repeats = 200;
  for (int r = 0; r < repeats; ++r)
    for (const WeightedPair& e : corrupt_view(g, g.edges.size(), derive_seed(5, {static_cast<std::uint64_t>(r)})).edges)
      overlap += truth.contains(pair_key(e.u, e.v)) ? 1.0 : 0.0;
  const double per_view = overlap / repeats;
  const double expected = static_cast<double>(g.edges.size()) * 1000.0 / (100.0 * 100.0);
  EXPECT_NEAR(per_view, expected, 0.1 * expected);
}

TEST(AugmentView, PureAndReplayable) {
  const BipartiteGraph g = oracle::small_graph();
  const BipartiteGraph copy = g;
  const auto pairs = g.weighted_pairs(true);
  const GraphView a = augment_view(g.x_u, g.x_v, pairs, AugmentConfig{}, 123, ViewKind::Augmented1);
  const GraphView b = augment_view(g.x_u, g.x_v, pairs, AugmentConfig{}, 123, ViewKind::Augmented1);
  EXPECT_EQ(a.x_u, b.x_u);
  EXPECT_EQ(a.edges.size(), b.edges.size());
  EXPECT_EQ(g.x_u, copy.x_u);
  EXPECT_EQ(g.edges.size(), copy.edges.size());
  const GraphView c = augment_view(g.x_u, g.x_v, pairs, AugmentConfig{}, 124, ViewKind::Augmented2);
  EXPECT_NE(a.x_u, c.x_u);
}
