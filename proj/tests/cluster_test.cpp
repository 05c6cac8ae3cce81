// Copyright 2026 The Lexprobe Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lexprobe/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "lexprobe/rng.hpp"
#include "test_util.hpp"

namespace lexprobe {
namespace {

EmbeddingMatrix random_matrix(std::uint32_t rows, std::uint32_t dims, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m(rows, dims);
  for (float& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

Vocabulary numbered_vocab(std::uint32_t n) {
  Vocabulary v;
  for (std::uint32_t i = 0; i < n; ++i) v.tokens.push_back(make_token(i, "t" + std::to_string(i), v.marker));
  return v;
}

KMeansOptions options(std::uint32_t k, std::uint64_t seed = 1) {
  KMeansOptions o;
  o.k = k;
  o.seed = seed;
  return o;
}

std::set<std::set<std::uint32_t>> partition(const ClusterModel& m, std::span<const std::uint32_t> ids = {}) {
  std::map<std::uint32_t, std::set<std::uint32_t>> groups;
  for (std::uint32_t i = 0; i < m.assignments.size(); ++i) groups[m.assignments[i]].insert(ids.empty() ? i : ids[i]);
  std::set<std::set<std::uint32_t>> out;
  for (auto& [_, g] : groups) out.insert(g);
  return out;
}

TEST(KMeans, SingleClusterIsTheMean) {
  const auto m = random_matrix(57, 5, 3);
  const auto model = kmeans_fit(m, options(1));
  ASSERT_EQ(model.k, 1u);
  EXPECT_TRUE(std::all_of(model.assignments.begin(), model.assignments.end(), [](auto a) { return a == 0; }));
  for (std::uint32_t d = 0; d < m.dims; ++d) {
    double mean = 0.0;
    for (std::uint32_t i = 0; i < m.rows; ++i) mean += m.row(i)[d];
    mean /= m.rows;
    EXPECT_NEAR(model.centroid(0)[d], mean, 1e-12);
  }
  EXPECT_EQ(model.sizes, std::vector<std::uint32_t>{57});
}

TEST(KMeans, KEqualsNGivesSingletons) {
  const auto m = random_matrix(12, 3, 4);
  const auto model = kmeans_fit(m, options(12));
  EXPECT_EQ(model.wcss, 0.0);
  EXPECT_TRUE(std::all_of(model.sizes.begin(), model.sizes.end(), [](auto s) { return s == 1; }));
}

TEST(KMeans, RecoversTwoSeparatedBlobs) {
  Rng rng(17);
  EmbeddingMatrix m(200, 2);
  const double centres[2][2] = {{-10, -10}, {10, 10}};
  for (std::uint32_t i = 0; i < 200; ++i) {
    const auto& c = centres[i < 100 ? 0 : 1];
    m.row(i)[0] = static_cast<float>(c[0] + rng.normal());
    m.row(i)[1] = static_cast<float>(c[1] + rng.normal());
  }
  // Oracle: label every point by its nearer planted centre.
  std::vector<int> truth(200);
  for (std::uint32_t i = 0; i < 200; ++i) {
    double d[2];
    for (int c = 0; c < 2; ++c) {
      d[c] = std::pow(m.row(i)[0] - centres[c][0], 2) + std::pow(m.row(i)[1] - centres[c][1], 2);
    }
    truth[i] = d[0] <= d[1] ? 0 : 1;
  }
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto model = kmeans_fit(m, options(2, seed));
    const bool same = model.assignments[0] == static_cast<std::uint32_t>(truth[0]);
    for (std::uint32_t i = 0; i < 200; ++i) {
      const auto expected = static_cast<std::uint32_t>(same ? truth[i] : 1 - truth[i]);
      ASSERT_EQ(model.assignments[i], expected) << "point " << i << " seed " << seed;
    }
  }
}

TEST(KMeans, WcssNeverIncreasesAndEndsNearestConsistent) {
  const auto m = random_matrix(600, 8, 21);
  std::vector<double> trace;
  const auto model = kmeans_fit(m, options(15, 9), [&](const IterationTrace& t) { trace.push_back(t.wcss); });
  ASSERT_GE(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] * (1 + 1e-12)) << "iteration " << i;
  EXPECT_DOUBLE_EQ(trace.back(), model.wcss);
  for (std::uint32_t i = 0; i < m.rows; ++i) {
    const double own = detail::squared_distance(m.row(i), model.centroid(model.assignments[i]));
    for (std::uint32_t j = 0; j < model.k; ++j) {
      const double other = detail::squared_distance(m.row(i), model.centroid(j));
      ASSERT_TRUE(own < other || (own == other && model.assignments[i] <= j));
    }
  }
}

TEST(KMeans, SizesSumToRowsAndWcssMatchesRecomputation) {
  const auto m = random_matrix(300, 4, 8);
  const auto model = kmeans_fit(m, options(7));
  EXPECT_EQ(std::accumulate(model.sizes.begin(), model.sizes.end(), 0u), 300u);
  EXPECT_NEAR(model.wcss, recompute_wcss(m, model), 1e-4 * model.wcss);
}

TEST(KMeans, DeterministicAcrossRunsAndThreadCounts) {
  const auto m = random_matrix(3000, 6, 31);
  auto o = options(9, 77);
  o.threads = 1;
  const auto a = kmeans_fit(m, o);
  const auto b = kmeans_fit(m, o);
  o.threads = 4;
  const auto c = kmeans_fit(m, o);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(KMeans, SeedChangesInitialisation) {
  const auto m = random_matrix(400, 3, 2);
  EXPECT_NE(kmeans_fit(m, options(10, 1)).centroids, kmeans_fit(m, options(10, 2)).centroids);
}

TEST(KMeans, RowPermutationWithIdsGivesSamePartition) {
  const auto m = random_matrix(500, 4, 12);
  const auto base = kmeans_fit(m, options(8, 5));

  Rng rng(3);
  std::vector<std::uint32_t> perm(m.rows);
  std::iota(perm.begin(), perm.end(), 0u);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  EmbeddingMatrix shuffled(m.rows, m.dims);
  for (std::uint32_t p = 0; p < m.rows; ++p) std::copy_n(m.row(perm[p]).begin(), m.dims, shuffled.row(p).begin());

  const auto model = kmeans_fit(shuffled, options(8, 5), {}, perm);
  EXPECT_EQ(partition(model, perm), partition(base));
  EXPECT_EQ(model.centroids, base.centroids);
  EXPECT_EQ(model.wcss, base.wcss);
}

TEST(KMeans, DuplicatePointsStillYieldKClusters) {
  EmbeddingMatrix m(6, 1);
  for (std::uint32_t i = 0; i < 6; ++i) m.row(i)[0] = i < 4 ? 0.0f : 1.0f;
  const auto model = kmeans_fit(m, options(3));
  EXPECT_EQ(model.k, 3u);
  EXPECT_EQ(std::accumulate(model.sizes.begin(), model.sizes.end(), 0u), 6u);
  EXPECT_EQ(model.wcss, 0.0);
}

TEST(KMeans, RejectsBadArguments) {
  const auto m = random_matrix(5, 2, 1);
  EXPECT_THROW(kmeans_fit(m, options(6)), std::invalid_argument);
  EXPECT_THROW(kmeans_fit(m, options(0)), std::invalid_argument);
  auto o = options(2);
  o.max_iter = 0;
  EXPECT_THROW(kmeans_fit(m, o), std::invalid_argument);
  auto bad = m;
  bad.data[3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(kmeans_fit(bad, options(2)), FormatError);
}

TEST(KMeans, NormalizeOptionClustersDirections) {
  EmbeddingMatrix m(4, 2);
  const float pts[4][2] = {{1, 0}, {100, 0}, {0, 1}, {0, 50}};
  for (int i = 0; i < 4; ++i) std::copy_n(pts[i], 2, m.row(i).begin());
  auto o = options(2);
  o.normalize = true;
  const auto model = kmeans_fit(m, o);
  EXPECT_EQ(model.assignments[0], model.assignments[1]);
  EXPECT_EQ(model.assignments[2], model.assignments[3]);
  EXPECT_NE(model.assignments[0], model.assignments[2]);
}

TEST(RecomputeWcss, ZeroWhenPointsSitOnCentroids) {
  EmbeddingMatrix m(3, 2);
  m.row(1)[0] = 2.0f;
  ClusterModel model{2, 2, {0, 0, 2, 0}, {0, 1, 0}, {2, 1}, 0.0, 0, 0};
  EXPECT_EQ(recompute_wcss(m, model), 0.0);
}

TEST(RecomputeWcss, SingleDisplacedPoint) {
  EmbeddingMatrix m(2, 2);
  m.row(1)[0] = 3.0f;
  m.row(1)[1] = 4.0f;
  ClusterModel model{1, 2, {0, 0}, {0, 0}, {2}, 0.0, 0, 0};
  EXPECT_DOUBLE_EQ(recompute_wcss(m, model), 25.0);
}

TEST(RecomputeWcss, MatchesBruteForceOnRandomAssignment) {
  const auto m = random_matrix(20, 3, 44);
  Rng rng(45);
  ClusterModel model;
  model.k = 4;
  model.dims = 3;
  model.centroids.resize(12);
  for (double& c : model.centroids) c = rng.normal();
  for (int i = 0; i < 20; ++i) model.assignments.push_back(static_cast<std::uint32_t>(rng.below(4)));
  double brute = 0.0;
  for (std::uint32_t i = 0; i < 20; ++i) {
    for (std::uint32_t d = 0; d < 3; ++d) {
      const double diff = static_cast<double>(m.data[i * 3 + d]) - model.centroids[model.assignments[i] * 3 + d];
      brute += diff * diff;
    }
  }
  EXPECT_NEAR(recompute_wcss(m, model), brute, 1e-12 * brute);
}

TEST(RecomputeWcss, AssignmentOutOfRangeThrows) {
  EmbeddingMatrix m(1, 1);
  ClusterModel model{1, 1, {0}, {3}, {1}, 0.0, 0, 0};
  EXPECT_THROW(recompute_wcss(m, model), std::out_of_range);
}

TEST(TopTerms, SingletonClusterListsItsOnlyMember) {
  const auto m = random_matrix(5, 2, 6);
  const auto vocab = numbered_vocab(5);
  const auto model = kmeans_fit(m, options(5));
  for (std::uint32_t j = 0; j < 5; ++j) {
    const auto terms = top_terms(model, m, vocab, j, 5);
    ASSERT_EQ(terms.size(), 1u);
    EXPECT_EQ(model.assignments[terms[0].token_id], j);
  }
}

TEST(TopTerms, MemberAtCentroidComesFirst) {
  // Symmetric around the origin, so the mean is exactly the origin (row 3).
  EmbeddingMatrix m(5, 2);
  const float pts[5][2] = {{-2, 0}, {2, 0}, {0, 1}, {0, 0}, {0, -1}};
  for (int i = 0; i < 5; ++i) std::copy_n(pts[i], 2, m.row(i).begin());
  const auto model = kmeans_fit(m, options(1));
  const auto terms = top_terms(model, m, numbered_vocab(5), 0, 3);
  ASSERT_EQ(terms.size(), 3u);
  EXPECT_EQ(terms[0].token_id, 3u);
  EXPECT_EQ(terms[1].token_id, 2u);  // distance 1, tie with 4 broken by id
  EXPECT_EQ(terms[2].token_id, 4u);
}

TEST(TopTerms, EmptyClusterGivesEmptyList) {
  EmbeddingMatrix m(2, 1);
  ClusterModel model{2, 1, {0, 5}, {0, 0}, {2, 0}, 0.0, 0, 0};
  EXPECT_TRUE(top_terms(model, m, numbered_vocab(2), 1, 5).empty());
  EXPECT_THROW(top_terms(model, m, numbered_vocab(2), 2, 5), std::out_of_range);
}

TEST(ModelFile, RoundTripIsFieldIdentical) {
  testing::TempDir dir;
  const auto m = random_matrix(40, 3, 8);
  const auto model = kmeans_fit(m, options(2, 123));
  save_model(dir / "m.lkm", model);
  const auto back = load_model(dir / "m.lkm");
  EXPECT_EQ(back, model);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(back.wcss), std::bit_cast<std::uint64_t>(model.wcss));
}

TEST(ModelFile, TruncatedFileIsError) {
  std::ostringstream out;
  write_model(out, kmeans_fit(random_matrix(10, 2, 1), options(2)));
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, out.str().size() - 1}) {
    std::istringstream in(out.str().substr(0, cut));
    EXPECT_THROW(read_model(in), FormatError) << "cut at " << cut;
  }
}

TEST(ModelFile, WrongMagicIsError) {
  std::ostringstream out;
  write_model(out, kmeans_fit(random_matrix(10, 2, 1), options(2)));
  auto bytes = out.str();
  bytes[7] = '2';
  std::istringstream in(bytes);
  EXPECT_THROW(read_model(in), FormatError);
}

}  // namespace
}  // namespace lexprobe
