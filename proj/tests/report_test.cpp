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

#include "lexprobe/report.hpp"

#include <sstream>

#include <gtest/gtest.h>

#include "lexprobe/text.hpp"
#include "test_util.hpp"

namespace lexprobe {
namespace {

SensitivityResult result(std::uint32_t cluster, std::string attr, bool sensitive, std::uint64_t m = 50) {
  SensitivityResult r;
  r.cluster_id = cluster;
  r.attribute = std::move(attr);
  r.m = m;
  r.observed_log_p = sensitive ? -80.0 : -10.0;
  r.null_min = -40.0;
  r.null_median = -12.0;
  r.null_low_quantile = -35.0;
  r.empirical_p = sensitive ? 0.0 : 0.4;
  r.sensitive = sensitive;
  r.low_annotation_flag = m < 10;
  return r;
}

const std::vector<std::string> kAttrs = {"valence", "concreteness", "aoa", "iconicity", "taboo"};

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  text::CsvReader reader(in, ',');
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> fields;
  while (reader.next(fields)) rows.push_back(fields);
  return rows;
}

TEST(Summarize, NothingSensitive) {
  std::vector<SensitivityResult> rs;
  for (const auto& a : kAttrs) {
    for (std::uint32_t j = 0; j < 10; ++j) rs.push_back(result(j, a, false));
  }
  const auto s = summarize(rs, 10);
  ASSERT_EQ(s.attributes.size(), 5u);
  for (const auto& a : s.attributes) EXPECT_EQ(a.sensitive_count, 0u);
  EXPECT_EQ(s.histogram.counts_by_num_attributes.at(0), 10u);
  for (std::size_t n = 1; n <= 5; ++n) EXPECT_EQ(s.histogram.counts_by_num_attributes.at(n), 0u);
}

TEST(Summarize, ClusterSensitiveToFourAttributes) {
  std::vector<SensitivityResult> rs;
  for (std::size_t a = 0; a < kAttrs.size(); ++a) {
    for (std::uint32_t j = 0; j < 10; ++j) rs.push_back(result(j, kAttrs[a], j == 7 && a < 4));
  }
  const auto s = summarize(rs, 10);
  EXPECT_EQ(s.histogram.counts_by_num_attributes.at(4), 1u);
  EXPECT_EQ(s.histogram.counts_by_num_attributes.at(0), 9u);
  EXPECT_EQ(s.attributes[0].cluster_ids, std::vector<std::uint32_t>{7});
  EXPECT_EQ(s.attributes[4].sensitive_count, 0u);
}

TEST(Summarize, MissingPairIsAnError) {
  std::vector<SensitivityResult> rs;
  for (std::uint32_t j = 0; j < 5; ++j) rs.push_back(result(j, "valence", false));
  for (std::uint32_t j = 0; j < 5; ++j) {
    if (j != 3) rs.push_back(result(j, "taboo", false));
  }
  try {
    summarize(rs, 5);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cluster 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("taboo"), std::string::npos);
  }
}

TEST(Summarize, DuplicateAndOutOfRangeAreErrors) {
  std::vector<SensitivityResult> rs = {result(0, "v", false), result(0, "v", true)};
  EXPECT_THROW(summarize(rs, 1), FormatError);
  rs = {result(2, "v", false)};
  EXPECT_THROW(summarize(rs, 2), FormatError);
}

TEST(Summarize, LowAnnotationIsDiscounted) {
  std::vector<SensitivityResult> rs = {result(0, "v", true, 3), result(1, "v", true, 50), result(2, "v", false)};
  const auto s = summarize(rs, 3);
  EXPECT_EQ(s.attributes[0].sensitive_count, 1u);
  EXPECT_EQ(s.attributes[0].discounted_count, 1u);
  EXPECT_EQ(s.histogram.counts_by_num_attributes.at(1), 1u);
  EXPECT_EQ(s.histogram.counts_by_num_attributes.at(0), 2u);
}

TEST(Summarize, HistogramAccountsForEveryCluster) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = static_cast<std::uint32_t>(1 + rng.below(30));
    std::vector<SensitivityResult> rs;
    for (const auto& a : kAttrs) {
      for (std::uint32_t j = 0; j < k; ++j) rs.push_back(result(j, a, rng.below(4) == 0, rng.below(40)));
    }
    const auto s = summarize(rs, k);
    std::size_t clusters = 0, weighted = 0, counted = 0;
    for (auto [n, c] : s.histogram.counts_by_num_attributes) {
      clusters += c;
      weighted += n * c;
    }
    for (const auto& a : s.attributes) counted += a.sensitive_count;
    EXPECT_EQ(clusters, k);
    EXPECT_EQ(weighted, counted);
  }
}

TEST(Results, RoundTripIsExact) {
  Rng rng(8);
  std::vector<SensitivityResult> rs;
  for (std::uint32_t j = 0; j < 40; ++j) {
    SensitivityResult r = result(j, j % 2 ? "a,b" : "plain", rng.below(2) == 0, rng.below(100));
    r.observed_log_p = -1000 * rng.uniform();
    r.null_min = -std::ldexp(rng.uniform(), 7);
    r.null_median = -rng.uniform() / 3;
    r.empirical_p = rng.uniform();
    if (j == 5) {
      r.observed_log_p = -std::numeric_limits<double>::infinity();
      r.outcome = TestOutcome::impossible_count;
    }
    if (j == 6) r.outcome = TestOutcome::no_annotations;
    rs.push_back(r);
  }
  std::stringstream ss;
  write_results(ss, rs);
  EXPECT_EQ(read_results(ss), rs);
}

TEST(Results, HeaderNamesRequiredColumns) {
  std::stringstream ss;
  write_results(ss, std::vector<SensitivityResult>{});
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line.rfind("cluster_id,attribute,m,observed_log_p,null_min,null_median,sensitive,low_annotation_flag", 0),
            0u);
}

TEST(Results, BadRowsAreRejected) {
  std::stringstream ss("cluster_id,attribute\n0,v\n");
  EXPECT_THROW(read_results(ss), ParseError);
}

TEST(CumulativePlot, ObservedBelowMinimum) {
  testing::TempDir dir;
  NullDistribution null{10, 1, {-20, -15, -12, -11, -10}};
  const auto path = dir / "cdf.svg";
  emit_cumulative_plot(null, -50.0, path);
  const auto svg = testing::read_file(path);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_EQ(svg.find("href"), std::string::npos);  // no external assets
  const auto rows = read_csv(companion_path(path));
  ASSERT_EQ(rows.size(), 1u + 5u + 1u);
  EXPECT_EQ(rows.back(), (std::vector<std::string>{"observed", "-50", "0"}));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(*text::parse_double(rows[i + 1][1]), null.log_p_samples[i]);
    EXPECT_DOUBLE_EQ(*text::parse_double(rows[i + 1][2]), (i + 1) / 5.0);
  }
  const double x_obs = *text::parse_double(rows.back()[1]);
  EXPECT_LT(x_obs, *text::parse_double(rows[1][1]));
}

TEST(CumulativePlot, ObservedAtMedian) {
  testing::TempDir dir;
  NullDistribution null{10, 1, {-20, -15, -12, -11, -10}};
  const auto path = dir / "cdf.svg";
  emit_cumulative_plot(null, null.median(), path);
  const auto rows = read_csv(companion_path(path));
  EXPECT_EQ(*text::parse_double(rows.back()[1]), -12.0);
  EXPECT_DOUBLE_EQ(*text::parse_double(rows.back()[2]), 0.6);
}

TEST(CumulativePlot, LargeSampleIsDecimatedInSvgOnly) {
  testing::TempDir dir;
  NullDistribution null{10, 1, {}};
  for (int i = 0; i < 50000; ++i) null.log_p_samples.push_back(-50000.0 + i);
  const auto path = dir / "cdf.svg";
  emit_cumulative_plot(null, -1.0, path);
  EXPECT_EQ(read_csv(companion_path(path)).size(), 50002u);
  EXPECT_LT(testing::read_file(path).size(), 200000u);
}

TEST(ClusterScatter, OrdersBySize) {
  testing::TempDir dir;
  std::vector<SensitivityResult> rs = {result(0, "v", false), result(1, "v", true), result(2, "v", false)};
  const std::vector<std::uint32_t> sizes = {30, 10, 20};
  const auto path = dir / "scatter.svg";
  emit_cluster_scatter(rs, sizes, ClusterOrder::by_size, path);
  const auto rows = read_csv(companion_path(path));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1][1], "1");
  EXPECT_EQ(rows[2][1], "2");
  EXPECT_EQ(rows[3][1], "0");
  EXPECT_EQ(rows[1][6], "1");

  emit_cluster_scatter(rs, sizes, ClusterOrder::by_index, path);
  const auto by_index = read_csv(companion_path(path));
  EXPECT_EQ(by_index[1][1], "0");
  EXPECT_EQ(by_index[3][1], "2");
}

TEST(ClusterListing, SingletonClusterListsItsToken) {
  Vocabulary vocab;
  vocab.tokens = {make_token(0, "Ġcat", kGpt2SpaceMarker), make_token(1, "dog", kGpt2SpaceMarker)};
  EmbeddingMatrix m(2, 1);
  m.data = {0.0f, 5.0f};
  ClusterModel model;
  model.k = 2;
  model.dims = 1;
  model.centroids = {0.0, 5.0};
  model.assignments = {0, 1};
  model.sizes = {1, 1};
  std::stringstream ss;
  write_cluster_listing(ss, model, m, vocab, 3);
  EXPECT_EQ(ss.str(), "cluster_id,size,term_1,term_2,term_3\n0,1,?cat,,\n1,1,dog,,\n");
}

TEST(ClusterListing, MatchesTopTerms) {
  Rng rng(4);
  EmbeddingMatrix m(60, 3);
  for (float& x : m.data) x = static_cast<float>(rng.normal());
  Vocabulary vocab;
  for (std::uint32_t i = 0; i < 60; ++i) vocab.tokens.push_back(make_token(i, "t" + std::to_string(i), kGpt2SpaceMarker));
  KMeansOptions opt;
  opt.k = 4;
  opt.seed = 2;
  const auto model = kmeans_fit(m, opt);
  std::stringstream ss;
  write_cluster_listing(ss, model, m, vocab, 5);
  text::CsvReader reader(ss, ',');
  std::vector<std::string> row;
  ASSERT_TRUE(reader.next(row));
  for (std::uint32_t j = 0; j < 4; ++j) {
    ASSERT_TRUE(reader.next(row));
    EXPECT_EQ(row[1], std::to_string(model.sizes[j]));
    const auto top = top_terms(model, m, vocab, j, 5);
    for (std::size_t i = 0; i < top.size(); ++i) EXPECT_EQ(row[2 + i], display_token(top[i]));
  }
}

TEST(CompanionPath, ReplacesExtension) {
  EXPECT_EQ(companion_path("out/plot.svg"), "out/plot.csv");
}

}  // namespace
}  // namespace lexprobe
