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

#include "lexprobe/norms.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "lexprobe/rng.hpp"

namespace lexprobe {
namespace {

const std::string kMarker = utf8::encode(kGpt2SpaceMarker);

Vocabulary vocab_of(const std::vector<std::string>& raws) {
  Vocabulary v;
  for (std::uint32_t i = 0; i < raws.size(); ++i) v.tokens.push_back(make_token(i, raws[i], v.marker));
  return v;
}

NormList norms_of(std::vector<NormEntry> entries, std::string attribute = "valence") {
  NormList l;
  l.attribute = std::move(attribute);
  l.entries = std::move(entries);
  l.declared_length = l.entries.size();
  return l;
}

TEST(LoadNormList, TwoRows) {
  std::istringstream in("Word,V.Mean.Sum\ndog,5.0\ncat,2.0\n");
  const auto list = read_norm_list(in, "valence", {"Word", "V.Mean.Sum", ','});
  ASSERT_EQ(list.entries.size(), 2u);
  EXPECT_EQ(list.declared_length, 2u);
  EXPECT_EQ(list.entries[0].word, "dog");
  EXPECT_EQ(list.entries[1].value, 2.0);
}

TEST(LoadNormList, ExtraColumnsQuotesAndTabs) {
  std::istringstream in("id\tWord\tConc.M\n1\t\"ice cream\"\t4.5\n2\tdog\t4.9\n");
  const auto list = read_norm_list(in, "concreteness", {"Word", "Conc.M", '\t'});
  ASSERT_EQ(list.entries.size(), 2u);
  EXPECT_EQ(list.entries[0].word, "ice cream");
}

TEST(LoadNormList, DuplicateWordIsError) {
  std::istringstream in("Word,Value\ndog,1\ncat,2\ndog,3\n");
  try {
    read_norm_list(in, "x", {});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(LoadNormList, MissingColumnIsError) {
  std::istringstream in("Word,Other\ndog,1\n");
  EXPECT_THROW(read_norm_list(in, "x", {}), ParseError);
}

TEST(LoadNormList, NonNumericValueIsError) {
  std::istringstream in("Word,Value\ndog,high\n");
  try {
    read_norm_list(in, "x", {});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadNormList, EmptyFileGivesEmptyList) {
  std::istringstream in("");
  EXPECT_TRUE(read_norm_list(in, "x", {}).entries.empty());
}

TEST(MatchTokens, LowestIdAmongCaseMatchedSurfaces) {
  const auto vocab = vocab_of({"Dog", kMarker + "dog", "dog"});
  const auto a = match_tokens(vocab, norms_of({{"dog", 3.0}}));
  ASSERT_EQ(a.assigned.size(), 1u);
  EXPECT_EQ(a.assigned[0].token_id, 1u);
  EXPECT_EQ(a.case_sensitive_count, 1u);
  EXPECT_EQ(a.case_insensitive_count, 0u);
}

TEST(MatchTokens, FallsBackToCaseInsensitivePool) {
  const auto a = match_tokens(vocab_of({"DOG"}), norms_of({{"dog", 3.0}}));
  ASSERT_EQ(a.assigned.size(), 1u);
  EXPECT_EQ(a.assigned[0].token_id, 0u);
  EXPECT_FALSE(a.assigned[0].case_matched);
  EXPECT_EQ(a.case_insensitive_count, 1u);
}

TEST(MatchTokens, CaseInsensitivePoolPicksLowestId) {
  const auto a = match_tokens(vocab_of({"x", kMarker + "Dog", "DOG"}), norms_of({{"dog", 3.0}}));
  ASSERT_EQ(a.assigned.size(), 1u);
  EXPECT_EQ(a.assigned[0].token_id, 1u);
}

TEST(MatchTokens, UnicodeSimpleCaseFolding) {
  const auto a = match_tokens(vocab_of({"ÉCOLE", "ΣΟΦΙΑ"}), norms_of({{"école", 2.0}, {"σοφια", 4.0}}));
  ASSERT_EQ(a.assigned.size(), 2u);
  EXPECT_EQ(a.case_insensitive_count, 2u);
}

TEST(MatchTokens, UnmatchedWordsAreReported) {
  const auto a = match_tokens(vocab_of({"dog"}), norms_of({{"ice cream", 1.0}, {"dog", 2.0}}));
  EXPECT_EQ(a.assigned.size(), 1u);
  EXPECT_EQ(a.unmatched, std::vector<std::string>{"ice cream"});
}

TEST(MatchTokens, TokenReceivesAtMostOneValue) {
  // "US" and "us" both fold onto the only token; no exact match exists for
  // either, so the byte-wise smaller word ("US") keeps the token.
  const auto a = match_tokens(vocab_of({"Us"}), norms_of({{"us", 1.0}, {"US", 2.0}}));
  ASSERT_EQ(a.assigned.size(), 1u);
  EXPECT_EQ(a.assigned[0].word, "US");
  EXPECT_EQ(a.displaced, std::vector<std::string>{"us"});
}

TEST(MatchTokens, ExactClaimBeatsFoldedClaim) {
  // "Dog" matches token 0 exactly; "DOG" can only fold onto token 0.
  const auto a = match_tokens(vocab_of({"Dog"}), norms_of({{"DOG", 1.0}, {"Dog", 2.0}}));
  ASSERT_EQ(a.assigned.size(), 1u);
  EXPECT_EQ(a.assigned[0].value, 2.0);
  EXPECT_TRUE(a.assigned[0].case_matched);
}

TEST(MatchTokens, IndependentOfNormRowOrderAndIdempotent) {
  Rng rng(8);
  const std::vector<std::string> stems = {"dog", "cat", "us", "bird", "sun", "moon", "tree", "rock"};
  std::vector<std::string> raws;
  for (int i = 0; i < 60; ++i) {
    std::string s = stems[rng.below(stems.size())];
    if (rng.below(2)) s[0] = static_cast<char>(std::toupper(s[0]));
    if (rng.below(4) == 0) std::transform(s.begin(), s.end(), s.begin(), ::toupper);
    if (rng.below(2)) s = kMarker + s;
    raws.push_back(s);
  }
  const auto vocab = vocab_of(raws);
  std::vector<NormEntry> entries;
  for (const auto& s : stems) {
    entries.push_back({s, static_cast<double>(rng.below(9))});
    std::string upper = s;
    std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
    entries.push_back({upper, static_cast<double>(rng.below(9))});
  }
  const auto base = match_tokens(vocab, norms_of(entries));
  EXPECT_EQ(base.case_sensitive_count + base.case_insensitive_count, base.assigned.size());
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = entries.size() - 1; i > 0; --i) std::swap(entries[i], entries[rng.below(i + 1)]);
    const auto again = match_tokens(vocab, norms_of(entries));
    EXPECT_EQ(again.assigned, base.assigned);
    EXPECT_EQ(again.unmatched, base.unmatched);
    EXPECT_EQ(again.displaced, base.displaced);
  }
  std::set<std::uint32_t> ids;
  for (const auto& t : base.assigned) EXPECT_TRUE(ids.insert(t.token_id).second);
}

AttributeAssignment assignment_of(const std::vector<double>& values) {
  AttributeAssignment a;
  a.attribute = "x";
  for (std::uint32_t i = 0; i < values.size(); ++i) a.assigned.push_back({i, values[i], "w", true});
  a.case_sensitive_count = values.size();
  return a;
}

TEST(BinValues, FloorDefinesBins) {
  const auto b = bin_values(assignment_of({1.1, 1.9, 2.0}));
  EXPECT_EQ(b.bin_labels, (std::vector<std::int64_t>{1, 2}));
  EXPECT_EQ(b.counts, (std::vector<std::uint64_t>{2, 1}));
  EXPECT_EQ(b.bin_of.at(2), 1u);
}

TEST(BinValues, EmptyBinsAreDropped) {
  const auto b = bin_values(assignment_of({1.5, 3.5, 5.0}));
  EXPECT_EQ(b.bin_labels, (std::vector<std::int64_t>{1, 3, 5}));
}

TEST(BinValues, MaximumOnIntegerGoesToItsOwnBin) {
  const auto b = bin_values(assignment_of({1.04, 4.99, 5.0}));
  EXPECT_EQ(b.bin_labels.back(), 5);
  EXPECT_EQ(b.counts.back(), 1u);
}

TEST(BinValues, ProbabilitiesAreCountsOverTotal) {
  Rng rng(3);
  std::vector<double> values;
  for (int i = 0; i < 997; ++i) values.push_back(1.0 + 8.0 * rng.uniform());
  const auto b = bin_values(assignment_of(values));
  EXPECT_EQ(std::accumulate(b.counts.begin(), b.counts.end(), std::uint64_t{0}), 997u);
  double sum = 0.0;
  for (std::size_t i = 0; i < b.bins(); ++i) {
    EXPECT_EQ(b.p_cat[i], static_cast<double>(b.counts[i]) / 997.0);
    sum += b.p_cat[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(BinValues, ValenceCountsReproduceReferenceMarginals) {
  const std::vector<std::uint64_t> c = {53, 576, 984, 1740, 3021, 1760, 587, 30};
  std::vector<double> values;
  for (std::size_t b = 0; b < c.size(); ++b) {
    for (std::uint64_t i = 0; i < c[b]; ++i) values.push_back(static_cast<double>(b + 1) + 0.5);
  }
  const auto binned = bin_values(assignment_of(values));
  EXPECT_EQ(binned.counts, c);
  EXPECT_EQ(binned.total(), 8751u);
  const std::vector<double> reference = {0.00606, 0.0658, 0.112, 0.199, 0.345, 0.201, 0.0671, 0.00343};
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(binned.p_cat[i], reference[i], 0.005 * reference[i]) << i;
}

TEST(BinValues, EmptyAssignmentThrows) { EXPECT_THROW(bin_values(AttributeAssignment{}), std::invalid_argument); }

TEST(AssignmentFile, RoundTrip) {
  const auto vocab = vocab_of({"a", kMarker + "dog", "DOG", "cat"});
  const auto a = match_tokens(vocab, norms_of({{"dog", 3.25}, {"Cat", 1.0 / 3.0}}));
  std::stringstream io;
  write_assignment(io, a, vocab);
  const auto back = read_assignment(io, "valence");
  EXPECT_EQ(back.assigned, a.assigned);
  EXPECT_EQ(back.case_sensitive_count, a.case_sensitive_count);
  EXPECT_EQ(back.case_insensitive_count, a.case_insensitive_count);
}

}  // namespace
}  // namespace lexprobe
