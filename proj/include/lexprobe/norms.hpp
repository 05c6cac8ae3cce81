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

#pragma once

// Psycholinguistic word lists: loading, token matching with the
// one-token-per-word rule, and integral-part binning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexprobe/corpus_io.hpp"
#include "lexprobe/error.hpp"
#include "lexprobe/text.hpp"
#include "lexprobe/utf8.hpp"

namespace lexprobe {

struct NormEntry {
  std::string word;
  double value = 0.0;
};

struct NormList {
  std::string attribute;
  std::vector<NormEntry> entries;
  std::size_t declared_length = 0;
};

struct NormColumns {
  std::string word = "Word";
  std::string value = "Value";
  char delimiter = ',';
};

inline NormList read_norm_list(std::istream& in, const std::string& attribute, const NormColumns& cols) {
  text::CsvReader reader(in, cols.delimiter);
  std::vector<std::string> row;
  NormList list;
  list.attribute = attribute;
  if (!reader.next(row)) return list;
  const auto word_idx = text::column_index(row, cols.word);
  const auto value_idx = text::column_index(row, cols.value);
  if (!word_idx) throw ParseError("missing word column \"" + cols.word + "\"", reader.line());
  if (!value_idx) throw ParseError("missing value column \"" + cols.value + "\"", reader.line());
  std::unordered_map<std::string, std::size_t> seen;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;  // blank line
    const std::size_t need = std::max(*word_idx, *value_idx) + 1;
    if (row.size() < need) throw ParseError("row has too few columns", reader.line());
    const auto value = text::parse_double(row[*value_idx]);
    if (!value) throw ParseError("non-numeric value \"" + row[*value_idx] + "\"", reader.line());
    if (!std::isfinite(*value)) throw ParseError("non-finite value \"" + row[*value_idx] + "\"", reader.line());
    auto [it, inserted] = seen.emplace(row[*word_idx], reader.line());
    if (!inserted) {
      throw ParseError("duplicate word \"" + row[*word_idx] + "\" (first seen on line " +
                           std::to_string(it->second) + ")",
                       reader.line());
    }
    list.entries.push_back({row[*word_idx], *value});
  }
  list.declared_length = list.entries.size();
  return list;
}

inline NormList load_norm_list(const std::string& path, const std::string& attribute, const NormColumns& cols = {}) {
  auto in = text::open_input(path, true);
  return read_norm_list(in, attribute, cols);
}

struct AssignedToken {
  std::uint32_t token_id = 0;
  double value = 0.0;
  std::string word;
  bool case_matched = false;

  bool operator==(const AssignedToken&) const = default;
};

struct AttributeAssignment {
  std::string attribute;
  std::vector<AssignedToken> assigned;  // ascending token_id, one entry per token
  std::size_t case_sensitive_count = 0;
  std::size_t case_insensitive_count = 0;
  std::vector<std::string> unmatched;   // no token with an equal or case-folded surface
  std::vector<std::string> displaced;   // matched only a token already claimed by another word
  std::size_t word_list_length = 0;

  std::size_t size() const { return assigned.size(); }
};

/// Assigns each norm word to a single token: the lowest-id token whose
/// surface equals the word, else the lowest-id token equal under simple case
/// folding. A token claimed by several words keeps the exact match if any,
/// otherwise the byte-wise smallest word; the other words are `displaced`.
/// The outcome depends only on token ids and word spellings, not row order.
inline AttributeAssignment match_tokens(const Vocabulary& vocab, const NormList& norms) {
  if (vocab.tokens.empty()) throw std::invalid_argument("vocabulary is empty");
  std::unordered_map<std::string, std::uint32_t> exact;
  std::unordered_map<std::string, std::uint32_t> folded;
  for (const auto& t : vocab.tokens) {
    exact.emplace(t.surface, t.token_id);  // emplace keeps the first (lowest) id
    folded.emplace(utf8::fold_case(t.surface), t.token_id);
  }

  struct Claim {
    const NormEntry* entry;
    bool case_matched;
  };
  std::map<std::uint32_t, std::vector<Claim>> claims;
  AttributeAssignment out;
  out.attribute = norms.attribute;
  out.word_list_length = norms.entries.size();
  for (const auto& e : norms.entries) {
    if (auto it = exact.find(e.word); it != exact.end()) {
      claims[it->second].push_back({&e, true});
    } else if (auto f = folded.find(utf8::fold_case(e.word)); f != folded.end()) {
      claims[f->second].push_back({&e, false});
    } else {
      out.unmatched.push_back(e.word);
    }
  }

  for (auto& [token_id, list] : claims) {
    const auto winner = std::min_element(list.begin(), list.end(), [](const Claim& a, const Claim& b) {
      if (a.case_matched != b.case_matched) return a.case_matched;
      return a.entry->word < b.entry->word;
    });
    out.assigned.push_back({token_id, winner->entry->value, winner->entry->word, winner->case_matched});
    (winner->case_matched ? out.case_sensitive_count : out.case_insensitive_count) += 1;
    for (auto c = list.begin(); c != list.end(); ++c) {
      if (c != winner) out.displaced.push_back(c->entry->word);
    }
  }
  std::sort(out.unmatched.begin(), out.unmatched.end());
  std::sort(out.displaced.begin(), out.displaced.end());
  return out;
}

struct BinnedAttribute {
  std::string attribute;
  std::vector<std::int64_t> bin_labels;          // integral parts present, ascending
  std::vector<std::uint64_t> counts;             // per bin
  std::vector<double> p_cat;                     // counts / total
  std::map<std::uint32_t, std::size_t> bin_of;   // token id -> bin index

  std::size_t bins() const { return bin_labels.size(); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

inline std::int64_t integral_part(double v) { return static_cast<std::int64_t>(std::floor(v)); }

/// Groups assigned values by floor(value); bins that receive nothing are absent.
inline BinnedAttribute bin_values(const AttributeAssignment& assignment) {
  if (assignment.assigned.empty()) {
    throw std::invalid_argument("attribute \"" + assignment.attribute + "\" has no assigned tokens");
  }
  std::set<std::int64_t> labels;
  for (const auto& a : assignment.assigned) labels.insert(integral_part(a.value));
  BinnedAttribute out;
  out.attribute = assignment.attribute;
  out.bin_labels.assign(labels.begin(), labels.end());
  out.counts.assign(out.bin_labels.size(), 0);
  for (const auto& a : assignment.assigned) {
    const auto it = std::lower_bound(out.bin_labels.begin(), out.bin_labels.end(), integral_part(a.value));
    const auto idx = static_cast<std::size_t>(it - out.bin_labels.begin());
    out.bin_of[a.token_id] = idx;
    ++out.counts[idx];
  }
  const double total = static_cast<double>(out.total());
  for (auto c : out.counts) out.p_cat.push_back(static_cast<double>(c) / total);
  return out;
}

/// Reads an assignment back from the per-attribute file written by
/// `write_assignment` (columns token_id, word, value, case_matched, ...).
inline AttributeAssignment read_assignment(std::istream& in, const std::string& attribute) {
  text::CsvReader reader(in);
  std::vector<std::string> row;
  AttributeAssignment out;
  out.attribute = attribute;
  if (!reader.next(row)) throw ParseError("empty assignment file", 0);
  const auto id_col = text::column_index(row, "token_id");
  const auto word_col = text::column_index(row, "word");
  const auto value_col = text::column_index(row, "value");
  const auto match_col = text::column_index(row, "match");
  if (!id_col || !word_col || !value_col || !match_col) {
    throw ParseError("assignment header must contain token_id, word, value, match", reader.line());
  }
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    const std::size_t need = std::max({*id_col, *word_col, *value_col, *match_col}) + 1;
    if (row.size() < need) throw ParseError("row has too few columns", reader.line());
    const auto id = text::parse_int<std::uint32_t>(row[*id_col]);
    const auto value = text::parse_double(row[*value_col]);
    if (!id || !value) throw ParseError("bad token_id or value", reader.line());
    const bool exact = row[*match_col] == "case_sensitive";
    if (!exact && row[*match_col] != "case_insensitive") throw ParseError("bad match kind", reader.line());
    if (!out.assigned.empty() && out.assigned.back().token_id >= *id) {
      throw ParseError("token ids must be strictly ascending", reader.line());
    }
    out.assigned.push_back({*id, *value, row[*word_col], exact});
    (exact ? out.case_sensitive_count : out.case_insensitive_count) += 1;
  }
  return out;
}

inline void write_assignment(std::ostream& out, const AttributeAssignment& a, const Vocabulary& vocab) {
  text::write_row(out, {"token_id", "token", "word", "value", "bin", "match"});
  for (const auto& t : a.assigned) {
    text::write_row(out, {std::to_string(t.token_id), display_token(vocab[t.token_id]), t.word,
                          text::format_double(t.value), std::to_string(integral_part(t.value)),
                          t.case_matched ? "case_sensitive" : "case_insensitive"});
  }
}

}  // namespace lexprobe
