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

// Planted synthetic corpora: Gaussian blobs in embedding space plus an
// attribute whose distribution is skewed inside chosen blobs only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "lexprobe/corpus_io.hpp"
#include "lexprobe/norms.hpp"
#include "lexprobe/rng.hpp"
#include "lexprobe/text.hpp"

namespace lexprobe {

/// Valence-like population weights over integral parts 1..8.
inline const std::vector<double>& default_marginal_weights() {
  static const std::vector<double> w = {53, 576, 984, 1740, 3021, 1760, 587, 30};
  return w;
}

/// Weights concentrated on the low bins.
inline const std::vector<double>& default_skewed_weights() {
  static const std::vector<double> w = {4, 117, 149, 52, 12, 6, 0, 0};
  return w;
}

struct PlantedSpec {
  std::uint32_t tokens = 2000;
  std::uint32_t dims = 16;
  std::uint32_t clusters = 20;
  std::vector<std::uint32_t> skewed_clusters = {3, 11, 17};
  double center_scale = 1000.0;  // sd of blob centres per coordinate
  double noise = 1.0;            // sd of points around their centre
  double annotated_fraction = 1.0;
  std::vector<double> marginal_weights = default_marginal_weights();
  std::vector<double> skewed_weights = default_skewed_weights();
  std::int64_t first_bin = 1;
  std::uint64_t seed = 1;
};

struct PlantedCorpus {
  Vocabulary vocab;
  EmbeddingMatrix matrix;
  NormList norms;
  std::vector<std::uint32_t> planted_label;  // per token
};

namespace detail {

inline std::size_t draw_category(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace detail

inline PlantedCorpus make_planted_corpus(const PlantedSpec& spec, const std::string& attribute = "valence") {
  Rng rng(spec.seed);
  PlantedCorpus c;
  c.vocab.marker = kGpt2SpaceMarker;
  c.matrix = EmbeddingMatrix(spec.tokens, spec.dims);
  c.norms.attribute = attribute;

  std::vector<double> centres(static_cast<std::size_t>(spec.clusters) * spec.dims);
  for (double& v : centres) v = spec.center_scale * rng.normal();

  for (std::uint32_t i = 0; i < spec.tokens; ++i) {
    const std::uint32_t label = i % spec.clusters;
    c.planted_label.push_back(label);
    char word[32];
    std::snprintf(word, sizeof(word), "w%05u", i);
    const bool leading = i % 2 == 0;
    c.vocab.tokens.push_back({i, word, leading, denormalize_token(word, leading, c.vocab.marker)});
    auto row = c.matrix.row(i);
    for (std::uint32_t d = 0; d < spec.dims; ++d) {
      row[d] = static_cast<float>(centres[label * spec.dims + d] + spec.noise * rng.normal());
    }
    const bool skewed =
        std::find(spec.skewed_clusters.begin(), spec.skewed_clusters.end(), label) != spec.skewed_clusters.end();
    const std::size_t bin = detail::draw_category(rng, skewed ? spec.skewed_weights : spec.marginal_weights);
    const double frac = rng.uniform();
    if (rng.uniform() < spec.annotated_fraction) {
      c.norms.entries.push_back({word, static_cast<double>(spec.first_bin + static_cast<std::int64_t>(bin)) + frac});
    }
  }
  c.norms.declared_length = c.norms.entries.size();
  return c;
}

inline void write_norm_csv(std::ostream& out, const NormList& list, const NormColumns& cols = {}) {
  text::write_row(out, {cols.word, cols.value}, cols.delimiter);
  for (const auto& e : list.entries) text::write_row(out, {e.word, text::format_double(e.value)}, cols.delimiter);
}

}  // namespace lexprobe
