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

// Seeded k-means (k-means++ initialisation, Lloyd iterations) over an
// embedding matrix, plus model persistence and nearest-centroid listings.
//
// Determinism: every random choice and every floating-point reduction is
// ordered by token id through fixed-size chunks, so a fit depends only on
// (data, k, seed, max_iter, tol, normalize) and never on the thread count
// or on the order rows happen to be stored in.
//
// Model file (little-endian):
//   "LEXKMNS1" | u32 k | u32 dims | u32 rows | k*dims f64 centroids
//   | rows u32 assignments | u64 seed | u32 iterations_run | f64 wcss

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lexprobe/binary_io.hpp"
#include "lexprobe/corpus_io.hpp"
#include "lexprobe/error.hpp"
#include "lexprobe/parallel.hpp"
#include "lexprobe/rng.hpp"
#include "lexprobe/text.hpp"

namespace lexprobe {

struct KMeansOptions {
  std::uint32_t k = 200;
  std::uint64_t seed = 0;
  std::uint32_t max_iter = 300;
  double tol = 1e-4;  // stop once no centroid moves this far (Euclidean)
  bool normalize = false;  // L2-normalise rows before clustering
  unsigned threads = 0;    // 0: LEXPROBE_THREADS or hardware concurrency
};

struct ClusterModel {
  std::uint32_t k = 0;
  std::uint32_t dims = 0;
  std::vector<double> centroids;            // k * dims, row-major
  std::vector<std::uint32_t> assignments;   // per token id
  std::vector<std::uint32_t> sizes;         // per cluster
  double wcss = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t iterations_run = 0;

  std::uint32_t rows() const { return static_cast<std::uint32_t>(assignments.size()); }

  std::span<const double> centroid(std::size_t j) const {
    return {centroids.data() + j * dims, static_cast<std::size_t>(dims)};
  }

  /// Token ids assigned to cluster `j`, ascending.
  std::vector<std::uint32_t> members(std::uint32_t j) const {
    std::vector<std::uint32_t> out;
    out.reserve(j < sizes.size() ? sizes[j] : 0);
    for (std::uint32_t i = 0; i < assignments.size(); ++i) {
      if (assignments[i] == j) out.push_back(i);
    }
    return out;
  }

  bool operator==(const ClusterModel&) const = default;
};

/// Per-iteration progress, reported after each assignment step.
struct IterationTrace {
  std::uint32_t iteration = 0;  // 0 is the assignment to the initial centroids
  double wcss = 0.0;
  std::size_t changed = 0;
  double max_shift = 0.0;       // centroid displacement of the preceding update
};

using IterationObserver = std::function<void(const IterationTrace&)>;

inline std::vector<std::uint32_t> cluster_sizes(std::span<const std::uint32_t> assignments, std::uint32_t k) {
  std::vector<std::uint32_t> sizes(k, 0);
  for (auto a : assignments) {
    if (a >= k) throw std::out_of_range("assignment index " + std::to_string(a) + " >= k");
    ++sizes[a];
  }
  return sizes;
}

namespace detail {

inline constexpr std::size_t kKMeansChunk = 1024;

template <typename A, typename B>
inline double squared_distance(std::span<const A> x, std::span<const B> y) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = static_cast<double>(x[d]) - static_cast<double>(y[d]);
    s += diff * diff;
  }
  return s;
}

inline EmbeddingMatrix l2_normalized(const EmbeddingMatrix& m) {
  EmbeddingMatrix out = m;
  for (std::size_t i = 0; i < out.rows; ++i) {
    auto r = out.row(i);
    double n2 = 0.0;
    for (float v : r) n2 += static_cast<double>(v) * v;
    if (n2 == 0.0) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (float& v : r) v = static_cast<float>(v * inv);
  }
  return out;
}

class KMeansFitter {
 public:
  KMeansFitter(const EmbeddingMatrix& data, const KMeansOptions& opt, std::span<const std::uint32_t> row_ids)
      : data_(data), opt_(opt), n_(data.rows), d_(data.dims), k_(opt.k) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0u);
    if (!row_ids.empty()) {
      if (row_ids.size() != n_) throw std::invalid_argument("row_ids size must equal matrix rows");
      std::stable_sort(order_.begin(), order_.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return row_ids[a] < row_ids[b]; });
      for (std::size_t p = 1; p < n_; ++p) {
        if (row_ids[order_[p]] == row_ids[order_[p - 1]]) throw std::invalid_argument("row_ids must be unique");
      }
    }
    n_chunks_ = chunk_count(n_, kKMeansChunk);
    centroids_.assign(static_cast<std::size_t>(k_) * d_, 0.0);
    assign_.assign(n_, 0);
    dist2_.assign(n_, 0.0);
  }

  ClusterModel run(const IterationObserver& observer) {
    initialize();
    std::size_t changed = assign_step(true);
    double wcss = total_wcss();
    if (observer) observer({0, wcss, changed, 0.0});
    std::uint32_t it = 0;
    while (it < opt_.max_iter) {
      ++it;
      const double shift = update_step();
      changed = assign_step(false);
      wcss = total_wcss();
      if (observer) observer({it, wcss, changed, shift});
      if (changed == 0 || shift < opt_.tol) break;
    }
    ClusterModel model;
    model.k = k_;
    model.dims = d_;
    model.centroids = centroids_;
    model.assignments = assign_;
    model.sizes = cluster_sizes(assign_, k_);
    model.wcss = wcss;
    model.seed = opt_.seed;
    model.iterations_run = it;
    return model;
  }

 private:
  std::span<const float> point(std::size_t row) const { return data_.row(row); }
  std::span<double> mutable_centroid(std::size_t j) { return {centroids_.data() + j * d_, d_}; }
  std::span<const double> centroid(std::size_t j) const { return {centroids_.data() + j * d_, d_}; }

  template <typename Fn>
  void for_chunks(Fn&& fn) {
    parallel_for(n_chunks_, opt_.threads, [&](std::size_t c) {
      const std::size_t begin = c * kKMeansChunk;
      const std::size_t end = std::min<std::size_t>(n_, begin + kKMeansChunk);
      fn(c, begin, end);
    });
  }

  void set_centroid_to_row(std::size_t j, std::uint32_t row) {
    auto c = mutable_centroid(j);
    const auto x = point(row);
    for (std::size_t d = 0; d < d_; ++d) c[d] = x[d];
  }

  // k-means++ seeding; candidates are visited in token-id order.
  void initialize() {
    Rng rng(mix_seed(opt_.seed, 0x6B6D65616E73ULL));
    std::vector<bool> chosen(n_, false);
    std::size_t first = rng.below(n_);
    set_centroid_to_row(0, order_[first]);
    chosen[first] = true;
    std::vector<double> d2(n_);
    for_chunks([&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) d2[p] = squared_distance(point(order_[p]), centroid(0));
    });
    for (std::uint32_t j = 1; j < k_; ++j) {
      double total = 0.0;
      for (double v : d2) total += v;
      std::size_t pick = n_;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double cum = 0.0;
        for (std::size_t p = 0; p < n_; ++p) {
          if (d2[p] <= 0.0) continue;
          cum += d2[p];
          pick = p;
          if (cum > target) break;
        }
      } else {
        // every point coincides with a chosen centre
        for (std::size_t p = 0; p < n_; ++p) {
          if (!chosen[p]) {
            pick = p;
            break;
          }
        }
      }
      chosen[pick] = true;
      set_centroid_to_row(j, order_[pick]);
      for_chunks([&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
          d2[p] = std::min(d2[p], squared_distance(point(order_[p]), centroid(j)));
        }
      });
    }
  }

  // Nearest centroid for every point; ties go to the lowest cluster index.
  std::size_t assign_step(bool first) {
    std::vector<std::size_t> changed(n_chunks_, 0);
    for_chunks([&](std::size_t c, std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        const std::uint32_t row = order_[p];
        const auto x = point(row);
        std::uint32_t best = 0;
        double best_d = squared_distance(x, centroid(0));
        for (std::uint32_t j = 1; j < k_; ++j) {
          const double dj = squared_distance(x, centroid(j));
          if (dj < best_d) {
            best_d = dj;
            best = j;
          }
        }
        if (first || assign_[row] != best) ++changed[c];
        assign_[row] = best;
        dist2_[row] = best_d;
      }
    });
    return std::accumulate(changed.begin(), changed.end(), std::size_t{0});
  }

  double total_wcss() const {
    std::vector<double> partial(n_chunks_, 0.0);
    for (std::size_t c = 0; c < n_chunks_; ++c) {
      const std::size_t b = c * kKMeansChunk;
      const std::size_t e = std::min<std::size_t>(n_, b + kKMeansChunk);
      for (std::size_t p = b; p < e; ++p) partial[c] += dist2_[order_[p]];
    }
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
  }

  // Mean update with chunk-ordered reduction; returns max centroid shift.
  double update_step() {
    const std::size_t kd = static_cast<std::size_t>(k_) * d_;
    std::vector<std::vector<double>> sums(n_chunks_);
    std::vector<std::vector<std::uint32_t>> counts(n_chunks_);
    for_chunks([&](std::size_t c, std::size_t b, std::size_t e) {
      auto& s = sums[c];
      auto& n = counts[c];
      s.assign(kd, 0.0);
      n.assign(k_, 0);
      for (std::size_t p = b; p < e; ++p) {
        const std::uint32_t row = order_[p];
        const std::uint32_t j = assign_[row];
        const auto x = point(row);
        double* dst = s.data() + static_cast<std::size_t>(j) * d_;
        for (std::size_t d = 0; d < d_; ++d) dst[d] += x[d];
        ++n[j];
      }
    });
    std::vector<double> total(kd, 0.0);
    std::vector<std::uint64_t> count(k_, 0);
    for (std::size_t c = 0; c < n_chunks_; ++c) {
      for (std::size_t i = 0; i < kd; ++i) total[i] += sums[c][i];
      for (std::uint32_t j = 0; j < k_; ++j) count[j] += counts[c][j];
    }

    std::vector<double> previous = centroids_;
    std::vector<std::uint32_t> empty;
    for (std::uint32_t j = 0; j < k_; ++j) {
      if (count[j] == 0) {
        empty.push_back(j);
        continue;
      }
      auto cj = mutable_centroid(j);
      for (std::size_t d = 0; d < d_; ++d) cj[d] = total[static_cast<std::size_t>(j) * d_ + d] / count[j];
    }
    if (!empty.empty()) reseed(empty);

    double max_shift = 0.0;
    for (std::uint32_t j = 0; j < k_; ++j) {
      const std::span<const double> old(previous.data() + static_cast<std::size_t>(j) * d_, d_);
      max_shift = std::max(max_shift, std::sqrt(squared_distance(old, centroid(j))));
    }
    return max_shift;
  }

  // Empty clusters take the points farthest from their current centroid.
  void reseed(const std::vector<std::uint32_t>& empty) {
    std::vector<std::size_t> positions(n_);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    const std::size_t take = std::min(empty.size(), positions.size());
    std::partial_sort(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(take), positions.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double da = dist2_[order_[a]];
                        const double db = dist2_[order_[b]];
                        return da != db ? da > db : a < b;
                      });
    for (std::size_t i = 0; i < take; ++i) set_centroid_to_row(empty[i], order_[positions[i]]);
  }

  const EmbeddingMatrix& data_;
  const KMeansOptions& opt_;
  std::size_t n_;
  std::size_t d_;
  std::uint32_t k_;
  std::size_t n_chunks_ = 0;
  std::vector<std::uint32_t> order_;
  std::vector<double> centroids_;
  std::vector<std::uint32_t> assign_;
  std::vector<double> dist2_;
};

}  // namespace detail

/// Fits k clusters. `row_ids`, when given, names the token id of each row;
/// seeding and reductions then follow id order instead of storage order.
inline ClusterModel kmeans_fit(const EmbeddingMatrix& matrix, const KMeansOptions& options,
                               const IterationObserver& observer = {},
                               std::span<const std::uint32_t> row_ids = {}) {
  if (options.k == 0) throw std::invalid_argument("k must be at least 1");
  if (options.k > matrix.rows) {
    throw std::invalid_argument("k (" + std::to_string(options.k) + ") exceeds number of rows (" +
                                std::to_string(matrix.rows) + ")");
  }
  if (options.max_iter == 0) throw std::invalid_argument("max_iter must be at least 1");
  if (!(options.tol >= 0.0)) throw std::invalid_argument("tol must be non-negative");
  if (matrix.data.size() != static_cast<std::size_t>(matrix.rows) * matrix.dims) {
    throw std::invalid_argument("matrix data size does not match rows*dims");
  }
  for (std::size_t i = 0; i < matrix.data.size(); ++i) {
    if (!std::isfinite(matrix.data[i])) {
      throw FormatError("non-finite value at row " + std::to_string(i / matrix.dims) + ", column " +
                        std::to_string(i % matrix.dims));
    }
  }
  if (options.normalize) {
    const EmbeddingMatrix normalized = detail::l2_normalized(matrix);
    return detail::KMeansFitter(normalized, options, row_ids).run(observer);
  }
  return detail::KMeansFitter(matrix, options, row_ids).run(observer);
}

/// Sum over tokens of the squared distance to their assigned centroid.
inline double recompute_wcss(const EmbeddingMatrix& matrix, const ClusterModel& model) {
  if (model.assignments.size() != matrix.rows) throw std::invalid_argument("model/matrix row count mismatch");
  if (model.dims != matrix.dims) throw std::invalid_argument("model/matrix dimensionality mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < matrix.rows; ++i) {
    const auto j = model.assignments[i];
    if (j >= model.k) throw std::out_of_range("assignment index " + std::to_string(j) + " >= k");
    total += detail::squared_distance(matrix.row(i), model.centroid(j));
  }
  return total;
}

/// Members of `cluster_id` ordered by distance to its centroid (ties by id).
inline std::vector<TokenRecord> top_terms(const ClusterModel& model, const EmbeddingMatrix& matrix,
                                          const Vocabulary& vocab, std::uint32_t cluster_id, std::size_t n) {
  if (cluster_id >= model.k) throw std::out_of_range("cluster id " + std::to_string(cluster_id) + " >= k");
  if (vocab.size() != model.rows() || matrix.rows != model.rows()) {
    throw std::invalid_argument("vocabulary, matrix and model sizes differ");
  }
  std::vector<std::pair<double, std::uint32_t>> ranked;
  for (std::uint32_t id : model.members(cluster_id)) {
    ranked.emplace_back(detail::squared_distance(matrix.row(id), model.centroid(cluster_id)), id);
  }
  const std::size_t take = std::min(n, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end());
  std::vector<TokenRecord> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(vocab[ranked[i].second]);
  return out;
}

inline constexpr std::string_view kModelMagic = "LEXKMNS1";

inline void write_model(std::ostream& out, const ClusterModel& m) {
  out.write(kModelMagic.data(), kModelMagic.size());
  detail::write_le<std::uint32_t>(out, m.k);
  detail::write_le<std::uint32_t>(out, m.dims);
  detail::write_le<std::uint32_t>(out, m.rows());
  for (double v : m.centroids) detail::write_f64(out, v);
  for (auto a : m.assignments) detail::write_le<std::uint32_t>(out, a);
  detail::write_le<std::uint64_t>(out, m.seed);
  detail::write_le<std::uint32_t>(out, m.iterations_run);
  detail::write_f64(out, m.wcss);
}

inline void save_model(const std::string& path, const ClusterModel& m) {
  auto out = text::open_output(path, true);
  write_model(out, m);
  text::finish_output(out, path);
}

inline ClusterModel read_model(std::istream& in) {
  detail::expect_magic(in, kModelMagic);
  ClusterModel m;
  m.k = detail::read_le<std::uint32_t>(in, "model header");
  m.dims = detail::read_le<std::uint32_t>(in, "model header");
  const auto rows = detail::read_le<std::uint32_t>(in, "model header");
  m.centroids.resize(static_cast<std::size_t>(m.k) * m.dims);
  for (double& v : m.centroids) v = detail::read_f64(in, "model centroids");
  m.assignments.resize(rows);
  for (auto& a : m.assignments) {
    a = detail::read_le<std::uint32_t>(in, "model assignments");
    if (a >= m.k) throw FormatError("model assignment " + std::to_string(a) + " out of range");
  }
  m.seed = detail::read_le<std::uint64_t>(in, "model trailer");
  m.iterations_run = detail::read_le<std::uint32_t>(in, "model trailer");
  m.wcss = detail::read_f64(in, "model trailer");
  detail::expect_eof(in, "model");
  m.sizes = cluster_sizes(m.assignments, m.k);
  return m;
}

inline ClusterModel load_model(const std::string& path) {
  auto in = text::open_input(path, true);
  return read_model(in);
}

}  // namespace lexprobe
