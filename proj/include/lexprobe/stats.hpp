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

// Multinomial null-hypothesis testing of cluster/attribute count vectors
// and information-theoretic summaries of the cluster x bin table.
// All logarithms are natural.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lexprobe/cluster.hpp"
#include "lexprobe/norms.hpp"
#include "lexprobe/parallel.hpp"
#include "lexprobe/rng.hpp"

namespace lexprobe {

struct ClusterAttributeCounts {
  std::uint32_t cluster_id = 0;
  std::string attribute;
  std::vector<std::uint64_t> counts;  // aligned with BinnedAttribute::bin_labels
  std::uint64_t m = 0;
};

/// Per-cluster bin counts of the annotated tokens, one entry per cluster.
inline std::vector<ClusterAttributeCounts> cluster_counts(const ClusterModel& model, const BinnedAttribute& binned) {
  std::vector<ClusterAttributeCounts> out(model.k);
  for (std::uint32_t j = 0; j < model.k; ++j) {
    out[j].cluster_id = j;
    out[j].attribute = binned.attribute;
    out[j].counts.assign(binned.bins(), 0);
  }
  for (const auto& [token_id, bin] : binned.bin_of) {
    if (token_id >= model.assignments.size()) {
      throw std::out_of_range("annotated token " + std::to_string(token_id) + " has no cluster assignment");
    }
    auto& c = out[model.assignments[token_id]];
    ++c.counts[bin];
    ++c.m;
  }
  return out;
}

inline constexpr double kProbabilitySumTolerance = 1e-9;

/// log P(C | p) for a multinomial with m = sum(C) trials. Reused across many
/// count vectors of the same size, so log p and log k! are tabulated once.
class MultinomialLogProb {
 public:
  MultinomialLogProb(std::span<const double> p_cat, std::uint64_t max_m) {
    double sum = 0.0;
    for (double p : p_cat) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("probabilities must be finite and >= 0");
      sum += p;
    }
    if (p_cat.empty() || std::fabs(sum - 1.0) > kProbabilitySumTolerance) {
      throw std::invalid_argument("probabilities must sum to 1");
    }
    log_p_.reserve(p_cat.size());
    for (double p : p_cat) log_p_.push_back(p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity());
    log_factorial_.resize(max_m + 1);
    for (std::uint64_t k = 0; k <= max_m; ++k) log_factorial_[k] = std::lgamma(static_cast<double>(k) + 1.0);
  }

  std::size_t bins() const { return log_p_.size(); }

  /// Returns -infinity when a positive count falls in a zero-probability bin.
  double operator()(std::span<const std::uint64_t> counts) const {
    if (counts.size() != log_p_.size()) throw std::invalid_argument("count and probability vectors differ in length");
    std::uint64_t m = 0;
    for (auto c : counts) m += c;
    double s = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      if (std::isinf(log_p_[i])) return -std::numeric_limits<double>::infinity();
      s += static_cast<double>(counts[i]) * log_p_[i];
    }
    s += log_factorial(m);
    for (auto c : counts) s -= log_factorial(c);
    return s;
  }

 private:
  double log_factorial(std::uint64_t k) const {
    return k < log_factorial_.size() ? log_factorial_[k] : std::lgamma(static_cast<double>(k) + 1.0);
  }

  std::vector<double> log_p_;
  std::vector<double> log_factorial_;
};

inline double log_multinomial_prob(std::span<const std::uint64_t> counts, std::span<const double> p_cat) {
  return MultinomialLogProb(p_cat, 0)(counts);
}

inline bool is_impossible(double log_p) { return std::isinf(log_p) && log_p < 0; }

/// One multinomial(m, p) draw as a chain of conditional binomials.
inline void sample_multinomial(Rng& rng, std::uint64_t m, std::span<const double> p_cat,
                               std::span<const double> tail_mass, std::span<std::uint64_t> out) {
  std::uint64_t remaining = m;
  const std::size_t k = p_cat.size();
  for (std::size_t i = 0; i < k; ++i) {
    if (remaining == 0 || i + 1 == k) {
      out[i] = remaining;
      remaining = 0;
      continue;
    }
    const double rest = tail_mass[i + 1];
    const double q = rest <= 0.0 ? 1.0 : std::clamp(p_cat[i] / tail_mass[i], 0.0, 1.0);
    const std::uint64_t x = sample_binomial(rng, remaining, q);
    out[i] = x;
    remaining -= x;
  }
}

/// Suffix sums of p, so that tail[i] = p[i] + ... + p[k-1].
inline std::vector<double> tail_masses(std::span<const double> p_cat) {
  std::vector<double> tail(p_cat.size() + 1, 0.0);
  for (std::size_t i = p_cat.size(); i-- > 0;) tail[i] = tail[i + 1] + p_cat[i];
  return tail;
}

struct NullDistribution {
  std::uint64_t m = 0;
  std::uint64_t seed = 0;
  std::vector<double> log_p_samples;  // ascending

  std::size_t n_samples() const { return log_p_samples.size(); }
  double min() const { return log_p_samples.front(); }
  double max() const { return log_p_samples.back(); }

  /// Linear-interpolated quantile of the sorted sample, q in [0, 1].
  double quantile(double q) const {
    const auto& s = log_p_samples;
    if (s.size() == 1) return s[0];
    const double h = std::clamp(q, 0.0, 1.0) * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
  }
  double median() const { return quantile(0.5); }

  /// Fraction of null draws at or below `x`.
  double cdf(double x) const {
    const auto it = std::upper_bound(log_p_samples.begin(), log_p_samples.end(), x);
    return static_cast<double>(it - log_p_samples.begin()) / static_cast<double>(log_p_samples.size());
  }
};

inline constexpr std::size_t kNullBlock = 4096;

/// Draws `n_samples` multinomial(m, p_cat) count vectors and returns their
/// sorted log-probabilities. Sample blocks have their own seeded streams, so
/// the result does not depend on `threads`.
inline NullDistribution sample_null(std::uint64_t m, std::span<const double> p_cat, std::size_t n_samples,
                                    std::uint64_t seed, unsigned threads = 1) {
  if (n_samples == 0) throw std::invalid_argument("n_samples must be at least 1");
  const MultinomialLogProb log_prob(p_cat, m);
  const auto tail = tail_masses(p_cat);
  NullDistribution null;
  null.m = m;
  null.seed = seed;
  null.log_p_samples.resize(n_samples);
  const std::size_t blocks = chunk_count(n_samples, kNullBlock);
  parallel_for(blocks, threads, [&](std::size_t b) {
    Rng rng(mix_seed(seed, b, 0x6E756C6CULL));
    std::vector<std::uint64_t> counts(p_cat.size());
    const std::size_t end = std::min(n_samples, (b + 1) * kNullBlock);
    for (std::size_t s = b * kNullBlock; s < end; ++s) {
      sample_multinomial(rng, m, p_cat, tail, counts);
      null.log_p_samples[s] = log_prob(counts);
    }
  });
  std::sort(null.log_p_samples.begin(), null.log_p_samples.end());
  return null;
}

enum class TestOutcome { tested, no_annotations, impossible_count };

inline const char* to_string(TestOutcome o) {
  switch (o) {
    case TestOutcome::tested: return "tested";
    case TestOutcome::no_annotations: return "no_annotations";
    case TestOutcome::impossible_count: return "impossible_count";
  }
  return "unknown";
}

/// Tail level for the reported low quantile of the null sample.
inline constexpr double kLowQuantile = 5.0 / 100000.0;

struct SensitivityResult {
  std::uint32_t cluster_id = 0;
  std::string attribute;
  std::uint64_t m = 0;
  double observed_log_p = 0.0;
  double null_min = 0.0;
  double null_median = 0.0;
  double null_low_quantile = 0.0;
  double empirical_p = 1.0;  // share of null draws at or below the observation
  bool sensitive = false;    // observed strictly below every null draw
  bool low_annotation_flag = false;
  TestOutcome outcome = TestOutcome::tested;

  /// Sensitive and not discounted for having too few annotations.
  bool counted() const { return sensitive && !low_annotation_flag; }

  bool operator==(const SensitivityResult&) const = default;
};

/// Compares a cluster's counts with an already drawn null sample of size m.
inline SensitivityResult evaluate_sensitivity(const ClusterAttributeCounts& counts, const BinnedAttribute& binned,
                                              const NullDistribution& null, std::uint64_t min_annotated) {
  if (counts.counts.size() != binned.bins()) throw std::invalid_argument("counts are not aligned with bins");
  if (null.m != counts.m) throw std::invalid_argument("null sample size differs from cluster size");
  SensitivityResult r;
  r.cluster_id = counts.cluster_id;
  r.attribute = binned.attribute;
  r.m = counts.m;
  r.low_annotation_flag = counts.m < min_annotated;
  r.observed_log_p = log_multinomial_prob(counts.counts, binned.p_cat);
  r.null_min = null.min();
  r.null_median = null.median();
  r.null_low_quantile = null.quantile(kLowQuantile);
  r.empirical_p = null.cdf(r.observed_log_p);
  r.sensitive = r.observed_log_p < r.null_min;
  if (is_impossible(r.observed_log_p)) r.outcome = TestOutcome::impossible_count;
  return r;
}

/// Full test for one (cluster, attribute) pair. Clusters without annotated
/// tokens are not sampled and are never sensitive.
inline SensitivityResult sensitivity_test(const ClusterAttributeCounts& counts, const BinnedAttribute& binned,
                                          std::size_t n_samples, std::uint64_t seed, std::uint64_t min_annotated,
                                          NullDistribution* null_out = nullptr) {
  if (counts.m == 0) {
    SensitivityResult r;
    r.cluster_id = counts.cluster_id;
    r.attribute = binned.attribute;
    r.low_annotation_flag = min_annotated > 0;
    r.outcome = TestOutcome::no_annotations;
    if (null_out) *null_out = NullDistribution{0, seed, std::vector<double>(n_samples, 0.0)};
    return r;
  }
  NullDistribution null = sample_null(counts.m, binned.p_cat, n_samples, seed);
  auto r = evaluate_sensitivity(counts, binned, null, min_annotated);
  if (null_out) *null_out = std::move(null);
  return r;
}

/// Seed of the (cluster, attribute) task derived from the run's master seed.
inline std::uint64_t task_seed(std::uint64_t master, std::uint32_t cluster_id, std::string_view attribute) {
  return mix_seed(master, cluster_id, fnv1a64(attribute));
}

struct SensitivityOptions {
  std::size_t n_samples = 100000;
  std::uint64_t seed = 0;
  std::uint64_t min_annotated = 10;
  unsigned threads = 0;
};

/// Runs every (cluster, attribute) test. Results are ordered by attribute
/// (input order) then cluster id, independent of scheduling.
inline std::vector<SensitivityResult> test_all(const ClusterModel& model, std::span<const BinnedAttribute> attributes,
                                               const SensitivityOptions& opt) {
  std::vector<std::vector<ClusterAttributeCounts>> counts;
  for (const auto& b : attributes) counts.push_back(cluster_counts(model, b));
  const std::size_t tasks = attributes.size() * model.k;
  std::vector<SensitivityResult> results(tasks);
  parallel_for(tasks, opt.threads, [&](std::size_t t) {
    const std::size_t a = t / model.k;
    const auto j = static_cast<std::uint32_t>(t % model.k);
    const auto& b = attributes[a];
    results[t] = sensitivity_test(counts[a][j], b, opt.n_samples, task_seed(opt.seed, j, b.attribute),
                                  opt.min_annotated);
  });
  return results;
}

struct JointDistribution {
  std::size_t n_clusters = 0;
  std::size_t n_bins = 0;
  std::vector<double> p_joint;  // n_clusters * n_bins, row-major
  std::vector<double> p_clust;
  std::vector<double> p_cat;

  double at(std::size_t i, std::size_t j) const { return p_joint[i * n_bins + j]; }

  /// Builds the table from non-negative weights (counts or probabilities),
  /// normalising to total mass 1 and deriving both marginals by summation.
  static JointDistribution from_weights(std::size_t rows, std::size_t cols, std::span<const double> weights) {
    if (weights.size() != rows * cols) throw std::invalid_argument("joint table has wrong size");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("joint weights must be finite and >= 0");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("joint table has no mass");
    JointDistribution j;
    j.n_clusters = rows;
    j.n_bins = cols;
    j.p_joint.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) j.p_joint[i] = weights[i] / total;
    j.p_clust.assign(rows, 0.0);
    j.p_cat.assign(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        j.p_clust[r] += j.at(r, c);
        j.p_cat[c] += j.at(r, c);
      }
    }
    return j;
  }
};

/// Empirical cluster x bin distribution of the annotated tokens.
inline JointDistribution joint_distribution(const ClusterModel& model, const BinnedAttribute& binned) {
  std::vector<double> weights(static_cast<std::size_t>(model.k) * binned.bins(), 0.0);
  for (const auto& c : cluster_counts(model, binned)) {
    for (std::size_t b = 0; b < c.counts.size(); ++b) {
      weights[c.cluster_id * binned.bins() + b] = static_cast<double>(c.counts[b]);
    }
  }
  return JointDistribution::from_weights(model.k, binned.bins(), weights);
}

struct InformationSummary {
  double h_clust = 0.0;
  double h_cat = 0.0;
  double mutual_information = 0.0;
  double nmi = 0.0;  // I / sqrt(H_clust * H_cat)
};

/// Shannon entropy in nats. A distribution with a single support point has
/// entropy exactly 0 even when its mass sums to 1 only up to rounding.
inline double entropy(std::span<const double> p) {
  if (std::count_if(p.begin(), p.end(), [](double v) { return v > 0.0; }) <= 1) return 0.0;
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(0.0, h);
}

inline InformationSummary mutual_information(const JointDistribution& joint) {
  InformationSummary s;
  s.h_clust = entropy(joint.p_clust);
  s.h_cat = entropy(joint.p_cat);
  double mi = 0.0;
  for (std::size_t i = 0; i < joint.n_clusters; ++i) {
    for (std::size_t j = 0; j < joint.n_bins; ++j) {
      const double p = joint.at(i, j);
      if (p > 0.0) mi += p * std::log(p / (joint.p_clust[i] * joint.p_cat[j]));
    }
  }
  s.mutual_information = std::max(0.0, mi);
  if (s.h_clust > 0.0 && s.h_cat > 0.0) {
    s.nmi = std::clamp(s.mutual_information / std::sqrt(s.h_clust * s.h_cat), 0.0, 1.0);
  }
  return s;
}

}  // namespace lexprobe
