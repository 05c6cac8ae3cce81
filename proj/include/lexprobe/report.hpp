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

// Result tables, cross-attribute summaries and standalone SVG plots. Every
// plot is written next to a CSV holding exactly the values it renders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lexprobe/cluster.hpp"
#include "lexprobe/corpus_io.hpp"
#include "lexprobe/error.hpp"
#include "lexprobe/stats.hpp"
#include "lexprobe/text.hpp"

namespace lexprobe {

inline const std::vector<std::string>& results_header() {
  static const std::vector<std::string> header = {
      "cluster_id",  "attribute", "m",           "observed_log_p",    "null_min",
      "null_median", "sensitive", "low_annotation_flag", "null_low_quantile", "empirical_p",
      "outcome"};
  return header;
}

inline void write_results(std::ostream& out, std::span<const SensitivityResult> results) {
  text::write_row(out, results_header());
  for (const auto& r : results) {
    text::write_row(out, {std::to_string(r.cluster_id), r.attribute, std::to_string(r.m),
                          text::format_double(r.observed_log_p), text::format_double(r.null_min),
                          text::format_double(r.null_median), r.sensitive ? "1" : "0",
                          r.low_annotation_flag ? "1" : "0", text::format_double(r.null_low_quantile),
                          text::format_double(r.empirical_p), to_string(r.outcome)});
  }
}

inline void save_results(const std::string& path, std::span<const SensitivityResult> results) {
  auto out = text::open_output(path);
  write_results(out, results);
  text::finish_output(out, path);
}

inline std::vector<SensitivityResult> read_results(std::istream& in) {
  text::CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row) || row.size() < results_header().size()) throw ParseError("bad results header", 1);
  for (std::size_t i = 0; i < results_header().size(); ++i) {
    if (row[i] != results_header()[i]) throw ParseError("unexpected results column \"" + row[i] + "\"", 1);
  }
  std::vector<SensitivityResult> out;
  while (reader.next(row)) {
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() < results_header().size()) throw ParseError("row has too few columns", reader.line());
    SensitivityResult r;
    const auto id = text::parse_int<std::uint32_t>(row[0]);
    const auto m = text::parse_int<std::uint64_t>(row[2]);
    const auto obs = text::parse_double(row[3]);
    const auto nmin = text::parse_double(row[4]);
    const auto nmed = text::parse_double(row[5]);
    const auto nlow = text::parse_double(row[8]);
    const auto pemp = text::parse_double(row[9]);
    if (!id || !m || !obs || !nmin || !nmed || !nlow || !pemp) throw ParseError("malformed number", reader.line());
    auto flag = [&](const std::string& s) {
      if (s == "1") return true;
      if (s == "0") return false;
      throw ParseError("expected 0 or 1, got \"" + s + "\"", reader.line());
    };
    r.cluster_id = *id;
    r.attribute = row[1];
    r.m = *m;
    r.observed_log_p = *obs;
    r.null_min = *nmin;
    r.null_median = *nmed;
    r.sensitive = flag(row[6]);
    r.low_annotation_flag = flag(row[7]);
    r.null_low_quantile = *nlow;
    r.empirical_p = *pemp;
    if (row[10] == "tested") r.outcome = TestOutcome::tested;
    else if (row[10] == "no_annotations") r.outcome = TestOutcome::no_annotations;
    else if (row[10] == "impossible_count") r.outcome = TestOutcome::impossible_count;
    else throw ParseError("unknown outcome \"" + row[10] + "\"", reader.line());
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<SensitivityResult> load_results(const std::string& path) {
  auto in = text::open_input(path);
  return read_results(in);
}

struct AttributeSummary {
  std::string attribute;
  std::size_t sensitive_count = 0;   // sensitive and not discounted
  std::size_t discounted_count = 0;  // sensitive but flagged for low annotation
  std::vector<std::uint32_t> cluster_ids;  // every sensitive cluster, ascending

  bool operator==(const AttributeSummary&) const = default;
};

struct CrossAttributeHistogram {
  std::map<std::size_t, std::size_t> counts_by_num_attributes;  // keys 0..attributes

  bool operator==(const CrossAttributeHistogram&) const = default;
};

struct Summary {
  std::vector<AttributeSummary> attributes;
  CrossAttributeHistogram histogram;

  bool operator==(const Summary&) const = default;
};

/// Tallies counted (non-discounted) sensitive clusters per attribute and the
/// number of attributes each cluster is sensitive to. Attributes appear in
/// first-seen order. Every (cluster, attribute) pair must be present once.
inline Summary summarize(std::span<const SensitivityResult> results, std::uint32_t n_clusters) {
  std::vector<std::string> attrs;
  for (const auto& r : results) {
    if (std::find(attrs.begin(), attrs.end(), r.attribute) == attrs.end()) attrs.push_back(r.attribute);
  }
  std::set<std::pair<std::string, std::uint32_t>> seen;
  for (const auto& r : results) {
    if (r.cluster_id >= n_clusters) {
      throw FormatError("result for cluster " + std::to_string(r.cluster_id) + " outside 0.." +
                        std::to_string(n_clusters - 1));
    }
    if (!seen.emplace(r.attribute, r.cluster_id).second) {
      throw FormatError("duplicate result for cluster " + std::to_string(r.cluster_id) + ", attribute " + r.attribute);
    }
  }
  if (seen.size() != attrs.size() * n_clusters) {
    for (const auto& a : attrs) {
      for (std::uint32_t j = 0; j < n_clusters; ++j) {
        if (!seen.count({a, j})) {
          throw FormatError("missing result for cluster " + std::to_string(j) + ", attribute " + a);
        }
      }
    }
  }

  Summary s;
  std::vector<std::size_t> per_cluster(n_clusters, 0);
  for (const auto& a : attrs) {
    AttributeSummary as;
    as.attribute = a;
    for (const auto& r : results) {
      if (r.attribute != a || !r.sensitive) continue;
      as.cluster_ids.push_back(r.cluster_id);
      if (r.low_annotation_flag) {
        ++as.discounted_count;
      } else {
        ++as.sensitive_count;
        ++per_cluster[r.cluster_id];
      }
    }
    std::sort(as.cluster_ids.begin(), as.cluster_ids.end());
    s.attributes.push_back(std::move(as));
  }
  for (std::size_t n = 0; n <= attrs.size(); ++n) s.histogram.counts_by_num_attributes[n] = 0;
  for (auto c : per_cluster) ++s.histogram.counts_by_num_attributes[c];
  return s;
}

inline void write_attribute_summary(std::ostream& out, const Summary& s) {
  text::write_row(out, {"attribute", "sensitive_clusters", "discounted", "cluster_ids"});
  for (const auto& a : s.attributes) {
    std::string ids;
    for (std::size_t i = 0; i < a.cluster_ids.size(); ++i) ids += (i ? " " : "") + std::to_string(a.cluster_ids[i]);
    text::write_row(out, {a.attribute, std::to_string(a.sensitive_count), std::to_string(a.discounted_count), ids});
  }
}

inline void write_histogram(std::ostream& out, const Summary& s) {
  text::write_row(out, {"attributes", "clusters"});
  for (auto it = s.histogram.counts_by_num_attributes.rbegin(); it != s.histogram.counts_by_num_attributes.rend();
       ++it) {
    text::write_row(out, {std::to_string(it->first), std::to_string(it->second)});
  }
}

/// Companion data path: the plot path with its extension replaced by ".csv".
inline std::string companion_path(const std::string& plot_path) {
  return std::filesystem::path(plot_path).replace_extension(".csv").string();
}

namespace detail {

// Minimal fixed-canvas SVG line/scatter plot.
class SvgPlot {
 public:
  static constexpr double kWidth = 800, kHeight = 500;
  static constexpr double kLeft = 80, kRight = 20, kTop = 40, kBottom = 60;

  SvgPlot(std::string title, std::string x_label, std::string y_label, double x0, double x1, double y0, double y1)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {
    if (!(x1 > x0)) {
      x0 -= 0.5;
      x1 += 0.5;
    }
    if (!(y1 > y0)) {
      y0 -= 0.5;
      y1 += 0.5;
    }
    x0_ = x0, x1_ = x1, y0_ = y0, y1_ = y1;
  }

  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0_) / (y1_ - y0_) * (kHeight - kTop - kBottom); }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) s << coord(px(x)) << ',' << coord(py(y)) << ' ';
    s << "\"/>\n";
    body_ += s.str();
  }

  void dot(double x, double y, const std::string& color, double r, const std::string& label) {
    std::ostringstream s;
    s << "<circle cx=\"" << coord(px(x)) << "\" cy=\"" << coord(py(y)) << "\" r=\"" << r << "\" fill=\"" << color
      << "\"><title>" << escape(label) << "</title></circle>\n";
    body_ += s.str();
  }

  void vline(double x, const std::string& color, const std::string& label) {
    std::ostringstream s;
    s << "<line x1=\"" << coord(px(x)) << "\" y1=\"" << kTop << "\" x2=\"" << coord(px(x)) << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"" << color << "\" stroke-dasharray=\"4 3\"><title>" << escape(label)
      << "</title></line>\n";
    body_ += s.str();
  }

  void legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    double y = kTop + 10;
    for (const auto& [name, color] : entries) {
      std::ostringstream s;
      s << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\""
        << color << "\"/><text x=\"" << kWidth - kRight - 135 << "\" y=\"" << y + 1
        << "\" font-size=\"12\">" << escape(name) << "</text>\n";
      body_ += s.str();
      y += 16;
    }
  }

  std::string str() const {
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title_)
      << "</text>\n";
    axes(s);
    s << body_ << "</svg>\n";
    return s.str();
  }

 private:
  static std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
  }

  static std::string escape(std::string_view in) {
    std::string out;
    for (char c : in) {
      switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
      }
    }
    return out;
  }

  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
  }

  void axes(std::ostringstream& s) const {
    const double bx0 = kLeft, bx1 = kWidth - kRight, by0 = kHeight - kBottom, by1 = kTop;
    s << "<rect x=\"" << bx0 << "\" y=\"" << by1 << "\" width=\"" << bx1 - bx0 << "\" height=\"" << by0 - by1
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double fx = x0_ + (x1_ - x0_) * i / 4.0;
      const double fy = y0_ + (y1_ - y0_) * i / 4.0;
      s << "<text x=\"" << coord(px(fx)) << "\" y=\"" << by0 + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
        << tick(fx) << "</text>\n";
      s << "<text x=\"" << bx0 - 6 << "\" y=\"" << coord(py(fy) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
        << tick(fy) << "</text>\n";
    }
    s << "<text x=\"" << (bx0 + bx1) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << escape(x_label_) << "</text>\n";
    s << "<text transform=\"translate(18," << (by0 + by1) / 2
      << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">" << escape(y_label_) << "</text>\n";
  }

  std::string title_, x_label_, y_label_;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
  std::string body_;
};

inline void write_text_file(const std::string& path, const std::string& content) {
  auto out = text::open_output(path, true);
  out << content;
  text::finish_output(out, path);
}

}  // namespace detail

/// Maximum number of CDF vertices drawn; the companion file keeps all points.
inline constexpr std::size_t kMaxCdfVertices = 2000;

/// Empirical CDF of the null log-probabilities with the observation marked.
/// Companion CSV columns: series, x, y (series "null" rows, one "observed" row).
inline void emit_cumulative_plot(const NullDistribution& null, double observed, const std::string& path,
                                 const std::string& title = "Null distribution of log P") {
  if (null.log_p_samples.empty()) throw std::invalid_argument("null distribution is empty");
  const auto& xs = null.log_p_samples;
  const std::size_t n = xs.size();
  std::vector<std::pair<double, double>> curve;
  curve.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    curve.emplace_back(xs[i], static_cast<double>(i + 1) / static_cast<double>(n));
  }
  const double observed_cdf = null.cdf(observed);

  std::ostringstream data;
  text::write_row(data, {"series", "x", "y"});
  for (const auto& [x, y] : curve) text::write_row(data, {"null", text::format_double(x), text::format_double(y)});
  text::write_row(data, {"observed", text::format_double(observed), text::format_double(observed_cdf)});

  std::vector<std::pair<double, double>> drawn;
  const std::size_t stride = std::max<std::size_t>(1, (n + kMaxCdfVertices - 1) / kMaxCdfVertices);
  for (std::size_t i = 0; i < n; i += stride) drawn.push_back(curve[i]);
  if (drawn.back() != curve.back()) drawn.push_back(curve.back());

  double lo = xs.front(), hi = xs.back();
  if (std::isfinite(observed)) {
    lo = std::min(lo, observed);
    hi = std::max(hi, observed);
  }
  const double pad = (hi - lo) * 0.03;
  detail::SvgPlot plot(title, "log P", "cumulative fraction", lo - pad, hi + pad, 0.0, 1.0);
  plot.polyline(drawn, "#d4a017");
  if (std::isfinite(observed)) {
    plot.vline(observed, "#1f5fbf", "observed " + text::format_double(observed));
    plot.dot(observed, observed_cdf, "#1f5fbf", 4, "observed " + text::format_double(observed));
  }
  plot.legend({{"null draws", "#d4a017"}, {"observed", "#1f5fbf"}});

  detail::write_text_file(companion_path(path), data.str());
  detail::write_text_file(path, plot.str());
}

enum class ClusterOrder { by_index, by_size };

/// Observed log P (blue) against the null minimum (yellow) for every cluster
/// of one attribute. `cluster_sizes` orders the x axis when `by_size`.
/// Companion CSV columns: position, cluster_id, size, m, observed_log_p,
/// null_min, sensitive.
inline void emit_cluster_scatter(std::span<const SensitivityResult> results, std::span<const std::uint32_t> cluster_sizes,
                                 ClusterOrder order, const std::string& path, const std::string& title = "") {
  std::vector<const SensitivityResult*> rows;
  for (const auto& r : results) rows.push_back(&r);
  for (const auto* r : rows) {
    if (r->cluster_id >= cluster_sizes.size()) throw std::out_of_range("cluster id outside size table");
  }
  std::sort(rows.begin(), rows.end(), [&](const SensitivityResult* a, const SensitivityResult* b) {
    if (order == ClusterOrder::by_size && cluster_sizes[a->cluster_id] != cluster_sizes[b->cluster_id]) {
      return cluster_sizes[a->cluster_id] < cluster_sizes[b->cluster_id];
    }
    return a->cluster_id < b->cluster_id;
  });

  std::ostringstream data;
  text::write_row(data, {"position", "cluster_id", "size", "m", "observed_log_p", "null_min", "sensitive"});
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = *rows[i];
    text::write_row(data, {std::to_string(i), std::to_string(r.cluster_id), std::to_string(cluster_sizes[r.cluster_id]),
                           std::to_string(r.m), text::format_double(r.observed_log_p),
                           text::format_double(r.null_min), r.sensitive ? "1" : "0"});
    for (double v : {r.observed_log_p, r.null_min}) {
      if (!std::isfinite(v)) continue;
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  const double pad = (hi - lo) * 0.03;
  const std::string x_label = order == ClusterOrder::by_size ? "cluster (ordered by size)" : "cluster id";
  detail::SvgPlot plot(title.empty() ? "log P per cluster" : title, x_label, "log P", -1.0,
                       static_cast<double>(std::max<std::size_t>(rows.size(), 1)), lo - pad, hi + pad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = *rows[i];
    const std::string id = "cluster " + std::to_string(r.cluster_id);
    if (std::isfinite(r.null_min)) {
      plot.dot(static_cast<double>(i), r.null_min, "#d4a017", 2.5, id + " null_min " + text::format_double(r.null_min));
    }
    if (std::isfinite(r.observed_log_p)) {
      plot.dot(static_cast<double>(i), r.observed_log_p, "#1f5fbf", 2.5,
               id + " observed " + text::format_double(r.observed_log_p));
    }
  }
  plot.legend({{"observed", "#1f5fbf"}, {"null minimum", "#d4a017"}});

  detail::write_text_file(companion_path(path), data.str());
  detail::write_text_file(path, plot.str());
}

/// Per-cluster size and the `n_top` members closest to the centroid, with
/// "?" marking tokens that follow a space. Columns: cluster_id, size,
/// term_1..term_n.
inline void write_cluster_listing(std::ostream& out, const ClusterModel& model, const EmbeddingMatrix& matrix,
                                  const Vocabulary& vocab, std::size_t n_top) {
  std::vector<std::string> header = {"cluster_id", "size"};
  for (std::size_t i = 1; i <= n_top; ++i) header.push_back("term_" + std::to_string(i));
  text::write_row(out, header);
  for (std::uint32_t j = 0; j < model.k; ++j) {
    std::vector<std::string> row = {std::to_string(j), std::to_string(model.sizes[j])};
    for (const auto& t : top_terms(model, matrix, vocab, j, n_top)) row.push_back(display_token(t));
    row.resize(header.size());
    text::write_row(out, row);
  }
}

inline void emit_cluster_listing(const ClusterModel& model, const EmbeddingMatrix& matrix, const Vocabulary& vocab,
                                 std::size_t n_top, const std::string& path) {
  auto out = text::open_output(path, true);
  write_cluster_listing(out, model, matrix, vocab, n_top);
  text::finish_output(out, path);
}

}  // namespace lexprobe
