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

// Run configuration and the cluster -> annotate -> test -> report stages.
// Each stage reads its inputs from disk, writes its outputs into the run
// directory and records them in a single run manifest.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "lexprobe/cluster.hpp"
#include "lexprobe/corpus_io.hpp"
#include "lexprobe/error.hpp"
#include "lexprobe/norms.hpp"
#include "lexprobe/report.hpp"
#include "lexprobe/stats.hpp"
#include "lexprobe/text.hpp"

namespace lexprobe {

namespace fs = std::filesystem;

struct AttributeSource {
  std::string name;
  std::string path;
  NormColumns columns;
};

struct CdfRequest {
  std::uint32_t cluster_id = 0;
  std::string attribute;
};

struct RunConfig {
  std::string vocab;
  std::string embeddings;
  std::string out = "lexprobe-out";
  std::vector<AttributeSource> attributes;
  std::uint32_t k = 200;
  std::uint64_t seed = 0;
  std::size_t n_samples = 100000;
  std::uint64_t min_annotated = 10;
  std::uint32_t max_iter = 300;
  double tol = 1e-4;
  bool normalize = false;
  std::size_t top_n = 5;
  std::vector<CdfRequest> cdf_plots;
  unsigned threads = 0;  // never affects results; not recorded

  const AttributeSource* attribute(std::string_view name) const {
    for (const auto& a : attributes) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
  AttributeSource* attribute(std::string_view name) {
    return const_cast<AttributeSource*>(std::as_const(*this).attribute(name));
  }
};

/// Output file names inside the run directory.
namespace files {
inline constexpr const char* kModel = "model.lkm";
inline constexpr const char* kListing = "cluster_listing.csv";
inline constexpr const char* kSizes = "cluster_sizes.csv";
inline constexpr const char* kAssignmentSummary = "assignment_summary.csv";
inline constexpr const char* kResults = "results.csv";
inline constexpr const char* kAttributeSummary = "summary_attributes.csv";
inline constexpr const char* kHistogram = "summary_histogram.csv";
inline constexpr const char* kInformation = "mutual_information.csv";
inline constexpr const char* kManifest = "run_manifest.json";

inline std::string assignment(const std::string& attr) { return "assignment_" + attr + ".csv"; }
inline std::string bins(const std::string& attr) { return "bins_" + attr + ".csv"; }
inline std::string unmatched(const std::string& attr) { return "unmatched_" + attr + ".csv"; }
inline std::string scatter(const std::string& attr, ClusterOrder order) {
  return "scatter_" + attr + (order == ClusterOrder::by_size ? "_by_size.svg" : "_by_index.svg");
}
inline std::string cdf(const std::string& attr, std::uint32_t cluster) {
  return "cdf_" + attr + "_cluster" + std::to_string(cluster) + ".svg";
}
}  // namespace files

// ---------------------------------------------------------------- config

inline NormColumns columns_from_json(const nlohmann::json& j, NormColumns cols = {}) {
  if (j.contains("word_col")) cols.word = j.at("word_col").get<std::string>();
  if (j.contains("value_col")) cols.value = j.at("value_col").get<std::string>();
  if (j.contains("delimiter")) {
    const auto d = j.at("delimiter").get<std::string>();
    if (d == "\\t" || d == "tab") cols.delimiter = '\t';
    else if (d.size() == 1) cols.delimiter = d[0];
    else throw ConfigError("delimiter must be a single character or \"tab\"");
  }
  return cols;
}

inline std::string delimiter_name(char d) { return d == '\t' ? "tab" : std::string(1, d); }

/// Parses a configuration document. Relative paths are resolved against
/// `base_dir`.
inline RunConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  static const std::vector<std::string> known = {"vocab",    "embeddings", "out",       "attributes", "k",
                                                 "seed",     "samples",    "min_annotated", "max_iter", "tol",
                                                 "normalize", "top_n",     "cdf_plots", "defaults"};
  if (!j.is_object()) throw ConfigError("configuration must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key \"" + key + "\"");
  }
  auto resolve = [&](const std::string& p) {
    if (p.empty() || base_dir.empty() || fs::path(p).is_absolute()) return p;
    return (base_dir / p).lexically_normal().string();
  };
  RunConfig c;
  try {
    if (j.contains("vocab")) c.vocab = resolve(j.at("vocab").get<std::string>());
    if (j.contains("embeddings")) c.embeddings = resolve(j.at("embeddings").get<std::string>());
    if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>());
    if (j.contains("k")) c.k = j.at("k").get<std::uint32_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("samples")) c.n_samples = j.at("samples").get<std::size_t>();
    if (j.contains("min_annotated")) c.min_annotated = j.at("min_annotated").get<std::uint64_t>();
    if (j.contains("max_iter")) c.max_iter = j.at("max_iter").get<std::uint32_t>();
    if (j.contains("tol")) c.tol = j.at("tol").get<double>();
    if (j.contains("normalize")) c.normalize = j.at("normalize").get<bool>();
    if (j.contains("top_n")) c.top_n = j.at("top_n").get<std::size_t>();
    const NormColumns defaults = j.contains("defaults") ? columns_from_json(j.at("defaults")) : NormColumns{};
    if (j.contains("attributes")) {
      for (const auto& a : j.at("attributes")) {
        AttributeSource src;
        src.name = a.at("name").get<std::string>();
        src.path = resolve(a.at("path").get<std::string>());
        src.columns = columns_from_json(a, defaults);
        c.attributes.push_back(std::move(src));
      }
    }
    if (j.contains("cdf_plots")) {
      for (const auto& p : j.at("cdf_plots")) {
        c.cdf_plots.push_back({p.at("cluster").get<std::uint32_t>(), p.at("attribute").get<std::string>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad configuration value: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  auto in = text::open_input(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path());
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["vocab"] = c.vocab;
  j["embeddings"] = c.embeddings;
  j["out"] = c.out;
  j["k"] = c.k;
  j["seed"] = c.seed;
  j["samples"] = c.n_samples;
  j["min_annotated"] = c.min_annotated;
  j["max_iter"] = c.max_iter;
  j["tol"] = c.tol;
  j["normalize"] = c.normalize;
  j["top_n"] = c.top_n;
  j["attributes"] = nlohmann::json::array();
  for (const auto& a : c.attributes) {
    j["attributes"].push_back({{"name", a.name},
                               {"path", a.path},
                               {"word_col", a.columns.word},
                               {"value_col", a.columns.value},
                               {"delimiter", delimiter_name(a.columns.delimiter)}});
  }
  j["cdf_plots"] = nlohmann::json::array();
  for (const auto& p : c.cdf_plots) j["cdf_plots"].push_back({{"cluster", p.cluster_id}, {"attribute", p.attribute}});
  return j;
}

enum class Stage { cluster, annotate, test, report, pipeline };

/// Checks parameters and that the inputs a stage reads exist.
inline void validate(const RunConfig& c, Stage stage) {
  if (c.k < 1) throw ConfigError("k must be at least 1");
  if (c.n_samples < 1) throw ConfigError("samples must be at least 1");
  if (c.max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (!(c.tol >= 0.0)) throw ConfigError("tol must be non-negative");
  if (c.out.empty()) throw ConfigError("output directory not set");
  static const std::regex name_re("[A-Za-z0-9_.-]+");
  for (std::size_t i = 0; i < c.attributes.size(); ++i) {
    const auto& a = c.attributes[i];
    if (!std::regex_match(a.name, name_re)) throw ConfigError("invalid attribute name \"" + a.name + "\"");
    for (std::size_t k = 0; k < i; ++k) {
      if (c.attributes[k].name == a.name) throw ConfigError("attribute \"" + a.name + "\" listed twice");
    }
  }
  for (const auto& p : c.cdf_plots) {
    if (!c.attribute(p.attribute)) throw ConfigError("cdf plot requested for unknown attribute \"" + p.attribute + "\"");
  }
  auto need = [](const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " path not set");
    if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
  };
  const bool clusters = stage == Stage::cluster || stage == Stage::pipeline;
  const bool annotates = stage == Stage::annotate || stage == Stage::pipeline;
  if (clusters) {
    need(c.embeddings, "embeddings");
    need(c.vocab, "vocabulary");
  }
  if (annotates) {
    need(c.vocab, "vocabulary");
    if (c.attributes.empty()) throw ConfigError("no attributes configured");
    for (const auto& a : c.attributes) need(a.path, ("norm list for " + a.name).c_str());
  }
  if (stage == Stage::test || stage == Stage::report) {
    need((fs::path(c.out) / files::kModel).string(), "cluster model");
    if (stage == Stage::test) {
      if (c.attributes.empty()) throw ConfigError("no attributes configured");
      for (const auto& a : c.attributes) need((fs::path(c.out) / files::assignment(a.name)).string(), "assignment");
    } else {
      need((fs::path(c.out) / files::kResults).string(), "results");
    }
  }
}

// -------------------------------------------------------------- manifest

inline std::string sha256_file(const std::string& path) {
  auto in = text::open_input(path, true);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

/// Records config, inputs and outputs of a stage in the run manifest,
/// preserving entries written by other stages.
inline void update_manifest(const RunConfig& c, const std::string& stage,
                            const std::vector<std::pair<std::string, std::string>>& inputs,
                            const std::vector<std::string>& outputs, const nlohmann::json& details = {}) {
  const fs::path path = fs::path(c.out) / files::kManifest;
  nlohmann::json m = nlohmann::json::object();
  if (fs::exists(path)) {
    try {
      auto in = text::open_input(path.string());
      m = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error&) {
      m = nlohmann::json::object();
    }
  }
  m["tool"] = "lexprobe";
  m["manifest_version"] = 1;
  m["config"] = config_to_json(c);
  m["seed"] = c.seed;
  for (const auto& [role, p] : inputs) m["inputs"][role] = {{"path", p}, {"sha256", sha256_file(p)}};
  nlohmann::json s;
  for (const auto& o : outputs) s["outputs"][o] = sha256_file((fs::path(c.out) / o).string());
  if (!details.is_null()) s["details"] = details;
  m["stages"][stage] = s;
  auto out = text::open_output(path.string());
  out << m.dump(2) << '\n';
  text::finish_output(out, path.string());
}

// ---------------------------------------------------------------- stages

struct StageReport {
  std::vector<std::string> outputs;   // relative to the run directory
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string out_path(const RunConfig& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

template <typename Writer>
inline void write_output(const RunConfig& c, StageReport& report, const std::string& name, Writer&& write) {
  const auto path = out_path(c, name);
  auto out = text::open_output(path, true);
  write(out);
  text::finish_output(out, path);
  report.outputs.push_back(name);
}

inline void prepare_out_dir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec || !fs::is_directory(c.out)) throw IoError("cannot create output directory " + c.out);
}

}  // namespace detail

/// Fits the clustering and writes the model, sizes and nearest-centroid listing.
inline StageReport cmd_cluster(const RunConfig& c) {
  validate(c, Stage::cluster);
  const auto matrix = load_embeddings(c.embeddings);
  const auto vocab = load_vocabulary(c.vocab);
  if (vocab.size() != matrix.rows) {
    throw FormatError("vocabulary has " + std::to_string(vocab.size()) + " entries but matrix has " +
                      std::to_string(matrix.rows) + " rows");
  }
  KMeansOptions opt;
  opt.k = c.k;
  opt.seed = c.seed;
  opt.max_iter = c.max_iter;
  opt.tol = c.tol;
  opt.normalize = c.normalize;
  opt.threads = c.threads;
  if (c.k > matrix.rows) throw ConfigError("k exceeds vocabulary size");
  const auto model = kmeans_fit(matrix, opt);

  detail::prepare_out_dir(c);
  StageReport report;
  {
    const auto path = detail::out_path(c, files::kModel);
    save_model(path, model);
    report.outputs.push_back(files::kModel);
  }
  const EmbeddingMatrix listing_space = c.normalize ? detail::l2_normalized(matrix) : matrix;
  detail::write_output(c, report, files::kListing,
                       [&](std::ostream& o) { write_cluster_listing(o, model, listing_space, vocab, c.top_n); });
  detail::write_output(c, report, files::kSizes, [&](std::ostream& o) {
    text::write_row(o, {"cluster_id", "size"});
    for (std::uint32_t j = 0; j < model.k; ++j) text::write_row(o, {std::to_string(j), std::to_string(model.sizes[j])});
  });
  if (model.iterations_run == c.max_iter) {
    report.warnings.push_back("k-means stopped at max_iter=" + std::to_string(c.max_iter) + " before converging");
  }
  const auto [mn, mx] = std::minmax_element(model.sizes.begin(), model.sizes.end());
  update_manifest(c, "cluster", {{"vocab", c.vocab}, {"embeddings", c.embeddings}}, report.outputs,
                  {{"wcss", model.wcss},
                   {"iterations_run", model.iterations_run},
                   {"largest_cluster", *mx},
                   {"smallest_cluster", *mn},
                   {"clusters_le_50", std::count_if(model.sizes.begin(), model.sizes.end(),
                                                    [](std::uint32_t s) { return s <= 50; })}});
  return report;
}

/// Matches every configured norm list against the vocabulary and writes
/// per-attribute assignments, bin tables and a match-statistics table.
inline StageReport cmd_annotate(const RunConfig& c) {
  validate(c, Stage::annotate);
  const auto vocab = load_vocabulary(c.vocab);
  detail::prepare_out_dir(c);
  StageReport report;
  std::vector<std::vector<std::string>> summary_rows;
  std::vector<std::pair<std::string, std::string>> inputs = {{"vocab", c.vocab}};
  for (const auto& src : c.attributes) {
    inputs.emplace_back("norms/" + src.name, src.path);
    const auto list = load_norm_list(src.path, src.name, src.columns);
    const auto assignment = match_tokens(vocab, list);
    detail::write_output(c, report, files::assignment(src.name),
                         [&](std::ostream& o) { write_assignment(o, assignment, vocab); });
    detail::write_output(c, report, files::unmatched(src.name), [&](std::ostream& o) {
      text::write_row(o, {"word", "reason"});
      for (const auto& w : assignment.unmatched) text::write_row(o, {w, "no_token"});
      for (const auto& w : assignment.displaced) text::write_row(o, {w, "token_taken"});
    });
    detail::write_output(c, report, files::bins(src.name), [&](std::ostream& o) {
      text::write_row(o, {"bin", "count", "p_cat"});
      if (assignment.assigned.empty()) return;
      const auto binned = bin_values(assignment);
      for (std::size_t b = 0; b < binned.bins(); ++b) {
        text::write_row(o, {std::to_string(binned.bin_labels[b]), std::to_string(binned.counts[b]),
                            text::format_double(binned.p_cat[b])});
      }
    });
    if (list.entries.empty()) report.warnings.push_back("norm list for " + src.name + " is empty");
    if (assignment.assigned.empty()) report.warnings.push_back("no tokens matched for " + src.name);
    summary_rows.push_back({src.name, std::to_string(list.declared_length), std::to_string(assignment.size()),
                            std::to_string(assignment.case_sensitive_count),
                            std::to_string(assignment.case_insensitive_count),
                            std::to_string(assignment.unmatched.size()), std::to_string(assignment.displaced.size())});
  }
  detail::write_output(c, report, files::kAssignmentSummary, [&](std::ostream& o) {
    text::write_row(o, {"attribute", "word_list_length", "tokens_assigned", "case_sensitive", "case_insensitive",
                        "unmatched", "displaced"});
    for (const auto& r : summary_rows) text::write_row(o, r);
  });
  update_manifest(c, "annotate", inputs, report.outputs);
  return report;
}

/// Regenerates summary tables and per-attribute scatter plots from the
/// results file and the cluster model.
inline StageReport cmd_report(const RunConfig& c) {
  validate(c, Stage::report);
  const auto model = load_model(detail::out_path(c, files::kModel));
  const auto results = load_results(detail::out_path(c, files::kResults));
  const auto summary = summarize(results, model.k);
  StageReport report;
  detail::write_output(c, report, files::kAttributeSummary, [&](std::ostream& o) { write_attribute_summary(o, summary); });
  detail::write_output(c, report, files::kHistogram, [&](std::ostream& o) { write_histogram(o, summary); });
  for (const auto& a : summary.attributes) {
    std::vector<SensitivityResult> rows;
    std::copy_if(results.begin(), results.end(), std::back_inserter(rows),
                 [&](const SensitivityResult& r) { return r.attribute == a.attribute; });
    for (auto order : {ClusterOrder::by_index, ClusterOrder::by_size}) {
      const auto name = files::scatter(a.attribute, order);
      emit_cluster_scatter(rows, model.sizes, order, detail::out_path(c, name), "Results for " + a.attribute);
      report.outputs.push_back(name);
      report.outputs.push_back(fs::path(name).replace_extension(".csv").string());
    }
  }
  update_manifest(c, "report", {}, report.outputs);
  return report;
}

/// Runs every (cluster, attribute) sensitivity test, then the report stage.
inline StageReport cmd_test(const RunConfig& c) {
  validate(c, Stage::test);
  const auto model = load_model(detail::out_path(c, files::kModel));
  StageReport report;
  if (c.n_samples < 1000) {
    report.warnings.push_back("only " + std::to_string(c.n_samples) +
                              " null samples per test; the minimum of so few draws is a weak threshold");
  }
  std::vector<BinnedAttribute> binned;
  for (const auto& src : c.attributes) {
    auto in = text::open_input(detail::out_path(c, files::assignment(src.name)));
    const auto assignment = read_assignment(in, src.name);
    if (assignment.assigned.empty()) {
      report.warnings.push_back("attribute " + src.name + " has no assigned tokens; skipped");
      continue;
    }
    for (const auto& t : assignment.assigned) {
      if (t.token_id >= model.rows()) throw FormatError("assignment for " + src.name + " references unknown token");
    }
    binned.push_back(bin_values(assignment));
  }
  if (binned.empty()) throw ConfigError("no attribute has assigned tokens");

  SensitivityOptions opt;
  opt.n_samples = c.n_samples;
  opt.seed = c.seed;
  opt.min_annotated = c.min_annotated;
  opt.threads = c.threads;
  const auto results = test_all(model, binned, opt);
  detail::write_output(c, report, files::kResults, [&](std::ostream& o) { write_results(o, results); });

  detail::write_output(c, report, files::kInformation, [&](std::ostream& o) {
    text::write_row(o, {"attribute", "h_clust", "h_cat", "mutual_information", "nmi"});
    for (const auto& b : binned) {
      const auto info = mutual_information(joint_distribution(model, b));
      text::write_row(o, {b.attribute, text::format_double(info.h_clust), text::format_double(info.h_cat),
                          text::format_double(info.mutual_information), text::format_double(info.nmi)});
    }
  });

  for (const auto& req : c.cdf_plots) {
    const auto it = std::find_if(binned.begin(), binned.end(), [&](const BinnedAttribute& b) { return b.attribute == req.attribute; });
    if (it == binned.end()) continue;
    if (req.cluster_id >= model.k) {
      report.warnings.push_back("cdf plot for cluster " + std::to_string(req.cluster_id) + " skipped: k=" +
                                std::to_string(model.k));
      continue;
    }
    const auto counts = cluster_counts(model, *it)[req.cluster_id];
    if (counts.m == 0) {
      report.warnings.push_back("cdf plot for cluster " + std::to_string(req.cluster_id) + " skipped: no annotations");
      continue;
    }
    NullDistribution null;
    const auto r = sensitivity_test(counts, *it, c.n_samples, task_seed(c.seed, req.cluster_id, it->attribute),
                                    c.min_annotated, &null);
    const auto name = files::cdf(req.attribute, req.cluster_id);
    emit_cumulative_plot(null, r.observed_log_p, detail::out_path(c, name),
                         req.attribute + ", cluster " + std::to_string(req.cluster_id) + " (m=" +
                             std::to_string(r.m) + ")");
    report.outputs.push_back(name);
    report.outputs.push_back(fs::path(name).replace_extension(".csv").string());
  }

  std::vector<std::pair<std::string, std::string>> inputs;
  for (const auto& src : c.attributes) inputs.emplace_back("assignment/" + src.name, detail::out_path(c, files::assignment(src.name)));
  inputs.emplace_back("model", detail::out_path(c, files::kModel));
  update_manifest(c, "test", inputs, report.outputs);

  auto rep = cmd_report(c);
  report.outputs.insert(report.outputs.end(), rep.outputs.begin(), rep.outputs.end());
  return report;
}

/// cluster, annotate and test in sequence; inputs are validated up front.
inline StageReport cmd_pipeline(const RunConfig& c) {
  validate(c, Stage::pipeline);
  StageReport report;
  for (auto* stage : {&cmd_cluster, &cmd_annotate, &cmd_test}) {
    auto r = stage(c);
    report.outputs.insert(report.outputs.end(), r.outputs.begin(), r.outputs.end());
    report.warnings.insert(report.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  return report;
}

}  // namespace lexprobe
