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

// lexprobe: cluster a static embedding space and test clusters for
// sensitivity to word-level attributes.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lexprobe/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> vocab, embeddings, out;
  std::optional<std::uint32_t> k, max_iter;
  std::optional<std::uint64_t> seed, min_annotated;
  std::optional<std::size_t> samples, top_n;
  std::optional<double> tol;
  bool normalize = false;
  std::vector<std::string> norms, word_cols, value_cols, delimiters;
  std::vector<std::string> cdf;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--vocab", o.vocab, "vocabulary file (JSON lines)");
  cmd->add_option("--embeddings", o.embeddings, "embedding matrix file");
  cmd->add_option("--out", o.out, "run directory");
  cmd->add_option("--k", o.k, "number of clusters (default 200)");
  cmd->add_option("--seed", o.seed, "master seed (default 0)");
  cmd->add_option("--samples", o.samples, "null samples per test (default 100000)");
  cmd->add_option("--min-annotated", o.min_annotated, "discount clusters with fewer annotations (default 10)");
  cmd->add_option("--max-iter", o.max_iter, "k-means iteration cap (default 300)");
  cmd->add_option("--tol", o.tol, "k-means centroid shift tolerance (default 1e-4)");
  cmd->add_flag("--normalize", o.normalize, "L2-normalise embeddings before clustering");
  cmd->add_option("--top-n", o.top_n, "terms per cluster in the listing (default 5)");
  cmd->add_option("--norm", o.norms, "attribute norm list, NAME=PATH (repeatable)");
  cmd->add_option("--word-col", o.word_cols, "word column, COL or NAME=COL (repeatable)");
  cmd->add_option("--value-col", o.value_cols, "value column, COL or NAME=COL (repeatable)");
  cmd->add_option("--delimiter", o.delimiters, "norm list delimiter, CHAR|tab or NAME=CHAR|tab (repeatable)");
  cmd->add_option("--cdf", o.cdf, "emit a null CDF plot, ATTRIBUTE:CLUSTER (repeatable)");
}

std::pair<std::string, std::string> split_assignment(const std::string& s, char sep) {
  const auto pos = s.find(sep);
  if (pos == std::string::npos) return {"", s};
  return {s.substr(0, pos), s.substr(pos + 1)};
}

lexprobe::RunConfig build_config(const Overrides& o) {
  using lexprobe::ConfigError;
  lexprobe::RunConfig c = o.config.empty() ? lexprobe::RunConfig{} : lexprobe::load_config(o.config);
  if (o.vocab) c.vocab = *o.vocab;
  if (o.embeddings) c.embeddings = *o.embeddings;
  if (o.out) c.out = *o.out;
  if (o.k) c.k = *o.k;
  if (o.seed) c.seed = *o.seed;
  if (o.samples) c.n_samples = *o.samples;
  if (o.min_annotated) c.min_annotated = *o.min_annotated;
  if (o.max_iter) c.max_iter = *o.max_iter;
  if (o.tol) c.tol = *o.tol;
  if (o.top_n) c.top_n = *o.top_n;
  if (o.normalize) c.normalize = true;
  for (const auto& n : o.norms) {
    auto [name, path] = split_assignment(n, '=');
    if (name.empty()) throw ConfigError("--norm expects NAME=PATH, got \"" + n + "\"");
    if (auto* existing = c.attribute(name)) {
      existing->path = path;
    } else {
      c.attributes.push_back({name, path, {}});
    }
  }
  auto apply = [&](const std::vector<std::string>& specs, auto setter) {
    for (const auto& s : specs) {
      auto [name, value] = split_assignment(s, '=');
      if (name.empty()) {
        for (auto& a : c.attributes) setter(a.columns, value);
      } else if (auto* a = c.attribute(name)) {
        setter(a->columns, value);
      } else {
        throw ConfigError("column override for unknown attribute \"" + name + "\"");
      }
    }
  };
  // Global forms first so per-attribute forms win regardless of flag order.
  auto globals_first = [](std::vector<std::string> v) {
    std::stable_partition(v.begin(), v.end(), [](const std::string& s) { return s.find('=') == std::string::npos; });
    return v;
  };
  apply(globals_first(o.word_cols), [](lexprobe::NormColumns& cols, const std::string& v) { cols.word = v; });
  apply(globals_first(o.value_cols), [](lexprobe::NormColumns& cols, const std::string& v) { cols.value = v; });
  apply(globals_first(o.delimiters), [](lexprobe::NormColumns& cols, const std::string& v) {
    if (v == "tab" || v == "\\t") cols.delimiter = '\t';
    else if (v.size() == 1) cols.delimiter = v[0];
    else throw ConfigError("delimiter must be a single character or \"tab\"");
  });
  for (const auto& spec : o.cdf) {
    auto [attr, cluster] = split_assignment(spec, ':');
    const auto id = lexprobe::text::parse_int<std::uint32_t>(cluster);
    if (attr.empty() || !id) throw ConfigError("--cdf expects ATTRIBUTE:CLUSTER, got \"" + spec + "\"");
    c.cdf_plots.push_back({*id, attr});
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster a static embedding space and test clusters for attribute sensitivity"};
  app.require_subcommand(1);
  app.footer("LEXPROBE_THREADS sets the worker thread count; it never changes results.");

  Overrides o;
  struct Cmd {
    const char* name;
    const char* help;
    lexprobe::StageReport (*run)(const lexprobe::RunConfig&);
  };
  const Cmd commands[] = {
      {"cluster", "fit k-means and write the model and cluster listing", &lexprobe::cmd_cluster},
      {"annotate", "match norm lists to tokens and bin their values", &lexprobe::cmd_annotate},
      {"test", "run the multinomial sensitivity tests and write results and plots", &lexprobe::cmd_test},
      {"report", "rebuild summary tables and plots from an existing results file", &lexprobe::cmd_report},
      {"pipeline", "cluster, annotate and test in one run", &lexprobe::cmd_pipeline},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, o);
    subs.emplace_back(sub, &cmd);
  }
  CLI11_PARSE(app, argc, argv);

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    try {
      const auto config = build_config(o);
      const auto report = cmd->run(config);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& f : report.outputs) std::cout << (std::filesystem::path(config.out) / f).string() << '\n';
    } catch (const lexprobe::ConfigError& e) {
      std::cerr << "lexprobe " << cmd->name << ": configuration error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "lexprobe " << cmd->name << ": " << e.what() << '\n';
      return 1;
    }
  }
  return 0;
}
