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

// Writes a planted synthetic corpus (vocabulary, embeddings, one norm list
// and a matching run configuration) for trying the pipeline end to end.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lexprobe/corpus_io.hpp"
#include "lexprobe/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a planted synthetic corpus"};
  std::string out_dir;
  lexprobe::PlantedSpec spec;
  app.add_option("--out", out_dir, "directory to write into")->required();
  app.add_option("--tokens", spec.tokens, "vocabulary size");
  app.add_option("--dims", spec.dims, "embedding dimensionality");
  app.add_option("--clusters", spec.clusters, "number of planted blobs");
  app.add_option("--skewed", spec.skewed_clusters, "planted blobs with a skewed attribute");
  app.add_option("--seed", spec.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto corpus = lexprobe::make_planted_corpus(spec);
    lexprobe::save_vocabulary((fs::path(out_dir) / "vocab.jsonl").string(), corpus.vocab);
    lexprobe::save_embeddings((fs::path(out_dir) / "embeddings.bin").string(), corpus.matrix);
    {
      std::ofstream norms(fs::path(out_dir) / "valence.csv");
      lexprobe::write_norm_csv(norms, corpus.norms);
    }
    nlohmann::json config = {
        {"vocab", "vocab.jsonl"},
        {"embeddings", "embeddings.bin"},
        {"out", "run"},
        {"k", spec.clusters},
        {"seed", spec.seed},
        {"samples", 10000},
        {"attributes", {{{"name", "valence"}, {"path", "valence.csv"}, {"word_col", "Word"}, {"value_col", "Value"}}}},
    };
    std::ofstream(fs::path(out_dir) / "config.json") << config.dump(2) << '\n';
    std::cout << "wrote planted corpus to " << out_dir << '\n';
  } catch (const std::exception& e) {
    std::cerr << "lexprobe-synth: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
