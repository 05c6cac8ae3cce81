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

// Vocabulary and embedding-matrix interchange formats.
//
// Vocabulary file (JSON lines):
//   {"vocab_size":N,"marker_convention":"U+0120"}
//   {"id":0,"surface":"<s>","leading_space":false}
//   ...
// Matrix file (little-endian):
//   "LEXPROBE" | u32 rows | u32 dims | rows*dims f32, row-major

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lexprobe/binary_io.hpp"
#include "lexprobe/error.hpp"
#include "lexprobe/text.hpp"
#include "lexprobe/utf8.hpp"

namespace lexprobe {

/// Byte-level BPE tokenizers (GPT-2, RoBERTa) mark a preceding space with U+0120.
inline constexpr char32_t kGpt2SpaceMarker = U'Ġ';

struct TokenRecord {
  std::uint32_t token_id = 0;
  std::string surface;  // marker stripped
  bool leading_space = false;
  std::string raw;      // as the tokenizer stores it

  bool operator==(const TokenRecord&) const = default;
};

struct Vocabulary {
  char32_t marker = kGpt2SpaceMarker;
  std::vector<TokenRecord> tokens;

  std::size_t size() const { return tokens.size(); }
  const TokenRecord& operator[](std::size_t i) const { return tokens[i]; }

  bool operator==(const Vocabulary&) const = default;
};

struct EmbeddingMatrix {
  std::uint32_t rows = 0;
  std::uint32_t dims = 0;
  std::vector<float> data;  // row-major

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::uint32_t r, std::uint32_t d)
      : rows(r), dims(d), data(static_cast<std::size_t>(r) * d, 0.0f) {}

  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * dims, static_cast<std::size_t>(dims)};
  }
  std::span<float> row(std::size_t i) { return {data.data() + i * dims, static_cast<std::size_t>(dims)}; }

  bool operator==(const EmbeddingMatrix&) const = default;
};

/// Splits off at most one leading marker. `raw` must be non-empty.
inline std::pair<std::string, bool> normalize_token(std::string_view raw, char32_t marker) {
  const std::string m = utf8::encode(marker);
  if (raw.starts_with(m)) return {std::string(raw.substr(m.size())), true};
  return {std::string(raw), false};
}

inline std::string denormalize_token(std::string_view surface, bool leading_space, char32_t marker) {
  return leading_space ? utf8::encode(marker) + std::string(surface) : std::string(surface);
}

inline TokenRecord make_token(std::uint32_t id, std::string_view raw, char32_t marker) {
  auto [surface, leading] = normalize_token(raw, marker);
  return TokenRecord{id, std::move(surface), leading, std::string(raw)};
}

/// Rendering used in listings: "?" stands for the leading-space marker.
inline std::string display_token(const TokenRecord& t) {
  return t.leading_space ? "?" + t.surface : t.surface;
}

inline std::string format_marker(char32_t marker) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(marker));
  return buf;
}

inline char32_t parse_marker(std::string_view s) {
  if (s.size() < 3 || !(s.starts_with("U+") || s.starts_with("u+"))) {
    throw FormatError("marker_convention must look like U+XXXX, got \"" + std::string(s) + "\"");
  }
  unsigned cp = 0;
  const auto hex = s.substr(2);
  if (hex.size() > 6) throw FormatError("marker_convention out of range: " + std::string(s));
  for (char c : hex) {
    cp <<= 4;
    if (c >= '0' && c <= '9') cp |= c - '0';
    else if (c >= 'a' && c <= 'f') cp |= c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') cp |= c - 'A' + 10;
    else throw FormatError("marker_convention is not hexadecimal: " + std::string(s));
  }
  if (cp == 0 || cp > 0x10FFFF) throw FormatError("marker_convention out of range: " + std::string(s));
  return static_cast<char32_t>(cp);
}

inline Vocabulary read_vocabulary(std::istream& in) {
  using nlohmann::json;
  std::string line;
  std::size_t line_no = 0;
  Vocabulary vocab;
  std::uint64_t declared = 0;
  bool have_header = false;
  std::vector<bool> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!rec.is_object()) throw ParseError("record is not an object", line_no);
    try {
      if (!have_header) {
        declared = rec.at("vocab_size").get<std::uint64_t>();
        vocab.marker = parse_marker(rec.at("marker_convention").get<std::string>());
        if (declared > UINT32_MAX) throw ParseError("vocab_size exceeds 2^32-1", line_no);
        vocab.tokens.resize(declared);
        seen.assign(declared, false);
        have_header = true;
        continue;
      }
      const auto id = rec.at("id").get<std::uint64_t>();
      auto surface = rec.at("surface").get<std::string>();
      const bool leading = rec.at("leading_space").get<bool>();
      if (id >= declared) {
        throw FormatError("token id " + std::to_string(id) + " outside declared vocab_size " +
                          std::to_string(declared) + " (line " + std::to_string(line_no) + ")");
      }
      if (seen[id]) {
        throw FormatError("duplicate token id " + std::to_string(id) + " (line " +
                          std::to_string(line_no) + ")");
      }
      seen[id] = true;
      auto raw = denormalize_token(surface, leading, vocab.marker);
      vocab.tokens[id] = TokenRecord{static_cast<std::uint32_t>(id), std::move(surface), leading, std::move(raw)};
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad field: ") + e.what(), line_no);
    }
  }
  if (!have_header) throw ParseError("missing header record", line_no);
  const auto present = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  if (present != declared) {
    throw FormatError("vocabulary declares " + std::to_string(declared) + " entries but contains " +
                      std::to_string(present));
  }
  return vocab;
}

inline Vocabulary load_vocabulary(const std::string& path) {
  auto in = text::open_input(path, true);
  return read_vocabulary(in);
}

inline void write_vocabulary(std::ostream& out, const Vocabulary& vocab) {
  using nlohmann::ordered_json;
  ordered_json header;
  header["vocab_size"] = vocab.tokens.size();
  header["marker_convention"] = format_marker(vocab.marker);
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    const auto& t = vocab.tokens[i];
    if (t.token_id != i) throw FormatError("token ids must be contiguous and in order");
    ordered_json rec;
    rec["id"] = t.token_id;
    rec["surface"] = t.surface;
    rec["leading_space"] = t.leading_space;
    out << rec.dump(-1, ' ', true) << '\n';
  }
}

inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  auto out = text::open_output(path, true);
  write_vocabulary(out, vocab);
  text::finish_output(out, path);
}

inline constexpr std::string_view kMatrixMagic = "LEXPROBE";

inline void write_embeddings(std::ostream& out, const EmbeddingMatrix& m) {
  out.write(kMatrixMagic.data(), kMatrixMagic.size());
  detail::write_le<std::uint32_t>(out, m.rows);
  detail::write_le<std::uint32_t>(out, m.dims);
  for (float v : m.data) detail::write_f32(out, v);
}

inline void save_embeddings(const std::string& path, const EmbeddingMatrix& m) {
  auto out = text::open_output(path, true);
  write_embeddings(out, m);
  text::finish_output(out, path);
}

inline EmbeddingMatrix read_embeddings(std::istream& in) {
  detail::expect_magic(in, kMatrixMagic);
  const auto rows = detail::read_le<std::uint32_t>(in, "matrix header");
  const auto dims = detail::read_le<std::uint32_t>(in, "matrix header");
  const std::size_t count = static_cast<std::size_t>(rows) * dims;
  std::vector<unsigned char> bytes(count * 4);
  detail::read_exact(in, reinterpret_cast<char*>(bytes.data()), bytes.size(), "matrix payload");
  detail::expect_eof(in, "matrix payload");
  EmbeddingMatrix m;
  m.rows = rows;
  m.dims = dims;
  m.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(detail::decode_le<std::uint32_t>(bytes.data() + 4 * i));
    if (!std::isfinite(v)) {
      throw FormatError("non-finite value at row " + std::to_string(i / dims) + ", column " +
                        std::to_string(i % dims));
    }
    m.data[i] = v;
  }
  return m;
}

inline EmbeddingMatrix load_embeddings(const std::string& path) {
  auto in = text::open_input(path, true);
  return read_embeddings(in);
}

}  // namespace lexprobe
