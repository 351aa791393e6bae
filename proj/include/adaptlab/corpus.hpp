// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/minilang.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adaptlab {

/// splitmix64 finalizer over (base, salt); used for per-language and
/// per-seed stream derivation.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

struct CorpusExample {
  std::string language;
  std::vector<std::string> code;
  std::vector<std::string> description;
  std::int64_t id = 0;
  bool truncated = false;
};

/// Splits on whitespace; every character that is not alphanumeric, '_' or
/// part of a multi-byte UTF-8 sequence becomes its own token.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  /// Builds from the code and description tokens of `examples`, ordered by
  /// descending frequency then lexicographically. Language tags (one per
  /// entry of `languages`) follow the specials when `with_tags` is set.
  static Vocabulary build(const std::vector<CorpusExample>& examples, const std::vector<std::string>& languages,
                          bool with_tags, std::size_t min_count = 1);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  /// Drops specials and tags when `strip_specials` is set.
  std::vector<std::string> decode(const std::vector<int>& ids, bool strip_specials = true) const;

  bool has_tags() const { return has_tags_; }
  const std::vector<std::string>& languages() const { return languages_; }
  /// Tag token id; throws when tags are disabled or the language is unknown.
  int tag_id(const std::string& language) const;
  bool is_special(int id) const;

  static std::string tag_token(const std::string& language) { return "<lang:" + language + ">"; }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> languages_;
  bool has_tags_ = false;
  void add(const std::string& token);
};

struct IngestOptions {
  /// Accepted language tags; empty accepts any.
  std::vector<std::string> languages;
  std::size_t max_code_tokens = 253;
  std::size_t max_description_tokens = 62;
};

/// Reads CodeSearchNet-style JSONL (language, code, docstring, optional id).
std::vector<CorpusExample> ingest_jsonl(const std::filesystem::path& path, const IngestOptions& options = {});
void write_jsonl(const std::filesystem::path& path, const std::vector<CorpusExample>& examples);

struct SyntheticOptions {
  std::size_t n_per_language = 500;
  std::uint64_t seed = 0;
  /// Ratio between the largest (first) and smallest (last) language. The
  /// last language gets n_per_language examples; sizes in between follow a
  /// geometric ramp.
  double imbalance = 1.0;
  ProgramKnobs knobs;
};

/// Per-language example counts implied by `options` for `n_languages`.
std::vector<std::size_t> synthetic_sizes(std::size_t n_languages, const SyntheticOptions& options);

/// Ids are assigned consecutively in language order.
std::vector<CorpusExample> generate_synthetic(const std::vector<MiniLangSpec>& languages,
                                              const SyntheticOptions& options);

struct Split {
  std::vector<CorpusExample> train, dev, test;
};

/// Stratified by language: within each language, examples are shuffled and
/// cut at round(n * dev) and round(n * test); train takes the rest.
std::map<std::string, Split> split(const std::vector<CorpusExample>& examples, std::array<double, 3> fractions,
                                   std::uint64_t seed);

enum class Part { kTrain, kDev, kTest };
/// Concatenates one part across languages (sorted by language name).
std::vector<CorpusExample> gather(const std::map<std::string, Split>& splits, Part part);

/// Languages of `examples` in first-appearance order.
std::vector<std::string> languages_of(const std::vector<CorpusExample>& examples);

}  // namespace adaptlab
