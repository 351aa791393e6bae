// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/corpus.hpp"

#include "adaptlab/autodiff.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace adaptlab {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c == '_' || c >= 0x80) {
      word.push_back(ch);
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) throw Error("vocabulary: duplicate token '" + token + "'");
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<CorpusExample>& examples, const std::vector<std::string>& languages,
                             bool with_tags, std::size_t min_count) {
  Vocabulary v;
  for (const char* s : {"<pad>", "<s>", "</s>", "<unk>", "<mask>"}) v.add(s);
  v.languages_ = languages;
  v.has_tags_ = with_tags;
  if (with_tags) {
    for (const auto& l : languages) v.add(tag_token(l));
  }
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : examples) {
    for (const auto& t : ex.code) ++counts[t];
    for (const auto& t : ex.description) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && !v.contains(tok)) ordered.emplace_back(tok, n);
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [tok, n] : ordered) v.add(tok);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

bool Vocabulary::is_special(int id) const {
  const int n_tags = has_tags_ ? static_cast<int>(languages_.size()) : 0;
  return id >= 0 && id < kNumSpecials + n_tags;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids, bool strip_specials) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (strip_specials && is_special(i)) continue;
    out.push_back(token(i));
  }
  return out;
}

int Vocabulary::tag_id(const std::string& language) const {
  if (!has_tags_) throw Error("vocabulary: language tags are disabled");
  auto it = index_.find(tag_token(language));
  if (it == index_.end()) throw Error("vocabulary: no tag for language '" + language + "'");
  return it->second;
}

std::string Vocabulary::to_json() const {
  json j;
  j["languages"] = languages_;
  j["tags"] = has_tags_;
  j["tokens"] = tokens_;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  const json j = json::parse(text);
  Vocabulary v;
  v.languages_ = j.at("languages").get<std::vector<std::string>>();
  v.has_tags_ = j.at("tags").get<bool>();
  for (const auto& t : j.at("tokens").get<std::vector<std::string>>()) v.add(t);
  if (v.tokens_.size() < kNumSpecials || v.tokens_[kMask] != "<mask>") throw Error("vocabulary: malformed specials");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("vocabulary not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------
// JSONL

std::vector<CorpusExample> ingest_jsonl(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("corpus not found: " + path.string());
  std::vector<CorpusExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw Error(where + ": expected a JSON object");
    for (const char* field : {"language", "code", "docstring"}) {
      if (!j.contains(field)) throw Error(where + ": missing field \"" + field + "\"");
      if (!j[field].is_string()) throw Error(where + ": field \"" + std::string(field) + "\" must be a string");
    }
    CorpusExample ex;
    ex.language = j["language"].get<std::string>();
    if (!options.languages.empty() &&
        std::find(options.languages.begin(), options.languages.end(), ex.language) == options.languages.end()) {
      std::string accepted;
      for (const auto& l : options.languages) accepted += (accepted.empty() ? "" : ", ") + l;
      throw Error(where + ": unknown language '" + ex.language + "' (accepted: " + accepted + ")");
    }
    ex.code = tokenize(j["code"].get<std::string>());
    ex.description = tokenize(j["docstring"].get<std::string>());
    if (ex.code.empty()) throw Error(where + ": code is empty after tokenization");
    if (ex.description.empty()) throw Error(where + ": docstring is empty after tokenization");
    if (j.contains("id")) {
      if (!j["id"].is_number_integer()) throw Error(where + ": field \"id\" must be an integer");
      ex.id = j["id"].get<std::int64_t>();
    } else {
      ex.id = static_cast<std::int64_t>(out.size());
    }
    if (ex.code.size() > options.max_code_tokens) {
      ex.code.resize(options.max_code_tokens);
      ex.truncated = true;
    }
    if (ex.description.size() > options.max_description_tokens) {
      ex.description.resize(options.max_description_tokens);
      ex.truncated = true;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<CorpusExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& ex : examples) {
    json j;
    j["id"] = ex.id;
    j["language"] = ex.language;
    j["code"] = detokenize(ex.code);
    j["docstring"] = detokenize(ex.description);
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

std::vector<std::size_t> synthetic_sizes(std::size_t n_languages, const SyntheticOptions& options) {
  if (options.n_per_language < 1) throw Error("generate_synthetic: n_per_language must be >= 1");
  if (!(options.imbalance >= 1.0)) throw Error("generate_synthetic: imbalance must be >= 1");
  std::vector<std::size_t> sizes(n_languages);
  const double n = static_cast<double>(options.n_per_language);
  for (std::size_t i = 0; i < n_languages; ++i) {
    // Position 0 is the largest language, the last one the smallest.
    const double t = n_languages == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(n_languages - 1);
    sizes[i] = static_cast<std::size_t>(std::llround(n * std::pow(options.imbalance, 1.0 - t)));
  }
  return sizes;
}

std::vector<CorpusExample> generate_synthetic(const std::vector<MiniLangSpec>& languages,
                                              const SyntheticOptions& options) {
  const auto sizes = synthetic_sizes(languages.size(), options);
  std::vector<CorpusExample> out;
  for (std::size_t li = 0; li < languages.size(); ++li) {
    std::mt19937_64 rng(derive_seed(options.seed, li));
    for (std::size_t k = 0; k < sizes[li]; ++k) {
      auto program = generate_program(languages[li], options.knobs, rng);
      if (!program) throw Error("generate_synthetic: knobs cannot be satisfied for " + languages[li].name);
      CorpusExample ex;
      ex.language = languages[li].name;
      ex.code = std::move(program->code);
      ex.description = std::move(program->description);
      ex.id = static_cast<std::int64_t>(out.size());
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<std::string> languages_of(const std::vector<CorpusExample>& examples) {
  std::vector<std::string> out;
  for (const auto& ex : examples) {
    if (std::find(out.begin(), out.end(), ex.language) == out.end()) out.push_back(ex.language);
  }
  return out;
}

std::map<std::string, Split> split(const std::vector<CorpusExample>& examples, std::array<double, 3> fractions,
                                   std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw Error("split: fractions must be non-negative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) throw Error("split: fractions must sum to 1");
  std::map<std::string, Split> out;
  const auto langs = languages_of(examples);
  for (std::size_t li = 0; li < langs.size(); ++li) {
    std::vector<const CorpusExample*> pool;
    for (const auto& ex : examples) {
      if (ex.language == langs[li]) pool.push_back(&ex);
    }
    if (pool.size() < 3) {
      throw Error("split: language '" + langs[li] + "' has " + std::to_string(pool.size()) +
                  " examples (need at least 3)");
    }
    std::mt19937_64 rng(derive_seed(seed, li));
    std::shuffle(pool.begin(), pool.end(), rng);
    const double n = static_cast<double>(pool.size());
    const auto n_dev = static_cast<std::size_t>(std::llround(n * fractions[1]));
    const auto n_test = static_cast<std::size_t>(std::llround(n * fractions[2]));
    if (n_dev + n_test > pool.size()) throw Error("split: rounding exceeded the language size");
    const std::size_t n_train = pool.size() - n_dev - n_test;
    Split& s = out[langs[li]];
    for (std::size_t i = 0; i < pool.size(); ++i) {
      auto& dst = i < n_train ? s.train : (i < n_train + n_dev ? s.dev : s.test);
      dst.push_back(*pool[i]);
    }
    for (auto* part : {&s.train, &s.dev, &s.test}) {
      std::sort(part->begin(), part->end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    }
  }
  return out;
}

std::vector<CorpusExample> gather(const std::map<std::string, Split>& splits, Part part) {
  std::vector<CorpusExample> out;
  for (const auto& [lang, s] : splits) {
    const auto& src = part == Part::kTrain ? s.train : (part == Part::kDev ? s.dev : s.test);
    out.insert(out.end(), src.begin(), src.end());
  }
  return out;
}

}  // namespace adaptlab
