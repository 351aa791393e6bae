// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/autodiff.hpp"
#include "adaptlab/corpus.hpp"
#include "adaptlab/minilang.hpp"
#include "adaptlab/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace adaptlab {

enum class ProbeTask { kLen, kCpx, kTyp };

std::string to_string(ProbeTask task);
ProbeTask probe_task_from_string(const std::string& name);
std::size_t num_classes(ProbeTask task);

// ---------------------------------------------------------------------------
// Static analysis

/// Bins [0,50), [50,100), [100,150), [150,200), [200,inf). Callers pass code
/// without any language-tag token.
int label_len(const std::vector<std::string>& code);

struct ParseResult {
  bool ok = false;
  std::string error;
  int decisions = 0;
  /// Token positions parsed in a type slot, and how many of them hold a
  /// word outside the language's type set.
  std::vector<std::size_t> type_positions;
  std::size_t invalid_types = 0;
};

/// Recursive-descent parser for the shared mini-language grammar. A word in
/// a type slot that is not a type is accepted but counted as invalid.
ParseResult parse_program(const MiniLangSpec& lang, const std::vector<std::string>& code);

/// Counts decision tokens of `lang` without parsing.
int count_decisions_scan(const MiniLangSpec& lang, const std::vector<std::string>& code);
/// Scan over the union of all built-in languages' decision tokens plus
/// common spellings (if, while, for, case, &&, ||, and, or), for code of
/// unknown origin.
int count_decisions_foreign(const std::vector<std::string>& code);

/// Decision-point count clamped to 9. Falls back to the token scan when the
/// code does not parse (or `lang` is null) and `allow_fallback` is set.
int label_cpx(const MiniLangSpec* lang, const std::vector<std::string>& code, bool allow_fallback = true);

struct TypeMutation {
  std::vector<std::string> code;
  std::size_t position = 0;
  std::string original, replacement;
};

/// Replaces one uniformly chosen type occurrence with a uniformly chosen
/// identifier that is not a type of `lang`.
TypeMutation mutate_types(const MiniLangSpec& lang, const std::vector<std::string>& code, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Datasets

struct ProbeExample {
  std::string language;
  std::vector<std::string> code;
  ProbeTask task = ProbeTask::kLen;
  int label = 0;
};

struct ProbeDataset {
  ProbeTask task = ProbeTask::kLen;
  std::vector<ProbeExample> examples;
  std::vector<std::size_t> class_counts;
  std::vector<std::size_t> train_index, test_index;
};

struct ProbeDatasetOptions {
  std::size_t size = 2000;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  /// Upper bound on code tokens (keeps examples inside the model window).
  std::size_t max_tokens = 250;
};

/// Class-balanced (per-class counts within one of each other), drawn
/// round-robin over `languages`, with a class-stratified train/test split.
ProbeDataset build_probe_dataset(ProbeTask task, const std::vector<MiniLangSpec>& languages,
                                 const ProbeDatasetOptions& options);

void write_probe_jsonl(const std::filesystem::path& path, const ProbeDataset& dataset);

/// Class-stratified split: round(test_fraction * count) of each class go to
/// test.
void stratified_split(const std::vector<int>& labels, double test_fraction, std::uint64_t seed,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& test);

// ---------------------------------------------------------------------------
// Embeddings and probes

enum class Pooling { kMean, kFirst };

/// Pooled hidden states of every layer (0 = embedding output) for each
/// example's code, encoded as BOS code EOS in eval mode. Returns one [N, d]
/// tensor per layer.
std::vector<ad::Tensor> extract_all_layers(TransformerModel& model, const Vocabulary& vocab,
                                           const std::vector<ProbeExample>& examples, Pooling pooling = Pooling::kMean,
                                           std::size_t batch_size = 32);
ad::Tensor extract_embeddings(TransformerModel& model, const Vocabulary& vocab,
                              const std::vector<ProbeExample>& examples, std::size_t layer,
                              Pooling pooling = Pooling::kMean);

struct LinearProbe {
  // Acts on standardized features: logits = ((x - mean) / scale) W + b.
  std::vector<double> mean, scale;
  std::vector<double> weight;  // [d, classes] row-major
  std::vector<double> bias;
  std::size_t dim = 0, classes = 0;

  std::vector<double> logits(const double* x) const;
  int predict(const double* x) const;
};

struct ProbeOptions {
  double learning_rate = 0.5;
  std::size_t max_epochs = 2000;
  double tolerance = 1e-6;
  double l2 = 0.0;
};

struct ProbeResult {
  LinearProbe probe;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t epochs = 0;
};

/// Softmax regression by full-batch gradient descent from zero weights;
/// stops when the loss changes by less than `tolerance` or at `max_epochs`.
ProbeResult train_probe(const ad::Tensor& embeddings, const std::vector<int>& labels, std::size_t classes,
                        const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                        const ProbeOptions& options = {});

/// Test accuracy per layer (length n_layers + 1).
std::vector<double> layer_sweep(TransformerModel& model, const Vocabulary& vocab, const ProbeDataset& dataset,
                                const ProbeOptions& options = {});

void write_sweep_csv(const std::filesystem::path& path, const std::vector<double>& accuracy);

}  // namespace adaptlab
