// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/adapter.hpp"
#include "adaptlab/corpus.hpp"
#include "adaptlab/metrics.hpp"
#include "adaptlab/model.hpp"
#include "adaptlab/tasks.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace adaptlab {

/// FNV-1a 64 of `text`, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

// ---------------------------------------------------------------------------
// MLM pre-training

struct PretrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double mask_rate = 0.15;
  std::uint64_t seed = 0;
  /// Sequences (BOS tokens EOS) are cut to this many ids.
  std::size_t max_len = 128;

  nlohmann::json to_json() const;
};

/// Encoder input with masked positions replaced (80% MASK, 10% random
/// non-special token, 10% kept) and per-position targets (-1 = unsupervised).
struct MaskedSequence {
  std::vector<int> input;
  std::vector<int> targets;
};

/// Masks round(rate * n) of the n maskable (non-special) positions, at least
/// one when rate > 0.
MaskedSequence mask_tokens(const std::vector<int>& ids, const Vocabulary& vocab, double rate, std::mt19937_64& rng);

/// Masked-LM loss for one batch: encoder MLM through the tied LM head, plus,
/// for encoder-decoder models, the decoder's teacher-forced reconstruction
/// loss on the same masked positions (the two are averaged). Throws when no
/// position is masked.
ad::Tensor mlm_loss(TransformerModel& model, const std::vector<MaskedSequence>& batch,
                    const std::vector<std::vector<int>>& originals);

struct PretrainResult {
  std::vector<double> losses;  // one per step
  double seconds = 0.0;
};

/// Trains on code sequences and description sequences of `corpus` (both
/// sides, no language tags). Requires at least two languages.
PretrainResult pretrain_mlm(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& corpus,
                            const PretrainConfig& config);

// ---------------------------------------------------------------------------
// Fine-tuning regimes

enum class Tuning { kFull, kAdapter, kAdapterMoe };
enum class Batching { kMultilingual, kMonolingual };
enum class TaskKind { kSummarization, kSearch };

std::string to_string(Tuning t);
std::string to_string(Batching b);
std::string to_string(TaskKind t);
Tuning tuning_from_string(const std::string& s);
Batching batching_from_string(const std::string& s);
TaskKind task_from_string(const std::string& s);

struct DataScope {
  enum class Kind { kMonolingual, kMultilingual, kCross };
  Kind kind = Kind::kMultilingual;
  std::vector<std::string> train_languages;
  std::vector<std::string> eval_languages;

  static DataScope monolingual(const std::string& language);
  static DataScope multilingual(const std::vector<std::string>& languages);
  static DataScope cross(const std::string& train_language, const std::string& eval_language);
};

struct Regime {
  Tuning tuning = Tuning::kAdapter;
  DataScope scope;
  Batching batching = Batching::kMultilingual;
  bool language_tags = false;
  std::optional<std::size_t> samples_per_language;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct TrainConfig {
  std::size_t epochs = 10;
  /// When nonzero, replaces `epochs`: training runs this many optimizer steps
  /// (the last epoch may be partial). Dev loss is still checked per epoch.
  std::size_t steps = 0;
  std::size_t batch_size = 16;
  double lr_full = 3e-4;
  double lr_adapter = 1e-3;
  /// Epochs without dev-loss improvement before stopping; 0 disables.
  std::size_t patience = 3;
  std::size_t max_source_len = 128;
  std::size_t max_summary_len = 32;
  double temperature = 0.05;
  SearchPooling pooling = SearchPooling::kMean;
  std::size_t beam_size = 1;
  /// Cap on dev / test examples per language (0 = all), taken in id order.
  std::size_t eval_limit = 0;
  AdapterConfig adapter;

  nlohmann::json to_json() const;
};

struct RunRecord {
  Regime regime;
  TaskKind task = TaskKind::kSummarization;
  std::string config_hash;
  std::string base_hash;  // hash of the base weights before tuning
  std::string base_hash_after;
  ParameterReport parameters;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> dev_loss;
  std::size_t best_epoch = 0;
  std::optional<BleuReport> bleu;
  std::optional<MrrReport> mrr;
  double seconds = 0.0;
  std::map<std::string, std::string> checkpoints;

  /// Overall BLEU or MRR, whichever the task produced.
  double overall() const;
  nlohmann::json to_json() const;
};

/// Mini-batch index lists over `examples`. Multilingual shuffles the
/// combined set and cuts it into batches; monolingual cuts each language's
/// shuffled examples into batches and shuffles the batch order.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<CorpusExample>& examples, std::size_t batch_size,
                                                   Batching batching, std::mt19937_64& rng);

struct TaskData {
  std::vector<CorpusExample> train, dev, test;
};

/// Applies the regime's scope and low-resource sampling to per-language
/// splits. Train/dev come from the train languages, test from the eval
/// languages.
TaskData select_data(const std::map<std::string, Split>& splits, const Regime& regime, std::size_t eval_limit);

/// Runs the epoch loop on an already prepared model. For adapter regimes the
/// model must carry an attached bank and `trainable` must be its view.
/// Restores the best-dev-loss weights at the end.
void train_task(TransformerModel& model, const ad::NamedTensors& trainable, const Vocabulary& vocab,
                const TaskData& data, const Regime& regime, TaskKind task, const TrainConfig& config,
                RunRecord& record);

ad::Tensor task_loss(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& examples,
                     const std::vector<std::size_t>& rows, TaskKind task, bool language_tags,
                     const TrainConfig& config);

BleuReport evaluate_summarization(TransformerModel& model, const Vocabulary& vocab,
                                  const std::vector<CorpusExample>& examples, bool language_tags,
                                  const TrainConfig& config);
/// Each language's examples form its own candidate pool.
MrrReport evaluate_search(TransformerModel& model, const Vocabulary& vocab, const std::vector<CorpusExample>& examples,
                          bool language_tags, const TrainConfig& config);

struct FinetuneResult {
  RunRecord record;
  TransformerModel model;
  std::shared_ptr<AdapterBank> bank;  // null for full tuning
};

/// Clones `base`, injects and freezes for adapter regimes, trains and
/// evaluates on the test split of the eval languages.
FinetuneResult finetune(const TransformerModel& base, const Vocabulary& vocab,
                        const std::map<std::string, Split>& splits, const Regime& regime, TaskKind task,
                        const TrainConfig& config);

// ---------------------------------------------------------------------------
// Low-resource and cross-lingual protocols

/// k examples per language, uniform without replacement; order follows the
/// input. Throws when a language has fewer than k.
std::vector<CorpusExample> low_resource_sample(const std::vector<CorpusExample>& examples, std::size_t k,
                                               std::uint64_t seed);

/// Mean of fn(seed) over `seeds`.
double average_over_seeds(const std::vector<std::uint64_t>& seeds, const std::function<double(std::uint64_t)>& fn);

using Matrix = std::vector<std::vector<double>>;

/// (adapter - full) / full elementwise.
Matrix relative_matrix(const Matrix& adapter, const Matrix& full);

struct CrossLingualResult {
  std::vector<std::string> languages;
  Matrix adapter, full, relative;  // [train language][eval language]
};

/// Trains one adapter and one full model per training language (regime
/// template supplies batching, tags and seed) and evaluates each on every
/// language.
CrossLingualResult cross_lingual_matrix(const TransformerModel& base, const Vocabulary& vocab,
                                        const std::map<std::string, Split>& splits, const Regime& regime_template,
                                        const std::vector<std::string>& languages, TaskKind task,
                                        const TrainConfig& config);

/// Rows are training languages, columns evaluation languages.
void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& languages,
                      const Matrix& matrix);

}  // namespace adaptlab
