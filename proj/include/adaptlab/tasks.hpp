// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/autodiff.hpp"
#include "adaptlab/corpus.hpp"
#include "adaptlab/model.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace adaptlab {

// ---------------------------------------------------------------------------
// Sequence conventions

/// BOS [tag] code EOS, truncated so the whole sequence fits `max_len`.
std::vector<int> code_input_ids(const Vocabulary& vocab, const CorpusExample& ex, bool language_tag,
                                std::size_t max_len);
/// BOS description EOS, truncated to `max_len`.
std::vector<int> query_input_ids(const Vocabulary& vocab, const CorpusExample& ex, std::size_t max_len);
/// Description ids without BOS/EOS, at most `max_len - 1` tokens so that
/// BOS + ids and ids + EOS both fit.
std::vector<int> summary_target_ids(const Vocabulary& vocab, const CorpusExample& ex, std::size_t max_len);

// ---------------------------------------------------------------------------
// Summarization

struct SummarizationBatch {
  TokenBatch encoder;
  TokenBatch decoder_input;  // BOS y_1 .. y_n, padded
  std::vector<int> targets;  // y_1 .. y_n EOS, padded with -1; [B * T]

  /// `sources` are full encoder sequences; `summaries` carry no BOS/EOS.
  static SummarizationBatch build(const std::vector<std::vector<int>>& sources,
                                  const std::vector<std::vector<int>>& summaries);
};

/// Mean token cross-entropy over non-pad targets. Throws for encoder-only
/// models and for batches without supervised tokens.
ad::Tensor summarization_loss(TransformerModel& model, const SummarizationBatch& batch);

struct DecodeStrategy {
  /// 1 = greedy.
  std::size_t beam_size = 1;

  static DecodeStrategy greedy() { return {1}; }
  static DecodeStrategy beam(std::size_t k) { return {k}; }
};

struct Hypothesis {
  std::vector<int> tokens;  // generated ids after BOS; ends with EOS when finished
  double log_prob = 0.0;
  bool finished = false;

  double normalized_score() const { return log_prob / static_cast<double>(std::max<std::size_t>(1, tokens.size())); }
};

/// Generates up to `max_len` tokens after BOS, stopping at EOS. Beam search
/// keeps the `beam_size` best partial hypotheses by log-probability and
/// returns the finished (or max_len) hypothesis with the highest
/// length-normalized log-probability; the greedy hypothesis is always a
/// candidate, so beam(k) never scores below greedy. Ties go to the earlier
/// candidate.
Hypothesis generate_hypothesis(TransformerModel& model, const std::vector<int>& source, std::size_t max_len,
                               DecodeStrategy strategy = DecodeStrategy::greedy());
std::vector<int> generate_summary(TransformerModel& model, const std::vector<int>& source, std::size_t max_len,
                                  DecodeStrategy strategy = DecodeStrategy::greedy());

// ---------------------------------------------------------------------------
// Search

enum class SearchPooling { kMean, kFirst };

/// Pooled (and optionally L2-normalized) encoder states, [batch, d_model].
ad::Tensor embed_sequences(TransformerModel& model, const TokenBatch& batch, SearchPooling pooling = SearchPooling::kMean,
                           bool normalize = true);

/// Symmetric in-batch contrastive cross-entropy over the similarity matrix
/// queries * codes^T / temperature: the mean of the query->code and
/// code->query directions. Row i of each side is a true pair.
ad::Tensor contrastive_loss(const ad::Tensor& queries, const ad::Tensor& codes, double temperature);

struct SearchBatch {
  TokenBatch queries;
  TokenBatch codes;
  static SearchBatch build(const std::vector<std::vector<int>>& queries, const std::vector<std::vector<int>>& codes);
};

ad::Tensor search_loss(TransformerModel& model, const SearchBatch& batch, double temperature = 0.05,
                       SearchPooling pooling = SearchPooling::kMean);

struct RetrievalIndex {
  ad::Tensor embeddings;  // [N, d]
  std::vector<std::int64_t> ids;
  bool normalized = true;

  std::size_t size() const { return ids.size(); }
  /// Writes the embeddings as a checkpoint at `path` and the ids, one per
  /// line, at `path` + ".ids".
  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(const std::filesystem::path& path);
};

RetrievalIndex build_index(TransformerModel& model, const std::vector<std::vector<int>>& codes,
                           const std::vector<std::int64_t>& ids, SearchPooling pooling = SearchPooling::kMean,
                           bool normalize = true, std::size_t batch_size = 64);

/// Candidate ids by descending similarity to `query_embedding`; equal
/// similarities are ordered by ascending id.
std::vector<std::int64_t> rank_candidates(const double* query_embedding, const RetrievalIndex& index);

std::vector<std::int64_t> retrieve(TransformerModel& model, const std::vector<int>& query, const RetrievalIndex& index,
                                   SearchPooling pooling = SearchPooling::kMean);

}  // namespace adaptlab
