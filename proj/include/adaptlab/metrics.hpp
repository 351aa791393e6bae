// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace adaptlab {

inline constexpr const char* kBleuSmoothing = "add-one on n>=2 precisions (Lin-Och), brevity penalty exp(1-r/c)";

/// Sentence-level BLEU-4 in [0, 1]. Empty candidate gives 0.
double smoothed_bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

/// Unweighted mean over languages of per-language means.
struct BleuReport {
  std::vector<double> per_example;
  std::vector<std::string> languages;  // parallel to per_example
  std::map<std::string, double> per_language;
  double corpus_mean = 0.0;
  double overall = 0.0;
  std::string smoothing = kBleuSmoothing;

  std::string to_json() const;
};

BleuReport bleu_report(const std::vector<std::vector<std::string>>& candidates,
                       const std::vector<std::vector<std::string>>& references,
                       const std::vector<std::string>& languages);

struct MrrReport {
  std::vector<double> reciprocal_ranks;
  std::vector<std::string> languages;
  std::map<std::string, double> per_language;
  double overall = 0.0;

  std::string to_json() const;
};

/// 1 / (1-based position of gold in its ranked list), aggregated like BLEU.
/// Throws when a gold id is missing from its list.
MrrReport mrr(const std::vector<std::vector<std::int64_t>>& ranked, const std::vector<std::int64_t>& gold,
              const std::vector<std::string>& languages);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold);

struct TTestResult {
  double t = 0.0;
  double p_value = 0.0;
  std::size_t df = 0;
};

/// One-sided paired t-test of H1: mean(a - b) > 0, with n - 1 degrees of
/// freedom. Zero-variance differences give p = 0 (positive mean) or p = 1
/// (negative mean); all-zero differences are an error. Pairing is per
/// element of the inputs.
TTestResult paired_one_sided_ttest(const std::vector<double>& a, const std::vector<double>& b);

/// Markdown table with one row per entry and `columns` as the header; the
/// first header cell is `corner`. Values are printed with `precision`
/// decimals after multiplying by `scale`.
std::string markdown_table(const std::string& corner, const std::vector<std::string>& columns,
                           const std::vector<std::pair<std::string, std::vector<double>>>& rows, double scale = 1.0,
                           int precision = 2);

/// Columns are the report languages followed by "Overall".
std::string bleu_markdown(const std::vector<std::pair<std::string, BleuReport>>& rows);
std::string mrr_markdown(const std::vector<std::pair<std::string, MrrReport>>& rows);

}  // namespace adaptlab
