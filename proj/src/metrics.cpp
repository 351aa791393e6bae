// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/metrics.hpp"

#include "adaptlab/autodiff.hpp"

#include <json.hpp>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace adaptlab {

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Gram, std::size_t> out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[Gram(tokens.begin() + i, tokens.begin() + i + n)];
  return out;
}

std::map<std::string, double> mean_by_language(const std::vector<double>& values,
                                               const std::vector<std::string>& languages, double& overall) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [sum, n] = acc[languages[i]];
    sum += values[i];
    ++n;
  }
  std::map<std::string, double> out;
  overall = 0.0;
  for (const auto& [lang, sn] : acc) {
    out[lang] = sn.first / static_cast<double>(sn.second);
    overall += out[lang];
  }
  if (!out.empty()) overall /= static_cast<double>(out.size());
  return out;
}

}  // namespace

double smoothed_bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (reference.empty()) throw Error("smoothed_bleu4: empty reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
    const std::size_t possible = candidate.size() >= n ? candidate.size() - n + 1 : 0;
    double num = static_cast<double>(matches), den = static_cast<double>(possible);
    if (n >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0) return 0.0;  // no unigram overlap
    log_sum += std::log(num / den);
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

BleuReport bleu_report(const std::vector<std::vector<std::string>>& candidates,
                       const std::vector<std::vector<std::string>>& references,
                       const std::vector<std::string>& languages) {
  if (candidates.size() != references.size() || candidates.size() != languages.size()) {
    throw Error("bleu_report: candidates, references and languages differ in length");
  }
  BleuReport r;
  r.languages = languages;
  for (std::size_t i = 0; i < candidates.size(); ++i) r.per_example.push_back(smoothed_bleu4(candidates[i], references[i]));
  double sum = 0.0;
  for (double v : r.per_example) sum += v;
  r.corpus_mean = r.per_example.empty() ? 0.0 : sum / static_cast<double>(r.per_example.size());
  r.per_language = mean_by_language(r.per_example, languages, r.overall);
  return r;
}

std::string BleuReport::to_json() const {
  nlohmann::json j;
  j["metric"] = "smoothed_bleu4";
  j["smoothing"] = smoothing;
  j["scale"] = "[0,1]";
  j["per_language"] = per_language;
  j["corpus_mean"] = corpus_mean;
  j["overall"] = overall;
  j["per_example"] = per_example;
  j["languages"] = languages;
  return j.dump(2);
}

MrrReport mrr(const std::vector<std::vector<std::int64_t>>& ranked, const std::vector<std::int64_t>& gold,
              const std::vector<std::string>& languages) {
  if (ranked.size() != gold.size() || ranked.size() != languages.size()) {
    throw Error("mrr: ranked lists, gold ids and languages differ in length");
  }
  MrrReport r;
  r.languages = languages;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    auto it = std::find(ranked[q].begin(), ranked[q].end(), gold[q]);
    if (it == ranked[q].end()) {
      throw Error("mrr: gold id " + std::to_string(gold[q]) + " missing from the pool of query " + std::to_string(q));
    }
    r.reciprocal_ranks.push_back(1.0 / static_cast<double>(it - ranked[q].begin() + 1));
  }
  r.per_language = mean_by_language(r.reciprocal_ranks, languages, r.overall);
  return r;
}

std::string MrrReport::to_json() const {
  nlohmann::json j;
  j["metric"] = "mrr";
  j["per_language"] = per_language;
  j["overall"] = overall;
  j["reciprocal_ranks"] = reciprocal_ranks;
  j["languages"] = languages;
  return j.dump(2);
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
  if (predicted.size() != gold.size()) throw Error("accuracy: length mismatch");
  if (gold.empty()) throw Error("accuracy: no examples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

TTestResult paired_one_sided_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("paired_one_sided_ttest: samples differ in length");
  if (a.size() < 2) throw Error("paired_one_sided_ttest: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= static_cast<double>(n);
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) {
    throw Error("paired_one_sided_ttest: all differences are zero");
  }
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  TTestResult r;
  r.df = n - 1;
  if (ss == 0.0) {
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = mean > 0 ? 0.0 : 1.0;
    return r;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t_distribution<double> dist(static_cast<double>(r.df));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

std::string markdown_table(const std::string& corner, const std::vector<std::string>& columns,
                           const std::vector<std::pair<std::string, std::vector<double>>>& rows, double scale,
                           int precision) {
  std::ostringstream out;
  out << "| " << corner;
  for (const auto& c : columns) out << " | " << c;
  out << " |\n|---";
  for (std::size_t i = 0; i < columns.size(); ++i) out << "|---:";
  out << "|\n";
  char buf[64];
  for (const auto& [label, values] : rows) {
    if (values.size() != columns.size()) throw Error("markdown_table: row '" + label + "' has the wrong width");
    out << "| " << label;
    for (double v : values) {
      std::snprintf(buf, sizeof buf, "%.*f", precision, v * scale);
      out << " | " << buf;
    }
    out << " |\n";
  }
  return out.str();
}

namespace {

template <typename Report>
std::string language_table(const std::vector<std::pair<std::string, Report>>& rows, const std::string& corner) {
  std::vector<std::string> columns;
  for (const auto& [label, r] : rows) {
    for (const auto& [lang, v] : r.per_language) {
      if (std::find(columns.begin(), columns.end(), lang) == columns.end()) columns.push_back(lang);
    }
  }
  std::vector<std::pair<std::string, std::vector<double>>> table;
  for (const auto& [label, r] : rows) {
    std::vector<double> values;
    for (const auto& lang : columns) {
      auto it = r.per_language.find(lang);
      values.push_back(it == r.per_language.end() ? std::nan("") : it->second);
    }
    values.push_back(r.overall);
    table.emplace_back(label, std::move(values));
  }
  columns.push_back("Overall");
  return markdown_table(corner, columns, table, 100.0, 2);
}

}  // namespace

std::string bleu_markdown(const std::vector<std::pair<std::string, BleuReport>>& rows) {
  return language_table(rows, "BLEU-4 (x100)");
}

std::string mrr_markdown(const std::vector<std::pair<std::string, MrrReport>>& rows) {
  return language_table(rows, "MRR (x100)");
}

}  // namespace adaptlab
