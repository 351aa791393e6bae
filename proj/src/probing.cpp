// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/probing.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace adaptlab {

std::string to_string(ProbeTask task) {
  switch (task) {
    case ProbeTask::kLen: return "LEN";
    case ProbeTask::kCpx: return "CPX";
    case ProbeTask::kTyp: return "TYP";
  }
  return "?";
}

ProbeTask probe_task_from_string(const std::string& name) {
  std::string up = name;
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "LEN") return ProbeTask::kLen;
  if (up == "CPX") return ProbeTask::kCpx;
  if (up == "TYP") return ProbeTask::kTyp;
  throw Error("unknown probe task '" + name + "' (expected LEN, CPX or TYP)");
}

std::size_t num_classes(ProbeTask task) {
  switch (task) {
    case ProbeTask::kLen: return 5;
    case ProbeTask::kCpx: return 10;
    case ProbeTask::kTyp: return 2;
  }
  return 0;
}

int label_len(const std::vector<std::string>& code) {
  return static_cast<int>(std::min<std::size_t>(code.size() / 50, 4));
}

// ---------------------------------------------------------------------------
// Parser

namespace {

bool is_word(const std::string& t) {
  return !t.empty() && (std::isalnum(static_cast<unsigned char>(t[0])) || t[0] == '_');
}

bool is_number(const std::string& t) {
  return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

struct ParseError {
  std::string message;
};

class Parser {
 public:
  Parser(const MiniLangSpec& lang, const std::vector<std::string>& code) : lang_(lang), toks_(code) {
    for (const auto& k : lang.keywords()) reserved_.insert(k);
  }

  ParseResult run() {
    ParseResult r;
    try {
      function();
      if (pos_ != toks_.size()) fail("trailing tokens");
      r.ok = true;
    } catch (const ParseError& e) {
      r.error = e.message;
    }
    r.decisions = decisions_;
    r.type_positions = type_positions_;
    r.invalid_types = invalid_;
    return r;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError{what + " at token " + std::to_string(pos_) +
                     (pos_ < toks_.size() ? " ('" + toks_[pos_] + "')" : " (end of input)")};
  }
  const std::string& peek(std::size_t ahead = 0) const {
    static const std::string kEnd;
    return pos_ + ahead < toks_.size() ? toks_[pos_ + ahead] : kEnd;
  }
  bool at(const std::string& t) const { return !t.empty() && peek() == t; }
  void expect(const std::string& t) {
    if (!at(t)) fail("expected '" + t + "'");
    ++pos_;
  }
  bool is_name(const std::string& t) const { return is_word(t) && !is_number(t) && !reserved_.count(t); }
  void name() {
    if (!is_name(peek()) || lang_.is_type(peek())) fail("expected a name");
    ++pos_;
  }
  void type() {
    if (!is_name(peek())) fail("expected a type");
    type_positions_.push_back(pos_);
    if (!lang_.is_type(peek())) ++invalid_;
    ++pos_;
  }
  void typed_name() {
    if (lang_.type_after_name) {
      name();
      expect(":");
      type();
    } else {
      type();
      name();
    }
  }

  void function() {
    expect(lang_.kw_function);
    name();
    expect("(");
    if (!at(")")) {
      typed_name();
      while (at(",")) {
        ++pos_;
        typed_name();
      }
    }
    expect(")");
    expect(":");
    type();
    block();
  }

  void block() {
    expect(lang_.block_open);
    while (!at(lang_.block_close)) {
      if (pos_ >= toks_.size()) fail("unterminated block");
      stmt();
    }
    ++pos_;
  }

  void atom() {
    const std::string& t = peek();
    if (is_number(t)) {
      ++pos_;
      return;
    }
    if (!is_name(t) || lang_.is_type(t)) fail("expected an operand");
    ++pos_;
    if (at("(")) call_args();
  }

  void call_args() {
    expect("(");
    if (!at(")")) {
      expr();
      while (at(",")) {
        ++pos_;
        expr();
      }
    }
    expect(")");
  }

  void expr() {
    atom();
    while (at("+") || at("-") || at("*")) {
      ++pos_;
      atom();
    }
  }

  void comparison() {
    expr();
    if (!at("<") && !at(">")) fail("expected a comparison");
    ++pos_;
    expr();
  }

  void cond() {
    comparison();
    while (at(lang_.op_and) || at(lang_.op_or)) {
      ++decisions_;
      ++pos_;
      comparison();
    }
  }

  void stmt() {
    const std::string& t = peek();
    if (t == lang_.kw_function) {
      function();
    } else if (t == lang_.kw_if || t == lang_.kw_while) {
      const bool is_if = t == lang_.kw_if;
      ++decisions_;
      ++pos_;
      expect("(");
      cond();
      expect(")");
      block();
      if (is_if && at(lang_.kw_else)) {
        ++pos_;
        block();
      }
    } else if (t == lang_.kw_for) {
      ++decisions_;
      ++pos_;
      name();
      expect(lang_.kw_in);
      name();
      block();
    } else if (t == lang_.kw_switch) {
      ++pos_;
      expect("(");
      expr();
      expect(")");
      expect(lang_.block_open);
      if (!at(lang_.kw_case)) fail("switch without case");
      while (at(lang_.kw_case)) {
        ++decisions_;
        ++pos_;
        if (!is_number(peek())) fail("expected a case label");
        ++pos_;
        expect(":");
        while (!at(lang_.kw_case) && !at(lang_.block_close)) {
          if (pos_ >= toks_.size()) fail("unterminated switch");
          stmt();
        }
      }
      expect(lang_.block_close);
    } else if (t == lang_.kw_return) {
      ++pos_;
      expr();
      expect(lang_.terminator);
    } else if (!lang_.kw_decl.empty() && t == lang_.kw_decl) {
      ++pos_;
      declaration_rest();
    } else if (lang_.kw_decl.empty() && !lang_.type_after_name && is_name(t) && is_name(peek(1)) &&
               peek(2) == "=") {
      declaration_rest();
    } else if (is_name(t) && peek(1) == "=") {
      name();
      ++pos_;
      expr();
      expect(lang_.terminator);
    } else if (is_name(t) && peek(1) == "(") {
      ++pos_;
      call_args();
      expect(lang_.terminator);
    } else {
      fail("expected a statement");
    }
  }

  void declaration_rest() {
    typed_name();
    expect("=");
    expr();
    expect(lang_.terminator);
  }

  const MiniLangSpec& lang_;
  const std::vector<std::string>& toks_;
  std::set<std::string> reserved_;
  std::size_t pos_ = 0;
  int decisions_ = 0;
  std::vector<std::size_t> type_positions_;
  std::size_t invalid_ = 0;
};

}  // namespace

ParseResult parse_program(const MiniLangSpec& lang, const std::vector<std::string>& code) {
  return Parser(lang, code).run();
}

int count_decisions_scan(const MiniLangSpec& lang, const std::vector<std::string>& code) {
  const auto decision = lang.decision_tokens();
  return static_cast<int>(std::count_if(code.begin(), code.end(), [&](const std::string& t) {
    return std::find(decision.begin(), decision.end(), t) != decision.end();
  }));
}

int count_decisions_foreign(const std::vector<std::string>& code) {
  static const std::set<std::string> tokens = [] {
    std::set<std::string> s{"if", "while", "for", "case", "and", "or", "elif", "catch"};
    for (const auto& l : builtin_languages()) {
      for (const auto& t : l.decision_tokens()) s.insert(t);
    }
    return s;
  }();
  int n = 0;
  for (std::size_t i = 0; i < code.size(); ++i) {
    // "&&" and "||" arrive as two punctuation tokens.
    if ((code[i] == "&" || code[i] == "|") && i + 1 < code.size() && code[i + 1] == code[i]) {
      ++n;
      ++i;
    } else if (tokens.count(code[i])) {
      ++n;
    }
  }
  return n;
}

int label_cpx(const MiniLangSpec* lang, const std::vector<std::string>& code, bool allow_fallback) {
  int n = 0;
  if (lang) {
    auto r = parse_program(*lang, code);
    if (r.ok) {
      n = r.decisions;
    } else if (allow_fallback) {
      n = count_decisions_scan(*lang, code);
    } else {
      throw Error("label_cpx: code does not parse as " + lang->name + ": " + r.error);
    }
  } else {
    if (!allow_fallback) throw Error("label_cpx: no grammar available and fallback disabled");
    n = count_decisions_foreign(code);
  }
  return std::min(n, 9);
}

TypeMutation mutate_types(const MiniLangSpec& lang, const std::vector<std::string>& code, std::uint64_t seed) {
  std::vector<std::size_t> positions;
  auto parsed = parse_program(lang, code);
  if (parsed.ok) {
    for (auto p : parsed.type_positions) {
      if (lang.is_type(code[p])) positions.push_back(p);
    }
  } else {
    for (std::size_t i = 0; i < code.size(); ++i) {
      if (lang.is_type(code[i])) positions.push_back(i);
    }
  }
  if (positions.empty()) throw Error("mutate_types: no type tokens present");
  std::vector<std::string> candidates;
  for (const auto& id : identifier_pool()) {
    if (!lang.is_type(id)) candidates.push_back(id);
  }
  std::mt19937_64 rng(seed);
  TypeMutation m;
  m.code = code;
  m.position = positions[std::uniform_int_distribution<std::size_t>(0, positions.size() - 1)(rng)];
  m.original = code[m.position];
  m.replacement = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
  m.code[m.position] = m.replacement;
  return m;
}

// ---------------------------------------------------------------------------
// Datasets

void stratified_split(const std::vector<int>& labels, double test_fraction, std::uint64_t seed,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw Error("stratified_split: test_fraction must lie in [0,1)");
  train.clear();
  test.clear();
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  std::mt19937_64 rng(seed);
  for (int c = 0; c <= max_label; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

ProbeDataset build_probe_dataset(ProbeTask task, const std::vector<MiniLangSpec>& languages,
                                 const ProbeDatasetOptions& options) {
  if (languages.empty()) throw Error("build_probe_dataset: no languages");
  const std::size_t classes = num_classes(task);
  if (options.size < classes) throw Error("build_probe_dataset: size smaller than the number of classes");
  if (task == ProbeTask::kLen && options.max_tokens <= 200) {
    throw Error("build_probe_dataset: LEN needs max_tokens > 200 to populate the last bin");
  }
  ProbeDataset ds;
  ds.task = task;
  ds.class_counts.assign(classes, 0);
  std::vector<std::size_t> quota(classes, options.size / classes);
  for (std::size_t c = 0; c < options.size % classes; ++c) ++quota[c];

  std::mt19937_64 rng(derive_seed(options.seed, 0x70726f6265ULL + static_cast<std::uint64_t>(task)));
  std::size_t lang_cursor = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < quota[c]; ++k) {
      const MiniLangSpec& lang = languages[lang_cursor++ % languages.size()];
      ProgramKnobs knobs;
      knobs.max_tokens = options.max_tokens;
      if (task == ProbeTask::kLen) {
        knobs.min_tokens = 50 * c;
        knobs.max_tokens = c == 4 ? options.max_tokens : 50 * (c + 1);
      } else if (task == ProbeTask::kCpx) {
        knobs.decisions = static_cast<int>(c);
      }
      auto program = generate_program(lang, knobs, rng);
      if (!program) throw Error("build_probe_dataset: cannot generate class " + std::to_string(c) + " for " + lang.name);
      ProbeExample ex;
      ex.language = lang.name;
      ex.task = task;
      ex.label = static_cast<int>(c);
      ex.code = std::move(program->code);
      if (task == ProbeTask::kTyp && c == 1) ex.code = mutate_types(lang, ex.code, rng()).code;
      ds.examples.push_back(std::move(ex));
      ++ds.class_counts[c];
    }
  }
  // Interleave classes so the file order carries no label information.
  std::shuffle(ds.examples.begin(), ds.examples.end(), rng);
  std::vector<int> labels;
  for (const auto& ex : ds.examples) labels.push_back(ex.label);
  stratified_split(labels, options.test_fraction, rng(), ds.train_index, ds.test_index);
  return ds;
}

void write_probe_jsonl(const std::filesystem::path& path, const ProbeDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  std::vector<bool> is_test(dataset.examples.size(), false);
  for (auto i : dataset.test_index) is_test[i] = true;
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto& ex = dataset.examples[i];
    nlohmann::json j;
    j["code"] = detokenize(ex.code);
    j["task"] = to_string(ex.task);
    j["label"] = ex.label;
    j["language"] = ex.language;
    j["split"] = is_test[i] ? "test" : "train";
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Embeddings

std::vector<ad::Tensor> extract_all_layers(TransformerModel& model, const Vocabulary& vocab,
                                           const std::vector<ProbeExample>& examples, Pooling pooling,
                                           std::size_t batch_size) {
  if (batch_size == 0) throw Error("extract_all_layers: batch_size must be positive");
  const std::size_t d = model.config().d_model;
  const std::size_t layers = model.config().n_layers_encoder + 1;
  std::vector<std::vector<double>> rows(layers, std::vector<double>(examples.size() * d));
  ad::NoGradGuard no_grad;
  const bool was_training = model.training();
  model.set_training(false);
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<std::vector<int>> seqs;
    for (std::size_t i = start; i < end; ++i) {
      std::vector<int> ids{Vocabulary::kBos};
      auto body = vocab.encode(examples[i].code);
      ids.insert(ids.end(), body.begin(), body.end());
      ids.push_back(Vocabulary::kEos);
      seqs.push_back(std::move(ids));
    }
    auto batch = TokenBatch::from_sequences(seqs, Vocabulary::kPad);
    auto out = model.encode(batch, true);
    for (std::size_t l = 0; l < layers; ++l) {
      const auto& h = out.trace->hidden[l];
      ad::Tensor pooled;
      if (pooling == Pooling::kMean) {
        pooled = ad::masked_mean_pool(h, batch.seq_len, batch.lengths);
      }
      for (std::size_t b = 0; b < seqs.size(); ++b) {
        double* dst = rows[l].data() + (start + b) * d;
        const double* src = pooling == Pooling::kMean ? pooled.data().data() + b * d
                                                      : h.data().data() + b * batch.seq_len * d;
        std::copy(src, src + d, dst);
      }
    }
  }
  model.set_training(was_training);
  std::vector<ad::Tensor> result;
  for (auto& r : rows) result.push_back(ad::Tensor::from_data({examples.size(), d}, std::move(r)));
  return result;
}

ad::Tensor extract_embeddings(TransformerModel& model, const Vocabulary& vocab,
                              const std::vector<ProbeExample>& examples, std::size_t layer, Pooling pooling) {
  if (layer > model.config().n_layers_encoder) {
    throw Error("extract_embeddings: layer " + std::to_string(layer) + " out of range [0, " +
                std::to_string(model.config().n_layers_encoder) + "]");
  }
  return extract_all_layers(model, vocab, examples, pooling)[layer];
}

// ---------------------------------------------------------------------------
// Probes

std::vector<double> LinearProbe::logits(const double* x) const {
  std::vector<double> z(bias);
  for (std::size_t i = 0; i < dim; ++i) {
    const double xi = (x[i] - mean[i]) / scale[i];
    for (std::size_t c = 0; c < classes; ++c) z[c] += xi * weight[i * classes + c];
  }
  return z;
}

int LinearProbe::predict(const double* x) const {
  const auto z = logits(x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

ProbeResult train_probe(const ad::Tensor& embeddings, const std::vector<int>& labels, std::size_t classes,
                        const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                        const ProbeOptions& options) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (embeddings.rank() != 2) throw Error("train_probe: embeddings must be [N, d]");
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (labels.size() != n) throw Error("train_probe: label count does not match embeddings");
  if (train.empty()) throw Error("train_probe: empty train split");
  std::set<int> present;
  for (auto i : train) {
    if (i >= n) throw Error("train_probe: split index out of range");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) throw Error("train_probe: label out of range");
    present.insert(labels[i]);
  }
  if (present.size() < 2) throw Error("train_probe: train split contains a single class");

  Eigen::Map<const Mat> all(embeddings.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const auto nt = static_cast<Eigen::Index>(train.size());
  Mat x(nt, static_cast<Eigen::Index>(d));
  Mat y = Mat::Zero(nt, static_cast<Eigen::Index>(classes));
  for (Eigen::Index r = 0; r < nt; ++r) {
    x.row(r) = all.row(static_cast<Eigen::Index>(train[static_cast<std::size_t>(r)]));
    y(r, labels[train[static_cast<std::size_t>(r)]]) = 1.0;
  }
  ProbeResult result;
  LinearProbe& p = result.probe;
  p.dim = d;
  p.classes = classes;
  p.mean.resize(d);
  p.scale.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = x.col(static_cast<Eigen::Index>(j));
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    p.mean[j] = mu;
    p.scale[j] = sd > 1e-12 ? sd : 1.0;
    x.col(static_cast<Eigen::Index>(j)) = (col.array() - mu) / p.scale[j];
  }

  Mat w = Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(classes));
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(classes));
  double prev = std::numeric_limits<double>::infinity();
  const double inv_n = 1.0 / static_cast<double>(nt);
  for (std::size_t epoch = 0; epoch < options.max_epochs; ++epoch) {
    Mat z = x * w;
    z.rowwise() += b;
    Eigen::VectorXd mx = z.rowwise().maxCoeff();
    Mat e = (z.colwise() - mx).array().exp().matrix();
    Eigen::VectorXd s = e.rowwise().sum();
    double loss = 0.0;
    for (Eigen::Index r = 0; r < nt; ++r) {
      e.row(r) /= s(r);
      loss -= std::log(std::max(1e-300, (e.row(r).array() * y.row(r).array()).sum()));
    }
    loss = loss * inv_n + 0.5 * options.l2 * w.squaredNorm();
    result.epochs = epoch + 1;
    if (std::abs(prev - loss) < options.tolerance) break;
    prev = loss;
    const Mat g = (e - y) * inv_n;
    w -= options.learning_rate * (x.transpose() * g + options.l2 * w);
    b -= options.learning_rate * g.colwise().sum();
  }
  p.weight.assign(w.data(), w.data() + w.size());
  p.bias.assign(b.data(), b.data() + b.size());

  auto accuracy = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t hit = 0;
    for (auto i : idx) hit += p.predict(embeddings.data().data() + i * d) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(idx.size());
  };
  result.train_accuracy = accuracy(train);
  result.test_accuracy = accuracy(test);
  return result;
}

std::vector<double> layer_sweep(TransformerModel& model, const Vocabulary& vocab, const ProbeDataset& dataset,
                                const ProbeOptions& options) {
  const auto layers = extract_all_layers(model, vocab, dataset.examples);
  std::vector<int> labels;
  for (const auto& ex : dataset.examples) labels.push_back(ex.label);
  std::vector<double> acc;
  for (const auto& x : layers) {
    acc.push_back(train_probe(x, labels, num_classes(dataset.task), dataset.train_index, dataset.test_index, options)
                      .test_accuracy);
  }
  return acc;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<double>& accuracy) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "layer,accuracy\n";
  char buf[64];
  for (std::size_t l = 0; l < accuracy.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", l, accuracy[l]);
    out << buf;
  }
}

}  // namespace adaptlab
