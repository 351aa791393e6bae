// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/cli.hpp"

#include "adaptlab/checkpoint.hpp"
#include "adaptlab/metrics.hpp"
#include "adaptlab/minilang.hpp"
#include "adaptlab/tasks.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace adaptlab {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

namespace {

enum class KeyType { kInt, kNumber, kString, kBool, kStringList };

struct KeySpec {
  const char* name;
  KeyType type;
  bool nullable;
  json fallback;
};

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    const ModelConfig m;
    const AdapterConfig a;
    const TrainConfig t;
    const PretrainConfig p;
    return std::vector<KeySpec>{
        {"seed", KeyType::kInt, false, 0},
        {"data", KeyType::kString, false, "data"},
        {"base", KeyType::kString, false, ""},
        {"run_root", KeyType::kString, false, ""},
        {"task", KeyType::kString, false, "summarization"},
        // model
        {"d_model", KeyType::kInt, false, m.d_model},
        {"n_layers_encoder", KeyType::kInt, false, m.n_layers_encoder},
        {"n_layers_decoder", KeyType::kInt, false, 4},
        {"n_heads", KeyType::kInt, false, m.n_heads},
        {"d_ff", KeyType::kInt, false, m.d_ff},
        {"max_seq_len", KeyType::kInt, false, m.max_seq_len},
        {"dropout", KeyType::kNumber, false, m.dropout},
        {"activation", KeyType::kString, false, to_string(m.activation)},
        // adapter
        {"bottleneck_dim", KeyType::kInt, false, a.bottleneck_dim},
        {"adapter_activation", KeyType::kString, false, to_string(a.activation)},
        {"after_attention", KeyType::kBool, false, a.after_attention},
        {"after_ffn", KeyType::kBool, false, a.after_ffn},
        {"after_residual_norm", KeyType::kBool, false, a.after_residual_norm},
        {"moe_experts", KeyType::kInt, false, a.moe_experts},
        {"moe_expert_dim", KeyType::kInt, false, a.moe_expert_dim},
        {"moe_top_k", KeyType::kInt, false, a.moe_top_k},
        {"gate", KeyType::kString, false, "per_token"},
        // regime
        {"tuning", KeyType::kString, false, "adapter"},
        {"scope", KeyType::kString, false, "multilingual"},
        {"train_languages", KeyType::kStringList, false, json::array()},
        {"eval_languages", KeyType::kStringList, false, json::array()},
        {"batching", KeyType::kString, true, nullptr},
        {"language_tags", KeyType::kBool, true, nullptr},
        {"samples_per_language", KeyType::kInt, true, nullptr},
        // fine-tuning
        {"epochs", KeyType::kInt, false, t.epochs},
        {"steps", KeyType::kInt, false, t.steps},
        {"batch_size", KeyType::kInt, false, t.batch_size},
        {"lr_full", KeyType::kNumber, false, t.lr_full},
        {"lr_adapter", KeyType::kNumber, false, t.lr_adapter},
        {"patience", KeyType::kInt, false, t.patience},
        {"max_source_len", KeyType::kInt, false, t.max_source_len},
        {"max_summary_len", KeyType::kInt, false, t.max_summary_len},
        {"temperature", KeyType::kNumber, false, t.temperature},
        {"pooling", KeyType::kString, false, "mean"},
        {"beam_size", KeyType::kInt, false, t.beam_size},
        {"eval_limit", KeyType::kInt, false, t.eval_limit},
        // pre-training
        {"pretrain_steps", KeyType::kInt, false, p.steps},
        {"pretrain_batch_size", KeyType::kInt, false, p.batch_size},
        {"pretrain_lr", KeyType::kNumber, false, p.learning_rate},
        {"mask_rate", KeyType::kNumber, false, p.mask_rate},
        {"pretrain_max_len", KeyType::kInt, false, p.max_len},
        // probing
        {"probe_tasks", KeyType::kStringList, false, json::array({"LEN", "CPX", "TYP"})},
        {"probe_size", KeyType::kInt, false, 2000},
        {"probe_max_tokens", KeyType::kInt, false, 250},
        {"probe_pooling", KeyType::kString, false, "mean"},
    };
  }();
  return specs;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_specs()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::kInt: return "a non-negative integer";
    case KeyType::kNumber: return "a number";
    case KeyType::kString: return "a string";
    case KeyType::kBool: return "a boolean";
    case KeyType::kStringList: return "a list of strings";
  }
  return "?";
}

bool type_ok(const KeySpec& k, const json& v) {
  if (v.is_null()) return k.nullable;
  switch (k.type) {
    case KeyType::kInt: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case KeyType::kNumber: return v.is_number();
    case KeyType::kString: return v.is_string();
    case KeyType::kBool: return v.is_boolean();
    case KeyType::kStringList:
      if (!v.is_array()) return false;
      for (const auto& e : v) {
        if (!e.is_string()) return false;
      }
      return true;
  }
  return false;
}

std::string key_problem(const std::string& key, const json& v) {
  const KeySpec* k = find_key(key);
  if (!k) return "unknown key '" + key + "'";
  if (!type_ok(*k, v)) return "key '" + key + "' expects " + type_name(k->type) + (k->nullable ? " or null" : "");
  return "";
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t as_size(const json& v) { return v.get<std::size_t>(); }

}  // namespace

RunConfig::RunConfig() {
  values_ = json::object();
  for (const auto& k : key_specs()) values_[k.name] = k.fallback;
}

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw Error("config must be a JSON object");
  std::vector<std::string> problems;
  for (const auto& [key, value] : doc.items()) {
    auto p = key_problem(key, value);
    if (!p.empty()) problems.push_back(p);
  }
  if (!problems.empty()) throw Error("invalid config: " + join(problems, "; "));
  RunConfig c;
  for (const auto& [key, value] : doc.items()) c.values_[key] = value;
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return from_json(doc);
}

void RunConfig::set_json(const std::string& key, const json& value) {
  auto p = key_problem(key, value);
  if (!p.empty()) throw Error("invalid config: " + p);
  values_[key] = value;
}

void RunConfig::set(const std::string& key, const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  const KeySpec* k = find_key(key);
  if (k && k->type == KeyType::kString && !v.is_string() && !v.is_null()) v = text;
  if (k && k->type == KeyType::kStringList && v.is_string()) v = split_list(text);
  set_json(key, v);
}

const json& RunConfig::at(const std::string& key) const {
  if (!find_key(key)) throw Error("unknown config key '" + key + "'");
  return values_.at(key);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_specs()) out.emplace_back(k.name);
  return out;
}

std::string RunConfig::hash() const { return fnv1a_hex(values_.dump()); }

TaskKind RunConfig::task() const { return task_from_string(at("task").get<std::string>()); }

ModelConfig RunConfig::model(std::size_t vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = as_size(at("d_model"));
  m.n_layers_encoder = as_size(at("n_layers_encoder"));
  m.n_layers_decoder = as_size(at("n_layers_decoder"));
  m.n_heads = as_size(at("n_heads"));
  m.d_ff = as_size(at("d_ff"));
  m.max_seq_len = as_size(at("max_seq_len"));
  m.dropout = at("dropout").get<double>();
  m.activation = activation_from_string(at("activation").get<std::string>());
  m.validate();
  return m;
}

AdapterConfig RunConfig::adapter() const {
  AdapterConfig a;
  a.bottleneck_dim = as_size(at("bottleneck_dim"));
  a.activation = activation_from_string(at("adapter_activation").get<std::string>());
  a.after_attention = at("after_attention").get<bool>();
  a.after_ffn = at("after_ffn").get<bool>();
  a.after_residual_norm = at("after_residual_norm").get<bool>();
  a.moe_experts = as_size(at("moe_experts"));
  a.moe_expert_dim = as_size(at("moe_expert_dim"));
  a.moe_top_k = as_size(at("moe_top_k"));
  const auto gate = at("gate").get<std::string>();
  if (gate != "per_token" && gate != "per_sample") throw Error("gate must be per_token or per_sample");
  a.gate = gate == "per_sample" ? GateGranularity::kPerSample : GateGranularity::kPerToken;
  if (at("tuning").get<std::string>() == "adapter_moe") a.variant = AdapterVariant::kMoe;
  a.validate();
  return a;
}

Regime RunConfig::regime(const std::vector<std::string>& available) const {
  auto check = [&](const std::vector<std::string>& langs) {
    for (const auto& l : langs) {
      if (std::find(available.begin(), available.end(), l) == available.end()) {
        throw Error("unknown language '" + l + "' (available: " + join(available, ", ") + ")");
      }
    }
  };
  Regime r;
  r.tuning = tuning_from_string(at("tuning").get<std::string>());
  auto train = at("train_languages").get<std::vector<std::string>>();
  auto eval = at("eval_languages").get<std::vector<std::string>>();
  check(train);
  check(eval);
  const auto scope = at("scope").get<std::string>();
  if (scope == "multilingual") {
    if (train.empty()) train = available;
    r.scope = DataScope::multilingual(train);
    if (!eval.empty()) r.scope.eval_languages = eval;
  } else if (scope == "monolingual") {
    if (train.size() != 1) throw Error("monolingual scope needs exactly one train_languages entry");
    r.scope = DataScope::monolingual(train[0]);
  } else if (scope == "cross") {
    if (train.size() != 1 || eval.empty()) {
      throw Error("cross scope needs one train_languages entry and at least one eval_languages entry");
    }
    r.scope = {DataScope::Kind::kCross, train, eval};
  } else {
    throw Error("unknown scope '" + scope + "' (expected multilingual, monolingual or cross)");
  }
  const TaskKind task = this->task();
  r.batching = at("batching").is_null()
                   ? (task == TaskKind::kSearch ? Batching::kMonolingual : Batching::kMultilingual)
                   : batching_from_string(at("batching").get<std::string>());
  r.language_tags = at("language_tags").is_null() ? task == TaskKind::kSearch : at("language_tags").get<bool>();
  if (!at("samples_per_language").is_null()) r.samples_per_language = as_size(at("samples_per_language"));
  r.seed = at("seed").get<std::uint64_t>();
  return r;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = as_size(at("epochs"));
  t.steps = as_size(at("steps"));
  t.batch_size = as_size(at("batch_size"));
  t.lr_full = at("lr_full").get<double>();
  t.lr_adapter = at("lr_adapter").get<double>();
  t.patience = as_size(at("patience"));
  t.max_source_len = as_size(at("max_source_len"));
  t.max_summary_len = as_size(at("max_summary_len"));
  t.temperature = at("temperature").get<double>();
  const auto pooling = at("pooling").get<std::string>();
  if (pooling != "mean" && pooling != "first") throw Error("pooling must be mean or first");
  t.pooling = pooling == "first" ? SearchPooling::kFirst : SearchPooling::kMean;
  t.beam_size = as_size(at("beam_size"));
  if (t.beam_size < 1) throw Error("beam_size must be >= 1");
  t.eval_limit = as_size(at("eval_limit"));
  t.adapter = adapter();
  return t;
}

PretrainConfig RunConfig::pretrain() const {
  PretrainConfig p;
  p.steps = as_size(at("pretrain_steps"));
  p.batch_size = as_size(at("pretrain_batch_size"));
  p.learning_rate = at("pretrain_lr").get<double>();
  p.mask_rate = at("mask_rate").get<double>();
  p.max_len = as_size(at("pretrain_max_len"));
  p.seed = at("seed").get<std::uint64_t>();
  return p;
}

std::vector<ProbeTask> RunConfig::probe_tasks() const {
  std::vector<ProbeTask> out;
  for (const auto& s : at("probe_tasks").get<std::vector<std::string>>()) out.push_back(probe_task_from_string(s));
  if (out.empty()) throw Error("probe_tasks is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Files and run directories

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw Error(what + " not found: " + path.string());
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<CorpusExample>& corpus,
                   const std::map<std::string, Split>& splits, const json& meta) {
  fs::create_directories(dir);
  write_jsonl(dir / "corpus.jsonl", corpus);
  json manifest = meta;
  json langs = json::object();
  for (const auto& [lang, s] : splits) {
    auto ids = [](const std::vector<CorpusExample>& v) {
      std::vector<std::int64_t> out;
      for (const auto& ex : v) out.push_back(ex.id);
      return out;
    };
    langs[lang] = {{"train", ids(s.train)}, {"dev", ids(s.dev)}, {"test", ids(s.test)}};
  }
  manifest["splits"] = langs;
  write_json(dir / "splits.json", manifest);
}

DataSet load_dataset(const fs::path& dir) {
  require_file(dir / "corpus.jsonl", "corpus");
  require_file(dir / "splits.json", "split manifest");
  DataSet d;
  d.corpus = ingest_jsonl(dir / "corpus.jsonl");
  std::map<std::int64_t, const CorpusExample*> by_id;
  for (const auto& ex : d.corpus) by_id[ex.id] = &ex;
  const json manifest = read_json(dir / "splits.json");
  for (const auto& [lang, parts] : manifest.at("splits").items()) {
    Split s;
    auto fill = [&](const char* part, std::vector<CorpusExample>& into) {
      for (auto id : parts.at(part).get<std::vector<std::int64_t>>()) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error("split manifest names unknown id " + std::to_string(id));
        into.push_back(*it->second);
      }
    };
    fill("train", s.train);
    fill("dev", s.dev);
    fill("test", s.test);
    d.splits[lang] = std::move(s);
  }
  return d;
}

RunDirectory::RunDirectory(fs::path path, bool force) : path_(std::move(path)), lock_(path_ / ".lock") {
  if (fs::exists(path_)) {
    bool has_results = false;
    for (const auto& entry : fs::directory_iterator(path_)) {
      if (entry.path().filename() != ".lock") has_results = true;
    }
    if (has_results && !force) {
      throw Error("run directory " + path_.string() + " already holds results (pass --force to overwrite)");
    }
  }
  fs::create_directories(path_);
  std::FILE* f = std::fopen(lock_.c_str(), "wx");
  if (!f) {
    lock_.clear();
    throw Error("run directory " + path_.string() + " is locked by another run (remove .lock if it is stale)");
  }
  std::fclose(f);
}

RunDirectory::~RunDirectory() {
  if (!lock_.empty()) {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
}

fs::path resolve_run_root(const std::string& flag, const std::string& config_value) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kRunRootEnv); env && *env) return env;
  if (!config_value.empty()) return config_value;
  return "runs";
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string run_root;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", c.config_path, "JSON run configuration");
    cmd->add_option("--set", c.overrides, "override a config key (key=value)");
  }
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
  cmd->add_option("--run-root", c.run_root, std::string("root for run directories (default $") + kRunRootEnv + " or runs)");
  cmd->add_flag("--force", c.force, "overwrite an existing run directory");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig() : RunConfig::load(c.config_path);
  std::vector<std::string> problems;
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      problems.push_back("override '" + o + "' is not key=value");
      continue;
    }
    try {
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) throw Error(join(problems, "; "));
  if (c.seed) cfg.set_json("seed", *c.seed);
  return cfg;
}

fs::path run_path(const Common& c, const RunConfig& cfg, const std::string& command, const std::string& hash) {
  return resolve_run_root(c.run_root, cfg.at("run_root").get<std::string>()) / (command + "-" + hash);
}

std::string regime_label(const Regime& r) {
  std::string label = to_string(r.tuning);
  if (r.scope.kind == DataScope::Kind::kMonolingual) label += "/mono:" + r.scope.train_languages[0];
  if (r.scope.kind == DataScope::Kind::kCross) label += "/cross:" + r.scope.train_languages[0];
  if (r.batching == Batching::kMonolingual) label += "/mono-batch";
  if (r.language_tags) label += "/tags";
  if (r.samples_per_language) label += "/k=" + std::to_string(*r.samples_per_language);
  return label;
}

std::string metric_markdown(const std::string& label, const RunRecord& rec) {
  if (rec.bleu) return bleu_markdown({{label, *rec.bleu}});
  return mrr_markdown({{label, *rec.mrr}});
}

struct Base {
  TransformerModel model;
  Vocabulary vocab;
  fs::path checkpoint;
};

Base load_base(const fs::path& where) {
  fs::path ckpt = fs::is_directory(where) ? where / "base.ckpt" : where;
  require_file(ckpt, "checkpoint");
  fs::path vocab = ckpt.parent_path() / "vocab.json";
  require_file(vocab, "vocabulary");
  return {TransformerModel::load(ckpt), Vocabulary::load(vocab), ckpt};
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

std::vector<std::string> data_languages(const DataSet& d) {
  std::vector<std::string> out;
  for (const auto& [lang, s] : d.splits) out.push_back(lang);
  return out;
}

// generate ------------------------------------------------------------------

struct GenerateArgs {
  std::string languages = "4";
  std::size_t n = 500;
  double imbalance = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  std::string fractions = "0.8,0.1,0.1";
  std::size_t max_tokens = 80;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  std::vector<MiniLangSpec> langs;
  if (!a.languages.empty() && std::all_of(a.languages.begin(), a.languages.end(), ::isdigit)) {
    langs = default_languages(std::stoul(a.languages));
  } else {
    for (const auto& name : split_list(a.languages)) langs.push_back(language_by_name(name));
  }
  if (langs.empty()) throw Error("--languages names no language");
  std::array<double, 3> fr{};
  const auto parts = split_list(a.fractions);
  if (parts.size() != 3) throw Error("--split needs three comma-separated fractions");
  for (int i = 0; i < 3; ++i) fr[i] = std::stod(parts[i]);

  const fs::path dir = a.out;
  if (fs::exists(dir / "corpus.jsonl") && !a.force) {
    throw Error("output " + (dir / "corpus.jsonl").string() + " exists (pass --force to overwrite)");
  }
  fs::create_directories(dir);
  RunDirectory lock(dir, true);
  SyntheticOptions o;
  o.n_per_language = a.n;
  o.seed = a.seed;
  o.imbalance = a.imbalance;
  o.knobs.max_tokens = a.max_tokens;
  const auto corpus = generate_synthetic(langs, o);
  const auto splits = split(corpus, fr, derive_seed(a.seed, 1));
  json meta = {{"seed", a.seed},       {"n_per_language", a.n},     {"imbalance", a.imbalance},
               {"fractions", fr},      {"max_tokens", a.max_tokens}};
  write_dataset(dir, corpus, splits, meta);

  std::vector<std::pair<std::string, std::vector<double>>> rows;
  json stats = json::object();
  for (const auto& [lang, s] : splits) {
    const double total = static_cast<double>(s.train.size() + s.dev.size() + s.test.size());
    rows.push_back({lang, {static_cast<double>(s.train.size()), static_cast<double>(s.dev.size()),
                           static_cast<double>(s.test.size()), total}});
    stats[lang] = {{"train", s.train.size()}, {"dev", s.dev.size()}, {"test", s.test.size()}};
  }
  const auto table = markdown_table("Language", {"Train", "Dev", "Test", "Total"}, rows, 1.0, 0);
  write_json(dir / "stats.json", stats);
  write_text(dir / "stats.md", table);
  out << table;
  return 0;
}

// pretrain --------------------------------------------------------------------

int cmd_pretrain(const Common& c, std::ostream& out) {
  const RunConfig cfg = resolve_config(c);
  const DataSet data = load_dataset(cfg.at("data").get<std::string>());
  const auto langs = data_languages(data);
  const auto train = gather(data.splits, Part::kTrain);
  const Vocabulary vocab = Vocabulary::build(train, langs, true);
  json hashed = {{"config", cfg.values()}, {"data", file_hash(fs::path(cfg.at("data").get<std::string>()) / "corpus.jsonl")}};
  const std::string hash = fnv1a_hex(hashed.dump());
  RunDirectory dir(run_path(c, cfg, "pretrain", hash), c.force);

  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  TransformerModel model(cfg.model(vocab.size()), derive_seed(seed, 1));
  const auto result = pretrain_mlm(model, vocab, train, cfg.pretrain());
  model.save(dir / "base.ckpt");
  vocab.save(dir / "vocab.json");
  write_json(dir / "config.json", cfg.values());

  json record = {{"command", "pretrain"},
                 {"config_hash", hash},
                 {"seed", seed},
                 {"languages", langs},
                 {"vocab_size", vocab.size()},
                 {"parameters", count_parameters(model.parameters())},
                 {"losses", result.losses},
                 {"first_loss", result.losses.front()},
                 {"final_loss", result.losses.back()},
                 {"wall_seconds", result.seconds},
                 {"checkpoints", {{"base", (dir / "base.ckpt").string()}, {"vocab", (dir / "vocab.json").string()}}}};
  write_json(dir / "record.json", record);
  std::ostringstream md;
  md << "# MLM pre-training\n\n"
     << markdown_table("Run", {"Steps", "First loss", "Final loss"},
                       {{hash, {static_cast<double>(result.losses.size()), result.losses.front(), result.losses.back()}}},
                       1.0, 4);
  write_text(dir / "report.md", md.str());
  out << dir.path().string() << "\n";
  return 0;
}

// finetune ------------------------------------------------------------------

struct Prepared {
  RunConfig cfg;
  DataSet data;
  Base base;
};

Prepared prepare(const Common& c) {
  RunConfig cfg = resolve_config(c);
  const auto base_path = cfg.at("base").get<std::string>();
  if (base_path.empty()) throw Error("config key 'base' must name a pre-training run directory or checkpoint");
  return {cfg, load_dataset(cfg.at("data").get<std::string>()), load_base(base_path)};
}

std::string finetune_hash(const Prepared& p) {
  json hashed = {{"config", p.cfg.values()},
                 {"base", file_hash(p.base.checkpoint)},
                 {"data", file_hash(fs::path(p.cfg.at("data").get<std::string>()) / "corpus.jsonl")}};
  return fnv1a_hex(hashed.dump());
}

void save_run(const RunDirectory& dir, FinetuneResult& run, const Prepared& p) {
  if (run.bank) {
    run.bank->save(dir / "adapters.ckpt");
    run.record.checkpoints["base"] = p.base.checkpoint.string();
    run.record.checkpoints["adapters"] = (dir / "adapters.ckpt").string();
  } else {
    run.model.save(dir / "model.ckpt");
    p.base.vocab.save(dir / "vocab.json");
    run.record.checkpoints["model"] = (dir / "model.ckpt").string();
  }
}

int cmd_finetune(const Common& c, std::ostream& out) {
  Prepared p = prepare(c);
  const std::string hash = finetune_hash(p);
  RunDirectory dir(run_path(c, p.cfg, "finetune", hash), c.force);
  const Regime regime = p.cfg.regime(data_languages(p.data));
  auto run = finetune(p.base.model, p.base.vocab, p.data.splits, regime, p.cfg.task(), p.cfg.train());
  save_run(dir, run, p);
  json record = run.record.to_json();
  record["command"] = "finetune";
  record["run_hash"] = hash;
  record["config"] = p.cfg.values();
  write_json(dir / "record.json", record);
  write_text(dir / "report.md", metric_markdown(regime_label(regime), run.record));
  out << metric_markdown(regime_label(regime), run.record) << dir.path().string() << "\n";
  return 0;
}

// eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, adapters, task = "summarization", languages, data = "data";
};

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out) {
  const auto langs = split_list(a.languages);
  if (langs.empty()) throw Error("--languages is empty");
  RunConfig cfg = resolve_config(c);
  Base base = load_base(a.checkpoint);
  const bool tags = cfg.at("language_tags").is_null() ? a.task == "search" : cfg.at("language_tags").get<bool>();
  if (!a.adapters.empty()) {
    require_file(a.adapters, "adapter checkpoint");
    attach(base.model, AdapterBank::load(a.adapters));
  }
  const DataSet data = load_dataset(a.data);
  std::vector<CorpusExample> test;
  const std::size_t limit = as_size(cfg.at("eval_limit"));
  for (const auto& l : langs) {
    auto it = data.splits.find(l);
    if (it == data.splits.end()) throw Error("no data for language '" + l + "'");
    const auto& t = it->second.test;
    test.insert(test.end(), t.begin(), limit && t.size() > limit ? t.begin() + static_cast<std::ptrdiff_t>(limit) : t.end());
  }
  const TaskKind task = task_from_string(a.task);
  json hashed = {{"config", cfg.values()},  {"checkpoint", file_hash(base.checkpoint)},
                 {"adapters", a.adapters.empty() ? "" : file_hash(a.adapters)},
                 {"task", a.task},          {"languages", langs},
                 {"data", file_hash(fs::path(a.data) / "corpus.jsonl")}};
  const std::string hash = fnv1a_hex(hashed.dump());
  RunDirectory dir(run_path(c, cfg, "eval", hash), c.force);
  const TrainConfig tc = cfg.train();
  json record = {{"command", "eval"}, {"run_hash", hash}, {"task", a.task}, {"languages", langs}};
  std::string md;
  const std::string label = fs::path(a.checkpoint).filename().string() + (a.adapters.empty() ? "" : "+adapters");
  if (task == TaskKind::kSummarization) {
    auto r = evaluate_summarization(base.model, base.vocab, test, tags, tc);
    record["metrics"] = json::parse(r.to_json());
    md = bleu_markdown({{label, r}});
  } else {
    auto r = evaluate_search(base.model, base.vocab, test, tags, tc);
    record["metrics"] = json::parse(r.to_json());
    md = mrr_markdown({{label, r}});
  }
  write_json(dir / "metrics.json", record);
  write_text(dir / "report.md", md);
  out << md << dir.path().string() << "\n";
  return 0;
}

// probe -----------------------------------------------------------------------

struct ProbeArgs {
  std::string checkpoint, adapters, tasks;
};

int cmd_probe(const Common& c, const ProbeArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(c);
  if (!a.tasks.empty()) cfg.set("probe_tasks", a.tasks);
  const auto tasks = cfg.probe_tasks();
  Base base = load_base(a.checkpoint);
  if (!a.adapters.empty()) {
    require_file(a.adapters, "adapter checkpoint");
    attach(base.model, AdapterBank::load(a.adapters));
  }
  std::vector<MiniLangSpec> langs;
  for (const auto& l : base.vocab.languages()) langs.push_back(language_by_name(l));
  if (langs.empty()) langs = default_languages();
  json hashed = {{"config", cfg.values()},
                 {"checkpoint", file_hash(base.checkpoint)},
                 {"adapters", a.adapters.empty() ? "" : file_hash(a.adapters)}};
  const std::string hash = fnv1a_hex(hashed.dump());
  RunDirectory dir(run_path(c, cfg, "probe", hash), c.force);

  ProbeDatasetOptions po;
  po.size = as_size(cfg.at("probe_size"));
  po.max_tokens = as_size(cfg.at("probe_max_tokens"));
  po.seed = cfg.at("seed").get<std::uint64_t>();
  const std::size_t layers = base.model.config().n_layers_encoder + 1;
  std::vector<std::string> names;
  std::vector<std::vector<double>> curves;
  json record = {{"command", "probe"}, {"run_hash", hash}, {"layers", layers}};
  for (ProbeTask t : tasks) {
    po.seed = derive_seed(cfg.at("seed").get<std::uint64_t>(), static_cast<std::uint64_t>(t));
    const auto ds = build_probe_dataset(t, langs, po);
    write_probe_jsonl(dir / ("probe_" + to_string(t) + ".jsonl"), ds);
    curves.push_back(layer_sweep(base.model, base.vocab, ds));
    names.push_back(to_string(t));
    record["accuracy"][to_string(t)] = curves.back();
  }
  // Per-layer curves (one row per layer, one column per task).
  std::ostringstream csv;
  csv << "layer";
  for (const auto& n : names) csv << ',' << n;
  csv << '\n';
  std::vector<std::pair<std::string, std::vector<double>>> layer_rows;
  for (std::size_t l = 0; l < layers; ++l) {
    csv << l;
    std::vector<double> row;
    for (const auto& cv : curves) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.6f", cv[l]);
      csv << buf;
      row.push_back(cv[l]);
    }
    csv << '\n';
    layer_rows.push_back({"layer " + std::to_string(l), row});
  }
  std::vector<double> final_row;
  for (const auto& cv : curves) final_row.push_back(cv.back());
  const std::string label = fs::path(a.checkpoint).filename().string() + (a.adapters.empty() ? "" : "+adapters");
  std::string md = "# Probing accuracy, final encoder layer\n\n" +
                   markdown_table("Model", names, {{label, final_row}}, 100.0, 2) +
                   "\n# Probing accuracy per layer\n\n" + markdown_table("Layer", names, layer_rows, 100.0, 2);
  write_text(dir / "probe.csv", csv.str());
  write_text(dir / "probe.md", md);
  write_json(dir / "probe.json", record);
  out << md << dir.path().string() << "\n";
  return 0;
}

// sweep-dim -----------------------------------------------------------------

int cmd_sweep_dim(const Common& c, const std::string& dims_text, std::ostream& out) {
  Prepared p = prepare(c);
  std::vector<std::size_t> dims;
  for (const auto& d : split_list(dims_text)) dims.push_back(std::stoul(d));
  if (dims.empty()) throw Error("--dims is empty");
  json hashed = {{"run", finetune_hash(p)}, {"dims", dims}};
  const std::string hash = fnv1a_hex(hashed.dump());
  RunDirectory dir(run_path(c, p.cfg, "sweep-dim", hash), c.force);
  const Regime regime = p.cfg.regime(data_languages(p.data));
  if (regime.tuning == Tuning::kFull) throw Error("sweep-dim needs an adapter tuning regime");
  std::vector<std::pair<std::string, BleuReport>> bleu_rows;
  std::vector<std::pair<std::string, MrrReport>> mrr_rows;
  std::vector<std::pair<std::string, std::vector<double>>> param_rows;
  json record = {{"command", "sweep-dim"}, {"run_hash", hash}, {"runs", json::array()}};
  for (auto d : dims) {
    TrainConfig tc = p.cfg.train();
    tc.adapter.bottleneck_dim = d;
    tc.adapter.validate();
    auto run = finetune(p.base.model, p.base.vocab, p.data.splits, regime, p.cfg.task(), tc);
    const std::string label = std::to_string(d);
    if (run.record.bleu) bleu_rows.push_back({label, *run.record.bleu});
    if (run.record.mrr) mrr_rows.push_back({label, *run.record.mrr});
    param_rows.push_back({label, {static_cast<double>(run.record.parameters.adapter_params)}});
    run.bank->save(dir / ("adapters_m" + label + ".ckpt"));
    auto j = run.record.to_json();
    j["bottleneck_dim"] = d;
    record["runs"].push_back(j);
  }
  std::string md = "# Bottleneck dimension sweep\n\n" +
                   (bleu_rows.empty() ? mrr_markdown(mrr_rows) : bleu_markdown(bleu_rows)) +
                   "\n" + markdown_table("Dim", {"Adapter params"}, param_rows, 1.0, 0);
  write_json(dir / "sweep.json", record);
  write_text(dir / "sweep.md", md);
  out << md << dir.path().string() << "\n";
  return 0;
}

// low-resource / cross-lingual ------------------------------------------------

int cmd_low_resource(const Common& c, const std::string& ks_text, std::size_t seeds, std::ostream& out) {
  Prepared p = prepare(c);
  std::vector<std::size_t> ks;
  for (const auto& k : split_list(ks_text)) ks.push_back(std::stoul(k));
  if (seeds < 1) throw Error("--seeds must be >= 1");
  json hashed = {{"run", finetune_hash(p)}, {"ks", ks}, {"seeds", seeds}};
  const std::string hash = fnv1a_hex(hashed.dump());
  RunDirectory dir(run_path(c, p.cfg, "low-resource", hash), c.force);
  const auto langs = p.cfg.regime(data_languages(p.data)).scope.eval_languages;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  json record = {{"command", "low-resource"}, {"run_hash", hash}, {"rows", json::array()}};
  std::vector<std::optional<std::size_t>> settings(ks.begin(), ks.end());
  settings.push_back(std::nullopt);
  for (const auto& k : settings) {
    std::vector<double> sums(langs.size() + 1, 0.0);
    for (std::size_t s = 0; s < seeds; ++s) {
      RunConfig cfg = p.cfg;
      cfg.set_json("samples_per_language", k ? json(*k) : json(nullptr));
      Regime regime = cfg.regime(data_languages(p.data));
      regime.seed = derive_seed(regime.seed, s);
      auto run = finetune(p.base.model, p.base.vocab, p.data.splits, regime, cfg.task(), cfg.train());
      const auto& per = run.record.bleu ? run.record.bleu->per_language : run.record.mrr->per_language;
      for (std::size_t i = 0; i < langs.size(); ++i) sums[i] += per.at(langs[i]);
      sums.back() += run.record.overall();
    }
    for (auto& v : sums) v /= static_cast<double>(seeds);
    const std::string label = k ? std::to_string(langs.size()) + "x " + std::to_string(*k) : "full";
    rows.push_back({label, sums});
    record["rows"].push_back({{"samples_per_language", k ? json(*k) : json(nullptr)}, {"mean", sums}});
  }
  auto columns = langs;
  columns.push_back("Overall");
  const std::string md = "# Low-resource fine-tuning\n\n" + markdown_table("Samples", columns, rows, 100.0, 2);
  write_json(dir / "low_resource.json", record);
  write_text(dir / "low_resource.md", md);
  out << md << dir.path().string() << "\n";
  return 0;
}

int cmd_cross_lingual(const Common& c, std::ostream& out) {
  Prepared p = prepare(c);
  const std::string hash = fnv1a_hex(json({{"run", finetune_hash(p)}, {"command", "cross"}}).dump());
  RunDirectory dir(run_path(c, p.cfg, "cross-lingual", hash), c.force);
  const Regime tmpl = p.cfg.regime(data_languages(p.data));
  const auto& langs = tmpl.scope.train_languages;
  auto r = cross_lingual_matrix(p.base.model, p.base.vocab, p.data.splits, tmpl, langs, p.cfg.task(), p.cfg.train());
  write_matrix_csv(dir / "adapter.csv", langs, r.adapter);
  write_matrix_csv(dir / "full.csv", langs, r.full);
  write_matrix_csv(dir / "relative.csv", langs, r.relative);
  auto rows = [&](const Matrix& m) {
    std::vector<std::pair<std::string, std::vector<double>>> out_rows;
    for (std::size_t i = 0; i < langs.size(); ++i) out_rows.push_back({langs[i], m[i]});
    return out_rows;
  };
  const std::string md = "# Cross-lingual, adapter\n\n" + markdown_table("Train \\ Eval", langs, rows(r.adapter), 100.0, 2) +
                         "\n# Cross-lingual, full\n\n" + markdown_table("Train \\ Eval", langs, rows(r.full), 100.0, 2) +
                         "\n# Relative improvement (adapter - full) / full\n\n" +
                         markdown_table("Train \\ Eval", langs, rows(r.relative), 100.0, 2);
  write_json(dir / "cross_lingual.json",
             {{"command", "cross-lingual"}, {"run_hash", hash}, {"languages", langs}, {"adapter", r.adapter},
              {"full", r.full}, {"relative", r.relative}});
  write_text(dir / "cross_lingual.md", md);
  out << md << dir.path().string() << "\n";
  return 0;
}

// report ----------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& runs, const std::string& out_path, bool force, std::ostream& out) {
  if (runs.empty()) throw Error("report needs at least one run directory");
  std::vector<std::pair<std::string, BleuReport>> bleu_rows;
  std::vector<std::pair<std::string, MrrReport>> mrr_rows;
  json collected = json::array();
  for (const auto& r : runs) {
    const json rec = read_json(fs::path(r) / "record.json");
    if (rec.value("command", "") != "finetune") throw Error(r + " is not a finetune run");
    std::string label = rec.at("regime").at("tuning").get<std::string>() + "/" +
                        rec.at("regime").at("scope").at("kind").get<std::string>() + " (" +
                        rec.at("run_hash").get<std::string>().substr(0, 8) + ")";
    const auto& m = rec.at("metrics");
    if (m.at("metric") == "smoothed_bleu4") {
      BleuReport b;
      b.per_language = m.at("per_language").get<std::map<std::string, double>>();
      b.overall = m.at("overall").get<double>();
      bleu_rows.push_back({label, b});
    } else {
      MrrReport q;
      q.per_language = m.at("per_language").get<std::map<std::string, double>>();
      q.overall = m.at("overall").get<double>();
      mrr_rows.push_back({label, q});
    }
    collected.push_back({{"run", r}, {"label", label}, {"metrics", m}});
  }
  std::string md;
  if (!bleu_rows.empty()) md += "# Code summarization (smoothed BLEU-4)\n\n" + bleu_markdown(bleu_rows);
  if (!mrr_rows.empty()) md += (md.empty() ? "" : "\n") + std::string("# Code search (MRR)\n\n") + mrr_markdown(mrr_rows);
  if (!out_path.empty()) {
    const fs::path md_path = out_path;
    if (fs::exists(md_path) && !force) throw Error(md_path.string() + " exists (pass --force to overwrite)");
    write_text(md_path, md);
    fs::path json_path = md_path;
    json_path.replace_extension(".json");
    write_json(json_path, collected);
  }
  out << md;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"adaptlab: adapter tuning, probing and evaluation on synthetic code corpora", "adaptlab"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write a synthetic multilingual corpus and its splits");
  generate->add_option("--languages", gen.languages, "language count or comma-separated names")->capture_default_str();
  generate->add_option("--n", gen.n, "examples for the smallest language")->capture_default_str();
  generate->add_option("--imbalance", gen.imbalance, "largest / smallest language size")->capture_default_str();
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("--out", gen.out, "output directory")->required();
  generate->add_option("--split", gen.fractions, "train,dev,test fractions")->capture_default_str();
  generate->add_option("--max-tokens", gen.max_tokens, "exclusive upper bound on code tokens")->capture_default_str();
  generate->add_flag("--force", gen.force, "overwrite existing output");

  Common pre_c, ft_c, ev_c, pr_c, sw_c, lr_c, cl_c;
  auto* pretrain = app.add_subcommand("pretrain", "MLM pre-training of the base model");
  add_common(pretrain, pre_c);
  auto* ft = app.add_subcommand("finetune", "fine-tune a pre-trained base under one regime");
  add_common(ft, ft_c);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, ev_c);
  eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint or run directory")->required();
  eval->add_option("--adapters", ev.adapters, "adapter checkpoint to attach");
  eval->add_option("--task", ev.task, "summarization or search")->capture_default_str();
  eval->add_option("--languages", ev.languages, "comma-separated languages")->required();
  eval->add_option("--data", ev.data, "corpus directory")->capture_default_str();

  ProbeArgs pr;
  auto* probe = app.add_subcommand("probe", "layer-wise probing of encoder representations");
  add_common(probe, pr_c);
  probe->add_option("--checkpoint", pr.checkpoint, "model checkpoint or run directory")->required();
  probe->add_option("--adapters", pr.adapters, "adapter checkpoint to attach");
  probe->add_option("--tasks", pr.tasks, "comma-separated subset of LEN,CPX,TYP");

  std::string dims = "24,64,128";
  auto* sweep = app.add_subcommand("sweep-dim", "adapter bottleneck dimension sweep");
  add_common(sweep, sw_c);
  sweep->add_option("--dims", dims, "comma-separated bottleneck dimensions")->capture_default_str();

  std::string ks = "100,200,500,1000";
  std::size_t seeds = 3;
  auto* low = app.add_subcommand("low-resource", "fine-tune on k samples per language, averaged over seeds");
  add_common(low, lr_c);
  low->add_option("--ks", ks, "comma-separated samples per language")->capture_default_str();
  low->add_option("--seeds", seeds, "repetitions with derived seeds")->capture_default_str();

  auto* cross = app.add_subcommand("cross-lingual", "train-language x eval-language matrices");
  add_common(cross, cl_c);

  std::vector<std::string> runs;
  std::string report_out;
  bool report_force = false;
  auto* report = app.add_subcommand("report", "collect finetune runs into one table");
  report->add_option("runs", runs, "finetune run directories")->required();
  report->add_option("--out", report_out, "markdown output path (JSON written alongside)");
  report->add_flag("--force", report_force, "overwrite existing output");

  std::vector<std::string> argv_store{"adaptlab"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*generate) return cmd_generate(gen, out);
    if (*pretrain) return cmd_pretrain(pre_c, out);
    if (*ft) return cmd_finetune(ft_c, out);
    if (*eval) return cmd_eval(ev_c, ev, out);
    if (*probe) return cmd_probe(pr_c, pr, out);
    if (*sweep) return cmd_sweep_dim(sw_c, dims, out);
    if (*low) return cmd_low_resource(lr_c, ks, seeds, out);
    if (*cross) return cmd_cross_lingual(cl_c, out);
    if (*report) return cmd_report(runs, report_out, report_force, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace adaptlab
