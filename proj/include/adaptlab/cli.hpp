// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/adapter.hpp"
#include "adaptlab/corpus.hpp"
#include "adaptlab/model.hpp"
#include "adaptlab/probing.hpp"
#include "adaptlab/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace adaptlab {

/// Environment variable naming the default run-directory root.
inline constexpr const char* kRunRootEnv = "ADAPTLAB_RUNS";

/// Flat key/value run configuration. Every key has a default; documents may
/// only contain known keys.
class RunConfig {
 public:
  RunConfig();

  /// Validates `doc` (an object) and overlays it on the defaults. Throws one
  /// error naming every unknown or mistyped key.
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);

  /// Sets one key from command-line text; the text is parsed as JSON when it
  /// parses, as a plain string otherwise.
  void set(const std::string& key, const std::string& text);
  void set_json(const std::string& key, const nlohmann::json& value);

  const nlohmann::json& values() const { return values_; }
  const nlohmann::json& at(const std::string& key) const;
  static std::vector<std::string> keys();

  /// FNV-1a of the canonical dump.
  std::string hash() const;

  TaskKind task() const;
  ModelConfig model(std::size_t vocab_size) const;
  AdapterConfig adapter() const;
  /// `available` lists the languages present in the data; empty language
  /// lists in the config mean all of them.
  Regime regime(const std::vector<std::string>& available) const;
  TrainConfig train() const;
  PretrainConfig pretrain() const;
  std::vector<ProbeTask> probe_tasks() const;

 private:
  nlohmann::json values_;
};

/// Corpus directory written by `generate`: corpus.jsonl plus splits.json.
struct DataSet {
  std::vector<CorpusExample> corpus;
  std::map<std::string, Split> splits;
};

void write_dataset(const std::filesystem::path& dir, const std::vector<CorpusExample>& corpus,
                   const std::map<std::string, Split>& splits, const nlohmann::json& meta);
DataSet load_dataset(const std::filesystem::path& dir);

/// A run directory held under an exclusive lockfile for the lifetime of the
/// object.
class RunDirectory {
 public:
  /// Creates (or, with `force`, reuses) `path`. Throws when the directory
  /// already holds results and `force` is off, or when another process holds
  /// the lock.
  RunDirectory(std::filesystem::path path, bool force);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
  std::filesystem::path lock_;
};

/// Root for run directories: `flag` if set, else $ADAPTLAB_RUNS, else
/// `config_value`, else "runs".
std::filesystem::path resolve_run_root(const std::string& flag, const std::string& config_value);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

/// Entry point shared by the tool and the tests. Returns the exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adaptlab
