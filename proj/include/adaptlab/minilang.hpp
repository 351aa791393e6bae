// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace adaptlab {

/// Surface syntax of one synthetic programming language. Every language
/// shares the same abstract grammar:
///
///   function := FN name ( params ) : type OPEN stmt* CLOSE
///   param    := type name | name : type          (type_after_name)
///   stmt     := [DECL] (type name | name : type) = expr TERM
///             | name = expr TERM | callee ( args ) TERM
///             | IF ( cond ) OPEN stmt* CLOSE [ELSE OPEN stmt* CLOSE]
///             | WHILE ( cond ) OPEN stmt* CLOSE
///             | FOR name IN name OPEN stmt* CLOSE
///             | SWITCH ( expr ) OPEN (CASE number : stmt*)+ CLOSE
///             | RETURN expr TERM | function
///   cond     := expr (< | >) expr ((AND | OR) expr (< | >) expr)*
///   expr     := atom ((+ | - | *) atom)*
///   atom     := name | number | callee ( args )
struct MiniLangSpec {
  std::string name;
  std::string kw_function, kw_if, kw_else, kw_while, kw_for, kw_in, kw_return, kw_switch, kw_case;
  std::string kw_decl;  // empty: declarations start with the type
  std::string op_and, op_or;
  std::string block_open, block_close, terminator;
  bool type_after_name = false;
  std::vector<std::string> types;
  /// Phrase templates keyed by construct; "{0}" and "{1}" are filled with
  /// identifiers from the statement.
  std::vector<std::pair<std::string, std::string>> description_templates;

  /// Every reserved word and operator spelling of the language.
  std::vector<std::string> keywords() const;
  /// Tokens that each add one decision point (if, while, for, case, and, or).
  std::vector<std::string> decision_tokens() const;
  bool is_type(const std::string& token) const;
};

/// The six built-in mini-languages, in canonical order.
const std::vector<MiniLangSpec>& builtin_languages();
/// The first `count` built-in languages (1..6).
std::vector<MiniLangSpec> default_languages(std::size_t count = 4);
const MiniLangSpec& language_by_name(const std::string& name);

/// Identifier, function-name and callee pools (shared by all languages and
/// disjoint from every keyword and type name).
const std::vector<std::string>& identifier_pool();
const std::vector<std::string>& function_name_pool();
const std::vector<std::string>& callee_pool();

/// Size and shape controls for one generated program.
struct ProgramKnobs {
  /// Exact number of decision points; random in [0, 4] when unset.
  std::optional<int> decisions;
  /// Inclusive/exclusive token-count window for the rendered code.
  std::size_t min_tokens = 0;
  std::size_t max_tokens = 80;
  std::size_t max_depth = 2;
  double nested_function_prob = 0.1;
};

struct GeneratedProgram {
  std::vector<std::string> code;
  std::vector<std::string> description;
  int decisions = 0;
};

/// Generates one program and its template description. Returns nullopt when
/// the knobs could not be met after a bounded number of attempts.
std::optional<GeneratedProgram> generate_program(const MiniLangSpec& lang, const ProgramKnobs& knobs,
                                                 std::mt19937_64& rng);

}  // namespace adaptlab
