// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaptlab/minilang.hpp"

#include "adaptlab/autodiff.hpp"

#include <algorithm>
#include <map>

namespace adaptlab {

namespace {

std::vector<std::pair<std::string, std::string>> shared_templates() {
  return {{"for", "iterates over {0}"},        {"while_lt", "loops while {0} is below {1}"},
          {"while_gt", "loops while {0} is above {1}"}, {"if_lt", "checks if {0} is below {1}"},
          {"if_gt", "checks if {0} is above {1}"},  {"switch", "dispatches on {0}"},
          {"return", "returns {0}"},                {"decl", "stores {0}"},
          {"call", "calls {0}"},                    {"assign", "updates {0}"},
          {"function", "defines {0}"}};
}

MiniLangSpec make_lang(std::string name, std::vector<std::string> kw, std::string decl, std::string op_and,
                       std::string op_or, std::string open, std::string close, std::string term, bool type_after,
                       std::vector<std::string> types) {
  MiniLangSpec s;
  s.name = std::move(name);
  s.kw_function = kw[0];
  s.kw_if = kw[1];
  s.kw_else = kw[2];
  s.kw_while = kw[3];
  s.kw_for = kw[4];
  s.kw_in = kw[5];
  s.kw_return = kw[6];
  s.kw_switch = kw[7];
  s.kw_case = kw[8];
  s.kw_decl = std::move(decl);
  s.op_and = std::move(op_and);
  s.op_or = std::move(op_or);
  s.block_open = std::move(open);
  s.block_close = std::move(close);
  s.terminator = std::move(term);
  s.type_after_name = type_after;
  s.types = std::move(types);
  s.description_templates = shared_templates();
  return s;
}

}  // namespace

std::vector<std::string> MiniLangSpec::keywords() const {
  std::vector<std::string> k{kw_function, kw_if, kw_else, kw_while, kw_for, kw_in, kw_return, kw_switch, kw_case,
                             op_and,      op_or};
  if (!kw_decl.empty()) k.push_back(kw_decl);
  return k;
}

std::vector<std::string> MiniLangSpec::decision_tokens() const {
  return {kw_if, kw_while, kw_for, kw_case, op_and, op_or};
}

bool MiniLangSpec::is_type(const std::string& token) const {
  return std::find(types.begin(), types.end(), token) != types.end();
}

const std::vector<MiniLangSpec>& builtin_languages() {
  static const std::vector<MiniLangSpec> langs = {
      make_lang("cee", {"func", "if", "else", "while", "for", "in", "return", "switch", "case"}, "", "&", "|", "{", "}",
                ";", false, {"int", "float", "bool", "char", "long"}),
      make_lang("pyro", {"def", "when", "otherwise", "loop", "each", "of", "give", "match", "arm"}, "let", "and", "or",
                "begin", "end", ".", true, {"Int", "Float", "Bool", "Str", "Bytes"}),
      make_lang("rubex", {"proc", "whenever", "elsewise", "repeat", "iter", "within", "yield", "select", "option"},
                "var", "andalso", "orelse", "do", "done", ";", true, {"i32", "f64", "boolean", "text", "byte"}),
      make_lang("gost", {"fun", "check", "instead", "during", "over", "from", "out", "route", "branch"}, "val", "land",
                "lor", "[", "]", ".", false, {"num", "real", "flag", "word", "rune"}),
      make_lang("javo", {"method", "cond", "alt", "until", "traverse", "among", "giveback", "choose", "variant"}, "",
                "&", "|", "{", "}", ";", false, {"integer", "double", "logical", "character", "longint"}),
      make_lang("phpx", {"routine", "ifx", "elsex", "whilex", "foreach", "as", "ret", "swx", "casex"}, "dim", "et", "ou",
                "enter", "leave", ";", true, {"Integer", "Real", "Logical", "String", "Char"}),
  };
  return langs;
}

std::vector<MiniLangSpec> default_languages(std::size_t count) {
  const auto& all = builtin_languages();
  if (count < 1 || count > all.size()) throw Error("languages: count must lie in [1, 6]");
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count)};
}

const MiniLangSpec& language_by_name(const std::string& name) {
  for (const auto& l : builtin_languages()) {
    if (l.name == name) return l;
  }
  throw Error("unknown mini-language '" + name + "'");
}

const std::vector<std::string>& identifier_pool() {
  static const std::vector<std::string> pool = {
      "value", "count",  "total", "items",  "index", "limit", "result", "data",   "size",   "left",
      "right", "node",   "key",   "item",   "acc",   "step",  "flag_v", "buffer", "offset", "width",
      "height", "score", "label", "path",   "temp",  "delta", "first",  "last",   "number", "amount",
      "price", "rate",   "level", "depth",  "weight", "sum_v", "cursor", "queue",  "stack_v", "entry"};
  return pool;
}

const std::vector<std::string>& function_name_pool() {
  static const std::vector<std::string> pool = [] {
    std::vector<std::string> verbs{"compute", "count", "find", "update", "check", "parse", "merge", "filter"};
    std::vector<std::string> nouns{"total", "items", "values", "scores", "nodes", "records", "tokens", "prices"};
    std::vector<std::string> out;
    for (const auto& v : verbs) {
      for (const auto& n : nouns) out.push_back(v + "_" + n);
    }
    return out;
  }();
  return pool;
}

const std::vector<std::string>& callee_pool() {
  static const std::vector<std::string> pool = {"emit", "store", "notify", "push", "log_value", "fetch"};
  return pool;
}

// ---------------------------------------------------------------------------
// Generator

namespace {

struct Expr {
  std::vector<std::string> atoms;  // rendered atoms (a call renders as several tokens)
  std::vector<std::string> ops;
  std::string head;                // first identifier-or-number, used in descriptions
};

struct Cond {
  std::vector<std::pair<Expr, Expr>> cmps;
  std::vector<std::string> cmp_ops;
  std::vector<bool> joins_and;
};

struct Function;

struct Stmt {
  enum Kind { kDecl, kAssign, kCall, kIf, kWhile, kFor, kSwitch, kReturn, kFunction } kind = kDecl;
  std::string type, name, other;
  Expr expr;
  std::vector<Expr> args;
  Cond cond;
  std::vector<Stmt> body, else_body;
  bool has_else = false;
  std::vector<std::pair<int, std::vector<Stmt>>> arms;
  std::shared_ptr<Function> fn;
};

struct Function {
  std::string name, ret_type;
  std::vector<std::pair<std::string, std::string>> params;  // (type, name)
  std::vector<Stmt> body;
};

class Generator {
 public:
  Generator(const MiniLangSpec& lang, const ProgramKnobs& knobs, std::mt19937_64& rng)
      : lang_(lang), knobs_(knobs), rng_(rng) {}

  Function function(int& budget, bool nested) {
    Function f;
    f.name = pick(function_name_pool());
    f.ret_type = pick(lang_.types);
    const int n_params = uniform(1, nested ? 1 : 3);
    for (int i = 0; i < n_params; ++i) f.params.emplace_back(pick(lang_.types), pick(identifier_pool()));
    f.body = block(budget, 0, uniform(1, nested ? 1 : 3), !nested);
    while (!nested && budget > 0) f.body.push_back(decision(budget, 0));
    Stmt ret;
    ret.kind = Stmt::kReturn;
    ret.expr = expr();
    f.body.push_back(ret);
    return f;
  }

  Stmt filler(bool allow_function) {
    Stmt s;
    if (allow_function && chance(knobs_.nested_function_prob)) {
      int zero = 0;
      s.kind = Stmt::kFunction;
      s.fn = std::make_shared<Function>(function(zero, true));
      return s;
    }
    const double r = unit();
    if (r < 0.4) {
      s.kind = Stmt::kDecl;
      s.type = pick(lang_.types);
      s.name = pick(identifier_pool());
      s.expr = expr();
    } else if (r < 0.7) {
      s.kind = Stmt::kAssign;
      s.name = pick(identifier_pool());
      s.expr = expr();
    } else {
      s.kind = Stmt::kCall;
      s.name = pick(callee_pool());
      const int n = uniform(0, 2);
      for (int i = 0; i < n; ++i) s.args.push_back(atom_expr());
    }
    return s;
  }

  std::vector<Stmt> block(int& budget, std::size_t depth, int slots, bool allow_function) {
    std::vector<Stmt> out;
    for (int s = 0; s < slots; ++s) {
      const bool can_nest = depth < knobs_.max_depth;
      const bool place = budget > 0 && can_nest && (chance(0.6) || budget >= slots - s);
      out.push_back(place ? decision(budget, depth) : filler(allow_function && depth == 0));
    }
    return out;
  }

  Stmt decision(int& budget, std::size_t depth) {
    Stmt s;
    std::vector<Stmt::Kind> kinds{Stmt::kIf, Stmt::kWhile, Stmt::kFor};
    if (budget >= 2) kinds.push_back(Stmt::kSwitch);
    s.kind = kinds[static_cast<std::size_t>(uniform(0, static_cast<int>(kinds.size()) - 1))];
    const int inner_slots = uniform(1, 2);
    switch (s.kind) {
      case Stmt::kIf:
      case Stmt::kWhile: {
        int joins = 0;
        while (joins < 2 && budget - 1 - joins > 0 && chance(0.3)) ++joins;
        s.cond = cond(joins);
        budget -= 1 + joins;
        s.body = block(budget, depth + 1, inner_slots, false);
        if (s.kind == Stmt::kIf && chance(0.3)) {
          s.has_else = true;
          s.else_body = block(budget, depth + 1, 1, false);
        }
        break;
      }
      case Stmt::kFor:
        budget -= 1;
        s.name = pick(identifier_pool());
        s.other = pick(identifier_pool());
        s.body = block(budget, depth + 1, inner_slots, false);
        break;
      case Stmt::kSwitch: {
        const int arms = uniform(2, std::min(3, budget));
        budget -= arms;
        s.expr = atom_expr();
        for (int a = 0; a < arms; ++a) s.arms.emplace_back(a, block(budget, depth + 1, 1, false));
        break;
      }
      default:
        break;
    }
    return s;
  }

  Expr atom_expr() {
    Expr e;
    add_atom(e, false);
    return e;
  }

  Expr expr() {
    Expr e;
    add_atom(e, true);
    if (chance(0.4)) {
      e.ops.push_back(pick(std::vector<std::string>{"+", "-", "*"}));
      add_atom(e, false);
    }
    return e;
  }

  Cond cond(int joins) {
    Cond c;
    for (int i = 0; i <= joins; ++i) {
      Expr lhs;
      add_ident(lhs);
      c.cmps.emplace_back(lhs, atom_expr());
      c.cmp_ops.push_back(chance(0.5) ? "<" : ">");
      if (i > 0) c.joins_and.push_back(chance(0.5));
    }
    return c;
  }

  std::vector<std::string> render(const Function& f) const {
    std::vector<std::string> out{lang_.kw_function, f.name, "("};
    for (std::size_t i = 0; i < f.params.size(); ++i) {
      if (i) out.push_back(",");
      typed(out, f.params[i].first, f.params[i].second);
    }
    out.insert(out.end(), {")", ":", f.ret_type, lang_.block_open});
    for (const auto& s : f.body) render(s, out);
    out.push_back(lang_.block_close);
    return out;
  }

  std::vector<std::string> describe(const Function& f) const {
    std::vector<std::string> out;
    std::string name = f.name;
    for (std::size_t pos; (pos = name.find('_')) != std::string::npos;) {
      out.push_back(name.substr(0, pos));
      name = name.substr(pos + 1);
    }
    out.push_back(name);
    out.push_back(":");
    std::size_t phrases = 0;
    for (const auto& s : f.body) {
      if (phrases == 4) break;
      if (phrases) out.push_back(",");
      auto words = phrase(s);
      out.insert(out.end(), words.begin(), words.end());
      ++phrases;
    }
    return out;
  }

 private:
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng_)];
  }
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  bool chance(double p) { return unit() < p; }

  void add_ident(Expr& e) {
    const std::string& id = pick(identifier_pool());
    e.atoms.push_back(id);
    if (e.head.empty()) e.head = id;
  }

  void add_atom(Expr& e, bool allow_call) {
    const double r = unit();
    if (allow_call && r < 0.1) {
      const std::string& callee = pick(callee_pool());
      const std::string& arg = pick(identifier_pool());
      e.atoms.push_back(callee + " ( " + arg + " )");
      if (e.head.empty()) e.head = arg;
    } else if (r < 0.65) {
      add_ident(e);
    } else {
      const std::string num = std::to_string(uniform(0, 9));
      e.atoms.push_back(num);
      if (e.head.empty()) e.head = num;
    }
  }

  static void push_words(std::vector<std::string>& out, const std::string& text) {
    std::size_t start = 0;
    while (start < text.size()) {
      const auto space = text.find(' ', start);
      const auto end = space == std::string::npos ? text.size() : space;
      if (end > start) out.push_back(text.substr(start, end - start));
      start = end + 1;
    }
  }

  static void render_expr(const Expr& e, std::vector<std::string>& out) {
    for (std::size_t i = 0; i < e.atoms.size(); ++i) {
      if (i) out.push_back(e.ops[i - 1]);
      push_words(out, e.atoms[i]);
    }
  }

  void typed(std::vector<std::string>& out, const std::string& type, const std::string& name) const {
    if (lang_.type_after_name) {
      out.insert(out.end(), {name, ":", type});
    } else {
      out.insert(out.end(), {type, name});
    }
  }

  void render_block(const std::vector<Stmt>& body, std::vector<std::string>& out) const {
    out.push_back(lang_.block_open);
    for (const auto& s : body) render(s, out);
    out.push_back(lang_.block_close);
  }

  void render_cond(const Cond& c, std::vector<std::string>& out) const {
    for (std::size_t i = 0; i < c.cmps.size(); ++i) {
      if (i) out.push_back(c.joins_and[i - 1] ? lang_.op_and : lang_.op_or);
      render_expr(c.cmps[i].first, out);
      out.push_back(c.cmp_ops[i]);
      render_expr(c.cmps[i].second, out);
    }
  }

  void render(const Stmt& s, std::vector<std::string>& out) const {
    switch (s.kind) {
      case Stmt::kDecl:
        if (!lang_.kw_decl.empty()) out.push_back(lang_.kw_decl);
        typed(out, s.type, s.name);
        out.push_back("=");
        render_expr(s.expr, out);
        out.push_back(lang_.terminator);
        break;
      case Stmt::kAssign:
        out.insert(out.end(), {s.name, "="});
        render_expr(s.expr, out);
        out.push_back(lang_.terminator);
        break;
      case Stmt::kCall:
        out.insert(out.end(), {s.name, "("});
        for (std::size_t i = 0; i < s.args.size(); ++i) {
          if (i) out.push_back(",");
          render_expr(s.args[i], out);
        }
        out.insert(out.end(), {")", lang_.terminator});
        break;
      case Stmt::kIf:
      case Stmt::kWhile:
        out.insert(out.end(), {s.kind == Stmt::kIf ? lang_.kw_if : lang_.kw_while, "("});
        render_cond(s.cond, out);
        out.push_back(")");
        render_block(s.body, out);
        if (s.has_else) {
          out.push_back(lang_.kw_else);
          render_block(s.else_body, out);
        }
        break;
      case Stmt::kFor:
        out.insert(out.end(), {lang_.kw_for, s.name, lang_.kw_in, s.other});
        render_block(s.body, out);
        break;
      case Stmt::kSwitch:
        out.insert(out.end(), {lang_.kw_switch, "("});
        render_expr(s.expr, out);
        out.insert(out.end(), {")", lang_.block_open});
        for (const auto& [label, body] : s.arms) {
          out.insert(out.end(), {lang_.kw_case, std::to_string(label), ":"});
          for (const auto& inner : body) render(inner, out);
        }
        out.push_back(lang_.block_close);
        break;
      case Stmt::kReturn:
        out.push_back(lang_.kw_return);
        render_expr(s.expr, out);
        out.push_back(lang_.terminator);
        break;
      case Stmt::kFunction: {
        auto inner = render(*s.fn);
        out.insert(out.end(), inner.begin(), inner.end());
        break;
      }
    }
  }

  std::vector<std::string> fill(const std::string& key, const std::string& a, const std::string& b) const {
    std::string text;
    for (const auto& [k, t] : lang_.description_templates) {
      if (k == key) text = t;
    }
    std::vector<std::string> words;
    push_words(words, text);
    for (auto& w : words) {
      if (w == "{0}") w = a;
      if (w == "{1}") w = b;
    }
    return words;
  }

  std::vector<std::string> phrase(const Stmt& s) const {
    switch (s.kind) {
      case Stmt::kDecl: return fill("decl", s.name, "");
      case Stmt::kAssign: return fill("assign", s.name, "");
      case Stmt::kCall: return fill("call", s.name, "");
      case Stmt::kIf:
      case Stmt::kWhile: {
        const bool lt = s.cond.cmp_ops[0] == "<";
        const std::string key = std::string(s.kind == Stmt::kIf ? "if_" : "while_") + (lt ? "lt" : "gt");
        return fill(key, s.cond.cmps[0].first.head, s.cond.cmps[0].second.head);
      }
      case Stmt::kFor: return fill("for", s.other, "");
      case Stmt::kSwitch: return fill("switch", s.expr.head, "");
      case Stmt::kReturn: return fill("return", s.expr.head, "");
      case Stmt::kFunction: return fill("function", s.fn->name, "");
    }
    return {};
  }

  const MiniLangSpec& lang_;
  const ProgramKnobs& knobs_;
  std::mt19937_64& rng_;
};

}  // namespace

std::optional<GeneratedProgram> generate_program(const MiniLangSpec& lang, const ProgramKnobs& knobs,
                                                 std::mt19937_64& rng) {
  Generator gen(lang, knobs, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 200; ++attempt) {
    int target = knobs.decisions.value_or(std::uniform_int_distribution<int>(0, 4)(rng));
    int budget = target;
    Function f = gen.function(budget, false);
    auto code = gen.render(f);
    // Grow with straight-line statements (inserted before the final return)
    // until the token window is reached.
    while (code.size() < knobs.min_tokens) {
      const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, f.body.size() - 1)(rng);
      f.body.insert(f.body.begin() + static_cast<std::ptrdiff_t>(pos), gen.filler(false));
      code = gen.render(f);
    }
    if (code.size() >= knobs.max_tokens) continue;
    return GeneratedProgram{std::move(code), gen.describe(f), target};
  }
  return std::nullopt;
}

}  // namespace adaptlab
