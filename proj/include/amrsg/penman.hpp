#pragma once

// PENMAN notation for AMR graphs.
//
//   (p / planet :name (n / name :op1 "Earth"))
//
// A graph is a set of variable declarations `var / concept`, role edges
// between variables, and constant attributes (quoted strings, numerals,
// bare symbols). Re-referencing an already declared variable produces an
// edge, not a second declaration. Roles ending in "-of" are stored with
// source and target swapped and the suffix dropped, so a serialized
// re-entrant graph parses back to the same edge set.
//
// Constant vs. variable-reference resolution for bare symbols: a symbol
// matching the variable pattern (one lowercase letter plus optional
// digits) must be declared somewhere in the expression, otherwise the
// parse fails; any other bare symbol is an attribute constant. Numerals
// and quoted strings are always constants.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "amrsg/common.hpp"

namespace amrsg::penman {

struct PenmanError : InputError {
  int line = 0;
  int column = 0;

  PenmanError(const std::string& msg, int line_, int column_)
      : InputError(msg + " (line " + std::to_string(line_) + ", column " +
                   std::to_string(column_) + ")"),
        line(line_),
        column(column_) {}
};

struct UnreachableVariable : InputError {
  using InputError::InputError;
};

struct DuplicateFactId : InputError {
  using InputError::InputError;
};

struct MissingIdLine : InputError {
  using InputError::InputError;
};

struct AmrEdge {
  std::string source;
  std::string role;
  std::string target;

  auto operator<=>(const AmrEdge&) const = default;
};

struct AmrAttribute {
  std::string source;
  std::string role;
  std::string value;  // stored without surrounding quotes

  auto operator<=>(const AmrAttribute&) const = default;
};

// One sentence's rooted AMR. Variables keep declaration order; edges and
// attributes keep source order, which the serializer relies on.
struct AmrGraph {
  std::string root;
  std::vector<std::pair<std::string, std::string>> variables;  // id -> concept
  std::vector<AmrEdge> edges;
  std::vector<AmrAttribute> attributes;

  bool has_variable(std::string_view id) const {
    return std::any_of(variables.begin(), variables.end(),
                       [&](const auto& v) { return v.first == id; });
  }

  const std::string* concept_of(std::string_view id) const {
    for (const auto& [var, label] : variables)
      if (var == id) return &label;
    return nullptr;
  }

  AmrGraph& add_variable(std::string id, std::string label) {
    if (root.empty()) root = id;
    variables.emplace_back(std::move(id), std::move(label));
    return *this;
  }

  AmrGraph& add_edge(std::string source, std::string role,
                     std::string target) {
    edges.push_back({std::move(source), std::move(role), std::move(target)});
    return *this;
  }

  AmrGraph& add_attribute(std::string source, std::string role,
                          std::string value) {
    attributes.push_back(
        {std::move(source), std::move(role), std::move(value)});
    return *this;
  }
};

namespace detail {

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

enum class TokKind { LParen, RParen, Slash, Role, Str, Symbol, End };

struct Token {
  TokKind kind = TokKind::End;
  std::string text;
  int line = 1;
  int column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Token next() {
    skip_space();
    Token t;
    t.line = line_;
    t.column = col_;
    if (pos_ >= text_.size()) return t;  // End
    char c = text_[pos_];
    switch (c) {
      case '(':
        advance();
        t.kind = TokKind::LParen;
        return t;
      case ')':
        advance();
        t.kind = TokKind::RParen;
        return t;
      case '/':
        advance();
        t.kind = TokKind::Slash;
        return t;
      case '"':
        t.kind = TokKind::Str;
        t.text = read_string(t);
        return t;
      default:
        break;
    }
    t.kind = c == ':' ? TokKind::Role : TokKind::Symbol;
    while (pos_ < text_.size()) {
      c = text_[pos_];
      if (c == '(' || c == ')' || c == '/' || c == '"' || c == ' ' ||
          c == '\t' || c == '\n' || c == '\r')
        break;
      t.text.push_back(c);
      advance();
    }
    return t;
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c != ' ' && c != '\t' && c != '\n' && c != '\r') break;
      advance();
    }
  }

  std::string read_string(const Token& at) {
    advance();  // opening quote
    std::string out;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '"') {
        advance();
        return out;
      }
      if (c == '\\' && pos_ + 1 < text_.size() &&
          (text_[pos_ + 1] == '"' || text_[pos_ + 1] == '\\')) {
        advance();
        c = text_[pos_];
      }
      out.push_back(c);
      advance();
    }
    throw PenmanError("unterminated string", at.line, at.column);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

inline bool variable_like(std::string_view s) {
  if (s.empty() || s[0] < 'a' || s[0] > 'z') return false;
  return std::all_of(s.begin() + 1, s.end(),
                     [](char c) { return c >= '0' && c <= '9'; });
}

inline bool numeral(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  if (i >= s.size()) return false;
  bool digits = false, dot = false;
  for (; i < s.size(); ++i) {
    if (s[i] >= '0' && s[i] <= '9') {
      digits = true;
    } else if (s[i] == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digits;
}

// A bare symbol in target position whose referent may be declared later.
struct PendingRef {
  std::string symbol;
  int line;
  int column;
};

struct Parser {
  Lexer lexer;
  Token look;
  AmrGraph graph;
  std::vector<PendingRef> pending;

  explicit Parser(std::string_view text) : lexer(text) { look = lexer.next(); }

  Token eat() {
    Token t = look;
    look = lexer.next();
    return t;
  }

  [[noreturn]] void fail(const std::string& msg, const Token& t) {
    throw PenmanError(msg, t.line, t.column);
  }

  // Inserting at `slot` keeps edges in source-text order even though a
  // nested node is parsed before its connecting edge can be recorded.
  void add_role_edge(std::size_t slot, std::string source,
                     const std::string& role, std::string target) {
    // ":role-of" is the inverted form of ":role".
    AmrEdge e;
    if (role.size() > 3 && role.ends_with("-of"))
      e = {std::move(target), role.substr(0, role.size() - 3),
           std::move(source)};
    else
      e = {std::move(source), role, std::move(target)};
    graph.edges.insert(graph.edges.begin() + static_cast<std::ptrdiff_t>(slot),
                       std::move(e));
  }

  // node := '(' var '/' concept (role target)* ')'
  std::string parse_node() {
    Token open = eat();
    if (open.kind != TokKind::LParen) fail("expected '('", open);
    Token var = eat();
    if (var.kind != TokKind::Symbol) fail("expected variable", var);
    if (graph.has_variable(var.text))
      fail("duplicate declaration of variable '" + var.text + "'", var);
    Token slash = eat();
    if (slash.kind != TokKind::Slash) fail("expected '/'", slash);
    Token label = eat();
    if (label.kind != TokKind::Symbol || label.text.empty())
      fail("missing concept after '/'", label);
    graph.add_variable(var.text, label.text);

    while (look.kind == TokKind::Role) {
      Token role = eat();
      if (role.text.size() < 2) fail("empty role name", role);
      switch (look.kind) {
        case TokKind::LParen: {
          std::size_t slot = graph.edges.size();
          std::string child = parse_node();
          add_role_edge(slot, var.text, role.text, child);
          break;
        }
        case TokKind::Str: {
          Token s = eat();
          graph.add_attribute(var.text, role.text, s.text);
          break;
        }
        case TokKind::Symbol: {
          Token s = eat();
          if (numeral(s.text)) {
            graph.add_attribute(var.text, role.text, s.text);
          } else if (variable_like(s.text)) {
            // May be declared later in the expression; checked at the end.
            pending.push_back({s.text, s.line, s.column});
            add_role_edge(graph.edges.size(), var.text, role.text, s.text);
          } else {
            graph.add_attribute(var.text, role.text, s.text);
          }
          break;
        }
        default:
          fail("expected value after role " + role.text, look);
      }
    }
    Token close = eat();
    if (close.kind != TokKind::RParen) fail("expected ')'", close);
    return var.text;
  }

  AmrGraph run() {
    if (look.kind == TokKind::End) fail("empty input", look);
    parse_node();
    if (look.kind != TokKind::End) fail("trailing input after graph", look);
    for (const PendingRef& ref : pending)
      if (!graph.has_variable(ref.symbol))
        throw PenmanError(
            "reference to undeclared variable '" + ref.symbol + "'", ref.line,
            ref.column);
    return std::move(graph);
  }
};

}  // namespace detail

inline AmrGraph parse_penman(std::string_view text) {
  detail::Parser parser(text);
  return parser.run();
}

namespace detail {

inline std::string quote(std::string_view value) {
  std::string out = "\"";
  for (char c : value) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct Serializer {
  const AmrGraph& g;
  std::set<std::size_t> emitted_edges;
  std::unordered_set<std::string> declared;
  std::ostringstream out;

  explicit Serializer(const AmrGraph& graph) : g(graph) {}

  void emit_node(const std::string& var) {
    declared.insert(var);
    out << '(' << var << " / " << *g.concept_of(var);
    for (const AmrAttribute& attr : g.attributes)
      if (attr.source == var)
        out << ' ' << attr.role << ' ' << quote(attr.value);
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      if (emitted_edges.count(i)) continue;
      const AmrEdge& e = g.edges[i];
      if (e.source == var) {
        emitted_edges.insert(i);
        out << ' ' << e.role << ' ';
        if (declared.count(e.target))
          out << e.target;
        else
          emit_node(e.target);
      } else if (e.target == var) {
        emitted_edges.insert(i);
        out << ' ' << e.role << "-of ";
        if (declared.count(e.source))
          out << e.source;
        else
          emit_node(e.source);
      }
    }
    out << ')';
  }
};

}  // namespace detail

// Emits text that parses back to a graph isomorphic to the input. Edges are
// visited in insertion order; an edge whose far endpoint is not declared yet
// is inlined (inverted with "-of" when entered from its target side), any
// other edge becomes a bare re-reference.
inline std::string serialize_penman(const AmrGraph& g) {
  if (g.variables.empty())
    throw UnreachableVariable("cannot serialize an empty graph");
  if (!g.has_variable(g.root))
    throw InternalError("root '" + g.root + "' is not a declared variable");
  for (const AmrEdge& e : g.edges)
    if (!g.has_variable(e.source) || !g.has_variable(e.target))
      throw InternalError("edge endpoint not declared: " + e.source + " " +
                          e.role + " " + e.target);

  detail::Serializer ser(g);
  ser.emit_node(g.root);
  if (ser.declared.size() != g.variables.size()) {
    for (const auto& [var, label] : g.variables)
      if (!ser.declared.count(var))
        throw UnreachableVariable("variable '" + var +
                                  "' is not reachable from the root");
  }
  return std::move(ser.out).str();
}

// Merge identity of an AMR node: the concept label, or the replacing
// attribute value for over-general nodes. Normalized to ASCII lowercase.
using ConceptKey = std::string;

struct KeyOptions {
  std::set<std::string> overgeneral = {"name", "thing", "person",
                                       "string-entity"};
  // AMR sense suffixes ("-01") are kept by default; enable to merge senses.
  bool strip_senses = false;
};

namespace detail {

inline std::string strip_sense_suffix(std::string s) {
  std::size_t dash = s.rfind('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 >= s.size()) return s;
  for (std::size_t i = dash + 1; i < s.size(); ++i)
    if (s[i] < '0' || s[i] > '9') return s;
  s.resize(dash);
  return s;
}

}  // namespace detail

inline ConceptKey normalize_key(std::string_view raw, bool strip_sense) {
  std::string key = ascii_lower(raw);
  if (strip_sense) key = detail::strip_sense_suffix(std::move(key));
  return key;
}

// Per-variable merge keys. Over-general concepts (with at least one
// attribute) take the value of their first attribute in declaration order;
// the concept label is the fallback.
inline std::unordered_map<std::string, ConceptKey> concept_keys(
    const AmrGraph& g, const KeyOptions& opts = {}) {
  std::unordered_map<std::string, ConceptKey> keys;
  for (const auto& [var, label] : g.variables) {
    ConceptKey key;
    if (opts.overgeneral.count(ascii_lower(label))) {
      for (const AmrAttribute& attr : g.attributes) {
        if (attr.source == var) {
          key = ascii_lower(attr.value);
          break;
        }
      }
    }
    if (key.empty()) key = normalize_key(label, opts.strip_senses);
    keys.emplace(var, std::move(key));
  }
  return keys;
}

inline std::unordered_map<std::string, ConceptKey> concept_keys(
    const AmrGraph& g, std::set<std::string> overgeneral) {
  KeyOptions opts;
  opts.overgeneral = std::move(overgeneral);
  return concept_keys(g, opts);
}

// Ordered collection of fact AMRs, as read from an AMR bank file.
struct AmrBank {
  std::vector<std::pair<std::string, AmrGraph>> entries;

  const AmrGraph* find(std::string_view fact_id) const {
    for (const auto& [id, graph] : entries)
      if (id == fact_id) return &graph;
    return nullptr;
  }

  std::size_t size() const { return entries.size(); }
};

// Bank file format: blocks separated by blank lines. Each block carries a
// `# ::id <fact-id>` line and one PENMAN expression (which may span lines);
// other `#` lines are ignored.
inline AmrBank parse_amr_bank(std::string_view text) {
  AmrBank bank;
  std::unordered_set<std::string> seen;

  std::vector<std::string> block_lines;
  std::size_t block_index = 0;

  auto flush = [&]() {
    if (block_lines.empty()) return;
    std::optional<std::string> fact_id;
    std::string body;
    for (const std::string& line : block_lines) {
      std::string_view sv = line;
      if (sv.starts_with("#")) {
        std::size_t at = sv.find("::id");
        if (at != std::string_view::npos && !fact_id) {
          auto rest = detail::split_ws(sv.substr(at + 4));
          if (rest.empty())
            throw MissingIdLine("block " + std::to_string(block_index) +
                                ": '::id' with no value");
          fact_id = rest.front();
        }
        continue;
      }
      body += line;
      body += '\n';
    }
    if (!fact_id)
      throw MissingIdLine("block " + std::to_string(block_index) +
                          ": missing '# ::id' line");
    if (!seen.insert(*fact_id).second)
      throw DuplicateFactId("duplicate fact id '" + *fact_id + "'");
    try {
      bank.entries.emplace_back(*fact_id, parse_penman(body));
    } catch (const PenmanError& e) {
      throw PenmanError("block " + std::to_string(block_index) + " (" +
                            *fact_id + "): " + e.what(),
                        e.line, e.column);
    }
    block_lines.clear();
    ++block_index;
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    bool blank = line.find_first_not_of(" \t\r") == std::string_view::npos;
    if (blank)
      flush();
    else
      block_lines.emplace_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  flush();
  return bank;
}

}  // namespace amrsg::penman
