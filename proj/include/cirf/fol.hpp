#pragma once

// First-order-logic rationale handling: extraction of FOL lines from LLM
// prose, a recursive-descent parser for the accepted surface grammar, a
// pretty-printer that emits the same grammar, and conversion of parsed
// expressions into an instance-level reasoning graph.
//
// Grammar (lowest to highest precedence, left-associative within a level):
//
//   implies := or  ( ("→" | "->" | "implies" | "IMPLIES") or )*
//   or      := and ( ("∨" | "|" | "OR") and )*
//   and     := not ( ("∧" | "&" | "AND") not )*
//   not     := ("¬" | "~" | "NOT") not | quant not | primary
//   quant   := ("∀" | "∃") ident [ "." | ":" | "," ]
//   primary := "(" implies ")" | ident [ "(" args ")" ]

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "cirf/error.hpp"

namespace cirf {

struct Predicate {
  std::string name;
  std::vector<std::string> args;
  bool negated = false;
  std::string surface;  // verbatim source slice, not part of identity

  friend bool operator==(const Predicate& a, const Predicate& b) {
    return a.name == b.name && a.args == b.args && a.negated == b.negated;
  }
};

/// `[¬]Name(arg1,arg2,...)`.
inline std::string canonical_predicate_string(const Predicate& p) {
  std::string out = p.negated ? "¬" : "";
  out += p.name;
  out += '(';
  for (std::size_t i = 0; i < p.args.size(); ++i) {
    if (i) out += ',';
    out += p.args[i];
  }
  out += ')';
  return out;
}

struct FolExpr {
  enum class Kind { Atom, And, Or, Implies, Not };

  Kind kind = Kind::Atom;
  Predicate atom;                 // valid when kind == Atom
  std::vector<FolExpr> children;  // And/Or: >= 2, Implies: 2, Not: 1

  static FolExpr leaf(Predicate p) {
    FolExpr e;
    e.atom = std::move(p);
    return e;
  }
  static FolExpr node(Kind k, std::vector<FolExpr> children) {
    FolExpr e;
    e.kind = k;
    e.children = std::move(children);
    return e;
  }

  /// Structural equality: surface text is ignored.
  friend bool operator==(const FolExpr& a, const FolExpr& b) {
    if (a.kind != b.kind) return false;
    if (a.kind == Kind::Atom) return a.atom == b.atom;
    return a.children == b.children;
  }
};

namespace detail {

inline bool is_ident_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

inline std::string collapse_spaces(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

enum class Tok { End, Ident, LParen, RParen, Comma, And, Or, Not, Implies, Quant, Invalid };

struct Symbol {
  std::string_view text;
  Tok tok;
};

// Multi-byte and ASCII symbols, longest first where prefixes overlap.
inline constexpr std::array<Symbol, 12> kSymbols{{
    {"\xE2\x88\xA7", Tok::And},      // ∧
    {"\xE2\x88\xA8", Tok::Or},       // ∨
    {"\xC2\xAC", Tok::Not},          // ¬
    {"\xE2\x86\x92", Tok::Implies},  // →
    {"\xE2\x88\x80", Tok::Quant},    // ∀
    {"\xE2\x88\x83", Tok::Quant},    // ∃
    {"->", Tok::Implies},
    {"&", Tok::And},
    {"|", Tok::Or},
    {"~", Tok::Not},
    {"(", Tok::LParen},
    {")", Tok::RParen},
}};

inline std::optional<Tok> keyword(std::string_view word) {
  if (word == "AND") return Tok::And;
  if (word == "OR") return Tok::Or;
  if (word == "NOT") return Tok::Not;
  if (word == "implies" || word == "IMPLIES") return Tok::Implies;
  return std::nullopt;
}

struct Token {
  Tok tok = Tok::End;
  std::size_t begin = 0;
  std::size_t end = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token peek() {
    const std::size_t save = pos_;
    Token t = next();
    pos_ = save;
    return t;
  }

  Token next() {
    skip_space();
    Token t;
    t.begin = pos_;
    if (pos_ >= src_.size()) {
      t.tok = Tok::End;
      t.end = pos_;
      return t;
    }
    const std::string_view rest = src_.substr(pos_);
    for (const auto& sym : kSymbols) {
      if (rest.starts_with(sym.text)) {
        pos_ += sym.text.size();
        t.tok = sym.tok;
        t.end = pos_;
        return t;
      }
    }
    if (rest.front() == ',') {
      ++pos_;
      t.tok = Tok::Comma;
      t.end = pos_;
      return t;
    }
    std::size_t end = pos_;
    while (end < src_.size() && is_ident_byte(static_cast<unsigned char>(src_[end])) &&
           !starts_symbol(end))
      ++end;
    if (end == pos_) {
      ++pos_;
      t.tok = Tok::Invalid;
      t.end = pos_;
      return t;
    }
    const std::string_view word = src_.substr(pos_, end - pos_);
    pos_ = end;
    t.end = end;
    t.tok = keyword(word).value_or(Tok::Ident);
    return t;
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  std::string_view source() const { return src_; }

  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

 private:
  bool starts_symbol(std::size_t at) const {
    const std::string_view rest = src_.substr(at);
    for (const auto& sym : kSymbols)
      if (sym.text.size() > 1 && rest.starts_with(sym.text)) return true;
    return false;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

inline const char* tok_name(Tok t) {
  switch (t) {
    case Tok::End: return "end-of-line";
    case Tok::Ident: return "identifier";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::Comma: return "','";
    case Tok::And: return "and";
    case Tok::Or: return "or";
    case Tok::Not: return "not";
    case Tok::Implies: return "implies";
    case Tok::Quant: return "quantifier";
    case Tok::Invalid: return "invalid";
  }
  return "?";
}

class Parser {
 public:
  static constexpr int kMaxDepth = 256;

  explicit Parser(std::string_view src) : lex_(src) {}

  FolExpr parse_line() {
    if (lex_.peek().tok == Tok::End) throw ParseError(0, {"predicate"}, "empty line");
    FolExpr e = parse_implies(0);
    const Token t = lex_.peek();
    if (t.tok != Tok::End)
      throw ParseError(t.begin, {"and", "or", "implies", "end-of-line"},
                       std::string("unexpected ") + tok_name(t.tok));
    return e;
  }

 private:
  void check_depth(int depth) {
    if (depth > kMaxDepth) throw ParseError(lex_.pos(), {}, "nesting too deep");
  }

  FolExpr parse_implies(int depth) {
    check_depth(depth);
    FolExpr lhs = parse_or(depth + 1);
    while (lex_.peek().tok == Tok::Implies) {
      lex_.next();
      FolExpr rhs = parse_or(depth + 1);
      std::vector<FolExpr> kids;
      kids.push_back(std::move(lhs));
      kids.push_back(std::move(rhs));
      lhs = FolExpr::node(FolExpr::Kind::Implies, std::move(kids));
    }
    return lhs;
  }

  FolExpr parse_chain(int depth, Tok op, FolExpr::Kind kind, FolExpr (Parser::*sub)(int)) {
    check_depth(depth);
    FolExpr first = (this->*sub)(depth + 1);
    if (lex_.peek().tok != op) return first;
    std::vector<FolExpr> kids;
    kids.push_back(std::move(first));
    while (lex_.peek().tok == op) {
      lex_.next();
      kids.push_back((this->*sub)(depth + 1));
    }
    return FolExpr::node(kind, std::move(kids));
  }

  FolExpr parse_or(int depth) {
    return parse_chain(depth, Tok::Or, FolExpr::Kind::Or, &Parser::parse_and);
  }
  FolExpr parse_and(int depth) {
    return parse_chain(depth, Tok::And, FolExpr::Kind::And, &Parser::parse_not);
  }

  static FolExpr negate(FolExpr e) {
    if (e.kind == FolExpr::Kind::Atom) {
      e.atom.negated = !e.atom.negated;
      return e;
    }
    if (e.kind == FolExpr::Kind::Not) return std::move(e.children.front());
    std::vector<FolExpr> kids;
    kids.push_back(std::move(e));
    return FolExpr::node(FolExpr::Kind::Not, std::move(kids));
  }

  FolExpr parse_not(int depth) {
    check_depth(depth);
    const Token t = lex_.peek();
    if (t.tok == Tok::Not) {
      lex_.next();
      return negate(parse_not(depth + 1));
    }
    if (t.tok == Tok::Quant) {
      lex_.next();
      const Token var = lex_.next();
      if (var.tok != Tok::Ident)
        throw ParseError(var.begin, {"identifier"}, "quantifier without variable");
      lex_.skip_space();
      const std::size_t p = lex_.pos();
      const std::string_view src = lex_.source();
      if (p < src.size() && (src[p] == '.' || src[p] == ':' || src[p] == ','))
        lex_.seek(p + 1);
      return parse_not(depth + 1);
    }
    return parse_primary(depth + 1);
  }

  FolExpr parse_primary(int depth) {
    check_depth(depth);
    const Token t = lex_.next();
    if (t.tok == Tok::LParen) {
      FolExpr inner = parse_implies(depth + 1);
      const Token close = lex_.next();
      if (close.tok != Tok::RParen)
        throw ParseError(close.begin, {"')'", "and", "or", "implies"},
                         std::string("unexpected ") + tok_name(close.tok));
      return inner;
    }
    if (t.tok != Tok::Ident)
      throw ParseError(t.begin, {"identifier", "'('", "not"},
                       std::string("unexpected ") + tok_name(t.tok));
    Predicate p;
    const std::string_view src = lex_.source();
    p.name = std::string(src.substr(t.begin, t.end - t.begin));
    // The argument list must follow the name directly: "Name(" not "Name (".
    std::size_t end = t.end;
    if (t.end < src.size() && src[t.end] == '(') {
      end = parse_args(t.end + 1, p.args);
      lex_.seek(end);
    }
    p.surface = std::string(src.substr(t.begin, end - t.begin));
    return FolExpr::leaf(std::move(p));
  }

  // Splits the argument text on top-level commas; nested parentheses are kept
  // verbatim inside an argument. Returns the offset just past the closing ')'.
  std::size_t parse_args(std::size_t pos, std::vector<std::string>& out) {
    const std::string_view src = lex_.source();
    int depth = 0;
    std::size_t arg_begin = pos;
    bool any_content = false;
    for (std::size_t i = pos; i < src.size(); ++i) {
      const char c = src[i];
      if (c == '(') {
        if (++depth > kMaxDepth) throw ParseError(i, {}, "nesting too deep");
      } else if (c == ')' && depth > 0) {
        --depth;
      } else if ((c == ',' || c == ')') && depth == 0) {
        std::string arg = collapse_spaces(src.substr(arg_begin, i - arg_begin));
        if (arg.empty()) {
          if (c == ')' && !any_content && out.empty()) return i + 1;  // "Name()"
          throw ParseError(i, {"argument"}, "empty argument");
        }
        out.push_back(std::move(arg));
        if (c == ')') return i + 1;
        arg_begin = i + 1;
        continue;
      }
      if (!std::isspace(static_cast<unsigned char>(c))) any_content = true;
    }
    throw ParseError(src.size(), {"')'"}, "unterminated argument list");
  }

  Lexer lex_;
};

inline int precedence(FolExpr::Kind k) {
  switch (k) {
    case FolExpr::Kind::Implies: return 1;
    case FolExpr::Kind::Or: return 2;
    case FolExpr::Kind::And: return 3;
    default: return 4;
  }
}

inline void print_into(const FolExpr& e, std::string& out);

inline void print_child(const FolExpr& child, bool wrap, std::string& out) {
  if (wrap) out += '(';
  print_into(child, out);
  if (wrap) out += ')';
}

inline void print_into(const FolExpr& e, std::string& out) {
  using K = FolExpr::Kind;
  switch (e.kind) {
    case K::Atom:
      out += canonical_predicate_string(e.atom);
      return;
    case K::Not:
      out += "¬";
      print_child(e.children[0], e.children[0].kind != K::Atom, out);
      return;
    case K::Implies:
      // Left-associative: only a right-hand implication needs parentheses.
      print_child(e.children[0], precedence(e.children[0].kind) < 1, out);
      out += " → ";
      print_child(e.children[1], precedence(e.children[1].kind) <= 1, out);
      return;
    case K::And:
    case K::Or: {
      const char* op = e.kind == K::And ? " ∧ " : " ∨ ";
      for (std::size_t i = 0; i < e.children.size(); ++i) {
        if (i) out += op;
        const FolExpr& c = e.children[i];
        print_child(c, precedence(c.kind) <= precedence(e.kind), out);
      }
      return;
    }
  }
}

inline void collect_leaves(const FolExpr& e, std::vector<const Predicate*>& out) {
  if (e.kind == FolExpr::Kind::Atom) {
    out.push_back(&e.atom);
    return;
  }
  for (const auto& c : e.children) collect_leaves(c, out);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Drops list markers ("- ", "* ", "1. ", "2) "), a short "Label:" prefix and a
// trailing period or semicolon.
inline std::string_view strip_decoration(std::string_view s) {
  s = trim(s);
  if (s.starts_with("- ") || s.starts_with("* ")) s = trim(s.substr(2));
  std::size_t digits = 0;
  while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
  if (digits > 0 && digits + 1 < s.size() && (s[digits] == '.' || s[digits] == ')') &&
      s[digits + 1] == ' ')
    s = trim(s.substr(digits + 2));
  if (!s.empty() && std::isalpha(static_cast<unsigned char>(s.front()))) {
    const std::size_t colon = s.find(": ");
    if (colon != std::string_view::npos && colon <= 20) {
      const std::string_view label = s.substr(0, colon);
      const bool plain = std::all_of(label.begin(), label.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == ' ';
      });
      if (plain) s = trim(s.substr(colon + 2));
    }
  }
  while (!s.empty() && (s.back() == '.' || s.back() == ';')) s = trim(s.substr(0, s.size() - 1));
  return s;
}

inline bool looks_like_fol(std::string_view s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i + 1] == '(' && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_'))
      return true;
  }
  Lexer lex(s);
  for (Token t = lex.next(); t.tok != Tok::End; t = lex.next()) {
    switch (t.tok) {
      case Tok::And:
      case Tok::Or:
      case Tok::Not:
      case Tok::Implies:
      case Tok::Quant:
        return true;
      default:
        break;
    }
  }
  return false;
}

}  // namespace detail

/// Parses one FOL line. Throws ParseError (byte offset + expected-token set)
/// on malformed input; never crashes on arbitrary bytes.
inline FolExpr parse_fol_line(std::string_view line) {
  return detail::Parser(line).parse_line();
}

/// Prints an expression in the accepted grammar (Unicode connectives).
inline std::string to_string(const FolExpr& e) {
  std::string out;
  detail::print_into(e, out);
  return out;
}

/// Predicate leaves in left-to-right order.
inline std::vector<const Predicate*> leaves(const FolExpr& e) {
  std::vector<const Predicate*> out;
  detail::collect_leaves(e, out);
  return out;
}

struct FolBlock {
  std::vector<std::string> lines;
  std::size_t dropped = 0;  // non-empty lines that did not look like FOL
  std::optional<std::string> attitude;  // concluding stance statement, metadata only
};

/// Isolates FOL lines from the surrounding prose of an LLM response.
inline FolBlock extract_fol_block(std::string_view response) {
  FolBlock block;
  std::size_t start = 0;
  while (start <= response.size()) {
    std::size_t end = response.find('\n', start);
    if (end == std::string_view::npos) end = response.size();
    const std::string_view raw = response.substr(start, end - start);
    const std::string_view line = detail::strip_decoration(raw);
    if (!line.empty()) {
      if (detail::looks_like_fol(line)) {
        block.lines.emplace_back(line);
      } else {
        ++block.dropped;
        std::string lower(line);
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        for (const char* word : {"support", "opposed", "neutral"})
          if (lower.find(word) != std::string::npos) {
            block.attitude = std::string(word);
            block.attitude->front() = static_cast<char>(std::toupper(block.attitude->front()));
          }
      }
    }
    if (end == response.size()) break;
    start = end + 1;
  }
  return block;
}

// ---------------------------------------------------------------------------
// Instance FOL graph

enum class Relation { Implies, Conjunction, Disjunction, InstanceOf };

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::Implies: return "Implies";
    case Relation::Conjunction: return "Conjunction";
    case Relation::Disjunction: return "Disjunction";
    case Relation::InstanceOf: return "InstanceOf";
  }
  return "?";
}

inline Relation relation_from_name(std::string_view s) {
  if (s == "Implies") return Relation::Implies;
  if (s == "Conjunction") return Relation::Conjunction;
  if (s == "Disjunction") return Relation::Disjunction;
  if (s == "InstanceOf") return Relation::InstanceOf;
  throw SchemaFormatError("relation", "unknown relation '" + std::string(s) + "'");
}

struct FolNode {
  Predicate predicate;
  Eigen::VectorXd embedding;   // empty until embedded
  std::optional<int> cluster;  // schema cluster id, set for schema nodes
  bool schema = false;         // node materialized by schema augmentation
};

struct FolEdge {
  int src = 0;
  int dst = 0;
  Relation relation = Relation::Implies;
  friend bool operator==(const FolEdge&, const FolEdge&) = default;
};

struct FolGraph {
  std::vector<FolNode> nodes;
  std::vector<FolEdge> edges;

  std::size_t size() const { return nodes.size(); }

  /// Adds the edge unless it is a self-loop or already present.
  bool add_edge(int src, int dst, Relation r) {
    if (src == dst) return false;
    if (src < 0 || dst < 0 || static_cast<std::size_t>(src) >= nodes.size() ||
        static_cast<std::size_t>(dst) >= nodes.size())
      throw IndexOutOfRange("edge endpoint out of range");
    const FolEdge e{src, dst, r};
    if (std::find(edges.begin(), edges.end(), e) != edges.end()) return false;
    edges.push_back(e);
    return true;
  }
};

namespace detail {

inline void emit_edges(const FolExpr& e, const std::map<std::string, int>& index,
                       FolGraph& g) {
  using K = FolExpr::Kind;
  auto id = [&](const Predicate* p) { return index.at(canonical_predicate_string(*p)); };
  if (e.kind == K::Implies) {
    for (const Predicate* a : leaves(e.children[0]))
      for (const Predicate* c : leaves(e.children[1])) g.add_edge(id(a), id(c), Relation::Implies);
  } else if (e.kind == K::And || e.kind == K::Or) {
    const Relation r = e.kind == K::And ? Relation::Conjunction : Relation::Disjunction;
    for (std::size_t i = 0; i < e.children.size(); ++i)
      for (std::size_t j = i + 1; j < e.children.size(); ++j)
        for (const Predicate* a : leaves(e.children[i]))
          for (const Predicate* b : leaves(e.children[j])) {
            g.add_edge(id(a), id(b), r);
            g.add_edge(id(b), id(a), r);
          }
  }
  for (const auto& c : e.children) emit_edges(c, index, g);
}

}  // namespace detail

/// One node per distinct canonical predicate (first-appearance order);
/// Implies edges run from every antecedent leaf to every consequent leaf;
/// And/Or produce symmetric Conjunction/Disjunction edges between leaves of
/// different operands. Embeddings are left empty.
inline FolGraph build_fol_graph(const std::vector<FolExpr>& exprs) {
  FolGraph g;
  std::map<std::string, int> index;
  for (const auto& e : exprs)
    for (const Predicate* p : leaves(e)) {
      const std::string key = canonical_predicate_string(*p);
      if (index.contains(key)) continue;
      index.emplace(key, static_cast<int>(g.nodes.size()));
      g.nodes.push_back(FolNode{*p, {}, std::nullopt, false});
    }
  if (g.nodes.empty()) throw EmptyGraph("no predicate leaves in expression list");
  for (const auto& e : exprs) detail::emit_edges(e, index, g);
  return g;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json graph_to_json(const FolGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nlohmann::json jn{{"name", n.predicate.name},
                      {"args", n.predicate.args},
                      {"negated", n.predicate.negated},
                      {"schema", n.schema},
                      {"embedding", vector_to_json(n.embedding)}};
    if (n.cluster) jn["cluster"] = *n.cluster;
    nodes.push_back(std::move(jn));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) edges.push_back({e.src, e.dst, relation_name(e.relation)});
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

inline FolGraph graph_from_json(const nlohmann::json& j) {
  FolGraph g;
  try {
    for (const auto& jn : j.at("nodes")) {
      FolNode n;
      n.predicate.name = jn.at("name").get<std::string>();
      n.predicate.args = jn.at("args").get<std::vector<std::string>>();
      n.predicate.negated = jn.at("negated").get<bool>();
      n.predicate.surface = canonical_predicate_string(n.predicate);
      n.schema = jn.value("schema", false);
      n.embedding = vector_from_json(jn.at("embedding"));
      if (jn.contains("cluster")) n.cluster = jn.at("cluster").get<int>();
      g.nodes.push_back(std::move(n));
    }
    for (const auto& je : j.at("edges"))
      g.add_edge(je.at(0).get<int>(), je.at(1).get<int>(),
                 relation_from_name(je.at(2).get<std::string>()));
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaFormatError("graph", ex.what());
  }
  return g;
}

}  // namespace cirf
