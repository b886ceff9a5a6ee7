#include "dot_grammar.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace nasood::testing {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

enum class Tok { kId, kLBrace, kRBrace, kLBracket, kRBracket, kEq, kSemi, kComma, kColon, kEdgeOp, kEnd };

struct Token {
  Tok kind;
  std::string text;
  bool quoted = false;
  size_t offset = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : s_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space_and_comments();
      if (pos_ >= s_.size()) break;
      const size_t start = pos_;
      const char c = s_[pos_];
      auto single = [&](Tok kind) {
        ++pos_;
        out.push_back({kind, std::string(1, c), false, start});
      };
      switch (c) {
        case '{': single(Tok::kLBrace); continue;
        case '}': single(Tok::kRBrace); continue;
        case '[': single(Tok::kLBracket); continue;
        case ']': single(Tok::kRBracket); continue;
        case '=': single(Tok::kEq); continue;
        case ';': single(Tok::kSemi); continue;
        case ',': single(Tok::kComma); continue;
        case ':': single(Tok::kColon); continue;
        default: break;
      }
      if (c == '-' && pos_ + 1 < s_.size() && (s_[pos_ + 1] == '>' || s_[pos_ + 1] == '-')) {
        out.push_back({Tok::kEdgeOp, std::string(s_.substr(pos_, 2)), false, start});
        pos_ += 2;
        continue;
      }
      if (c == '"') {
        out.push_back({Tok::kId, quoted(), true, start});
        continue;
      }
      if (c == '<') throw DotError("HTML strings are not supported at offset " + std::to_string(start));
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || static_cast<unsigned char>(c) >= 0x80) {
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                    static_cast<unsigned char>(s_[pos_]) >= 0x80)) {
          ++pos_;
        }
        out.push_back({Tok::kId, std::string(s_.substr(start, pos_ - start)), false, start});
        continue;
      }
      if (c == '-' || c == '.' || std::isdigit(static_cast<unsigned char>(c))) {
        out.push_back({Tok::kId, numeral(), false, start});
        continue;
      }
      throw DotError("unexpected character '" + std::string(1, c) + "' at offset " + std::to_string(start));
    }
    out.push_back({Tok::kEnd, "", false, pos_});
    return out;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (s_.substr(pos_, 2) == "//" || (c == '#' && (pos_ == 0 || s_[pos_ - 1] == '\n'))) {
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      } else if (s_.substr(pos_, 2) == "/*") {
        const auto end = s_.find("*/", pos_ + 2);
        if (end == std::string_view::npos) throw DotError("unterminated comment");
        pos_ = end + 2;
      } else {
        return;
      }
    }
  }

  std::string quoted() {
    const size_t start = pos_++;
    std::string value;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '"') {
        value += '"';
        pos_ += 2;
      } else if (s_[pos_] == '\\' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '\\') {
        value += '\\';
        pos_ += 2;
      } else {
        value += s_[pos_++];
      }
    }
    if (pos_ >= s_.size()) throw DotError("unterminated string at offset " + std::to_string(start));
    ++pos_;
    return value;
  }

  std::string numeral() {
    const size_t start = pos_;
    if (s_[pos_] == '-') ++pos_;
    bool digits = false;
    bool dot = false;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        digits = true;
      } else if (c == '.' && !dot) {
        dot = true;
      } else {
        break;
      }
      ++pos_;
    }
    if (!digits) throw DotError("malformed numeral at offset " + std::to_string(start));
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string_view s_;
  size_t pos_ = 0;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : t_(std::move(tokens)) {}

  std::vector<DotGraph> graphs() {
    std::vector<DotGraph> out;
    while (peek().kind != Tok::kEnd) out.push_back(graph());
    if (out.empty()) throw DotError("no graph");
    return out;
  }

 private:
  const Token& peek(size_t ahead = 0) const { return t_[std::min(i_ + ahead, t_.size() - 1)]; }
  bool keyword(const Token& tok, std::string_view word) const {
    return tok.kind == Tok::kId && !tok.quoted && iequals(tok.text, word);
  }
  const Token& expect(Tok kind, const char* what) {
    if (peek().kind != kind) {
      throw DotError(std::string("expected ") + what + " at offset " + std::to_string(peek().offset));
    }
    return t_[i_++];
  }
  bool accept(Tok kind) {
    if (peek().kind != kind) return false;
    ++i_;
    return true;
  }

  DotGraph graph() {
    DotGraph g;
    if (keyword(peek(), "strict")) {
      g.strict = true;
      ++i_;
    }
    if (keyword(peek(), "digraph")) {
      g.directed = true;
    } else if (!keyword(peek(), "graph")) {
      throw DotError("expected 'graph' or 'digraph' at offset " + std::to_string(peek().offset));
    }
    ++i_;
    if (peek().kind == Tok::kId) g.name = t_[i_++].text;
    expect(Tok::kLBrace, "'{'");
    stmt_list(g);
    expect(Tok::kRBrace, "'}'");
    return g;
  }

  void stmt_list(DotGraph& g) {
    while (peek().kind != Tok::kRBrace && peek().kind != Tok::kEnd) {
      stmt(g);
      accept(Tok::kSemi);
    }
  }

  void stmt(DotGraph& g) {
    const Token& first = peek();
    if (keyword(first, "graph") || keyword(first, "node") || keyword(first, "edge")) {
      const bool is_graph = keyword(first, "graph");
      ++i_;
      auto attrs = attr_list(true);
      if (is_graph) g.graph_attributes.insert(attrs.begin(), attrs.end());
      return;
    }
    if (first.kind == Tok::kId && peek(1).kind == Tok::kEq) {
      const std::string key = t_[i_++].text;
      ++i_;
      g.graph_attributes[key] = expect(Tok::kId, "attribute value").text;
      return;
    }
    std::vector<std::string> lhs = endpoint(g);
    if (peek().kind == Tok::kEdgeOp) {
      std::vector<std::vector<std::string>> chain{lhs};
      while (peek().kind == Tok::kEdgeOp) {
        const auto& op = t_[i_++];
        if ((op.text == "->") != g.directed) {
          throw DotError("edge operator '" + op.text + "' does not match the graph type at offset " +
                         std::to_string(op.offset));
        }
        chain.push_back(endpoint(g));
      }
      const auto attrs = attr_list(false);
      for (size_t k = 0; k + 1 < chain.size(); ++k) {
        for (const auto& a : chain[k]) {
          for (const auto& b : chain[k + 1]) g.edges.push_back({a, b, attrs});
        }
      }
      return;
    }
    attr_list(false);
  }

  // A node id (with optional port) or a subgraph; returns the nodes named.
  std::vector<std::string> endpoint(DotGraph& g) {
    if (keyword(peek(), "subgraph") || peek().kind == Tok::kLBrace) {
      if (keyword(peek(), "subgraph")) {
        ++i_;
        if (peek().kind == Tok::kId) ++i_;
      }
      expect(Tok::kLBrace, "'{'");
      DotGraph sub;
      sub.directed = g.directed;
      stmt_list(sub);
      expect(Tok::kRBrace, "'}'");
      for (const auto& n : sub.nodes) add_node(g, n);
      g.edges.insert(g.edges.end(), sub.edges.begin(), sub.edges.end());
      return sub.nodes;
    }
    const std::string id = expect(Tok::kId, "node id").text;
    if (accept(Tok::kColon)) {
      expect(Tok::kId, "port");
      if (accept(Tok::kColon)) expect(Tok::kId, "compass point");
    }
    add_node(g, id);
    return {id};
  }

  static void add_node(DotGraph& g, const std::string& id) {
    if (std::find(g.nodes.begin(), g.nodes.end(), id) == g.nodes.end()) g.nodes.push_back(id);
  }

  DotAttributes attr_list(bool required) {
    DotAttributes attrs;
    if (required && peek().kind != Tok::kLBracket) {
      throw DotError("expected '[' at offset " + std::to_string(peek().offset));
    }
    while (accept(Tok::kLBracket)) {
      while (peek().kind != Tok::kRBracket) {
        const std::string key = expect(Tok::kId, "attribute name").text;
        expect(Tok::kEq, "'='");
        attrs[key] = expect(Tok::kId, "attribute value").text;
        if (!accept(Tok::kSemi)) accept(Tok::kComma);
      }
      expect(Tok::kRBracket, "']'");
    }
    return attrs;
  }

  std::vector<Token> t_;
  size_t i_ = 0;
};

int state_index(const std::string& name) {
  if (name == "c_{k-2}") return 0;
  if (name == "c_{k-1}") return 1;
  try {
    size_t used = 0;
    const int node = std::stoi(name, &used);
    if (used == name.size() && node >= 0 && node < kIntermediateNodes) return node + 2;
  } catch (const std::exception&) {
  }
  throw DotError("unknown cell state '" + name + "'");
}

CellGene cell_from_graph(const DotGraph& g) {
  CellGene cell{};
  std::array<int, kIntermediateNodes> filled{};
  for (const auto& e : g.edges) {
    if (e.to == "c_{k}") continue;
    const int node = state_index(e.to) - 2;
    if (node < 0) throw DotError("edge into a cell input");
    const auto label = e.attributes.find("label");
    if (label == e.attributes.end()) throw DotError("unlabeled operation edge");
    if (filled[node] >= kEdgesPerNode) throw DotError("too many edges into node " + e.to);
    cell[node][filled[node]++] = GenotypeEdge{state_index(e.from), parse_operation(label->second)};
  }
  for (int n = 0; n < kIntermediateNodes; ++n) {
    if (filled[n] != kEdgesPerNode) throw DotError("node " + std::to_string(n) + " lacks inputs");
  }
  return cell;
}

}  // namespace

std::vector<DotGraph> parse_dot(std::string_view text) { return Parser(Lexer(text).run()).graphs(); }

Genotype genotype_from_dot(std::string_view text) {
  const auto graphs = parse_dot(text);
  if (graphs.size() != 2 || graphs[0].name != "normal" || graphs[1].name != "reduce") {
    throw DotError("expected the normal and reduce digraphs");
  }
  Genotype g;
  g.normal = cell_from_graph(graphs[0]);
  g.reduce = cell_from_graph(graphs[1]);
  std::istringstream label(graphs[0].graph_attributes.at("label"));
  std::string word;
  label >> word;
  while (label >> word) {
    const auto eq = word.find('=');
    const auto key = word.substr(0, eq);
    const auto value = word.substr(eq + 1);
    if (key == "dataset") g.meta.dataset = value;
    if (key == "seed") g.meta.seed = std::stoll(value);
    if (key == "epoch") g.meta.epoch = std::stoll(value);
  }
  return g;
}

}  // namespace nasood::testing
