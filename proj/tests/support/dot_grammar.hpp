#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nasood/genotype.hpp"

namespace nasood::testing {

// Recursive-descent checker for the Graphviz DOT language (graph, node, edge
// and attribute statements, subgraphs, quoted/numeral/identifier IDs). Layout
// semantics are ignored; only structure is recovered.

struct DotError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using DotAttributes = std::map<std::string, std::string>;

struct DotEdge {
  std::string from;
  std::string to;
  DotAttributes attributes;
};

struct DotGraph {
  bool strict = false;
  bool directed = false;
  std::string name;
  DotAttributes graph_attributes;
  std::vector<std::string> nodes;
  std::vector<DotEdge> edges;
};

/// Parses one or more graphs. Throws DotError with an offset on bad input.
std::vector<DotGraph> parse_dot(std::string_view text);

/// Rebuilds the two cells of a genotype from an exported diagram. Meta is
/// read back from the graph label.
Genotype genotype_from_dot(std::string_view text);

}  // namespace nasood::testing
