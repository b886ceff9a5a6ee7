#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "nasood/operations.hpp"

namespace nasood {

inline constexpr int kIntermediateNodes = 4;
inline constexpr int kEdgesPerNode = 2;

/// One chosen input of an intermediate node. `predecessor` is a cell state
/// index: 0 and 1 are the two cell inputs, 2.. are earlier intermediate nodes.
struct GenotypeEdge {
  int predecessor = 0;
  OperationKind op = OperationKind::kSkipConnect;

  bool operator==(const GenotypeEdge&) const = default;
};

using NodeGene = std::array<GenotypeEdge, kEdgesPerNode>;
using CellGene = std::array<NodeGene, kIntermediateNodes>;

struct GenotypeMeta {
  std::string dataset;
  int64_t seed = 0;
  int64_t epoch = 0;

  bool operator==(const GenotypeMeta&) const = default;
};

/// Discrete architecture: two (predecessor, op) choices per intermediate node,
/// for the normal and the reduction cell.
struct Genotype {
  CellGene normal{};
  CellGene reduce{};
  GenotypeMeta meta;

  bool operator==(const Genotype&) const = default;

  /// Throws ValidationError if any entry uses `none`, repeats a predecessor
  /// within a node, or points at a state that is not strictly earlier.
  void validate() const;
};

/// Compact single-line JSON followed by a newline. Key order is
/// normal, reduce, meta.
std::string genotype_to_json(const Genotype& genotype);
Genotype genotype_from_json(std::string_view text);

nlohmann::ordered_json genotype_to_json_value(const Genotype& genotype);
Genotype genotype_from_json_value(const nlohmann::ordered_json& value);

Genotype load_genotype(const std::string& path);
void save_genotype(const Genotype& genotype, const std::string& path);

}  // namespace nasood
