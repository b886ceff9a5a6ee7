#include "nasood/genotype.hpp"

#include <fstream>
#include <sstream>

#include "nasood/errors.hpp"

namespace nasood {

using ojson = nlohmann::ordered_json;

namespace {

void validate_cell(const CellGene& cell, std::string_view cell_name) {
  for (int node = 0; node < kIntermediateNodes; ++node) {
    const int state = node + 2;
    const auto& gene = cell[node];
    for (const auto& edge : gene) {
      if (edge.op == OperationKind::kNone) {
        throw ValidationError(std::string(cell_name) + " node " + std::to_string(node) + " uses 'none'");
      }
      if (op_index(edge.op) < 0 || op_index(edge.op) >= kNumOperations) {
        throw ValidationError(std::string(cell_name) + " node " + std::to_string(node) + " has an invalid op");
      }
      if (edge.predecessor < 0 || edge.predecessor >= state) {
        throw ValidationError(std::string(cell_name) + " node " + std::to_string(node) + " predecessor " +
                              std::to_string(edge.predecessor) + " out of range [0, " + std::to_string(state) + ")");
      }
    }
    if (gene[0].predecessor == gene[1].predecessor) {
      throw ValidationError(std::string(cell_name) + " node " + std::to_string(node) + " repeats predecessor " +
                            std::to_string(gene[0].predecessor));
    }
  }
}

ojson cell_to_json(const CellGene& cell) {
  ojson nodes = ojson::array();
  for (const auto& gene : cell) {
    ojson pair = ojson::array();
    for (const auto& edge : gene) pair.push_back(ojson::array({edge.predecessor, operation_name(edge.op)}));
    nodes.push_back(std::move(pair));
  }
  return nodes;
}

CellGene cell_from_json(const ojson& value, std::string_view cell_name) {
  if (!value.is_array() || value.size() != kIntermediateNodes) {
    throw ValidationError(std::string(cell_name) + ": expected " + std::to_string(kIntermediateNodes) + " nodes");
  }
  CellGene cell{};
  for (int node = 0; node < kIntermediateNodes; ++node) {
    const auto& pair = value[node];
    if (!pair.is_array() || pair.size() != kEdgesPerNode) {
      throw ValidationError(std::string(cell_name) + " node " + std::to_string(node) + ": expected 2 edges");
    }
    for (int e = 0; e < kEdgesPerNode; ++e) {
      const auto& entry = pair[e];
      if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_integer() || !entry[1].is_string()) {
        throw ValidationError(std::string(cell_name) + " node " + std::to_string(node) +
                              ": edge must be [predecessor, \"op\"]");
      }
      cell[node][e] = GenotypeEdge{entry[0].get<int>(), parse_operation(entry[1].get<std::string>())};
    }
  }
  return cell;
}

}  // namespace

void Genotype::validate() const {
  validate_cell(normal, "normal");
  validate_cell(reduce, "reduce");
}

ojson genotype_to_json_value(const Genotype& genotype) {
  ojson out;
  out["normal"] = cell_to_json(genotype.normal);
  out["reduce"] = cell_to_json(genotype.reduce);
  out["meta"] = ojson{{"dataset", genotype.meta.dataset}, {"seed", genotype.meta.seed}, {"epoch", genotype.meta.epoch}};
  return out;
}

std::string genotype_to_json(const Genotype& genotype) { return genotype_to_json_value(genotype).dump() + "\n"; }

Genotype genotype_from_json_value(const ojson& value) {
  if (!value.is_object()) throw ValidationError("genotype JSON must be an object");
  for (const auto* key : {"normal", "reduce", "meta"}) {
    if (!value.contains(key)) throw ValidationError(std::string("genotype JSON lacks '") + key + "'");
  }
  Genotype g;
  g.normal = cell_from_json(value["normal"], "normal");
  g.reduce = cell_from_json(value["reduce"], "reduce");
  const auto& meta = value["meta"];
  try {
    g.meta.dataset = meta.at("dataset").get<std::string>();
    g.meta.seed = meta.at("seed").get<int64_t>();
    g.meta.epoch = meta.at("epoch").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("genotype meta: ") + e.what());
  }
  g.validate();
  return g;
}

Genotype genotype_from_json(std::string_view text) {
  ojson value;
  try {
    value = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("genotype JSON: ") + e.what());
  }
  return genotype_from_json_value(value);
}

Genotype load_genotype(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open genotype file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return genotype_from_json(buffer.str());
}

void save_genotype(const Genotype& genotype, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write genotype file " + path);
  out << genotype_to_json(genotype);
}

}  // namespace nasood
