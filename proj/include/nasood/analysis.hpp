#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nasood/datasets.hpp"
#include "nasood/genotype.hpp"
#include "nasood/search_space.hpp"
#include "nasood/trainer.hpp"

namespace nasood {

/// Fraction of genotype slots using each operation, indexed by OperationKind.
using OpFractions = std::array<double, kNumOperations>;

enum class CellSelection { kPooled, kNormal, kReduce };

/// Counts ops over all 16 slots (pooled) or the 8 slots of one cell type.
OpFractions op_percentages(const Genotype& genotype, CellSelection cells = CellSelection::kPooled);

/// op_percentages of every snapshot. Throws ValidationError when empty.
std::vector<OpFractions> temporal_stability(const std::vector<Genotype>& snapshots,
                                            CellSelection cells = CellSelection::kPooled);

/// "op,fraction" rows for the seven non-none ops.
std::string op_percentages_csv(const OpFractions& fractions);
/// "epoch,op,fraction" rows, epochs numbered from 1, seven rows per epoch.
std::string temporal_stability_csv(const std::vector<OpFractions>& series);

/// "cell,op,fraction" rows: normal cell first, then reduce.
std::string op_percentages_by_cell_csv(const Genotype& genotype);
/// "epoch,cell,op,fraction" rows, 14 per epoch.
std::string temporal_stability_by_cell_csv(const std::vector<Genotype>& snapshots);

/// Two digraphs (normal, reduce) with nodes c_{k-2}, c_{k-1}, 0..3, c_{k}. One
/// labeled edge per genotype entry, plus unlabeled edges into c_{k}.
std::string export_genotype_dot(const Genotype& genotype);

enum class TableFormat { kCsv, kText };

/// One row per run plus a mean/std row per mode. Accepts metrics.json
/// payloads; missing accuracies render as "nan".
std::string comparison_table(const std::vector<nlohmann::json>& results, TableFormat format = TableFormat::kCsv);

/// Header row of flatten_alpha_names, then one row per alpha.
std::string export_alpha_vectors(const std::vector<ArchitectureParameters>& alphas);

struct CrossEvalTask {
  MultiDomainDataset dataset;
  std::string target_domain;
};

/// Retrains the same genotype on each task's leave-one-domain-out split and
/// returns the target accuracies in task order.
std::vector<double> cross_evaluate(const Genotype& genotype, const std::vector<CrossEvalTask>& tasks,
                                   const RetrainConfig& config);

}  // namespace nasood
