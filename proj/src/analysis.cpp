#include "nasood/analysis.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "nasood/errors.hpp"

namespace nasood {

namespace {

std::string format_fraction(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed << v;
  return out.str();
}

}  // namespace

OpFractions op_percentages(const Genotype& genotype, CellSelection cells) {
  OpFractions counts{};
  int total = 0;
  auto tally = [&](const CellGene& cell) {
    for (const auto& node : cell) {
      for (const auto& edge : node) {
        counts[op_index(edge.op)] += 1.0;
        ++total;
      }
    }
  };
  if (cells != CellSelection::kReduce) tally(genotype.normal);
  if (cells != CellSelection::kNormal) tally(genotype.reduce);
  for (double& c : counts) c /= static_cast<double>(total);
  return counts;
}

std::vector<OpFractions> temporal_stability(const std::vector<Genotype>& snapshots, CellSelection cells) {
  if (snapshots.empty()) throw ValidationError("temporal stability needs at least one snapshot");
  std::vector<OpFractions> series;
  series.reserve(snapshots.size());
  for (const auto& g : snapshots) series.push_back(op_percentages(g, cells));
  return series;
}

std::string op_percentages_by_cell_csv(const Genotype& genotype) {
  const auto normal = op_percentages(genotype, CellSelection::kNormal);
  const auto reduce = op_percentages(genotype, CellSelection::kReduce);
  std::ostringstream out;
  out << "cell,op,fraction\n";
  for (const auto& [cell, fractions] : {std::pair{"normal", normal}, std::pair{"reduce", reduce}}) {
    for (int k = 1; k < kNumOperations; ++k) {
      out << cell << "," << operation_name(kAllOperations[k]) << "," << format_fraction(fractions[k]) << "\n";
    }
  }
  return out.str();
}

std::string temporal_stability_by_cell_csv(const std::vector<Genotype>& snapshots) {
  const auto normal = temporal_stability(snapshots, CellSelection::kNormal);
  const auto reduce = temporal_stability(snapshots, CellSelection::kReduce);
  std::ostringstream out;
  out << "epoch,cell,op,fraction\n";
  for (size_t e = 0; e < snapshots.size(); ++e) {
    for (const auto& [cell, series] : {std::pair{"normal", &normal}, std::pair{"reduce", &reduce}}) {
      for (int k = 1; k < kNumOperations; ++k) {
        out << e + 1 << "," << cell << "," << operation_name(kAllOperations[k]) << ","
            << format_fraction((*series)[e][k]) << "\n";
      }
    }
  }
  return out.str();
}

std::string op_percentages_csv(const OpFractions& fractions) {
  std::ostringstream out;
  out << "op,fraction\n";
  for (int k = 1; k < kNumOperations; ++k) {
    out << operation_name(kAllOperations[k]) << "," << format_fraction(fractions[k]) << "\n";
  }
  return out.str();
}

std::string temporal_stability_csv(const std::vector<OpFractions>& series) {
  std::ostringstream out;
  out << "epoch,op,fraction\n";
  for (size_t e = 0; e < series.size(); ++e) {
    for (int k = 1; k < kNumOperations; ++k) {
      out << e + 1 << "," << operation_name(kAllOperations[k]) << "," << format_fraction(series[e][k]) << "\n";
    }
  }
  return out.str();
}

namespace {

std::string state_name(int predecessor) {
  if (predecessor == 0) return "c_{k-2}";
  if (predecessor == 1) return "c_{k-1}";
  return std::to_string(predecessor - CellTopology::kInputNodes);
}

std::string dot_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

void write_cell_dot(std::ostringstream& out, const std::string& graph_name, const CellGene& cell,
                    const GenotypeMeta& meta) {
  out << "digraph " << graph_name << " {\n";
  out << "  label=\"" << graph_name << " dataset=" << dot_escape(meta.dataset) << " seed=" << meta.seed << " epoch=" << meta.epoch
      << "\";\n";
  out << "  \"c_{k-2}\";\n  \"c_{k-1}\";\n";
  for (int node = 0; node < kIntermediateNodes; ++node) out << "  \"" << node << "\";\n";
  out << "  \"c_{k}\";\n";
  for (int node = 0; node < kIntermediateNodes; ++node) {
    for (const auto& edge : cell[node]) {
      out << "  \"" << state_name(edge.predecessor) << "\" -> \"" << node << "\" [label=\"" << operation_name(edge.op)
          << "\"];\n";
    }
  }
  for (int node = 0; node < kIntermediateNodes; ++node) out << "  \"" << node << "\" -> \"c_{k}\";\n";
  out << "}\n";
}

}  // namespace

std::string export_genotype_dot(const Genotype& genotype) {
  genotype.validate();
  std::ostringstream out;
  write_cell_dot(out, "normal", genotype.normal, genotype.meta);
  write_cell_dot(out, "reduce", genotype.reduce, genotype.meta);
  return out.str();
}

std::string comparison_table(const std::vector<nlohmann::json>& results, TableFormat format) {
  struct Row {
    std::string mode;
    std::string seed;
    std::string target;
    double accuracy;
    double params;
  };
  std::vector<Row> rows;
  for (const auto& r : results) {
    Row row;
    row.mode = r.value("mode", std::string("?"));
    row.seed = r.contains("seed") ? r["seed"].dump() : "?";
    row.target = r.value("target_domain", std::string(""));
    row.accuracy = r.contains("target_accuracy") && r["target_accuracy"].is_number()
                       ? r["target_accuracy"].get<double>()
                       : std::nan("");
    row.params = r.contains("params_millions") && r["params_millions"].is_number()
                     ? r["params_millions"].get<double>()
                     : std::nan("");
    rows.push_back(row);
  }

  std::map<std::string, std::vector<double>> by_mode;
  for (const auto& row : rows) {
    if (!std::isnan(row.accuracy)) by_mode[row.mode].push_back(row.accuracy);
  }

  auto num = [](double v, int precision) {
    if (std::isnan(v)) return std::string("nan");
    std::ostringstream o;
    o << std::fixed << std::setprecision(precision) << v;
    return o.str();
  };

  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"mode", "seed", "target_domain", "accuracy", "params_m"});
  for (const auto& row : rows) {
    cells.push_back({row.mode, row.seed, row.target, num(row.accuracy, 4), num(row.params, 4)});
  }
  for (const auto& [mode, accs] : by_mode) {
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    const double stddev = accs.size() > 1 ? std::sqrt(var / static_cast<double>(accs.size() - 1)) : 0.0;
    cells.push_back({mode, "mean", "", num(mean, 4), ""});
    cells.push_back({mode, "std", "", num(stddev, 4), ""});
  }

  std::ostringstream out;
  if (format == TableFormat::kCsv) {
    for (const auto& c : cells) out << c[0] << "," << c[1] << "," << c[2] << "," << c[3] << "," << c[4] << "\n";
    return out.str();
  }
  std::array<size_t, 5> widths{};
  for (const auto& c : cells) {
    for (size_t i = 0; i < c.size(); ++i) widths[i] = std::max(widths[i], c[i].size());
  }
  for (const auto& c : cells) {
    for (size_t i = 0; i < c.size(); ++i) {
      out << std::left << std::setw(static_cast<int>(widths[i])) << c[i] << (i + 1 < c.size() ? "  " : "");
    }
    out << "\n";
  }
  return out.str();
}

std::string export_alpha_vectors(const std::vector<ArchitectureParameters>& alphas) {
  std::ostringstream out;
  const auto names = flatten_alpha_names();
  for (size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << "\n";
  out << std::setprecision(17);
  for (const auto& alpha : alphas) {
    const auto flat = flatten_alpha(alpha);
    for (size_t i = 0; i < flat.size(); ++i) out << (i ? "," : "") << flat[i];
    out << "\n";
  }
  return out.str();
}

std::vector<double> cross_evaluate(const Genotype& genotype, const std::vector<CrossEvalTask>& tasks,
                                   const RetrainConfig& config) {
  std::vector<double> accuracies;
  accuracies.reserve(tasks.size());
  for (const auto& task : tasks) {
    accuracies.push_back(retrain_derived(genotype, task.dataset, task.target_domain, config).target_accuracy);
  }
  return accuracies;
}

}  // namespace nasood
