#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "nasood/cli.hpp"
#include "nasood/nasood.hpp"

namespace py = pybind11;
using namespace nasood;

namespace {

CellSelection parse_cells(const std::string& cells) {
  if (cells == "pooled") return CellSelection::kPooled;
  if (cells == "normal") return CellSelection::kNormal;
  if (cells == "reduce") return CellSelection::kReduce;
  throw ValidationError("cells must be pooled, normal or reduce, got '" + cells + "'");
}

py::dict fractions_dict(const OpFractions& f) {
  py::dict d;
  for (auto op : kAllOperations) {
    if (op == OperationKind::kNone) continue;
    d[py::str(std::string(operation_name(op)))] = f[op_index(op)];
  }
  return d;
}

using EdgeList = std::vector<std::vector<std::pair<int, std::string>>>;

EdgeList cell_to_list(const CellGene& cell) {
  EdgeList out;
  for (const auto& node : cell) {
    std::vector<std::pair<int, std::string>> edges;
    for (const auto& e : node) edges.emplace_back(e.predecessor, std::string(operation_name(e.op)));
    out.push_back(std::move(edges));
  }
  return out;
}

CellGene cell_from_list(const EdgeList& nodes) {
  if (nodes.size() != kIntermediateNodes) throw ValidationError("a cell needs 4 nodes");
  CellGene cell;
  for (size_t n = 0; n < nodes.size(); ++n) {
    if (nodes[n].size() != kEdgesPerNode) throw ValidationError("each node needs 2 edges");
    for (size_t e = 0; e < nodes[n].size(); ++e) {
      cell[n][e] = GenotypeEdge{nodes[n][e].first, parse_operation(nodes[n][e].second)};
    }
  }
  return cell;
}

py::array_t<float> images_array(const torch::Tensor& images) {
  const auto t = images.to(torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(t.sizes().begin(), t.sizes().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.data_ptr<float>(), t.numel() * sizeof(float));
  return out;
}

py::array_t<int64_t> labels_array(const torch::Tensor& labels) {
  const auto t = labels.to(torch::kLong).contiguous();
  py::array_t<int64_t> out(t.numel());
  std::memcpy(out.mutable_data(), t.data_ptr<int64_t>(), t.numel() * sizeof(int64_t));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "NAS-OoD: architecture search with a conditional data generator";

  auto base = py::register_exception<Error>(m, "NasOodError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InvalidParameterError>(m, "InvalidParameterError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<InternalConsistencyError>(m, "InternalConsistencyError", base.ptr());
  py::register_exception<DatasetError>(m, "DatasetError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  m.def("operation_names", [] {
    std::vector<std::string> names;
    for (auto op : kAllOperations) names.emplace_back(operation_name(op));
    return names;
  });

  py::class_<Genotype>(m, "Genotype")
      .def(py::init<>())
      .def_property(
          "normal", [](const Genotype& g) { return cell_to_list(g.normal); },
          [](Genotype& g, const EdgeList& v) { g.normal = cell_from_list(v); })
      .def_property(
          "reduce", [](const Genotype& g) { return cell_to_list(g.reduce); },
          [](Genotype& g, const EdgeList& v) { g.reduce = cell_from_list(v); })
      .def_property(
          "meta", [](const Genotype& g) { return py::make_tuple(g.meta.dataset, g.meta.seed, g.meta.epoch); },
          [](Genotype& g, const std::tuple<std::string, int64_t, int64_t>& v) {
            g.meta = {std::get<0>(v), std::get<1>(v), std::get<2>(v)};
          })
      .def("validate", &Genotype::validate)
      .def("to_json", [](const Genotype& g) { return genotype_to_json(g); })
      .def_static("from_json", [](const std::string& text) { return genotype_from_json(text); })
      .def("to_dot", [](const Genotype& g) { return export_genotype_dot(g); })
      .def("__eq__", [](const Genotype& a, const Genotype& b) { return a == b; })
      .def("__repr__", [](const Genotype& g) { return "Genotype(" + genotype_to_json(g) + ")"; });

  m.def("load_genotype", &load_genotype, py::arg("path"));
  m.def("save_genotype", &save_genotype, py::arg("genotype"), py::arg("path"));
  m.def("random_genotype", &random_genotype, py::arg("seed"));

  m.def(
      "op_percentages",
      [](const Genotype& g, const std::string& cells) { return fractions_dict(op_percentages(g, parse_cells(cells))); },
      py::arg("genotype"), py::arg("cells") = "pooled");
  m.def(
      "temporal_stability",
      [](const std::vector<Genotype>& snapshots, const std::string& cells) {
        std::vector<py::dict> out;
        for (const auto& f : temporal_stability(snapshots, parse_cells(cells))) out.push_back(fractions_dict(f));
        return out;
      },
      py::arg("snapshots"), py::arg("cells") = "pooled");
  m.def(
      "temporal_stability_csv",
      [](const std::vector<Genotype>& snapshots) { return temporal_stability_csv(temporal_stability(snapshots)); },
      py::arg("snapshots"));
  m.def(
      "op_percentages_csv", [](const Genotype& g) { return op_percentages_csv(op_percentages(g)); },
      py::arg("genotype"));
  m.def(
      "comparison_table",
      [](const std::vector<std::string>& metrics_json, bool text) {
        std::vector<nlohmann::json> rows;
        for (const auto& s : metrics_json) rows.push_back(nlohmann::json::parse(s));
        return comparison_table(rows, text ? TableFormat::kText : TableFormat::kCsv);
      },
      py::arg("metrics_json"), py::arg("text") = false);

  m.def(
      "synth_dataset",
      [](int64_t num_classes, int64_t num_domains, int64_t image_size, int64_t samples_per_domain_per_class,
         uint64_t seed) {
        SynthSpec spec;
        spec.num_classes = num_classes;
        spec.num_domains = num_domains;
        spec.image_size = image_size;
        spec.samples_per_domain_per_class = samples_per_domain_per_class;
        spec.seed = seed;
        const auto d = generate_synth_dataset(spec);
        py::dict out;
        out["images"] = images_array(d.images);
        out["class_labels"] = labels_array(d.class_labels);
        out["domain_labels"] = labels_array(d.domain_labels);
        out["domain_names"] = d.domain_names;
        out["class_names"] = d.class_names;
        return out;
      },
      py::arg("num_classes") = 4, py::arg("num_domains") = 4, py::arg("image_size") = 16,
      py::arg("samples_per_domain_per_class") = 50, py::arg("seed") = 0);

  // Same entry point as the nasood executable; returns (exit_code, stdout, stderr).
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"nasood"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
