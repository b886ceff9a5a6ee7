#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nasood/genotype.hpp"
#include "nasood/operations.hpp"

namespace nasood {

/// Cell DAG: two input states followed by `intermediate_nodes` computed
/// states. Every earlier state feeds every intermediate state. Edges are kept
/// in lexicographic (from, to) order; that order is the row order of every
/// alpha matrix.
class CellTopology {
 public:
  static constexpr int kInputNodes = 2;

  struct Edge {
    int from;
    int to;
  };

  explicit CellTopology(int intermediate_nodes = kIntermediateNodes);

  int intermediate_nodes() const { return intermediate_nodes_; }
  int num_states() const { return kInputNodes + intermediate_nodes_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Row of edge (from -> to). Throws InvalidParameterError for a non-edge.
  int edge_index(int from, int to) const;

 private:
  int intermediate_nodes_;
  std::vector<Edge> edges_;
  std::vector<int> index_;  // from * num_states + to -> row, or -1
};

/// Continuous architecture variables: one [num_edges, kNumOperations] matrix
/// per cell type.
struct ArchitectureParameters {
  torch::Tensor normal;
  torch::Tensor reduce;

  static ArchitectureParameters zeros(const CellTopology& topology = CellTopology{},
                                      torch::Dtype dtype = torch::kFloat64);

  /// Checks shapes against the topology and that every value is finite.
  void validate(const CellTopology& topology = CellTopology{}) const;

  ArchitectureParameters clone() const;
};

/// Numerically stable softmax over one edge's operation scores.
std::vector<double> softmax_relaxation(std::span<const double> alpha_edge);

/// Row-wise softmax of an alpha matrix, after a finiteness check.
torch::Tensor edge_weights(const torch::Tensor& alpha);

/// Softmax-weighted sum of every candidate operation on one edge.
class MixedEdgeImpl : public torch::nn::Module {
 public:
  MixedEdgeImpl(int64_t channels, int64_t stride, OpNorm norm);

  /// `weights` is a 1-D tensor with one entry per operation.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& weights);

  /// Output of a single candidate operation.
  torch::Tensor apply_operation(OperationKind op, const torch::Tensor& x);

 private:
  std::vector<torch::nn::AnyModule> ops_;
};
TORCH_MODULE(MixedEdge);

/// A search cell: preprocessing stems plus one MixedEdge per topology edge.
class SearchCellImpl : public torch::nn::Module {
 public:
  SearchCellImpl(CellTopology topology, int64_t c_prev_prev, int64_t c_prev, int64_t channels, bool reduction,
                 bool reduction_prev, OpNorm norm);

  /// `weights` is [num_edges, kNumOperations] (already softmax-normalized).
  torch::Tensor forward(const torch::Tensor& prev_prev, const torch::Tensor& prev, const torch::Tensor& weights);

  /// Preprocessed inputs, exposed for oracle checks.
  std::pair<torch::Tensor, torch::Tensor> preprocess(const torch::Tensor& prev_prev, const torch::Tensor& prev);

  MixedEdge edge(int index) const { return edges_.at(index); }
  const CellTopology& topology() const { return topology_; }
  bool reduction() const { return reduction_; }
  int64_t output_channels() const { return channels_ * topology_.intermediate_nodes(); }

 private:
  CellTopology topology_;
  bool reduction_;
  int64_t channels_;
  torch::nn::AnyModule preprocess0_;
  ReLUConvBN preprocess1_{nullptr};
  std::vector<MixedEdge> edges_;
};
TORCH_MODULE(SearchCell);

struct NetworkShape {
  int64_t layers = 8;
  int64_t init_channels = 16;
  int64_t num_classes = 10;
  int64_t image_channels = 3;
  int64_t stem_multiplier = 3;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  /// True for the two depths that hold reduction cells.
  bool is_reduction_layer(int64_t layer) const { return layer == layers / 3 || layer == 2 * layers / 3; }
};

/// Weight-sharing network: stem, stacked search cells, global pooling and a
/// linear classifier. Alphas are held outside the registered parameters, so
/// `parameters()` is exactly the network weights.
class SupernetImpl : public torch::nn::Module {
 public:
  SupernetImpl(NetworkShape shape, uint64_t seed, torch::Dtype dtype = torch::kFloat32);

  torch::Tensor forward(const torch::Tensor& x);

  std::vector<torch::Tensor> weight_parameters() { return parameters(); }
  std::vector<torch::Tensor> arch_parameters() { return {alpha_normal_, alpha_reduce_}; }

  /// Detached copy of the current alphas.
  ArchitectureParameters alphas() const;
  void set_alphas(const ArchitectureParameters& alphas);

  const NetworkShape& shape() const { return shape_; }
  const CellTopology& topology() const { return topology_; }

 private:
  NetworkShape shape_;
  CellTopology topology_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<SearchCell> cells_;
  torch::nn::Linear classifier_{nullptr};
  torch::Tensor alpha_normal_;
  torch::Tensor alpha_reduce_;
};
TORCH_MODULE(Supernet);

Supernet build_supernet(const NetworkShape& shape, uint64_t seed, torch::Dtype dtype = torch::kFloat32);

/// Keeps, per intermediate node, the two incoming edges with the largest
/// best-non-none weight and the argmax non-none op on each. Ties go to the
/// lower op index, then to the lower predecessor. Entries within a node are
/// stored in ascending predecessor order.
Genotype derive_genotype(const ArchitectureParameters& alpha, GenotypeMeta meta = {});

/// Concatenation of normal then reduce alphas; rows in edge order, columns in
/// OperationKind order.
std::vector<double> flatten_alpha(const ArchitectureParameters& alpha);

/// Column names matching flatten_alpha, e.g. "normal:0-2:sep_conv_3x3".
std::vector<std::string> flatten_alpha_names(const CellTopology& topology = CellTopology{});

nlohmann::ordered_json alpha_to_json(const ArchitectureParameters& alpha);
ArchitectureParameters alpha_from_json(const nlohmann::ordered_json& value);

/// Number of registered scalar parameters.
int64_t count_parameters(const torch::nn::Module& module);
inline double parameters_in_millions(int64_t count) { return static_cast<double>(count) / 1e6; }

}  // namespace nasood
