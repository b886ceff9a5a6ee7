#pragma once

#include <torch/torch.h>

#include "nasood/genotype.hpp"
#include "nasood/search_space.hpp"

namespace nasood {

/// Discrete cell holding only the operations a genotype selected.
class DerivedCellImpl : public torch::nn::Module {
 public:
  DerivedCellImpl(const CellGene& gene, int64_t c_prev_prev, int64_t c_prev, int64_t channels, bool reduction,
                  bool reduction_prev);
  torch::Tensor forward(const torch::Tensor& prev_prev, const torch::Tensor& prev);

  bool reduction() const { return reduction_; }
  int64_t output_channels() const { return channels_ * kIntermediateNodes; }

 private:
  CellGene gene_;
  bool reduction_;
  int64_t channels_;
  torch::nn::AnyModule preprocess0_;
  ReLUConvBN preprocess1_{nullptr};
  std::vector<torch::nn::AnyModule> ops_;  // kEdgesPerNode per node, in gene order
};
TORCH_MODULE(DerivedCell);

/// Network built from a genotype for retraining. Same stem, stacking and
/// classifier layout as the Supernet.
class DerivedNetworkImpl : public torch::nn::Module {
 public:
  DerivedNetworkImpl(const Genotype& genotype, NetworkShape shape, uint64_t seed);
  torch::Tensor forward(const torch::Tensor& x);

  const NetworkShape& shape() const { return shape_; }

 private:
  NetworkShape shape_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<DerivedCell> cells_;
  torch::nn::Linear classifier_{nullptr};
};
TORCH_MODULE(DerivedNetwork);

/// Validates the genotype (ValidationError) and builds a seeded network.
DerivedNetwork instantiate_derived_network(const Genotype& genotype, const NetworkShape& shape, uint64_t seed);

}  // namespace nasood
