#include "nasood/derived_network.hpp"

namespace nasood {

namespace nn = torch::nn;

DerivedCellImpl::DerivedCellImpl(const CellGene& gene, int64_t c_prev_prev, int64_t c_prev, int64_t channels,
                                 bool reduction, bool reduction_prev)
    : gene_(gene), reduction_(reduction), channels_(channels) {
  const OpNorm norm{};
  if (reduction_prev) {
    preprocess0_ = nn::AnyModule(FactorizedReduce(c_prev_prev, channels, norm));
  } else {
    preprocess0_ = nn::AnyModule(ReLUConvBN(c_prev_prev, channels, 1, 1, 0, norm));
  }
  register_module("preprocess0", preprocess0_.ptr());
  preprocess1_ = register_module("preprocess1", ReLUConvBN(c_prev, channels, 1, 1, 0, norm));
  for (int node = 0; node < kIntermediateNodes; ++node) {
    for (int e = 0; e < kEdgesPerNode; ++e) {
      const auto& edge = gene_[node][e];
      const int64_t stride = (reduction && edge.predecessor < CellTopology::kInputNodes) ? 2 : 1;
      auto op = make_operation(edge.op, channels, stride, norm);
      register_module("node" + std::to_string(node) + "_" + std::to_string(e) + "_" +
                          std::string(operation_name(edge.op)),
                      op.ptr());
      ops_.push_back(std::move(op));
    }
  }
}

torch::Tensor DerivedCellImpl::forward(const torch::Tensor& prev_prev, const torch::Tensor& prev) {
  std::vector<torch::Tensor> states{preprocess0_.forward(prev_prev), preprocess1_(prev)};
  for (int node = 0; node < kIntermediateNodes; ++node) {
    torch::Tensor sum;
    for (int e = 0; e < kEdgesPerNode; ++e) {
      auto out = ops_[node * kEdgesPerNode + e].forward(states[gene_[node][e].predecessor]);
      sum = sum.defined() ? sum + out : out;
    }
    states.push_back(sum);
  }
  return torch::cat(std::vector<torch::Tensor>(states.begin() + CellTopology::kInputNodes, states.end()), 1);
}

DerivedNetworkImpl::DerivedNetworkImpl(const Genotype& genotype, NetworkShape shape, uint64_t seed)
    : shape_(shape) {
  shape_.validate();
  genotype.validate();
  torch::manual_seed(seed);

  int64_t c_curr = shape_.stem_multiplier * shape_.init_channels;
  stem_ = register_module(
      "stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(shape_.image_channels, c_curr, 3).padding(1).bias(false)),
                             nn::BatchNorm2d(c_curr)));
  int64_t c_prev_prev = c_curr;
  int64_t c_prev = c_curr;
  c_curr = shape_.init_channels;
  bool reduction_prev = false;
  for (int64_t layer = 0; layer < shape_.layers; ++layer) {
    const bool reduction = shape_.is_reduction_layer(layer);
    if (reduction) c_curr *= 2;
    auto cell =
        DerivedCell(reduction ? genotype.reduce : genotype.normal, c_prev_prev, c_prev, c_curr, reduction, reduction_prev);
    cells_.push_back(register_module("cell_" + std::to_string(layer), cell));
    reduction_prev = reduction;
    c_prev_prev = c_prev;
    c_prev = cell->output_channels();
  }
  classifier_ = register_module("classifier", nn::Linear(c_prev, shape_.num_classes));
}

torch::Tensor DerivedNetworkImpl::forward(const torch::Tensor& x) {
  // Channels-last runs the small depthwise convolutions much faster on CPU.
  auto s0 = stem_->forward(x.contiguous(torch::MemoryFormat::ChannelsLast));
  auto s1 = s0;
  for (auto& cell : cells_) {
    auto next = cell(s0, s1);
    s0 = s1;
    s1 = next;
  }
  return classifier_(torch::adaptive_avg_pool2d(s1, {1, 1}).flatten(1));
}

DerivedNetwork instantiate_derived_network(const Genotype& genotype, const NetworkShape& shape, uint64_t seed) {
  return DerivedNetwork(genotype, shape, seed);
}

}  // namespace nasood
