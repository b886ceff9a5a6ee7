#include "nasood/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nasood/errors.hpp"

namespace nasood {

namespace nn = torch::nn;

CellTopology::CellTopology(int intermediate_nodes) : intermediate_nodes_(intermediate_nodes) {
  if (intermediate_nodes < 1) throw InvalidParameterError("cell needs at least one intermediate node");
  const int states = num_states();
  index_.assign(static_cast<size_t>(states * states), -1);
  for (int from = 0; from < states; ++from) {
    for (int to = std::max(from + 1, kInputNodes); to < states; ++to) {
      index_[from * states + to] = static_cast<int>(edges_.size());
      edges_.push_back({from, to});
    }
  }
}

int CellTopology::edge_index(int from, int to) const {
  const int states = num_states();
  if (from < 0 || to < 0 || from >= states || to >= states || index_[from * states + to] < 0) {
    throw InvalidParameterError("no edge " + std::to_string(from) + "->" + std::to_string(to));
  }
  return index_[from * states + to];
}

ArchitectureParameters ArchitectureParameters::zeros(const CellTopology& topology, torch::Dtype dtype) {
  auto opts = torch::TensorOptions().dtype(dtype);
  return {torch::zeros({topology.num_edges(), kNumOperations}, opts),
          torch::zeros({topology.num_edges(), kNumOperations}, opts)};
}

void ArchitectureParameters::validate(const CellTopology& topology) const {
  for (const auto* t : {&normal, &reduce}) {
    if (!t->defined() || t->dim() != 2 || t->size(0) != topology.num_edges() || t->size(1) != kNumOperations) {
      throw InvalidParameterError("alpha must have shape [" + std::to_string(topology.num_edges()) + ", " +
                                  std::to_string(kNumOperations) + "]");
    }
    if (!torch::isfinite(*t).all().item<bool>()) throw InvalidParameterError("alpha contains non-finite values");
  }
}

ArchitectureParameters ArchitectureParameters::clone() const { return {normal.clone(), reduce.clone()}; }

std::vector<double> softmax_relaxation(std::span<const double> alpha_edge) {
  if (alpha_edge.empty()) throw InvalidParameterError("softmax over an empty edge");
  for (double a : alpha_edge) {
    if (!std::isfinite(a)) throw InvalidParameterError("softmax input is not finite");
  }
  const double peak = *std::max_element(alpha_edge.begin(), alpha_edge.end());
  std::vector<double> out(alpha_edge.size());
  double total = 0.0;
  for (size_t k = 0; k < alpha_edge.size(); ++k) {
    out[k] = std::exp(alpha_edge[k] - peak);
    total += out[k];
  }
  for (double& v : out) v /= total;
  return out;
}

torch::Tensor edge_weights(const torch::Tensor& alpha) {
  if (!torch::isfinite(alpha.detach()).all().item<bool>()) {
    throw InvalidParameterError("alpha contains non-finite values");
  }
  // torch::softmax subtracts the row maximum internally.
  return torch::softmax(alpha, -1);
}

MixedEdgeImpl::MixedEdgeImpl(int64_t channels, int64_t stride, OpNorm norm) {
  for (auto op : kAllOperations) {
    auto module = make_operation(op, channels, stride, norm);
    register_module(std::string(operation_name(op)), module.ptr());
    ops_.push_back(std::move(module));
  }
}

torch::Tensor MixedEdgeImpl::forward(const torch::Tensor& x, const torch::Tensor& weights) {
  if (weights.dim() != 1 || weights.size(0) != kNumOperations) {
    throw InvalidParameterError("mixed edge expects " + std::to_string(kNumOperations) + " weights");
  }
  // `none` contributes exactly zero to the sum and to every gradient, so it
  // is not evaluated. alpha_none still receives gradient through the softmax.
  torch::Tensor total;
  for (int k = 1; k < kNumOperations; ++k) {
    auto out = ops_[k].forward(x);
    if (total.defined() && out.sizes() != total.sizes()) {
      throw InternalConsistencyError("operation '" + std::string(operation_name(kAllOperations[k])) +
                                     "' produced a mismatched shape");
    }
    auto term = weights[k] * out;
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor MixedEdgeImpl::apply_operation(OperationKind op, const torch::Tensor& x) {
  return ops_.at(op_index(op)).forward(x);
}

SearchCellImpl::SearchCellImpl(CellTopology topology, int64_t c_prev_prev, int64_t c_prev, int64_t channels,
                               bool reduction, bool reduction_prev, OpNorm norm)
    : topology_(std::move(topology)), reduction_(reduction), channels_(channels) {
  if (reduction_prev) {
    preprocess0_ = nn::AnyModule(FactorizedReduce(c_prev_prev, channels, norm));
  } else {
    preprocess0_ = nn::AnyModule(ReLUConvBN(c_prev_prev, channels, 1, 1, 0, norm));
  }
  register_module("preprocess0", preprocess0_.ptr());
  preprocess1_ = register_module("preprocess1", ReLUConvBN(c_prev, channels, 1, 1, 0, norm));
  for (const auto& e : topology_.edges()) {
    const int64_t stride = (reduction && e.from < CellTopology::kInputNodes) ? 2 : 1;
    edges_.push_back(register_module("edge_" + std::to_string(e.from) + "_" + std::to_string(e.to),
                                     MixedEdge(channels, stride, norm)));
  }
}

std::pair<torch::Tensor, torch::Tensor> SearchCellImpl::preprocess(const torch::Tensor& prev_prev,
                                                                   const torch::Tensor& prev) {
  return {preprocess0_.forward(prev_prev), preprocess1_(prev)};
}

torch::Tensor SearchCellImpl::forward(const torch::Tensor& prev_prev, const torch::Tensor& prev,
                                      const torch::Tensor& weights) {
  if (weights.dim() != 2 || weights.size(0) != topology_.num_edges() || weights.size(1) != kNumOperations) {
    throw InvalidParameterError("cell weights must have shape [" + std::to_string(topology_.num_edges()) + ", " +
                                std::to_string(kNumOperations) + "]");
  }
  auto [s0, s1] = preprocess(prev_prev, prev);
  std::vector<torch::Tensor> states{s0, s1};
  for (int to = CellTopology::kInputNodes; to < topology_.num_states(); ++to) {
    torch::Tensor node;
    for (int from = 0; from < to; ++from) {
      const int e = topology_.edge_index(from, to);
      auto term = edges_[e](states[from], weights[e]);
      node = node.defined() ? node + term : term;
    }
    states.push_back(node);
  }
  return torch::cat(std::vector<torch::Tensor>(states.begin() + CellTopology::kInputNodes, states.end()), 1);
}

void NetworkShape::validate() const {
  if (layers < 3) throw ConfigError("layers", "must be >= 3");
  if (init_channels < 1) throw ConfigError("init_channels", "must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  if (image_channels < 1) throw ConfigError("image_channels", "must be >= 1");
  if (stem_multiplier < 1) throw ConfigError("stem_multiplier", "must be >= 1");
}

SupernetImpl::SupernetImpl(NetworkShape shape, uint64_t seed, torch::Dtype dtype) : shape_(shape) {
  shape_.validate();
  torch::manual_seed(seed);
  const OpNorm norm{.affine = false, .track_running_stats = false};

  int64_t c_curr = shape_.stem_multiplier * shape_.init_channels;
  stem_ = register_module(
      "stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(shape_.image_channels, c_curr, 3).padding(1).bias(false)),
                             nn::BatchNorm2d(nn::BatchNorm2dOptions(c_curr).track_running_stats(false))));
  int64_t c_prev_prev = c_curr;
  int64_t c_prev = c_curr;
  c_curr = shape_.init_channels;
  bool reduction_prev = false;
  for (int64_t layer = 0; layer < shape_.layers; ++layer) {
    const bool reduction = shape_.is_reduction_layer(layer);
    if (reduction) c_curr *= 2;
    auto cell = SearchCell(topology_, c_prev_prev, c_prev, c_curr, reduction, reduction_prev, norm);
    cells_.push_back(register_module("cell_" + std::to_string(layer), cell));
    reduction_prev = reduction;
    c_prev_prev = c_prev;
    c_prev = cell->output_channels();
  }
  classifier_ = register_module("classifier", nn::Linear(c_prev, shape_.num_classes));
  to(dtype);

  auto opts = torch::TensorOptions().dtype(dtype);
  alpha_normal_ = (1e-3 * torch::randn({topology_.num_edges(), kNumOperations}, opts)).requires_grad_();
  alpha_reduce_ = (1e-3 * torch::randn({topology_.num_edges(), kNumOperations}, opts)).requires_grad_();
}

torch::Tensor SupernetImpl::forward(const torch::Tensor& x) {
  auto w_normal = edge_weights(alpha_normal_);
  auto w_reduce = edge_weights(alpha_reduce_);
  // Channels-last runs the small depthwise convolutions much faster on CPU.
  auto s0 = stem_->forward(x.contiguous(torch::MemoryFormat::ChannelsLast));
  auto s1 = s0;
  for (auto& cell : cells_) {
    auto next = cell(s0, s1, cell->reduction() ? w_reduce : w_normal);
    s0 = s1;
    s1 = next;
  }
  auto pooled = torch::adaptive_avg_pool2d(s1, {1, 1}).flatten(1);
  return classifier_(pooled);
}

ArchitectureParameters SupernetImpl::alphas() const {
  return {alpha_normal_.detach().clone(), alpha_reduce_.detach().clone()};
}

void SupernetImpl::set_alphas(const ArchitectureParameters& alphas) {
  alphas.validate(topology_);
  torch::NoGradGuard guard;
  alpha_normal_.copy_(alphas.normal);
  alpha_reduce_.copy_(alphas.reduce);
}

Supernet build_supernet(const NetworkShape& shape, uint64_t seed, torch::Dtype dtype) {
  return Supernet(shape, seed, dtype);
}

namespace {

CellGene derive_cell(const torch::Tensor& alpha, const CellTopology& topology) {
  auto a = alpha.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const double* data = a.data_ptr<double>();

  CellGene cell{};
  for (int node = 0; node < kIntermediateNodes; ++node) {
    const int to = node + CellTopology::kInputNodes;
    struct Candidate {
      int from;
      double score;
      OperationKind op;
    };
    std::vector<Candidate> candidates;
    for (int from = 0; from < to; ++from) {
      const int e = topology.edge_index(from, to);
      auto w = softmax_relaxation(std::span<const double>(data + e * kNumOperations, kNumOperations));
      int best = -1;
      for (int k = 0; k < kNumOperations; ++k) {
        if (kAllOperations[k] == OperationKind::kNone) continue;
        if (best < 0 || w[k] > w[best]) best = k;
      }
      candidates.push_back({from, w[best], kAllOperations[best]});
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& l, const Candidate& r) { return l.score > r.score; });
    std::array<Candidate, 2> kept{candidates[0], candidates[1]};
    if (kept[1].from < kept[0].from) std::swap(kept[0], kept[1]);
    cell[node] = {GenotypeEdge{kept[0].from, kept[0].op}, GenotypeEdge{kept[1].from, kept[1].op}};
  }
  return cell;
}

}  // namespace

Genotype derive_genotype(const ArchitectureParameters& alpha, GenotypeMeta meta) {
  const CellTopology topology;
  alpha.validate(topology);
  Genotype g;
  g.normal = derive_cell(alpha.normal, topology);
  g.reduce = derive_cell(alpha.reduce, topology);
  g.meta = std::move(meta);
  return g;
}

std::vector<double> flatten_alpha(const ArchitectureParameters& alpha) {
  alpha.validate();
  auto flat = torch::cat({alpha.normal.detach().flatten(), alpha.reduce.detach().flatten()})
                  .to(torch::kCPU, torch::kFloat64)
                  .contiguous();
  return {flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel()};
}

std::vector<std::string> flatten_alpha_names(const CellTopology& topology) {
  std::vector<std::string> names;
  for (const char* cell : {"normal", "reduce"}) {
    for (const auto& e : topology.edges()) {
      for (auto op : kAllOperations) {
        names.push_back(std::string(cell) + ":" + std::to_string(e.from) + "-" + std::to_string(e.to) + ":" +
                        std::string(operation_name(op)));
      }
    }
  }
  return names;
}

namespace {

nlohmann::ordered_json matrix_to_json(const torch::Tensor& t) {
  auto m = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (int64_t i = 0; i < m.size(0); ++i) {
    std::vector<double> row(m[i].data_ptr<double>(), m[i].data_ptr<double>() + m.size(1));
    rows.push_back(row);
  }
  return rows;
}

torch::Tensor matrix_from_json(const nlohmann::ordered_json& rows, const char* name) {
  if (!rows.is_array() || rows.empty()) throw ValidationError(std::string("alpha '") + name + "' must be a matrix");
  const auto n_rows = static_cast<int64_t>(rows.size());
  auto out = torch::zeros({n_rows, kNumOperations}, torch::kFloat64);
  for (int64_t i = 0; i < n_rows; ++i) {
    if (!rows[i].is_array() || rows[i].size() != kNumOperations) {
      throw ValidationError(std::string("alpha '") + name + "' row " + std::to_string(i) + " must have " +
                            std::to_string(kNumOperations) + " entries");
    }
    for (int k = 0; k < kNumOperations; ++k) out[i][k] = rows[i][k].get<double>();
  }
  return out;
}

}  // namespace

nlohmann::ordered_json alpha_to_json(const ArchitectureParameters& alpha) {
  return {{"normal", matrix_to_json(alpha.normal)}, {"reduce", matrix_to_json(alpha.reduce)}};
}

ArchitectureParameters alpha_from_json(const nlohmann::ordered_json& value) {
  if (!value.is_object() || !value.contains("normal") || !value.contains("reduce")) {
    throw ValidationError("alpha JSON needs 'normal' and 'reduce'");
  }
  ArchitectureParameters alpha{matrix_from_json(value["normal"], "normal"), matrix_from_json(value["reduce"], "reduce")};
  try {
    alpha.validate();
  } catch (const InvalidParameterError& e) {
    throw ValidationError(e.what());
  }
  return alpha;
}

int64_t count_parameters(const torch::nn::Module& module) {
  int64_t total = 0;
  for (const auto& p : module.parameters()) total += p.numel();
  return total;
}

}  // namespace nasood
