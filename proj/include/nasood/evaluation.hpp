#pragma once

#include <torch/torch.h>

#include <functional>

#include "nasood/datasets.hpp"

namespace nasood {

/// Fraction of correct top-1 predictions of `net` on `split`, computed
/// without gradients. An empty split scores 0.
double evaluate(const std::function<torch::Tensor(const torch::Tensor&)>& net, const MultiDomainDataset& split,
                int64_t batch_size = 256);

/// Puts `module` in eval mode for the duration of the call, then restores it.
template <typename ModuleHolder>
double evaluate_module(ModuleHolder& module, const MultiDomainDataset& split, int64_t batch_size = 256) {
  const bool was_training = module->is_training();
  module->eval();
  const double acc = evaluate([&](const torch::Tensor& x) { return module->forward(x); }, split, batch_size);
  module->train(was_training);
  return acc;
}

}  // namespace nasood
