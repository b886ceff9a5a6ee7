#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "nasood/datasets.hpp"

namespace nasood {

struct ClassifierOptions {
  int64_t image_channels = 3;
  int64_t num_classes = 4;
  std::array<int64_t, 3> widths{16, 32, 64};
};

/// Small convolutional classifier Y used to keep generated images on-class.
/// Three conv -> batch-norm -> ReLU -> max-pool blocks and a linear head.
class SemanticClassifierImpl : public torch::nn::Module {
 public:
  SemanticClassifierImpl(ClassifierOptions options, uint64_t seed);
  torch::Tensor forward(const torch::Tensor& x);

  /// Switches to eval mode and turns off gradients for every parameter.
  /// Gradients still flow through to the input.
  void freeze();
  bool frozen() const { return frozen_; }
  const ClassifierOptions& options() const { return options_; }

 private:
  ClassifierOptions options_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
  bool frozen_ = false;
};
TORCH_MODULE(SemanticClassifier);

/// FNV-1a over the raw bytes of every parameter and buffer, in registration
/// order.
uint64_t module_checksum(const torch::nn::Module& module);

struct PretrainConfig {
  int64_t epochs = 10;
  int64_t batch_size = 64;
  double lr = 1e-3;
  uint64_t seed = 0;
};

struct PretrainResult {
  SemanticClassifier classifier{nullptr};
  double train_accuracy = 0.0;
};

/// Trains Y with Adam on the pooled source samples, then freezes it.
/// Throws ConfigError on an empty split.
PretrainResult pretrain_classifier(const MultiDomainDataset& train, const PretrainConfig& config);

}  // namespace nasood
