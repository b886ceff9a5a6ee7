#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>

namespace nasood {

enum class GeneratorNorm { kInstance, kBatch };

struct GeneratorOptions {
  int64_t image_channels = 3;
  /// Source domains plus the one novel slot.
  int64_t num_domains = 4;
  int64_t width = 16;
  int64_t residual_blocks = 3;
  GeneratorNorm norm = GeneratorNorm::kInstance;
};

/// Appends `num_domains` constant planes to `x`: 1 at the sample's domain,
/// 0 elsewhere. `domains` holds one int64 index per sample.
torch::Tensor condition_input(const torch::Tensor& x, const torch::Tensor& domains, int64_t num_domains);
torch::Tensor condition_input(const torch::Tensor& x, int64_t domain, int64_t num_domains);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t channels, GeneratorNorm norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Encoder-decoder G(x, k): two stride-2 convolutions down, residual blocks,
/// two stride-2 transposed convolutions up, tanh output.
class ConditionalGeneratorImpl : public torch::nn::Module {
 public:
  ConditionalGeneratorImpl(GeneratorOptions options, uint64_t seed);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& domains);
  /// Same domain for the whole batch.
  torch::Tensor generate(const torch::Tensor& x, int64_t domain);

  const GeneratorOptions& options() const { return options_; }
  /// Index of the generated domain, i.e. the last conditioning slot.
  int64_t novel_domain() const { return options_.num_domains - 1; }

 private:
  GeneratorOptions options_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(ConditionalGenerator);

/// G(x, per-sample domains) -> images. Lets the losses run against stand-ins.
using DomainMap = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;
/// Images -> logits.
using Classifier = std::function<torch::Tensor(const torch::Tensor&)>;

DomainMap as_domain_map(ConditionalGenerator generator);

/// mean |G(G(x, novel), source) - x| over every element.
torch::Tensor cycle_loss(const DomainMap& generator, const torch::Tensor& x, const torch::Tensor& source_domains,
                         int64_t novel_domain);

/// Cross-entropy of classifier(G(x, novel)) against the originals' labels.
/// Throws ValidationError for a label outside the classifier's range.
torch::Tensor semantic_ce_loss(const DomainMap& generator, const Classifier& classifier, const torch::Tensor& x,
                               const torch::Tensor& labels, int64_t novel_domain);

struct AuxLossWeights {
  double lambda_cycle = 1.0;
  double lambda_ce = 1.0;

  void validate() const;
};

/// lambda_cycle * cycle_loss + lambda_ce * semantic_ce_loss. A term whose
/// weight is zero is not evaluated.
torch::Tensor auxiliary_loss(const DomainMap& generator, const Classifier& classifier, const torch::Tensor& x,
                             const torch::Tensor& labels, const torch::Tensor& source_domains, int64_t novel_domain,
                             const AuxLossWeights& weights);

}  // namespace nasood
