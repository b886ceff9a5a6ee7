#include "nasood/generator.hpp"

#include <cmath>

#include "nasood/errors.hpp"

namespace nasood {

namespace nn = torch::nn;

namespace {

nn::AnyModule make_norm(int64_t channels, GeneratorNorm norm) {
  if (norm == GeneratorNorm::kBatch) {
    return nn::AnyModule(nn::BatchNorm2d(nn::BatchNorm2dOptions(channels).track_running_stats(false)));
  }
  return nn::AnyModule(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true)));
}

void check_domains(const torch::Tensor& domains, int64_t num_domains) {
  if (domains.numel() == 0) return;
  const auto lo = domains.min().item<int64_t>();
  const auto hi = domains.max().item<int64_t>();
  if (lo < 0 || hi >= num_domains) {
    throw ValidationError("domain index out of range [0, " + std::to_string(num_domains) + ")");
  }
}

}  // namespace

torch::Tensor condition_input(const torch::Tensor& x, const torch::Tensor& domains, int64_t num_domains) {
  if (x.dim() != 4) throw ValidationError("expected an image batch of shape (B, C, H, W)");
  if (domains.dim() != 1 || domains.size(0) != x.size(0)) {
    throw ValidationError("need one domain index per sample");
  }
  check_domains(domains, num_domains);
  auto onehot = torch::one_hot(domains.to(torch::kLong), num_domains).to(x.dtype());
  auto planes = onehot.view({x.size(0), num_domains, 1, 1}).expand({x.size(0), num_domains, x.size(2), x.size(3)});
  return torch::cat({x, planes}, 1);
}

torch::Tensor condition_input(const torch::Tensor& x, int64_t domain, int64_t num_domains) {
  if (domain < 0 || domain >= num_domains) {
    throw ValidationError("domain index " + std::to_string(domain) + " out of range [0, " +
                          std::to_string(num_domains) + ")");
  }
  return condition_input(x, torch::full({x.size(0)}, domain, torch::kLong), num_domains);
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels, GeneratorNorm norm) {
  body_ = register_module(
      "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1).bias(false)),
                             make_norm(channels, norm), nn::ReLU(),
                             nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1).bias(false)),
                             make_norm(channels, norm)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ConditionalGeneratorImpl::ConditionalGeneratorImpl(GeneratorOptions options, uint64_t seed) : options_(options) {
  if (options_.image_channels < 1) throw ConfigError("image_channels", "must be >= 1");
  if (options_.num_domains < 2) throw ConfigError("num_domains", "must be >= 2");
  if (options_.width < 1) throw ConfigError("generator_width", "must be >= 1");
  if (options_.residual_blocks < 0) throw ConfigError("residual_blocks", "must be >= 0");
  torch::manual_seed(seed);

  const int64_t w = options_.width;
  const auto norm = options_.norm;
  nn::Sequential net;
  net->push_back(nn::Conv2d(nn::Conv2dOptions(options_.image_channels + options_.num_domains, w, 7).padding(3).bias(false)));
  net->push_back(make_norm(w, norm));
  net->push_back(nn::ReLU());
  // Down-sampling.
  net->push_back(nn::Conv2d(nn::Conv2dOptions(w, 2 * w, 4).stride(2).padding(1).bias(false)));
  net->push_back(make_norm(2 * w, norm));
  net->push_back(nn::ReLU());
  net->push_back(nn::Conv2d(nn::Conv2dOptions(2 * w, 4 * w, 4).stride(2).padding(1).bias(false)));
  net->push_back(make_norm(4 * w, norm));
  net->push_back(nn::ReLU());
  for (int64_t i = 0; i < options_.residual_blocks; ++i) net->push_back(ResidualBlock(4 * w, norm));
  // Up-sampling.
  net->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(4 * w, 2 * w, 4).stride(2).padding(1).bias(false)));
  net->push_back(make_norm(2 * w, norm));
  net->push_back(nn::ReLU());
  net->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * w, w, 4).stride(2).padding(1).bias(false)));
  net->push_back(make_norm(w, norm));
  net->push_back(nn::ReLU());
  net->push_back(nn::Conv2d(nn::Conv2dOptions(w, options_.image_channels, 7).padding(3).bias(false)));
  net->push_back(nn::Tanh());
  net_ = register_module("net", net);
}

torch::Tensor ConditionalGeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& domains) {
  if (x.dim() != 4 || x.size(1) != options_.image_channels) {
    throw ValidationError("generator expects (B, " + std::to_string(options_.image_channels) + ", H, W) input");
  }
  if (x.size(2) % 4 != 0 || x.size(3) % 4 != 0) {
    throw ConfigError("image_size", "spatial dimensions must be divisible by 4");
  }
  return net_->forward(condition_input(x, domains, options_.num_domains));
}

torch::Tensor ConditionalGeneratorImpl::generate(const torch::Tensor& x, int64_t domain) {
  if (domain < 0 || domain >= options_.num_domains) {
    throw ValidationError("domain index " + std::to_string(domain) + " out of range");
  }
  return forward(x, torch::full({x.size(0)}, domain, torch::kLong));
}

DomainMap as_domain_map(ConditionalGenerator generator) {
  return [generator](const torch::Tensor& x, const torch::Tensor& domains) mutable {
    return generator->forward(x, domains);
  };
}

torch::Tensor cycle_loss(const DomainMap& generator, const torch::Tensor& x, const torch::Tensor& source_domains,
                         int64_t novel_domain) {
  auto novel = torch::full({x.size(0)}, novel_domain, torch::kLong);
  auto reconstructed = generator(generator(x, novel), source_domains);
  return (reconstructed - x).abs().mean();
}

torch::Tensor semantic_ce_loss(const DomainMap& generator, const Classifier& classifier, const torch::Tensor& x,
                               const torch::Tensor& labels, int64_t novel_domain) {
  auto novel = torch::full({x.size(0)}, novel_domain, torch::kLong);
  auto logits = classifier(generator(x, novel));
  const int64_t classes = logits.size(1);
  if (labels.numel() > 0 && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= classes)) {
    throw ValidationError("class label out of range [0, " + std::to_string(classes) + ")");
  }
  return torch::nn::functional::cross_entropy(logits, labels);
}

void AuxLossWeights::validate() const {
  if (!std::isfinite(lambda_cycle) || lambda_cycle < 0) throw ConfigError("lambda_cycle", "must be finite and >= 0");
  if (!std::isfinite(lambda_ce) || lambda_ce < 0) throw ConfigError("lambda_ce", "must be finite and >= 0");
}

torch::Tensor auxiliary_loss(const DomainMap& generator, const Classifier& classifier, const torch::Tensor& x,
                             const torch::Tensor& labels, const torch::Tensor& source_domains, int64_t novel_domain,
                             const AuxLossWeights& weights) {
  weights.validate();
  auto total = torch::zeros({}, x.options());
  if (weights.lambda_cycle != 0.0) {
    total = total + weights.lambda_cycle * cycle_loss(generator, x, source_domains, novel_domain);
  }
  if (weights.lambda_ce != 0.0) {
    total = total + weights.lambda_ce * semantic_ce_loss(generator, classifier, x, labels, novel_domain);
  }
  return total;
}

}  // namespace nasood
