#include "nasood/classifier.hpp"

#include "nasood/errors.hpp"
#include "nasood/evaluation.hpp"

namespace nasood {

namespace nn = torch::nn;

SemanticClassifierImpl::SemanticClassifierImpl(ClassifierOptions options, uint64_t seed) : options_(options) {
  if (options_.num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  torch::manual_seed(seed);
  nn::Sequential features;
  int64_t in = options_.image_channels;
  for (int64_t w : options_.widths) {
    features->push_back(nn::Conv2d(nn::Conv2dOptions(in, w, 3).padding(1).bias(false)));
    features->push_back(nn::BatchNorm2d(w));
    features->push_back(nn::ReLU());
    features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2).ceil_mode(true)));
    in = w;
  }
  features_ = register_module("features", features);
  head_ = register_module("head", nn::Linear(in, options_.num_classes));
}

torch::Tensor SemanticClassifierImpl::forward(const torch::Tensor& x) {
  auto h = features_->forward(x);
  return head_(torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1));
}

void SemanticClassifierImpl::freeze() {
  eval();
  for (auto& p : parameters()) p.requires_grad_(false);
  frozen_ = true;
}

uint64_t module_checksum(const torch::nn::Module& module) {
  uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](const torch::Tensor& t) {
    auto c = t.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto len = static_cast<size_t>(c.numel()) * c.element_size();
    for (size_t i = 0; i < len; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : module.parameters()) mix(p);
  for (const auto& b : module.buffers()) mix(b);
  return hash;
}

PretrainResult pretrain_classifier(const MultiDomainDataset& train, const PretrainConfig& config) {
  if (train.size() == 0) throw ConfigError("train_data", "classifier pretraining needs a non-empty split");
  if (config.epochs < 1) throw ConfigError("classifier_epochs", "must be >= 1");

  SemanticClassifier model(ClassifierOptions{train.image_channels(), train.num_classes, {16, 32, 64}}, config.seed);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.lr));
  model->train();
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchIterator it(train, config.batch_size, config.seed, epoch);
    Batch batch;
    while (it.next(batch)) {
      optimizer.zero_grad();
      auto loss = torch::nn::functional::cross_entropy(model->forward(batch.images), batch.class_labels);
      loss.backward();
      optimizer.step();
    }
  }
  model->freeze();
  PretrainResult result;
  result.train_accuracy = evaluate_module(model, train);
  result.classifier = model;
  return result;
}

}  // namespace nasood
