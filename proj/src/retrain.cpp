#include <cmath>
#include <numbers>
#include <set>

#include "nasood/errors.hpp"
#include "nasood/evaluation.hpp"
#include "nasood/rng.hpp"
#include "nasood/trainer.hpp"

namespace nasood {

namespace F = torch::nn::functional;
using ojson = nlohmann::ordered_json;

void RetrainConfig::validate() const {
  NetworkShape{layers, init_channels, 2}.validate();
  if (epochs < 1) throw ConfigError("retrain_epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(lr > 0)) throw ConfigError("retrain_lr", "must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip", "must be > 0");
  if (!(val_fraction >= 0 && val_fraction < 0.5)) throw ConfigError("val_fraction", "must lie in [0, 0.5)");
}

ojson retrain_config_to_json(const RetrainConfig& c) {
  return ojson{{"layers", c.layers},         {"init_channels", c.init_channels}, {"epochs", c.epochs},
               {"batch_size", c.batch_size}, {"lr", c.lr},                       {"momentum", c.momentum},
               {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip},     {"cosine", c.cosine},
               {"augment", c.augment},       {"val_fraction", c.val_fraction},   {"seed", c.seed},
               {"deterministic", c.deterministic}};
}

RetrainConfig retrain_config_from_json(const ojson& value, RetrainConfig c) {
  if (!value.is_object()) throw ConfigError("retrain", "must be a JSON object");
  try {
    for (const auto& [key, v] : value.items()) {
      if (key == "layers") c.layers = v.get<int64_t>();
      else if (key == "init_channels") c.init_channels = v.get<int64_t>();
      else if (key == "epochs") c.epochs = v.get<int64_t>();
      else if (key == "batch_size") c.batch_size = v.get<int64_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "cosine") c.cosine = v.get<bool>();
      else if (key == "augment") c.augment = v.get<bool>();
      else if (key == "val_fraction") c.val_fraction = v.get<double>();
      else if (key == "seed") c.seed = v.get<uint64_t>();
      else if (key == "deterministic") c.deterministic = v.get<bool>();
      else throw ConfigError(key, "unknown retrain config key");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("retrain", e.what());
  }
  return c;
}

namespace {

void check_isolation(const DataSplits& splits) {
  if (splits.test.size() == 0) throw ValidationError("test split is empty");
  const auto test_domains = splits.test.domains_present();
  const std::set<int64_t> held_out(test_domains.begin(), test_domains.end());
  for (const auto* part : {&splits.train, &splits.val}) {
    for (int64_t d : part->domains_present()) {
      if (held_out.count(d) != 0) {
        const auto& names = splits.test.domain_names;
        const std::string name = d < static_cast<int64_t>(names.size()) ? names[d] : std::to_string(d);
        throw ProtocolError("target domain '" + name + "' is present in the training data");
      }
    }
  }
}

torch::Tensor augment_batch(const torch::Tensor& images, Rng& rng) {
  const int64_t size = images.size(2);
  const int64_t pad = std::max<int64_t>(1, size / 8);
  auto padded = torch::constant_pad_nd(images, {pad, pad, pad, pad}, -1.0);
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<size_t>(images.size(0)));
  for (int64_t i = 0; i < images.size(0); ++i) {
    const auto dy = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1)));
    const auto dx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 * pad + 1)));
    auto crop = padded[i].narrow(1, dy, size).narrow(2, dx, size);
    if (rng.uniform() < 0.5) crop = crop.flip({2});
    out.push_back(crop);
  }
  return torch::stack(out);
}

}  // namespace

RetrainResult retrain_derived(const Genotype& genotype, const DataSplits& splits, const RetrainConfig& config) {
  config.validate();
  genotype.validate();
  check_isolation(splits);
  if (splits.train.size() == 0) throw ConfigError("dataset", "training split is empty");
  set_deterministic(config.deterministic);

  NetworkShape shape;
  shape.layers = config.layers;
  shape.init_channels = config.init_channels;
  shape.num_classes = splits.train.num_classes;
  shape.image_channels = splits.train.image_channels();
  auto network = instantiate_derived_network(genotype, shape, config.seed);

  torch::optim::SGD optimizer(
      network->parameters(),
      torch::optim::SGDOptions(config.lr).momentum(config.momentum).weight_decay(config.weight_decay));
  Rng augment_rng(mix_seed(config.seed, 4));

  RetrainResult result;
  result.parameter_count = count_parameters(*network);
  result.best_val_accuracy = -1.0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.cosine) {
      const double lr = 0.5 * config.lr *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(config.epochs)));
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
      }
    }
    network->train();
    BatchIterator it(splits.train, config.batch_size, config.seed, epoch);
    Batch batch;
    double loss_sum = 0.0;
    int64_t seen = 0;
    while (it.next(batch)) {
      auto images = config.augment ? augment_batch(batch.images, augment_rng) : batch.images;
      optimizer.zero_grad();
      auto loss = F::cross_entropy(network->forward(images), batch.class_labels);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) throw NumericalError("retrain", "loss = " + std::to_string(value));
      loss.backward();
      torch::nn::utils::clip_grad_norm_(network->parameters(), config.grad_clip);
      optimizer.step();
      loss_sum += value * static_cast<double>(batch.size());
      seen += batch.size();
    }

    RetrainEpoch stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / static_cast<double>(std::max<int64_t>(seen, 1));
    stats.val_accuracy = splits.val.size() > 0 ? evaluate_module(network, splits.val) : 0.0;
    stats.test_accuracy = evaluate_module(network, splits.test);
    result.history.push_back(stats);

    const bool has_val = splits.val.size() > 0;
    if ((has_val && stats.val_accuracy > result.best_val_accuracy) || (!has_val && epoch + 1 == config.epochs)) {
      result.best_val_accuracy = stats.val_accuracy;
      result.best_epoch = stats.epoch;
      result.target_accuracy = stats.test_accuracy;
    }
  }
  network->eval();
  result.network = network;
  return result;
}

RetrainResult retrain_derived(const Genotype& genotype, const MultiDomainDataset& dataset,
                              const std::string& target_domain, const RetrainConfig& config) {
  config.validate();
  return retrain_derived(genotype, make_splits(dataset, SplitSpec{target_domain, config.val_fraction, config.seed}),
                         config);
}

}  // namespace nasood
