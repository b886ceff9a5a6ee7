#include "nasood/trainer.hpp"

#include <ATen/Context.h>

#include <cmath>
#include <sstream>

#include "nasood/errors.hpp"
#include "nasood/rng.hpp"

namespace nasood {

namespace F = torch::nn::functional;
using ojson = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string_view mode_name(SearchMode mode) {
  switch (mode) {
    case SearchMode::kNasOod:
      return "nasood";
    case SearchMode::kNasOodNoCycle:
      return "nasood-no-cycle";
    case SearchMode::kDartsBaseline:
      return "darts";
    case SearchMode::kRandomSample:
      return "random";
  }
  return "unknown";
}

SearchMode parse_mode(std::string_view name) {
  if (name == "nasood") return SearchMode::kNasOod;
  if (name == "nasood-no-cycle" || name == "nasood_no_cycle") return SearchMode::kNasOodNoCycle;
  if (name == "darts" || name == "darts_baseline") return SearchMode::kDartsBaseline;
  if (name == "random" || name == "random_sample") return SearchMode::kRandomSample;
  throw ConfigError("mode", "unknown mode '" + std::string(name) + "'");
}

void SearchConfig::validate() const {
  NetworkShape{layers, init_channels, num_classes == 0 ? 2 : num_classes}.validate();
  if (num_classes == 1 || num_classes < 0) throw ConfigError("num_classes", "must be >= 2 (or 0 for auto)");
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(lr_omega > 0)) throw ConfigError("lr_omega", "must be > 0");
  if (!(lr_alpha > 0)) throw ConfigError("lr_alpha", "must be > 0");
  if (!(lr_generator > 0)) throw ConfigError("lr_gen", "must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(weight_decay_omega >= 0)) throw ConfigError("weight_decay_omega", "must be >= 0");
  if (!(weight_decay_alpha >= 0)) throw ConfigError("weight_decay_alpha", "must be >= 0");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip", "must be > 0");
  aux_weights.validate();
  if (generator_width < 1) throw ConfigError("generator_width", "must be >= 1");
  if (classifier_epochs < 1) throw ConfigError("classifier_epochs", "must be >= 1");
  if (!(darts_val_fraction > 0 && darts_val_fraction < 1)) {
    throw ConfigError("darts_val_fraction", "must lie in (0, 1)");
  }
}

SearchConfig SearchConfig::desk() { return SearchConfig{}; }

SearchConfig SearchConfig::full_scale() {
  SearchConfig c;
  c.layers = 20;
  c.init_channels = 36;
  return c;
}

ojson search_config_to_json(const SearchConfig& c) {
  return ojson{{"mode", mode_name(c.mode)},
               {"layers", c.layers},
               {"init_channels", c.init_channels},
               {"num_classes", c.num_classes},
               {"epochs", c.epochs},
               {"batch_size", c.batch_size},
               {"lr_omega", c.lr_omega},
               {"momentum", c.momentum},
               {"weight_decay_omega", c.weight_decay_omega},
               {"grad_clip", c.grad_clip},
               {"lr_alpha", c.lr_alpha},
               {"weight_decay_alpha", c.weight_decay_alpha},
               {"lr_gen", c.lr_generator},
               {"lambda_cycle", c.aux_weights.lambda_cycle},
               {"lambda_ce", c.aux_weights.lambda_ce},
               {"generator_width", c.generator_width},
               {"generator_norm", c.generator_norm == GeneratorNorm::kBatch ? "batch" : "instance"},
               {"classifier_epochs", c.classifier_epochs},
               {"darts_val_fraction", c.darts_val_fraction},
               {"seed", c.seed},
               {"deterministic", c.deterministic}};
}

namespace {

template <typename T>
T json_field(const ojson& value, const std::string& key) {
  try {
    return value.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace

SearchConfig search_config_from_json(const ojson& value, SearchConfig c) {
  if (!value.is_object()) throw ConfigError("config", "must be a JSON object");
  for (const auto& [key, v] : value.items()) {
    if (key == "mode") {
      c.mode = parse_mode(json_field<std::string>(value, key));
    } else if (key == "layers") {
      c.layers = json_field<int64_t>(value, key);
    } else if (key == "init_channels") {
      c.init_channels = json_field<int64_t>(value, key);
    } else if (key == "num_classes") {
      c.num_classes = json_field<int64_t>(value, key);
    } else if (key == "epochs") {
      c.epochs = json_field<int64_t>(value, key);
    } else if (key == "batch_size") {
      c.batch_size = json_field<int64_t>(value, key);
    } else if (key == "lr_omega") {
      c.lr_omega = json_field<double>(value, key);
    } else if (key == "momentum") {
      c.momentum = json_field<double>(value, key);
    } else if (key == "weight_decay_omega") {
      c.weight_decay_omega = json_field<double>(value, key);
    } else if (key == "grad_clip") {
      c.grad_clip = json_field<double>(value, key);
    } else if (key == "lr_alpha") {
      c.lr_alpha = json_field<double>(value, key);
    } else if (key == "weight_decay_alpha") {
      c.weight_decay_alpha = json_field<double>(value, key);
    } else if (key == "lr_gen") {
      c.lr_generator = json_field<double>(value, key);
    } else if (key == "lambda_cycle") {
      c.aux_weights.lambda_cycle = json_field<double>(value, key);
    } else if (key == "lambda_ce") {
      c.aux_weights.lambda_ce = json_field<double>(value, key);
    } else if (key == "generator_width") {
      c.generator_width = json_field<int64_t>(value, key);
    } else if (key == "generator_norm") {
      const auto norm = json_field<std::string>(value, key);
      if (norm != "batch" && norm != "instance") throw ConfigError(key, "must be 'batch' or 'instance'");
      c.generator_norm = norm == "batch" ? GeneratorNorm::kBatch : GeneratorNorm::kInstance;
    } else if (key == "classifier_epochs") {
      c.classifier_epochs = json_field<int64_t>(value, key);
    } else if (key == "darts_val_fraction") {
      c.darts_val_fraction = json_field<double>(value, key);
    } else if (key == "seed") {
      c.seed = json_field<uint64_t>(value, key);
    } else if (key == "deterministic") {
      c.deterministic = json_field<bool>(value, key);
    } else {
      throw ConfigError(key, "unknown search config key");
    }
  }
  return c;
}

ojson loss_record_to_json(const LossRecord& r) {
  return ojson{{"step", r.step},       {"epoch", r.epoch}, {"l_train", r.l_train}, {"l_val_synth", r.l_val_synth},
               {"l_aux", r.l_aux},     {"wall_time", r.wall_time}};
}

std::string history_to_jsonl(const std::vector<LossRecord>& history) {
  std::ostringstream out;
  for (const auto& r : history) out << loss_record_to_json(r).dump() << "\n";
  return out.str();
}

void set_deterministic(bool on) {
  if (on) torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(on, /*warn_only=*/false);
}

// ---------------------------------------------------------------------------
// Minimax step

SearchState make_search_state(const SearchConfig& config, const NetworkShape& shape, int64_t num_source_domains,
                              SemanticClassifier classifier, torch::Dtype dtype) {
  if (num_source_domains < 2) throw ConfigError("dataset", "search needs at least two source domains");
  if (!classifier || !classifier->frozen()) throw InvalidParameterError("search needs a frozen semantic classifier");

  SearchState state;
  state.supernet = build_supernet(shape, config.seed, dtype);
  GeneratorOptions gen_options;
  gen_options.image_channels = shape.image_channels;
  gen_options.num_domains = num_source_domains + 1;
  gen_options.width = config.generator_width;
  gen_options.norm = config.generator_norm;
  state.generator = ConditionalGenerator(gen_options, mix_seed(config.seed, 1));
  state.generator->to(dtype);
  state.classifier = classifier;
  state.aux_weights = config.aux_weights;
  state.grad_clip = config.grad_clip;

  using namespace torch::optim;
  state.omega_optimizer = std::make_unique<SGD>(
      state.supernet->weight_parameters(),
      SGDOptions(config.lr_omega).momentum(config.momentum).weight_decay(config.weight_decay_omega));
  state.alpha_optimizer = std::make_unique<Adam>(
      state.supernet->arch_parameters(),
      AdamOptions(config.lr_alpha).betas({0.5, 0.999}).weight_decay(config.weight_decay_alpha));
  state.generator_aux_optimizer =
      std::make_unique<Adam>(state.generator->parameters(), AdamOptions(config.lr_generator).betas({0.5, 0.999}));
  state.generator_adv_optimizer =
      std::make_unique<Adam>(state.generator->parameters(), AdamOptions(config.lr_generator).betas({0.5, 0.999}));
  return state;
}

namespace {

double checked(const torch::Tensor& loss, const char* substep) {
  const double v = loss.item<double>();
  if (!std::isfinite(v)) throw NumericalError(substep, "loss = " + std::to_string(v));
  return v;
}

Classifier classifier_fn(SearchState& state) {
  auto y = state.classifier;
  return [y](const torch::Tensor& x) mutable { return y->forward(x); };
}

torch::Tensor novel_batch(SearchState& state, const StepBatch& batch) {
  return state.generator->generate(batch.images, state.novel_domain());
}

}  // namespace

torch::Tensor training_loss(SearchState& state, const StepBatch& batch) {
  return F::cross_entropy(state.supernet->forward(batch.images), batch.labels);
}

torch::Tensor validation_loss(SearchState& state, const StepBatch& batch) {
  return F::cross_entropy(state.supernet->forward(novel_batch(state, batch)), batch.labels);
}

double update_generator_aux(SearchState& state, const StepBatch& batch) {
  const auto& w = state.aux_weights;
  if (w.lambda_cycle == 0.0 && w.lambda_ce == 0.0) return 0.0;
  state.generator_aux_optimizer->zero_grad();
  auto loss = auxiliary_loss(as_domain_map(state.generator), classifier_fn(state), batch.images, batch.labels,
                             batch.domains, state.novel_domain(), w);
  const double value = checked(loss, "generator_aux");
  loss.backward({}, std::nullopt, false, state.generator->parameters());
  state.generator_aux_optimizer->step();
  return value;
}

double update_omega(SearchState& state, const StepBatch& batch) {
  auto params = state.supernet->weight_parameters();
  state.omega_optimizer->zero_grad();
  auto loss = training_loss(state, batch);
  const double value = checked(loss, "omega");
  loss.backward({}, std::nullopt, false, params);
  torch::nn::utils::clip_grad_norm_(params, state.grad_clip);
  state.omega_optimizer->step();
  return value;
}

double update_generator_adversarial(SearchState& state, const StepBatch& batch) {
  state.generator_adv_optimizer->zero_grad();
  auto loss = validation_loss(state, batch);
  const double value = checked(loss, "generator_adversarial");
  // Adam minimizes, so descending on -l_val ascends l_val.
  (-loss).backward({}, std::nullopt, false, state.generator->parameters());
  state.generator_adv_optimizer->step();
  return value;
}

double update_alpha(SearchState& state, const StepBatch& batch) {
  torch::Tensor synthetic;
  {
    torch::NoGradGuard no_grad;
    synthetic = novel_batch(state, batch);
  }
  state.alpha_optimizer->zero_grad();
  auto loss = F::cross_entropy(state.supernet->forward(synthetic), batch.labels);
  const double value = checked(loss, "alpha");
  loss.backward({}, std::nullopt, false, state.supernet->arch_parameters());
  state.alpha_optimizer->step();
  return value;
}

LossRecord search_step(SearchState& state, const StepBatch& batch) {
  LossRecord record;
  record.l_aux = update_generator_aux(state, batch);
  record.l_train = update_omega(state, batch);
  record.l_val_synth = update_generator_adversarial(state, batch);
  update_alpha(state, batch);
  for (const auto& a : state.supernet->arch_parameters()) {
    if (!torch::isfinite(a).all().item<bool>()) throw NumericalError("alpha", "architecture parameters diverged");
  }
  record.step = ++state.step;
  return record;
}

// ---------------------------------------------------------------------------
// Search drivers

namespace {

struct DomainRemap {
  torch::Tensor lookup;  // original label -> 0..K-1
  int64_t num_sources = 0;
};

DomainRemap remap_sources(const MultiDomainDataset& train) {
  const auto present = train.domains_present();
  DomainRemap remap;
  remap.lookup = torch::full({std::max<int64_t>(train.total_domains(), 1)}, -1, torch::kLong);
  for (size_t i = 0; i < present.size(); ++i) remap.lookup[present[i]] = static_cast<int64_t>(i);
  remap.num_sources = static_cast<int64_t>(present.size());
  return remap;
}

NetworkShape shape_for(const SearchConfig& config, const MultiDomainDataset& train) {
  NetworkShape shape;
  shape.layers = config.layers;
  shape.init_channels = config.init_channels;
  shape.num_classes = config.num_classes > 0 ? config.num_classes : train.num_classes;
  shape.image_channels = train.image_channels();
  return shape;
}

StepBatch to_step_batch(const Batch& batch, const DomainRemap& remap) {
  return {batch.images, batch.class_labels, remap.lookup.index_select(0, batch.domain_labels)};
}

void check_search_inputs(const MultiDomainDataset& train, const SearchConfig& config) {
  config.validate();
  if (train.size() == 0) throw ConfigError("dataset", "training split is empty");
  if (train.domains_present().size() < 2) throw ConfigError("dataset", "search needs at least two source domains");
  if (config.num_classes > 0 && config.num_classes != train.num_classes) {
    throw ConfigError("num_classes", "does not match the dataset");
  }
}

GenotypeMeta meta_for(const MultiDomainDataset& train, const SearchConfig& config, int64_t epoch) {
  return GenotypeMeta{train.name, static_cast<int64_t>(config.seed), epoch};
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

SearchResult search(const MultiDomainDataset& train, const SearchConfig& config, const SearchHooks& hooks) {
  if (config.mode == SearchMode::kRandomSample) {
    config.validate();
    SearchResult result;
    result.genotype = random_genotype(config.seed);
    result.genotype.meta.dataset = train.name;
    return result;
  }
  if (config.mode == SearchMode::kDartsBaseline) return darts_baseline_search(train, config, hooks);

  check_search_inputs(train, config);
  set_deterministic(config.deterministic);
  const auto start = Clock::now();
  const auto remap = remap_sources(train);

  auto pretrained = pretrain_classifier(
      train, PretrainConfig{config.classifier_epochs, config.batch_size, 1e-3, mix_seed(config.seed, 2)});
  SearchResult result;
  result.classifier_train_accuracy = pretrained.train_accuracy;
  result.classifier_checksum_before = module_checksum(*pretrained.classifier);

  SearchConfig effective = config;
  if (config.mode == SearchMode::kNasOodNoCycle) effective.aux_weights.lambda_cycle = 0.0;
  auto state = make_search_state(effective, shape_for(config, train), remap.num_sources, pretrained.classifier);
  state.supernet->train();
  state.generator->train();

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchIterator it(train, config.batch_size, config.seed, epoch);
    Batch batch;
    LossRecord last;
    while (it.next(batch)) {
      if (hooks.on_batch) hooks.on_batch(batch);
      last = search_step(state, to_step_batch(batch, remap));
      last.epoch = epoch + 1;
      last.wall_time = seconds_since(start);
      result.history.push_back(last);
    }
    const auto alpha = state.supernet->alphas();
    state.alpha_snapshots.push_back(alpha);
    state.snapshots.push_back(derive_genotype(alpha, meta_for(train, config, epoch + 1)));
    if (hooks.on_epoch) hooks.on_epoch(epoch + 1, state.snapshots.back(), last);
  }

  result.final_alpha = state.supernet->alphas();
  result.genotype = derive_genotype(result.final_alpha, meta_for(train, config, config.epochs));
  result.snapshots = std::move(state.snapshots);
  result.alpha_snapshots = std::move(state.alpha_snapshots);
  result.generator = state.generator;
  result.classifier = state.classifier;
  result.classifier_checksum_after = module_checksum(*state.classifier);
  if (result.classifier_checksum_after != result.classifier_checksum_before) {
    throw InternalConsistencyError("frozen semantic classifier changed during search");
  }
  result.wall_time_s = seconds_since(start);
  return result;
}

SearchResult darts_baseline_search(const MultiDomainDataset& train, const SearchConfig& config,
                                   const SearchHooks& hooks) {
  check_search_inputs(train, config);
  set_deterministic(config.deterministic);
  const auto start = Clock::now();

  auto [weights_half, arch_half] = split_holdout(train, config.darts_val_fraction, config.seed);
  if (weights_half.size() == 0 || arch_half.size() == 0) {
    throw ConfigError("darts_val_fraction", "leaves one half of the split empty");
  }
  auto supernet = build_supernet(shape_for(config, train), config.seed);
  supernet->train();
  using namespace torch::optim;
  SGD omega_optimizer(supernet->weight_parameters(), SGDOptions(config.lr_omega)
                                                         .momentum(config.momentum)
                                                         .weight_decay(config.weight_decay_omega));
  Adam alpha_optimizer(supernet->arch_parameters(),
                       AdamOptions(config.lr_alpha).betas({0.5, 0.999}).weight_decay(config.weight_decay_alpha));

  SearchResult result;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchIterator train_it(weights_half, config.batch_size, config.seed, epoch);
    BatchIterator val_it(arch_half, config.batch_size, mix_seed(config.seed, 3), epoch);
    Batch batch;
    Batch val_batch;
    LossRecord last;
    while (train_it.next(batch)) {
      if (hooks.on_batch) hooks.on_batch(batch);
      if (!val_it.next(val_batch)) {
        val_it = BatchIterator(arch_half, config.batch_size, mix_seed(config.seed, 3), epoch + 7919 * (step + 1));
        val_it.next(val_batch);
      }
      if (hooks.on_batch) hooks.on_batch(val_batch);

      auto params = supernet->weight_parameters();
      omega_optimizer.zero_grad();
      auto l_train = F::cross_entropy(supernet->forward(batch.images), batch.class_labels);
      last.l_train = checked(l_train, "omega");
      l_train.backward({}, std::nullopt, false, params);
      torch::nn::utils::clip_grad_norm_(params, config.grad_clip);
      omega_optimizer.step();

      alpha_optimizer.zero_grad();
      auto l_val = F::cross_entropy(supernet->forward(val_batch.images), val_batch.class_labels);
      last.l_val_synth = checked(l_val, "alpha");
      l_val.backward({}, std::nullopt, false, supernet->arch_parameters());
      alpha_optimizer.step();

      last.step = ++step;
      last.epoch = epoch + 1;
      last.wall_time = seconds_since(start);
      result.history.push_back(last);
    }
    const auto alpha = supernet->alphas();
    result.alpha_snapshots.push_back(alpha);
    result.snapshots.push_back(derive_genotype(alpha, meta_for(train, config, epoch + 1)));
    if (hooks.on_epoch) hooks.on_epoch(epoch + 1, result.snapshots.back(), last);
  }
  result.final_alpha = supernet->alphas();
  result.genotype = derive_genotype(result.final_alpha, meta_for(train, config, config.epochs));
  result.wall_time_s = seconds_since(start);
  return result;
}

Genotype random_genotype(uint64_t seed) {
  Rng rng(mix_seed(seed, 0xa11ceULL));
  auto sample_cell = [&rng]() {
    CellGene cell{};
    for (int node = 0; node < kIntermediateNodes; ++node) {
      const auto states = static_cast<uint64_t>(node + CellTopology::kInputNodes);
      const auto first = static_cast<int>(rng.below(states));
      auto second = static_cast<int>(rng.below(states - 1));
      if (second >= first) ++second;
      // Ops are drawn from indices 1..7, skipping `none`.
      const auto op_a = static_cast<OperationKind>(1 + rng.below(kNumOperations - 1));
      const auto op_b = static_cast<OperationKind>(1 + rng.below(kNumOperations - 1));
      GenotypeEdge a{first, op_a};
      GenotypeEdge b{second, op_b};
      if (b.predecessor < a.predecessor) std::swap(a, b);
      cell[node] = {a, b};
    }
    return cell;
  };
  Genotype g;
  g.normal = sample_cell();
  g.reduce = sample_cell();
  g.meta = GenotypeMeta{"random", static_cast<int64_t>(seed), 0};
  return g;
}

}  // namespace nasood
