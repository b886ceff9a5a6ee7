#pragma once

#include <torch/torch.h>

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nasood/classifier.hpp"
#include "nasood/datasets.hpp"
#include "nasood/derived_network.hpp"
#include "nasood/generator.hpp"
#include "nasood/genotype.hpp"
#include "nasood/search_space.hpp"

namespace nasood {

enum class SearchMode { kNasOod, kNasOodNoCycle, kDartsBaseline, kRandomSample };

/// "nasood", "nasood-no-cycle", "darts", "random".
std::string_view mode_name(SearchMode mode);
/// Accepts the names above plus the underscore spellings
/// (nasood_no_cycle, darts_baseline, random_sample).
SearchMode parse_mode(std::string_view name);

struct SearchConfig {
  int64_t layers = 8;
  int64_t init_channels = 16;
  int64_t num_classes = 0;  // 0: taken from the dataset
  int64_t epochs = 50;
  int64_t batch_size = 64;

  // Network weights: SGD with momentum.
  double lr_omega = 0.025;
  double momentum = 0.9;
  double weight_decay_omega = 3e-4;
  double grad_clip = 5.0;
  // Architecture parameters: Adam.
  double lr_alpha = 3e-4;
  double weight_decay_alpha = 1e-3;
  // Generator: Adam, shared by the auxiliary descent and adversarial ascent.
  double lr_generator = 2e-4;

  AuxLossWeights aux_weights;
  int64_t generator_width = 16;
  GeneratorNorm generator_norm = GeneratorNorm::kInstance;
  int64_t classifier_epochs = 10;
  /// Held-in validation half used by the DARTS baseline.
  double darts_val_fraction = 0.5;

  uint64_t seed = 0;
  SearchMode mode = SearchMode::kNasOod;
  bool deterministic = false;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  /// L = 8, C = 16.
  static SearchConfig desk();
  /// L = 20, C = 36.
  static SearchConfig full_scale();
};

nlohmann::ordered_json search_config_to_json(const SearchConfig& config);
/// Overlays the keys present in `value` on `base`. Unknown keys throw
/// ConfigError.
SearchConfig search_config_from_json(const nlohmann::ordered_json& value, SearchConfig base = {});

struct LossRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double l_train = 0.0;
  double l_val_synth = 0.0;
  double l_aux = 0.0;
  double wall_time = 0.0;
};

nlohmann::ordered_json loss_record_to_json(const LossRecord& record);
/// One JSON object per line.
std::string history_to_jsonl(const std::vector<LossRecord>& history);

/// Everything the minimax loop mutates. The classifier is frozen on entry and
/// must stay bit-identical.
struct SearchState {
  Supernet supernet{nullptr};
  ConditionalGenerator generator{nullptr};
  SemanticClassifier classifier{nullptr};
  std::unique_ptr<torch::optim::SGD> omega_optimizer;
  std::unique_ptr<torch::optim::Adam> alpha_optimizer;
  std::unique_ptr<torch::optim::Adam> generator_aux_optimizer;
  std::unique_ptr<torch::optim::Adam> generator_adv_optimizer;
  AuxLossWeights aux_weights;
  double grad_clip = 5.0;
  int64_t step = 0;
  std::vector<Genotype> snapshots;
  std::vector<ArchitectureParameters> alpha_snapshots;

  int64_t novel_domain() const { return generator->novel_domain(); }
};

/// Builds supernet, generator and optimizers around an already frozen
/// classifier. Learning rates are taken as given (zero is allowed here).
/// `num_source_domains` is K; the generator gets K + 1 conditioning slots.
SearchState make_search_state(const SearchConfig& config, const NetworkShape& shape, int64_t num_source_domains,
                              SemanticClassifier classifier, torch::Dtype dtype = torch::kFloat32);

/// Mini-batch whose domain labels are already remapped to 0..K-1.
struct StepBatch {
  torch::Tensor images;
  torch::Tensor labels;
  torch::Tensor domains;
};

// The four parameter updates of one minimax step. Each returns the loss it
// differentiated, evaluated before its own update.

/// theta_G <- theta_G - lr * grad(l_aux).
double update_generator_aux(SearchState& state, const StepBatch& batch);
/// omega <- omega - lr * grad(l_train) on the real batch.
double update_omega(SearchState& state, const StepBatch& batch);
/// theta_G <- theta_G + lr * grad(l_val) on G(x, novel): gradient ascent.
double update_generator_adversarial(SearchState& state, const StepBatch& batch);
/// alpha <- alpha - lr * grad(l_val) on freshly generated G(x, novel), with
/// omega held constant (first-order).
double update_alpha(SearchState& state, const StepBatch& batch);

/// l_val of the current state: CE of supernet(G(x, novel)) against the
/// original labels.
torch::Tensor validation_loss(SearchState& state, const StepBatch& batch);
torch::Tensor training_loss(SearchState& state, const StepBatch& batch);

/// Runs the four updates in order. Throws NumericalError naming the sub-step
/// on a non-finite loss.
LossRecord search_step(SearchState& state, const StepBatch& batch);

struct SearchHooks {
  /// Sees every training batch before it is used.
  std::function<void(const Batch&)> on_batch;
  /// Called after each epoch with the snapshot just taken.
  std::function<void(int64_t epoch, const Genotype&, const LossRecord&)> on_epoch;
};

struct SearchResult {
  Genotype genotype;
  std::vector<LossRecord> history;
  std::vector<Genotype> snapshots;
  std::vector<ArchitectureParameters> alpha_snapshots;
  ArchitectureParameters final_alpha;
  /// Final generator and frozen classifier; null for darts and random modes.
  ConditionalGenerator generator{nullptr};
  SemanticClassifier classifier{nullptr};
  double classifier_train_accuracy = 0.0;
  uint64_t classifier_checksum_before = 0;
  uint64_t classifier_checksum_after = 0;
  double wall_time_s = 0.0;
};

/// Minimax architecture search over the pooled source domains of `train`.
/// Needs at least two source domains. Dispatches on config.mode:
/// nasood-no-cycle zeroes lambda_cycle, darts runs darts_baseline_search,
/// random returns random_genotype(seed).
SearchResult search(const MultiDomainDataset& train, const SearchConfig& config, const SearchHooks& hooks = {});

/// Plain first-order DARTS: omega on one half of the pooled sources, alpha on
/// the other half. No generator.
SearchResult darts_baseline_search(const MultiDomainDataset& train, const SearchConfig& config,
                                   const SearchHooks& hooks = {});

/// Per node: two distinct uniform predecessors, each with a uniform non-none
/// op. Deterministic in `seed`.
Genotype random_genotype(uint64_t seed);

/// Single-threaded, deterministic kernels when `on`.
void set_deterministic(bool on);

struct RetrainConfig {
  int64_t layers = 8;
  int64_t init_channels = 16;
  int64_t epochs = 30;
  int64_t batch_size = 64;
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double grad_clip = 5.0;
  bool cosine = true;
  /// Random horizontal flip plus 1/8-size padded random crop.
  bool augment = false;
  double val_fraction = 0.1;
  uint64_t seed = 0;
  bool deterministic = false;

  void validate() const;
};

nlohmann::ordered_json retrain_config_to_json(const RetrainConfig& config);
RetrainConfig retrain_config_from_json(const nlohmann::ordered_json& value, RetrainConfig base = {});

struct RetrainEpoch {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct RetrainResult {
  DerivedNetwork network{nullptr};
  /// Test accuracy at the epoch with the best held-in validation accuracy
  /// (the last epoch when there is no validation split).
  double target_accuracy = 0.0;
  double best_val_accuracy = 0.0;
  int64_t best_epoch = 0;
  int64_t parameter_count = 0;
  std::vector<RetrainEpoch> history;
};

/// Trains the derived network on `splits.train` and reports accuracy on
/// `splits.test`. Throws ProtocolError if a test domain occurs in train or val.
RetrainResult retrain_derived(const Genotype& genotype, const DataSplits& splits, const RetrainConfig& config);
RetrainResult retrain_derived(const Genotype& genotype, const MultiDomainDataset& dataset,
                              const std::string& target_domain, const RetrainConfig& config);

}  // namespace nasood
