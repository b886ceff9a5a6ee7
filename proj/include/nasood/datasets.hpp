#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace nasood {

struct Sample {
  torch::Tensor image;  // (C, H, W), values in [-1, 1]
  int64_t class_label = 0;
  int64_t domain_label = 0;
  int64_t id = 0;
};

/// Labeled multi-domain images stored as stacked tensors. Subsets keep the
/// parent's label spaces and the original `sample_ids`.
struct MultiDomainDataset {
  torch::Tensor images;         // (N, C, H, W) float32
  torch::Tensor class_labels;   // (N) int64
  torch::Tensor domain_labels;  // (N) int64
  torch::Tensor sample_ids;     // (N) int64
  int64_t num_classes = 0;
  std::vector<std::string> domain_names;
  std::vector<std::string> class_names;
  std::string name;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  int64_t total_domains() const { return static_cast<int64_t>(domain_names.size()); }
  int64_t image_channels() const { return images.size(1); }
  int64_t image_size() const { return images.size(2); }

  Sample sample(int64_t row) const;
  MultiDomainDataset subset(const torch::Tensor& rows) const;
  /// Sorted distinct domain labels that actually occur.
  std::vector<int64_t> domains_present() const;
  /// Throws ValidationError for an unknown name.
  int64_t domain_index(const std::string& domain_name) const;

  /// Checks label ranges, finiteness and the [-1, 1] range. With
  /// `require_every_domain`, each declared domain must have a sample.
  void validate(bool require_every_domain = true) const;
};

/// Background style of one synthetic domain: a two-colour sinusoidal texture
/// plus per-pixel noise.
struct DomainStyle {
  std::array<double, 3> color_a{};
  std::array<double, 3> color_b{};
  double frequency = 1.0;    // periods across the image
  double orientation = 0.0;  // radians
  double noise = 0.05;       // pixel noise standard deviation
};

struct SynthSpec {
  int64_t num_classes = 4;
  int64_t num_domains = 4;
  int64_t image_size = 16;
  int64_t samples_per_domain_per_class = 50;
  uint64_t seed = 0;
  /// Empty means default_domain_styles(num_domains).
  std::vector<DomainStyle> domain_styles;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::vector<DomainStyle> resolved_styles() const;
};

nlohmann::ordered_json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::ordered_json& value);

/// Evenly spread brightness, hue, texture frequency and orientation.
std::vector<DomainStyle> default_domain_styles(int64_t num_domains);

/// Names of the shapes used as classes, in label order.
const std::vector<std::string>& synth_shape_names();

/// Renders `samples_per_domain_per_class` shapes per (domain, class). Sample
/// order is domain-major, then class, then index. If `foreground_masks` is
/// given it receives an (N, H, W) bool tensor marking shape pixels.
MultiDomainDataset generate_synth_dataset(const SynthSpec& spec, torch::Tensor* foreground_masks = nullptr);

/// Reads root/<domain>/<class>/<image>. Domains and classes are sorted
/// lexicographically; images are resized bilinearly and scaled to [-1, 1].
MultiDomainDataset load_folder_dataset(const std::filesystem::path& root, int64_t image_size);

/// Writes dataset.pt plus a dataset.json sidecar into `dir`.
void save_dataset_cache(const MultiDomainDataset& dataset, const nlohmann::ordered_json& provenance,
                        const std::filesystem::path& dir);
MultiDomainDataset load_dataset_cache(const std::filesystem::path& dir);

/// A cache directory (has dataset.json) or a folder-layout root.
MultiDomainDataset load_dataset(const std::filesystem::path& path, int64_t image_size);

/// Stratified holdout: per (class, domain) cell the held part is within one
/// sample of `fraction` of the cell, and its total is round(fraction * N).
/// Returns {kept, held}; both keep ascending row order.
std::pair<MultiDomainDataset, MultiDomainDataset> split_holdout(const MultiDomainDataset& dataset, double fraction,
                                                                uint64_t seed);

struct SplitSpec {
  std::string target_domain;
  double val_fraction = 0.0;
  uint64_t seed = 0;
};

struct DataSplits {
  MultiDomainDataset train;
  MultiDomainDataset val;
  MultiDomainDataset test;
};

/// Leave-one-domain-out split: `test` is exactly the target domain, `val` a
/// split_holdout of the remaining source samples.
DataSplits make_splits(const MultiDomainDataset& dataset, const SplitSpec& spec);

struct Batch {
  torch::Tensor images;
  torch::Tensor class_labels;
  torch::Tensor domain_labels;
  torch::Tensor sample_ids;

  int64_t size() const { return images.size(0); }
};

/// One epoch over a split in a seeded order; the last partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const MultiDomainDataset& split, int64_t batch_size, uint64_t seed, int64_t epoch);

  int64_t num_batches() const;
  /// Fills `batch` and returns true, or returns false once exhausted.
  bool next(Batch& batch);
  const std::vector<int64_t>& order() const { return order_; }

 private:
  const MultiDomainDataset* split_;
  int64_t batch_size_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
};

}  // namespace nasood
