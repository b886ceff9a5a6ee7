#pragma once

#include <torch/torch.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "nasood/classifier.hpp"
#include "nasood/generator.hpp"

namespace nasood {

// Checkpoints are a torch archive of named parameters and buffers (<stem>.pt)
// next to a JSON sidecar (<stem>.json):
//   {"type": "generator"|"classifier", "num_domains": int, "image_channels": int, "seed": int}

void save_generator(ConditionalGenerator& generator, uint64_t seed, const std::filesystem::path& stem);
ConditionalGenerator load_generator(const std::filesystem::path& stem);

/// num_domains is recorded as 0 for a classifier.
void save_classifier(SemanticClassifier& classifier, uint64_t seed, const std::filesystem::path& stem);
/// The loaded classifier is frozen.
SemanticClassifier load_classifier(const std::filesystem::path& stem, int64_t num_classes);

nlohmann::json read_checkpoint_sidecar(const std::filesystem::path& stem);

}  // namespace nasood
