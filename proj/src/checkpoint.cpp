#include "nasood/checkpoint.hpp"

#include <fstream>

#include "nasood/errors.hpp"

namespace nasood {

namespace fs = std::filesystem;

namespace {

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

void write_sidecar(const fs::path& stem, const nlohmann::json& sidecar) {
  std::ofstream out(with_suffix(stem, ".json"));
  if (!out) throw ValidationError("cannot write checkpoint sidecar for " + stem.string());
  out << sidecar.dump(2) << "\n";
}

void save_module(torch::nn::Module& module, const fs::path& stem) {
  torch::serialize::OutputArchive archive;
  module.save(archive);
  archive.save_to(with_suffix(stem, ".pt").string());
}

void load_module(torch::nn::Module& module, const fs::path& stem) {
  torch::serialize::InputArchive archive;
  archive.load_from(with_suffix(stem, ".pt").string());
  module.load(archive);
}

}  // namespace

nlohmann::json read_checkpoint_sidecar(const fs::path& stem) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) throw ValidationError("missing checkpoint sidecar " + with_suffix(stem, ".json").string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad checkpoint sidecar: " + std::string(e.what()));
  }
}

void save_generator(ConditionalGenerator& generator, uint64_t seed, const fs::path& stem) {
  const auto& o = generator->options();
  write_sidecar(stem, {{"type", "generator"},
                       {"num_domains", o.num_domains},
                       {"image_channels", o.image_channels},
                       {"seed", seed},
                       {"width", o.width},
                       {"residual_blocks", o.residual_blocks},
                       {"norm", o.norm == GeneratorNorm::kBatch ? "batch" : "instance"}});
  save_module(*generator, stem);
}

ConditionalGenerator load_generator(const fs::path& stem) {
  const auto sidecar = read_checkpoint_sidecar(stem);
  if (sidecar.value("type", "") != "generator") throw ValidationError(stem.string() + " is not a generator");
  GeneratorOptions o;
  o.num_domains = sidecar.at("num_domains").get<int64_t>();
  o.image_channels = sidecar.at("image_channels").get<int64_t>();
  o.width = sidecar.value("width", o.width);
  o.residual_blocks = sidecar.value("residual_blocks", o.residual_blocks);
  o.norm = sidecar.value("norm", std::string("instance")) == "batch" ? GeneratorNorm::kBatch : GeneratorNorm::kInstance;
  ConditionalGenerator generator(o, sidecar.at("seed").get<uint64_t>());
  load_module(*generator, stem);
  return generator;
}

void save_classifier(SemanticClassifier& classifier, uint64_t seed, const fs::path& stem) {
  const auto& o = classifier->options();
  write_sidecar(stem, {{"type", "classifier"},
                       {"num_domains", 0},
                       {"image_channels", o.image_channels},
                       {"seed", seed},
                       {"num_classes", o.num_classes}});
  save_module(*classifier, stem);
}

SemanticClassifier load_classifier(const fs::path& stem, int64_t num_classes) {
  const auto sidecar = read_checkpoint_sidecar(stem);
  if (sidecar.value("type", "") != "classifier") throw ValidationError(stem.string() + " is not a classifier");
  ClassifierOptions o;
  o.image_channels = sidecar.at("image_channels").get<int64_t>();
  o.num_classes = sidecar.value("num_classes", num_classes);
  SemanticClassifier classifier(o, sidecar.at("seed").get<uint64_t>());
  load_module(*classifier, stem);
  classifier->freeze();
  return classifier;
}

}  // namespace nasood
