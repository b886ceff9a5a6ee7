#include "nasood/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nasood/nasood.hpp"

namespace nasood::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

/// Raised for problems that should end with the usage exit code.
class UsageError : public Error {
 public:
  using Error::Error;
};

ojson read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const ojson& value) { write_text(path, value.dump(2) + "\n"); }

/// Writes to `path`, or to `out` when the path is empty or "-".
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return s.str();
}

fs::path fresh_run_dir(const fs::path& root, const std::string& mode, uint64_t seed) {
  const std::string base = timestamp() + "_" + mode + "_" + std::to_string(seed);
  fs::path dir = root / base;
  for (int i = 1; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

/// Flags shared by the workflow commands. Each one overrides the matching
/// key of the --config file.
struct CommonFlags {
  std::string config;
  std::optional<std::string> data;
  std::optional<std::string> target_domain;
  std::optional<std::string> mode;
  std::optional<int64_t> epochs;
  std::optional<int64_t> layers;
  std::optional<int64_t> init_channels;
  std::optional<int64_t> batch_size;
  std::optional<double> lr_omega;
  std::optional<double> lr_alpha;
  std::optional<double> lr_gen;
  std::optional<double> lambda_cycle;
  std::optional<double> lambda_ce;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> out;
  std::optional<int64_t> image_size;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f, bool search_flags) {
  cmd->add_option("--config", f.config, "JSON config file; explicit flags win");
  cmd->add_option("--data", f.data, "Dataset cache directory or root/<domain>/<class>/<image> folder");
  cmd->add_option("--target-domain", f.target_domain, "Held-out domain name");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--layers", f.layers, "Number of cells");
  cmd->add_option("--init-channels", f.init_channels, "Channels of the first cell");
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
  cmd->add_option("--seed", f.seed, "Seed (falls back to $NASOOD_SEED, then 0)");
  cmd->add_flag("--deterministic", f.deterministic, "Single-threaded deterministic kernels");
  cmd->add_option("--out", f.out, "Output location");
  cmd->add_option("--image-size", f.image_size, "Image size for folder datasets");
  cmd->add_option("--mode", f.mode, "nasood | nasood-no-cycle | darts | random");
  if (search_flags) {
    cmd->add_option("--lr-omega", f.lr_omega, "Network weight learning rate (SGD)");
    cmd->add_option("--lr-alpha", f.lr_alpha, "Architecture learning rate (Adam)");
    cmd->add_option("--lr-gen", f.lr_gen, "Generator learning rate (Adam)");
    cmd->add_option("--lambda-cycle", f.lambda_cycle, "Cycle-consistency weight");
    cmd->add_option("--lambda-ce", f.lambda_ce, "Semantic cross-entropy weight");
  }
}

uint64_t resolve_seed(const std::optional<uint64_t>& flag, const ojson& config) {
  if (flag) return *flag;
  if (config.contains("seed")) return config["seed"].get<uint64_t>();
  if (const char* env = std::getenv("NASOOD_SEED"); env != nullptr && *env != '\0') {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("NASOOD_SEED is not an unsigned integer");
    }
  }
  return 0;
}

/// Merges the config file and explicit flags into one flat JSON object.
/// Keys outside `allowed` are rejected.
ojson merge_config(const CommonFlags& f, const std::set<std::string>& allowed) {
  ojson merged = ojson::object();
  if (!f.config.empty()) {
    merged = read_json_file(f.config);
    if (!merged.is_object()) throw UsageError("--config must hold a JSON object");
    for (const auto& [key, value] : merged.items()) {
      if (allowed.count(key) == 0) throw UsageError("unknown config key '" + key + "'");
    }
  }
  auto set = [&merged](const char* key, const auto& opt) {
    if (opt) merged[key] = *opt;
  };
  set("data", f.data);
  set("target_domain", f.target_domain);
  set("mode", f.mode);
  set("epochs", f.epochs);
  set("layers", f.layers);
  set("init_channels", f.init_channels);
  set("batch_size", f.batch_size);
  set("lr_omega", f.lr_omega);
  set("lr_alpha", f.lr_alpha);
  set("lr_gen", f.lr_gen);
  set("lambda_cycle", f.lambda_cycle);
  set("lambda_ce", f.lambda_ce);
  set("out", f.out);
  set("image_size", f.image_size);
  if (f.deterministic) merged["deterministic"] = true;
  merged["seed"] = resolve_seed(f.seed, merged);
  return merged;
}

std::string required_string(const ojson& config, const char* key, const char* flag) {
  if (!config.contains(key) || !config[key].is_string() || config[key].get<std::string>().empty()) {
    throw UsageError(std::string("missing ") + flag);
  }
  return config[key].get<std::string>();
}

/// Metrics carry a null wall time under --deterministic so repeated runs are
/// byte-identical; the measured time goes to timing.json instead.
std::string retrain_history_jsonl(const std::vector<RetrainEpoch>& history) {
  std::string text;
  for (const auto& e : history) {
    text += ojson{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy},
                  {"test_accuracy", e.test_accuracy}}
                .dump() +
            "\n";
  }
  return text;
}

ojson metrics_json(const std::string& mode, uint64_t seed, const std::string& target, std::optional<double> accuracy,
                   int64_t params, int64_t epochs, double wall_time, bool deterministic) {
  ojson m;
  m["mode"] = mode;
  m["seed"] = seed;
  m["target_domain"] = target;
  m["target_accuracy"] = accuracy ? ojson(*accuracy) : ojson(nullptr);
  m["params_millions"] = parameters_in_millions(params);
  m["epochs"] = epochs;
  m["wall_time_s"] = deterministic ? ojson(nullptr) : ojson(wall_time);
  return m;
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::string config;
  std::optional<std::string> out;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  std::optional<int64_t> num_classes;
  std::optional<int64_t> num_domains;
  std::optional<int64_t> image_size;
  std::optional<int64_t> samples;
};

int cmd_synth_data(const SynthFlags& f, std::ostream& out) {
  ojson merged = ojson::object();
  if (!f.config.empty()) {
    merged = read_json_file(f.config);
    const std::set<std::string> allowed{"out", "seed", "deterministic", "num_classes", "num_domains", "image_size",
                                        "samples_per_domain_per_class", "domain_styles"};
    for (const auto& [key, value] : merged.items()) {
      if (allowed.count(key) == 0) throw UsageError("unknown config key '" + key + "'");
    }
  }
  if (f.out) merged["out"] = *f.out;
  if (f.num_classes) merged["num_classes"] = *f.num_classes;
  if (f.num_domains) merged["num_domains"] = *f.num_domains;
  if (f.image_size) merged["image_size"] = *f.image_size;
  if (f.samples) merged["samples_per_domain_per_class"] = *f.samples;
  merged["seed"] = resolve_seed(f.seed, merged);
  const auto out_dir = fs::path(required_string(merged, "out", "--out"));

  SynthSpec defaults;
  ojson spec_json = synth_spec_to_json(defaults);
  spec_json.erase("domain_styles");
  for (const auto& [key, value] : merged.items()) {
    if (key != "out" && key != "deterministic") spec_json[key] = value;
  }
  const auto spec = synth_spec_from_json(spec_json);
  const auto dataset = generate_synth_dataset(spec);
  save_dataset_cache(dataset, synth_spec_to_json(spec), out_dir);
  out << out_dir.string() << "\n";
  return kExitOk;
}

const std::set<std::string>& search_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const auto defaults = search_config_to_json(SearchConfig{});
    for (const auto& [key, value] : defaults.items()) k.insert(key);
    for (const char* extra : {"data", "target_domain", "out", "image_size", "retrain_epochs", "retrain"}) k.insert(extra);
    return k;
  }();
  return keys;
}

int cmd_search(const CommonFlags& f, std::optional<int64_t> retrain_epochs, std::ostream& out, std::ostream& err) {
  ojson merged = merge_config(f, search_keys());
  if (retrain_epochs) merged["retrain_epochs"] = *retrain_epochs;

  const auto defaults = search_config_to_json(SearchConfig{});
  ojson search_part = ojson::object();
  for (const auto& [key, value] : merged.items()) {
    if (defaults.contains(key)) search_part[key] = value;
  }
  SearchConfig config = search_config_from_json(search_part);
  config.validate();
  const auto data_path = required_string(merged, "data", "--data");
  const auto target = required_string(merged, "target_domain", "--target-domain");
  const auto out_root = fs::path(merged.value("out", std::string("runs")));
  const int64_t image_size = merged.value("image_size", int64_t{16});
  const int64_t n_retrain = merged.value("retrain_epochs", int64_t{0});
  RetrainConfig retrain_config;
  if (merged.contains("retrain")) retrain_config = retrain_config_from_json(merged["retrain"], retrain_config);
  retrain_config.layers = config.layers;
  retrain_config.init_channels = config.init_channels;
  retrain_config.batch_size = config.batch_size;
  retrain_config.seed = config.seed;
  retrain_config.deterministic = config.deterministic;
  if (n_retrain > 0) {
    retrain_config.epochs = n_retrain;
    retrain_config.validate();
  }

  set_deterministic(config.deterministic);
  const auto dataset = load_dataset(data_path, image_size);
  const auto splits = make_splits(dataset, SplitSpec{target, 0.0, config.seed});

  const auto run_dir = fresh_run_dir(out_root, std::string(mode_name(config.mode)), config.seed);
  ojson resolved = search_config_to_json(config);
  resolved["data"] = data_path;
  resolved["target_domain"] = target;
  resolved["out"] = out_root.string();
  resolved["image_size"] = image_size;
  resolved["retrain_epochs"] = n_retrain;
  resolved["retrain"] = retrain_config_to_json(retrain_config);
  write_json(run_dir / "resolved_config.json", resolved);

  SearchHooks hooks;
  hooks.on_epoch = [&err](int64_t epoch, const Genotype&, const LossRecord& r) {
    err << "epoch " << epoch << "  l_train=" << r.l_train << "  l_val_synth=" << r.l_val_synth
        << "  l_aux=" << r.l_aux << "\n";
  };
  const auto start = std::chrono::steady_clock::now();
  auto result = search(splits.train, config, hooks);

  write_text(run_dir / "history.jsonl", history_to_jsonl(result.history));
  save_genotype(result.genotype, (run_dir / "genotype.json").string());
  fs::create_directories(run_dir / "snapshots");
  for (size_t e = 0; e < result.snapshots.size(); ++e) {
    save_genotype(result.snapshots[e], (run_dir / "snapshots" / ("epoch_" + std::to_string(e + 1) + ".json")).string());
  }
  if (result.final_alpha.normal.defined()) {
    write_json(run_dir / "alpha.json", alpha_to_json(result.final_alpha));
    fs::create_directories(run_dir / "alphas");
    for (size_t e = 0; e < result.alpha_snapshots.size(); ++e) {
      write_json(run_dir / "alphas" / ("epoch_" + std::to_string(e + 1) + ".json"),
                 alpha_to_json(result.alpha_snapshots[e]));
    }
  }
  if (result.generator) save_generator(result.generator, config.seed, run_dir / "generator");
  if (result.classifier) save_classifier(result.classifier, config.seed, run_dir / "classifier");

  std::optional<double> accuracy;
  NetworkShape shape;
  shape.layers = config.layers;
  shape.init_channels = config.init_channels;
  shape.num_classes = dataset.num_classes;
  shape.image_channels = dataset.image_channels();
  int64_t params = count_parameters(*instantiate_derived_network(result.genotype, shape, config.seed));
  if (n_retrain > 0) {
    const auto retrained = retrain_derived(result.genotype, dataset, target, retrain_config);
    accuracy = retrained.target_accuracy;
    params = retrained.parameter_count;
    write_text(run_dir / "retrain_history.jsonl", retrain_history_jsonl(retrained.history));
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(run_dir / "metrics.json", metrics_json(std::string(mode_name(config.mode)), config.seed, target, accuracy,
                                                    params, config.epochs, wall, config.deterministic));
  if (config.deterministic) write_json(run_dir / "timing.json", ojson{{"wall_time_s", wall}});
  out << run_dir.string() << "\n";
  return kExitOk;
}

int cmd_retrain(const CommonFlags& f, const std::string& genotype_path, std::ostream& out) {
  static const std::set<std::string> allowed{"data",       "target_domain", "mode",          "epochs",
                                             "layers",     "init_channels", "batch_size",    "seed",
                                             "deterministic", "out",        "image_size",    "lr",
                                             "momentum",   "weight_decay",  "grad_clip",     "cosine",
                                             "augment",    "val_fraction",  "genotype"};
  ojson merged = merge_config(f, allowed);
  if (!genotype_path.empty()) merged["genotype"] = genotype_path;

  ojson retrain_part = ojson::object();
  for (const char* key : {"layers", "init_channels", "epochs", "batch_size", "lr", "momentum", "weight_decay",
                          "grad_clip", "cosine", "augment", "val_fraction", "seed", "deterministic"}) {
    if (merged.contains(key)) retrain_part[key] = merged[key];
  }
  const auto config = retrain_config_from_json(retrain_part);
  config.validate();
  const auto data_path = required_string(merged, "data", "--data");
  const auto target = required_string(merged, "target_domain", "--target-domain");
  const auto out_dir = fs::path(required_string(merged, "out", "--out"));
  const auto genotype = load_genotype(required_string(merged, "genotype", "--genotype"));
  const int64_t image_size = merged.value("image_size", int64_t{16});
  const std::string mode = merged.value("mode", std::string("retrain"));

  set_deterministic(config.deterministic);
  const auto dataset = load_dataset(data_path, image_size);
  fs::create_directories(out_dir);
  ojson resolved = retrain_config_to_json(config);
  resolved["data"] = data_path;
  resolved["target_domain"] = target;
  resolved["genotype"] = merged["genotype"];
  resolved["image_size"] = image_size;
  resolved["mode"] = mode;
  write_json(out_dir / "resolved_config.json", resolved);

  const auto start = std::chrono::steady_clock::now();
  const auto result = retrain_derived(genotype, dataset, target, config);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(out_dir / "retrain_history.jsonl", retrain_history_jsonl(result.history));
  write_json(out_dir / "metrics.json", metrics_json(mode, config.seed, target, result.target_accuracy,
                                                    result.parameter_count, config.epochs, wall, config.deterministic));
  if (config.deterministic) write_json(out_dir / "timing.json", ojson{{"wall_time_s", wall}});
  out << "target_accuracy=" << result.target_accuracy
      << " params_millions=" << parameters_in_millions(result.parameter_count) << "\n";
  return kExitOk;
}

/// Accepts files, or directories whose epoch_<n>.json files are taken in
/// numeric order.
std::vector<fs::path> expand_snapshot_paths(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& input : inputs) {
    if (!fs::is_directory(input)) {
      out.emplace_back(input);
      continue;
    }
    std::vector<std::pair<int64_t, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(input)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("epoch_", 0) == 0 && entry.path().extension() == ".json") {
        found.emplace_back(std::stoll(name.substr(6)), entry.path());
      }
    }
    std::sort(found.begin(), found.end());
    for (auto& [epoch, path] : found) out.push_back(path);
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Architecture search for out-of-distribution generalization"};
  app.name("nasood");
  app.require_subcommand(1);

  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth-data", "Render the procedural multi-domain benchmark");
  synth->add_option("--config", synth_flags.config, "JSON config file; explicit flags win");
  synth->add_option("--out", synth_flags.out, "Output cache directory");
  synth->add_option("--seed", synth_flags.seed, "Seed");
  synth->add_flag("--deterministic", synth_flags.deterministic, "Accepted for symmetry; rendering is always deterministic");
  synth->add_option("--num-classes", synth_flags.num_classes, "Shape classes");
  synth->add_option("--num-domains", synth_flags.num_domains, "Domains");
  synth->add_option("--image-size", synth_flags.image_size, "Image side, divisible by 4");
  synth->add_option("--samples-per-cell", synth_flags.samples, "Samples per (domain, class)");

  CommonFlags search_flags;
  std::optional<int64_t> retrain_epochs;
  auto* search_cmd = app.add_subcommand("search", "Run architecture search on the source domains");
  add_common_flags(search_cmd, search_flags, true);
  search_cmd->add_option("--retrain-epochs", retrain_epochs, "Also retrain the result for this many epochs");

  CommonFlags retrain_flags;
  std::string retrain_genotype;
  auto* retrain_cmd = app.add_subcommand("retrain", "Retrain a genotype and report target-domain accuracy");
  add_common_flags(retrain_cmd, retrain_flags, false);
  retrain_cmd->add_option("--genotype", retrain_genotype, "Genotype JSON file");

  auto* analyze = app.add_subcommand("analyze", "Architecture analysis outputs");
  analyze->require_subcommand(1);
  std::string a_genotype;
  std::string a_out;
  bool a_per_cell = false;
  std::string a_format = "csv";
  std::vector<std::string> a_inputs;
  uint64_t a_seed = 0;
  bool a_deterministic = false;
  auto add_analyze_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", a_out, "Output file (stdout when omitted)");
    cmd->add_option("--seed", a_seed, "Unused; accepted on every command");
    cmd->add_flag("--deterministic", a_deterministic, "Unused; accepted on every command");
  };
  auto* a_ops = analyze->add_subcommand("ops", "Operation percentages of a genotype");
  a_ops->add_option("--genotype", a_genotype)->required();
  a_ops->add_flag("--per-cell-type", a_per_cell, "Separate normal and reduce cells");
  add_analyze_common(a_ops);
  auto* a_temporal = analyze->add_subcommand("temporal", "Operation percentages per epoch snapshot");
  a_temporal->add_option("--snapshots", a_inputs, "Snapshot files or directories")->required();
  a_temporal->add_flag("--per-cell-type", a_per_cell, "Separate normal and reduce cells");
  add_analyze_common(a_temporal);
  auto* a_dot = analyze->add_subcommand("dot", "Graphviz DOT cell diagrams");
  a_dot->add_option("--genotype", a_genotype)->required();
  add_analyze_common(a_dot);
  auto* a_table = analyze->add_subcommand("table", "Comparison table over metrics.json files");
  a_table->add_option("--metrics", a_inputs, "metrics.json files")->required();
  a_table->add_option("--format", a_format, "csv | text");
  add_analyze_common(a_table);
  auto* a_alpha = analyze->add_subcommand("alpha", "Flattened alpha vectors as CSV");
  a_alpha->add_option("--alphas", a_inputs, "alpha JSON files or directories")->required();
  add_analyze_common(a_alpha);

  CommonFlags cross_flags;
  std::vector<std::string> cross_data;
  std::vector<std::string> cross_targets;
  std::string cross_genotype;
  auto* cross = app.add_subcommand("cross-eval", "Retrain one genotype on several datasets");
  cross->add_option("--config", cross_flags.config, "JSON config file; explicit flags win");
  cross->add_option("--genotype", cross_genotype, "Genotype JSON file")->required();
  cross->add_option("--data", cross_data, "Dataset paths (repeatable)")->required();
  cross->add_option("--target-domain", cross_targets, "Target per dataset, or one for all")->required();
  cross->add_option("--epochs", cross_flags.epochs, "Retrain epochs");
  cross->add_option("--layers", cross_flags.layers, "Number of cells");
  cross->add_option("--init-channels", cross_flags.init_channels, "Channels of the first cell");
  cross->add_option("--batch-size", cross_flags.batch_size, "Mini-batch size");
  cross->add_option("--seed", cross_flags.seed, "Seed");
  cross->add_flag("--deterministic", cross_flags.deterministic, "Deterministic kernels");
  cross->add_option("--image-size", cross_flags.image_size, "Image size for folder datasets");
  cross->add_option("--out", cross_flags.out, "Output CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'nasood --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth_data(synth_flags, out);
    if (*search_cmd) return cmd_search(search_flags, retrain_epochs, out, err);
    if (*retrain_cmd) return cmd_retrain(retrain_flags, retrain_genotype, out);
    if (*a_ops) {
      const auto g = load_genotype(a_genotype);
      emit(a_out, a_per_cell ? op_percentages_by_cell_csv(g) : op_percentages_csv(op_percentages(g)), out);
      return kExitOk;
    }
    if (*a_temporal) {
      std::vector<Genotype> snapshots;
      for (const auto& p : expand_snapshot_paths(a_inputs)) snapshots.push_back(load_genotype(p.string()));
      emit(a_out,
           a_per_cell ? temporal_stability_by_cell_csv(snapshots) : temporal_stability_csv(temporal_stability(snapshots)),
           out);
      return kExitOk;
    }
    if (*a_dot) {
      emit(a_out, export_genotype_dot(load_genotype(a_genotype)), out);
      return kExitOk;
    }
    if (*a_table) {
      if (a_format != "csv" && a_format != "text") throw UsageError("--format must be csv or text");
      std::vector<nlohmann::json> metrics;
      for (const auto& p : a_inputs) metrics.push_back(nlohmann::json::parse(read_json_file(p).dump()));
      emit(a_out, comparison_table(metrics, a_format == "csv" ? TableFormat::kCsv : TableFormat::kText), out);
      return kExitOk;
    }
    if (*a_alpha) {
      std::vector<ArchitectureParameters> alphas;
      for (const auto& p : expand_snapshot_paths(a_inputs)) alphas.push_back(alpha_from_json(read_json_file(p)));
      emit(a_out, export_alpha_vectors(alphas), out);
      return kExitOk;
    }
    if (*cross) {
      static const std::set<std::string> allowed{"epochs", "layers", "init_channels", "batch_size", "seed",
                                                 "deterministic", "image_size", "out", "lr", "momentum",
                                                 "weight_decay", "grad_clip", "cosine", "augment", "val_fraction"};
      ojson merged = merge_config(cross_flags, allowed);
      if (cross_targets.size() != 1 && cross_targets.size() != cross_data.size()) {
        throw UsageError("--target-domain must be given once or once per --data");
      }
      ojson retrain_part = ojson::object();
      for (const auto& [key, value] : merged.items()) {
        if (key != "image_size" && key != "out") retrain_part[key] = value;
      }
      const auto config = retrain_config_from_json(retrain_part);
      config.validate();
      const auto genotype = load_genotype(cross_genotype);
      set_deterministic(config.deterministic);
      const int64_t image_size = merged.value("image_size", int64_t{16});
      std::vector<CrossEvalTask> tasks;
      for (size_t i = 0; i < cross_data.size(); ++i) {
        tasks.push_back({load_dataset(cross_data[i], image_size), cross_targets.size() == 1 ? cross_targets[0] : cross_targets[i]});
      }
      const auto accuracies = cross_evaluate(genotype, tasks, config);
      std::ostringstream csv;
      csv << "dataset,target_domain,accuracy\n" << std::setprecision(6) << std::fixed;
      for (size_t i = 0; i < tasks.size(); ++i) {
        csv << cross_data[i] << "," << tasks[i].target_domain << "," << accuracies[i] << "\n";
      }
      emit(merged.value("out", std::string()), csv.str(), out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace nasood::cli
