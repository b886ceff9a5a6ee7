#include "nasood/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nasood/errors.hpp"
#include "nasood/rng.hpp"

namespace nasood {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

Sample MultiDomainDataset::sample(int64_t row) const {
  if (row < 0 || row >= size()) throw ValidationError("sample row out of range");
  return {images[row], class_labels[row].item<int64_t>(), domain_labels[row].item<int64_t>(),
          sample_ids[row].item<int64_t>()};
}

MultiDomainDataset MultiDomainDataset::subset(const torch::Tensor& rows) const {
  MultiDomainDataset out = *this;
  auto idx = rows.to(torch::kLong);
  out.images = images.index_select(0, idx);
  out.class_labels = class_labels.index_select(0, idx);
  out.domain_labels = domain_labels.index_select(0, idx);
  out.sample_ids = sample_ids.index_select(0, idx);
  return out;
}

std::vector<int64_t> MultiDomainDataset::domains_present() const {
  if (size() == 0) return {};
  auto uniq = std::get<0>(torch::_unique(domain_labels, /*sorted=*/true));
  std::vector<int64_t> out(uniq.data_ptr<int64_t>(), uniq.data_ptr<int64_t>() + uniq.numel());
  std::sort(out.begin(), out.end());
  return out;
}

int64_t MultiDomainDataset::domain_index(const std::string& domain_name) const {
  auto it = std::find(domain_names.begin(), domain_names.end(), domain_name);
  if (it == domain_names.end()) throw ValidationError("unknown domain '" + domain_name + "'");
  return it - domain_names.begin();
}

void MultiDomainDataset::validate(bool require_every_domain) const {
  const int64_t n = size();
  if (n == 0) throw DatasetError("dataset '" + name + "' is empty");
  if (images.dim() != 4) throw DatasetError("images must be (N, C, H, W)");
  if (class_labels.size(0) != n || domain_labels.size(0) != n || sample_ids.size(0) != n) {
    throw DatasetError("label tensors do not match the image count");
  }
  if (num_classes < 2) throw DatasetError("need at least two classes");
  if (class_labels.min().item<int64_t>() < 0 || class_labels.max().item<int64_t>() >= num_classes) {
    throw DatasetError("class label out of range");
  }
  if (domain_labels.min().item<int64_t>() < 0 || domain_labels.max().item<int64_t>() >= total_domains()) {
    throw DatasetError("domain label out of range");
  }
  if (!torch::isfinite(images).all().item<bool>()) throw DatasetError("non-finite pixel values");
  if (images.min().item<float>() < -1.0f || images.max().item<float>() > 1.0f) {
    throw DatasetError("pixel values outside [-1, 1]");
  }
  if (require_every_domain) {
    auto counts = torch::bincount(domain_labels, {}, total_domains());
    for (int64_t d = 0; d < total_domains(); ++d) {
      if (counts[d].item<int64_t>() == 0) throw DatasetError("domain '" + domain_names[d] + "' has no samples");
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

const std::vector<std::string>& synth_shape_names() {
  static const std::vector<std::string> names{"disk", "square", "triangle", "cross",
                                              "ring", "diamond", "bar",      "x"};
  return names;
}

void SynthSpec::validate() const {
  const auto max_classes = static_cast<int64_t>(synth_shape_names().size());
  if (num_classes < 2 || num_classes > max_classes) {
    throw ConfigError("num_classes", "must be in [2, " + std::to_string(max_classes) + "]");
  }
  if (num_domains < 3) throw ConfigError("num_domains", "must be >= 3");
  if (image_size < 8 || image_size % 4 != 0) throw ConfigError("image_size", "must be >= 8 and divisible by 4");
  if (samples_per_domain_per_class < 1) throw ConfigError("samples_per_domain_per_class", "must be >= 1");
  if (!domain_styles.empty() && static_cast<int64_t>(domain_styles.size()) != num_domains) {
    throw ConfigError("domain_styles", "need exactly one style per domain");
  }
  for (const auto& style : domain_styles) {
    for (const auto* c : {&style.color_a, &style.color_b}) {
      for (double v : *c) {
        if (!(v >= -1.0 && v <= 1.0)) throw ConfigError("domain_styles", "colours must lie in [-1, 1]");
      }
    }
    if (!(style.frequency >= 0.0) || !(style.noise >= 0.0) || !std::isfinite(style.orientation)) {
      throw ConfigError("domain_styles", "frequency and noise must be >= 0");
    }
  }
}

std::vector<DomainStyle> SynthSpec::resolved_styles() const {
  return domain_styles.empty() ? default_domain_styles(num_domains) : domain_styles;
}

std::vector<DomainStyle> default_domain_styles(int64_t num_domains) {
  std::vector<DomainStyle> styles;
  for (int64_t d = 0; d < num_domains; ++d) {
    const double t = num_domains > 1 ? static_cast<double>(d) / static_cast<double>(num_domains - 1) : 0.0;
    const double level = -0.6 + 1.2 * t;
    const double hue = 2.0 * std::numbers::pi * static_cast<double>(d) / static_cast<double>(num_domains);
    DomainStyle s;
    for (int c = 0; c < 3; ++c) {
      const double tint = 0.25 * std::cos(hue + 2.0 * std::numbers::pi * c / 3.0);
      s.color_a[c] = std::clamp(level + tint - 0.15, -1.0, 1.0);
      s.color_b[c] = std::clamp(level - tint + 0.15, -1.0, 1.0);
    }
    s.frequency = 1.0 + 1.5 * static_cast<double>(d);
    s.orientation = std::numbers::pi * static_cast<double>(d) / static_cast<double>(num_domains);
    s.noise = 0.05;
    styles.push_back(s);
  }
  return styles;
}

namespace {

bool inside_shape(int64_t shape, double u, double v) {
  switch (shape) {
    case 0:  // disk
      return u * u + v * v <= 1.0;
    case 1:  // square
      return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2: {  // triangle pointing up
      const double h = std::sqrt(3.0) / 2.0;
      return v <= 0.5 && v >= -1.0 + std::abs(u) * (1.5 / h);
    }
    case 3:  // cross
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4: {  // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case 5:  // diamond
      return std::abs(u) + std::abs(v) <= 1.0;
    case 6:  // bar
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.35;
    default: {  // x
      const double a = (u + v) * std::numbers::sqrt2 / 2.0;
      const double b = (u - v) * std::numbers::sqrt2 / 2.0;
      return (std::abs(a) <= 0.28 && std::abs(b) <= 1.0) || (std::abs(b) <= 0.28 && std::abs(a) <= 1.0);
    }
  }
}

double channel_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(d);
}

void render_sample(const DomainStyle& style, int64_t shape, int64_t size, Rng& rng, float* image, bool* mask) {
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double s = static_cast<double>(size);
  const double radius = rng.uniform(0.26, 0.38) * s;
  const double cx = rng.uniform(0.38, 0.62) * s;
  const double cy = rng.uniform(0.38, 0.62) * s;
  const double angle = rng.uniform(-0.35, 0.35);

  std::array<double, 3> mean_bg{};
  for (int c = 0; c < 3; ++c) mean_bg[c] = 0.5 * (style.color_a[c] + style.color_b[c]);
  std::array<double, 3> fg{};
  for (int attempt = 0; attempt < 32; ++attempt) {
    for (double& v : fg) v = rng.uniform(-1.0, 1.0);
    if (channel_distance(fg, mean_bg) >= 0.9) break;
  }

  const double ca = std::cos(-angle);
  const double sa = std::sin(-angle);
  const double kx = 2.0 * std::numbers::pi * style.frequency * std::cos(style.orientation) / s;
  const double ky = 2.0 * std::numbers::pi * style.frequency * std::sin(style.orientation) / s;
  const int64_t plane = size * size;
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      const double dx = (px - cx) / radius;
      const double dy = (py - cy) / radius;
      const bool fg_pixel = inside_shape(shape, ca * dx - sa * dy, sa * dx + ca * dy);
      const double t = 0.5 + 0.5 * std::sin(kx * px + ky * py + phase);
      mask[y * size + x] = fg_pixel;
      for (int c = 0; c < 3; ++c) {
        double v = fg_pixel ? fg[c] : style.color_a[c] + (style.color_b[c] - style.color_a[c]) * t;
        v += style.noise * rng.normal();
        image[c * plane + y * size + x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
}

}  // namespace

MultiDomainDataset generate_synth_dataset(const SynthSpec& spec, torch::Tensor* foreground_masks) {
  spec.validate();
  const auto styles = spec.resolved_styles();
  const int64_t size = spec.image_size;
  const int64_t n = spec.num_domains * spec.num_classes * spec.samples_per_domain_per_class;

  auto images = torch::empty({n, 3, size, size}, torch::kFloat32);
  auto masks = torch::empty({n, size, size}, torch::kBool);
  auto classes = torch::empty({n}, torch::kLong);
  auto domains = torch::empty({n}, torch::kLong);
  float* img = images.data_ptr<float>();
  bool* msk = masks.data_ptr<bool>();
  int64_t* cls = classes.data_ptr<int64_t>();
  int64_t* dom = domains.data_ptr<int64_t>();

  int64_t row = 0;
  for (int64_t d = 0; d < spec.num_domains; ++d) {
    for (int64_t k = 0; k < spec.num_classes; ++k) {
      Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(d * 1000 + k)));
      for (int64_t i = 0; i < spec.samples_per_domain_per_class; ++i, ++row) {
        render_sample(styles[d], k, size, rng, img + row * 3 * size * size, msk + row * size * size);
        cls[row] = k;
        dom[row] = d;
      }
    }
  }

  MultiDomainDataset ds;
  ds.images = images;
  ds.class_labels = classes;
  ds.domain_labels = domains;
  ds.sample_ids = torch::arange(n, torch::kLong);
  ds.num_classes = spec.num_classes;
  for (int64_t d = 0; d < spec.num_domains; ++d) ds.domain_names.push_back("d" + std::to_string(d));
  ds.class_names.assign(synth_shape_names().begin(), synth_shape_names().begin() + spec.num_classes);
  ds.name = "synth";
  if (foreground_masks != nullptr) *foreground_masks = masks;
  return ds;
}

ojson synth_spec_to_json(const SynthSpec& spec) {
  ojson styles = ojson::array();
  for (const auto& s : spec.resolved_styles()) {
    styles.push_back(ojson{{"color_a", s.color_a},
                           {"color_b", s.color_b},
                           {"frequency", s.frequency},
                           {"orientation", s.orientation},
                           {"noise", s.noise}});
  }
  return ojson{{"num_classes", spec.num_classes},
               {"num_domains", spec.num_domains},
               {"image_size", spec.image_size},
               {"samples_per_domain_per_class", spec.samples_per_domain_per_class},
               {"seed", spec.seed},
               {"domain_styles", styles}};
}

SynthSpec synth_spec_from_json(const ojson& value) {
  SynthSpec spec;
  try {
    spec.num_classes = value.at("num_classes").get<int64_t>();
    spec.num_domains = value.at("num_domains").get<int64_t>();
    spec.image_size = value.at("image_size").get<int64_t>();
    spec.samples_per_domain_per_class = value.at("samples_per_domain_per_class").get<int64_t>();
    spec.seed = value.at("seed").get<uint64_t>();
    if (value.contains("domain_styles")) {
      for (const auto& s : value["domain_styles"]) {
        DomainStyle style;
        style.color_a = s.at("color_a").get<std::array<double, 3>>();
        style.color_b = s.at("color_b").get<std::array<double, 3>>();
        style.frequency = s.at("frequency").get<double>();
        style.orientation = s.at("orientation").get<double>();
        style.noise = s.at("noise").get<double>();
        spec.domain_styles.push_back(style);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synth_spec", e.what());
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Folder layout

namespace {

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename().string().front() != '.') out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

torch::Tensor decode_image(const fs::path& file, int64_t image_size) {
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DatasetError("cannot decode image " + file.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat resized;
  cv::resize(rgb, resized, cv::Size(static_cast<int>(image_size), static_cast<int>(image_size)), 0, 0,
             cv::INTER_LINEAR);
  auto hwc = torch::from_blob(resized.data, {image_size, image_size, 3}, torch::kUInt8).clone();
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

}  // namespace

MultiDomainDataset load_folder_dataset(const fs::path& root, int64_t image_size) {
  if (image_size < 4 || image_size % 4 != 0) throw ConfigError("image_size", "must be >= 4 and divisible by 4");
  if (!fs::is_directory(root)) throw DatasetError("dataset root is not a directory: " + root.string());

  const auto domain_dirs = sorted_subdirs(root);
  if (domain_dirs.empty()) throw DatasetError("no domain folders under " + root.string());

  std::vector<std::string> class_names;
  for (const auto& domain_dir : domain_dirs) {
    const auto class_dirs = sorted_subdirs(domain_dir);
    if (class_dirs.empty()) throw DatasetError("empty domain folder " + domain_dir.string());
    for (const auto& c : class_dirs) class_names.push_back(c.filename().string());
  }
  std::sort(class_names.begin(), class_names.end());
  class_names.erase(std::unique(class_names.begin(), class_names.end()), class_names.end());

  std::vector<torch::Tensor> images;
  std::vector<int64_t> classes;
  std::vector<int64_t> domains;
  MultiDomainDataset ds;
  for (size_t d = 0; d < domain_dirs.size(); ++d) {
    ds.domain_names.push_back(domain_dirs[d].filename().string());
    for (const auto& class_dir : sorted_subdirs(domain_dirs[d])) {
      const auto files = sorted_files(class_dir);
      if (files.empty()) throw DatasetError("empty class folder " + class_dir.string());
      const auto label = std::find(class_names.begin(), class_names.end(), class_dir.filename().string()) -
                         class_names.begin();
      for (const auto& file : files) {
        images.push_back(decode_image(file, image_size));
        classes.push_back(label);
        domains.push_back(static_cast<int64_t>(d));
      }
    }
  }
  const auto n = static_cast<int64_t>(images.size());
  ds.images = torch::stack(images);
  ds.class_labels = torch::tensor(classes, torch::kLong);
  ds.domain_labels = torch::tensor(domains, torch::kLong);
  ds.sample_ids = torch::arange(n, torch::kLong);
  ds.num_classes = static_cast<int64_t>(class_names.size());
  ds.class_names = class_names;
  ds.name = root.filename().string();
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Cache

void save_dataset_cache(const MultiDomainDataset& dataset, const ojson& provenance, const fs::path& dir) {
  fs::create_directories(dir);
  torch::serialize::OutputArchive archive;
  archive.write("images", dataset.images);
  archive.write("class_labels", dataset.class_labels);
  archive.write("domain_labels", dataset.domain_labels);
  archive.write("sample_ids", dataset.sample_ids);
  archive.save_to((dir / "dataset.pt").string());

  ojson sidecar{{"name", dataset.name},
                {"num_classes", dataset.num_classes},
                {"domain_names", dataset.domain_names},
                {"class_names", dataset.class_names},
                {"num_samples", dataset.size()},
                {"provenance", provenance}};
  std::ofstream out(dir / "dataset.json");
  out << sidecar.dump(2) << "\n";
}

MultiDomainDataset load_dataset_cache(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw DatasetError("missing dataset.json in " + dir.string());
  ojson sidecar;
  try {
    sidecar = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("bad dataset.json in " + dir.string() + ": " + e.what());
  }
  MultiDomainDataset ds;
  torch::serialize::InputArchive archive;
  archive.load_from((dir / "dataset.pt").string());
  archive.read("images", ds.images);
  archive.read("class_labels", ds.class_labels);
  archive.read("domain_labels", ds.domain_labels);
  archive.read("sample_ids", ds.sample_ids);
  ds.name = sidecar.value("name", std::string("cache"));
  ds.num_classes = sidecar.at("num_classes").get<int64_t>();
  ds.domain_names = sidecar.at("domain_names").get<std::vector<std::string>>();
  ds.class_names = sidecar.at("class_names").get<std::vector<std::string>>();
  ds.validate();
  return ds;
}

MultiDomainDataset load_dataset(const fs::path& path, int64_t image_size) {
  if (fs::exists(path / "dataset.json")) return load_dataset_cache(path);
  return load_folder_dataset(path, image_size);
}

// ---------------------------------------------------------------------------
// Splits and batching

std::pair<MultiDomainDataset, MultiDomainDataset> split_holdout(const MultiDomainDataset& dataset, double fraction,
                                                                uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("val_fraction", "must lie in [0, 1)");
  const int64_t n = dataset.size();
  const int64_t* dom = dataset.domain_labels.data_ptr<int64_t>();
  const int64_t* cls = dataset.class_labels.data_ptr<int64_t>();

  std::map<std::pair<int64_t, int64_t>, std::vector<int64_t>> cells;  // (domain, class) -> rows
  for (int64_t i = 0; i < n; ++i) cells[{dom[i], cls[i]}].push_back(i);

  // Largest-remainder allocation: every cell gets the floor or ceil of its quota.
  const auto total_held = static_cast<int64_t>(std::llround(fraction * static_cast<double>(n)));
  struct Quota {
    std::pair<int64_t, int64_t> key;
    int64_t count;
    double remainder;
  };
  std::vector<Quota> quotas;
  int64_t assigned = 0;
  for (const auto& [key, rows] : cells) {
    const double exact = fraction * static_cast<double>(rows.size());
    const auto base = static_cast<int64_t>(std::floor(exact));
    quotas.push_back({key, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::stable_sort(quotas.begin(), quotas.end(),
                   [](const Quota& a, const Quota& b) { return a.remainder > b.remainder; });
  for (auto& q : quotas) {
    if (assigned >= total_held) break;
    if (q.remainder > 0.0) {
      ++q.count;
      ++assigned;
    }
  }
  std::map<std::pair<int64_t, int64_t>, int64_t> take;
  for (const auto& q : quotas) take[q.key] = q.count;

  std::vector<int64_t> kept_rows;
  std::vector<int64_t> held_rows;
  Rng rng(mix_seed(seed, 0x5eedULL));
  for (auto& [key, rows] : cells) {
    auto shuffled = rows;
    rng.shuffle(shuffled);
    const auto k = static_cast<std::ptrdiff_t>(take[key]);
    held_rows.insert(held_rows.end(), shuffled.begin(), shuffled.begin() + k);
    kept_rows.insert(kept_rows.end(), shuffled.begin() + k, shuffled.end());
  }
  std::sort(kept_rows.begin(), kept_rows.end());
  std::sort(held_rows.begin(), held_rows.end());
  auto as_tensor = [](const std::vector<int64_t>& rows) {
    return rows.empty() ? torch::empty({0}, torch::kLong) : torch::tensor(rows, torch::kLong);
  };
  return {dataset.subset(as_tensor(kept_rows)), dataset.subset(as_tensor(held_rows))};
}

DataSplits make_splits(const MultiDomainDataset& dataset, const SplitSpec& spec) {
  const int64_t target = dataset.domain_index(spec.target_domain);
  if (!(spec.val_fraction >= 0.0 && spec.val_fraction < 0.5)) {
    throw ConfigError("val_fraction", "must lie in [0, 0.5)");
  }
  auto is_target = dataset.domain_labels.eq(target);
  auto test_rows = torch::nonzero(is_target).flatten();
  auto source_rows = torch::nonzero(is_target.logical_not()).flatten();
  if (test_rows.numel() == 0) throw ValidationError("target domain '" + spec.target_domain + "' has no samples");

  DataSplits out;
  auto [train, val] = split_holdout(dataset.subset(source_rows), spec.val_fraction, spec.seed);
  out.train = std::move(train);
  out.val = std::move(val);
  out.test = dataset.subset(test_rows);
  return out;
}

BatchIterator::BatchIterator(const MultiDomainDataset& split, int64_t batch_size, uint64_t seed, int64_t epoch)
    : split_(&split), batch_size_(batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  order_.resize(static_cast<size_t>(split.size()));
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int64_t>(i);
  Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
  rng.shuffle(order_);
}

int64_t BatchIterator::num_batches() const {
  return (static_cast<int64_t>(order_.size()) + batch_size_ - 1) / batch_size_;
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const size_t end = std::min(order_.size(), cursor_ + static_cast<size_t>(batch_size_));
  auto rows = torch::tensor(std::vector<int64_t>(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                                 order_.begin() + static_cast<std::ptrdiff_t>(end)),
                            torch::kLong);
  cursor_ = end;
  batch.images = split_->images.index_select(0, rows);
  batch.class_labels = split_->class_labels.index_select(0, rows);
  batch.domain_labels = split_->domain_labels.index_select(0, rows);
  batch.sample_ids = split_->sample_ids.index_select(0, rows);
  return true;
}

}  // namespace nasood
