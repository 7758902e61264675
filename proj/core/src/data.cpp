#include "dfd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace dfd {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val" || name == "valid") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::vector<Record> DatasetIndex::of(Split split) const {
  std::vector<Record> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

std::size_t DatasetIndex::count(Split split, int label) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const Record& r) {
    return r.split == split && r.label == label;
  }));
}

std::size_t DatasetIndex::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const Record& r) { return r.label == label; }));
}

bool DatasetIndex::is_split() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const Record& r) { return r.split.has_value(); });
}

// --- scanning ----------------------------------------------------------------------

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.empty() || name.front() == '.') continue;
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });
  return out;
}

int class_label(const fs::path& dir) {
  const auto name = dir.filename().string();
  if (name == "real") return kReal;
  if (name == "fake") return kFake;
  throw DataError("unknown class directory '" + dir.generic_string() + "' (expected real or fake)");
}

void scan_classes(const fs::path& dir, std::optional<Split> split, std::vector<Record>& out) {
  for (const auto& class_dir : sorted_entries(dir, true)) {
    const int label = class_label(class_dir);
    for (const auto& file : sorted_entries(class_dir, false))
      if (is_image_file(file)) out.push_back({file, label, split});
  }
}

}  // namespace

DatasetIndex scan_directory(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  const auto subdirs = sorted_entries(root, true);
  const bool split_tree = !subdirs.empty() && std::all_of(subdirs.begin(), subdirs.end(), [](const fs::path& p) {
    const auto n = p.filename().string();
    return n == "train" || n == "val" || n == "valid" || n == "test";
  });

  DatasetIndex index;
  if (split_tree) {
    for (const auto& d : subdirs) scan_classes(d, parse_split(d.filename().string()), index.records);
  } else {
    scan_classes(root, std::nullopt, index.records);
  }
  if (index.records.empty()) throw DataError("empty dataset: no images under " + root.string());
  std::stable_sort(index.records.begin(), index.records.end(), [](const Record& a, const Record& b) {
    return a.path.generic_string() < b.path.generic_string();
  });
  return index;
}

// --- splitting --------------------------------------------------------------------------

void SplitFractions::validate() const {
  for (double f : {train, val, test})
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("split fractions must lie in [0, 1]");
  if (std::abs(train + val + test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

DatasetIndex split_dataset(const DatasetIndex& index, const SplitFractions& fractions,
                           std::uint64_t seed) {
  fractions.validate();
  DatasetIndex out = index;
  out.seed = seed;
  for (int label : {kReal, kFake}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.records.size(); ++i)
      if (out.records[i].label == label) members.push_back(i);
    const std::size_t n = members.size();
    const auto take = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
    const std::size_t n_val = take(fractions.val);
    const std::size_t n_test = take(fractions.test);
    const std::size_t n_train = n - n_val - n_test;
    const char* name = label == kReal ? "real" : "fake";
    auto starve = [&](std::string_view split) {
      throw DataError(std::string("class starvation: split '") + std::string(split) + "' gets no " + name +
                      " images (" + std::to_string(n) + " available)");
    };
    if (fractions.train > 0 && n_train == 0) starve("train");
    if (fractions.val > 0 && n_val == 0) starve("val");
    if (fractions.test > 0 && n_test == 0) starve("test");

    const auto order = permutation(n, derive_seed(seed, label == kReal ? "split/real" : "split/fake"));
    for (std::size_t k = 0; k < n; ++k) {
      auto& r = out.records[members[order[k]]];
      r.split = k < n_val ? Split::val : k < n_val + n_test ? Split::test : Split::train;
    }
  }
  return out;
}

// --- manifest ----------------------------------------------------------------------------

void write_manifest(const DatasetIndex& index, const fs::path& manifest) {
  const auto base = fs::absolute(manifest).parent_path().lexically_normal();
  std::ostringstream os;
  for (const auto& r : index.records) {
    if (!r.split) throw DataError("write_manifest: record without a split: " + r.path.string());
    const auto rel = fs::absolute(r.path).lexically_normal().lexically_relative(base);
    os << rel.generic_string() << '\t' << r.label << '\t' << to_string(*r.split) << '\n';
  }
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  out << os.str();
}

DatasetIndex read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  DatasetIndex index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto bad = [&](const std::string& why) {
      return DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw bad("expected path<TAB>label<TAB>split");
    const auto label = line.substr(t1 + 1, t2 - t1 - 1);
    if (label != "0" && label != "1") throw bad("label must be 0 or 1, got '" + label + "'");
    Record r;
    r.path = fs::path(line.substr(0, t1));
    if (r.path.is_relative()) r.path = base / r.path;
    r.label = label == "1" ? kFake : kReal;
    try {
      r.split = parse_split(line.substr(t2 + 1));
    } catch (const std::invalid_argument& e) {
      throw bad(e.what());
    }
    index.records.push_back(std::move(r));
  }
  if (index.records.empty()) throw DataError("manifest " + manifest.string() + " has no records");
  return index;
}

// --- loading ------------------------------------------------------------------------------

Planar load_planar(const fs::path& path, std::size_t height, std::size_t width) {
  return resize_bilinear(to_planar(read_image(path)), height, width);
}

Loader::Loader(std::vector<Record> records, LoaderOptions options)
    : records_(std::move(records)), options_(options) {
  if (records_.empty()) throw DataError("loader: empty split");
  if (options_.batch_size == 0) throw std::invalid_argument("loader: batch size must be positive");
  if (options_.height == 0 || options_.width == 0) throw std::invalid_argument("loader: empty target size");
}

std::size_t Loader::batch_count() const {
  return (records_.size() + options_.batch_size - 1) / options_.batch_size;
}

BatchStream Loader::epoch(std::uint64_t shuffle_seed) const {
  std::vector<std::size_t> order;
  if (options_.shuffle) {
    order = permutation(records_.size(), shuffle_seed);
  } else {
    order.resize(records_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  }
  return BatchStream(*this, std::move(order));
}

BatchStream::BatchStream(const Loader& loader, std::vector<std::size_t> order)
    : loader_(&loader), order_(std::move(order)), batch_size_(loader.options().batch_size) {}

bool BatchStream::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const auto& opt = loader_->options();
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  const std::size_t plane = 3 * opt.height * opt.width;
  std::vector<float> images(n * plane);
  std::vector<float> labels(n);
  batch.paths.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = loader_->records()[order_[cursor_ + i]];
    Planar p;
    try {
      p = load_planar(r.path, opt.height, opt.width);
    } catch (const Error& e) {
      throw DataError("batch aborted: " + std::string(e.what()));
    }
    std::copy(p.values.begin(), p.values.end(), images.begin() + static_cast<std::ptrdiff_t>(i * plane));
    labels[i] = static_cast<float>(r.label);
    batch.paths.push_back(r.path);
  }
  batch.images = Tensor::from_values({n, 3, opt.height, opt.width}, std::move(images));
  batch.labels = Tensor::from_values({n}, std::move(labels));
  cursor_ += n;
  return true;
}

// --- augmentation -----------------------------------------------------------------------------

std::string_view to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::none: return "none";
    case AugmentKind::basic: return "basic";
    case AugmentKind::rand_augment: return "rand_augment";
    case AugmentKind::auto_lite: return "auto_lite";
    case AugmentKind::combined: return "combined";
  }
  return "unknown";
}

AugmentKind parse_augment_kind(std::string_view name) {
  for (auto k : {AugmentKind::none, AugmentKind::basic, AugmentKind::rand_augment, AugmentKind::auto_lite,
                 AugmentKind::combined})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown augment policy '" + std::string(name) + "'");
}

void AugmentPolicy::validate() const {
  if (!(magnitude >= 0.0 && magnitude <= 10.0)) throw std::invalid_argument("augment: magnitude must be in [0, 10]");
  if (!(rotation_degrees >= 0.0)) throw std::invalid_argument("augment: rotation range must be >= 0");
  if (!(scale_min > 0.0 && scale_min <= scale_max))
    throw std::invalid_argument("augment: scale range must satisfy 0 < min <= max");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
    throw std::invalid_argument("augment: flip probability must be in [0, 1]");
}

Planar hflip(const Planar& image) {
  Planar out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Planar affine(const Planar& image, double degrees, double scale, double shift_x, double shift_y) {
  if (!(scale > 0.0)) throw DomainError("affine: scale must be positive");
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (static_cast<double>(image.width) - 1) / 2;
  const double cy = (static_cast<double>(image.height) - 1) / 2;
  const auto w = static_cast<std::ptrdiff_t>(image.width);
  const auto h = static_cast<std::ptrdiff_t>(image.height);

  Planar out{image.channels, image.height, image.width, std::vector<float>(image.values.size(), 0.0f)};
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) - cx - shift_x;
      const double dy = static_cast<double>(y) - cy - shift_y;
      const double sx = (cs * dx + sn * dy) / scale + cx;
      const double sy = (-sn * dx + cs * dy) / scale + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const auto x0 = static_cast<std::ptrdiff_t>(fx0);
      const auto y0 = static_cast<std::ptrdiff_t>(fy0);
      const double ax = sx - fx0, ay = sy - fy0;
      for (std::size_t c = 0; c < image.channels; ++c) {
        auto px = [&](std::ptrdiff_t xx, std::ptrdiff_t yy) -> double {
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
          return image.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        };
        const double v = (px(x0, y0) * (1 - ax) + px(x0 + 1, y0) * ax) * (1 - ay) +
                         (px(x0, y0 + 1) * (1 - ax) + px(x0 + 1, y0 + 1) * ax) * ay;
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  return out;
}

namespace {

void clamp_unit(Planar& p) {
  for (auto& v : p.values) v = std::clamp(v, 0.0f, 1.0f);
}

double mean_luma(const Planar& image) {
  if (image.channels != 3) throw ShapeError("mean_luma: expected 3 channels");
  double sum = 0;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      sum += 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
  return sum / static_cast<double>(image.height * image.width);
}

}  // namespace

Planar adjust_contrast(const Planar& image, double factor) {
  const double mean = mean_luma(image);
  Planar out = image;
  for (auto& v : out.values) v = static_cast<float>(mean + factor * (v - mean));
  clamp_unit(out);
  return out;
}

Planar adjust_brightness(const Planar& image, double factor) {
  Planar out = image;
  for (auto& v : out.values) v = static_cast<float>(v * factor);
  clamp_unit(out);
  return out;
}

namespace {

enum class Op { rotate, translate_x, translate_y, scale, contrast, brightness, flip };
constexpr Op kMenu[] = {Op::rotate, Op::translate_x, Op::translate_y, Op::scale,
                        Op::contrast, Op::brightness, Op::flip};

// Magnitude m on the 0-10 scale maps to these extremes at m = 10.
constexpr double kMaxRotate = 30.0;      // degrees
constexpr double kMaxTranslate = 0.3;    // fraction of the image extent
constexpr double kMaxScale = 0.3;        // relative
constexpr double kMaxEnhance = 0.9;      // contrast / brightness factor offset

Planar apply_op(const Planar& img, Op op, double magnitude, Rng& rng) {
  const double level = magnitude / 10.0;
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  switch (op) {
    case Op::rotate: return affine(img, sign * kMaxRotate * level, 1.0, 0, 0);
    case Op::translate_x:
      return affine(img, 0, 1.0, sign * kMaxTranslate * level * static_cast<double>(img.width), 0);
    case Op::translate_y:
      return affine(img, 0, 1.0, 0, sign * kMaxTranslate * level * static_cast<double>(img.height));
    case Op::scale: return affine(img, 0, 1.0 + sign * kMaxScale * level, 0, 0);
    case Op::contrast: return adjust_contrast(img, 1.0 + sign * kMaxEnhance * level);
    case Op::brightness: return adjust_brightness(img, 1.0 + sign * kMaxEnhance * level);
    case Op::flip: return hflip(img);
  }
  return img;
}

struct SubPolicyStep {
  Op op;
  double probability;
  double magnitude;
};

constexpr SubPolicyStep kAutoLite[][2] = {
    {{Op::contrast, 0.6, 5}, {Op::brightness, 0.6, 4}},
    {{Op::rotate, 0.7, 3}, {Op::translate_x, 0.5, 4}},
    {{Op::brightness, 0.5, 6}, {Op::rotate, 0.4, 5}},
    {{Op::translate_y, 0.6, 3}, {Op::contrast, 0.5, 6}},
    {{Op::flip, 0.5, 0}, {Op::rotate, 0.3, 2}},
};

Planar basic(const Planar& img, const AugmentPolicy& p, Rng& rng) {
  const double degrees = rng.uniform(-p.rotation_degrees, p.rotation_degrees);
  const double scale = rng.uniform(p.scale_min, p.scale_max);
  const bool flip = rng.uniform() < p.flip_probability;
  Planar out = affine(img, degrees, scale, 0, 0);
  return flip ? hflip(out) : out;
}

Planar rand_augment(Planar img, const AugmentPolicy& p, Rng& rng) {
  for (std::size_t k = 0; k < p.n_ops; ++k) img = apply_op(img, kMenu[rng.below(std::size(kMenu))], p.magnitude, rng);
  return img;
}

Planar auto_lite(Planar img, Rng& rng) {
  const auto& sub = kAutoLite[rng.below(std::size(kAutoLite))];
  for (const auto& step : sub)
    if (rng.uniform() < step.probability) img = apply_op(img, step.op, step.magnitude, rng);
  return img;
}

}  // namespace

Batch augment(const Batch& batch, const AugmentPolicy& policy, std::uint64_t batch_ordinal) {
  policy.validate();
  if (policy.kind == AugmentKind::none) return batch;
  const auto& shape = batch.images.shape();
  if (shape.size() != 4 || shape[1] != 3) throw ShapeError("augment: expected [B,3,H,W] images");
  const std::size_t plane = shape[1] * shape[2] * shape[3];
  std::vector<float> values = batch.images.values();
  const std::uint64_t batch_seed = derive_seed(policy.seed, batch_ordinal);
  for (std::size_t i = 0; i < shape[0]; ++i) {
    Rng rng(derive_seed(batch_seed, i));
    const auto begin = values.begin() + static_cast<std::ptrdiff_t>(i * plane);
    Planar img{3, shape[2], shape[3], std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(plane))};
    switch (policy.kind) {
      case AugmentKind::none: break;
      case AugmentKind::basic: img = basic(img, policy, rng); break;
      case AugmentKind::rand_augment: img = rand_augment(std::move(img), policy, rng); break;
      case AugmentKind::auto_lite: img = auto_lite(std::move(img), rng); break;
      case AugmentKind::combined: img = rand_augment(basic(img, policy, rng), policy, rng); break;
    }
    clamp_unit(img);
    std::copy(img.values.begin(), img.values.end(), begin);
  }
  Batch out = batch;
  out.images = Tensor::from_values(shape, std::move(values));
  return out;
}

// --- histograms ------------------------------------------------------------------------------

double HistogramReport::max_distance() const { return std::max({train_val, train_test, val_test}); }

std::array<double, 256> luma_histogram(const std::vector<Image>& images) {
  std::array<double, 256> hist{};
  std::size_t total = 0;
  for (const auto& img : images) {
    for (std::size_t i = 0; i + 2 < img.pixels.size(); i += 3) {
      const double luma = 0.299 * img.pixels[i] + 0.587 * img.pixels[i + 1] + 0.114 * img.pixels[i + 2];
      hist[std::min<std::size_t>(255, static_cast<std::size_t>(std::lround(luma)))] += 1;
    }
    total += img.width * img.height;
  }
  if (total == 0) throw DataError("luma_histogram: no pixels");
  for (auto& h : hist) h /= static_cast<double>(total);
  return hist;
}

double l1_distance(const std::array<double, 256>& a, const std::array<double, 256>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

HistogramReport histogram_check(const DatasetIndex& index, double threshold) {
  HistogramReport report;
  report.threshold = threshold;
  for (auto split : kSplits) {
    std::vector<Image> images;
    for (const auto& r : index.of(split)) images.push_back(read_image(r.path));
    if (images.empty()) throw DataError("histogram_check: split '" + std::string(to_string(split)) + "' is empty");
    const auto s = static_cast<std::size_t>(split);
    report.image_counts[s] = images.size();
    report.histograms[s] = luma_histogram(images);
  }
  report.train_val = l1_distance(report.histograms[0], report.histograms[1]);
  report.train_test = l1_distance(report.histograms[0], report.histograms[2]);
  report.val_test = l1_distance(report.histograms[1], report.histograms[2]);
  return report;
}

// --- synthetic data ----------------------------------------------------------------------------

Planar synth_template(int label, std::size_t size, double artifact_amplitude) {
  if (size < 8) throw std::invalid_argument("synthetic images must be at least 8x8");
  Planar p{3, size, size, std::vector<float>(3 * size * size)};
  constexpr double kStart[3] = {0.15, 0.25, 0.75};
  constexpr double kSlope[3] = {0.60, 0.40, -0.50};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double t = static_cast<double>(x) / static_cast<double>(size - 1);
        double v = kStart[c] + kSlope[c] * t;
        if (label == kFake) v += ((x + y) % 2 == 0 ? 1.0 : -1.0) * artifact_amplitude;
        p.at(c, y, x) = static_cast<float>(v);
      }
  return p;
}

std::array<std::size_t, 2> synth_dataset(const fs::path& root, const SynthOptions& options) {
  if (options.n_per_class == 0) throw std::invalid_argument("synth: empty class (n must be >= 1)");
  if (options.size < 8) throw std::invalid_argument("synth: size must be >= 8");
  if (!(options.noise_level >= 0.0)) throw std::invalid_argument("synth: noise level must be >= 0");

  const std::size_t digits = std::max<std::size_t>(4, std::to_string(options.n_per_class - 1).size());
  for (int label : {kReal, kFake}) {
    const std::string name = label == kReal ? "real" : "fake";
    const auto dir = root / name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    const Planar tmpl = synth_template(label, options.size, options.artifact_amplitude);
    const std::uint64_t class_seed = derive_seed(options.seed, name);
    for (std::size_t i = 0; i < options.n_per_class; ++i) {
      Rng rng(derive_seed(class_seed, i));
      Planar img = tmpl;
      if (options.noise_level > 0)
        for (auto& v : img.values) v += static_cast<float>(rng.normal() * options.noise_level);
      auto id = std::to_string(i);
      id.insert(0, digits - id.size(), '0');
      write_png(dir / (name + "_" + id + ".png"), to_image(img));
    }
  }
  return {options.n_per_class, options.n_per_class};
}

}  // namespace dfd
