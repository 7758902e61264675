#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "dfd/image.hpp"
#include "dfd/tensor.hpp"

namespace dfd {

class DataError : public Error {
 public:
  using Error::Error;
};

enum class Split { train, val, test };
inline constexpr std::array<Split, 3> kSplits{Split::train, Split::val, Split::test};

std::string_view to_string(Split split);
/// Accepts train, val, valid, test.
Split parse_split(std::string_view name);

inline constexpr int kReal = 0;
inline constexpr int kFake = 1;

struct Record {
  std::filesystem::path path;
  int label = kReal;
  std::optional<Split> split;

  bool operator==(const Record&) const = default;
};

struct DatasetIndex {
  std::vector<Record> records;
  std::uint64_t seed = 0;

  std::vector<Record> of(Split split) const;
  std::size_t count(Split split, int label) const;
  std::size_t count_label(int label) const;
  bool is_split() const;

  bool operator==(const DatasetIndex&) const = default;
};

/// Indexes `<root>/{real,fake}` or `<root>/{train,val|valid,test}/{real,fake}`.
/// Files with .png/.jpg/.jpeg extensions are records, sorted by path. Other
/// directories are rejected; loose files at the root are ignored.
DatasetIndex scan_directory(const std::filesystem::path& root);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  /// Throws std::invalid_argument unless each fraction is in [0, 1] and the
  /// sum is 1 within 1e-9.
  void validate() const;
};

/// Stratified split. Per class: val and test receive floor(n * fraction)
/// items after a seeded shuffle, train takes the rest. Record order is kept.
DatasetIndex split_dataset(const DatasetIndex& index, const SplitFractions& fractions,
                           std::uint64_t seed);

/// `path<TAB>label<TAB>split` lines; paths are written relative to the
/// manifest's directory with '/' separators.
void write_manifest(const DatasetIndex& index, const std::filesystem::path& manifest);
DatasetIndex read_manifest(const std::filesystem::path& manifest);

// --- loading -------------------------------------------------------------------

struct Batch {
  Tensor images;  // [B, 3, H, W], values in [0, 1]
  Tensor labels;  // [B]
  std::vector<std::filesystem::path> paths;

  std::size_t size() const { return paths.size(); }
};

/// Decodes, resizes (bilinear) and scales by 1/255 into [3, height, width].
Planar load_planar(const std::filesystem::path& path, std::size_t height, std::size_t width);

struct LoaderOptions {
  std::size_t batch_size = 16;
  std::size_t height = 224;
  std::size_t width = 224;
  bool shuffle = true;
};

class BatchStream;

/// Fixed list of records. Each epoch yields ceil(n / batch_size) batches, the
/// last possibly short. Decoding happens lazily per batch; a file that fails
/// to decode raises DataError naming the path.
class Loader {
 public:
  Loader(std::vector<Record> records, LoaderOptions options);

  std::size_t size() const { return records_.size(); }
  std::size_t batch_count() const;
  const LoaderOptions& options() const { return options_; }
  const std::vector<Record>& records() const { return records_; }

  /// Order is a seeded permutation when options.shuffle, else record order.
  BatchStream epoch(std::uint64_t shuffle_seed) const;

 private:
  std::vector<Record> records_;
  LoaderOptions options_;
};

class BatchStream {
 public:
  /// Fills `batch` and returns true, or returns false when exhausted.
  bool next(Batch& batch);
  std::size_t ordinal() const { return cursor_ / batch_size_; }

 private:
  friend class Loader;
  BatchStream(const Loader& loader, std::vector<std::size_t> order);

  const Loader* loader_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

// --- augmentation -----------------------------------------------------------------

enum class AugmentKind { none, basic, rand_augment, auto_lite, combined };

std::string_view to_string(AugmentKind kind);
AugmentKind parse_augment_kind(std::string_view name);

/// basic: random rotation in +-rotation_degrees, scale in
///   [scale_min, scale_max], horizontal flip with flip_probability.
/// rand_augment: n_ops operations drawn uniformly (with replacement) from
///   {rotate, translate_x, translate_y, scale, contrast, brightness, hflip},
///   each at `magnitude` on a 0-10 scale with a random sign.
/// auto_lite: one of five fixed two-step sub-policies per image.
/// combined: basic followed by rand_augment.
struct AugmentPolicy {
  AugmentKind kind = AugmentKind::none;
  std::size_t n_ops = 2;
  double magnitude = 9.0;
  double rotation_degrees = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double flip_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Same shapes and labels; values clamped to [0, 1]. Image i of the batch is
/// transformed with a stream seeded by (policy.seed, batch_ordinal, i).
Batch augment(const Batch& batch, const AugmentPolicy& policy, std::uint64_t batch_ordinal);

// Single-image transforms, exposed for testing. Sampling is bilinear and
// positions outside the source read as 0.
Planar hflip(const Planar& image);
/// Rotation (degrees, counter-clockwise), isotropic scale and translation
/// (pixels) about the image center.
Planar affine(const Planar& image, double degrees, double scale, double shift_x, double shift_y);
/// Blend toward the mean luma: mean + factor * (x - mean).
Planar adjust_contrast(const Planar& image, double factor);
Planar adjust_brightness(const Planar& image, double factor);

// --- histograms -------------------------------------------------------------------

struct HistogramReport {
  std::array<std::array<double, 256>, 3> histograms{};  // indexed by Split
  std::array<std::size_t, 3> image_counts{};
  // L1 distances: train-val, train-test, val-test.
  double train_val = 0;
  double train_test = 0;
  double val_test = 0;
  double threshold = 0.1;

  double max_distance() const;
  bool divergent() const { return max_distance() > threshold; }
};

/// Luma (0.299 R + 0.587 G + 0.114 B) of every 8-bit pixel rounded into 256
/// bins, normalized per split.
std::array<double, 256> luma_histogram(const std::vector<Image>& images);
double l1_distance(const std::array<double, 256>& a, const std::array<double, 256>& b);
HistogramReport histogram_check(const DatasetIndex& index, double threshold = 0.1);

// --- synthetic data ------------------------------------------------------------------

struct SynthOptions {
  std::size_t n_per_class = 200;
  std::size_t size = 32;
  double noise_level = 0.05;
  std::uint64_t seed = 1;
  double artifact_amplitude = 0.12;
};

/// Noise-free class template in [0, 1]: a per-channel horizontal gradient,
/// plus a +-artifact_amplitude checkerboard for the fake class.
Planar synth_template(int label, std::size_t size, double artifact_amplitude = 0.12);

/// Writes `<root>/real/real_NNNN.png` and `<root>/fake/fake_NNNN.png`.
/// Returns the per-class counts written.
std::array<std::size_t, 2> synth_dataset(const std::filesystem::path& root, const SynthOptions& options);

}  // namespace dfd
