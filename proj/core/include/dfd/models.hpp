#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dfd/layers.hpp"
#include "dfd/tensor.hpp"

namespace dfd {

enum class ModelKind { dfcnet, vfdnet, resnet, mobilenetv3 };
enum class Scale { paper, desk };
enum class Mode { training, inference };

std::string_view to_string(ModelKind kind);
std::string_view to_string(Scale scale);
/// Throws std::invalid_argument on an unknown name.
ModelKind parse_model_kind(std::string_view name);
Scale parse_scale(std::string_view name);

/// Architecture descriptor. Fields that do not apply to `kind` are ignored.
struct ModelConfig {
  ModelKind kind = ModelKind::dfcnet;
  Scale scale = Scale::desk;
  std::size_t height = 32;
  std::size_t width = 32;

  // dfcnet: the three conv widths. resnet: per-stage widths (bottleneck stages
  // output 4x this).
  std::vector<std::size_t> widths{8, 16, 32};
  std::vector<std::size_t> blocks{2, 2, 2};  // resnet blocks per stage
  std::size_t kernel = 3;
  std::size_t dense_units = 256;
  double dropout = 0.25;

  // vfdnet
  std::size_t patch = 4;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t expansion = 4;

  static ModelConfig defaults(ModelKind kind, Scale scale);

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;

  /// `key = value` lines, one per field, in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  /// Sets one field from its text form; throws std::invalid_argument on an
  /// unknown key or malformed value.
  void set(std::string_view key, std::string_view value);
  static bool is_key(std::string_view key);

  std::size_t patch_count() const { return (height / patch) * (width / patch); }

  bool operator==(const ModelConfig&) const = default;
};

/// Named tensors of a model. Trainable parameters and non-trainable buffers
/// (batch-norm running statistics) share one ordered namespace.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };

  void add(std::string name, const Tensor& tensor);
  void add_buffer(std::string name, const Tensor& tensor);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> trainable() const;
  std::optional<Tensor> find(std::string_view name) const;
  /// Element count over trainable entries.
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  void insert(std::string name, const Tensor& tensor, bool trainable);
  std::vector<Entry> entries_;
};

// --- building blocks ---------------------------------------------------------

/// Convolution without bias followed by batch normalization.
struct ConvBn {
  Conv2dParams<float> conv;
  BatchNormParams<float> bn;

  static ConvBn make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     Rng& rng);
  static ConvBn make_depthwise(std::size_t channels, std::size_t kernel, std::size_t stride,
                               Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) const;
  void register_params(ParameterStore& store, const std::string& prefix) const;
};

/// ResNet unit: relu(branch(x) + shortcut(x)). The branch is two 3x3 ConvBn
/// (basic) or 1x1-3x3-1x1 (bottleneck); the shortcut is the identity unless
/// the stride or width changes, in which case it is a 1x1 ConvBn projection.
struct ResidualBlock {
  std::vector<ConvBn> branch;
  std::optional<ConvBn> shortcut;

  static ResidualBlock basic(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  static ResidualBlock bottleneck(std::size_t in, std::size_t mid, std::size_t out,
                                  std::size_t stride, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) const;
  void register_params(ParameterStore& store, const std::string& prefix) const;
};

/// Channel gate: x * sigmoid(expand(relu(reduce(avgpool(x))))).
struct SqueezeExcite {
  DenseParams<float> reduce;
  DenseParams<float> expand;

  static SqueezeExcite make(std::size_t channels, std::size_t squeezed, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void register_params(ParameterStore& store, const std::string& prefix) const;
};

/// MobileNetV3 bottleneck: expand (1x1) -> depthwise -> squeeze-excite ->
/// project (1x1, linear), plus the input when stride is 1 and widths match.
struct InvertedResidual {
  std::optional<ConvBn> expand;
  ConvBn depthwise;
  std::optional<SqueezeExcite> se;
  ConvBn project;
  Activation act;
  bool residual = false;

  static InvertedResidual make(std::size_t in, std::size_t expanded, std::size_t out,
                               std::size_t kernel, std::size_t stride, bool use_se,
                               ActivationKind act, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode) const;
  void register_params(ParameterStore& store, const std::string& prefix) const;
  std::size_t weight_layers() const { return (expand ? 1 : 0) + 2; }
};

/// Pre-norm transformer block:
///   q = h + MSA(LN(h));  out = q + FFN(LN(q))
struct EncoderBlock {
  LayerNormParams<float> attn_norm;
  AttentionParams<float> attn;
  LayerNormParams<float> ffn_norm;
  FfnParams<float> mlp;

  static EncoderBlock make(std::size_t embed_dim, std::size_t heads, std::size_t expansion,
                           Rng& rng);
  Tensor forward(const Tensor& h) const;
  void register_params(ParameterStore& store, const std::string& prefix) const;
};

// --- models --------------------------------------------------------------------

class Network {
 public:
  virtual ~Network() = default;
  /// Pre-sigmoid scores [B, 1].
  virtual Tensor logits(const Tensor& images, Mode mode, std::uint64_t dropout_seed) const = 0;
  /// Convolution and dense layers on the main path (projection shortcuts and
  /// squeeze-excite gates excluded).
  virtual std::size_t weight_layers() const = 0;
};

class Model {
 public:
  Model(ModelConfig config, std::shared_ptr<const Network> network, ParameterStore store);

  const ModelConfig& config() const { return config_; }
  const Network& network() const { return *network_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Probability of the fake class, [B, 1] with entries strictly in (0, 1).
  /// Training mode enables dropout (seeded by dropout_seed) and batch
  /// statistics; inference mode is deterministic.
  Tensor forward(const Tensor& images, Mode mode, std::uint64_t dropout_seed = 0) const;

  std::size_t count_params() const { return store_.parameter_count(); }
  std::size_t weight_layers() const { return network_ ? network_->weight_layers() : 0; }

  /// Copies of every tensor's values, in registry order.
  std::vector<std::vector<float>> state() const;
  void load_state(const std::vector<std::vector<float>>& state);

 private:
  ModelConfig config_;
  std::shared_ptr<const Network> network_;
  ParameterStore store_;
};

/// conv -> ReLU -> 2x2 maxpool -> dropout, three times; flatten; dense
/// (dense_units, ReLU); dense(1); sigmoid. Same-padded convolutions.
Model build_dfcnet(const ModelConfig& config, std::uint64_t seed);
/// Patch tokens + class token + position embedding through `depth` encoder
/// blocks; the final class token feeds a dense(1) sigmoid head.
Model build_vfdnet(const ModelConfig& config, std::uint64_t seed);
/// Paper scale: ResNet-50 bottleneck layout. Desk scale: basic blocks with
/// config.widths / config.blocks.
Model build_resnet(const ModelConfig& config, std::uint64_t seed);
/// Paper scale: MobileNetV3-Small layout. Desk scale: a five-block variant for
/// 32x32 inputs.
Model build_mobilenetv3(const ModelConfig& config, std::uint64_t seed);
Model build_model(const ModelConfig& config, std::uint64_t seed);

// --- checkpoints -------------------------------------------------------------------

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Binary container, little-endian throughout:
///   magic "DFDCKPT\0", u32 format version,
///   u32 length + model kind name,
///   u32 length + ModelConfig::to_text(),
///   u32 record count, then per record:
///     u32 length + name, u8 flags (1 = trainable), u32 rank, u64 extents[rank],
///     float32 values.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
/// Throws CheckpointError on a malformed file or a record whose name or shape
/// disagrees with the model rebuilt from the stored config.
Model load_checkpoint(const std::filesystem::path& path);
Model deserialize_checkpoint(std::span<const std::uint8_t> bytes);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace dfd
