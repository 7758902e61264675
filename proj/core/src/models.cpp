#include "dfd/models.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

#include "dfd/ops.hpp"

namespace dfd {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::dfcnet: return "dfcnet";
    case ModelKind::vfdnet: return "vfdnet";
    case ModelKind::resnet: return "resnet";
    case ModelKind::mobilenetv3: return "mobilenetv3";
  }
  return "unknown";
}

std::string_view to_string(Scale scale) { return scale == Scale::paper ? "paper" : "desk"; }

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::dfcnet, ModelKind::vfdnet, ModelKind::resnet, ModelKind::mobilenetv3})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

Scale parse_scale(std::string_view name) {
  if (name == "paper") return Scale::paper;
  if (name == "desk") return Scale::desk;
  throw std::invalid_argument("unknown scale '" + std::string(name) + "'");
}

// --- ModelConfig -------------------------------------------------------------

ModelConfig ModelConfig::defaults(ModelKind kind, Scale scale) {
  ModelConfig c;
  c.kind = kind;
  c.scale = scale;
  const bool paper = scale == Scale::paper;
  c.height = c.width = paper ? 224 : 32;
  switch (kind) {
    case ModelKind::dfcnet:
      c.widths = paper ? std::vector<std::size_t>{32, 64, 128} : std::vector<std::size_t>{8, 16, 32};
      break;
    case ModelKind::vfdnet:
      c.patch = paper ? 16 : 4;
      c.embed_dim = paper ? 256 : 64;
      c.depth = paper ? 6 : 4;
      c.heads = paper ? 8 : 4;
      c.expansion = 4;
      break;
    case ModelKind::resnet:
      c.widths = paper ? std::vector<std::size_t>{64, 128, 256, 512}
                       : std::vector<std::size_t>{16, 32, 64};
      c.blocks = paper ? std::vector<std::size_t>{3, 4, 6, 3} : std::vector<std::size_t>{2, 2, 2};
      break;
    case ModelKind::mobilenetv3:
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (height == 0 || width == 0) fail("input size must be positive");
  switch (kind) {
    case ModelKind::dfcnet:
      if (widths.size() != 3) fail("dfcnet needs exactly three conv widths");
      if (height % 8 != 0 || width % 8 != 0)
        fail("dfcnet input must be divisible by 8 (three 2x2 pools)");
      if (kernel % 2 == 0) fail("dfcnet kernel must be odd");
      if (dense_units == 0) fail("dense_units must be positive");
      if (!(dropout >= 0.0) || dropout >= 1.0) fail("dropout must be in [0, 1)");
      break;
    case ModelKind::vfdnet:
      if (patch == 0 || height % patch != 0 || width % patch != 0)
        fail("input size must be divisible by the patch size");
      if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
        fail("embed_dim must be a positive multiple of heads");
      if (depth == 0) fail("depth must be positive");
      if (expansion == 0) fail("expansion rate must be positive");
      break;
    case ModelKind::resnet:
      if (widths.empty() || widths.size() != blocks.size())
        fail("resnet needs one width and one block count per stage");
      for (auto b : blocks)
        if (b == 0) fail("every resnet stage needs at least one block");
      break;
    case ModelKind::mobilenetv3:
      if (height < 32 || width < 32) fail("mobilenetv3 input must be at least 32x32");
      break;
  }
  for (auto w : widths)
    if (w == 0) fail("widths must be >= 1");
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  v = trim(v);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw std::invalid_argument("model config: '" + std::string(key) + "' expects an integer, got '" +
                                std::string(v) + "'");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0;
  v = trim(v);
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw std::invalid_argument("model config: '" + std::string(key) + "' expects a number, got '" +
                                std::string(v) + "'");
  return out;
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  v = trim(v);
  while (!v.empty()) {
    auto comma = v.find(',');
    out.push_back(parse_size(key, v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

constexpr std::string_view kConfigKeys[] = {
    "kind", "scale", "height", "width", "widths", "blocks", "kernel", "dense_units",
    "dropout", "patch", "embed_dim", "depth", "heads", "expansion"};

}  // namespace

bool ModelConfig::is_key(std::string_view key) {
  return std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) != std::end(kConfigKeys);
}

void ModelConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "kind") kind = parse_model_kind(value);
  else if (key == "scale") scale = parse_scale(value);
  else if (key == "height") height = parse_size(key, value);
  else if (key == "width") width = parse_size(key, value);
  else if (key == "widths") widths = parse_list(key, value);
  else if (key == "blocks") blocks = parse_list(key, value);
  else if (key == "kernel") kernel = parse_size(key, value);
  else if (key == "dense_units") dense_units = parse_size(key, value);
  else if (key == "dropout") dropout = parse_real(key, value);
  else if (key == "patch") patch = parse_size(key, value);
  else if (key == "embed_dim") embed_dim = parse_size(key, value);
  else if (key == "depth") depth = parse_size(key, value);
  else if (key == "heads") heads = parse_size(key, value);
  else if (key == "expansion") expansion = parse_size(key, value);
  else throw std::invalid_argument("model config: unknown key '" + std::string(key) + "'");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "kind = " << to_string(kind) << '\n'
     << "scale = " << to_string(scale) << '\n'
     << "height = " << height << '\n'
     << "width = " << width << '\n'
     << "widths = " << join(widths) << '\n'
     << "blocks = " << join(blocks) << '\n'
     << "kernel = " << kernel << '\n'
     << "dense_units = " << dense_units << '\n'
     << "dropout = " << format_real(dropout) << '\n'
     << "patch = " << patch << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "depth = " << depth << '\n'
     << "heads = " << heads << '\n'
     << "expansion = " << expansion << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("model config: expected 'key = value', got '" + std::string(line) + "'");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

// --- ParameterStore ------------------------------------------------------------

void ParameterStore::insert(std::string name, const Tensor& tensor, bool trainable) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), tensor, trainable});
}

void ParameterStore::add(std::string name, const Tensor& tensor) {
  insert(std::move(name), tensor, true);
}

void ParameterStore::add_buffer(std::string name, const Tensor& tensor) {
  insert(std::move(name), tensor, false);
}

std::vector<Tensor> ParameterStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

std::optional<Tensor> ParameterStore::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  return std::nullopt;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// --- blocks ----------------------------------------------------------------------

namespace {

void register_dense(ParameterStore& store, const std::string& prefix, const DenseParams<float>& d) {
  store.add(prefix + ".weight", d.weight);
  store.add(prefix + ".bias", d.bias);
}

void register_norm(ParameterStore& store, const std::string& prefix,
                   const LayerNormParams<float>& n) {
  store.add(prefix + ".gain", n.gain);
  store.add(prefix + ".offset", n.offset);
}

Tensor act(ActivationKind kind, const Tensor& x) { return activation<float>({kind}, x); }

}  // namespace

ConvBn ConvBn::make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                    Rng& rng) {
  return {make_conv2d<float>(in, out, kernel, stride, Padding::same, false, rng),
          make_batch_norm<float>(out)};
}

ConvBn ConvBn::make_depthwise(std::size_t channels, std::size_t kernel, std::size_t stride,
                              Rng& rng) {
  return {dfd::make_depthwise<float>(channels, kernel, stride, false, rng),
          make_batch_norm<float>(channels)};
}

Tensor ConvBn::forward(const Tensor& x, Mode mode) const {
  return batch_norm(conv2d(x, conv), bn, mode == Mode::training);
}

void ConvBn::register_params(ParameterStore& store, const std::string& prefix) const {
  store.add(prefix + ".conv.weight", conv.kernels);
  if (conv.bias) store.add(prefix + ".conv.bias", *conv.bias);
  store.add(prefix + ".bn.gamma", bn.gamma);
  store.add(prefix + ".bn.beta", bn.beta);
  store.add_buffer(prefix + ".bn.running_mean", bn.running_mean);
  store.add_buffer(prefix + ".bn.running_var", bn.running_var);
}

ResidualBlock ResidualBlock::basic(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
  ResidualBlock b;
  b.branch.push_back(ConvBn::make(in, out, 3, stride, rng));
  b.branch.push_back(ConvBn::make(out, out, 3, 1, rng));
  if (stride != 1 || in != out) b.shortcut = ConvBn::make(in, out, 1, stride, rng);
  return b;
}

ResidualBlock ResidualBlock::bottleneck(std::size_t in, std::size_t mid, std::size_t out,
                                        std::size_t stride, Rng& rng) {
  ResidualBlock b;
  b.branch.push_back(ConvBn::make(in, mid, 1, 1, rng));
  b.branch.push_back(ConvBn::make(mid, mid, 3, stride, rng));
  b.branch.push_back(ConvBn::make(mid, out, 1, 1, rng));
  if (stride != 1 || in != out) b.shortcut = ConvBn::make(in, out, 1, stride, rng);
  return b;
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) const {
  Tensor h = x;
  for (std::size_t i = 0; i < branch.size(); ++i) {
    h = branch[i].forward(h, mode);
    if (i + 1 < branch.size()) h = relu(h);
  }
  const Tensor skip = shortcut ? shortcut->forward(x, mode) : x;
  return relu(add(h, skip));
}

void ResidualBlock::register_params(ParameterStore& store, const std::string& prefix) const {
  for (std::size_t i = 0; i < branch.size(); ++i)
    branch[i].register_params(store, prefix + ".conv" + std::to_string(i + 1));
  if (shortcut) shortcut->register_params(store, prefix + ".shortcut");
}

SqueezeExcite SqueezeExcite::make(std::size_t channels, std::size_t squeezed, Rng& rng) {
  return {make_dense<float>(channels, squeezed, rng),
          make_dense<float>(squeezed, channels, rng, Init::xavier_uniform)};
}

Tensor SqueezeExcite::forward(const Tensor& x) const {
  auto gate = sigmoid(dense(relu(dense(global_avg_pool(x), reduce)), expand));
  return scale_channels(x, gate);
}

void SqueezeExcite::register_params(ParameterStore& store, const std::string& prefix) const {
  register_dense(store, prefix + ".reduce", reduce);
  register_dense(store, prefix + ".expand", expand);
}

namespace {

std::size_t make_divisible(double v, std::size_t divisor = 8) {
  auto d = static_cast<double>(divisor);
  auto rounded = std::max(divisor, static_cast<std::size_t>((v + d / 2) / d) * divisor);
  if (static_cast<double>(rounded) < 0.9 * v) rounded += divisor;
  return rounded;
}

}  // namespace

InvertedResidual InvertedResidual::make(std::size_t in, std::size_t expanded, std::size_t out,
                                        std::size_t kernel, std::size_t stride, bool use_se,
                                        ActivationKind kind, Rng& rng) {
  InvertedResidual b;
  if (expanded != in) b.expand = ConvBn::make(in, expanded, 1, 1, rng);
  b.depthwise = ConvBn::make_depthwise(expanded, kernel, stride, rng);
  if (use_se) b.se = SqueezeExcite::make(expanded, make_divisible(static_cast<double>(expanded) / 4), rng);
  b.project = ConvBn::make(expanded, out, 1, 1, rng);
  b.act = {kind};
  b.residual = stride == 1 && in == out;
  return b;
}

Tensor InvertedResidual::forward(const Tensor& x, Mode mode) const {
  Tensor h = x;
  if (expand) h = activation(act, expand->forward(h, mode));
  h = activation(act, depthwise.forward(h, mode));
  if (se) h = se->forward(h);
  h = project.forward(h, mode);
  return residual ? add(h, x) : h;
}

void InvertedResidual::register_params(ParameterStore& store, const std::string& prefix) const {
  if (expand) expand->register_params(store, prefix + ".expand");
  depthwise.register_params(store, prefix + ".depthwise");
  if (se) se->register_params(store, prefix + ".se");
  project.register_params(store, prefix + ".project");
}

EncoderBlock EncoderBlock::make(std::size_t embed_dim, std::size_t heads, std::size_t expansion,
                                Rng& rng) {
  return {make_layer_norm<float>(embed_dim), make_attention<float>(embed_dim, heads, rng),
          make_layer_norm<float>(embed_dim), make_ffn<float>(embed_dim, expansion, rng)};
}

Tensor EncoderBlock::forward(const Tensor& h) const {
  auto q = add(h, msa(layer_norm(h, attn_norm), attn));
  return add(q, ffn(layer_norm(q, ffn_norm), mlp));
}

void EncoderBlock::register_params(ParameterStore& store, const std::string& prefix) const {
  register_norm(store, prefix + ".attn_norm", attn_norm);
  register_dense(store, prefix + ".attn.query", attn.query);
  register_dense(store, prefix + ".attn.key", attn.key);
  register_dense(store, prefix + ".attn.value", attn.value);
  register_dense(store, prefix + ".attn.output", attn.output);
  register_norm(store, prefix + ".ffn_norm", ffn_norm);
  register_dense(store, prefix + ".ffn.expand", mlp.expand);
  register_dense(store, prefix + ".ffn.project", mlp.project);
}

// --- networks ------------------------------------------------------------------------

namespace {

class DfcNet final : public Network {
 public:
  DfcNet(const ModelConfig& c, Rng& rng, ParameterStore& store) : dropout_(c.dropout) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      convs_.push_back(make_conv2d<float>(in, c.widths[i], c.kernel, 1, Padding::same, true, rng));
      in = c.widths[i];
    }
    const std::size_t flat = in * (c.height / 8) * (c.width / 8);
    hidden_ = make_dense<float>(flat, c.dense_units, rng);
    head_ = make_dense<float>(c.dense_units, 1, rng, Init::xavier_uniform);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto name = "conv" + std::to_string(i + 1);
      store.add(name + ".weight", convs_[i].kernels);
      store.add(name + ".bias", *convs_[i].bias);
    }
    register_dense(store, "dense", hidden_);
    register_dense(store, "head", head_);
  }

  Tensor logits(const Tensor& images, Mode mode, std::uint64_t seed) const override {
    const bool training = mode == Mode::training;
    Tensor h = images;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = maxpool2d(relu(conv2d(h, convs_[i])), 2, 2);
      h = dropout(h, dropout_, training, derive_seed(seed, i));
    }
    h = relu(dense(flatten(h), hidden_));
    return dense(h, head_);
  }

  std::size_t weight_layers() const override { return convs_.size() + 2; }

 private:
  double dropout_;
  std::vector<Conv2dParams<float>> convs_;
  DenseParams<float> hidden_;
  DenseParams<float> head_;
};

class VfdNet final : public Network {
 public:
  VfdNet(const ModelConfig& c, Rng& rng, ParameterStore& store) : patch_(c.patch) {
    const std::size_t n = c.patch_count();
    projection_ = make_dense<float>(3 * c.patch * c.patch, c.embed_dim, rng, Init::xavier_uniform);
    class_token_ = Tensor::uniform({1, c.embed_dim}, rng, -0.02f, 0.02f);
    class_token_.set_requires_grad(true);
    position_ = Tensor::uniform({n + 1, c.embed_dim}, rng, -0.02f, 0.02f);
    position_.set_requires_grad(true);
    for (std::size_t k = 0; k < c.depth; ++k)
      blocks_.push_back(EncoderBlock::make(c.embed_dim, c.heads, c.expansion, rng));
    head_ = make_dense<float>(c.embed_dim, 1, rng, Init::xavier_uniform);

    register_dense(store, "patch_embed", projection_);
    store.add("class_token", class_token_);
    store.add("position", position_);
    for (std::size_t k = 0; k < blocks_.size(); ++k)
      blocks_[k].register_params(store, "block" + std::to_string(k));
    register_dense(store, "head", head_);
  }

  Tensor logits(const Tensor& images, Mode, std::uint64_t) const override {
    auto tokens = dense(patchify(images, patch_), projection_);
    auto h = add_trailing(prepend_token(class_token_, tokens), position_);
    for (const auto& block : blocks_) h = block.forward(h);
    return dense(select_token(h, 0), head_);
  }

  std::size_t weight_layers() const override { return 1 + blocks_.size() * 6 + 1; }

 private:
  std::size_t patch_;
  DenseParams<float> projection_;
  Tensor class_token_;
  Tensor position_;
  std::vector<EncoderBlock> blocks_;
  DenseParams<float> head_;
};

class ResNet final : public Network {
 public:
  ResNet(const ModelConfig& c, Rng& rng, ParameterStore& store) : paper_(c.scale == Scale::paper) {
    const std::size_t stem_width = paper_ ? 64 : c.widths.front();
    stem_ = ConvBn::make(3, stem_width, paper_ ? 7 : 3, paper_ ? 2 : 1, rng);
    stem_.register_params(store, "stem");
    std::size_t in = stem_width;
    for (std::size_t s = 0; s < c.widths.size(); ++s)
      for (std::size_t b = 0; b < c.blocks[s]; ++b) {
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        const std::size_t out = paper_ ? c.widths[s] * 4 : c.widths[s];
        blocks_.push_back(paper_ ? ResidualBlock::bottleneck(in, c.widths[s], out, stride, rng)
                                 : ResidualBlock::basic(in, out, stride, rng));
        blocks_.back().register_params(
            store, "stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
        in = out;
      }
    head_ = make_dense<float>(in, 1, rng, Init::xavier_uniform);
    register_dense(store, "head", head_);
  }

  Tensor logits(const Tensor& images, Mode mode, std::uint64_t) const override {
    auto h = relu(stem_.forward(images, mode));
    h = paper_ ? maxpool2d(h, 3, 2, 1) : maxpool2d(h, 2, 2);
    for (const auto& block : blocks_) h = block.forward(h, mode);
    return dense(global_avg_pool(h), head_);
  }

  std::size_t weight_layers() const override {
    std::size_t n = 2;  // stem + head
    for (const auto& b : blocks_) n += b.branch.size();
    return n;
  }

 private:
  bool paper_;
  ConvBn stem_;
  std::vector<ResidualBlock> blocks_;
  DenseParams<float> head_;
};

struct BneckSpec {
  std::size_t kernel, expanded, out;
  bool se;
  ActivationKind act;
  std::size_t stride;
};

constexpr auto RE = ActivationKind::relu;
constexpr auto HS = ActivationKind::hard_swish;

// MobileNetV3-Small bottleneck table.
const std::vector<BneckSpec> kSmallLayout = {
    {3, 16, 16, true, RE, 2},   {3, 72, 24, false, RE, 2},  {3, 88, 24, false, RE, 1},
    {5, 96, 40, true, HS, 2},   {5, 240, 40, true, HS, 1},  {5, 240, 40, true, HS, 1},
    {5, 120, 48, true, HS, 1},  {5, 144, 48, true, HS, 1},  {5, 288, 96, true, HS, 2},
    {5, 576, 96, true, HS, 1},  {5, 576, 96, true, HS, 1},
};

const std::vector<BneckSpec> kDeskLayout = {
    {3, 16, 16, true, RE, 2},  {3, 48, 24, false, RE, 2}, {3, 64, 24, false, RE, 1},
    {3, 96, 32, true, HS, 1},  {3, 96, 32, true, HS, 1},
};

class MobileNetV3 final : public Network {
 public:
  MobileNetV3(const ModelConfig& c, Rng& rng, ParameterStore& store) {
    const bool paper = c.scale == Scale::paper;
    const auto& layout = paper ? kSmallLayout : kDeskLayout;
    const std::size_t last = paper ? 576 : 128;
    const std::size_t hidden = paper ? 1024 : 128;
    stem_ = ConvBn::make(3, 16, 3, 2, rng);
    stem_.register_params(store, "stem");
    std::size_t in = 16;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& s = layout[i];
      blocks_.push_back(InvertedResidual::make(in, s.expanded, s.out, s.kernel, s.stride, s.se, s.act, rng));
      blocks_.back().register_params(store, "bneck" + std::to_string(i));
      in = s.out;
    }
    last_conv_ = ConvBn::make(in, last, 1, 1, rng);
    last_conv_.register_params(store, "last_conv");
    hidden_ = make_dense<float>(last, hidden, rng);
    head_ = make_dense<float>(hidden, 1, rng, Init::xavier_uniform);
    register_dense(store, "hidden", hidden_);
    register_dense(store, "head", head_);
  }

  Tensor logits(const Tensor& images, Mode mode, std::uint64_t) const override {
    auto h = act(HS, stem_.forward(images, mode));
    for (const auto& block : blocks_) h = block.forward(h, mode);
    h = act(HS, last_conv_.forward(h, mode));
    h = act(HS, dense(global_avg_pool(h), hidden_));
    return dense(h, head_);
  }

  std::size_t weight_layers() const override {
    std::size_t n = 1 + 1 + 2;  // stem, last conv, hidden, head
    for (const auto& b : blocks_) n += b.weight_layers();
    return n;
  }

 private:
  ConvBn stem_;
  std::vector<InvertedResidual> blocks_;
  ConvBn last_conv_;
  DenseParams<float> hidden_;
  DenseParams<float> head_;
};

template <typename Net>
Model build(const ModelConfig& config, ModelKind expected, std::uint64_t seed) {
  if (config.kind != expected)
    throw std::invalid_argument("model config kind '" + std::string(to_string(config.kind)) +
                                "' passed to the " + std::string(to_string(expected)) + " builder");
  config.validate();
  Rng rng(seed);
  ParameterStore store;
  auto net = std::make_shared<const Net>(config, rng, store);
  return Model(config, std::move(net), std::move(store));
}

}  // namespace

Model::Model(ModelConfig config, std::shared_ptr<const Network> network, ParameterStore store)
    : config_(std::move(config)), network_(std::move(network)), store_(std::move(store)) {}

Tensor Model::forward(const Tensor& images, Mode mode, std::uint64_t dropout_seed) const {
  if (!network_) throw Error("forward: model has no network");
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.height ||
      images.dim(3) != config_.width)
    throw ShapeError("forward: expected [B,3," + std::to_string(config_.height) + "," +
                     std::to_string(config_.width) + "], got " + to_string(images.shape()));
  return probability(network_->logits(images, mode, dropout_seed));
}

std::vector<std::vector<float>> Model::state() const {
  std::vector<std::vector<float>> out;
  out.reserve(store_.entries().size());
  for (const auto& e : store_.entries()) out.push_back(e.tensor.values());
  return out;
}

void Model::load_state(const std::vector<std::vector<float>>& state) {
  const auto& entries = store_.entries();
  if (state.size() != entries.size()) throw ShapeError("load_state: entry count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (state[i].size() != entries[i].tensor.numel())
      throw ShapeError("load_state: size mismatch for " + entries[i].name);
    auto dst = Tensor(entries[i].tensor).mutable_data();
    std::copy(state[i].begin(), state[i].end(), dst.begin());
  }
}

Model build_dfcnet(const ModelConfig& config, std::uint64_t seed) {
  return build<DfcNet>(config, ModelKind::dfcnet, seed);
}
Model build_vfdnet(const ModelConfig& config, std::uint64_t seed) {
  return build<VfdNet>(config, ModelKind::vfdnet, seed);
}
Model build_resnet(const ModelConfig& config, std::uint64_t seed) {
  return build<ResNet>(config, ModelKind::resnet, seed);
}
Model build_mobilenetv3(const ModelConfig& config, std::uint64_t seed) {
  return build<MobileNetV3>(config, ModelKind::mobilenetv3, seed);
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  switch (config.kind) {
    case ModelKind::dfcnet: return build_dfcnet(config, seed);
    case ModelKind::vfdnet: return build_vfdnet(config, seed);
    case ModelKind::resnet: return build_resnet(config, seed);
    case ModelKind::mobilenetv3: return build_mobilenetv3(config, seed);
  }
  throw std::invalid_argument("unknown model kind");
}

}  // namespace dfd
