#include "dfd/optim.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dfd/autograd.hpp"

namespace dfd {

using autograd::grad_of;
using autograd::Impl;
using autograd::make_result;

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& labels, double clamp) {
  const std::size_t b = labels.numel();
  const bool shape_ok = labels.rank() == 1 && ((pred.rank() == 2 && pred.dim(1) == 1 && pred.dim(0) == b) ||
                                                (pred.rank() == 1 && pred.dim(0) == b));
  if (!shape_ok)
    throw ShapeError("bce_loss: pred " + to_string(pred.shape()) + " does not match labels " +
                     to_string(labels.shape()));
  if (b == 0) throw ShapeError("bce_loss: empty batch");
  if (!(clamp > 0.0 && clamp < 0.5)) throw DomainError("bce_loss: clamp must be in (0, 0.5)");
  for (T y : labels.data())
    if (y != T(0) && y != T(1)) throw DomainError("bce_loss: labels must be 0 or 1");

  const double lo = clamp, hi = 1.0 - clamp;
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const double p = std::clamp(static_cast<double>(pred.data()[i]), lo, hi);
    total -= labels.data()[i] == T(1) ? std::log(p) : std::log1p(-p);
  }
  auto pi = pred.impl(), yi = labels.impl();
  return make_result<T>(
      {}, {static_cast<T>(total / static_cast<double>(b))}, {pi},
      [pi, yi, b, lo, hi](Impl<T>& out) {
        auto& g = grad_of(*pi);
        const double scale = static_cast<double>(out.grad[0]) / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          const double p = pi->data[i];
          if (p < lo || p > hi) continue;  // flat region of the clamp
          const double d = yi->data[i] == T(1) ? -1.0 / p : 1.0 / (1.0 - p);
          g[i] += static_cast<T>(scale * d);
        }
      },
      "bce_loss");
}

template BasicTensor<float> bce_loss(const BasicTensor<float>&, const BasicTensor<float>&, double);
template BasicTensor<double> bce_loss(const BasicTensor<double>&, const BasicTensor<double>&, double);

// --- Adam ---------------------------------------------------------------------------

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam: beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
}

Adam::Adam(AdamConfig config) {
  config.validate();
  state_.config = config;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  const auto& c = state.config;
  if (state.t == 0 && state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0f);
      state.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].numel())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " changed size");

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    // A parameter without a gradient buffer is updated with g = 0.
    const bool has_grad = params[i].has_grad();
    auto g = has_grad ? params[i].grad() : std::span<const float>{};
    auto theta = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double gk = has_grad ? g[k] : 0.0;
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double mh = mk / correction1, vh = vk / correction2;
      theta[k] = static_cast<float>(theta[k] - c.lr * mh / (std::sqrt(vh) + c.epsilon));
    }
  }
}

// --- training loop --------------------------------------------------------------------

TrainingDiverged::TrainingDiverged(std::size_t epoch_, std::size_t batch_, double loss)
    : Error("training diverged: non-finite loss " + std::to_string(loss) + " at epoch " +
            std::to_string(epoch_) + ", batch " + std::to_string(batch_)),
      epoch(epoch_),
      batch(batch_) {}

namespace {

std::size_t count_correct(const Tensor& probs, const Tensor& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.numel(); ++i)
    correct += (probs.data()[i] >= 0.5f) == (labels.data()[i] == 1.0f);
  return correct;
}

}  // namespace

EvalResult evaluate_loader(const Model& model, const Loader& loader) {
  NoGradGuard no_grad;
  EvalResult result;
  double loss_sum = 0;
  std::size_t correct = 0;
  auto stream = loader.epoch(0);
  Batch batch;
  while (stream.next(batch)) {
    const auto probs = model.forward(batch.images, Mode::inference);
    loss_sum += static_cast<double>(bce_loss(probs, batch.labels).item()) * static_cast<double>(batch.size());
    correct += count_correct(probs, batch.labels);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      result.probabilities.push_back(probs.data()[i]);
      result.labels.push_back(batch.labels.data()[i] == 1.0f ? 1 : 0);
    }
  }
  const auto n = static_cast<double>(result.labels.size());
  result.loss = loss_sum / n;
  result.accuracy = static_cast<double>(correct) / n;
  return result;
}

FitResult fit(Model& model, const Loader& train, const Loader& val, const FitOptions& options,
              const EpochHook& hook) {
  options.adam.validate();
  options.augment.validate();
  FitResult result;
  result.best_state = model.state();
  Adam adam(options.adam);
  auto params = model.parameters().trainable();
  double best_loss = std::numeric_limits<double>::infinity();
  std::uint64_t ordinal = 0;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    auto stream = train.epoch(options.shuffle_seed + epoch);
    Batch batch;
    while (stream.next(batch)) {
      ++batch_index;
      if (options.augment.kind != AugmentKind::none) batch = augment(batch, options.augment, ordinal);
      model.parameters().zero_grad();
      const auto probs =
          model.forward(batch.images, Mode::training, derive_seed(options.dropout_seed, ordinal));
      const auto loss = bce_loss(probs, batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) throw TrainingDiverged(epoch, batch_index, value);
      loss.backward();
      adam.step(params);
      loss_sum += value * static_cast<double>(batch.size());
      correct += count_correct(probs, batch.labels);
      seen += batch.size();
      ++ordinal;
    }

    const auto v = evaluate_loader(model, val);
    if (!std::isfinite(v.loss)) throw TrainingDiverged(epoch, 0, v.loss);
    TrainRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    record.val_loss = v.loss;
    record.val_acc = v.accuracy;
    if (options.record_time)
      record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (v.loss < best_loss) {
      best_loss = v.loss;
      result.best_state = model.state();
      result.best_epoch = epoch;
    }
    result.records.push_back(record);
    if (hook) hook(record);
  }
  return result;
}

// --- curves CSV ----------------------------------------------------------------------------

namespace {

constexpr std::string_view kCurvesHeader = "epoch,train_acc,train_loss,val_acc,val_loss,seconds";

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_number(std::string_view s, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw DataError(where + ": malformed number '" + std::string(s) + "'");
  return v;
}

}  // namespace

void write_curves_csv(const std::vector<TrainRecord>& records, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kCurvesHeader << '\n';
  for (const auto& r : records)
    os << r.epoch << ',' << format_number(r.train_acc) << ',' << format_number(r.train_loss) << ','
       << format_number(r.val_acc) << ',' << format_number(r.val_loss) << ',' << format_number(r.seconds)
       << '\n';
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << os.str();
}

std::vector<TrainRecord> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader)
    throw DataError(path.string() + ": missing curves header '" + std::string(kCurvesHeader) + "'");
  std::vector<TrainRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 6) throw DataError(where + ": expected 6 fields");
    TrainRecord r;
    const double epoch = parse_number(fields[0], where);
    if (epoch < 0 || epoch != std::floor(epoch)) throw DataError(where + ": epoch must be a whole number");
    r.epoch = static_cast<std::size_t>(epoch);
    r.train_acc = parse_number(fields[1], where);
    r.train_loss = parse_number(fields[2], where);
    r.val_acc = parse_number(fields[3], where);
    r.val_loss = parse_number(fields[4], where);
    r.seconds = parse_number(fields[5], where);
    records.push_back(r);
  }
  return records;
}

}  // namespace dfd
