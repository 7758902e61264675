#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "dfd/data.hpp"
#include "dfd/models.hpp"
#include "dfd/tensor.hpp"

namespace dfd {

/// mean(-[y ln p + (1 - y) ln(1 - p)]) with p clamped to [clamp, 1 - clamp].
/// pred is [B, 1] or [B]; labels [B] with entries exactly 0 or 1.
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& labels, double clamp = 1e-7);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// gradient buffer (a missing buffer counts as zero). Moment buffers are
/// created on the first call.
void adam_step(std::vector<Tensor>& params, AdamState& state);

class Adam {
 public:
  explicit Adam(AdamConfig config = {});
  void step(std::vector<Tensor>& params) { adam_step(params, state_); }
  const AdamState& state() const { return state_; }

 private:
  AdamState state_;
};

struct TrainRecord {
  std::size_t epoch = 0;  // 1-based
  double train_acc = 0;
  double train_loss = 0;
  double val_acc = 0;
  double val_loss = 0;
  double seconds = 0;

  bool operator==(const TrainRecord&) const = default;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, double loss);
  std::size_t epoch;
  std::size_t batch;  // 1-based; 0 for the validation pass
};

struct FitOptions {
  std::size_t epochs = 20;
  AdamConfig adam;
  std::uint64_t shuffle_seed = 0;  // epoch e shuffles with shuffle_seed + e
  std::uint64_t dropout_seed = 0;
  AugmentPolicy augment;
  bool record_time = false;        // otherwise TrainRecord::seconds stays 0
};

struct FitResult {
  std::vector<TrainRecord> records;
  /// Model state with the lowest validation loss (the initial state when no
  /// epoch ran).
  std::vector<std::vector<float>> best_state;
  std::optional<std::size_t> best_epoch;
};

using EpochHook = std::function<void(const TrainRecord&)>;

/// Per epoch: one shuffled training pass (training mode, Adam after every
/// batch), then one validation pass in inference mode. On return the model
/// holds its final-epoch state. Throws TrainingDiverged on a non-finite loss.
FitResult fit(Model& model, const Loader& train, const Loader& val, const FitOptions& options,
              const EpochHook& hook = {});

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<float> probabilities;
  std::vector<int> labels;
};

/// Inference-mode pass over every batch of `loader` in record order.
EvalResult evaluate_loader(const Model& model, const Loader& loader);

/// `epoch,train_acc,train_loss,val_acc,val_loss,seconds`
void write_curves_csv(const std::vector<TrainRecord>& records, const std::filesystem::path& path);
std::vector<TrainRecord> read_curves_csv(const std::filesystem::path& path);

}  // namespace dfd
