#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dfd/tensor.hpp"

namespace dfd {

/// Positive class is fake (label 1).
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// A prediction is positive iff prob >= threshold.
ConfusionMatrix confusion(std::span<const float> probs, std::span<const int> labels, double threshold = 0.5);
/// probs [B, 1] or [B]; labels [B] holding 0 or 1.
ConfusionMatrix confusion(const Tensor& probs, const Tensor& labels, double threshold = 0.5);

/// A ratio whose denominator may be zero; then value is 0 and degenerate set.
struct Ratio {
  double value = 0;
  bool degenerate = false;
};

/// Throws DomainError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);
Ratio precision(const ConfusionMatrix& cm);
Ratio recall(const ConfusionMatrix& cm);
Ratio f1(const ConfusionMatrix& cm);
/// Harmonic mean 2PR / (P + R); degenerate when P + R == 0.
Ratio f1_score(double precision, double recall);

struct MetricsReport {
  std::string model;
  ConfusionMatrix cm;
  double accuracy = 0;
  Ratio precision;
  Ratio recall;
  Ratio f1;
};

MetricsReport make_report(std::string model, const ConfusionMatrix& cm);

/// `model,accuracy,precision,recall,f1,tp,tn,fp,fn` with a header row.
std::string metrics_csv(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> parse_metrics_csv(std::string_view text);

/// 2x2 grid: rows actual fake/real, columns predicted fake/real.
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace dfd
