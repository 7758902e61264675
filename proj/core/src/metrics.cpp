#include "dfd/metrics.hpp"

#include <charconv>
#include <sstream>

namespace dfd {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionMatrix confusion(std::span<const float> probs, std::span<const int> labels, double threshold) {
  if (probs.size() != labels.size())
    throw ShapeError("confusion: " + std::to_string(probs.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("confusion: labels must be 0 or 1");
    const bool predicted = static_cast<double>(probs[i]) >= threshold;
    if (labels[i] == 1) ++(predicted ? cm.tp : cm.fn);
    else ++(predicted ? cm.fp : cm.tn);
  }
  return cm;
}

ConfusionMatrix confusion(const Tensor& probs, const Tensor& labels, double threshold) {
  if (labels.rank() != 1 || probs.numel() != labels.numel())
    throw ShapeError("confusion: probs " + to_string(probs.shape()) + " vs labels " + to_string(labels.shape()));
  std::vector<int> ints(labels.numel());
  for (std::size_t i = 0; i < ints.size(); ++i) {
    const float y = labels.data()[i];
    if (y != 0.0f && y != 1.0f) throw DomainError("confusion: labels must be 0 or 1");
    ints[i] = y == 1.0f ? 1 : 0;
  }
  return confusion(probs.data(), ints, threshold);
}

namespace {

Ratio ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

}  // namespace

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DomainError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

Ratio precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp); }
Ratio recall(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn); }

Ratio f1_score(double p, double r) {
  if (p + r == 0.0) return {0.0, true};
  return {2.0 * p * r / (p + r), false};
}

Ratio f1(const ConfusionMatrix& cm) {
  const auto p = precision(cm), r = recall(cm);
  auto out = f1_score(p.value, r.value);
  out.degenerate = out.degenerate || p.degenerate || r.degenerate;
  return out;
}

MetricsReport make_report(std::string model, const ConfusionMatrix& cm) {
  return {std::move(model), cm, accuracy(cm), precision(cm), recall(cm), f1(cm)};
}

namespace {

std::string number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

constexpr std::string_view kMetricsHeader = "model,accuracy,precision,recall,f1,tp,tn,fp,fn";

}  // namespace

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : reports) {
    if (r.model.find_first_of(",\n") != std::string::npos)
      throw std::invalid_argument("metrics_csv: model name may not contain ',' or newlines");
    os << r.model << ',' << number(r.accuracy) << ',' << number(r.precision.value) << ','
       << number(r.recall.value) << ',' << number(r.f1.value) << ',' << r.cm.tp << ',' << r.cm.tn << ','
       << r.cm.fp << ',' << r.cm.fn << '\n';
  }
  return os.str();
}

std::vector<MetricsReport> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsReport> out;
  std::size_t line_no = 0;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != kMetricsHeader) throw std::invalid_argument("metrics CSV: bad header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    while (true) {
      const auto comma = line.find(',');
      f.push_back(line.substr(0, comma));
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    const auto bad = [&] { return std::invalid_argument("metrics CSV line " + std::to_string(line_no) + " is malformed"); };
    if (f.size() != 9) throw bad();
    auto real = [&](std::string_view s) {
      double v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw bad();
      return v;
    };
    auto count = [&](std::string_view s) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw bad();
      return v;
    };
    MetricsReport r;
    r.model = std::string(f[0]);
    r.accuracy = real(f[1]);
    r.precision.value = real(f[2]);
    r.recall.value = real(f[3]);
    r.f1.value = real(f[4]);
    r.cm = {count(f[5]), count(f[6]), count(f[7]), count(f[8])};
    out.push_back(std::move(r));
  }
  if (header) throw std::invalid_argument("metrics CSV: empty input");
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "actual\\predicted,fake,real\n"
     << "fake," << cm.tp << ',' << cm.fn << '\n'
     << "real," << cm.fp << ',' << cm.tn << '\n';
  return os.str();
}

}  // namespace dfd
