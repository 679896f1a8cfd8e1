#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace melemad::metrics {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// A sample is predicted positive iff prob >= threshold.
ConfusionMatrix confusion(std::span<const double> probs, std::span<const std::uint8_t> labels,
                          double threshold = 0.5);

struct ScalarMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
};

/// Accuracy, precision, recall, F1 and Matthews correlation. A ratio whose
/// denominator is zero is reported as 0.
ScalarMetrics scalar_metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// One point per distinct score (descending), with tied scores forming a
/// single step, framed by (0,0) and (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> probs, std::span<const std::uint8_t> labels);

/// Trapezoidal area under a monotone ROC curve.
double auc(const std::vector<RocPoint>& roc);

struct MetricsReport {
  ScalarMetrics scalars;
  double auc = 0.0;
  double threshold = 0.5;
  ConfusionMatrix confusion;
  std::vector<RocPoint> roc;
};

MetricsReport evaluate(std::span<const double> probs, std::span<const std::uint8_t> labels,
                       double threshold = 0.5);

std::string report_to_json(const MetricsReport& r);
std::string roc_to_csv(const std::vector<RocPoint>& roc);

}  // namespace melemad::metrics
