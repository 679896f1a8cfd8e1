#include "melemad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "melemad/error.hpp"

namespace melemad::metrics {

namespace {

void check_lengths(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) {
    throw Error(Errc::LengthMismatch, std::to_string(probs.size()) + " scores vs " +
                                          std::to_string(labels.size()) + " labels");
  }
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

ConfusionMatrix confusion(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold) {
  check_lengths(probs, labels);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++cm.tp;
    else if (predicted) ++cm.fp;
    else if (actual) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

ScalarMetrics scalar_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(Errc::EmptyConfusion, "no samples were evaluated");
  const double tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
  const double fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
  ScalarMetrics s;
  s.accuracy = (tp + tn) / (tp + tn + fp + fn);
  s.precision = ratio(tp, tp + fp);
  s.recall = ratio(tp, tp + fn);
  s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  s.mcc = den > 0.0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0;
  return s;
}

std::vector<RocPoint> roc_curve(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  check_lengths(probs, labels);
  const auto positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw Error(Errc::SingleClass, "ROC needs both classes");

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  std::vector<RocPoint> roc{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double score = probs[order[k]];
    for (; k < order.size() && probs[order[k]] == score; ++k) {
      (labels[order[k]] ? tp : fp) += 1;
    }
    roc.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                   static_cast<double>(tp) / static_cast<double>(positives)});
  }
  if (!(roc.back() == RocPoint{1.0, 1.0})) roc.push_back({1.0, 1.0});
  return roc;
}

double auc(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t k = 1; k < roc.size(); ++k) {
    area += (roc[k].fpr - roc[k - 1].fpr) * (roc[k].tpr + roc[k - 1].tpr) * 0.5;
  }
  return area;
}

MetricsReport evaluate(std::span<const double> probs, std::span<const std::uint8_t> labels, double threshold) {
  MetricsReport r;
  r.threshold = threshold;
  r.confusion = confusion(probs, labels, threshold);
  r.scalars = scalar_metrics(r.confusion);
  r.roc = roc_curve(probs, labels);
  r.auc = auc(r.roc);
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["accuracy"] = r.scalars.accuracy;
  j["precision"] = r.scalars.precision;
  j["recall"] = r.scalars.recall;
  j["f1"] = r.scalars.f1;
  j["mcc"] = r.scalars.mcc;
  j["auc"] = r.auc;
  j["threshold"] = r.threshold;
  j["confusion"] = {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}};
  return j.dump(2) + "\n";
}

std::string roc_to_csv(const std::vector<RocPoint>& roc) {
  std::ostringstream out;
  out.precision(17);
  out << "fpr,tpr\n";
  for (const auto& p : roc) out << p.fpr << ',' << p.tpr << '\n';
  return out.str();
}

}  // namespace melemad::metrics
