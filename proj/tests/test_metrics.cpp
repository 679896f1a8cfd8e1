#include <doctest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "melemad/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace melemad;
using namespace melemad::metrics;

namespace {

struct Instance {
  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
};

/// Scores drawn from a small grid so ties are frequent.
Instance random_instance(std::mt19937_64& rng, bool both_classes) {
  const std::size_t n = 2 + rng() % 11;
  Instance in;
  in.probs.resize(n);
  in.labels.resize(n);
  const int grid = 2 + static_cast<int>(rng() % 9);
  for (std::size_t i = 0; i < n; ++i) {
    in.probs[i] = static_cast<double>(rng() % static_cast<unsigned>(grid + 1)) / grid;
    in.labels[i] = static_cast<std::uint8_t>(rng() & 1u);
  }
  if (both_classes) {
    in.labels[0] = 0;
    in.labels[1] = 1;
  }
  return in;
}

}  // namespace

TEST_CASE("confusion examples and boundaries") {
  const std::vector<double> p{0.9, 0.2};
  const std::vector<std::uint8_t> y{1, 0};
  CHECK(confusion(p, y) == ConfusionMatrix{1, 1, 0, 0});
  CHECK(confusion(p, y, 0.0) == ConfusionMatrix{1, 0, 1, 0});
  CHECK(confusion(p, y, 1.0) == ConfusionMatrix{0, 1, 0, 1});
  // Inclusive threshold.
  const std::vector<double> at{0.5};
  const std::vector<std::uint8_t> one{1};
  CHECK(confusion(at, one).tp == 1);
  const std::vector<std::uint8_t> y3{1, 0, 1};
  CHECK_ERRC(confusion(p, y3), Errc::LengthMismatch);
}

TEST_CASE("scalar metric examples") {
  const auto perfect = scalar_metrics({50, 50, 0, 0});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.mcc == 1.0);

  const auto s = scalar_metrics({40, 40, 10, 10});
  CHECK(s.accuracy == doctest::Approx(0.8));
  CHECK(s.precision == doctest::Approx(0.8));
  CHECK(s.recall == doctest::Approx(0.8));
  CHECK(s.f1 == doctest::Approx(0.8));
  CHECK(s.mcc == doctest::Approx(0.6));

  const auto none = scalar_metrics({0, 7, 0, 3});
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  CHECK(none.mcc == 0.0);
  CHECK(none.accuracy == doctest::Approx(0.7));

  CHECK_ERRC(scalar_metrics({0, 0, 0, 0}), Errc::EmptyConfusion);
}

TEST_CASE("roc examples") {
  const std::vector<double> p{0.8, 0.6, 0.4, 0.2};
  const std::vector<std::uint8_t> y{1, 0, 1, 0};
  const auto roc = roc_curve(p, y);
  CHECK(roc == std::vector<RocPoint>{{0, 0}, {0, 0.5}, {0.5, 0.5}, {0.5, 1}, {1, 1}});
  CHECK(auc(roc) == doctest::Approx(0.75));

  const std::vector<double> same(6, 0.3);
  const std::vector<std::uint8_t> mix{1, 0, 1, 0, 0, 1};
  const auto flat = roc_curve(same, mix);
  CHECK(flat.front() == RocPoint{0, 0});
  CHECK(flat.back() == RocPoint{1, 1});
  CHECK(flat.size() == 2);
  CHECK(auc(flat) == doctest::Approx(0.5));

  const std::vector<double> sep{0.9, 0.8, 0.3, 0.1};
  const std::vector<std::uint8_t> ys{1, 1, 0, 0};
  const auto r = roc_curve(sep, ys);
  bool through_corner = false;
  for (const auto& pt : r) through_corner |= pt == RocPoint{0, 1};
  CHECK(through_corner);
  CHECK(auc(r) == 1.0);

  const std::vector<std::uint8_t> ones{1, 1, 1, 1};
  CHECK_ERRC(roc_curve(sep, ones), Errc::SingleClass);
}

TEST_CASE("independent scores give auc near one half") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(20000);
  std::vector<std::uint8_t> y(20000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = u(rng);
    y[i] = u(rng) < 0.4;
  }
  CHECK(std::abs(auc(roc_curve(p, y)) - 0.5) < 0.02);
}

TEST_CASE("property: scalars match a brute-force recount") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1500; ++trial) {
    const auto in = random_instance(rng, false);
    const double thr = static_cast<double>(rng() % 11) / 10.0;
    const auto cm = confusion(in.probs, in.labels, thr);
    const auto ref = oracle::count(in.probs, in.labels, thr);
    CHECK(static_cast<long>(cm.tp) == ref.tp);
    CHECK(static_cast<long>(cm.tn) == ref.tn);
    CHECK(static_cast<long>(cm.fp) == ref.fp);
    CHECK(static_cast<long>(cm.fn) == ref.fn);
    const auto s = scalar_metrics(cm);
    const auto o = oracle::scalars(ref);
    CHECK(s.accuracy == o.accuracy);
    CHECK(s.precision == o.precision);
    CHECK(s.recall == o.recall);
    CHECK(s.f1 == o.f1);
    CHECK(s.mcc == o.mcc);
  }
}

TEST_CASE("property: trapezoidal auc equals the Mann-Whitney statistic") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1500; ++trial) {
    const auto in = random_instance(rng, true);
    const auto roc = roc_curve(in.probs, in.labels);
    CHECK(std::abs(auc(roc) - oracle::mann_whitney_auc(in.probs, in.labels)) < 1e-9);
  }
}

TEST_CASE("property: report ranges and curve shape") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const auto in = random_instance(rng, true);
    const auto r = evaluate(in.probs, in.labels);
    CHECK(r.confusion.total() == in.probs.size());
    for (double v : {r.scalars.accuracy, r.scalars.precision, r.scalars.recall, r.scalars.f1, r.auc}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(r.scalars.mcc >= -1.0 - 1e-12);
    CHECK(r.scalars.mcc <= 1.0 + 1e-12);
    CHECK(r.roc.front() == RocPoint{0, 0});
    CHECK(r.roc.back() == RocPoint{1, 1});
    for (std::size_t k = 1; k < r.roc.size(); ++k) {
      CHECK(r.roc[k].fpr >= r.roc[k - 1].fpr);
      CHECK(r.roc[k].tpr >= r.roc[k - 1].tpr);
    }
  }
}

TEST_CASE("property: label-swap symmetries") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const auto in = random_instance(rng, false);
    // Thresholds off the score grid avoid the inclusive boundary when mirrored.
    const double thr = 0.5 + 1e-3;
    const auto base = scalar_metrics(confusion(in.probs, in.labels, thr));

    auto flipped = in;
    for (auto& p : flipped.probs) p = 1.0 - p;
    for (auto& y : flipped.labels) y = 1 - y;
    const auto mirrored = scalar_metrics(confusion(flipped.probs, flipped.labels, 1.0 - thr));
    CHECK(mirrored.accuracy == doctest::Approx(base.accuracy));
    CHECK(mirrored.mcc == doctest::Approx(base.mcc));

    auto relabel = in.labels;
    for (auto& y : relabel) y = 1 - y;
    const auto swapped = confusion(in.probs, relabel, thr);
    const auto cm = confusion(in.probs, in.labels, thr);
    CHECK(swapped == ConfusionMatrix{cm.fp, cm.fn, cm.tp, cm.tn});
    CHECK(scalar_metrics(swapped).mcc == doctest::Approx(-base.mcc));
  }
}

TEST_CASE("report and roc export") {
  const std::vector<double> p{0.8, 0.6, 0.4, 0.2};
  const std::vector<std::uint8_t> y{1, 0, 1, 0};
  const auto r = evaluate(p, y);
  const auto j = nlohmann::json::parse(report_to_json(r));
  for (const char* key : {"accuracy", "precision", "recall", "f1", "mcc", "auc"}) CHECK(j.contains(key));
  CHECK(j["auc"].get<double>() == doctest::Approx(0.75));
  CHECK(j["confusion"]["tp"].get<int>() == 1);
  CHECK(j["confusion"]["fp"].get<int>() == 1);
  CHECK(roc_to_csv(r.roc) == "fpr,tpr\n0,0\n0,0.5\n0.5,0.5\n0.5,1\n1,1\n");
}
