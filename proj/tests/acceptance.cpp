// Acceptance gate: runs the ten criteria and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "melemad/cfsgb.hpp"
#include "melemad/dataset.hpp"
#include "melemad/error.hpp"
#include "melemad/gbdt.hpp"
#include "melemad/maml.hpp"
#include "melemad/metrics.hpp"
#include "melemad/mlp.hpp"
#include "melemad/util.hpp"
#include "oracles.hpp"

using namespace melemad;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

data::LabeledDataset gaussian_dataset(std::mt19937_64& rng, std::size_t n, std::size_t m) {
  std::normal_distribution<float> g(0.f, 1.f);
  std::vector<float> x(n * m);
  for (auto& v : x) v = g(rng);
  std::vector<std::uint8_t> y(n);
  for (auto& v : y) v = static_cast<std::uint8_t>(rng() & 1u);
  y[0] = 0;
  y[1] = 1;
  return {n, m, std::move(x), std::move(y)};
}

maml::ModelParams with_values(maml::ModelParams p, const std::vector<double>& v) {
  p.values = v;
  return p;
}

/// Glorot init plus jitter so that no pre-activation sits on a ReLU kink.
maml::ModelParams generic_params(const maml::MlpArchitecture& arch, std::mt19937_64& rng) {
  auto p = maml::init_params(arch, rng());
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto& v : p.values) v += g(rng);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MELEMAD_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quoted(const fs::path& p) { return "\"" + p.string() + "\""; }

// ---------------------------------------------------------------------------

/// BODMAS-shaped stand-in: 2381 feature columns plus a label column in CSV,
/// run through select, meta-train and evaluate with the BODMAS hyperparameter
/// row. Episode sizes are scaled to the stand-in's row count.
Outcome criterion1() {
  const fs::path dir = fs::temp_directory_path() / ("melemad_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  Outcome out;
  const int synth = run_cli("synth --n 1000 --m 2381 --informative 30 --noise 0.5 --seed 11 --out-dir " +
                            quoted(dir / "data"));
  const int rc = run_cli("run --config " + quoted(fs::path(MELEMAD_SOURCE_DIR) / "configs" / "bodmas.json") +
                         " --input " + quoted(dir / "data" / "synthetic.csv") +
                         " --iterations 20 --samples-per-task 160 --support-size 80 --query-size 80 --out-dir " +
                         quoted(dir / "out"));
  bool files = true;
  for (const char* f : {"selected_features.json", "projected.bin", "cfsgb_report.json", "checkpoint.ckpt",
                        "train_log.csv", "metrics.json", "roc.csv"}) {
    files = files && fs::exists(dir / "out" / f);
  }
  std::size_t k = 0, r = 0;
  bool metrics_ok = false;
  if (files) {
    const auto report = nlohmann::json::parse(read_file(dir / "out" / "cfsgb_report.json"));
    k = report["k"].get<std::size_t>();
    r = report["r"].get<std::size_t>();
    const auto m = nlohmann::json::parse(read_file(dir / "out" / "metrics.json"));
    metrics_ok = true;
    for (const char* key : {"accuracy", "precision", "recall", "f1", "auc"}) {
      const double v = m[key].get<double>();
      metrics_ok = metrics_ok && v >= 0.0 && v <= 1.0;
    }
  }
  out.pass = synth == 0 && rc == 0 && files && metrics_ok && k == 24 && r >= 1 && r <= 2381;
  out.detail = "exit " + std::to_string(rc) + ", k=" + std::to_string(k) + ", r=" + std::to_string(r) +
               (files ? ", all outputs written" : ", outputs missing");
  std::error_code ec;
  fs::remove_all(dir, ec);
  return out;
}

Outcome criterion2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::size_t instances = 0, mismatches = 0;
  double worst_auc = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng() % 11;
    const int grid = 2 + static_cast<int>(rng() % 9);
    std::vector<double> probs(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      probs[i] = static_cast<double>(rng() % static_cast<unsigned>(grid + 1)) / grid;
      labels[i] = static_cast<std::uint8_t>(rng() & 1u);
    }
    const double thr = static_cast<double>(rng() % 11) / 10.0;
    const auto cm = metrics::confusion(probs, labels, thr);
    const auto ref = oracle::count(probs, labels, thr);
    const auto s = metrics::scalar_metrics(cm);
    const auto o = oracle::scalars(ref);
    const bool same = static_cast<long>(cm.tp) == ref.tp && static_cast<long>(cm.tn) == ref.tn &&
                      static_cast<long>(cm.fp) == ref.fp && static_cast<long>(cm.fn) == ref.fn &&
                      s.accuracy == o.accuracy && s.precision == o.precision && s.recall == o.recall &&
                      s.f1 == o.f1 && s.mcc == o.mcc;
    mismatches += !same;
    ++instances;
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) {
      const double a = metrics::auc(metrics::roc_curve(probs, labels));
      worst_auc = std::max(worst_auc, std::abs(a - oracle::mann_whitney_auc(probs, labels)));
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && worst_auc < 1e-9 && instances >= 1000 && t < 5.0,
          std::to_string(instances) + " instances, " + std::to_string(mismatches) +
              " scalar mismatches, max |AUC - MW| = " + fmt(worst_auc) + ", " + fmt(t, 3) + " s"};
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3);
  double worst = 0.0;
  const int archs = 150;
  for (int trial = 0; trial < archs; ++trial) {
    maml::MlpArchitecture arch;
    arch.input_dim = 1 + rng() % 5;
    arch.hidden_dims.clear();
    const std::size_t layers = 1 + rng() % 3;
    for (std::size_t l = 0; l < layers; ++l) arch.hidden_dims.push_back(1 + rng() % 6);
    arch.dropout_rate = (rng() % 2) ? 0.0 : 0.5 * std::uniform_real_distribution<double>()(rng);
    const auto params = generic_params(arch, rng);
    const auto batch = gaussian_dataset(rng, 3 + rng() % 6, arch.input_dim);
    const maml::PassMode mode{arch.dropout_rate > 0.0, rng()};
    const auto analytic = maml::backward(params, batch, mode);
    const auto numeric = oracle::central_difference(
        [&](const std::vector<double>& v) { return maml::loss(with_values(params, v), batch, mode); }, params.values,
        1e-5);
    worst = std::max(worst, oracle::relative_error(analytic, numeric));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 30.0,
          std::to_string(archs) + " architectures, max relative error " + fmt(worst) + ", " + fmt(t, 3) + " s"};
}

Outcome criterion4() {
  maml::MamlConfig cfg;
  cfg.alpha = 0.5;
  cfg.first_order = false;
  cfg.inner_steps = 1;
  cfg.tasks_per_meta_batch = 2;
  cfg.samples_per_task = 8;
  cfg.support_size = 4;
  cfg.query_size = 4;
  cfg.hidden_dims = {2};
  cfg.dropout_rate = 0.0;
  std::mt19937_64 rng(4);
  double worst = 0.0;
  std::size_t params = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto pool = gaussian_dataset(rng, 40, 2);
    const auto theta = generic_params(maml::architecture_for(cfg, 2), rng);
    params = theta.values.size();
    const std::vector<maml::Episode> eps{maml::sample_task(pool, cfg, rng()), maml::sample_task(pool, cfg, rng())};
    const auto mg = maml::meta_gradient(theta, eps, cfg, 5);
    const auto numeric = oracle::central_difference(
        [&](const std::vector<double>& v) { return maml::meta_objective(with_values(theta, v), eps, cfg, 5); },
        theta.values, 1e-5);
    worst = std::max(worst, oracle::relative_error(mg.gradient, numeric));
  }
  return {worst < 1e-3 && params <= 10,
          std::to_string(params) + " parameters, 20 toy problems, max relative error " + fmt(worst)};
}

cfsgb::CfsgbResult recovery_run(unsigned threads) {
  const auto s = data::synthesize({2000, 200, 10, 0.5, 0.5, 7});
  return cfsgb::run_cfsgb(s.dataset, {}, {}, 0.005, threads);
}

Outcome criterion5() {
  const auto t0 = Clock::now();
  const auto s = data::synthesize({2000, 200, 10, 0.5, 0.5, 7});
  const auto r = cfsgb::run_cfsgb(s.dataset, {}, {}, 0.005, 1);
  const double t = seconds_since(t0);
  const std::set<std::size_t> chosen(r.selection.global_indices.begin(), r.selection.global_indices.end());
  std::size_t hits = 0;
  for (auto j : s.informative) hits += chosen.count(j);
  const std::size_t selected = chosen.size();
  return {hits >= 9 && selected < 60 && t < 60.0,
          std::to_string(hits) + "/10 informative recovered, r=" + std::to_string(selected) + ", " + fmt(t, 3) + " s"};
}

Outcome criterion6() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  gbdt::GbdtConfig gcfg;
  gcfg.n_trees = 10;
  gcfg.min_samples_leaf = 2;
  const std::vector<double> taus{0.0, 1e-4, 1e-3, 0.01, 0.03, 0.1, 0.3, 1.0};
  std::size_t configs = 0, failures = 0;
  while (configs < 250) {
    const std::size_t n = 40 + rng() % 300;
    const std::size_t m = 2 + rng() % 12;
    cfsgb::ChunkSpec spec{0.1 + 0.9 * u(rng), 0.8 * u(rng), {}};
    if (rng() % 4 == 0) spec.explicit_k = 1 + rng() % 8;
    std::vector<cfsgb::Chunk> chunks;
    try {
      chunks = cfsgb::make_chunks(n, spec);
    } catch (const Error&) {
      continue;
    }
    ++configs;
    bool ok = true;

    std::vector<char> seen(n, 0);
    for (const auto& c : chunks) {
      ok = ok && c.begin < c.end && c.end <= n;
      for (std::size_t i = c.begin; i < c.end && i < n; ++i) seen[i] = 1;
    }
    ok = ok && std::count(seen.begin(), seen.end(), 0) == 0;

    const auto s = data::synthesize({n, m, 1 + rng() % m, 0.5 * u(rng), 0.3 + 0.4 * u(rng), rng()});
    const auto imp = cfsgb::compute_chunk_importances(s.dataset, spec, gcfg);
    std::vector<std::size_t> prev;
    for (std::size_t t = 0; t < taus.size(); ++t) {
      const auto sel = cfsgb::select_from_importances(imp, taus[t]);
      std::set<std::size_t> uni;
      for (const auto& c : sel.per_chunk) uni.insert(c.indices.begin(), c.indices.end());
      ok = ok && std::vector<std::size_t>(uni.begin(), uni.end()) == sel.global_indices;
      if (t > 0) {
        ok = ok && std::includes(prev.begin(), prev.end(), sel.global_indices.begin(), sel.global_indices.end());
      }
      prev = sel.global_indices;
    }

    const double tau = taus[rng() % 4];
    const auto single = cfsgb::compute_chunk_importances(s.dataset, {1.0, spec.q, {}}, gcfg);
    const auto direct = cfsgb::select_by_threshold(gbdt::feature_importance(gbdt::train(s.dataset, gcfg)), tau);
    ok = ok && single.chunks.size() == 1 && cfsgb::select_from_importances(single, tau).global_indices == direct;

    failures += !ok;
  }
  const double t = seconds_since(t0);
  return {failures == 0 && t < 60.0, std::to_string(configs) + " configurations, " + std::to_string(failures) +
                                         " violations, " + fmt(t, 3) + " s"};
}

struct MamlRun {
  std::string checkpoint;
  std::string report;
  metrics::MetricsReport metrics;
  double seconds = 0.0;
};

/// Separable stand-in with 20 features (the projected width), stratified
/// 80/20 split, unscaled inputs.
MamlRun maml_run(unsigned threads) {
  const auto t0 = Clock::now();
  const std::uint64_t seed = 21;
  const auto s = data::synthesize({4000, 20, 10, 0.0, 0.5, seed});
  const auto [train, test] = data::stratified_split(s.dataset, {0.8, true, derive_seed(seed, "split")});
  maml::MamlConfig cfg;
  cfg.outer_iterations = 200;
  cfg.tasks_per_meta_batch = 4;
  cfg.samples_per_task = 100;
  cfg.support_size = 50;
  cfg.query_size = 50;
  cfg.alpha = 1e-4;
  cfg.beta = 1e-3;
  cfg.first_order = true;
  cfg.seed = derive_seed(seed, "maml");
  cfg.threads = threads;
  const auto trained = maml::meta_train(train, cfg);
  const auto ev = maml::meta_evaluate(trained.state.params, test, cfg);
  MamlRun out;
  out.metrics = metrics::evaluate(ev.probs, ev.labels);
  out.checkpoint = maml::encode_checkpoint(trained.state, cfg);
  out.report = metrics::report_to_json(out.metrics);
  out.seconds = seconds_since(t0);
  return out;
}

Outcome criterion7() {
  const auto r = maml_run(1);
  const auto& s = r.metrics.scalars;
  return {s.accuracy >= 0.95 && r.metrics.auc >= 0.99 && s.mcc >= 0.90 && r.seconds < 180.0,
          "accuracy " + fmt(s.accuracy) + ", AUC " + fmt(r.metrics.auc) + ", MCC " + fmt(s.mcc) + ", " +
              fmt(r.seconds, 3) + " s"};
}

Outcome criterion8() {
  const auto a = recovery_run(1), b = recovery_run(1), c = recovery_run(4);
  const auto sa = cfsgb::selection_to_json(a.selection);
  const auto ra = cfsgb::report_to_json(a.report);
  const bool selection_same = sa == cfsgb::selection_to_json(b.selection) && sa == cfsgb::selection_to_json(c.selection) &&
                              ra == cfsgb::report_to_json(b.report) && ra == cfsgb::report_to_json(c.report);
  const auto x = maml_run(1), y = maml_run(1), z = maml_run(4);
  const bool maml_same = x.checkpoint == y.checkpoint && x.checkpoint == z.checkpoint && x.report == y.report &&
                         x.report == z.report;
  return {selection_same && maml_same, std::string("selection ") + (selection_same ? "identical" : "differs") +
                                           ", checkpoint and report " + (maml_same ? "identical" : "differ") +
                                           " across reruns and 1 vs 4 threads"};
}

Outcome criterion9() {
  std::mt19937_64 rng(9);
  bool identity = true;
  for (int trial = 0; trial < 20; ++trial) {
    const auto support = gaussian_dataset(rng, 10 + rng() % 20, 1 + rng() % 6);
    const auto theta = maml::init_params({support.cols(), {8, 4}, 0.2}, rng());
    identity = identity && maml::inner_adapt(theta, support, 0.0, 1 + rng() % 4, rng()).values == theta.values;
  }

  const auto s = data::synthesize({600, 15, 3, 0.3, 0.5, 9});
  const cfsgb::ChunkSpec spec{0.5, 0.2, {}};
  const auto imp = cfsgb::compute_chunk_importances(s.dataset, spec, {});
  const auto stat = cfsgb::max_importance(imp);
  const double above = std::nextafter(*std::max_element(stat.begin(), stat.end()), 2.0);
  bool empty = false;
  try {
    cfsgb::run_cfsgb(s.dataset, spec, {}, above);
  } catch (const Error& e) {
    empty = e.code() == Errc::EmptySelection;
  }

  const data::LabeledDataset constant(s.dataset.rows(), s.dataset.cols(),
                                      std::vector<float>(s.dataset.features().begin(), s.dataset.features().end()),
                                      std::vector<std::uint8_t>(s.dataset.rows(), 1));
  const auto importance = gbdt::feature_importance(gbdt::train(constant, {}));
  const bool zero = std::all_of(importance.begin(), importance.end(), [](double v) { return v == 0.0; });

  return {identity && empty && zero, std::string("alpha=0 identity ") + (identity ? "holds" : "broken") +
                                         ", tau above max importance " + (empty ? "raises EmptySelection" : "does not raise") +
                                         ", constant-label importance " + (zero ? "all zero" : "nonzero")};
}

Outcome criterion10() {
  std::mt19937_64 rng(10);
  std::size_t monotone_cases = 0, monotone_bad = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const auto ds = gaussian_dataset(rng, 5 + rng() % 60, 1 + rng() % 4);
    gbdt::GbdtConfig cfg;
    cfg.n_trees = 20;
    cfg.max_depth = 1 + static_cast<int>(rng() % 3);
    cfg.min_samples_leaf = 1 + static_cast<int>(rng() % 3);
    const auto losses = gbdt::staged_log_loss(gbdt::train(ds, cfg), ds);
    ++monotone_cases;
    for (std::size_t t = 1; t < losses.size(); ++t) {
      if (losses[t] > losses[t - 1] + 1e-12) {
        ++monotone_bad;
        break;
      }
    }
  }

  std::size_t compared = 0, split_bad = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 2 + rng() % 7;
    const std::size_t m = 1 + rng() % 2;
    std::vector<float> x(n * m);
    for (auto& v : x) v = static_cast<float>(rng() % 6);
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = static_cast<std::uint8_t>(rng() & 1u);
    const data::LabeledDataset ds(n, m, x, y);
    gbdt::GbdtConfig cfg;
    cfg.n_trees = 1;
    cfg.max_depth = 1;
    cfg.min_samples_leaf = 1;
    const auto model = gbdt::train(ds, cfg);
    const auto best = oracle::best_root_split(ds, cfg.lambda, cfg.min_samples_leaf);
    const auto& root = model.trees.at(0).nodes.at(0);
    if (!best) {
      split_bad += !root.is_leaf();
      continue;
    }
    ++compared;
    bool ok = !root.is_leaf() && std::abs(root.gain - best->gain) <= 1e-9 * std::max(1.0, best->gain);
    if (ok && !best->tied) {
      ok = root.feature == static_cast<std::int32_t>(best->feature) && root.threshold == best->threshold;
    }
    split_bad += !ok;
  }
  return {monotone_bad == 0 && split_bad == 0 && monotone_cases >= 100 && compared >= 100,
          std::to_string(monotone_cases) + " loss curves (" + std::to_string(monotone_bad) + " non-monotone), " +
              std::to_string(compared) + " split-oracle comparisons (" + std::to_string(split_bad) + " mismatches)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"BODMAS-format data runs end to end", criterion1},
      {"metric oracle equivalence", criterion2},
      {"MLP gradient vs finite differences", criterion3},
      {"second-order meta-gradient vs finite differences", criterion4},
      {"CFSGB recovery of informative features", criterion5},
      {"CFSGB structural properties", criterion6},
      {"end-to-end MAML on separable data", criterion7},
      {"determinism across reruns and threads", criterion8},
      {"identity and degenerate contracts", criterion9},
      {"GBDT monotone loss and split oracle", criterion10},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << ": " << criteria[i].first << " ("
              << o.detail << ")" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed;
}
