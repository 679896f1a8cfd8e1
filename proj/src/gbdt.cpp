#include "melemad/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "melemad/error.hpp"

namespace melemad::gbdt {

void validate(const GbdtConfig& cfg) {
  if (cfg.n_trees < 1) throw Error(Errc::InvalidArgument, "n_trees must be >= 1");
  if (cfg.max_depth < 1) throw Error(Errc::InvalidArgument, "max_depth must be >= 1");
  if (!(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0)) {
    throw Error(Errc::InvalidArgument, "learning_rate must lie in (0, 1]");
  }
  if (cfg.min_samples_leaf < 1) throw Error(Errc::InvalidArgument, "min_samples_leaf must be >= 1");
  if (!(cfg.lambda >= 0.0)) throw Error(Errc::InvalidArgument, "lambda must be >= 0");
}

double RegressionTree::predict(std::span<const float> row) const noexcept {
  std::size_t at = 0;
  while (!nodes[at].is_leaf()) {
    const auto& n = nodes[at];
    at = static_cast<double>(row[static_cast<std::size_t>(n.feature)]) < n.threshold
             ? static_cast<std::size_t>(n.left)
             : static_cast<std::size_t>(n.right);
  }
  return nodes[at].leaf_value;
}

namespace {

constexpr double kPriorClamp = 1e-6;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double log_loss_term(double margin, std::uint8_t y) {
  // log(1 + e^-z) for y = 1, log(1 + e^z) for y = 0, computed stably.
  const double z = y ? margin : -margin;
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

struct Split {
  std::int32_t feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Builds one tree over a chunk of rows. Each node carries, per feature, the
/// node's rows sorted by that feature's value; children receive stable
/// partitions of the parent lists so sorting happens once per training call.
class TreeBuilder {
 public:
  TreeBuilder(const data::LabeledDataset& ds, const GbdtConfig& cfg, const std::vector<double>& grad,
              const std::vector<double>& hess)
      : ds_(ds), cfg_(cfg), grad_(grad), hess_(hess), goes_left_(ds.rows(), 0) {}

  RegressionTree build(std::vector<std::vector<std::uint32_t>> sorted) {
    tree_.nodes.clear();
    grow(std::move(sorted), 0);
    return std::move(tree_);
  }

 private:
  double score(double g, double h) const { return g * g / (h + cfg_.lambda); }

  Split best_split(const std::vector<std::vector<std::uint32_t>>& sorted, double g_total,
                   double h_total) const {
    Split best;
    const std::size_t count = sorted[0].size();
    const auto min_leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    if (count < 2 * min_leaf) return best;
    const double parent = score(g_total, h_total);
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      const auto& order = sorted[f];
      double gl = 0.0, hl = 0.0;
      for (std::size_t pos = 0; pos + 1 < count; ++pos) {
        const std::uint32_t r = order[pos];
        gl += grad_[r];
        hl += hess_[r];
        const std::size_t n_left = pos + 1;
        if (n_left < min_leaf) continue;
        if (count - n_left < min_leaf) break;
        const float a = ds_.at(r, f);
        const float b = ds_.at(order[pos + 1], f);
        if (!(a < b)) continue;
        const double gain = 0.5 * (score(gl, hl) + score(g_total - gl, h_total - hl) - parent);
        if (gain > best.gain) {
          best.feature = static_cast<std::int32_t>(f);
          best.threshold = 0.5 * (static_cast<double>(a) + static_cast<double>(b));
          best.gain = gain;
        }
      }
    }
    return best;
  }

  std::int32_t grow(std::vector<std::vector<std::uint32_t>> sorted, int depth) {
    const auto id = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    // Totals are accumulated in ascending row order so they do not depend on
    // which feature list is walked.
    std::vector<std::uint32_t> rows = sorted[0];
    std::sort(rows.begin(), rows.end());
    double g = 0.0, h = 0.0;
    for (auto r : rows) {
      g += grad_[r];
      h += hess_[r];
    }

    Split split;
    if (depth < cfg_.max_depth) split = best_split(sorted, g, h);
    if (split.feature < 0) {
      tree_.nodes[static_cast<std::size_t>(id)].leaf_value = -g / (h + cfg_.lambda);
      return id;
    }

    const auto f = static_cast<std::size_t>(split.feature);
    for (auto r : rows) goes_left_[r] = static_cast<double>(ds_.at(r, f)) < split.threshold;
    std::vector<std::vector<std::uint32_t>> left(sorted.size()), right(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      for (auto r : sorted[k]) (goes_left_[r] ? left[k] : right[k]).push_back(r);
    }
    sorted.clear();
    sorted.shrink_to_fit();

    const std::int32_t l = grow(std::move(left), depth + 1);
    const std::int32_t rgt = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.gain = split.gain;
    node.left = l;
    node.right = rgt;
    return id;
  }

  const data::LabeledDataset& ds_;
  const GbdtConfig& cfg_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  std::vector<char> goes_left_;
  RegressionTree tree_;
};

}  // namespace

GbdtModel train(const data::LabeledDataset& ds, const GbdtConfig& cfg) {
  validate(cfg);
  const std::size_t n = ds.rows();
  const std::size_t m = ds.cols();

  GbdtModel model;
  model.config = cfg;
  model.n_features = m;
  const double mean = static_cast<double>(ds.count_label(1)) / static_cast<double>(n);
  const double prior = std::clamp(mean, kPriorClamp, 1.0 - kPriorClamp);
  model.base_score = std::log(prior / (1.0 - prior));

  std::vector<std::vector<std::uint32_t>> presorted(m, std::vector<std::uint32_t>(n));
  for (std::size_t f = 0; f < m; ++f) {
    auto& order = presorted[f];
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return ds.at(a, f) < ds.at(b, f); });
  }

  std::vector<double> margin(n, model.base_score), grad(n), hess(n);
  TreeBuilder builder(ds, cfg, grad, hess);
  model.trees.reserve(static_cast<std::size_t>(cfg.n_trees));
  for (int t = 0; t < cfg.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin[i]);
      grad[i] = p - static_cast<double>(ds.label(i));
      hess[i] = std::max(p * (1.0 - p), 1e-16);
    }
    RegressionTree tree = builder.build(presorted);
    for (std::size_t i = 0; i < n; ++i) margin[i] += cfg.learning_rate * tree.predict(ds.row(i));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

double predict_margin(const GbdtModel& model, std::span<const float> row, std::size_t n_trees) {
  double z = model.base_score;
  const std::size_t limit = std::min(n_trees, model.trees.size());
  for (std::size_t t = 0; t < limit; ++t) z += model.config.learning_rate * model.trees[t].predict(row);
  return z;
}

std::vector<double> predict_proba(const GbdtModel& model, const data::LabeledDataset& X) {
  if (X.cols() != model.n_features) {
    throw Error(Errc::DimensionMismatch, "model expects " + std::to_string(model.n_features) +
                                             " features, got " + std::to_string(X.cols()));
  }
  std::vector<double> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    out[i] = sigmoid(predict_margin(model, X.row(i), model.trees.size()));
  }
  return out;
}

std::vector<double> feature_importance(const GbdtModel& model) {
  std::vector<double> scores(model.n_features, 0.0);
  for (const auto& tree : model.trees) {
    for (const auto& node : tree.nodes) {
      if (!node.is_leaf()) scores[static_cast<std::size_t>(node.feature)] += node.gain;
    }
  }
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  if (total > 0.0) {
    for (auto& s : scores) s /= total;
  }
  return scores;
}

std::vector<double> staged_log_loss(const GbdtModel& model, const data::LabeledDataset& ds) {
  const std::size_t n = ds.rows();
  std::vector<double> margin(n, model.base_score);
  std::vector<double> out;
  out.reserve(model.trees.size() + 1);
  auto mean_loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += log_loss_term(margin[i], ds.label(i));
    return s / static_cast<double>(n);
  };
  out.push_back(mean_loss());
  for (const auto& tree : model.trees) {
    for (std::size_t i = 0; i < n; ++i) margin[i] += model.config.learning_rate * tree.predict(ds.row(i));
    out.push_back(mean_loss());
  }
  return out;
}

std::string model_to_json(const GbdtModel& model) {
  nlohmann::json j;
  j["base_score"] = model.base_score;
  j["n_features"] = model.n_features;
  j["config"] = {{"n_trees", model.config.n_trees},
                 {"max_depth", model.config.max_depth},
                 {"learning_rate", model.config.learning_rate},
                 {"min_samples_leaf", model.config.min_samples_leaf},
                 {"lambda", model.config.lambda},
                 {"seed", model.config.seed}};
  auto trees = nlohmann::json::array();
  for (const auto& tree : model.trees) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes) {
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.leaf_value, n.gain});
    }
    trees.push_back({{"nodes", std::move(nodes)}});
  }
  j["trees"] = std::move(trees);
  return j.dump() + "\n";
}

GbdtModel model_from_json(std::string_view text) {
  GbdtModel model;
  try {
    auto j = nlohmann::json::parse(text);
    model.base_score = j.at("base_score").get<double>();
    model.n_features = j.at("n_features").get<std::size_t>();
    const auto& c = j.at("config");
    model.config.n_trees = c.at("n_trees").get<int>();
    model.config.max_depth = c.at("max_depth").get<int>();
    model.config.learning_rate = c.at("learning_rate").get<double>();
    model.config.min_samples_leaf = c.at("min_samples_leaf").get<int>();
    model.config.lambda = c.at("lambda").get<double>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("trees")) {
      RegressionTree tree;
      for (const auto& n : t.at("nodes")) {
        TreeNode node;
        node.feature = n.at(0).get<std::int32_t>();
        node.threshold = n.at(1).get<double>();
        node.left = n.at(2).get<std::int32_t>();
        node.right = n.at(3).get<std::int32_t>();
        node.leaf_value = n.at(4).get<double>();
        node.gain = n.at(5).get<double>();
        tree.nodes.push_back(node);
      }
      model.trees.push_back(std::move(tree));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed model: ") + e.what());
  }
  const auto size_ok = [&](const RegressionTree& t) {
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) continue;
      if (static_cast<std::size_t>(n.feature) >= model.n_features) return false;
      if (n.left < 0 || n.right < 0 || static_cast<std::size_t>(n.left) >= t.nodes.size() ||
          static_cast<std::size_t>(n.right) >= t.nodes.size())
        return false;
    }
    return !t.nodes.empty();
  };
  for (const auto& t : model.trees) {
    if (!size_ok(t)) throw Error(Errc::IndexOutOfRange, "tree references a missing node or feature");
  }
  return model;
}

}  // namespace melemad::gbdt
