#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "melemad/dataset.hpp"

namespace melemad::gbdt {

struct GbdtConfig {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 5;
  /// L2 penalty on leaf values (the denominator term of Newton leaves).
  double lambda = 1.0;
  /// Reserved for stochastic variants; exact greedy training consumes no
  /// randomness, so models are identical for any seed.
  std::uint64_t seed = 0;
};

void validate(const GbdtConfig& cfg);

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // rows with x < threshold go left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double leaf_value = 0.0;
  double gain = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const float> row) const noexcept;
  bool is_single_leaf() const noexcept { return nodes.size() == 1; }
};

struct GbdtModel {
  double base_score = 0.0;  // log-odds prior
  std::vector<RegressionTree> trees;
  GbdtConfig config;
  std::size_t n_features = 0;
};

/// Gradient boosting with logistic loss, exact greedy splits over midpoints of
/// consecutive distinct values, and Newton leaf values -G / (H + lambda).
GbdtModel train(const data::LabeledDataset& ds, const GbdtConfig& cfg);

/// Raw score (log-odds) using only the first `n_trees` trees.
double predict_margin(const GbdtModel& model, std::span<const float> row, std::size_t n_trees);

std::vector<double> predict_proba(const GbdtModel& model, const data::LabeledDataset& X);

/// Total split gain per feature normalized to sum to one; all zeros when the
/// model never splits.
std::vector<double> feature_importance(const GbdtModel& model);

/// Mean training log-loss after 0, 1, ..., n_trees boosting rounds.
std::vector<double> staged_log_loss(const GbdtModel& model, const data::LabeledDataset& ds);

std::string model_to_json(const GbdtModel& model);
GbdtModel model_from_json(std::string_view text);

}  // namespace melemad::gbdt
