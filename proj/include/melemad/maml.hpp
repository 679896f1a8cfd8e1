#pragma once

// Model-agnostic meta-learning for binary classification: episodic task
// sampling, inner-loop SGD on the support set, query loss at the adapted
// parameters, and an Adam outer loop over the mean query loss.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "melemad/dataset.hpp"
#include "melemad/mlp.hpp"

namespace melemad::maml {

struct MamlConfig {
  double alpha = 1e-4;  // inner-loop learning rate
  double beta = 1e-3;   // outer-loop (Adam) learning rate
  std::size_t outer_iterations = 1000;
  std::size_t tasks_per_meta_batch = 4;
  std::size_t samples_per_task = 100;
  std::size_t support_size = 50;
  std::size_t query_size = 50;
  std::size_t inner_steps = 1;
  bool first_order = true;
  std::uint64_t seed = 0;

  std::vector<std::size_t> hidden_dims{64, 32, 16};
  double dropout_rate = 0.2;
  /// Meta-test only: whether dropout is active while adapting on a support
  /// set. Query predictions are always made in inference mode.
  bool dropout_during_adaptation = true;
  std::size_t eval_tasks = 10;
  unsigned threads = 1;
};

void validate(const MamlConfig& cfg);

MlpArchitecture architecture_for(const MamlConfig& cfg, std::size_t input_dim);

struct Episode {
  data::LabeledDataset support;
  data::LabeledDataset query;
  std::size_t task_index = 0;
};

/// Draws samples_per_task rows without replacement, stratified to the pool's
/// class ratio, and splits them into disjoint support and query sets that
/// each hold both classes whenever the draw allows it.
Episode sample_task(const data::LabeledDataset& pool, const MamlConfig& cfg, std::uint64_t task_seed,
                    std::size_t task_index = 0);

/// Pool row indices behind an episode, for disjointness checks.
struct EpisodeIndices {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};
EpisodeIndices sample_task_indices(const data::LabeledDataset& pool, const MamlConfig& cfg,
                                   std::uint64_t task_seed);

/// `steps` plain gradient-descent steps of size alpha on the support loss.
/// Step s uses dropout seed derive_seed(dropout_seed, s) when `training`.
ModelParams inner_adapt(const ModelParams& theta, const data::LabeledDataset& support, double alpha,
                        std::size_t steps, std::uint64_t dropout_seed, bool training = true);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState zeros(std::size_t size);
};

/// One bias-corrected Adam step in place.
void adam_update(std::vector<double>& params, const std::vector<double>& grad, AdamState& state, double lr);

struct MetaGradient {
  std::vector<double> gradient;
  double meta_loss = 0.0;
  double query_accuracy = 0.0;
};

/// Mean query loss over the episodes and its gradient with respect to theta.
/// first_order uses the query gradient at the adapted parameters; otherwise
/// the gradient is pulled back through every inner step with exact
/// Hessian-vector products. Episode i uses dropout seed
/// derive_seed(step_seed, i); episodes are reduced in index order.
MetaGradient meta_gradient(const ModelParams& theta, const std::vector<Episode>& episodes, const MamlConfig& cfg,
                           std::uint64_t step_seed);

/// The scalar objective meta_gradient differentiates; used by finite
/// difference checks.
double meta_objective(const ModelParams& theta, const std::vector<Episode>& episodes, const MamlConfig& cfg,
                      std::uint64_t step_seed);

struct MetaStepResult {
  ModelParams params;
  AdamState adam;
  double meta_loss = 0.0;
  double query_accuracy = 0.0;
};

MetaStepResult meta_step(const ModelParams& theta, const std::vector<Episode>& episodes, const MamlConfig& cfg,
                         const AdamState& adam, std::uint64_t step_seed);

struct TrainLogEntry {
  std::size_t iteration = 0;  // 1-based, continues across resumes
  double meta_loss = 0.0;
  double query_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  ModelParams params;
  AdamState adam;
  std::size_t iteration = 0;  // completed outer iterations
};

struct MetaTrainResult {
  TrainState state;
  std::vector<TrainLogEntry> log;
};

/// Called after every completed outer iteration.
using IterationHook = std::function<void(const TrainState&, const TrainLogEntry&)>;

/// Runs cfg.outer_iterations meta-steps. Episodes for global iteration t are
/// a pure function of (cfg.seed, t), so a resumed run samples the same tasks
/// an uninterrupted run would.
MetaTrainResult meta_train(const data::LabeledDataset& train_pool, const MamlConfig& cfg,
                           std::optional<TrainState> resume = std::nullopt, const IterationHook& hook = {});

struct Evaluation {
  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
};

/// Samples cfg.eval_tasks episodes from the test pool, adapts a copy of theta
/// on each support set and predicts that episode's query set.
Evaluation meta_evaluate(const ModelParams& theta, const data::LabeledDataset& test_pool, const MamlConfig& cfg);

std::string train_log_to_csv(const std::vector<TrainLogEntry>& log, bool header = true);

// Checkpoint: a "MELEMAD-CHECKPOINT 1" line, a one-line JSON header
// (architecture, config, seed, iteration, sizes), then the parameters and the
// two Adam moment vectors as little-endian float32.

struct Checkpoint {
  TrainState state;
  MamlConfig config;
};

std::string encode_checkpoint(const TrainState& state, const MamlConfig& cfg);
Checkpoint decode_checkpoint(std::string_view bytes);

}  // namespace melemad::maml
