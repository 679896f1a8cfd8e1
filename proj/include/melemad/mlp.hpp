#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "melemad/dataset.hpp"

namespace melemad::maml {

/// Fully connected network: input -> hidden[0] (ReLU) -> dropout ->
/// hidden[1..] (ReLU) -> single sigmoid output.
struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims{64, 32, 16};
  double dropout_rate = 0.2;

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

void validate(const MlpArchitecture& arch);

/// Sum over layers of (fan_in + 1) * fan_out.
std::size_t parameter_count(const MlpArchitecture& arch);

/// Flat parameters, layer-major; each layer stores its weight matrix
/// (fan_out x fan_in, row-major) followed by its bias vector.
struct ModelParams {
  MlpArchitecture arch;
  std::vector<double> values;
};

/// Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)); zero biases.
ModelParams init_params(const MlpArchitecture& arch, std::uint64_t seed);

/// Dropout is active only when `training` is set; the mask is a pure function
/// of `dropout_seed` and the batch shape, so a backward or Hessian pass with
/// the same mode sees exactly the mask of its forward pass.
struct PassMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

inline constexpr double kProbClamp = 1e-7;

/// Per-row probabilities clamped to [kProbClamp, 1 - kProbClamp].
std::vector<double> forward(const ModelParams& params, const data::LabeledDataset& X, PassMode mode = {});

/// Mean binary cross-entropy; probabilities are clamped before the logs.
double bce_loss(std::span<const double> probs, std::span<const std::uint8_t> labels);

double loss(const ModelParams& params, const data::LabeledDataset& batch, PassMode mode = {});

struct LossGrad {
  double loss = 0.0;
  std::vector<double> probs;
  std::vector<double> grad;
};

/// Mean BCE and its gradient in the ModelParams layout. The output delta is
/// sigmoid(z) - y, the logit-form derivative, which equals the derivative of
/// the clamped loss wherever the clamp is inactive.
LossGrad loss_and_gradient(const ModelParams& params, const data::LabeledDataset& batch, PassMode mode = {});

std::vector<double> backward(const ModelParams& params, const data::LabeledDataset& batch, PassMode mode = {});

/// Exact product of the loss Hessian with `v` (forward-over-reverse
/// R-operator). ReLU contributes no curvature away from its kink.
std::vector<double> hessian_vector_product(const ModelParams& params, const data::LabeledDataset& batch,
                                           std::span<const double> v, PassMode mode = {});

}  // namespace melemad::maml
