#pragma once

// Command implementations behind the `melemad` executable. Each command reads
// its inputs, validates everything before touching the output directory, and
// writes every file through a temporary + rename.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "melemad/cfsgb.hpp"
#include "melemad/dataset.hpp"
#include "melemad/error.hpp"
#include "melemad/gbdt.hpp"
#include "melemad/maml.hpp"
#include "melemad/metrics.hpp"

namespace melemad::pipeline {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "MELEMAD_OUTPUT_DIR";

struct PipelineConfig {
  std::filesystem::path input;
  std::string label_column = "label";
  bool scale = true;
  /// Empty means: $MELEMAD_OUTPUT_DIR, else "melemad_out".
  std::filesystem::path output_dir;

  cfsgb::ChunkSpec chunks;
  gbdt::GbdtConfig gbdt;
  std::optional<double> tau;
  std::optional<std::size_t> top_k;

  data::SplitSpec split;
  maml::MamlConfig maml;

  /// Required before any stage runs; every stage seed derives from it.
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

/// Parses the JSON config. Hyperparameter keys are the long names
/// ("Chunk Size (p)", "Inner-loop Learning Rate (alpha)", ...); anything
/// omitted keeps its default.
PipelineConfig config_from_json(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

/// Seeds each stage from the global seed: split, gbdt and maml receive
/// derive_seed(seed, "<stage>"). Also resolves an empty output directory.
void finalize(PipelineConfig& cfg);

std::filesystem::path default_output_dir();

/// Throws Error(InvalidArgument) on the first violated invariant.
void validate(const PipelineConfig& cfg, bool needs_selection_rule);

/// Exit status for a failure: 2 for validation problems (bad flags, bad or
/// missing inputs), 1 for failures while running.
int exit_code_for(Errc code) noexcept;

// ---------------------------------------------------------------------------

struct SynthOptions {
  data::SyntheticSpec spec;
  std::filesystem::path output_dir;
  std::string format = "csv";  // csv | bin
};

struct SynthOutputs {
  std::filesystem::path dataset;
  std::filesystem::path informative;
};

SynthOutputs cmd_synth(const SynthOptions& opts);

struct SelectOutputs {
  std::filesystem::path selection;
  std::filesystem::path projected;
  std::filesystem::path report;
  std::filesystem::path timing;
  std::size_t selected = 0;
  double tau = 0.0;
};

SelectOutputs cmd_select(const PipelineConfig& cfg);

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path scaler;
  std::filesystem::path test_split;
  std::size_t iterations = 0;
};

/// Splits `cfg.input`, fits the scaler on the training side only, and
/// meta-trains. With `resume` the run continues from that checkpoint up to
/// cfg.maml.outer_iterations total iterations. A checkpoint is written every
/// `checkpoint_every` iterations and at the end.
TrainOutputs cmd_meta_train(const PipelineConfig& cfg, const std::optional<std::filesystem::path>& resume = {},
                            std::size_t checkpoint_every = 50);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path test_data;
  std::optional<std::filesystem::path> scaler;
  std::filesystem::path output_dir;
  std::string label_column = "label";
  unsigned threads = 1;
  std::optional<std::size_t> eval_tasks;
};

struct EvalOutputs {
  std::filesystem::path report;
  std::filesystem::path roc;
  metrics::MetricsReport metrics;
};

EvalOutputs cmd_evaluate(const EvalOptions& opts);

}  // namespace melemad::pipeline
