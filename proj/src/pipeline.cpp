#include "melemad/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "melemad/util.hpp"

namespace melemad::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace keys {
constexpr const char* kChunks = "Number of Chunks (k)";
constexpr const char* kChunkSize = "Chunk Size (p)";
constexpr const char* kOverlap = "Overlap between Chunks (q)";
constexpr const char* kTau = "Threshold for top 100 features (tau)";
constexpr const char* kTopK = "Top features";
constexpr const char* kAlpha = "Inner-loop Learning Rate (alpha)";
constexpr const char* kBeta = "Outer-loop Learning Rate (beta)";
constexpr const char* kIterations = "Number of Iterations (Outer Loop)";
constexpr const char* kTaskSize = "Number of Samples per Task (|D_task|)";
constexpr const char* kSupport = "Support Set Size (|P_i|)";
constexpr const char* kQuery = "Query Set Size (|Q_i|)";
constexpr const char* kLoss = "Loss Function";
constexpr const char* kOptimizer = "Optimizer";
constexpr const char* kTasks = "Tasks per Meta-Batch (T)";
}  // namespace keys

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig config_from_json(std::string_view text) {
  PipelineConfig cfg;
  try {
    const auto j = json::parse(text);
    read_opt(j, "seed", cfg.seed);
    read_opt(j, "threads", cfg.threads);
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("input")) cfg.input = d.at("input").get<std::string>();
      read_opt(d, "label_column", cfg.label_column);
      read_opt(d, "scale", cfg.scale);
    }
    if (j.contains("split")) {
      read_opt(j.at("split"), "train_fraction", cfg.split.train_fraction);
      read_opt(j.at("split"), "stratified", cfg.split.stratified);
    }
    if (j.contains("cfsgb")) {
      const auto& c = j.at("cfsgb");
      read_opt(c, keys::kChunks, cfg.chunks.explicit_k);
      read_opt(c, keys::kChunkSize, cfg.chunks.p);
      read_opt(c, keys::kOverlap, cfg.chunks.q);
      read_opt(c, keys::kTau, cfg.tau);
      read_opt(c, keys::kTopK, cfg.top_k);
    }
    if (j.contains("gbdt")) {
      const auto& g = j.at("gbdt");
      read_opt(g, "n_trees", cfg.gbdt.n_trees);
      read_opt(g, "max_depth", cfg.gbdt.max_depth);
      read_opt(g, "learning_rate", cfg.gbdt.learning_rate);
      read_opt(g, "min_samples_leaf", cfg.gbdt.min_samples_leaf);
      read_opt(g, "lambda", cfg.gbdt.lambda);
    }
    if (j.contains("maml")) {
      const auto& m = j.at("maml");
      auto& mc = cfg.maml;
      read_opt(m, keys::kAlpha, mc.alpha);
      read_opt(m, keys::kBeta, mc.beta);
      read_opt(m, keys::kIterations, mc.outer_iterations);
      read_opt(m, keys::kTaskSize, mc.samples_per_task);
      read_opt(m, keys::kSupport, mc.support_size);
      read_opt(m, keys::kQuery, mc.query_size);
      read_opt(m, keys::kTasks, mc.tasks_per_meta_batch);
      read_opt(m, "inner_steps", mc.inner_steps);
      read_opt(m, "first_order", mc.first_order);
      read_opt(m, "hidden_dims", mc.hidden_dims);
      read_opt(m, "dropout_rate", mc.dropout_rate);
      read_opt(m, "dropout_during_adaptation", mc.dropout_during_adaptation);
      read_opt(m, "eval_tasks", mc.eval_tasks);
      std::string loss = "BCE", optimizer = "Adam";
      read_opt(m, keys::kLoss, loss);
      read_opt(m, keys::kOptimizer, optimizer);
      if (loss != "BCE") throw Error(Errc::InvalidArgument, "only the BCE loss is supported, got " + loss);
      if (optimizer != "Adam") {
        throw Error(Errc::InvalidArgument, "only the Adam optimizer is supported, got " + optimizer);
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed config: ") + e.what());
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::Io, "config file not found: " + path.string());
  return config_from_json(read_file(path));
}

std::string config_to_json(const PipelineConfig& cfg) {
  json j;
  j["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);
  j["threads"] = cfg.threads;
  j["output_dir"] = cfg.output_dir.string();
  j["data"] = {{"input", cfg.input.string()}, {"label_column", cfg.label_column}, {"scale", cfg.scale}};
  j["split"] = {{"train_fraction", cfg.split.train_fraction}, {"stratified", cfg.split.stratified}};
  json c;
  c[keys::kChunks] = cfg.chunks.explicit_k ? json(*cfg.chunks.explicit_k) : json(nullptr);
  c[keys::kChunkSize] = cfg.chunks.p;
  c[keys::kOverlap] = cfg.chunks.q;
  c[keys::kTau] = cfg.tau ? json(*cfg.tau) : json(nullptr);
  c[keys::kTopK] = cfg.top_k ? json(*cfg.top_k) : json(nullptr);
  j["cfsgb"] = c;
  j["gbdt"] = {{"n_trees", cfg.gbdt.n_trees},
               {"max_depth", cfg.gbdt.max_depth},
               {"learning_rate", cfg.gbdt.learning_rate},
               {"min_samples_leaf", cfg.gbdt.min_samples_leaf},
               {"lambda", cfg.gbdt.lambda}};
  const auto& mc = cfg.maml;
  json m;
  m[keys::kAlpha] = mc.alpha;
  m[keys::kBeta] = mc.beta;
  m[keys::kIterations] = mc.outer_iterations;
  m[keys::kTaskSize] = mc.samples_per_task;
  m[keys::kSupport] = mc.support_size;
  m[keys::kQuery] = mc.query_size;
  m[keys::kLoss] = "BCE";
  m[keys::kOptimizer] = "Adam";
  m[keys::kTasks] = mc.tasks_per_meta_batch;
  m["inner_steps"] = mc.inner_steps;
  m["first_order"] = mc.first_order;
  m["hidden_dims"] = mc.hidden_dims;
  m["dropout_rate"] = mc.dropout_rate;
  m["dropout_during_adaptation"] = mc.dropout_during_adaptation;
  m["eval_tasks"] = mc.eval_tasks;
  j["maml"] = m;
  return j.dump(2) + "\n";
}

fs::path default_output_dir() {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "melemad_out";
}

void finalize(PipelineConfig& cfg) {
  if (!cfg.seed) throw Error(Errc::InvalidArgument, "a seed is required (--seed or \"seed\" in the config)");
  cfg.split.seed = derive_seed(*cfg.seed, "split");
  cfg.gbdt.seed = derive_seed(*cfg.seed, "gbdt");
  cfg.maml.seed = derive_seed(*cfg.seed, "maml");
  cfg.maml.threads = cfg.threads;
  if (cfg.output_dir.empty()) cfg.output_dir = default_output_dir();
}

void validate(const PipelineConfig& cfg, bool needs_selection_rule) {
  if (!cfg.seed) throw Error(Errc::InvalidArgument, "a seed is required");
  if (cfg.input.empty()) throw Error(Errc::InvalidArgument, "no input dataset given");
  if (!fs::exists(cfg.input)) throw Error(Errc::Io, "input file not found: " + cfg.input.string());
  if (cfg.threads < 1) throw Error(Errc::InvalidArgument, "threads must be >= 1");
  if (!(cfg.chunks.p > 0.0 && cfg.chunks.p <= 1.0)) throw Error(Errc::InvalidArgument, "p must lie in (0, 1]");
  if (!(cfg.chunks.q >= 0.0 && cfg.chunks.q < 1.0)) throw Error(Errc::InvalidArgument, "q must lie in [0, 1)");
  if (cfg.chunks.explicit_k && *cfg.chunks.explicit_k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  gbdt::validate(cfg.gbdt);
  if (needs_selection_rule) {
    if (cfg.tau && cfg.top_k) throw Error(Errc::InvalidArgument, "give either tau or top-k, not both");
    if (!cfg.tau && !cfg.top_k) throw Error(Errc::InvalidArgument, "a threshold (tau) or top-k is required");
    if (cfg.tau && !(*cfg.tau >= 0.0)) throw Error(Errc::InvalidArgument, "tau must be >= 0");
    if (cfg.top_k && *cfg.top_k < 1) throw Error(Errc::InvalidArgument, "top-k must be >= 1");
  }
  if (!(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction < 1.0)) {
    throw Error(Errc::InvalidArgument, "train_fraction must lie strictly between 0 and 1");
  }
  maml::validate(cfg.maml);
  maml::MlpArchitecture probe{1, cfg.maml.hidden_dims, cfg.maml.dropout_rate};
  maml::validate(probe);
}

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument:
    case Errc::Io:
    case Errc::MissingLabelColumn:
    case Errc::NonNumericCell:
    case Errc::NonBinaryLabel:
    case Errc::RaggedRow:
    case Errc::BadMagic:
    case Errc::TruncatedFile:
    case Errc::DimensionOverflow:
    case Errc::DegenerateStride:
    case Errc::ChunkLargerThanData:
    case Errc::ChunkCoverageGap:
      return 2;
    default:
      return 1;
  }
}

// ---------------------------------------------------------------------------

SynthOutputs cmd_synth(const SynthOptions& opts) {
  data::validate(opts.spec);
  if (opts.format != "csv" && opts.format != "bin") {
    throw Error(Errc::InvalidArgument, "format must be csv or bin, got " + opts.format);
  }
  const auto synthetic = data::synthesize(opts.spec);
  SynthOutputs out;
  out.dataset = opts.output_dir / ("synthetic." + opts.format);
  out.informative = opts.output_dir / "informative.json";
  data::save_any(synthetic.dataset, out.dataset);
  json j;
  j["informative"] = synthetic.informative;
  j["n"] = opts.spec.n;
  j["m"] = opts.spec.m;
  j["noise_sigma"] = opts.spec.noise_sigma;
  j["class_balance"] = opts.spec.class_balance;
  j["seed"] = opts.spec.seed;
  write_file_atomic(out.informative, j.dump(2) + "\n");
  return out;
}

SelectOutputs cmd_select(const PipelineConfig& cfg) {
  validate(cfg, true);
  const auto ds = data::load_any(cfg.input, cfg.label_column);
  cfsgb::make_chunks(ds.rows(), cfg.chunks);
  if (cfg.top_k && *cfg.top_k > ds.cols()) {
    throw Error(Errc::InvalidArgument, "top-k exceeds the feature count " + std::to_string(ds.cols()));
  }

  double tau = cfg.tau.value_or(0.0);
  cfsgb::CfsgbResult result;
  if (cfg.top_k) {
    // One importance pass serves both the threshold search and the selection.
    const auto imp = cfsgb::compute_chunk_importances(ds, cfg.chunks, cfg.gbdt, cfg.threads);
    tau = cfsgb::threshold_for_top_k(imp, *cfg.top_k);
    result.selection = cfsgb::select_from_importances(imp, tau);
    result.projected = cfsgb::project_dataset(ds, result.selection);
    result.report.k = imp.chunks.size();
    result.report.n = ds.rows();
    result.report.m = ds.cols();
    result.report.r = result.selection.global_indices.size();
    result.report.chunks = imp.stats;
    for (std::size_t i = 0; i < imp.stats.size(); ++i) {
      result.report.chunks[i].selected = result.selection.per_chunk[i].indices.size();
      result.report.seconds_importance += imp.stats[i].seconds;
    }
  } else {
    result = cfsgb::run_cfsgb(ds, cfg.chunks, cfg.gbdt, tau, cfg.threads);
  }

  SelectOutputs out;
  out.selection = cfg.output_dir / "selected_features.json";
  out.projected = cfg.output_dir / "projected.bin";
  out.report = cfg.output_dir / "cfsgb_report.json";
  out.timing = cfg.output_dir / "cfsgb_timing.json";
  out.selected = result.selection.global_indices.size();
  out.tau = tau;
  write_file_atomic(out.selection, cfsgb::selection_to_json(result.selection));
  data::save_binary(result.projected, out.projected);
  write_file_atomic(out.report, cfsgb::report_to_json(result.report));
  write_file_atomic(out.timing, cfsgb::timing_to_json(result.report));
  return out;
}

namespace {

/// Rows of an existing log whose iteration is <= `upto`, header included.
std::string kept_log_prefix(const fs::path& log, std::size_t upto) {
  std::string kept = "iteration,meta_loss,query_accuracy,seconds\n";
  if (!fs::exists(log)) return kept;
  std::istringstream in(read_file(log));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t it = std::stoull(line.substr(0, line.find(',')));
    if (it <= upto) kept += line + "\n";
  }
  return kept;
}

}  // namespace

TrainOutputs cmd_meta_train(const PipelineConfig& cfg, const std::optional<fs::path>& resume,
                            std::size_t checkpoint_every) {
  validate(cfg, false);
  std::optional<maml::TrainState> start;
  if (resume) {
    if (!fs::exists(*resume)) throw Error(Errc::Io, "checkpoint not found: " + resume->string());
    start = maml::decode_checkpoint(read_file(*resume)).state;
  }
  const auto ds = data::load_any(cfg.input, cfg.label_column);
  auto [train, test] = data::stratified_split(ds, cfg.split);

  TrainOutputs out;
  out.checkpoint = cfg.output_dir / "checkpoint.ckpt";
  out.log = cfg.output_dir / "train_log.csv";
  out.scaler = cfg.output_dir / "scaler.json";
  out.test_split = cfg.output_dir / "meta_test.bin";

  std::optional<data::ScalerParams> scaler;
  if (cfg.scale) {
    scaler = data::fit_scaler(train);
    train = data::apply_scaler(train, *scaler);
  }
  // Fails fast (before anything is written) when the pools cannot supply
  // the configured episodes.
  maml::sample_task_indices(train, cfg.maml, 0);
  maml::sample_task_indices(test, cfg.maml, 0);

  maml::MamlConfig mc = cfg.maml;
  const std::size_t done = start ? start->iteration : 0;
  mc.outer_iterations = mc.outer_iterations > done ? mc.outer_iterations - done : 0;

  std::string log_text = kept_log_prefix(out.log, done);
  if (!resume) log_text = "iteration,meta_loss,query_accuracy,seconds\n";
  auto hook = [&](const maml::TrainState& state, const maml::TrainLogEntry& entry) {
    log_text += maml::train_log_to_csv({entry}, false);
    if (checkpoint_every > 0 && state.iteration % checkpoint_every == 0) {
      write_file_atomic(out.checkpoint, maml::encode_checkpoint(state, cfg.maml));
      write_file_atomic(out.log, log_text);
    }
  };
  auto result = maml::meta_train(train, mc, start, hook);
  if (scaler) write_file_atomic(out.scaler, data::scaler_to_json(*scaler));
  data::save_binary(test, out.test_split);
  write_file_atomic(out.checkpoint, maml::encode_checkpoint(result.state, cfg.maml));
  write_file_atomic(out.log, log_text);
  out.iterations = result.state.iteration;
  return out;
}

EvalOutputs cmd_evaluate(const EvalOptions& opts) {
  if (!fs::exists(opts.checkpoint)) throw Error(Errc::Io, "checkpoint not found: " + opts.checkpoint.string());
  if (!fs::exists(opts.test_data)) throw Error(Errc::Io, "test data not found: " + opts.test_data.string());
  if (opts.scaler && !fs::exists(*opts.scaler)) throw Error(Errc::Io, "scaler not found: " + opts.scaler->string());

  const auto ck = maml::decode_checkpoint(read_file(opts.checkpoint));
  auto test = data::load_any(opts.test_data, opts.label_column);
  if (opts.scaler) test = data::apply_scaler(test, data::scaler_from_json(read_file(*opts.scaler)));

  maml::MamlConfig mc = ck.config;
  mc.threads = opts.threads;
  if (opts.eval_tasks) mc.eval_tasks = *opts.eval_tasks;
  const auto ev = maml::meta_evaluate(ck.state.params, test, mc);

  EvalOutputs out;
  out.metrics = metrics::evaluate(ev.probs, ev.labels);
  out.report = opts.output_dir / "metrics.json";
  out.roc = opts.output_dir / "roc.csv";
  write_file_atomic(out.report, metrics::report_to_json(out.metrics));
  write_file_atomic(out.roc, metrics::roc_to_csv(out.metrics.roc));
  return out;
}

}  // namespace melemad::pipeline
