// melemad: chunk-wise GBDT feature selection followed by a meta-learned
// binary classifier.
//
//   melemad synth       --n 2000 --m 200 --informative 10 --seed 7
//   melemad select      --config cfg.json --input data.csv --tau 0.005
//   melemad meta-train  --config cfg.json --input out/projected.bin
//   melemad evaluate    --checkpoint out/checkpoint.ckpt --test out/meta_test.bin --scaler out/scaler.json
//   melemad run         --config cfg.json   (select, meta-train, evaluate)

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "melemad/error.hpp"
#include "melemad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace melemad;
using pipeline::PipelineConfig;

namespace {

struct Overrides {
  std::optional<fs::path> config;
  std::optional<fs::path> input;
  std::optional<std::string> label_column;
  std::optional<fs::path> out_dir;
  bool no_scale = false;

  std::optional<double> p, q, tau;
  std::optional<std::size_t> k, top_k;
  std::optional<std::size_t> n_trees, max_depth, min_samples_leaf;
  std::optional<double> learning_rate, lambda;

  std::optional<double> train_fraction;
  std::optional<double> alpha, beta;
  std::optional<std::size_t> iterations, tasks_per_batch, samples_per_task, support_size, query_size, inner_steps;
  std::optional<std::size_t> eval_tasks;
  bool first_order = false;
  bool second_order = false;

  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

void add_data_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON config file");
  app->add_option("--input", o.input, "Input dataset (.csv or binary)");
  app->add_option("--label-column", o.label_column, "Label column name or index (CSV only)");
  app->add_option("--out-dir", o.out_dir, std::string("Output directory (default $") + pipeline::kOutputDirEnv +
                                              " or melemad_out)");
  app->add_option("--seed", o.seed, "Global seed");
  app->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
}

void add_select_flags(CLI::App* app, Overrides& o) {
  app->add_option("--p", o.p, "Chunk size as a fraction of the rows");
  app->add_option("--q", o.q, "Overlap as a fraction of the chunk size");
  app->add_option("--k", o.k, "Force this many chunks");
  app->add_option("--tau", o.tau, "Importance threshold");
  app->add_option("--top-k", o.top_k, "Pick tau so that at least this many features survive");
  app->add_option("--n-trees", o.n_trees);
  app->add_option("--max-depth", o.max_depth);
  app->add_option("--learning-rate", o.learning_rate, "GBDT shrinkage");
  app->add_option("--min-samples-leaf", o.min_samples_leaf);
  app->add_option("--lambda", o.lambda, "GBDT leaf L2 penalty");
}

void add_train_flags(CLI::App* app, Overrides& o) {
  app->add_flag("--no-scale", o.no_scale, "Skip min-max scaling");
  app->add_option("--train-fraction", o.train_fraction);
  app->add_option("--alpha", o.alpha, "Inner-loop learning rate");
  app->add_option("--beta", o.beta, "Outer-loop (Adam) learning rate");
  app->add_option("--iterations", o.iterations, "Outer-loop iterations");
  app->add_option("--tasks-per-batch", o.tasks_per_batch);
  app->add_option("--samples-per-task", o.samples_per_task);
  app->add_option("--support-size", o.support_size);
  app->add_option("--query-size", o.query_size);
  app->add_option("--inner-steps", o.inner_steps);
  app->add_option("--eval-tasks", o.eval_tasks);
  auto* fo = app->add_flag("--first-order", o.first_order, "First-order meta-gradient (default)");
  auto* so = app->add_flag("--second-order", o.second_order, "Differentiate through the inner loop");
  fo->excludes(so);
}

template <typename T, typename U>
void apply(const std::optional<T>& v, U& dst) {
  if (v) dst = *v;
}

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig cfg = o.config ? pipeline::load_config(*o.config) : PipelineConfig{};
  apply(o.input, cfg.input);
  apply(o.label_column, cfg.label_column);
  apply(o.out_dir, cfg.output_dir);
  if (o.no_scale) cfg.scale = false;

  apply(o.p, cfg.chunks.p);
  apply(o.q, cfg.chunks.q);
  if (o.k) cfg.chunks.explicit_k = *o.k;
  if (o.tau) {
    cfg.tau = *o.tau;
    cfg.top_k.reset();
  }
  if (o.top_k) {
    cfg.top_k = *o.top_k;
    if (!o.tau) cfg.tau.reset();
  }
  apply(o.n_trees, cfg.gbdt.n_trees);
  apply(o.max_depth, cfg.gbdt.max_depth);
  apply(o.learning_rate, cfg.gbdt.learning_rate);
  apply(o.min_samples_leaf, cfg.gbdt.min_samples_leaf);
  apply(o.lambda, cfg.gbdt.lambda);

  apply(o.train_fraction, cfg.split.train_fraction);
  auto& mc = cfg.maml;
  apply(o.alpha, mc.alpha);
  apply(o.beta, mc.beta);
  apply(o.iterations, mc.outer_iterations);
  apply(o.tasks_per_batch, mc.tasks_per_meta_batch);
  apply(o.support_size, mc.support_size);
  apply(o.query_size, mc.query_size);
  if (o.samples_per_task) {
    mc.samples_per_task = *o.samples_per_task;
  } else if (o.support_size || o.query_size) {
    mc.samples_per_task = mc.support_size + mc.query_size;
  }
  apply(o.inner_steps, mc.inner_steps);
  apply(o.eval_tasks, mc.eval_tasks);
  if (o.first_order) mc.first_order = true;
  if (o.second_order) mc.first_order = false;

  apply(o.seed, cfg.seed);
  apply(o.threads, cfg.threads);
  pipeline::finalize(cfg);
  return cfg;
}

void print_metrics(const metrics::MetricsReport& r) {
  std::cout << "accuracy  " << r.scalars.accuracy << "\n"
            << "precision " << r.scalars.precision << "\n"
            << "recall    " << r.scalars.recall << "\n"
            << "f1        " << r.scalars.f1 << "\n"
            << "mcc       " << r.scalars.mcc << "\n"
            << "auc       " << r.auc << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chunk-wise GBDT feature selection and MAML malware detection"};
  app.require_subcommand(1);

  // synth
  pipeline::SynthOptions synth_opts;
  std::optional<fs::path> synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset and its informative feature indices");
  synth->add_option("--n", synth_opts.spec.n, "Rows")->capture_default_str();
  synth->add_option("--m", synth_opts.spec.m, "Features")->capture_default_str();
  synth->add_option("--informative", synth_opts.spec.informative)->capture_default_str();
  synth->add_option("--noise", synth_opts.spec.noise_sigma, "Label noise sigma")->capture_default_str();
  synth->add_option("--balance", synth_opts.spec.class_balance, "Fraction of positive rows")->capture_default_str();
  synth->add_option("--seed", synth_opts.spec.seed)->required();
  synth->add_option("--format", synth_opts.format, "csv or bin")->capture_default_str();
  synth->add_option("--out-dir", synth_out, "Output directory");

  Overrides sel_o, train_o, run_o;
  auto* select = app.add_subcommand("select", "Chunk-wise GBDT feature selection");
  add_data_flags(select, sel_o);
  add_select_flags(select, sel_o);

  std::optional<fs::path> resume;
  std::size_t checkpoint_every = 50;
  auto* train = app.add_subcommand("meta-train", "Split, scale and meta-train the classifier");
  add_data_flags(train, train_o);
  add_train_flags(train, train_o);
  train->add_option("--resume", resume, "Continue from this checkpoint");
  train->add_option("--checkpoint-every", checkpoint_every, "Iterations between checkpoints (0: only at the end)")
      ->capture_default_str();

  pipeline::EvalOptions eval_opts;
  std::optional<fs::path> eval_out;
  std::optional<unsigned> eval_threads;
  auto* evaluate = app.add_subcommand("evaluate", "Meta-test a checkpoint and write metrics and the ROC curve");
  evaluate->add_option("--checkpoint", eval_opts.checkpoint)->required();
  evaluate->add_option("--test", eval_opts.test_data, "Held-out dataset")->required();
  evaluate->add_option("--scaler", eval_opts.scaler, "Scaler fitted at training time");
  evaluate->add_option("--label-column", eval_opts.label_column)->capture_default_str();
  evaluate->add_option("--eval-tasks", eval_opts.eval_tasks, "Override the checkpoint's episode count");
  evaluate->add_option("--threads", eval_threads)->check(CLI::PositiveNumber);
  evaluate->add_option("--out-dir", eval_out);

  auto* run = app.add_subcommand("run", "select, meta-train and evaluate in one go");
  add_data_flags(run, run_o);
  add_select_flags(run, run_o);
  add_train_flags(run, run_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      synth_opts.output_dir = synth_out ? *synth_out : pipeline::default_output_dir();
      const auto out = pipeline::cmd_synth(synth_opts);
      std::cout << "wrote " << out.dataset.string() << " and " << out.informative.string() << "\n";
    } else if (*select) {
      const auto cfg = resolve(sel_o);
      const auto out = pipeline::cmd_select(cfg);
      std::cout << "selected " << out.selected << " features (tau " << out.tau << ") -> " << out.selection.string()
                << "\n";
    } else if (*train) {
      const auto cfg = resolve(train_o);
      const auto out = pipeline::cmd_meta_train(cfg, resume, checkpoint_every);
      std::cout << "trained " << out.iterations << " iterations -> " << out.checkpoint.string() << "\n";
    } else if (*evaluate) {
      eval_opts.output_dir = eval_out ? *eval_out : pipeline::default_output_dir();
      if (eval_threads) eval_opts.threads = *eval_threads;
      const auto out = pipeline::cmd_evaluate(eval_opts);
      print_metrics(out.metrics);
      std::cout << "wrote " << out.report.string() << " and " << out.roc.string() << "\n";
    } else if (*run) {
      auto cfg = resolve(run_o);
      pipeline::validate(cfg, true);
      const auto sel = pipeline::cmd_select(cfg);
      std::cout << "selected " << sel.selected << " features (tau " << sel.tau << ")\n";
      auto train_cfg = cfg;
      train_cfg.input = sel.projected;
      const auto tr = pipeline::cmd_meta_train(train_cfg);
      std::cout << "trained " << tr.iterations << " iterations\n";
      pipeline::EvalOptions eo;
      eo.checkpoint = tr.checkpoint;
      eo.test_data = tr.test_split;
      if (cfg.scale) eo.scaler = tr.scaler;
      eo.output_dir = cfg.output_dir;
      eo.threads = cfg.threads;
      const auto ev = pipeline::cmd_evaluate(eo);
      print_metrics(ev.metrics);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return pipeline::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
