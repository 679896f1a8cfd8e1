#include "melemad/maml.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include <json.hpp>

#include "melemad/error.hpp"
#include "melemad/util.hpp"

namespace melemad::maml {

void validate(const MamlConfig& cfg) {
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha)) throw Error(Errc::InvalidArgument, "alpha must be >= 0");
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) throw Error(Errc::InvalidArgument, "beta must be >= 0");
  if (cfg.tasks_per_meta_batch < 1) throw Error(Errc::InvalidArgument, "tasks_per_meta_batch must be >= 1");
  if (cfg.support_size < 1 || cfg.query_size < 1) {
    throw Error(Errc::InvalidArgument, "support and query sizes must be positive");
  }
  if (cfg.support_size + cfg.query_size > cfg.samples_per_task) {
    throw Error(Errc::InvalidArgument, "support_size + query_size exceeds samples_per_task");
  }
  if (cfg.eval_tasks < 1) throw Error(Errc::InvalidArgument, "eval_tasks must be >= 1");
}

MlpArchitecture architecture_for(const MamlConfig& cfg, std::size_t input_dim) {
  MlpArchitecture arch{input_dim, cfg.hidden_dims, cfg.dropout_rate};
  validate(arch);
  return arch;
}

// ---------------------------------------------------------------------------
// Task sampling

namespace {

/// First `count` entries of `items` become a uniform random draw.
void partial_shuffle(std::vector<std::size_t>& items, std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
}

/// Rounds `want` into [soft_lo, soft_hi] when that range is non-empty, then
/// forces it into the hard bounds.
std::size_t fit_count(double want, long long soft_lo, long long soft_hi, long long hard_lo, long long hard_hi) {
  auto x = static_cast<long long>(std::llround(want));
  if (soft_lo <= soft_hi) x = std::clamp(x, soft_lo, soft_hi);
  x = std::clamp(x, hard_lo, hard_hi);
  return static_cast<std::size_t>(x);
}

}  // namespace

EpisodeIndices sample_task_indices(const data::LabeledDataset& pool, const MamlConfig& cfg, std::uint64_t task_seed) {
  validate(cfg);
  const std::size_t total = cfg.samples_per_task;
  if (pool.rows() < total) {
    throw Error(Errc::PoolTooSmall, "pool has " + std::to_string(pool.rows()) + " rows, task needs " +
                                        std::to_string(total));
  }
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < pool.rows(); ++i) cls[pool.label(i)].push_back(i);
  if (cls[0].empty() || cls[1].empty()) throw Error(Errc::SingleClassPool, "pool holds a single class");

  std::mt19937_64 rng(task_seed);
  const auto c0 = static_cast<long long>(cls[0].size());
  const auto c1 = static_cast<long long>(cls[1].size());
  const auto spt = static_cast<long long>(total);

  // Class-1 count of the draw, proportional to the pool.
  const double ratio = static_cast<double>(c1) / static_cast<double>(c0 + c1);
  const auto n1 = static_cast<long long>(
      fit_count(ratio * static_cast<double>(spt), 2, spt - 2, std::max(0LL, spt - c0), std::min(spt, c1)));
  const long long n0 = spt - n1;
  partial_shuffle(cls[0], static_cast<std::size_t>(n0), rng);
  partial_shuffle(cls[1], static_cast<std::size_t>(n1), rng);

  const auto ss = static_cast<long long>(cfg.support_size);
  const auto qs = static_cast<long long>(cfg.query_size);
  const double frac1 = static_cast<double>(n1) / static_cast<double>(spt);
  // Support: keep one of each class back for the query set when possible.
  const auto s1 = static_cast<long long>(fit_count(frac1 * static_cast<double>(ss), std::max(1LL, ss - n0 + 1),
                                                   std::min(ss - 1, n1 - 1), std::max(0LL, ss - n0),
                                                   std::min(ss, n1)));
  const long long s0 = ss - s1;
  const auto q1 = static_cast<long long>(fit_count(frac1 * static_cast<double>(qs), 1, qs - 1,
                                                   std::max(0LL, qs - (n0 - s0)), std::min(qs, n1 - s1)));
  const long long q0 = qs - q1;

  EpisodeIndices out;
  auto take = [](const std::vector<std::size_t>& from, long long begin, long long count, std::vector<std::size_t>& to) {
    to.insert(to.end(), from.begin() + begin, from.begin() + begin + count);
  };
  take(cls[0], 0, s0, out.support);
  take(cls[1], 0, s1, out.support);
  take(cls[0], s0, q0, out.query);
  take(cls[1], s1, q1, out.query);
  std::shuffle(out.support.begin(), out.support.end(), rng);
  std::shuffle(out.query.begin(), out.query.end(), rng);
  return out;
}

Episode sample_task(const data::LabeledDataset& pool, const MamlConfig& cfg, std::uint64_t task_seed,
                    std::size_t task_index) {
  auto idx = sample_task_indices(pool, cfg, task_seed);
  return {pool.take_rows(idx.support), pool.take_rows(idx.query), task_index};
}

// ---------------------------------------------------------------------------
// Inner loop

ModelParams inner_adapt(const ModelParams& theta, const data::LabeledDataset& support, double alpha,
                        std::size_t steps, std::uint64_t dropout_seed, bool training) {
  ModelParams adapted = theta;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto g = backward(adapted, support, {training, derive_seed(dropout_seed, s)});
    for (std::size_t k = 0; k < g.size(); ++k) adapted.values[k] -= alpha * g[k];
  }
  return adapted;
}

// ---------------------------------------------------------------------------
// Outer loop

AdamState AdamState::zeros(std::size_t size) {
  AdamState s;
  s.m.assign(size, 0.0);
  s.v.assign(size, 0.0);
  return s;
}

void adam_update(std::vector<double>& params, const std::vector<double>& grad, AdamState& st, double lr) {
  if (grad.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size()) {
    throw Error(Errc::DimensionMismatch, "Adam state does not match parameter count");
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * grad[k];
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * grad[k] * grad[k];
    const double mhat = st.m[k] / c1;
    const double vhat = st.v[k] / c2;
    params[k] -= lr * mhat / (std::sqrt(vhat) + st.epsilon);
  }
}

namespace {

struct EpisodeOutcome {
  std::vector<double> grad;
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

EpisodeOutcome run_episode(const ModelParams& theta, const Episode& ep, const MamlConfig& cfg,
                           std::uint64_t episode_seed, bool want_grad) {
  const std::size_t K = cfg.inner_steps;
  std::vector<ModelParams> path;  // parameters before each inner step
  ModelParams cur = theta;
  for (std::size_t s = 0; s < K; ++s) {
    if (want_grad && !cfg.first_order) path.push_back(cur);
    const auto g = backward(cur, ep.support, {true, derive_seed(episode_seed, s)});
    for (std::size_t k = 0; k < g.size(); ++k) cur.values[k] -= cfg.alpha * g[k];
  }

  const PassMode query_mode{true, derive_seed(episode_seed, K)};
  EpisodeOutcome out;
  out.count = ep.query.rows();
  std::vector<double> probs;
  if (want_grad) {
    auto lg = loss_and_gradient(cur, ep.query, query_mode);
    out.loss = lg.loss;
    out.grad = std::move(lg.grad);
    probs = std::move(lg.probs);
  } else {
    probs = forward(cur, ep.query, query_mode);
    out.loss = bce_loss(probs, ep.query.labels());
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.correct += static_cast<std::size_t>((probs[i] >= 0.5) == (ep.query.label(i) == 1));
  }

  if (want_grad && !cfg.first_order) {
    // d theta_{s+1} / d theta_s = I - alpha * H_s, symmetric; pull the query
    // gradient back through the steps in reverse.
    for (std::size_t s = K; s-- > 0;) {
      const auto hv = hessian_vector_product(path[s], ep.support, out.grad, {true, derive_seed(episode_seed, s)});
      for (std::size_t k = 0; k < hv.size(); ++k) out.grad[k] -= cfg.alpha * hv[k];
    }
  }
  return out;
}

std::vector<EpisodeOutcome> run_episodes(const ModelParams& theta, const std::vector<Episode>& episodes,
                                         const MamlConfig& cfg, std::uint64_t step_seed, bool want_grad) {
  if (episodes.empty()) throw Error(Errc::InvalidArgument, "meta-batch holds no episodes");
  std::vector<EpisodeOutcome> outcomes(episodes.size());
  parallel_for(episodes.size(), cfg.threads, [&](std::size_t i) {
    outcomes[i] = run_episode(theta, episodes[i], cfg, derive_seed(step_seed, i), want_grad);
  });
  return outcomes;
}

}  // namespace

MetaGradient meta_gradient(const ModelParams& theta, const std::vector<Episode>& episodes, const MamlConfig& cfg,
                           std::uint64_t step_seed) {
  const auto outcomes = run_episodes(theta, episodes, cfg, step_seed, true);
  MetaGradient mg;
  mg.gradient.assign(theta.values.size(), 0.0);
  std::size_t correct = 0, count = 0;
  for (const auto& o : outcomes) {
    for (std::size_t k = 0; k < o.grad.size(); ++k) mg.gradient[k] += o.grad[k];
    mg.meta_loss += o.loss;
    correct += o.correct;
    count += o.count;
  }
  const double T = static_cast<double>(outcomes.size());
  for (auto& g : mg.gradient) g /= T;
  mg.meta_loss /= T;
  mg.query_accuracy = static_cast<double>(correct) / static_cast<double>(count);
  return mg;
}

double meta_objective(const ModelParams& theta, const std::vector<Episode>& episodes, const MamlConfig& cfg,
                      std::uint64_t step_seed) {
  const auto outcomes = run_episodes(theta, episodes, cfg, step_seed, false);
  double s = 0.0;
  for (const auto& o : outcomes) s += o.loss;
  return s / static_cast<double>(outcomes.size());
}

MetaStepResult meta_step(const ModelParams& theta, const std::vector<Episode>& episodes, const MamlConfig& cfg,
                         const AdamState& adam, std::uint64_t step_seed) {
  auto mg = meta_gradient(theta, episodes, cfg, step_seed);
  MetaStepResult out{theta, adam, mg.meta_loss, mg.query_accuracy};
  adam_update(out.params.values, mg.gradient, out.adam, cfg.beta);
  return out;
}

MetaTrainResult meta_train(const data::LabeledDataset& train_pool, const MamlConfig& cfg,
                           std::optional<TrainState> resume, const IterationHook& hook) {
  validate(cfg);
  const auto arch = architecture_for(cfg, train_pool.cols());
  MetaTrainResult result;
  if (resume) {
    if (!(resume->params.arch == arch)) {
      throw Error(Errc::DimensionMismatch, "checkpoint architecture does not match the configuration");
    }
    result.state = std::move(*resume);
  } else {
    result.state.params = init_params(arch, derive_seed(cfg.seed, "init"));
    result.state.adam = AdamState::zeros(result.state.params.values.size());
  }

  const std::uint64_t task_root = derive_seed(cfg.seed, "tasks");
  const std::uint64_t step_root = derive_seed(cfg.seed, "dropout");
  using Clock = std::chrono::steady_clock;
  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    const auto t0 = Clock::now();
    const std::size_t global = result.state.iteration;
    const std::uint64_t iter_seed = derive_seed(task_root, global);
    std::vector<Episode> episodes;
    episodes.reserve(cfg.tasks_per_meta_batch);
    for (std::size_t t = 0; t < cfg.tasks_per_meta_batch; ++t) {
      episodes.push_back(sample_task(train_pool, cfg, derive_seed(iter_seed, t), t));
    }
    auto step = meta_step(result.state.params, episodes, cfg, result.state.adam, derive_seed(step_root, global));
    result.state.params = std::move(step.params);
    result.state.adam = std::move(step.adam);
    result.state.iteration = global + 1;
    TrainLogEntry entry{result.state.iteration, step.meta_loss, step.query_accuracy,
                        std::chrono::duration<double>(Clock::now() - t0).count()};
    result.log.push_back(entry);
    if (hook) hook(result.state, entry);
  }
  return result;
}

Evaluation meta_evaluate(const ModelParams& theta, const data::LabeledDataset& test_pool, const MamlConfig& cfg) {
  validate(cfg);
  if (test_pool.cols() != theta.arch.input_dim) {
    throw Error(Errc::DimensionMismatch, "test pool has " + std::to_string(test_pool.cols()) +
                                             " features, model expects " + std::to_string(theta.arch.input_dim));
  }
  const std::uint64_t root = derive_seed(cfg.seed, "evaluate");
  const std::uint64_t dropout_root = derive_seed(cfg.seed, "evaluate-dropout");
  std::vector<Evaluation> parts(cfg.eval_tasks);
  parallel_for(cfg.eval_tasks, cfg.threads, [&](std::size_t e) {
    const auto ep = sample_task(test_pool, cfg, derive_seed(root, e), e);
    const auto adapted = inner_adapt(theta, ep.support, cfg.alpha, cfg.inner_steps, derive_seed(dropout_root, e),
                                     cfg.dropout_during_adaptation);
    parts[e].probs = forward(adapted, ep.query, {false, 0});
    parts[e].labels.assign(ep.query.labels().begin(), ep.query.labels().end());
  });
  Evaluation out;
  for (auto& p : parts) {
    out.probs.insert(out.probs.end(), p.probs.begin(), p.probs.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

std::string train_log_to_csv(const std::vector<TrainLogEntry>& log, bool header) {
  std::ostringstream out;
  out.precision(17);
  if (header) out << "iteration,meta_loss,query_accuracy,seconds\n";
  for (const auto& e : log) {
    out << e.iteration << ',' << e.meta_loss << ',' << e.query_accuracy << ',';
    out.precision(6);
    out << e.seconds << '\n';
    out.precision(17);
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kCheckpointMagic = "MELEMAD-CHECKPOINT 1\n";

void put_floats(std::string& out, const std::vector<double>& v) {
  for (double d : v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
}

std::vector<double> get_floats(std::string_view bytes, std::size_t& offset, std::size_t count) {
  if (bytes.size() < offset + 4 * count) throw Error(Errc::TruncatedFile, "checkpoint payload is short");
  std::vector<double> v(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 4 * i + b])) << (8 * b);
    }
    v[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  offset += 4 * count;
  return v;
}

nlohmann::json config_to_json(const MamlConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"outer_iterations", c.outer_iterations},
          {"tasks_per_meta_batch", c.tasks_per_meta_batch},
          {"samples_per_task", c.samples_per_task},
          {"support_size", c.support_size},
          {"query_size", c.query_size},
          {"inner_steps", c.inner_steps},
          {"first_order", c.first_order},
          {"hidden_dims", c.hidden_dims},
          {"dropout_rate", c.dropout_rate},
          {"dropout_during_adaptation", c.dropout_during_adaptation},
          {"eval_tasks", c.eval_tasks}};
}

MamlConfig config_from_json(const nlohmann::json& j) {
  MamlConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.outer_iterations = j.at("outer_iterations").get<std::size_t>();
  c.tasks_per_meta_batch = j.at("tasks_per_meta_batch").get<std::size_t>();
  c.samples_per_task = j.at("samples_per_task").get<std::size_t>();
  c.support_size = j.at("support_size").get<std::size_t>();
  c.query_size = j.at("query_size").get<std::size_t>();
  c.inner_steps = j.at("inner_steps").get<std::size_t>();
  c.first_order = j.at("first_order").get<bool>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.dropout_during_adaptation = j.at("dropout_during_adaptation").get<bool>();
  c.eval_tasks = j.at("eval_tasks").get<std::size_t>();
  return c;
}

}  // namespace

std::string encode_checkpoint(const TrainState& state, const MamlConfig& cfg) {
  const auto& arch = state.params.arch;
  nlohmann::json header;
  header["architecture"] = {{"input_dim", arch.input_dim},
                            {"hidden_dims", arch.hidden_dims},
                            {"dropout_rate", arch.dropout_rate}};
  header["config"] = config_to_json(cfg);
  header["seed"] = cfg.seed;
  header["iteration"] = state.iteration;
  header["parameter_count"] = state.params.values.size();
  header["adam"] = {{"step", state.adam.step},
                    {"beta1", state.adam.beta1},
                    {"beta2", state.adam.beta2},
                    {"epsilon", state.adam.epsilon}};
  std::string out(kCheckpointMagic);
  out += header.dump();
  out += '\n';
  put_floats(out, state.params.values);
  put_floats(out, state.adam.m);
  put_floats(out, state.adam.v);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error(Errc::BadMagic, "not a checkpoint file");
  }
  const std::size_t header_begin = kCheckpointMagic.size();
  const std::size_t header_end = bytes.find('\n', header_begin);
  if (header_end == std::string_view::npos) throw Error(Errc::TruncatedFile, "checkpoint header is incomplete");
  Checkpoint ck;
  std::size_t count = 0;
  try {
    auto h = nlohmann::json::parse(bytes.substr(header_begin, header_end - header_begin));
    const auto& a = h.at("architecture");
    ck.state.params.arch.input_dim = a.at("input_dim").get<std::size_t>();
    ck.state.params.arch.hidden_dims = a.at("hidden_dims").get<std::vector<std::size_t>>();
    ck.state.params.arch.dropout_rate = a.at("dropout_rate").get<double>();
    ck.config = config_from_json(h.at("config"));
    ck.config.seed = h.at("seed").get<std::uint64_t>();
    ck.state.iteration = h.at("iteration").get<std::size_t>();
    count = h.at("parameter_count").get<std::size_t>();
    const auto& ad = h.at("adam");
    ck.state.adam.step = ad.at("step").get<std::uint64_t>();
    ck.state.adam.beta1 = ad.at("beta1").get<double>();
    ck.state.adam.beta2 = ad.at("beta2").get<double>();
    ck.state.adam.epsilon = ad.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed checkpoint header: ") + e.what());
  }
  validate(ck.state.params.arch);
  if (count != parameter_count(ck.state.params.arch)) {
    throw Error(Errc::DimensionMismatch, "parameter count does not match architecture");
  }
  std::size_t offset = header_end + 1;
  ck.state.params.values = get_floats(bytes, offset, count);
  ck.state.adam.m = get_floats(bytes, offset, count);
  ck.state.adam.v = get_floats(bytes, offset, count);
  return ck;
}

}  // namespace melemad::maml
