#include "melemad/cfsgb.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include <json.hpp>

#include "melemad/error.hpp"
#include "melemad/util.hpp"

namespace melemad::cfsgb {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::size_t chunk_length(std::size_t n, const ChunkSpec& spec) {
  if (n < 1) throw Error(Errc::InvalidArgument, "dataset has no rows");
  if (!(spec.p > 0.0 && spec.p <= 1.0)) throw Error(Errc::InvalidArgument, "p must lie in (0, 1]");
  if (!(spec.q >= 0.0 && spec.q < 1.0)) throw Error(Errc::InvalidArgument, "q must lie in [0, 1)");
  const auto l = static_cast<std::size_t>(std::llround(spec.p * static_cast<double>(n)));
  if (l < 1) throw Error(Errc::InvalidArgument, "chunk length round(p*n) is zero");
  if (l > n) throw Error(Errc::ChunkLargerThanData, "chunk length exceeds row count");
  return l;
}

std::vector<Chunk> make_chunks(std::size_t n, const ChunkSpec& spec) {
  const std::size_t l = chunk_length(n, spec);
  std::vector<Chunk> chunks;

  if (spec.explicit_k) {
    const std::size_t k = *spec.explicit_k;
    if (k < 1) throw Error(Errc::InvalidArgument, "explicit k must be positive");
    if (k > n - l + 1) {
      throw Error(Errc::ChunkLargerThanData, std::to_string(k) + " chunks of " + std::to_string(l) +
                                                 " rows do not fit in " + std::to_string(n) + " rows");
    }
    const std::size_t stride = k == 1 ? l : std::max<std::size_t>(1, (n - l) / (k - 1));
    if (k > 1 && stride > l) {
      throw Error(Errc::ChunkCoverageGap, std::to_string(k) + " chunks of " + std::to_string(l) +
                                              " rows cannot cover " + std::to_string(n) + " rows");
    }
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t begin = i * stride;
      const std::size_t end = i + 1 == k ? n : std::min(begin + l, n);
      chunks.push_back({i, begin, end});
    }
    return chunks;
  }

  const auto overlap = static_cast<std::size_t>(std::llround(spec.q * static_cast<double>(l)));
  if (overlap >= l) {
    throw Error(Errc::DegenerateStride, "overlap round(q*l) = " + std::to_string(overlap) +
                                            " leaves no stride for l = " + std::to_string(l));
  }
  const std::size_t stride = l - overlap;
  for (std::size_t begin = 0;; begin += stride) {
    const std::size_t end = std::min(begin + l, n);
    chunks.push_back({chunks.size(), begin, end});
    if (end == n) break;
  }
  return chunks;
}

std::vector<std::size_t> select_by_threshold(const std::vector<double>& importance, double tau) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < importance.size(); ++j) {
    if (importance[j] > 0.0 && importance[j] >= tau) out.push_back(j);
  }
  return out;
}

ChunkResult select_chunk_features(const data::LabeledDataset& chunk_ds, const gbdt::GbdtConfig& cfg, double tau) {
  if (!(tau >= 0.0)) throw Error(Errc::InvalidArgument, "tau must be >= 0");
  const auto model = gbdt::train(chunk_ds, cfg);
  ChunkResult out;
  out.importance = gbdt::feature_importance(model);
  out.selected = select_by_threshold(out.importance, tau);
  for (const auto& t : model.trees) {
    for (const auto& node : t.nodes) out.splits += node.is_leaf() ? 0 : 1;
  }
  return out;
}

std::vector<std::size_t> aggregate(const std::vector<std::vector<std::size_t>>& per_chunk, std::size_t m) {
  std::vector<std::size_t> out;
  for (const auto& s : per_chunk) {
    for (auto j : s) {
      if (j >= m) throw Error(Errc::IndexOutOfRange, "feature index " + std::to_string(j));
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

data::LabeledDataset project_dataset(const data::LabeledDataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error(Errc::EmptySelection, "no feature passed the threshold");
  std::vector<std::size_t> sorted = indices;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.back() >= ds.cols()) {
    throw Error(Errc::IndexOutOfRange, "feature index " + std::to_string(sorted.back()) + " >= m = " +
                                           std::to_string(ds.cols()));
  }
  return ds.take_columns(sorted);
}

data::LabeledDataset project_dataset(const data::LabeledDataset& ds, const SelectedFeatureSet& s) {
  return project_dataset(ds, s.global_indices);
}

ChunkImportances compute_chunk_importances(const data::LabeledDataset& ds, const ChunkSpec& spec,
                                           const gbdt::GbdtConfig& cfg, unsigned threads) {
  gbdt::validate(cfg);
  ChunkImportances out;
  out.n_features = ds.cols();
  out.chunks = make_chunks(ds.rows(), spec);
  const std::size_t k = out.chunks.size();
  out.importance.resize(k);
  out.stats.resize(k);
  parallel_for(k, threads, [&](std::size_t i) {
    const auto t0 = Clock::now();
    const Chunk& c = out.chunks[i];
    const auto chunk_ds = ds.slice_rows(c.begin, c.end);
    gbdt::GbdtConfig local = cfg;
    local.seed = cfg.seed + i;
    auto res = select_chunk_features(chunk_ds, local, 0.0);
    out.importance[i] = std::move(res.importance);
    auto& st = out.stats[i];
    st.chunk = i;
    st.rows = chunk_ds.rows();
    st.positives = chunk_ds.count_label(1);
    st.splits = res.splits;
    st.seconds = seconds_since(t0);
  });
  return out;
}

SelectedFeatureSet select_from_importances(const ChunkImportances& imp, double tau) {
  if (!(tau >= 0.0)) throw Error(Errc::InvalidArgument, "tau must be >= 0");
  SelectedFeatureSet s;
  s.threshold_used = tau;
  s.n_features = imp.n_features;
  std::vector<std::vector<std::size_t>> sets;
  for (std::size_t i = 0; i < imp.chunks.size(); ++i) {
    ChunkSelection cs;
    cs.chunk = i;
    cs.begin = imp.chunks[i].begin;
    cs.end = imp.chunks[i].end;
    cs.scores = imp.importance[i];
    cs.indices = select_by_threshold(cs.scores, tau);
    sets.push_back(cs.indices);
    s.per_chunk.push_back(std::move(cs));
  }
  s.global_indices = aggregate(sets, imp.n_features);
  return s;
}

CfsgbResult run_cfsgb(const data::LabeledDataset& ds, const ChunkSpec& spec, const gbdt::GbdtConfig& cfg,
                      double tau, unsigned threads) {
  if (!(tau >= 0.0)) throw Error(Errc::InvalidArgument, "tau must be >= 0");
  CfsgbReport report;
  report.n = ds.rows();
  report.m = ds.cols();

  auto t0 = Clock::now();
  make_chunks(ds.rows(), spec);  // validates before any training starts
  report.seconds_chunking = seconds_since(t0);

  t0 = Clock::now();
  auto imp = compute_chunk_importances(ds, spec, cfg, threads);
  report.seconds_importance = seconds_since(t0);

  t0 = Clock::now();
  auto selection = select_from_importances(imp, tau);
  report.seconds_selection = seconds_since(t0);

  t0 = Clock::now();
  auto projected = project_dataset(ds, selection);
  report.seconds_projection = seconds_since(t0);

  report.k = imp.chunks.size();
  report.r = selection.global_indices.size();
  report.chunks = imp.stats;
  for (std::size_t i = 0; i < report.chunks.size(); ++i) {
    report.chunks[i].selected = selection.per_chunk[i].indices.size();
  }
  return {std::move(selection), std::move(projected), std::move(report)};
}

std::vector<double> max_importance(const ChunkImportances& imp) {
  std::vector<double> best(imp.n_features, 0.0);
  for (const auto& v : imp.importance) {
    for (std::size_t j = 0; j < v.size(); ++j) best[j] = std::max(best[j], v[j]);
  }
  return best;
}

double threshold_for_top_k(const ChunkImportances& imp, std::size_t k_features) {
  if (k_features < 1 || k_features > imp.n_features) {
    throw Error(Errc::InvalidArgument, "k_features must lie in [1, m]");
  }
  auto stat = max_importance(imp);
  std::sort(stat.begin(), stat.end(), std::greater<>());
  if (stat.front() <= 0.0) throw Error(Errc::EmptySelection, "no feature has positive importance");
  if (stat[k_features - 1] > 0.0) return stat[k_features - 1];
  double smallest_positive = stat.front();
  for (double v : stat) {
    if (v > 0.0) smallest_positive = v;
  }
  return smallest_positive;
}

double threshold_for_top_k(const data::LabeledDataset& ds, const ChunkSpec& spec, const gbdt::GbdtConfig& cfg,
                           std::size_t k_features, unsigned threads) {
  if (k_features < 1 || k_features > ds.cols()) {
    throw Error(Errc::InvalidArgument, "k_features must lie in [1, m]");
  }
  return threshold_for_top_k(compute_chunk_importances(ds, spec, cfg, threads), k_features);
}

std::string selection_to_json(const SelectedFeatureSet& s) {
  nlohmann::json j;
  j["threshold"] = s.threshold_used;
  j["n_features"] = s.n_features;
  j["global_indices"] = s.global_indices;
  auto chunks = nlohmann::json::array();
  for (const auto& c : s.per_chunk) {
    chunks.push_back({{"chunk", c.chunk},
                      {"begin", c.begin},
                      {"end", c.end},
                      {"indices", c.indices},
                      {"scores", c.scores}});
  }
  j["per_chunk"] = std::move(chunks);
  return j.dump(1) + "\n";
}

SelectedFeatureSet selection_from_json(std::string_view text) {
  SelectedFeatureSet s;
  try {
    auto j = nlohmann::json::parse(text);
    s.threshold_used = j.at("threshold").get<double>();
    s.n_features = j.at("n_features").get<std::size_t>();
    s.global_indices = j.at("global_indices").get<std::vector<std::size_t>>();
    for (const auto& c : j.at("per_chunk")) {
      ChunkSelection cs;
      cs.chunk = c.at("chunk").get<std::size_t>();
      cs.begin = c.at("begin").get<std::size_t>();
      cs.end = c.at("end").get<std::size_t>();
      cs.indices = c.at("indices").get<std::vector<std::size_t>>();
      cs.scores = c.at("scores").get<std::vector<double>>();
      s.per_chunk.push_back(std::move(cs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed selection file: ") + e.what());
  }
  for (auto j : s.global_indices) {
    if (j >= s.n_features) throw Error(Errc::IndexOutOfRange, "feature index " + std::to_string(j));
  }
  return s;
}

std::string report_to_json(const CfsgbReport& r) {
  nlohmann::json j;
  j["k"] = r.k;
  j["n"] = r.n;
  j["m"] = r.m;
  j["r"] = r.r;
  auto chunks = nlohmann::json::array();
  for (const auto& c : r.chunks) {
    chunks.push_back({{"chunk", c.chunk},
                      {"rows", c.rows},
                      {"positives", c.positives},
                      {"splits", c.splits},
                      {"selected", c.selected}});
  }
  j["chunks"] = std::move(chunks);
  return j.dump(2) + "\n";
}

std::string timing_to_json(const CfsgbReport& r) {
  nlohmann::json j;
  j["chunking"] = r.seconds_chunking;
  j["importance"] = r.seconds_importance;
  j["selection"] = r.seconds_selection;
  j["projection"] = r.seconds_projection;
  std::vector<double> per_chunk;
  for (const auto& c : r.chunks) per_chunk.push_back(c.seconds);
  j["per_chunk"] = per_chunk;
  return j.dump(2) + "\n";
}

}  // namespace melemad::cfsgb
