#pragma once

// Chunk-wise feature selection: split the rows into overlapping chunks, train
// a gradient-boosted model per chunk, keep the features whose importance
// clears a threshold in at least one chunk, and project the dataset onto that
// union.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "melemad/dataset.hpp"
#include "melemad/gbdt.hpp"

namespace melemad::cfsgb {

struct ChunkSpec {
  double p = 0.5;  // chunk length as a fraction of n
  double q = 0.5;  // overlap as a fraction of the chunk length
  std::optional<std::size_t> explicit_k;
};

struct Chunk {
  std::size_t index = 0;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const Chunk&, const Chunk&) = default;
};

/// Chunk length l = round(p * n), stride s = l - round(q * l). Chunks start at
/// multiples of s and the last one is truncated at n. With explicit_k the
/// stride becomes max(1, floor((n - l) / (k - 1))) and the final chunk is
/// stretched to end at n so every row is covered.
std::vector<Chunk> make_chunks(std::size_t n, const ChunkSpec& spec);

std::size_t chunk_length(std::size_t n, const ChunkSpec& spec);

struct ChunkSelection {
  std::size_t chunk = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> indices;  // selected, ascending
  std::vector<double> scores;        // full importance vector of the chunk
};

struct SelectedFeatureSet {
  std::vector<std::size_t> global_indices;  // ascending
  std::vector<ChunkSelection> per_chunk;
  double threshold_used = 0.0;
  std::size_t n_features = 0;
};

struct ChunkStats {
  std::size_t chunk = 0;
  std::size_t rows = 0;
  std::size_t positives = 0;
  std::size_t splits = 0;
  std::size_t selected = 0;
  double seconds = 0.0;
};

struct CfsgbReport {
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t r = 0;
  std::vector<ChunkStats> chunks;
  double seconds_chunking = 0.0;
  double seconds_importance = 0.0;
  double seconds_selection = 0.0;
  double seconds_projection = 0.0;
};

/// Indices whose score is >= tau. Zero scores are never selected, so tau = 0
/// keeps exactly the features that were split on.
std::vector<std::size_t> select_by_threshold(const std::vector<double>& importance, double tau);

struct ChunkResult {
  std::vector<std::size_t> selected;
  std::vector<double> importance;
  std::size_t splits = 0;
};

/// Trains one GBDT on `chunk_ds` and thresholds its importance vector.
ChunkResult select_chunk_features(const data::LabeledDataset& chunk_ds, const gbdt::GbdtConfig& cfg,
                                  double tau);

/// Sorted union of the per-chunk index sets. Every index must be < m.
std::vector<std::size_t> aggregate(const std::vector<std::vector<std::size_t>>& per_chunk, std::size_t m);

/// Keeps the selected columns in ascending original order. Throws
/// EmptySelection for an empty set and IndexOutOfRange for bad indices.
data::LabeledDataset project_dataset(const data::LabeledDataset& ds, const std::vector<std::size_t>& indices);
data::LabeledDataset project_dataset(const data::LabeledDataset& ds, const SelectedFeatureSet& s);

/// Importance vectors for every chunk; the expensive half of the algorithm.
/// Chunk i trains with seed cfg.seed + i. Results are stored by chunk index,
/// so any thread count yields identical output.
struct ChunkImportances {
  std::vector<Chunk> chunks;
  std::vector<std::vector<double>> importance;
  std::vector<ChunkStats> stats;
  std::size_t n_features = 0;
};

ChunkImportances compute_chunk_importances(const data::LabeledDataset& ds, const ChunkSpec& spec,
                                           const gbdt::GbdtConfig& cfg, unsigned threads = 1);

/// Thresholding plus union over precomputed importances.
SelectedFeatureSet select_from_importances(const ChunkImportances& imp, double tau);

struct CfsgbResult {
  SelectedFeatureSet selection;
  data::LabeledDataset projected;
  CfsgbReport report;
};

CfsgbResult run_cfsgb(const data::LabeledDataset& ds, const ChunkSpec& spec, const gbdt::GbdtConfig& cfg,
                      double tau, unsigned threads = 1);

/// Per-feature maximum importance across chunks.
std::vector<double> max_importance(const ChunkImportances& imp);

/// Largest tau that still selects at least `k_features` features: the
/// k-th largest per-feature maximum importance. When fewer than k features
/// have positive importance, returns the smallest positive one.
double threshold_for_top_k(const ChunkImportances& imp, std::size_t k_features);
double threshold_for_top_k(const data::LabeledDataset& ds, const ChunkSpec& spec, const gbdt::GbdtConfig& cfg,
                           std::size_t k_features, unsigned threads = 1);

std::string selection_to_json(const SelectedFeatureSet& s);
SelectedFeatureSet selection_from_json(std::string_view text);

/// Report without wall-clock fields; byte-identical across reruns.
std::string report_to_json(const CfsgbReport& r);
std::string timing_to_json(const CfsgbReport& r);

}  // namespace melemad::cfsgb
