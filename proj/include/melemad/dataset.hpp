#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace melemad::data {

/// Dense labeled feature matrix (n rows x m columns, row-major float32) with
/// binary labels. Instances are immutable after construction; every
/// transformation returns a new dataset.
class LabeledDataset {
 public:
  LabeledDataset() = default;

  /// Validates the invariants: n, m >= 1, sizes agree, labels in {0,1},
  /// all features finite. Throws Error otherwise.
  LabeledDataset(std::size_t rows, std::size_t cols, std::vector<float> features,
                 std::vector<std::uint8_t> labels, std::vector<std::string> feature_names = {});

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const float> features() const noexcept { return features_; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }

  std::span<const float> row(std::size_t i) const noexcept {
    return {features_.data() + i * cols_, cols_};
  }
  float at(std::size_t i, std::size_t j) const noexcept { return features_[i * cols_ + j]; }
  std::uint8_t label(std::size_t i) const noexcept { return labels_[i]; }

  std::size_t count_label(std::uint8_t value) const noexcept;

  /// Rows in the order given (duplicates allowed).
  LabeledDataset take_rows(std::span<const std::size_t> indices) const;
  /// Contiguous rows [begin, end).
  LabeledDataset slice_rows(std::size_t begin, std::size_t end) const;
  /// Columns in the order given.
  LabeledDataset take_columns(std::span<const std::size_t> indices) const;

  /// Compares shape, the bit patterns of every feature, and labels. Feature
  /// names are metadata and do not take part.
  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> features_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// CSV

/// Loads a comma separated file with a header row. `label_column` is matched
/// against the header first; if no header cell matches and it is a plain
/// non-negative integer it is used as a zero-based column index.
LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column = "label");

/// Writes features followed by a `label` column. Floats are written with
/// enough digits to round-trip exactly.
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Binary format: 16-byte header (magic "MLMD", version, n, m as little-endian
// u32), n*m little-endian float32 row-major, then n label bytes.

inline constexpr std::uint32_t kBinaryVersion = 1;

std::string encode_binary(const LabeledDataset& ds);
LabeledDataset decode_binary(std::string_view bytes);
void save_binary(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_binary(const std::filesystem::path& path);

/// Dispatches on extension: ".csv" uses CSV, anything else the binary format.
LabeledDataset load_any(const std::filesystem::path& path, const std::string& label_column = "label");
void save_any(const LabeledDataset& ds, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Min-max scaling

struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
};

ScalerParams fit_scaler(const LabeledDataset& ds);

/// Maps v -> (v - min) / (max - min), clipped to [0, 1]. Constant columns map
/// to 0.
LabeledDataset apply_scaler(const LabeledDataset& ds, const ScalerParams& sp);

std::string scaler_to_json(const ScalerParams& sp);
ScalerParams scaler_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.8;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Row indices of the partition, each side in ascending order.
SplitIndices split_indices(const LabeledDataset& ds, const SplitSpec& spec);

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t n = 1000;
  std::size_t m = 20;
  std::size_t informative = 5;
  double noise_sigma = 0.0;
  double class_balance = 0.5;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  LabeledDataset dataset;
  std::vector<std::size_t> informative;  // ascending
};

void validate(const SyntheticSpec& spec);

/// Features are i.i.d. uniform on [-1, 1]. A random subset of `informative`
/// columns receives nonzero weights; the logit is w.x + noise_sigma * eps and
/// the round(n * class_balance) rows with the largest logit are labeled 1.
SyntheticData synthesize(const SyntheticSpec& spec);

}  // namespace melemad::data
