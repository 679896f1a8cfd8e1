#include "melemad/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "melemad/error.hpp"
#include "melemad/util.hpp"

namespace melemad::data {

namespace {

std::string cell_ref(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row) + ", column " + std::to_string(col);
}

}  // namespace

LabeledDataset::LabeledDataset(std::size_t rows, std::size_t cols, std::vector<float> features,
                               std::vector<std::uint8_t> labels, std::vector<std::string> feature_names)
    : rows_(rows), cols_(cols), features_(std::move(features)), labels_(std::move(labels)),
      names_(std::move(feature_names)) {
  if (rows_ == 0 || cols_ == 0) {
    throw Error(Errc::InvalidArgument, "dataset needs at least one row and one column");
  }
  if (features_.size() != rows_ * cols_) {
    throw Error(Errc::DimensionMismatch, "feature buffer has " + std::to_string(features_.size()) +
                                             " values, expected " + std::to_string(rows_ * cols_));
  }
  if (labels_.size() != rows_) {
    throw Error(Errc::DimensionMismatch, "label count " + std::to_string(labels_.size()) +
                                             " does not match row count " + std::to_string(rows_));
  }
  if (!names_.empty() && names_.size() != cols_) {
    throw Error(Errc::DimensionMismatch, "feature name count does not match column count");
  }
  for (std::size_t i = 0; i < rows_; ++i) {
    if (labels_[i] > 1) throw Error(Errc::NonBinaryLabel, "row " + std::to_string(i));
  }
  for (std::size_t k = 0; k < features_.size(); ++k) {
    if (!std::isfinite(features_[k])) {
      throw Error(Errc::NonNumericCell, "non-finite value at " + cell_ref(k / cols_, k % cols_));
    }
  }
}

std::size_t LabeledDataset::count_label(std::uint8_t value) const noexcept {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), value));
}

LabeledDataset LabeledDataset::take_rows(std::span<const std::size_t> indices) const {
  std::vector<float> f;
  f.reserve(indices.size() * cols_);
  std::vector<std::uint8_t> l;
  l.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= rows_) throw Error(Errc::IndexOutOfRange, "row " + std::to_string(i));
    auto r = row(i);
    f.insert(f.end(), r.begin(), r.end());
    l.push_back(labels_[i]);
  }
  return LabeledDataset(indices.size(), cols_, std::move(f), std::move(l), names_);
}

LabeledDataset LabeledDataset::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > rows_) {
    throw Error(Errc::IndexOutOfRange, "row range [" + std::to_string(begin) + ", " +
                                           std::to_string(end) + ") of " + std::to_string(rows_));
  }
  std::vector<float> f(features_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                       features_.begin() + static_cast<std::ptrdiff_t>(end * cols_));
  std::vector<std::uint8_t> l(labels_.begin() + static_cast<std::ptrdiff_t>(begin),
                              labels_.begin() + static_cast<std::ptrdiff_t>(end));
  return LabeledDataset(end - begin, cols_, std::move(f), std::move(l), names_);
}

LabeledDataset LabeledDataset::take_columns(std::span<const std::size_t> indices) const {
  for (std::size_t j : indices) {
    if (j >= cols_) throw Error(Errc::IndexOutOfRange, "column " + std::to_string(j));
  }
  std::vector<float> f;
  f.reserve(rows_ * indices.size());
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j : indices) f.push_back(at(i, j));
  }
  std::vector<std::string> names;
  if (!names_.empty()) {
    for (std::size_t j : indices) names.push_back(names_[j]);
  }
  return LabeledDataset(rows_, indices.size(), std::move(f), labels_, std::move(names));
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) noexcept {
  if (a.rows_ != b.rows_ || a.cols_ != b.cols_ || a.labels_ != b.labels_) return false;
  return std::memcmp(a.features_.data(), b.features_.data(), a.features_.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::InvalidArgument, path.string() + " is empty");
  const auto header = split_commas(line);
  const std::size_t width = header.size();

  std::size_t label_idx = width;
  for (std::size_t j = 0; j < width; ++j) {
    if (header[j] == label_column) {
      label_idx = j;
      break;
    }
  }
  if (label_idx == width) {
    if (auto idx = parse_index(label_column); idx && *idx < width) label_idx = *idx;
  }
  if (label_idx == width) throw Error(Errc::MissingLabelColumn, "no column '" + label_column + "'");
  if (width < 2) throw Error(Errc::InvalidArgument, "CSV needs at least one feature column");

  std::vector<std::string> names;
  for (std::size_t j = 0; j < width; ++j) {
    if (j != label_idx) names.emplace_back(header[j]);
  }

  std::vector<float> features;
  std::vector<std::uint8_t> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != width) {
      throw Error(Errc::RaggedRow, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                       " cells, header has " + std::to_string(width));
    }
    for (std::size_t j = 0; j < width; ++j) {
      double v = 0.0;
      if (j == label_idx) {
        if (!parse_double(cells[j], v) || (v != 0.0 && v != 1.0)) {
          throw Error(Errc::NonBinaryLabel, "row " + std::to_string(row) + ": '" + std::string(cells[j]) + "'");
        }
        labels.push_back(static_cast<std::uint8_t>(v));
        continue;
      }
      if (!parse_double(cells[j], v) || !std::isfinite(static_cast<float>(v))) {
        throw Error(Errc::NonNumericCell, cell_ref(row, j) + ": '" + std::string(cells[j]) + "'");
      }
      features.push_back(static_cast<float>(v));
    }
    ++row;
  }
  return LabeledDataset(row, width - 1, std::move(features), std::move(labels), std::move(names));
}

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(std::numeric_limits<float>::max_digits10);
  for (std::size_t j = 0; j < ds.cols(); ++j) {
    out << (ds.feature_names().empty() ? "f" + std::to_string(j) : ds.feature_names()[j]) << ',';
  }
  out << "label\n";
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (float v : ds.row(i)) out << v << ',';
    out << static_cast<int>(ds.label(i)) << '\n';
  }
  write_file_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// Binary

namespace {

constexpr char kMagic[4] = {'M', 'L', 'M', 'D'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + b])) << (8 * b);
  }
  return v;
}

}  // namespace

std::string encode_binary(const LabeledDataset& ds) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (ds.rows() > kMax || ds.cols() > kMax) {
    throw Error(Errc::DimensionOverflow, "dimensions exceed 32-bit header fields");
  }
  std::string out;
  out.reserve(kHeaderBytes + ds.features().size() * 4 + ds.rows());
  out.append(kMagic, 4);
  put_u32(out, kBinaryVersion);
  put_u32(out, static_cast<std::uint32_t>(ds.rows()));
  put_u32(out, static_cast<std::uint32_t>(ds.cols()));
  for (float v : ds.features()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  for (std::uint8_t l : ds.labels()) out.push_back(static_cast<char>(l));
  return out;
}

LabeledDataset decode_binary(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(Errc::BadMagic, "not a dataset file");
  }
  if (bytes.size() < kHeaderBytes) throw Error(Errc::TruncatedFile, "header is incomplete");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kBinaryVersion) {
    throw Error(Errc::BadMagic, "unsupported version " + std::to_string(version));
  }
  const std::uint64_t n = get_u32(bytes, 8);
  const std::uint64_t m = get_u32(bytes, 12);
  const std::uint64_t cells = n * m;  // cannot overflow: both < 2^32
  if (cells > std::numeric_limits<std::size_t>::max() / 4 - n - kHeaderBytes) {
    throw Error(Errc::DimensionOverflow, "n*m too large for this platform");
  }
  const std::uint64_t need = kHeaderBytes + cells * 4 + n;
  if (bytes.size() < need) {
    throw Error(Errc::TruncatedFile, "expected " + std::to_string(need) + " bytes, found " +
                                         std::to_string(bytes.size()));
  }
  std::vector<float> features(cells);
  for (std::size_t k = 0; k < cells; ++k) {
    features[k] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * k));
  }
  const std::size_t label_off = kHeaderBytes + cells * 4;
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(bytes[label_off + i]);
  return LabeledDataset(n, m, std::move(features), std::move(labels));
}

void save_binary(const LabeledDataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, encode_binary(ds));
}

LabeledDataset load_binary(const std::filesystem::path& path) { return decode_binary(read_file(path)); }

LabeledDataset load_any(const std::filesystem::path& path, const std::string& label_column) {
  if (!std::filesystem::exists(path)) throw Error(Errc::Io, "no such file: " + path.string());
  if (path.extension() == ".csv") return load_csv(path, label_column);
  return load_binary(path);
}

void save_any(const LabeledDataset& ds, const std::filesystem::path& path) {
  if (path.extension() == ".csv") {
    save_csv(ds, path);
  } else {
    save_binary(ds, path);
  }
}

// ---------------------------------------------------------------------------
// Scaling

ScalerParams fit_scaler(const LabeledDataset& ds) {
  ScalerParams sp;
  sp.min.assign(ds.cols(), std::numeric_limits<double>::infinity());
  sp.max.assign(ds.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.cols(); ++j) {
      sp.min[j] = std::min(sp.min[j], static_cast<double>(r[j]));
      sp.max[j] = std::max(sp.max[j], static_cast<double>(r[j]));
    }
  }
  return sp;
}

LabeledDataset apply_scaler(const LabeledDataset& ds, const ScalerParams& sp) {
  if (sp.min.size() != ds.cols() || sp.max.size() != ds.cols()) {
    throw Error(Errc::DimensionMismatch, "scaler has " + std::to_string(sp.min.size()) +
                                             " columns, dataset has " + std::to_string(ds.cols()));
  }
  std::vector<float> out(ds.features().size());
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    auto r = ds.row(i);
    for (std::size_t j = 0; j < ds.cols(); ++j) {
      const double range = sp.max[j] - sp.min[j];
      double v = range > 0.0 ? (static_cast<double>(r[j]) - sp.min[j]) / range : 0.0;
      out[i * ds.cols() + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  std::vector<std::uint8_t> labels(ds.labels().begin(), ds.labels().end());
  return LabeledDataset(ds.rows(), ds.cols(), std::move(out), std::move(labels), ds.feature_names());
}

std::string scaler_to_json(const ScalerParams& sp) {
  nlohmann::json j;
  j["min"] = sp.min;
  j["max"] = sp.max;
  return j.dump(2) + "\n";
}

ScalerParams scaler_from_json(std::string_view text) {
  ScalerParams sp;
  try {
    auto j = nlohmann::json::parse(text);
    sp.min = j.at("min").get<std::vector<double>>();
    sp.max = j.at("max").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed scaler: ") + e.what());
  }
  if (sp.min.size() != sp.max.size()) throw Error(Errc::DimensionMismatch, "scaler min/max lengths differ");
  for (std::size_t j = 0; j < sp.min.size(); ++j) {
    if (!(sp.min[j] <= sp.max[j])) throw Error(Errc::InvalidArgument, "scaler min > max at column " + std::to_string(j));
  }
  return sp;
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

void validate(const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(Errc::InvalidArgument, "train_fraction must lie strictly between 0 and 1");
  }
}

}  // namespace

SplitIndices split_indices(const LabeledDataset& ds, const SplitSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  SplitIndices out;

  auto take = [&](std::vector<std::size_t> group) {
    std::shuffle(group.begin(), group.end(), rng);
    const auto size = static_cast<long long>(group.size());
    auto n_train = static_cast<long long>(std::llround(spec.train_fraction * static_cast<double>(size)));
    n_train = std::clamp(n_train, 1LL, size - 1);
    out.train.insert(out.train.end(), group.begin(), group.begin() + n_train);
    out.test.insert(out.test.end(), group.begin() + n_train, group.end());
  };

  if (spec.stratified) {
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < ds.rows(); ++i) by_class[ds.label(i)].push_back(i);
    for (int c = 0; c < 2; ++c) {
      if (by_class[c].size() < 2) {
        throw Error(Errc::ClassTooSmall, "class " + std::to_string(c) + " has " +
                                             std::to_string(by_class[c].size()) + " samples, need 2");
      }
    }
    take(std::move(by_class[0]));
    take(std::move(by_class[1]));
  } else {
    if (ds.rows() < 2) throw Error(Errc::ClassTooSmall, "need at least 2 rows to split");
    std::vector<std::size_t> all(ds.rows());
    std::iota(all.begin(), all.end(), 0);
    take(std::move(all));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds, const SplitSpec& spec) {
  auto idx = split_indices(ds, spec);
  return {ds.take_rows(idx.train), ds.take_rows(idx.test)};
}

// ---------------------------------------------------------------------------
// Synthesis

void validate(const SyntheticSpec& spec) {
  if (spec.n < 1 || spec.m < 1) throw Error(Errc::InvalidArgument, "n and m must be positive");
  if (spec.informative > spec.m) {
    throw Error(Errc::InvalidArgument, "informative (" + std::to_string(spec.informative) +
                                           ") exceeds m (" + std::to_string(spec.m) + ")");
  }
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
    throw Error(Errc::InvalidArgument, "noise_sigma must be finite and >= 0");
  }
  if (!(spec.class_balance > 0.0 && spec.class_balance < 1.0)) {
    throw Error(Errc::InvalidArgument, "class_balance must lie strictly between 0 and 1");
  }
}

SyntheticData synthesize(const SyntheticSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> magnitude(1.0, 2.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::vector<std::size_t> columns(spec.m);
  std::iota(columns.begin(), columns.end(), 0);
  std::shuffle(columns.begin(), columns.end(), rng);
  std::vector<std::size_t> informative(columns.begin(), columns.begin() + static_cast<std::ptrdiff_t>(spec.informative));
  std::sort(informative.begin(), informative.end());

  std::vector<double> weights(spec.informative);
  for (auto& w : weights) w = magnitude(rng) * ((rng() & 1u) ? 1.0 : -1.0);

  std::vector<float> features(spec.n * spec.m);
  for (auto& v : features) v = static_cast<float>(unit(rng));

  std::vector<double> logit(spec.n, 0.0);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < informative.size(); ++k) {
      z += weights[k] * static_cast<double>(features[i * spec.m + informative[k]]);
    }
    logit[i] = z + spec.noise_sigma * gauss(rng);
  }

  // Rank by logit with a random tie-break so equal logits (e.g. no signal and
  // no noise) still produce labels independent of row order.
  std::vector<std::size_t> tiebreak(spec.n);
  std::iota(tiebreak.begin(), tiebreak.end(), 0);
  std::shuffle(tiebreak.begin(), tiebreak.end(), rng);
  std::vector<std::size_t> order(spec.n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (logit[a] != logit[b]) return logit[a] > logit[b];
    return tiebreak[a] < tiebreak[b];
  });
  const auto positives = static_cast<std::size_t>(std::llround(spec.class_balance * static_cast<double>(spec.n)));
  std::vector<std::uint8_t> labels(spec.n, 0);
  for (std::size_t r = 0; r < positives; ++r) labels[order[r]] = 1;

  return {LabeledDataset(spec.n, spec.m, std::move(features), std::move(labels)), std::move(informative)};
}

}  // namespace melemad::data
