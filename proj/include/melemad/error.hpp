#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace melemad {

enum class Errc {
  // dataset
  MissingLabelColumn,
  NonNumericCell,
  NonBinaryLabel,
  RaggedRow,
  BadMagic,
  DimensionOverflow,
  TruncatedFile,
  DimensionMismatch,
  ClassTooSmall,
  InvalidArgument,
  Io,
  // cfsgb
  DegenerateStride,
  ChunkLargerThanData,
  ChunkCoverageGap,
  EmptySelection,
  IndexOutOfRange,
  // maml
  LengthMismatch,
  PoolTooSmall,
  SingleClassPool,
  // metrics
  EmptyConfusion,
  SingleClass,
};

std::string_view to_string(Errc code) noexcept;

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-checkable code plus a human readable message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace melemad
