#include "melemad/error.hpp"

namespace melemad {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MissingLabelColumn: return "MissingLabelColumn";
    case Errc::NonNumericCell: return "NonNumericCell";
    case Errc::NonBinaryLabel: return "NonBinaryLabel";
    case Errc::RaggedRow: return "RaggedRow";
    case Errc::BadMagic: return "BadMagic";
    case Errc::DimensionOverflow: return "DimensionOverflow";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::DegenerateStride: return "DegenerateStride";
    case Errc::ChunkLargerThanData: return "ChunkLargerThanData";
    case Errc::ChunkCoverageGap: return "ChunkCoverageGap";
    case Errc::EmptySelection: return "EmptySelection";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::PoolTooSmall: return "PoolTooSmall";
    case Errc::SingleClassPool: return "SingleClassPool";
    case Errc::EmptyConfusion: return "EmptyConfusion";
    case Errc::SingleClass: return "SingleClass";
  }
  return "Unknown";
}

}  // namespace melemad
