#include "wid/error.hpp"

namespace wid {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::CorruptImage: return "CorruptImage";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::MissingImage: return "MissingImage";
    case ErrorKind::WriterWithoutTest: return "WriterWithoutTest";
    case ErrorKind::DuplicateRow: return "DuplicateRow";
    case ErrorKind::InsufficientGlyphs: return "InsufficientGlyphs";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::WeightMismatch: return "WeightMismatch";
    case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::MapTooSmall: return "MapTooSmall";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::DegenerateRange: return "DegenerateRange";
    case ErrorKind::AllZeroEntropy: return "AllZeroEntropy";
    case ErrorKind::EmptyStack: return "EmptyStack";
    case ErrorKind::ProfileMismatch: return "ProfileMismatch";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::DegenerateKernel: return "DegenerateKernel";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::NoFragments: return "NoFragments";
    case ErrorKind::WriterSetMismatch: return "WriterSetMismatch";
    case ErrorKind::EmptyValidation: return "EmptyValidation";
    case ErrorKind::EmptyPage: return "EmptyPage";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DigestMismatch: return "DigestMismatch";
  }
  return "Unknown";
}

}  // namespace wid
