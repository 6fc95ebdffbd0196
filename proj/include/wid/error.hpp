#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wid {

/// Failure categories surfaced by the library. The CLI maps them onto exit codes.
enum class ErrorKind {
  // imaging / data
  MissingFile,
  UnsupportedFormat,
  CorruptImage,
  ImageTooSmall,
  BadMagic,
  CountMismatch,
  TruncatedFile,
  EmptyDataset,
  LabelOutOfRange,
  MissingImage,
  WriterWithoutTest,
  DuplicateRow,
  InsufficientGlyphs,
  // convnet / model files
  ShapeError,
  WeightMismatch,
  FormatVersionMismatch,
  ChecksumMismatch,
  // hog / saliency / pooling
  MapTooSmall,
  RankDeficient,
  NoConvergence,
  DimMismatch,
  DegenerateRange,
  AllZeroEntropy,
  EmptyStack,
  ProfileMismatch,
  ZeroVector,
  // classify
  SingleClass,
  DegenerateKernel,
  EmptyGrid,
  NoFragments,
  WriterSetMismatch,
  EmptyValidation,
  EmptyPage,
  // cli
  ConfigError,
  DigestMismatch,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace wid
