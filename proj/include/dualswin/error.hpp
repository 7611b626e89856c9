#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dualswin {

enum class ErrorKind {
  BandCountMismatch,
  ShapeMismatch,
  NonFiniteData,
  EmptyDataset,
  StatsMissing,
  NoForeground,
  TooFewTiles,
  WindowGridMismatch,
  ShapeNotDivisible,
  ConfigMismatch,
  ShapeConflict,
  BadReduction,
  EmptyCounts,
  NonBinaryInput,
  BadThreshold,
  CheckpointLoadError,
  ConfigError,
  IoError,
};

constexpr std::string_view error_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BandCountMismatch: return "BandCountMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteData: return "NonFiniteData";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::StatsMissing: return "StatsMissing";
    case ErrorKind::NoForeground: return "NoForeground";
    case ErrorKind::TooFewTiles: return "TooFewTiles";
    case ErrorKind::WindowGridMismatch: return "WindowGridMismatch";
    case ErrorKind::ShapeNotDivisible: return "ShapeNotDivisible";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::ShapeConflict: return "ShapeConflict";
    case ErrorKind::BadReduction: return "BadReduction";
    case ErrorKind::EmptyCounts: return "EmptyCounts";
    case ErrorKind::NonBinaryInput: return "NonBinaryInput";
    case ErrorKind::BadThreshold: return "BadThreshold";
    case ErrorKind::CheckpointLoadError: return "CheckpointLoadError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every library failure is reported through this type; `kind()` carries the
/// machine-readable category that the CLI prints.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_name(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dualswin
