#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtd {

enum class ErrorKind {
  InsufficientData,
  InvalidTimestamps,
  OutOfBounds,
  ShapeError,
  InvalidBaseline,
  InsufficientHistory,
  AlignmentError,
  StateError,
  UndefinedCorrelation,
  MissingData,
  InvalidBand,
  ConfigError,
  DataError,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::InvalidTimestamps: return "InvalidTimestamps";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::InvalidBaseline: return "InvalidBaseline";
    case ErrorKind::InsufficientHistory: return "InsufficientHistory";
    case ErrorKind::AlignmentError: return "AlignmentError";
    case ErrorKind::StateError: return "StateError";
    case ErrorKind::UndefinedCorrelation: return "UndefinedCorrelation";
    case ErrorKind::MissingData: return "MissingData";
    case ErrorKind::InvalidBand: return "InvalidBand";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DataError: return "DataError";
  }
  return "Unknown";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace mtd
