#pragma once

#include <stdexcept>
#include <string>

namespace covdistill {

enum class ErrorKind {
  Config,
  Shape,
  Validation,
  Parse,
  Lookup,
  Bounds,
  Numeric,
  DegenerateMask,
  Calibration,
  Divergence,
  Io,
  Corruption,
  Incompatible,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::Bounds: return "bounds";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::DegenerateMask: return "degenerate-mask";
    case ErrorKind::Calibration: return "calibration";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Io: return "io";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Incompatible: return "incompatibility";
  }
  return "unknown";
}

}  // namespace covdistill
