#pragma once

#include <stdexcept>
#include <string>

namespace patchnet {

enum class ErrorKind {
  Dimension,
  AuxInput,
  Weight,
  Data,
  Parameter,
  Bounds,
  Format,
  Version,
  Divergence,
  DegenerateEval,
  MissingClass,
  Build,
  Config,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::AuxInput: return "auxiliary-input error";
    case ErrorKind::Weight: return "weight error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Bounds: return "bounds error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Version: return "version error";
    case ErrorKind::Divergence: return "divergence error";
    case ErrorKind::DegenerateEval: return "degenerate-eval error";
    case ErrorKind::MissingClass: return "missing-class error";
    case ErrorKind::Build: return "build error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Io: return "io error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace patchnet
