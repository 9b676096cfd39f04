#pragma once

#include <stdexcept>
#include <string>

namespace sgen {

enum class ErrorKind {
  kInvalidToken,
  kShapeMismatch,
  kMalformedFile,
  kUnsupportedVersion,
  kValidation,
  kConfiguration,
  kMissingArtifact,
  kNonFinite,
  kUndefinedMetric,
  kEmptyDataset,
};

const char* to_string(ErrorKind kind);

// All library failures are reported through this type; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace sgen
