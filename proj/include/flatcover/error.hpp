#pragma once

#include <stdexcept>
#include <string>

namespace flatcover {

enum class ErrorKind {
  SingularMap,
  BadFactor,
  DimMismatch,
  EmptyCover,
  BadDimension,
  BadRegion,
  NotFlat,
  NotInSublevel,
  ProjectionFailed,
  InconclusiveFit,
  BadSpec,
  BadRegime,
  BadParam,
  DepthExceeded,
  NotNondegenerate,
  NotADegeneracyDeterminant,
  CallbackContractViolation,
  ApproximationGuardFailed,
  NotMonotone,
  UnsupportedFactor,
  ZeroSignal,
  SchemaMismatch,
  Internal
};

const char* error_kind_name(ErrorKind k);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace flatcover
