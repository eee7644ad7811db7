#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace telepresence {

enum class ErrorCode {
  InvalidArgument,
  InvalidPose,
  UnknownNode,
  ImmutableEdge,
  StaleUpdate,
  DegenerateCorners,
  BehindCamera,
  EmptyInput,
  TimestampOrder,
  NegativeDelay,
  NotInitialized,
  EmptyCloud,
  ZeroWeights,
  DegenerateConfiguration,
  TooFewPoints,
  NoCorrespondences,
  BadEndpoints,
  Disconnected,
  SingularNormalEquations,
  EmptyCrop,
  TooFewSamples,
  SingularCovariance,
  KTooLarge,
  UnknownMethod,
  ParseError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind instead of the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace telepresence
