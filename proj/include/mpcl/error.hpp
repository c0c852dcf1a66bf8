#pragma once

#include <stdexcept>
#include <string>

namespace mpcl {

enum class ErrorCode {
  ConstantVolume,
  PatchTooLarge,
  ShapeMismatch,
  InvalidParam,
  InvalidLabel,
  EmptySplit,
  ShapeNotDivisible,
  DegeneratePrototypes,
  EmptyMask,
  NonFiniteLoss,
  Io,
  Config,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

}  // namespace mpcl
