#include "mpcl/error.hpp"

namespace mpcl {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ConstantVolume: return "ConstantVolume";
    case ErrorCode::PatchTooLarge: return "PatchTooLarge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidParam: return "InvalidParam";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ShapeNotDivisible: return "ShapeNotDivisible";
    case ErrorCode::DegeneratePrototypes: return "DegeneratePrototypes";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace mpcl
