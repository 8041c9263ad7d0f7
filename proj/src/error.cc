#include "mpaudit/error.h"

namespace mpaudit {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingColumn:
      return "MissingColumn";
    case ErrorCode::kNonNumericFeature:
      return "NonNumericFeature";
    case ErrorCode::kDegenerateLabels:
      return "DegenerateLabels";
    case ErrorCode::kInvalidSpec:
      return "InvalidSpec";
    case ErrorCode::kDimensionMismatch:
      return "DimensionMismatch";
    case ErrorCode::kOneClassOnly:
      return "OneClassOnly";
    case ErrorCode::kNoConvergence:
      return "NoConvergence";
    case ErrorCode::kZeroFeatureVector:
      return "ZeroFeatureVector";
    case ErrorCode::kInvalidBounds:
      return "InvalidBounds";
    case ErrorCode::kBaselineOutsideBox:
      return "BaselineOutsideBox";
    case ErrorCode::kUnbounded:
      return "Unbounded";
    case ErrorCode::kNumericalFailure:
      return "NumericalFailure";
    case ErrorCode::kTimeLimit:
      return "TimeLimit";
    case ErrorCode::kIoError:
      return "IoError";
    case ErrorCode::kParseError:
      return "ParseError";
    case ErrorCode::kInvalidConfig:
      return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace mpaudit
