#ifndef MPAUDIT_ERROR_H_
#define MPAUDIT_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace mpaudit {

enum class ErrorCode {
  kMissingColumn,
  kNonNumericFeature,
  kDegenerateLabels,
  kInvalidSpec,
  kDimensionMismatch,
  kOneClassOnly,
  kNoConvergence,
  kZeroFeatureVector,
  kInvalidBounds,
  kBaselineOutsideBox,
  kUnbounded,
  kNumericalFailure,
  kTimeLimit,
  kIoError,
  kParseError,
  kInvalidConfig,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// failure class so callers (the CLI in particular) can map it to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mpaudit

#endif  // MPAUDIT_ERROR_H_
