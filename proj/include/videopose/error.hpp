#pragma once

#include <stdexcept>
#include <string>

namespace vp {

enum class ErrorCode {
  kInvalidInput,
  kInvalidArgument,
  kBehindCamera,
  kInvalidDepth,
  kShape,
  kInvalidRoi,
  kLoad,
  kCheckpoint,
  kNumerical,
  kUsage,
};

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error{what}, code_{code} {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vp
