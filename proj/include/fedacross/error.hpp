#pragma once

#include <stdexcept>
#include <string>

namespace fedacross {

enum class ErrorCode {
  Shape,
  Index,
  DegenerateUpdate,
  Statistics,
  Config,
  Scarcity,
  Stratification,
  EmptySupport,
  NotReady,
  Unsupported,
  NoTrainable,
  DegenerateStream,
  Exhaustion,
  Weighting,
  Protocol,
  Transport,
  Divergence,
  Io,
  Serialization,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedacross
