#pragma once

#include <stdexcept>
#include <string>

namespace uncpnp {

enum class ErrorCode {
  kDepthZero,
  kSingular180,
  kDegenerateGeometry,
  kDegenerateBaseline,
  kDegenerateTriple,
  kTranslationGaugeDegenerate,
  kNoStationaryPoint,
  kNoModelFound,
  kNoConvergence,
  kAllCandidatesBehindCamera,
  kLevelOutOfRange,
  kInvalidInput,
};

/// Exception carrying a machine-checkable failure code next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uncpnp
