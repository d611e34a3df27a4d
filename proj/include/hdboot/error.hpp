#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hdboot {

enum class ErrorCode {
  InvalidArgument,
  RankDeficient,
  DegenerateScale,
  ExcessiveFailures,
  TooManyRedraws,
  InsufficientReplicates,
  DegenerateCdf,
  NumericalUnderflow,
  ZeroRow,
  NoBracket,
  NoSolution,
  SingularS,
  NonConvergence,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Numeric failures are reported with exit code 2 by the CLI; usage problems with 1.
inline bool is_usage_error(ErrorCode code) {
  return code == ErrorCode::InvalidArgument || code == ErrorCode::Io;
}

}  // namespace hdboot
