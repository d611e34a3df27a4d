#include "hdboot/error.hpp"

namespace hdboot {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DegenerateScale: return "DegenerateScale";
    case ErrorCode::ExcessiveFailures: return "ExcessiveFailures";
    case ErrorCode::TooManyRedraws: return "TooManyRedraws";
    case ErrorCode::InsufficientReplicates: return "InsufficientReplicates";
    case ErrorCode::DegenerateCdf: return "DegenerateCdf";
    case ErrorCode::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::NoBracket: return "NoBracket";
    case ErrorCode::NoSolution: return "NoSolution";
    case ErrorCode::SingularS: return "SingularS";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace hdboot
