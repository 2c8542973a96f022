#include "csm/error.hpp"

namespace csm {

std::string_view error_tag(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "E_INVALID_ARGUMENT";
    case ErrorCode::kDegenerateFace: return "E_DEGENERATE_FACE";
    case ErrorCode::kIndexOutOfRange: return "E_INDEX_RANGE";
    case ErrorCode::kDimensionMismatch: return "E_DIMENSION";
    case ErrorCode::kTopologyMismatch: return "E_TOPOLOGY_MISMATCH";
    case ErrorCode::kTopologyCollapse: return "E_TOPOLOGY_COLLAPSE";
    case ErrorCode::kDegenerateAlignment: return "E_DEGENERATE_ALIGNMENT";
    case ErrorCode::kDomain: return "E_DOMAIN";
    case ErrorCode::kZeroVariance: return "E_ZERO_VARIANCE";
    case ErrorCode::kNonFinite: return "E_NON_FINITE";
    case ErrorCode::kParse: return "E_PARSE";
    case ErrorCode::kIo: return "E_IO";
    case ErrorCode::kUnknownNode: return "E_UNKNOWN_NODE";
    case ErrorCode::kConfig: return "E_CONFIG";
    case ErrorCode::kDivergence: return "E_DIVERGENCE";
    case ErrorCode::kChecksum: return "E_CHECKSUM";
  }
  return "E_UNKNOWN";
}

bool is_user_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFinite:
    case ErrorCode::kDivergence:
    case ErrorCode::kTopologyCollapse:
      return false;
    default:
      return true;
  }
}

}  // namespace csm
