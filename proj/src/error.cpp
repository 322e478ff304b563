#include "pixpoint/error.hpp"

namespace pixpoint {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kGraphConsumed: return "graph_consumed";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kMissingCheckpoint: return "missing_checkpoint";
    case ErrorCode::kDatasetMismatch: return "dataset_mismatch";
    case ErrorCode::kStageOrder: return "stage_order";
    case ErrorCode::kDegenerate: return "degenerate";
  }
  return "unknown";
}

}  // namespace pixpoint
