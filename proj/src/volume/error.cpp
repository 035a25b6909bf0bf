#include "subseg/error.hpp"

#include <sstream>

#include "subseg/grid.hpp"

namespace subseg {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidOrientationCode: return "InvalidOrientationCode";
        case ErrorCode::NonPositiveSpacing: return "NonPositiveSpacing";
        case ErrorCode::ConstantIntensity: return "ConstantIntensity";
        case ErrorCode::EmptyVolume: return "EmptyVolume";
        case ErrorCode::FrameOutOfBounds: return "FrameOutOfBounds";
        case ErrorCode::IncompatibleDims: return "IncompatibleDims";
        case ErrorCode::OffsetOutOfPlan: return "OffsetOutOfPlan";
        case ErrorCode::NonNormalizedProbabilities: return "NonNormalizedProbabilities";
        case ErrorCode::UncoveredVoxel: return "UncoveredVoxel";
        case ErrorCode::UnknownClassIndex: return "UnknownClassIndex";
        case ErrorCode::InvalidLabelTable: return "InvalidLabelTable";
        case ErrorCode::ChannelMismatch: return "ChannelMismatch";
        case ErrorCode::SkipShapeMismatch: return "SkipShapeMismatch";
        case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
        case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

std::string to_string(const Index3& v) {
    std::ostringstream os;
    os << "(" << v[0] << ", " << v[1] << ", " << v[2] << ")";
    return os.str();
}

}  // namespace subseg
