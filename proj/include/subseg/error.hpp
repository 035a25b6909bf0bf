#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace subseg {

enum class ErrorCode {
    // volume_core
    InvalidOrientationCode,
    NonPositiveSpacing,
    ConstantIntensity,
    EmptyVolume,
    FrameOutOfBounds,
    // patch_engine
    IncompatibleDims,
    OffsetOutOfPlan,
    NonNormalizedProbabilities,
    UncoveredVoxel,
    UnknownClassIndex,
    InvalidLabelTable,
    // model
    ChannelMismatch,
    SkipShapeMismatch,
    CheckpointMismatch,
    CorruptCheckpoint,
    // training
    EmptyDataset,
    NonFiniteLoss,
    // metrics
    EmptyInput,
    // shared
    ShapeMismatch,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace subseg
