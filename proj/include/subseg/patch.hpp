#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "subseg/conform.hpp"
#include "subseg/label_table.hpp"

namespace subseg {

inline constexpr int kDefaultStride = 16;

/// Sliding-window placements of 96^3 patches over a crop.
struct PatchPlan {
    int patch_size = kPatchSide;
    int stride = kDefaultStride;
    Index3 crop_dims{};
    /// Per-axis start positions; offsets is their lexicographic product.
    std::array<std::vector<int>, 3> axis_starts;
    std::vector<Index3> offsets;

    bool contains(const Index3& offset) const;
};

/// Per axis: 0, s, 2s, ... up to D - 96, with D - 96 appended when the stride skips it.
/// Requires D >= 96 and (D - 96) % 16 == 0 on every axis (IncompatibleDims), stride in 1..96 (InvalidConfig).
PatchPlan plan_patches(const Index3& crop_dims, int stride = kDefaultStride);

/// Verbatim 96^3 window at `offset`. Throws OffsetOutOfPlan.
FloatGrid extract_patch(const FloatGrid& crop, const PatchPlan& plan, const Index3& offset);

/// Class-major probabilities for one patch: value (c, i, j, k) at c * side^3 + index(i, j, k).
struct PatchProbabilities {
    int classes = kNumClasses;
    int side = kPatchSide;
    std::vector<float> values;

    std::size_t voxels() const { return static_cast<std::size_t>(side) * side * side; }
};

/// Summed per-class probability mass plus patch coverage counts over a crop.
class ProbAccumulator {
public:
    ProbAccumulator(const PatchPlan& plan, int classes = kNumClasses);

    /// Adds `probs` over the window at `offset`. Throws ShapeMismatch, OffsetOutOfPlan and
    /// NonNormalizedProbabilities (per-voxel sum off 1 by more than 1e-4).
    void accumulate(const Index3& offset, const PatchProbabilities& probs);
    /// Adds another accumulator over the same plan (partial sums from a worker).
    void merge(const ProbAccumulator& other);

    /// Argmax over summed mass, ties to the lowest class. Throws UncoveredVoxel.
    LabelGrid vote() const;

    const Index3& dims() const noexcept { return plan_.crop_dims; }
    int classes() const noexcept { return classes_; }
    double sum(int cls, int i, int j, int k) const;
    std::uint32_t count(int i, int j, int k) const;
    std::span<const double> sums() const noexcept { return sums_; }
    std::span<const std::uint32_t> counts() const noexcept { return counts_; }

private:
    PatchPlan plan_;
    int classes_;
    std::size_t voxels_;
    std::vector<double> sums_;
    std::vector<std::uint32_t> counts_;
};

/// Where a patch sits, for predictors that care (e.g. oracles built from reference labels).
struct PatchLocation {
    Index3 crop_offset{};
    CropFrame frame{};

    Index3 conformed_offset() const {
        return {frame.offset[0] + crop_offset[0], frame.offset[1] + crop_offset[1], frame.offset[2] + crop_offset[2]};
    }
};

/// Anything that turns a 96^3 intensity patch into per-voxel class probabilities.
class PatchPredictor {
public:
    virtual ~PatchPredictor() = default;
    virtual PatchProbabilities predict(const FloatGrid& patch, const PatchLocation& where) = 0;
};

struct SegmentOptions {
    int stride = kDefaultStride;
    /// Called after each patch with (done, total).
    std::function<void(std::size_t, std::size_t)> progress;
};

struct SegmentResult {
    LabelGrid labels;  // FreeSurfer IDs on the conformed grid
    CropFrame frame;
    std::size_t patch_count = 0;
    double seconds = 0.0;
};

/// Crops a conformed volume to its nonzero support and rescales the crop to [0, 1] using the
/// range of the whole volume. The frame is taken before rescaling so the darkest voxel still counts as content.
Cropped prepare_crop(const FloatGrid& conformed);

/// prepare_crop -> plan -> predict each patch -> accumulate -> vote -> map to FreeSurfer -> restore.
SegmentResult segment_volume(const FloatGrid& conformed, PatchPredictor& model, const LabelTable& table,
                             const SegmentOptions& options = {});

}  // namespace subseg
