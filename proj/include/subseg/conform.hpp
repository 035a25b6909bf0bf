#pragma once

#include <string>

#include "subseg/volume.hpp"

namespace subseg {

inline constexpr int kConformedSide = 256;
inline constexpr Index3 kConformedDims{kConformedSide, kConformedSide, kConformedSide};

enum class Interpolation { Trilinear, Nearest };

/// What conform() did to get from the input grid to the conformed grid.
struct ResampleReport {
    Index3 input_dims{};
    Vec3 input_spacing{};
    std::string input_orientation;
    Vec3 input_origin{};
    /// Intensity centroid in input voxel coordinates.
    Vec3 centroid_voxel{};
    /// Input voxel coordinates of the point placed at conformed voxel 128: the centroid's world
    /// position rounded to whole millimetres from the input origin.
    Vec3 anchor_voxel{};
    Affine output_affine{};
    /// Maps conformed voxel indices to (fractional) input voxel indices.
    Affine output_to_input{};
    double oblique_residual = 0.0;
    Interpolation interpolation = Interpolation::Trilinear;
    /// False when the input was already on the conformed grid and was copied verbatim.
    bool resampled = true;

    std::string to_json() const;
};

struct ConformResult {
    Volume volume;
    ResampleReport report;
};

/// Resamples to RAS, 1 mm isotropic, 256^3 with the intensity centroid at the grid centre.
ConformResult conform(const Volume& v);

/// Samples `v` on a grid of `dims` whose voxel-to-world transform is `target`.
FloatGrid resample(const Volume& v, const Affine& target, const Index3& dims, Interpolation interp);

/// Header check: 256^3, 1 mm isotropic, RAS.
bool is_conformed(const Volume& v);

struct IntensityRange {
    double min = 0.0;
    double max = 1.0;
};

/// Min and max over nonzero voxels. Throws EmptyVolume or ConstantIntensity.
IntensityRange brain_intensity_range(const FloatGrid& g);
/// (x - min) / (max - min) clipped to [0, 1]; zeros stay zero.
FloatGrid apply_intensity_range(const FloatGrid& g, const IntensityRange& range);
FloatGrid rescale_intensity(const FloatGrid& g);

/// Placement of a crop inside the conformed grid.
struct CropFrame {
    Index3 offset{0, 0, 0};
    Index3 dims{0, 0, 0};

    /// Throws FrameOutOfBounds unless the frame fits `full` and every side is 96 + 16k.
    void validate(const Index3& full = kConformedDims) const;
    bool operator==(const CropFrame&) const = default;
};

inline constexpr int kPatchSide = 96;
inline constexpr int kCropGranularity = 16;

/// Smallest d >= extent with d >= 96 and (d - 96) % 16 == 0.
int crop_side_for_extent(int extent);

struct Cropped {
    FloatGrid data;
    CropFrame frame;
};

/// Crops to the nonzero bounding box padded symmetrically (extra voxel high) to a patchable size.
Cropped crop_to_content(const FloatGrid& conformed);

/// Places `labels` at `frame.offset` in a zero grid of `full` dims.
LabelGrid restore_to_full(const LabelGrid& labels, const CropFrame& frame, const Index3& full = kConformedDims);

}  // namespace subseg
