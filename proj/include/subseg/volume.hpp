#pragma once

#include <array>
#include <string>
#include <string_view>

#include "subseg/grid.hpp"

namespace subseg {

/// 4x4 voxel-to-world (RAS+, mm) transform, row major.
using Affine = std::array<std::array<double, 4>, 4>;

Affine identity_affine();
Affine multiply(const Affine& a, const Affine& b);
Affine invert(const Affine& a);
Vec3 apply(const Affine& a, const Vec3& p);

/// Three-letter axis code. Letter n names the world direction voxel axis n increases toward.
class Orientation {
public:
    Orientation() = default;
    /// Throws InvalidOrientationCode unless the code is a signed permutation of {R/L, A/P, S/I}.
    explicit Orientation(std::string_view code);

    static Orientation ras() { return Orientation("RAS"); }

    const std::string& code() const noexcept { return code_; }
    /// World axis (0 = x/R, 1 = y/A, 2 = z/S) that voxel axis `axis` runs along.
    int world_axis(int axis) const;
    /// +1 when voxel axis `axis` points toward R, A or S; -1 otherwise.
    int sign(int axis) const;

    bool operator==(const Orientation&) const = default;

private:
    std::string code_ = "RAS";
};

enum class VolumeRole { Intensity, Label };

/// Scalar grid with the geometry needed to place it in world space.
struct Volume {
    FloatGrid data;
    Vec3 spacing{1.0, 1.0, 1.0};
    Orientation orientation;
    /// World position (mm) of voxel (0, 0, 0).
    Vec3 origin{0.0, 0.0, 0.0};
    VolumeRole role = VolumeRole::Intensity;

    /// Throws NonPositiveSpacing or ShapeMismatch on broken metadata.
    void validate() const;
    Affine affine() const;
};

/// Builds the axis-aligned geometry closest to `affine`. Returns the largest dropped
/// off-axis component (0 for axis-aligned inputs).
double geometry_from_affine(const Affine& affine, Vec3& spacing, Orientation& orientation, Vec3& origin);

}  // namespace subseg
