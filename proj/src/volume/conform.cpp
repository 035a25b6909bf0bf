#include "subseg/conform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace subseg {

namespace {

nlohmann::json affine_json(const Affine& a) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : a) rows.push_back(row);
    return rows;
}

float sample_trilinear(const FloatGrid& g, double x, double y, double z) {
    const auto& d = g.dims();
    // Outside the support of the 8-neighbourhood everything reads as zero.
    if (x <= -1.0 || y <= -1.0 || z <= -1.0 || x >= d[0] || y >= d[1] || z >= d[2]) return 0.0f;
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
    const double tx = x - fx, ty = y - fy, tz = z - fz;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const int zz = z0 + dz;
        const double wz = dz ? tz : 1.0 - tz;
        if (wz == 0.0 || zz < 0 || zz >= d[2]) continue;
        for (int dy = 0; dy < 2; ++dy) {
            const int yy = y0 + dy;
            const double wy = dy ? ty : 1.0 - ty;
            if (wy == 0.0 || yy < 0 || yy >= d[1]) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const int xx = x0 + dx;
                const double wx = dx ? tx : 1.0 - tx;
                if (wx == 0.0 || xx < 0 || xx >= d[0]) continue;
                acc += wx * wy * wz * g(xx, yy, zz);
            }
        }
    }
    return static_cast<float>(acc);
}

float sample_nearest(const FloatGrid& g, double x, double y, double z) {
    const int i = static_cast<int>(std::lround(x));
    const int j = static_cast<int>(std::lround(y));
    const int k = static_cast<int>(std::lround(z));
    return g.contains(i, j, k) ? g(i, j, k) : 0.0f;
}

}  // namespace

std::string ResampleReport::to_json() const {
    nlohmann::json j;
    j["input"] = {{"dims", input_dims},
                  {"spacing", input_spacing},
                  {"orientation", input_orientation},
                  {"origin", input_origin}};
    j["centroid_voxel"] = centroid_voxel;
    j["anchor_voxel"] = anchor_voxel;
    j["output"] = {{"dims", kConformedDims},
                   {"spacing", Vec3{1.0, 1.0, 1.0}},
                   {"orientation", "RAS"},
                   {"affine", affine_json(output_affine)}};
    j["output_to_input_voxel"] = affine_json(output_to_input);
    j["oblique_residual"] = oblique_residual;
    j["interpolation"] = interpolation == Interpolation::Trilinear ? "trilinear" : "nearest";
    j["resampled"] = resampled;
    return j.dump(2);
}

FloatGrid resample(const Volume& v, const Affine& target, const Index3& dims, Interpolation interp) {
    v.validate();
    const Affine vox = multiply(invert(v.affine()), target);
    FloatGrid out(dims);
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            for (int i = 0; i < dims[0]; ++i) {
                const Vec3 q = subseg::apply(vox, Vec3{double(i), double(j), double(k)});
                out(i, j, k) = interp == Interpolation::Trilinear ? sample_trilinear(v.data, q[0], q[1], q[2])
                                                                  : sample_nearest(v.data, q[0], q[1], q[2]);
            }
        }
    }
    return out;
}

bool is_conformed(const Volume& v) {
    if (v.data.dims() != kConformedDims || !(v.orientation == Orientation::ras())) return false;
    return std::all_of(v.spacing.begin(), v.spacing.end(), [](double s) { return std::abs(s - 1.0) < 1e-6; });
}

ConformResult conform(const Volume& v) {
    v.validate();
    ResampleReport report;
    report.input_dims = v.data.dims();
    report.input_spacing = v.spacing;
    report.input_orientation = v.orientation.code();
    report.input_origin = v.origin;
    report.interpolation = v.role == VolumeRole::Label ? Interpolation::Nearest : Interpolation::Trilinear;

    const auto& d = v.data.dims();
    double mass = 0.0;
    Vec3 moment{0.0, 0.0, 0.0};
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const double w = std::max(0.0f, v.data(i, j, k));
                if (w == 0.0) continue;
                mass += w;
                moment[0] += w * i;
                moment[1] += w * j;
                moment[2] += w * k;
            }
    for (int a = 0; a < 3; ++a) report.centroid_voxel[a] = mass > 0.0 ? moment[a] / mass : 0.5 * (d[a] - 1);

    const Affine in_affine = v.affine();
    const Vec3 centroid_world = subseg::apply(in_affine, report.centroid_voxel);
    Vec3 anchor_world{};
    for (int w = 0; w < 3; ++w) anchor_world[w] = v.origin[w] + std::round(centroid_world[w] - v.origin[w]);
    for (int a = 0; a < 3; ++a) {
        const int w = v.orientation.world_axis(a);
        report.anchor_voxel[a] = (anchor_world[w] - v.origin[w]) / (v.orientation.sign(a) * v.spacing[a]);
    }
    Affine out = identity_affine();
    for (int w = 0; w < 3; ++w) out[w][3] = anchor_world[w] - kConformedSide / 2;
    report.output_affine = out;
    report.output_to_input = multiply(invert(in_affine), out);

    Volume result;
    result.spacing = {1.0, 1.0, 1.0};
    result.orientation = Orientation::ras();
    result.origin = {out[0][3], out[1][3], out[2][3]};
    result.role = v.role;

    bool on_lattice = is_conformed(v);
    for (int a = 0; a < 3; ++a) on_lattice = on_lattice && std::abs(report.anchor_voxel[a] - kConformedSide / 2) < 1e-9;
    report.resampled = !on_lattice;
    if (!report.resampled) {
        result.data = v.data;
    } else {
        result.data = resample(v, out, kConformedDims, report.interpolation);
    }
    return {std::move(result), report};
}

IntensityRange brain_intensity_range(const FloatGrid& g) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (float x : g.values()) {
        if (x == 0.0f) continue;
        lo = std::min(lo, double(x));
        hi = std::max(hi, double(x));
    }
    if (!std::isfinite(lo)) throw Error(ErrorCode::EmptyVolume, "no nonzero voxels to rescale");
    if (hi == lo) throw Error(ErrorCode::ConstantIntensity, "all nonzero voxels share the value " + std::to_string(lo));
    return {lo, hi};
}

FloatGrid apply_intensity_range(const FloatGrid& g, const IntensityRange& range) {
    FloatGrid out(g.dims());
    const double scale = 1.0 / (range.max - range.min);
    for (std::size_t n = 0; n < g.size(); ++n) {
        const float x = g[n];
        if (x == 0.0f) continue;
        out[n] = static_cast<float>(std::clamp((x - range.min) * scale, 0.0, 1.0));
    }
    return out;
}

FloatGrid rescale_intensity(const FloatGrid& g) { return apply_intensity_range(g, brain_intensity_range(g)); }

void CropFrame::validate(const Index3& full) const {
    for (int a = 0; a < 3; ++a) {
        if (offset[a] < 0 || offset[a] + dims[a] > full[a]) {
            throw Error(ErrorCode::FrameOutOfBounds,
                        "frame " + to_string(dims) + " at " + to_string(offset) + " exceeds " + to_string(full));
        }
        if (dims[a] < kPatchSide || (dims[a] - kPatchSide) % kCropGranularity != 0) {
            throw Error(ErrorCode::FrameOutOfBounds, "frame side " + std::to_string(dims[a]) + " is not 96 + 16k");
        }
    }
}

int crop_side_for_extent(int extent) {
    if (extent <= kPatchSide) return kPatchSide;
    const int steps = (extent - kPatchSide + kCropGranularity - 1) / kCropGranularity;
    return kPatchSide + steps * kCropGranularity;
}

Cropped crop_to_content(const FloatGrid& conformed) {
    const auto& d = conformed.dims();
    Index3 lo{d[0], d[1], d[2]};
    Index3 hi{-1, -1, -1};
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (conformed(i, j, k) == 0.0f) continue;
                lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
                hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
            }
    if (hi[0] < 0) throw Error(ErrorCode::EmptyVolume, "volume has no nonzero voxels");

    CropFrame frame;
    for (int a = 0; a < 3; ++a) {
        const int extent = hi[a] - lo[a] + 1;
        const int side = crop_side_for_extent(extent);
        if (side > d[a]) {
            throw Error(ErrorCode::FrameOutOfBounds, "content extent " + std::to_string(extent) + " cannot be padded within the grid");
        }
        const int pad = side - extent;
        int offset = lo[a] - pad / 2;
        offset = std::clamp(offset, 0, d[a] - side);
        frame.offset[a] = offset;
        frame.dims[a] = side;
    }
    return {copy_box(conformed, frame.offset, frame.dims), frame};
}

LabelGrid restore_to_full(const LabelGrid& labels, const CropFrame& frame, const Index3& full) {
    if (labels.dims() != frame.dims) {
        throw Error(ErrorCode::FrameOutOfBounds,
                    "label grid " + to_string(labels.dims()) + " does not match frame " + to_string(frame.dims));
    }
    for (int a = 0; a < 3; ++a) {
        if (frame.offset[a] < 0 || frame.offset[a] + frame.dims[a] > full[a]) {
            throw Error(ErrorCode::FrameOutOfBounds,
                        "frame " + to_string(frame.dims) + " at " + to_string(frame.offset) + " exceeds " + to_string(full));
        }
    }
    LabelGrid out(full, 0);
    paste_box(out, labels, frame.offset);
    return out;
}

}  // namespace subseg
