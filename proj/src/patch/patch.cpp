#include "subseg/patch.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace subseg {

bool PatchPlan::contains(const Index3& offset) const {
    for (int a = 0; a < 3; ++a) {
        const auto& starts = axis_starts[static_cast<std::size_t>(a)];
        if (!std::binary_search(starts.begin(), starts.end(), offset[a])) return false;
    }
    return true;
}

PatchPlan plan_patches(const Index3& crop_dims, int stride) {
    if (stride < 1 || stride > kPatchSide) {
        throw Error(ErrorCode::InvalidConfig, "stride must be in 1..96, got " + std::to_string(stride));
    }
    PatchPlan plan;
    plan.stride = stride;
    plan.crop_dims = crop_dims;
    for (int a = 0; a < 3; ++a) {
        const int d = crop_dims[a];
        if (d < kPatchSide || (d - kPatchSide) % kCropGranularity != 0) {
            throw Error(ErrorCode::IncompatibleDims, "crop dims " + to_string(crop_dims) + " are not 96 + 16k per axis");
        }
        auto& starts = plan.axis_starts[static_cast<std::size_t>(a)];
        const int last = d - kPatchSide;
        for (int s = 0; s <= last; s += stride) starts.push_back(s);
        if (starts.back() != last) starts.push_back(last);
    }
    for (int x : plan.axis_starts[0])
        for (int y : plan.axis_starts[1])
            for (int z : plan.axis_starts[2]) plan.offsets.push_back({x, y, z});
    return plan;
}

FloatGrid extract_patch(const FloatGrid& crop, const PatchPlan& plan, const Index3& offset) {
    if (crop.dims() != plan.crop_dims) {
        throw Error(ErrorCode::ShapeMismatch, "crop " + to_string(crop.dims()) + " does not match plan " + to_string(plan.crop_dims));
    }
    if (!plan.contains(offset)) throw Error(ErrorCode::OffsetOutOfPlan, "offset " + to_string(offset) + " is not planned");
    const int side = plan.patch_size;
    return copy_box(crop, offset, {side, side, side});
}

ProbAccumulator::ProbAccumulator(const PatchPlan& plan, int classes)
    : plan_(plan), classes_(classes), voxels_(static_cast<std::size_t>(voxel_count(plan.crop_dims))) {
    sums_.assign(voxels_ * static_cast<std::size_t>(classes_), 0.0);
    counts_.assign(voxels_, 0);
}

void ProbAccumulator::accumulate(const Index3& offset, const PatchProbabilities& probs) {
    const int side = plan_.patch_size;
    if (probs.classes != classes_ || probs.side != side || probs.values.size() != probs.voxels() * classes_) {
        throw Error(ErrorCode::ShapeMismatch, "patch probabilities must be " + std::to_string(classes_) + " x " +
                                                  std::to_string(side) + "^3");
    }
    if (!plan_.contains(offset)) throw Error(ErrorCode::OffsetOutOfPlan, "offset " + to_string(offset) + " is not planned");

    const std::size_t pv = probs.voxels();
    for (std::size_t v = 0; v < pv; ++v) {
        double total = 0.0;
        for (int c = 0; c < classes_; ++c) {
            const float p = probs.values[static_cast<std::size_t>(c) * pv + v];
            if (!(p >= 0.0f)) throw Error(ErrorCode::NonNormalizedProbabilities, "negative or NaN probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-4) {
            throw Error(ErrorCode::NonNormalizedProbabilities, "per-voxel mass " + std::to_string(total) + " differs from 1");
        }
    }

    const auto& d = plan_.crop_dims;
    for (int c = 0; c < classes_; ++c) {
        double* dst = sums_.data() + static_cast<std::size_t>(c) * voxels_;
        const float* src = probs.values.data() + static_cast<std::size_t>(c) * pv;
        for (int k = 0; k < side; ++k) {
            for (int j = 0; j < side; ++j) {
                const std::size_t row = static_cast<std::size_t>(offset[0]) +
                                        static_cast<std::size_t>(d[0]) *
                                            (static_cast<std::size_t>(offset[1] + j) + static_cast<std::size_t>(d[1]) * (offset[2] + k));
                const float* s = src + static_cast<std::size_t>(side) * (j + static_cast<std::size_t>(side) * k);
                for (int i = 0; i < side; ++i) dst[row + i] += s[i];
            }
        }
    }
    for (int k = 0; k < side; ++k)
        for (int j = 0; j < side; ++j) {
            const std::size_t row = static_cast<std::size_t>(offset[0]) +
                                    static_cast<std::size_t>(d[0]) *
                                        (static_cast<std::size_t>(offset[1] + j) + static_cast<std::size_t>(d[1]) * (offset[2] + k));
            for (int i = 0; i < side; ++i) ++counts_[row + i];
        }
}

void ProbAccumulator::merge(const ProbAccumulator& other) {
    if (other.classes_ != classes_ || other.plan_.crop_dims != plan_.crop_dims) {
        throw Error(ErrorCode::ShapeMismatch, "cannot merge accumulators over different crops");
    }
    for (std::size_t n = 0; n < sums_.size(); ++n) sums_[n] += other.sums_[n];
    for (std::size_t n = 0; n < counts_.size(); ++n) counts_[n] += other.counts_[n];
}

LabelGrid ProbAccumulator::vote() const {
    LabelGrid out(plan_.crop_dims);
    for (std::size_t v = 0; v < voxels_; ++v) {
        if (counts_[v] == 0) throw Error(ErrorCode::UncoveredVoxel, "voxel " + std::to_string(v) + " was never covered");
        int best = 0;
        double best_mass = sums_[v];
        for (int c = 1; c < classes_; ++c) {
            const double m = sums_[static_cast<std::size_t>(c) * voxels_ + v];
            if (m > best_mass) {
                best_mass = m;
                best = c;
            }
        }
        out[v] = best;
    }
    return out;
}

double ProbAccumulator::sum(int cls, int i, int j, int k) const {
    const auto& d = plan_.crop_dims;
    return sums_[static_cast<std::size_t>(cls) * voxels_ + static_cast<std::size_t>(i) +
                 static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k)];
}

std::uint32_t ProbAccumulator::count(int i, int j, int k) const {
    const auto& d = plan_.crop_dims;
    return counts_[static_cast<std::size_t>(i) +
                   static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k)];
}

Cropped prepare_crop(const FloatGrid& conformed) {
    Cropped cropped = crop_to_content(conformed);
    cropped.data = apply_intensity_range(cropped.data, brain_intensity_range(conformed));
    return cropped;
}

SegmentResult segment_volume(const FloatGrid& conformed, PatchPredictor& model, const LabelTable& table,
                             const SegmentOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    Cropped cropped = prepare_crop(conformed);
    const PatchPlan plan = plan_patches(cropped.frame.dims, options.stride);
    ProbAccumulator acc(plan);
    std::size_t done = 0;
    for (const auto& offset : plan.offsets) {
        const FloatGrid patch = extract_patch(cropped.data, plan, offset);
        acc.accumulate(offset, model.predict(patch, PatchLocation{offset, cropped.frame}));
        if (options.progress) options.progress(++done, plan.offsets.size());
    }
    SegmentResult result;
    result.frame = cropped.frame;
    result.patch_count = plan.offsets.size();
    result.labels = restore_to_full(map_to_freesurfer(acc.vote(), table), cropped.frame, conformed.dims());
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace subseg
