#pragma once

#include <algorithm>
#include <cmath>

#include "subseg/patch.hpp"

namespace subseg::testing {

/// Returns the one-hot encoding of a known class-index grid under each patch window.
class OneHotOracle : public PatchPredictor {
public:
    explicit OneHotOracle(LabelGrid classes) : classes_(std::move(classes)) {}

    PatchProbabilities predict(const FloatGrid& patch, const PatchLocation& where) override {
        PatchProbabilities p;
        p.values.assign(p.voxels() * p.classes, 0.0f);
        const Index3 o = where.conformed_offset();
        const int s = p.side;
        for (int k = 0; k < s; ++k)
            for (int j = 0; j < s; ++j)
                for (int i = 0; i < s; ++i) {
                    const int c = classes_(o[0] + i, o[1] + j, o[2] + k);
                    p.values[static_cast<std::size_t>(c) * p.voxels() + patch.index(i, j, k)] = 1.0f;
                }
        return p;
    }

private:
    LabelGrid classes_;
};

class UniformPredictor : public PatchPredictor {
public:
    PatchProbabilities predict(const FloatGrid&, const PatchLocation&) override {
        PatchProbabilities p;
        p.values.assign(p.voxels() * p.classes, 1.0f / p.classes);
        return p;
    }
};

/// Patches covering voxel x on one axis of length d under stride 16, counted in closed form.
inline int closed_form_axis_count(int x, int d) {
    const int last = (d - kPatchSide) / kDefaultStride;
    const int hi = std::min(x / kDefaultStride, last);
    const int lo = std::max(0, (x - kPatchSide + kDefaultStride) / kDefaultStride);
    return hi - lo + 1;
}

}  // namespace subseg::testing
