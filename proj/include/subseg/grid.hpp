#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subseg/error.hpp"

namespace subseg {

using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

inline std::int64_t voxel_count(const Index3& dims) {
    return std::int64_t{dims[0]} * dims[1] * dims[2];
}

std::string to_string(const Index3& v);

/// Dense 3D grid stored with the first axis varying fastest (NIfTI order).
template <class T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(Index3 dims, T fill = T{}) : dims_(dims) {
        if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
            throw Error(ErrorCode::ShapeMismatch, "grid dimensions must be >= 1, got " + to_string(dims));
        }
        data_.assign(static_cast<std::size_t>(voxel_count(dims)), fill);
    }
    Grid(Index3 dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
        if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1 ||
            static_cast<std::int64_t>(data_.size()) != voxel_count(dims)) {
            throw Error(ErrorCode::ShapeMismatch, "grid data does not match dimensions " + to_string(dims));
        }
    }

    const Index3& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t index(int i, int j, int k) const noexcept {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims_[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k));
    }
    bool contains(int i, int j, int k) const noexcept {
        return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
    }

    T& operator()(int i, int j, int k) noexcept { return data_[index(i, j, k)]; }
    const T& operator()(int i, int j, int k) const noexcept { return data_[index(i, j, k)]; }
    T& operator[](std::size_t n) noexcept { return data_[n]; }
    const T& operator[](std::size_t n) const noexcept { return data_[n]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    bool operator==(const Grid&) const = default;

private:
    Index3 dims_{0, 0, 0};
    std::vector<T> data_;
};

using FloatGrid = Grid<float>;
using LabelGrid = Grid<std::int32_t>;
using MaskGrid = Grid<std::uint8_t>;

/// Copies the box [offset, offset + dims) out of `src`. Voxels outside `src` read as zero.
template <class T>
Grid<T> copy_box(const Grid<T>& src, const Index3& offset, const Index3& dims) {
    Grid<T> out(dims);
    for (int k = 0; k < dims[2]; ++k) {
        const int sk = offset[2] + k;
        for (int j = 0; j < dims[1]; ++j) {
            const int sj = offset[1] + j;
            if (sk < 0 || sj < 0 || sk >= src.dims()[2] || sj >= src.dims()[1]) continue;
            for (int i = 0; i < dims[0]; ++i) {
                const int si = offset[0] + i;
                if (si >= 0 && si < src.dims()[0]) out(i, j, k) = src(si, sj, sk);
            }
        }
    }
    return out;
}

/// Writes `box` into `dst` at `offset`; the box must lie fully inside `dst`.
template <class T>
void paste_box(Grid<T>& dst, const Grid<T>& box, const Index3& offset) {
    for (int a = 0; a < 3; ++a) {
        if (offset[a] < 0 || offset[a] + box.dims()[a] > dst.dims()[a]) {
            throw Error(ErrorCode::FrameOutOfBounds,
                        "box " + to_string(box.dims()) + " at " + to_string(offset) + " exceeds " + to_string(dst.dims()));
        }
    }
    const auto& d = box.dims();
    for (int k = 0; k < d[2]; ++k) {
        for (int j = 0; j < d[1]; ++j) {
            const T* src = &box(0, j, k);
            T* out = &dst(offset[0], offset[1] + j, offset[2] + k);
            std::copy(src, src + d[0], out);
        }
    }
}

}  // namespace subseg
