#include "subseg/training.hpp"

#include <algorithm>
#include <cmath>

namespace subseg::training {

namespace {

struct Ellipsoid {
    Vec3 center;
    Vec3 radii;
};

template <class F>
void for_each_inside(const Ellipsoid& e, const Index3& dims, F&& f) {
    Index3 lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor(e.center[a] - e.radii[a])));
        hi[a] = std::min(dims[a] - 1, static_cast<int>(std::ceil(e.center[a] + e.radii[a])));
    }
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                const double x = (i - e.center[0]) / e.radii[0], y = (j - e.center[1]) / e.radii[1],
                             z = (k - e.center[2]) / e.radii[2];
                const double r2 = x * x + y * y + z * z;
                if (r2 <= 1.0) f(i, j, k, r2);
            }
}

// Left-hemisphere structures whose right counterparts are mirrored across x = 128.
constexpr std::array<int, 12> kPairedLeft{4, 5, 7, 8, 10, 11, 12, 13, 17, 18, 26, 28};
constexpr std::array<int, 12> kPairedRight{43, 44, 46, 47, 49, 50, 51, 52, 53, 54, 58, 60};
constexpr std::array<int, 4> kUnpaired{14, 15, 16, 24};

}  // namespace

Phantom make_phantom(std::uint64_t seed, const LabelTable& table) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto jitter = [&](double amount) { return (2.0 * unit(rng) - 1.0) * amount; };

    const Index3 dims = kConformedDims;
    LabelGrid labels(dims, 0);
    MaskGrid head(dims, 0);

    const double mid = kConformedSide / 2.0;
    const Ellipsoid skull{{mid + jitter(1.0), mid + jitter(1.0), mid + jitter(1.0)},
                          {76.0 + jitter(1.0), 76.0 + jitter(1.0), 76.0 + jitter(1.0)}};
    for_each_inside(skull, dims, [&](int i, int j, int k, double r2) {
        head(i, j, k) = 1;
        if (r2 >= 0.92 * 0.92) labels(i, j, k) = 24;
    });

    // 2 x 4 x 4 lattice around the centre: x columns 0-1 are left, 2-3 their mirror images.
    const auto slot_center = [&](int gx, int gy, int gz) {
        return Vec3{mid + 22.0 * (gx - 1.5), mid + 22.0 * (gy - 1.5), mid + 44.0 * (gz - 0.5)};
    };
    const auto draw_shape = [&](Vec3 c) {
        Ellipsoid e{c, {9.5 * (0.85 + 0.15 * unit(rng)), 9.5 * (0.85 + 0.15 * unit(rng)), 19.0 * (0.85 + 0.15 * unit(rng))}};
        for (double& x : e.center) x += jitter(1.5);
        return e;
    };
    const auto paint = [&](const Ellipsoid& e, int id) {
        for_each_inside(e, dims, [&](int i, int j, int k, double) { labels(i, j, k) = id; });
    };
    const auto inner = [](const Ellipsoid& e, double zshift) {
        return Ellipsoid{{e.center[0], e.center[1], e.center[2] + zshift}, {e.radii[0] * 0.4, e.radii[1] * 0.4, e.radii[2] * 0.4}};
    };

    std::vector<Vec3> left_slots;
    for (int gz = 0; gz < 2; ++gz)
        for (int gy = 0; gy < 4; ++gy)
            for (int gx = 0; gx < 2; ++gx) left_slots.push_back(slot_center(gx, gy, gz));
    for (std::size_t n = 0; n < kPairedLeft.size(); ++n) {
        Ellipsoid left = draw_shape(left_slots[n]);
        Ellipsoid right = left;
        right.center[0] = 2.0 * mid - left.center[0];
        right.center[1] += jitter(1.0);
        paint(left, kPairedLeft[n]);
        paint(right, kPairedRight[n]);
        if (kPairedLeft[n] == 4) {
            paint(inner(left, 0.0), 31);
            paint(inner(right, 0.0), 63);
        }
    }
    for (std::size_t n = 0; n < kUnpaired.size(); ++n) {
        Vec3 c = left_slots[kPairedLeft.size() + n];
        if (n >= 2) c[0] = 2.0 * mid - c[0];
        const Ellipsoid e = draw_shape(c);
        paint(e, kUnpaired[n]);
        if (kUnpaired[n] == 16) paint(inner(e, 5.0), 77);
    }

    // Class-dependent mean intensity, brighter for higher class index.
    std::vector<double> mean_of_id(256, 0.12);
    for (const auto& entry : table.entries()) {
        if (entry.class_index > 0 && entry.freesurfer_id < 256) mean_of_id[static_cast<std::size_t>(entry.freesurfer_id)] = 0.25 + 0.7 * entry.class_index / 31.0;
    }
    FloatGrid intensity(dims, 0.0f);
    std::normal_distribution<double> noise(0.0, 0.01);
    for (std::size_t n = 0; n < intensity.size(); ++n) {
        if (!head[n]) continue;
        const int id = labels[n];
        const double m = id >= 0 && id < 256 ? mean_of_id[static_cast<std::size_t>(id)] : 0.5;
        intensity[n] = static_cast<float>(std::clamp(m + noise(rng), 0.01, 1.0));
    }
    return {std::move(intensity), std::move(labels)};
}

std::vector<Phantom> make_phantoms(std::uint64_t seed, int num_cases, const LabelTable& table) {
    std::vector<Phantom> out;
    out.reserve(static_cast<std::size_t>(std::max(0, num_cases)));
    for (int n = 0; n < num_cases; ++n) out.push_back(make_phantom(seed + static_cast<std::uint64_t>(n), table));
    return out;
}

}  // namespace subseg::training
