#include "subseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace subseg::training {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col)
            for (int n = 0; n < 3; ++n) c[r][col] += a[r][n] * b[n][col];
    return c;
}

Mat3 rotation(int axis, double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    Mat3 m{};
    m[axis][axis] = 1.0;
    m[u][u] = c;
    m[u][v] = -s;
    m[v][u] = s;
    m[v][v] = c;
    return m;
}

float sample_trilinear_clamped(const FloatGrid& g, double x, double y, double z) {
    const auto& d = g.dims();
    x = std::clamp(x, 0.0, double(d[0] - 1));
    y = std::clamp(y, 0.0, double(d[1] - 1));
    z = std::clamp(z, 0.0, double(d[2] - 1));
    const int i0 = std::min(static_cast<int>(x), d[0] - 1), j0 = std::min(static_cast<int>(y), d[1] - 1),
              k0 = std::min(static_cast<int>(z), d[2] - 1);
    const int i1 = std::min(i0 + 1, d[0] - 1), j1 = std::min(j0 + 1, d[1] - 1), k1 = std::min(k0 + 1, d[2] - 1);
    const double fx = x - i0, fy = y - j0, fz = z - k0;
    const double c00 = g(i0, j0, k0) * (1 - fx) + g(i1, j0, k0) * fx;
    const double c10 = g(i0, j1, k0) * (1 - fx) + g(i1, j1, k0) * fx;
    const double c01 = g(i0, j0, k1) * (1 - fx) + g(i1, j0, k1) * fx;
    const double c11 = g(i0, j1, k1) * (1 - fx) + g(i1, j1, k1) * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy;
    const double c1 = c01 * (1 - fy) + c11 * fy;
    return static_cast<float>(c0 * (1 - fz) + c1 * fz);
}

void apply_affine(TrainingPatch& p, std::mt19937_64& rng, const AugmentConfig& cfg) {
    std::uniform_real_distribution<double> angle(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    std::uniform_real_distribution<double> scale(cfg.min_scale, cfg.max_scale);
    std::uniform_real_distribution<double> shift(-cfg.max_translation, cfg.max_translation);
    const double deg = std::numbers::pi / 180.0;
    const double ax = angle(rng) * deg, ay = angle(rng) * deg, az = angle(rng) * deg;
    const double s = scale(rng);
    const Vec3 t{shift(rng), shift(rng), shift(rng)};

    // output -> input: x_in = R^T (x_out - c - t) / s + c
    const Mat3 r = matmul(rotation(2, az), matmul(rotation(1, ay), rotation(0, ax)));
    const auto& d = p.intensity.dims();
    const Vec3 c{(d[0] - 1) / 2.0, (d[1] - 1) / 2.0, (d[2] - 1) / 2.0};
    FloatGrid intensity(d);
    LabelGrid labels(d);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const Vec3 q{i - c[0] - t[0], j - c[1] - t[1], k - c[2] - t[2]};
                Vec3 src{};
                for (int a = 0; a < 3; ++a) src[a] = (r[0][a] * q[0] + r[1][a] * q[1] + r[2][a] * q[2]) / s + c[a];
                intensity(i, j, k) = sample_trilinear_clamped(p.intensity, src[0], src[1], src[2]);
                const int ni = std::clamp(static_cast<int>(std::lround(src[0])), 0, d[0] - 1);
                const int nj = std::clamp(static_cast<int>(std::lround(src[1])), 0, d[1] - 1);
                const int nk = std::clamp(static_cast<int>(std::lround(src[2])), 0, d[2] - 1);
                labels(i, j, k) = p.labels(ni, nj, nk);
            }
    p.intensity = std::move(intensity);
    p.labels = std::move(labels);
}

void apply_noise(FloatGrid& g, std::mt19937_64& rng, const AugmentConfig& cfg) {
    const auto [lo, hi] = std::minmax_element(g.storage().begin(), g.storage().end());
    const double range = double(*hi) - double(*lo);
    const double sigma = std::uniform_real_distribution<double>(0.0, cfg.max_noise_fraction)(rng) * range;
    if (sigma <= 0.0) return;
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t n = 0; n < g.size(); ++n) g[n] = static_cast<float>(g[n] + noise(rng));
}

void apply_blur(FloatGrid& g, std::mt19937_64& rng, const AugmentConfig& cfg) {
    const double sigma = std::uniform_real_distribution<double>(cfg.min_blur_sigma, cfg.max_blur_sigma)(rng);
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int o = -radius; o <= radius; ++o) total += kernel[static_cast<std::size_t>(o + radius)] = std::exp(-0.5 * o * o / (sigma * sigma));
    for (double& w : kernel) w /= total;

    const auto& d = g.dims();
    for (int axis = 0; axis < 3; ++axis) {
        FloatGrid out(d);
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    double acc = 0.0;
                    for (int o = -radius; o <= radius; ++o) {
                        Index3 at{i, j, k};
                        at[axis] = std::clamp(at[axis] + o, 0, d[axis] - 1);
                        acc += kernel[static_cast<std::size_t>(o + radius)] * g(at[0], at[1], at[2]);
                    }
                    out(i, j, k) = static_cast<float>(acc);
                }
        g = std::move(out);
    }
}

}  // namespace

void AugmentConfig::validate() const {
    const auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "augment: " + what); };
    if (!(probability >= 0.0 && probability <= 1.0)) fail("probability must lie in [0, 1]");
    if (max_rotation_deg < 0.0 || max_translation < 0.0 || max_noise_fraction < 0.0) fail("ranges must be non-negative");
    if (!(min_scale > 0.0 && min_scale <= max_scale)) fail("scale range must be positive and ordered");
    if (!(min_blur_sigma > 0.0 && min_blur_sigma <= max_blur_sigma)) fail("blur range must be positive and ordered");
}

AugmentDraw augment(TrainingPatch& patch, std::mt19937_64& rng, const AugmentConfig& cfg) {
    if (patch.intensity.dims() != patch.labels.dims()) throw Error(ErrorCode::ShapeMismatch, "augment needs aligned grids");
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    AugmentDraw draw;
    draw.affine = coin(rng) < cfg.probability;
    draw.noise = coin(rng) < cfg.probability;
    draw.blur = coin(rng) < cfg.probability;
    if (draw.affine) apply_affine(patch, rng, cfg);
    if (draw.noise) apply_noise(patch.intensity, rng, cfg);
    if (draw.blur) apply_blur(patch.intensity, rng, cfg);
    return draw;
}

TrainingPatch sample_training_patch(const FloatGrid& intensity, const LabelGrid& labels, const PatchPlan& plan,
                                    std::mt19937_64& rng) {
    if (intensity.dims() != plan.crop_dims || labels.dims() != plan.crop_dims) {
        throw Error(ErrorCode::ShapeMismatch, "training crop does not match plan " + to_string(plan.crop_dims));
    }
    const bool has_foreground = std::any_of(labels.storage().begin(), labels.storage().end(), [](int v) { return v != 0; });
    std::uniform_int_distribution<std::size_t> pick(0, plan.offsets.size() - 1);
    const bool biased = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 && has_foreground;
    const Index3 side{plan.patch_size, plan.patch_size, plan.patch_size};

    TrainingPatch out;
    while (true) {
        out.offset = plan.offsets[pick(rng)];
        out.labels = copy_box(labels, out.offset, side);
        if (!biased || std::any_of(out.labels.storage().begin(), out.labels.storage().end(), [](int v) { return v != 0; })) break;
    }
    out.intensity = copy_box(intensity, out.offset, side);
    return out;
}

}  // namespace subseg::training
