#include "subseg/volume.hpp"

#include <cctype>
#include <cmath>

namespace subseg {

namespace {

struct AxisLetter {
    int world_axis;
    int sign;
};

bool parse_letter(char c, AxisLetter& out) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
        case 'R': out = {0, +1}; return true;
        case 'L': out = {0, -1}; return true;
        case 'A': out = {1, +1}; return true;
        case 'P': out = {1, -1}; return true;
        case 'S': out = {2, +1}; return true;
        case 'I': out = {2, -1}; return true;
        default: return false;
    }
}

constexpr char kLetters[3][2] = {{'L', 'R'}, {'P', 'A'}, {'I', 'S'}};

}  // namespace

Affine identity_affine() {
    Affine a{};
    for (int i = 0; i < 4; ++i) a[i][i] = 1.0;
    return a;
}

Affine multiply(const Affine& a, const Affine& b) {
    Affine r{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
}

Affine invert(const Affine& a) {
    // Affine inverse: [R t; 0 1]^-1 = [R^-1, -R^-1 t; 0 1].
    const auto& m = a;
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (std::abs(det) < 1e-12) throw Error(ErrorCode::InvalidConfig, "singular affine");
    Affine r{};
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    for (int i = 0; i < 3; ++i) {
        r[i][3] = -(r[i][0] * m[0][3] + r[i][1] * m[1][3] + r[i][2] * m[2][3]);
    }
    r[3] = {0.0, 0.0, 0.0, 1.0};
    return r;
}

Vec3 apply(const Affine& a, const Vec3& p) {
    Vec3 r{};
    for (int i = 0; i < 3; ++i) r[i] = a[i][0] * p[0] + a[i][1] * p[1] + a[i][2] * p[2] + a[i][3];
    return r;
}

Orientation::Orientation(std::string_view code) {
    if (code.size() != 3) {
        throw Error(ErrorCode::InvalidOrientationCode, "orientation code must have 3 letters: '" + std::string(code) + "'");
    }
    bool seen[3] = {false, false, false};
    code_.clear();
    for (char c : code) {
        AxisLetter l{};
        if (!parse_letter(c, l) || seen[l.world_axis]) {
            throw Error(ErrorCode::InvalidOrientationCode, "not a signed permutation of RAS: '" + std::string(code) + "'");
        }
        seen[l.world_axis] = true;
        code_.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
}

int Orientation::world_axis(int axis) const {
    AxisLetter l{};
    parse_letter(code_.at(static_cast<std::size_t>(axis)), l);
    return l.world_axis;
}

int Orientation::sign(int axis) const {
    AxisLetter l{};
    parse_letter(code_.at(static_cast<std::size_t>(axis)), l);
    return l.sign;
}

void Volume::validate() const {
    if (data.empty()) throw Error(ErrorCode::ShapeMismatch, "volume has no voxels");
    for (int a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw Error(ErrorCode::NonPositiveSpacing, "spacing must be positive on every axis");
        }
    }
}

Affine Volume::affine() const {
    Affine a{};
    for (int axis = 0; axis < 3; ++axis) {
        a[orientation.world_axis(axis)][axis] = orientation.sign(axis) * spacing[axis];
    }
    for (int w = 0; w < 3; ++w) a[w][3] = origin[w];
    a[3][3] = 1.0;
    return a;
}

double geometry_from_affine(const Affine& affine, Vec3& spacing, Orientation& orientation, Vec3& origin) {
    double unit[3][3]{};
    for (int axis = 0; axis < 3; ++axis) {
        const double norm = std::sqrt(affine[0][axis] * affine[0][axis] + affine[1][axis] * affine[1][axis] +
                                      affine[2][axis] * affine[2][axis]);
        if (!(norm > 0.0)) throw Error(ErrorCode::NonPositiveSpacing, "affine has a zero-length axis");
        spacing[axis] = norm;
        for (int w = 0; w < 3; ++w) unit[w][axis] = affine[w][axis] / norm;
    }
    // Greedy assignment by largest cosine, one world axis per voxel axis.
    bool axis_used[3] = {false, false, false};
    bool world_used[3] = {false, false, false};
    int world_of[3] = {0, 0, 0};
    for (int round = 0; round < 3; ++round) {
        double best = -1.0;
        int best_axis = 0, best_world = 0;
        for (int axis = 0; axis < 3; ++axis) {
            if (axis_used[axis]) continue;
            for (int w = 0; w < 3; ++w) {
                if (world_used[w]) continue;
                if (std::abs(unit[w][axis]) > best) {
                    best = std::abs(unit[w][axis]);
                    best_axis = axis;
                    best_world = w;
                }
            }
        }
        axis_used[best_axis] = true;
        world_used[best_world] = true;
        world_of[best_axis] = best_world;
    }
    std::string code;
    double residual = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
        const int w = world_of[axis];
        code.push_back(kLetters[w][unit[w][axis] > 0.0 ? 1 : 0]);
        for (int other = 0; other < 3; ++other) {
            if (other != w) residual = std::max(residual, std::abs(unit[other][axis]));
        }
    }
    orientation = Orientation(code);
    for (int w = 0; w < 3; ++w) origin[w] = affine[w][3];
    return residual;
}

}  // namespace subseg
