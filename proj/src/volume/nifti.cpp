#include "subseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace subseg::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : std::int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_INT8 = 256,
    DT_UINT16 = 512,
    DT_UINT32 = 768,
};

struct GzCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

template <class T>
T byteswap_value(T v) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

class HeaderView {
public:
    HeaderView(const unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <class T>
    T get(std::size_t offset) const {
        T v;
        std::memcpy(&v, bytes_ + offset, sizeof(T));
        return swap_ ? byteswap_value(v) : v;
    }

private:
    const unsigned char* bytes_;
    bool swap_;
};

template <class T>
void put(std::vector<unsigned char>& buf, std::size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

int bytes_per_voxel(std::int16_t datatype) {
    switch (datatype) {
        case DT_UINT8: case DT_INT8: return 1;
        case DT_INT16: case DT_UINT16: return 2;
        case DT_INT32: case DT_UINT32: case DT_FLOAT32: return 4;
        case DT_FLOAT64: return 8;
        default: return 0;
    }
}

template <class T>
float decode_one(const unsigned char* p, bool swap) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) v = byteswap_value(v);
    return static_cast<float>(v);
}

float decode(const unsigned char* p, std::int16_t datatype, bool swap) {
    switch (datatype) {
        case DT_UINT8: return decode_one<std::uint8_t>(p, swap);
        case DT_INT8: return decode_one<std::int8_t>(p, swap);
        case DT_INT16: return decode_one<std::int16_t>(p, swap);
        case DT_UINT16: return decode_one<std::uint16_t>(p, swap);
        case DT_INT32: return decode_one<std::int32_t>(p, swap);
        case DT_UINT32: return decode_one<std::uint32_t>(p, swap);
        case DT_FLOAT32: return decode_one<float>(p, swap);
        case DT_FLOAT64: return decode_one<double>(p, swap);
        default: return 0.0f;
    }
}

Affine affine_from_quaternion(const HeaderView& h, const double pixdim[4]) {
    const double b = h.get<float>(256), c = h.get<float>(260), d = h.get<float>(264);
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    const double qfac = pixdim[0] < 0.0 ? -1.0 : 1.0;
    const double r[3][3] = {
        {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
        {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
        {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
    };
    Affine m{};
    for (int row = 0; row < 3; ++row) {
        m[row][0] = r[row][0] * pixdim[1];
        m[row][1] = r[row][1] * pixdim[2];
        m[row][2] = r[row][2] * pixdim[3] * qfac;
    }
    m[0][3] = h.get<float>(268);
    m[1][3] = h.get<float>(272);
    m[2][3] = h.get<float>(276);
    m[3][3] = 1.0;
    return m;
}

struct Quaternion {
    double b, c, d, qfac;
};

// Standard rotation-matrix-to-quaternion conversion used by the NIfTI reference library.
Quaternion quaternion_from_affine(const Affine& affine) {
    double r[3][3];
    for (int col = 0; col < 3; ++col) {
        const double n = std::sqrt(affine[0][col] * affine[0][col] + affine[1][col] * affine[1][col] +
                                   affine[2][col] * affine[2][col]);
        for (int row = 0; row < 3; ++row) r[row][col] = affine[row][col] / n;
    }
    const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                       r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    double qfac = 1.0;
    if (det < 0.0) {
        qfac = -1.0;
        for (int row = 0; row < 3; ++row) r[row][2] = -r[row][2];
    }
    double a = r[0][0] + r[1][1] + r[2][2] + 1.0;
    double b, c, d;
    if (a > 0.5) {
        a = 0.5 * std::sqrt(a);
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        const double xd = 1.0 + r[0][0] - (r[1][1] + r[2][2]);
        const double yd = 1.0 + r[1][1] - (r[0][0] + r[2][2]);
        const double zd = 1.0 + r[2][2] - (r[0][0] + r[1][1]);
        if (xd > 1.0) {
            b = 0.5 * std::sqrt(xd);
            c = 0.25 * (r[0][1] + r[1][0]) / b;
            d = 0.25 * (r[0][2] + r[2][0]) / b;
            a = 0.25 * (r[2][1] - r[1][2]) / b;
        } else if (yd > 1.0) {
            c = 0.5 * std::sqrt(yd);
            b = 0.25 * (r[0][1] + r[1][0]) / c;
            d = 0.25 * (r[1][2] + r[2][1]) / c;
            a = 0.25 * (r[0][2] - r[2][0]) / c;
        } else {
            d = 0.5 * std::sqrt(zd);
            b = 0.25 * (r[0][2] + r[2][0]) / d;
            c = 0.25 * (r[1][2] + r[2][1]) / d;
            a = 0.25 * (r[1][0] - r[0][1]) / d;
        }
        if (a < 0.0) {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    return {b, c, d, qfac};
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    GzHandle f(gzopen(path.string().c_str(), "rb"));
    if (!f) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::vector<unsigned char> out;
    std::vector<unsigned char> chunk(1 << 20);
    for (;;) {
        const int n = gzread(f.get(), chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) throw Error(ErrorCode::Io, "read error in '" + path.string() + "'");
        if (n == 0) break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    return out;
}

bool ends_with_gz(const std::filesystem::path& path) {
    const auto name = path.filename().string();
    return name.size() > 3 && name.compare(name.size() - 3, 3, ".gz") == 0;
}

}  // namespace

Volume read(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "no such file '" + path.string() + "'");
    const auto bytes = read_all(path);
    if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) {
        throw Error(ErrorCode::Io, "'" + path.string() + "' is too short to be NIfTI-1");
    }
    bool swap = false;
    {
        std::int32_t sizeof_hdr;
        std::memcpy(&sizeof_hdr, bytes.data(), 4);
        if (sizeof_hdr != kHeaderSize) {
            if (byteswap_value(sizeof_hdr) != kHeaderSize) {
                throw Error(ErrorCode::Io, "'" + path.string() + "' is not a NIfTI-1 file");
            }
            swap = true;
        }
    }
    const HeaderView h(bytes.data(), swap);
    if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0 && std::memcmp(bytes.data() + 344, "ni1", 4) != 0) {
        throw Error(ErrorCode::Io, "'" + path.string() + "' has no NIfTI-1 magic");
    }
    if (std::memcmp(bytes.data() + 344, "ni1", 4) == 0) {
        throw Error(ErrorCode::Io, "'" + path.string() + "' is a header/image pair; only single-file NIfTI is supported");
    }

    const int ndim = h.get<std::int16_t>(40);
    if (ndim < 3 || ndim > 7) throw Error(ErrorCode::Io, "unsupported dimensionality " + std::to_string(ndim));
    Index3 dims{};
    for (int a = 0; a < 3; ++a) dims[a] = h.get<std::int16_t>(42 + 2 * a);
    const auto datatype = h.get<std::int16_t>(70);
    const int bpv = bytes_per_voxel(datatype);
    if (bpv == 0) throw Error(ErrorCode::Io, "unsupported NIfTI datatype " + std::to_string(datatype));
    const auto vox_offset = static_cast<std::size_t>(h.get<float>(108));
    const std::size_t nvox = static_cast<std::size_t>(voxel_count(dims));
    if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1 || bytes.size() < vox_offset + nvox * bpv) {
        throw Error(ErrorCode::Io, "'" + path.string() + "' is truncated");
    }

    double pixdim[4];
    for (int a = 0; a < 4; ++a) pixdim[a] = h.get<float>(76 + 4 * a);
    const auto qform_code = h.get<std::int16_t>(252);
    const auto sform_code = h.get<std::int16_t>(254);
    Affine affine{};
    if (sform_code > 0) {
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 4; ++col) affine[row][col] = h.get<float>(280 + 16 * row + 4 * col);
        affine[3][3] = 1.0;
    } else if (qform_code > 0) {
        affine = affine_from_quaternion(h, pixdim);
    } else {
        affine = identity_affine();
        for (int a = 0; a < 3; ++a) affine[a][a] = pixdim[a + 1] > 0.0 ? pixdim[a + 1] : 1.0;
    }

    Volume v;
    geometry_from_affine(affine, v.spacing, v.orientation, v.origin);

    double slope = h.get<float>(112);
    double inter = h.get<float>(116);
    if (slope == 0.0 || !std::isfinite(slope)) {
        slope = 1.0;
        inter = 0.0;
    }
    std::vector<float> data(nvox);
    const unsigned char* p = bytes.data() + vox_offset;
    for (std::size_t n = 0; n < nvox; ++n) {
        data[n] = static_cast<float>(decode(p + n * bpv, datatype, swap) * slope + inter);
    }
    v.data = FloatGrid(dims, std::move(data));
    const bool integral = datatype != DT_FLOAT32 && datatype != DT_FLOAT64 && slope == 1.0 && inter == 0.0;
    v.role = integral && (h.get<std::int16_t>(68) == 1002) ? VolumeRole::Label : VolumeRole::Intensity;
    return v;
}

void write(const std::filesystem::path& path, const Volume& v) {
    write(path, v, v.role == VolumeRole::Label ? StoredType::Int32 : StoredType::Float32);
}

void write(const std::filesystem::path& path, const Volume& v, StoredType type) {
    v.validate();
    std::vector<unsigned char> buf(kVoxOffset, 0);
    const auto& d = v.data.dims();
    put<std::int32_t>(buf, 0, kHeaderSize);
    put<char>(buf, 38, 'r');
    put<std::int16_t>(buf, 40, 3);
    for (int a = 0; a < 3; ++a) put<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(d[a]));
    for (int a = 3; a < 7; ++a) put<std::int16_t>(buf, 42 + 2 * a, 1);
    // NIFTI_INTENT_LABEL marks segmentations so readers keep their role.
    put<std::int16_t>(buf, 68, v.role == VolumeRole::Label ? 1002 : 0);
    put<std::int16_t>(buf, 70, type == StoredType::Int32 ? DT_INT32 : DT_FLOAT32);
    put<std::int16_t>(buf, 72, 32);

    const Affine affine = v.affine();
    const Quaternion q = quaternion_from_affine(affine);
    put<float>(buf, 76, static_cast<float>(q.qfac));
    for (int a = 0; a < 3; ++a) put<float>(buf, 80 + 4 * a, static_cast<float>(v.spacing[a]));
    for (int a = 3; a < 7; ++a) put<float>(buf, 80 + 4 * a, 1.0f);
    put<float>(buf, 108, static_cast<float>(kVoxOffset));
    put<float>(buf, 112, 1.0f);
    put<float>(buf, 116, 0.0f);
    put<char>(buf, 123, 2);  // mm
    const char descrip[] = "subseg";
    std::memcpy(buf.data() + 148, descrip, sizeof(descrip));
    put<std::int16_t>(buf, 252, 1);
    put<std::int16_t>(buf, 254, 1);
    put<float>(buf, 256, static_cast<float>(q.b));
    put<float>(buf, 260, static_cast<float>(q.c));
    put<float>(buf, 264, static_cast<float>(q.d));
    for (int a = 0; a < 3; ++a) put<float>(buf, 268 + 4 * a, static_cast<float>(affine[a][3]));
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 4; ++col) put<float>(buf, 280 + 16 * row + 4 * col, static_cast<float>(affine[row][col]));
    std::memcpy(buf.data() + 344, "n+1", 4);

    const std::size_t header_bytes = buf.size();
    buf.resize(header_bytes + v.data.size() * 4);
    unsigned char* out = buf.data() + header_bytes;
    for (std::size_t n = 0; n < v.data.size(); ++n) {
        if (type == StoredType::Int32) {
            const auto x = static_cast<std::int32_t>(std::lround(v.data[n]));
            std::memcpy(out + 4 * n, &x, 4);
        } else {
            std::memcpy(out + 4 * n, &v.data[n], 4);
        }
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (ends_with_gz(path)) {
        GzHandle f(gzopen(path.string().c_str(), "wb6"));
        if (!f) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
        std::size_t done = 0;
        while (done < buf.size()) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(buf.size() - done, 1u << 24));
            if (gzwrite(f.get(), buf.data() + done, chunk) != static_cast<int>(chunk)) {
                throw Error(ErrorCode::Io, "write error on '" + path.string() + "'");
            }
            done += chunk;
        }
    } else {
        std::ofstream os(path, std::ios::binary);
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!os) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    }
}

}  // namespace subseg::nifti
