#include "subseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

namespace subseg::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr const char* kAggregationNote =
    "per-case means are uniform over regions present in the reference; groups report mean and population SD";

void require_same_shape(const Index3& a, const Index3& b) {
    if (a != b) throw Error(ErrorCode::ShapeMismatch, "shapes differ: " + to_string(a) + " vs " + to_string(b));
}

// Lower-envelope squared distance along one line (Felzenszwalb & Huttenlocher), weight = spacing^2.
void distance_1d(const double* f, double* out, int n, double w, std::vector<int>& v, std::vector<double>& z) {
    v.resize(static_cast<std::size_t>(n));
    z.resize(static_cast<std::size_t>(n) + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s;
        for (;;) {
            const int p = v[static_cast<std::size_t>(k)];
            s = ((f[q] + w * q * q) - (f[p] + w * p * p)) / (2.0 * w * (q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    if (k < 0) {
        std::fill(out, out + n, kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        const double dq = q - p;
        out[q] = w * dq * dq + f[p];
    }
}

struct Box {
    Index3 lo{};
    Index3 hi{};  // exclusive
    Index3 dims() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
};

double mean_of(const std::vector<Index3>& from, const std::vector<double>& dist2, const Index3& dims, const Index3& shift) {
    double total = 0.0;
    for (const auto& p : from) {
        const int i = p[0] - shift[0], j = p[1] - shift[1], k = p[2] - shift[2];
        total += std::sqrt(dist2[static_cast<std::size_t>(i) + static_cast<std::size_t>(dims[0]) *
                                                                 (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k)]);
    }
    return total;
}

std::string status_name(RegionStatus s) {
    switch (s) {
        case RegionStatus::Scored: return "scored";
        case RegionStatus::Missing: return "missing";
        case RegionStatus::Spurious: return "spurious";
        case RegionStatus::Absent: return "absent";
    }
    return "absent";
}

RegionStatus status_from(const std::string& s) {
    if (s == "scored") return RegionStatus::Scored;
    if (s == "missing") return RegionStatus::Missing;
    if (s == "spurious") return RegionStatus::Spurious;
    return RegionStatus::Absent;
}

std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) ++n;
    }
    return n;
}

std::string pad_right(const std::string& s, std::size_t width) {
    const std::size_t w = display_width(s);
    return w >= width ? s : s + std::string(width - w, ' ');
}

}  // namespace

double dsc(const MaskGrid& a, const MaskGrid& b) {
    require_same_shape(a.dims(), b.dims());
    std::int64_t na = 0, nb = 0, both = 0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        const bool x = a[n] != 0, y = b[n] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<Index3> surface_voxels(const MaskGrid& mask) {
    const auto& d = mask.dims();
    std::vector<Index3> out;
    const auto inside = [&](int i, int j, int k) { return mask.contains(i, j, k) && mask(i, j, k) != 0; };
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (mask(i, j, k) == 0) continue;
                if (!inside(i - 1, j, k) || !inside(i + 1, j, k) || !inside(i, j - 1, k) || !inside(i, j + 1, k) ||
                    !inside(i, j, k - 1) || !inside(i, j, k + 1)) {
                    out.push_back({i, j, k});
                }
            }
    return out;
}

std::vector<double> squared_distance_transform(const MaskGrid& seeds, const Vec3& spacing) {
    const auto& d = seeds.dims();
    const std::size_t n = seeds.size();
    std::vector<double> g(n);
    for (std::size_t v = 0; v < n; ++v) g[v] = seeds[v] ? 0.0 : kInf;

    std::vector<int> env_v;
    std::vector<double> env_z;
    const int longest = std::max({d[0], d[1], d[2]});
    std::vector<double> line(static_cast<std::size_t>(longest)), result(static_cast<std::size_t>(longest));
    for (int axis = 0; axis < 3; ++axis) {
        const double w = spacing[static_cast<std::size_t>(axis)] * spacing[static_cast<std::size_t>(axis)];
        const int len = d[axis];
        const int a1 = axis == 0 ? 1 : 0;
        const int a2 = axis == 2 ? 1 : 2;
        for (int u = 0; u < d[a2]; ++u) {
            for (int t = 0; t < d[a1]; ++t) {
                Index3 p{};
                p[a1] = t;
                p[a2] = u;
                p[axis] = 0;
                const std::size_t base = seeds.index(p[0], p[1], p[2]);
                const std::size_t step = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d[0])
                                                                   : static_cast<std::size_t>(d[0]) * d[1];
                for (int q = 0; q < len; ++q) line[static_cast<std::size_t>(q)] = g[base + q * step];
                distance_1d(line.data(), result.data(), len, w, env_v, env_z);
                for (int q = 0; q < len; ++q) g[base + q * step] = result[static_cast<std::size_t>(q)];
            }
        }
    }
    return g;
}

std::optional<double> assd(const MaskGrid& a, const MaskGrid& b, const Vec3& spacing) {
    require_same_shape(a.dims(), b.dims());
    for (double s : spacing) {
        if (!(s > 0.0)) throw Error(ErrorCode::NonPositiveSpacing, "spacing must be positive");
    }
    const auto sa = surface_voxels(a);
    const auto sb = surface_voxels(b);
    if (sa.empty() || sb.empty()) return std::nullopt;

    // Both surfaces fit in this box, so the transform restricted to it is exact.
    Box box{{a.dims()[0], a.dims()[1], a.dims()[2]}, {0, 0, 0}};
    for (const auto* s : {&sa, &sb})
        for (const auto& p : *s)
            for (int ax = 0; ax < 3; ++ax) {
                box.lo[ax] = std::min(box.lo[ax], p[ax]);
                box.hi[ax] = std::max(box.hi[ax], p[ax] + 1);
            }
    const Index3 bd = box.dims();
    const auto seeds_of = [&](const std::vector<Index3>& s) {
        MaskGrid m(bd, 0);
        for (const auto& p : s) m(p[0] - box.lo[0], p[1] - box.lo[1], p[2] - box.lo[2]) = 1;
        return m;
    };
    const auto to_b = squared_distance_transform(seeds_of(sb), spacing);
    const auto to_a = squared_distance_transform(seeds_of(sa), spacing);
    const double total = mean_of(sa, to_b, bd, box.lo) + mean_of(sb, to_a, bd, box.lo);
    return total / static_cast<double>(sa.size() + sb.size());
}

MaskGrid binarize(const LabelGrid& labels, int value) {
    MaskGrid m(labels.dims(), 0);
    for (std::size_t n = 0; n < labels.size(); ++n) m[n] = labels[n] == value;
    return m;
}

CaseReport evaluate_segmentation(const LabelGrid& pred, const LabelGrid& ref, const LabelTable& table,
                                 const Vec3& spacing, std::string case_id) {
    require_same_shape(pred.dims(), ref.dims());
    const auto& d = pred.dims();

    // One pass for per-ID bounding boxes so each region is scored on a small sub-grid.
    std::map<int, Box> boxes;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                for (int id : {pred(i, j, k), ref(i, j, k)}) {
                    if (id == 0) continue;
                    auto [it, fresh] = boxes.try_emplace(id, Box{{i, j, k}, {i + 1, j + 1, k + 1}});
                    if (!fresh) {
                        auto& b = it->second;
                        b.lo = {std::min(b.lo[0], i), std::min(b.lo[1], j), std::min(b.lo[2], k)};
                        b.hi = {std::max(b.hi[0], i + 1), std::max(b.hi[1], j + 1), std::max(b.hi[2], k + 1)};
                    }
                }
            }

    CaseReport report;
    report.case_id = std::move(case_id);
    double dsc_total = 0.0, assd_total = 0.0;
    for (const auto& entry : table.entries()) {
        if (entry.class_index == 0) continue;
        RegionMetrics r;
        r.freesurfer_id = entry.freesurfer_id;
        r.name = entry.region_name;
        const auto found = boxes.find(entry.freesurfer_id);
        if (found == boxes.end()) {
            r.status = RegionStatus::Absent;
            report.regions.push_back(std::move(r));
            continue;
        }
        // Grow the box by one voxel (clipped) so mask borders inside the volume stay borders.
        Box b = found->second;
        for (int ax = 0; ax < 3; ++ax) {
            b.lo[ax] = std::max(0, b.lo[ax] - 1);
            b.hi[ax] = std::min(d[ax], b.hi[ax] + 1);
        }
        const auto pm = binarize(copy_box(pred, b.lo, b.dims()), entry.freesurfer_id);
        const auto rm = binarize(copy_box(ref, b.lo, b.dims()), entry.freesurfer_id);
        for (std::size_t n = 0; n < pm.size(); ++n) {
            r.pred_voxels += pm[n];
            r.ref_voxels += rm[n];
        }
        if (r.ref_voxels > 0 && r.pred_voxels > 0) {
            r.status = RegionStatus::Scored;
            r.dsc = dsc(pm, rm);
            r.assd = assd(pm, rm, spacing);
        } else if (r.ref_voxels > 0) {
            r.status = RegionStatus::Missing;
            r.dsc = 0.0;
            ++report.missing_regions;
        } else {
            r.status = RegionStatus::Spurious;
            r.dsc = 0.0;
        }
        if (r.ref_voxels > 0) {
            dsc_total += *r.dsc;
            ++report.n_dsc;
            if (r.assd) {
                assd_total += *r.assd;
                ++report.n_assd;
            }
        }
        report.regions.push_back(std::move(r));
    }
    if (report.n_dsc > 0) report.mean_dsc = dsc_total / report.n_dsc;
    if (report.n_assd > 0) report.mean_assd = assd_total / report.n_assd;
    return report;
}

std::string CaseReport::to_json() const {
    nlohmann::ordered_json j;
    j["case_id"] = case_id;
    j["dataset"] = dataset;
    j["model"] = model;
    j["aggregation"] = kAggregationNote;
    j["mean_dsc"] = mean_dsc;
    j["n_dsc"] = n_dsc;
    j["mean_assd"] = mean_assd ? nlohmann::ordered_json(*mean_assd) : nlohmann::ordered_json(nullptr);
    j["n_assd"] = n_assd;
    j["missing_regions"] = missing_regions;
    auto& regions_json = j["regions"] = nlohmann::ordered_json::array();
    for (const auto& r : regions) {
        nlohmann::ordered_json rj;
        rj["freesurfer_id"] = r.freesurfer_id;
        rj["name"] = r.name;
        rj["status"] = status_name(r.status);
        rj["dsc"] = r.dsc ? nlohmann::ordered_json(*r.dsc) : nlohmann::ordered_json(nullptr);
        rj["assd_mm"] = r.assd ? nlohmann::ordered_json(*r.assd) : nlohmann::ordered_json(nullptr);
        rj["pred_voxels"] = r.pred_voxels;
        rj["ref_voxels"] = r.ref_voxels;
        regions_json.push_back(std::move(rj));
    }
    return j.dump(2) + "\n";
}

CaseReport CaseReport::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Io, std::string("malformed case report: ") + e.what());
    }
    try {
        CaseReport r;
        r.case_id = j.value("case_id", "");
        r.dataset = j.value("dataset", "");
        r.model = j.value("model", "");
        r.mean_dsc = j.at("mean_dsc").get<double>();
        r.n_dsc = j.value("n_dsc", 0);
        if (j.contains("mean_assd") && !j["mean_assd"].is_null()) r.mean_assd = j["mean_assd"].get<double>();
        r.n_assd = j.value("n_assd", 0);
        r.missing_regions = j.value("missing_regions", 0);
        for (const auto& rj : j.value("regions", nlohmann::json::array())) {
            RegionMetrics m;
            m.freesurfer_id = rj.at("freesurfer_id").get<int>();
            m.name = rj.value("name", "");
            m.status = status_from(rj.value("status", "absent"));
            if (rj.contains("dsc") && !rj["dsc"].is_null()) m.dsc = rj["dsc"].get<double>();
            if (rj.contains("assd_mm") && !rj["assd_mm"].is_null()) m.assd = rj["assd_mm"].get<double>();
            m.pred_voxels = rj.value("pred_voxels", std::int64_t{0});
            m.ref_voxels = rj.value("ref_voxels", std::int64_t{0});
            r.regions.push_back(std::move(m));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Io, std::string("case report is missing fields: ") + e.what());
    }
}

std::vector<SummaryRow> aggregate_reports(const std::vector<CaseReport>& reports, const Grouping& grouping) {
    if (reports.empty()) throw Error(ErrorCode::EmptyInput, "no case reports to aggregate");
    struct Acc {
        SummaryRow row;
        std::vector<double> dsc, assd;
    };
    std::vector<Acc> groups;
    for (const auto& r : reports) {
        const std::string ds = grouping.by_dataset ? r.dataset : std::string("all");
        const std::string md = grouping.by_model ? r.model : std::string("all");
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const Acc& a) { return a.row.dataset == ds && a.row.model == md; });
        if (it == groups.end()) {
            groups.push_back({});
            it = std::prev(groups.end());
            it->row.dataset = ds;
            it->row.model = md;
        }
        it->dsc.push_back(r.mean_dsc);
        if (r.mean_assd) it->assd.push_back(*r.mean_assd);
    }
    const auto mean_sd = [](const std::vector<double>& xs, double& mean, double& sd) {
        mean = 0.0;
        sd = 0.0;
        if (xs.empty()) return;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        for (double x : xs) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / static_cast<double>(xs.size()));
    };
    std::vector<SummaryRow> rows;
    for (auto& g : groups) {
        g.row.cases = static_cast<int>(g.dsc.size());
        g.row.assd_cases = static_cast<int>(g.assd.size());
        mean_sd(g.dsc, g.row.dsc_mean, g.row.dsc_sd);
        mean_sd(g.assd, g.row.assd_mean, g.row.assd_sd);
        rows.push_back(g.row);
    }
    return rows;
}

std::string format_mean_sd(double mean, double sd) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f \xC2\xB1 %.3f", mean, sd);
    return buf;
}

std::string format_table(const std::vector<SummaryRow>& rows) {
    std::vector<std::array<std::string, 5>> cells;
    cells.push_back({"Dataset", "Model", "n", "DSC \xE2\x86\x91", "ASSD \xE2\x86\x93"});
    for (const auto& r : rows) {
        cells.push_back({r.dataset, r.model, std::to_string(r.cases), format_mean_sd(r.dsc_mean, r.dsc_sd),
                         r.assd_cases > 0 ? format_mean_sd(r.assd_mean, r.assd_sd) : std::string("n/a")});
    }
    std::array<std::size_t, 5> width{};
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
    std::string out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        std::string line;
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            line += c + 1 == cells[r].size() ? cells[r][c] : pad_right(cells[r][c], width[c]) + "  ";
        }
        out += line + "\n";
        if (r == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 == width.size() ? 0 : 2);
            out += std::string(total, '-') + "\n";
        }
    }
    out += std::string("# ") + kAggregationNote + "\n";
    return out;
}

std::string format_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "dataset,model,cases,dsc_mean,dsc_sd,assd_cases,assd_mean,assd_sd\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f,%d,%.6f,%.6f\n", r.dataset.c_str(), r.model.c_str(), r.cases,
                      r.dsc_mean, r.dsc_sd, r.assd_cases, r.assd_mean, r.assd_sd);
        out += buf;
    }
    return out;
}

}  // namespace subseg::metrics
