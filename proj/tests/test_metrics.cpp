#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "subseg/metrics.hpp"

using namespace subseg;
using namespace subseg::metrics;
using subseg::testing::brute_assd;
using subseg::testing::brute_surface;
using subseg::testing::random_mask;

namespace {

double brute_dsc(const MaskGrid& a, const MaskGrid& b) {
    double inter = 0, na = 0, nb = 0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        inter += a[n] && b[n];
        na += a[n] != 0;
        nb += b[n] != 0;
    }
    return (na + nb) == 0 ? 1.0 : 2.0 * inter / (na + nb);
}

CaseReport fixture(const std::string& dataset, double dsc_value, std::optional<double> assd_value) {
    CaseReport r;
    r.dataset = dataset;
    r.model = "subseg";
    r.mean_dsc = dsc_value;
    r.n_dsc = 31;
    r.mean_assd = assd_value;
    r.n_assd = assd_value ? 31 : 0;
    return r;
}

}  // namespace

TEST_CASE("dsc analytic cases") {
    MaskGrid a({4, 4, 4}, 0), b({4, 4, 4}, 0);
    a(0, 0, 0) = a(1, 0, 0) = 1;
    CHECK(dsc(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    b(3, 3, 3) = 1;
    CHECK(dsc(a, b) == 0.0);
    b = MaskGrid({4, 4, 4}, 0);
    b(1, 0, 0) = 1;
    CHECK(std::abs(dsc(a, b) - 2.0 / 3.0) <= 1e-12);
    CHECK(dsc(MaskGrid({2, 2, 2}, 0), MaskGrid({2, 2, 2}, 0)) == 1.0);
    try {
        dsc(a, MaskGrid({4, 4, 5}, 0));
        FAIL("shape mismatch accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
}

TEST_CASE("dsc is symmetric and matches the counting formula") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 30; ++t) {
        const MaskGrid a = random_mask({12, 10, 9}, rng), b = random_mask({12, 10, 9}, rng);
        CHECK(dsc(a, b) == dsc(b, a));
        CHECK(dsc(a, b) == doctest::Approx(brute_dsc(a, b)).epsilon(1e-12));
        CHECK((dsc(a, b) >= 0.0 && dsc(a, b) <= 1.0));
    }
}

TEST_CASE("surface voxel examples") {
    MaskGrid single({5, 5, 5}, 0);
    single(2, 3, 1) = 1;
    CHECK(surface_voxels(single) == std::vector<Index3>{{2, 3, 1}});

    MaskGrid cube({5, 5, 5}, 0);
    for (int k = 1; k < 4; ++k)
        for (int j = 1; j < 4; ++j)
            for (int i = 1; i < 4; ++i) cube(i, j, k) = 1;
    const auto shell = surface_voxels(cube);
    CHECK(shell.size() == 26);
    CHECK(std::find(shell.begin(), shell.end(), Index3{2, 2, 2}) == shell.end());

    CHECK(surface_voxels(MaskGrid({3, 3, 3}, 0)).empty());
    // the grid border counts as outside
    CHECK(surface_voxels(MaskGrid({3, 3, 3}, 1)).size() == 26);
}

TEST_CASE("assd examples") {
    MaskGrid a({8, 8, 8}, 0), b({8, 8, 8}, 0);
    a(1, 4, 4) = 1;
    b(4, 4, 4) = 1;
    CHECK(assd(a, b, {1, 1, 1}).value() == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(assd(a, a, {1, 1, 1}).value() == 0.0);
    CHECK(assd(a, b, {2.0, 1, 1}).value() == doctest::Approx(6.0).epsilon(1e-12));
    CHECK_FALSE(assd(a, MaskGrid({8, 8, 8}, 0), {1, 1, 1}).has_value());
}

TEST_CASE("fast assd equals the brute-force oracle on random pairs") {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    int defined = 0;
    for (int t = 0; t < 100; ++t) {
        const MaskGrid a = random_mask({16, 16, 16}, rng), b = random_mask({16, 16, 16}, rng);
        const Vec3 sp = (t % 3 == 0) ? Vec3{1.0, 1.0, 1.0} : Vec3{0.8 + 0.01 * t, 1.0, 1.3};
        const auto fast = assd(a, b, sp);
        const auto slow = brute_assd(a, b, sp);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) {
            ++defined;
            worst = std::max(worst, std::abs(*fast - *slow));
            CHECK(*fast == doctest::Approx(*assd(b, a, sp)).epsilon(1e-12));
            CHECK(*assd(a, a, sp) == 0.0);
        }
    }
    CHECK(defined == 100);
    CHECK(worst <= 1e-9);
}

TEST_CASE("distance transform matches brute force") {
    std::mt19937_64 rng(9);
    MaskGrid seeds({9, 7, 6}, 0);
    std::bernoulli_distribution on(0.05);
    for (auto& x : seeds.storage()) x = on(rng);
    seeds(0, 0, 0) = 1;
    const Vec3 sp{1.5, 0.7, 2.0};
    const auto dt = squared_distance_transform(seeds, sp);
    const auto& d = seeds.dims();
    double worst = 0.0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (int z = 0; z < d[2]; ++z)
                    for (int y = 0; y < d[1]; ++y)
                        for (int x = 0; x < d[0]; ++x)
                            if (seeds(x, y, z)) {
                                const double dx = (i - x) * sp[0], dy = (j - y) * sp[1], dz = (k - z) * sp[2];
                                best = std::min(best, dx * dx + dy * dy + dz * dz);
                            }
                worst = std::max(worst, std::abs(best - dt[seeds.index(i, j, k)]));
            }
    CHECK(worst <= 1e-9);
}

TEST_CASE("translation leaves dsc and assd unchanged") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 10; ++t) {
        const MaskGrid a0 = random_mask({10, 10, 10}, rng), b0 = random_mask({10, 10, 10}, rng);
        MaskGrid a({16, 15, 14}, 0), b({16, 15, 14}, 0);
        paste_box(a, a0, {3, 2, 4});
        paste_box(b, b0, {3, 2, 4});
        MaskGrid a1({16, 15, 14}, 0), b1({16, 15, 14}, 0);
        paste_box(a1, a0, {5, 5, 1});
        paste_box(b1, b0, {5, 5, 1});
        CHECK(dsc(a, b) == dsc(a1, b1));
        CHECK(*assd(a, b, {1, 1, 1}) == doctest::Approx(*assd(a1, b1, {1, 1, 1})).epsilon(1e-12));
    }
}

TEST_CASE("evaluate_segmentation on identical and empty predictions") {
    const LabelTable& t = LabelTable::builtin();
    LabelGrid ref({20, 20, 20}, 0);
    for (int k = 2; k < 8; ++k)
        for (int j = 2; j < 8; ++j)
            for (int i = 2; i < 8; ++i) ref(i, j, k) = 17;
    for (int k = 10; k < 18; ++k)
        for (int j = 10; j < 15; ++j)
            for (int i = 5; i < 15; ++i) ref(i, j, k) = 53;
    ref(1, 1, 1) = 77;

    const CaseReport same = evaluate_segmentation(ref, ref, t, {1, 1, 1}, "same");
    CHECK(same.mean_dsc == 1.0);
    CHECK(same.n_dsc == 3);
    CHECK(same.mean_assd.value() == 0.0);
    CHECK(same.missing_regions == 0);
    CHECK(same.regions.size() == 31);
    for (const auto& r : same.regions) {
        if (r.freesurfer_id == 17 || r.freesurfer_id == 53 || r.freesurfer_id == 77) {
            CHECK(r.status == RegionStatus::Scored);
            CHECK(r.dsc.value() == 1.0);
            CHECK(r.assd.value() == 0.0);
        } else {
            CHECK(r.status == RegionStatus::Absent);
        }
    }

    const CaseReport empty = evaluate_segmentation(LabelGrid({20, 20, 20}, 0), ref, t, {1, 1, 1});
    CHECK(empty.mean_dsc == 0.0);
    CHECK(empty.missing_regions == 3);
    CHECK_FALSE(empty.mean_assd.has_value());
    CHECK(empty.n_assd == 0);
    for (const auto& r : empty.regions)
        if (r.status == RegionStatus::Missing) {
            CHECK(r.dsc.value() == 0.0);
            CHECK_FALSE(r.assd.has_value());
        }

    CHECK_THROWS_AS(evaluate_segmentation(ref, LabelGrid({20, 20, 19}, 0), t, {1, 1, 1}), Error);
}

TEST_CASE("a dilated region scores what the oracle computes") {
    const LabelTable& t = LabelTable::builtin();
    LabelGrid ref({24, 24, 24}, 0);
    for (int k = 4; k < 12; ++k)
        for (int j = 5; j < 14; ++j)
            for (int i = 6; i < 16; ++i) ref(i, j, k) = ((i - 10) * (i - 10) + (j - 9) * (j - 9) < 12) ? 10 : 49;
    for (int k = 14; k < 20; ++k)
        for (int j = 14; j < 20; ++j)
            for (int i = 14; i < 20; ++i) ref(i, j, k) = 26;

    // grow region 26 by one voxel into background along the six face directions
    LabelGrid pred = ref;
    const auto& d = ref.dims();
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (ref(i, j, k) != 0) continue;
                const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                for (const auto& n : nb)
                    if (ref.contains(i + n[0], j + n[1], k + n[2]) && ref(i + n[0], j + n[1], k + n[2]) == 26) pred(i, j, k) = 26;
            }

    const Vec3 sp{1.0, 1.2, 0.9};
    const CaseReport r = evaluate_segmentation(pred, ref, t, sp);
    const MaskGrid pm = binarize(pred, 26), rm = binarize(ref, 26);
    const double want_dsc = brute_dsc(pm, rm);
    const double want_assd = *brute_assd(pm, rm, sp);
    CHECK(want_dsc == doctest::Approx(2.0 * 216 / (216 + 216 + 6 * 36)).epsilon(1e-12));
    for (const auto& m : r.regions) {
        if (m.freesurfer_id == 26) {
            CHECK(*m.dsc == doctest::Approx(want_dsc).epsilon(1e-12));
            CHECK(std::abs(*m.assd - want_assd) <= 1e-9);
            CHECK(m.pred_voxels == 216 + 6 * 36);
            CHECK(m.ref_voxels == 216);
        } else if (m.freesurfer_id == 10 || m.freesurfer_id == 49) {
            CHECK(*m.dsc == 1.0);
            CHECK(*m.assd == 0.0);
        }
    }
    CHECK(r.mean_dsc == doctest::Approx((2.0 + want_dsc) / 3.0).epsilon(1e-12));
}

TEST_CASE("case reports survive JSON") {
    const LabelTable& t = LabelTable::builtin();
    LabelGrid ref({10, 10, 10}, 0), pred({10, 10, 10}, 0);
    for (int i = 2; i < 6; ++i) ref(i, 3, 3) = pred(i + 1, 3, 3) = 12;
    ref(8, 8, 8) = 50;
    CaseReport r = evaluate_segmentation(pred, ref, t, {1, 1, 1}, "case-7");
    r.dataset = "ds";
    r.model = "m";
    const CaseReport back = CaseReport::from_json(r.to_json());
    CHECK(back.case_id == "case-7");
    CHECK(back.dataset == "ds");
    CHECK(back.mean_dsc == r.mean_dsc);
    CHECK(back.mean_assd == r.mean_assd);
    CHECK(back.missing_regions == 1);
    REQUIRE(back.regions.size() == r.regions.size());
    for (std::size_t n = 0; n < r.regions.size(); ++n) {
        CHECK(back.regions[n].dsc == r.regions[n].dsc);
        CHECK(back.regions[n].assd == r.regions[n].assd);
        CHECK(back.regions[n].status == r.regions[n].status);
    }
}

TEST_CASE("aggregation and formatting") {
    CHECK(format_mean_sd(0.872, 0.023) == "0.872 ± 0.023");

    const auto single = aggregate_reports({fixture("full", 0.5, 0.25)});
    REQUIRE(single.size() == 1);
    CHECK(format_mean_sd(single[0].dsc_mean, single[0].dsc_sd) == "0.500 ± 0.000");

    const std::vector<CaseReport> reports{fixture("full", 0.849, 0.275), fixture("full", 0.895, 0.473),
                                          fixture("manual", 0.780, 0.532), fixture("manual", 0.804, 0.790),
                                          fixture("manual", 0.792, std::nullopt)};
    const auto rows = aggregate_reports(reports);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].dataset == "full");
    CHECK(format_mean_sd(rows[0].dsc_mean, rows[0].dsc_sd) == "0.872 ± 0.023");
    CHECK(format_mean_sd(rows[0].assd_mean, rows[0].assd_sd) == "0.374 ± 0.099");
    CHECK(rows[1].cases == 3);
    CHECK(rows[1].assd_cases == 2);
    CHECK(format_mean_sd(rows[1].dsc_mean, rows[1].dsc_sd) == "0.792 ± 0.010");
    CHECK(format_mean_sd(rows[1].assd_mean, rows[1].assd_sd) == "0.661 ± 0.129");

    const std::string table = format_table(rows);
    CHECK(table.find("0.872 ± 0.023") != std::string::npos);
    CHECK(table.find("DSC") != std::string::npos);
    CHECK(format_csv(rows).find("full") != std::string::npos);

    const auto pooled = aggregate_reports(reports, {false, false});
    CHECK(pooled.size() == 1);
    CHECK(pooled[0].cases == 5);

    try {
        aggregate_reports({});
        FAIL("empty input accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyInput);
    }
}
