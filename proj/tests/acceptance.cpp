#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "subseg/cli.hpp"
#include "subseg/metrics.hpp"
#include "subseg/nifti.hpp"
#include "subseg/training.hpp"
#include "support.hpp"

using namespace subseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Thresholds, fixed here so a run cannot drift them.
constexpr int kPhantoms = 10;
constexpr int kOracleStride = 32;
constexpr double kOracleSecondsPerPhantom = 60.0;
constexpr int kSimplexPatches = 20;
constexpr double kSimplexTolerance = 1e-5;
constexpr int kGradTrials = 20;
constexpr double kGradStep = 1e-4;
constexpr double kGradRelError = 1e-3;
constexpr int kOverfitSteps = 200;
constexpr double kOverfitLr = 1e-3;
constexpr double kOverfitLoss = 0.05;
constexpr double kOverfitDsc = 0.95;
constexpr double kOverfitSeconds = 600.0;
constexpr int kAssdPairs = 100;
constexpr double kAssdTolerance = 1e-9;
constexpr double kNestedDscTolerance = 1e-12;
constexpr int kRuntimeStride = 16;
constexpr std::size_t kRuntimePatches = 125;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

fs::path work_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "subseg_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome voting_identity() {
    const LabelTable& table = LabelTable::builtin();
    std::int64_t mismatches = 0;
    double slowest = 0.0;
    for (int n = 0; n < kPhantoms; ++n) {
        const training::Phantom ph = training::make_phantom(1000 + static_cast<std::uint64_t>(n), table);
        subseg::testing::OneHotOracle oracle(map_to_class_index(ph.labels, table));
        const auto t0 = Clock::now();
        const SegmentResult r = segment_volume(ph.intensity, oracle, table, {.stride = kOracleStride});
        slowest = std::max(slowest, seconds_since(t0));
        for (std::size_t v = 0; v < r.labels.size(); ++v) mismatches += r.labels[v] != ph.labels[v];
    }
    return {mismatches == 0 && slowest < kOracleSecondsPerPhantom,
            std::to_string(mismatches) + " mismatched voxels over " + std::to_string(kPhantoms) + " phantoms, slowest " +
                fmt("%.1f s", slowest)};
}

Outcome coverage() {
    bool ok = true;
    std::string detail;
    for (const Index3& d : {Index3{96, 96, 96}, Index3{112, 96, 96}, Index3{160, 160, 160}}) {
        const PatchPlan plan = plan_patches(d);
        std::size_t expected_offsets = 1;
        for (int a = 0; a < 3; ++a) {
            const std::size_t per_axis = static_cast<std::size_t>((d[a] - 96) / 16 + 1);
            ok &= plan.axis_starts[static_cast<std::size_t>(a)].size() == per_axis;
            expected_offsets *= per_axis;
        }
        ok &= plan.offsets.size() == expected_offsets;

        ProbAccumulator acc(plan);
        PatchProbabilities bg;
        bg.values.assign(bg.voxels() * bg.classes, 0.0f);
        std::fill(bg.values.begin(), bg.values.begin() + static_cast<std::ptrdiff_t>(bg.voxels()), 1.0f);
        for (const auto& o : plan.offsets) acc.accumulate(o, bg);
        const std::vector<int> walked = subseg::testing::enumerate_coverage(d, plan.offsets);
        int min_count = 1 << 30;
        bool closed_ok = true;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const int n = static_cast<int>(acc.count(i, j, k));
                    min_count = std::min(min_count, n);
                    closed_ok &= n == walked[static_cast<std::size_t>(i + d[0] * (j + d[1] * k))] &&
                                 n == subseg::testing::closed_form_axis_count(i, d[0]) *
                                          subseg::testing::closed_form_axis_count(j, d[1]) *
                                          subseg::testing::closed_form_axis_count(k, d[2]);
                }
        bool corners = true;
        for (int c = 0; c < 8; ++c)
            corners &= acc.count((c & 1) ? d[0] - 1 : 0, (c & 2) ? d[1] - 1 : 0, (c & 4) ? d[2] - 1 : 0) == 1;
        ok &= min_count >= 1 && corners && closed_ok;
        if (!detail.empty()) detail += ", ";
        detail += to_string(d) + ": " + std::to_string(plan.offsets.size()) + " offsets, min count " + std::to_string(min_count);
    }
    ok &= plan_patches({160, 160, 160}).offsets.size() == 125;
    return {ok, detail};
}

Outcome simplex() {
    torch::NoGradGuard ng;
    double worst = 0.0;
    bool shapes = true, nonnegative = true;
    for (const model::ModelConfig& cfg : {model::ModelConfig{}, model::ModelConfig::reduced()}) {
        model::Network net = model::make_network(cfg, 7);
        net->eval();
        torch::manual_seed(8);
        for (int n = 0; n < kSimplexPatches; ++n) {
            const auto probs = net->forward(torch::rand({1, 1, 96, 96, 96}));
            shapes &= probs.sizes() == torch::IntArrayRef{1, 32, 96, 96, 96};
            nonnegative &= probs.min().item<float>() >= 0.0f;
            worst = std::max(worst, (probs.to(torch::kDouble).sum(1) - 1.0).abs().max().item<double>());
        }
    }
    return {shapes && nonnegative && worst <= kSimplexTolerance,
            fmt("max |sum - 1| = %.2e over %.0f patches per config", worst, kSimplexPatches)};
}

Outcome gradient_check() {
    torch::manual_seed(2025);
    double worst = 0.0;
    for (int t = 0; t < kGradTrials; ++t) {
        auto logits = torch::randn({1, 2, 4, 4, 4}, torch::kDouble).requires_grad_(true);
        const auto target =
            torch::nn::functional::one_hot(torch::randint(0, 2, {1, 4, 4, 4}), 2).permute({0, 4, 1, 2, 3}).to(torch::kDouble);
        const auto f = [&](const torch::Tensor& z) { return training::dice_loss(torch::softmax(z, 1), target).item<double>(); };
        training::dice_loss(torch::softmax(logits, 1), target).backward();
        const auto analytic = logits.grad().flatten();
        const auto base = logits.detach().flatten();
        auto numeric = torch::zeros_like(base);
        for (int64_t n = 0; n < base.numel(); ++n) {
            auto up = base.clone(), down = base.clone();
            up[n] += kGradStep;
            down[n] -= kGradStep;
            numeric[n] = (f(up.view_as(logits)) - f(down.view_as(logits))) / (2 * kGradStep);
        }
        worst = std::max(worst, (analytic - numeric).norm().item<double>() /
                                    std::max(analytic.norm().item<double>(), numeric.norm().item<double>()));
    }
    return {worst < kGradRelError, fmt("worst relative error %.2e over %.0f trials", worst, kGradTrials)};
}

Outcome overfit() {
    const LabelTable& table = LabelTable::builtin();
    const training::Phantom ph = training::make_phantom(1, table);
    const training::TrainCase patch =
        training::center_patch_case(training::prepare_case(ph.intensity, ph.labels, table, "overfit"));

    training::TrainConfig cfg;
    cfg.model = model::ModelConfig::reduced();
    cfg.learning_rate = kOverfitLr;
    cfg.batch_size = 1;
    cfg.augment.probability = 0.0;
    cfg.max_steps = kOverfitSteps;
    cfg.val_every = kOverfitSteps;
    cfg.seed = 0;
    cfg.output_dir = work_dir("overfit").string();
    double best_loss = 1e9;
    const auto t0 = Clock::now();
    const training::TrainResult r = training::train(cfg, {patch}, {patch}, table, [&](const training::StepLog& s) {
        best_loss = std::min(best_loss, s.loss);
        if (s.step % 20 == 0) std::fprintf(stderr, "  overfit step %lld loss %.4f\n", static_cast<long long>(s.step), s.loss);
    });
    const double elapsed = seconds_since(t0);
    const double final_loss = r.log.back().loss;
    const double dsc = r.log.back().val_dsc.value_or(0.0);
    return {final_loss < kOverfitLoss && dsc > kOverfitDsc && elapsed < kOverfitSeconds,
            fmt("after %.0f steps loss %.4f, argmax DSC %.4f", static_cast<double>(r.log.size()), final_loss, dsc) +
                fmt(", lowest loss %.4f, %.0f s", best_loss, elapsed)};
}

Outcome assd_oracle() {
    std::mt19937_64 rng(77);
    double worst = 0.0;
    int compared = 0;
    bool self_zero = true;
    for (int t = 0; t < kAssdPairs; ++t) {
        const MaskGrid a = subseg::testing::random_mask({16, 16, 16}, rng), b = subseg::testing::random_mask({16, 16, 16}, rng);
        const auto fast = metrics::assd(a, b, {1, 1, 1});
        const auto slow = subseg::testing::brute_assd(a, b, {1, 1, 1});
        if (fast.has_value() != slow.has_value()) return {false, "definedness differs on pair " + std::to_string(t)};
        if (fast) {
            ++compared;
            worst = std::max(worst, std::abs(*fast - *slow));
            self_zero &= metrics::assd(a, a, {1, 1, 1}).value_or(-1.0) == 0.0;
        }
    }
    MaskGrid p({8, 8, 8}, 0), q({8, 8, 8}, 0);
    p(1, 4, 4) = 1;
    q(4, 4, 4) = 1;
    const double pair = metrics::assd(p, q, {1, 1, 1}).value_or(-1.0);
    return {compared == kAssdPairs && worst <= kAssdTolerance && self_zero && pair == 3.0,
            fmt("max |fast - brute| = %.2e over %.0f pairs, point pair %.17g", worst, compared, pair)};
}

Outcome dsc_cases() {
    MaskGrid a({4, 4, 4}, 0), b({4, 4, 4}, 0), c({4, 4, 4}, 0);
    a(0, 0, 0) = a(1, 0, 0) = 1;
    b(3, 3, 3) = 1;
    c(1, 0, 0) = 1;
    const double same = metrics::dsc(a, a), disjoint = metrics::dsc(a, b), nested = metrics::dsc(a, c);
    return {same == 1.0 && disjoint == 0.0 && std::abs(nested - 2.0 / 3.0) <= kNestedDscTolerance,
            fmt("identical %.17g, disjoint %.17g, nested %.17g", same, disjoint, nested)};
}

Outcome report_fidelity() {
    std::ostringstream out, log;
    const int code = cli::cmd_report({.reports_dir = SUBSEG_FIXTURE_DIR "/reports", .output = "-"}, out, log);
    const std::string table = out.str();
    const auto row_has = [&](const std::string& tag, const std::string& dsc, const std::string& assd) {
        std::istringstream lines(table);
        for (std::string line; std::getline(lines, line);)
            if (line.find(tag) != std::string::npos) return line.find(dsc) != std::string::npos && line.find(assd) != std::string::npos;
        return false;
    };
    const bool full = row_has("full_test", "0.872 ± 0.023", "0.374 ± 0.099");
    const bool manual = row_has("manual_test", "0.792 ± 0.012", "0.661 ± 0.129");
    std::fputs(table.c_str(), stderr);
    return {code == 0 && full && manual, std::string("full row ") + (full ? "exact" : "differs") + ", manual row " +
                                             (manual ? "exact" : "differs")};
}

struct SegmentRuns {
    bool ran = false;
    bool labels_equal = false;
    bool loss_logs_equal = false;
    std::string log;
    std::string train_detail;
};

// Two cmd_train runs, then two cmd_segment runs at stride 16 on a phantom with the trained checkpoint.
SegmentRuns pipeline_runs() {
    SegmentRuns s;
    const fs::path dir = work_dir("pipeline");
    std::ostringstream sink;
    if (cli::cmd_phantom({.out_dir = (dir / "data").string(), .seed = 42, .count = 1}, sink) != 0) return s;

    std::string losses[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path cfg = dir / ("train_" + std::to_string(run) + ".json");
        std::ofstream(cfg) << R"({"model": "reduced", "learning_rate": 0.001, "batch_size": 1, "max_steps": 3, "val_every": 2,
 "seed": 9, "output_dir": "run_)" << run << R"(", "phantoms": {"seed": 5, "train": 1, "val": 1}})";
        std::ostringstream log;
        if (cli::cmd_train({.config = cfg.string()}, log) != 0) {
            s.train_detail = log.str();
            return s;
        }
        losses[run] = slurp(dir / ("run_" + std::to_string(run)) / "loss.tsv");
    }
    s.loss_logs_equal = !losses[0].empty() && losses[0] == losses[1];

    const std::string ckpt = (dir / "run_0" / "last.ckpt").string();
    const std::string image = (dir / "data" / "phantom_000_image.nii.gz").string();
    std::string logs[2];
    for (int run = 0; run < 2; ++run) {
        std::ostringstream log;
        const std::string out = (dir / ("seg_" + std::to_string(run) + ".nii.gz")).string();
        if (cli::cmd_segment({.input = image, .output = out, .checkpoint = ckpt, .stride = kRuntimeStride, .seed = 3}, log) != 0) {
            s.log = log.str();
            return s;
        }
        logs[run] = log.str();
    }
    s.ran = true;
    s.log = logs[0];
    s.labels_equal = nifti::read(dir / "seg_0.nii.gz").data == nifti::read(dir / "seg_1.nii.gz").data;
    return s;
}

Outcome determinism(const SegmentRuns& s) {
    if (!s.ran) return {false, "pipeline did not run: " + s.train_detail + s.log};
    return {s.labels_equal && s.loss_logs_equal, std::string("segment labels ") + (s.labels_equal ? "identical" : "differ") +
                                                     ", train loss logs " + (s.loss_logs_equal ? "identical" : "differ")};
}

Outcome runtime_accounting(const SegmentRuns& s) {
    if (!s.ran) return {false, "pipeline did not run"};
    const bool crop = s.log.find("crop (160, 160, 160)") != std::string::npos;
    const bool count = s.log.find("patches: " + std::to_string(kRuntimePatches) + "\n") != std::string::npos;
    const auto at = s.log.find("wall time: ");
    const bool timed = at != std::string::npos;
    const std::string wall = timed ? s.log.substr(at, s.log.find('\n', at) - at) : "no wall time";
    return {crop && count && timed, std::string(count ? "logged 125 patches" : "patch count differs") +
                                        (crop ? " on a 160^3 crop, " : " (crop is not 160^3), ") + wall};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> check;
    };
    SegmentRuns pipeline;
    bool pipeline_done = false;
    const auto runs = [&]() -> const SegmentRuns& {
        if (!pipeline_done) {
            pipeline = pipeline_runs();
            pipeline_done = true;
        }
        return pipeline;
    };
    const Criterion criteria[] = {
        {"voting identity", voting_identity},
        {"coverage", coverage},
        {"simplex contract", simplex},
        {"gradient check", gradient_check},
        {"overfit sanity", overfit},
        {"ASSD oracle equivalence", assd_oracle},
        {"DSC analytic cases", dsc_cases},
        {"report fidelity", report_fidelity},
        {"determinism", [&] { return determinism(runs()); }},
        {"runtime accounting", [&] { return runtime_accounting(runs()); }},
    };
    int failures = 0, n = 0;
    for (const auto& c : criteria) {
        ++n;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s  %2d %-24s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, c.name, o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    std::printf("%d of %d criteria passed\n", n - failures, n);
    return failures == 0 ? 0 : 1;
}
