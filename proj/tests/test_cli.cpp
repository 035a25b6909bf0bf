#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "subseg/checkpoint.hpp"
#include "subseg/cli.hpp"
#include "subseg/metrics.hpp"
#include "subseg/nifti.hpp"

// c10 ships a glog-style CHECK
#undef CHECK
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace subseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "subseg_test_cli" / name;
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

int run_args(std::vector<std::string> args, std::string* log_text = nullptr, std::string* out_text = nullptr) {
    args.insert(args.begin(), "subseg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, log;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, log);
    if (log_text) *log_text = log.str();
    if (out_text) *out_text = out.str();
    return code;
}

int run_binary(const std::string& args) {
    const int status = std::system((std::string(SUBSEG_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A 2 mm scan of a textured ball; conformed it fits a 128^3 crop.
void write_scan(const fs::path& path, double radius_mm) {
    Volume v;
    v.data = FloatGrid({80, 80, 80}, 0.0f);
    v.spacing = {2.0, 2.0, 2.0};
    v.origin = {-80.0, -80.0, -80.0};
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(20.0f, 400.0f);
    for (int k = 0; k < 80; ++k)
        for (int j = 0; j < 80; ++j)
            for (int i = 0; i < 80; ++i) {
                const double dx = (i - 40) * 2.0, dy = (j - 40) * 2.0, dz = (k - 40) * 2.0;
                if (dx * dx + dy * dy + dz * dz <= radius_mm * radius_mm) v.data(i, j, k) = u(rng);
            }
    nifti::write(path, v);
}

std::string train_checkpoint(const fs::path& dir) {
    std::ofstream(dir / "train.json") << R"({"model": "reduced", "max_steps": 0, "seed": 4, "output_dir": "run",
                                            "phantoms": {"seed": 1, "train": 1}})";
    REQUIRE(run_args({"train", (dir / "train.json").string()}) == 0);
    return (dir / "run" / "last.ckpt").string();
}

}  // namespace

TEST_CASE("exit code contract") {
    CHECK(cli::exit_code_for(ErrorCode::Io) == 2);
    CHECK(cli::exit_code_for(ErrorCode::ConstantIntensity) == 3);
    CHECK(cli::exit_code_for(ErrorCode::EmptyVolume) == 3);
    CHECK(cli::exit_code_for(ErrorCode::CheckpointMismatch) == 4);
    CHECK(cli::exit_code_for(ErrorCode::CorruptCheckpoint) == 4);
    CHECK(cli::exit_code_for(ErrorCode::InvalidConfig) == 5);
    CHECK(run_binary("--help") == 0);
    CHECK(run_binary("") == 5);
    CHECK(run_binary("segment in.nii out.nii") == 5);
    CHECK(run_binary("conform /nonexistent/scan.nii /tmp/out.nii") == 2);
}

TEST_CASE("conform command") {
    const fs::path dir = fresh_dir("conform");
    write_scan(dir / "scan.nii.gz", 50.0);
    std::string log;
    CHECK(run_args({"conform", (dir / "scan.nii.gz").string(), (dir / "scan_conformed.nii.gz").string()}, &log) == 0);
    const Volume out = nifti::read(dir / "scan_conformed.nii.gz");
    CHECK(out.data.dims() == kConformedDims);
    CHECK(is_conformed(out));
    const auto report = nlohmann::json::parse(slurp(dir / "scan_conformed.resample.json"));
    CHECK(report.at("resampled").get<bool>());

    CHECK(run_args({"conform", (dir / "missing.nii").string(), (dir / "x.nii").string()}, &log) == 2);
    CHECK(log.find("error") != std::string::npos);

    Volume zero;
    zero.data = FloatGrid({32, 32, 32}, 0.0f);
    nifti::write(dir / "zero.nii", zero);
    CHECK(run_args({"conform", (dir / "zero.nii").string(), (dir / "z.nii").string()}) == 3);
}

TEST_CASE("train with no steps writes the initial checkpoint") {
    const fs::path dir = fresh_dir("train0");
    const std::string ckpt = train_checkpoint(dir);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(dir / "run" / "config.json"));
    auto loaded = model::load_checkpoint(ckpt, LabelTable::builtin());
    auto init = model::make_network(model::ModelConfig::reduced(), 4);
    const auto a = model::named_parameters(*init), b = model::named_parameters(*loaded.net);
    bool same = a.size() == b.size();
    for (std::size_t n = 0; same && n < a.size(); ++n) same = torch::equal(a[n].second, b[n].second);
    CHECK(same);

    std::ofstream(dir / "bad.json") << R"({"learning_rate": -1, "phantoms": {"train": 1}})";
    CHECK(run_args({"train", (dir / "bad.json").string()}) == 5);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(run_args({"train", (dir / "broken.json").string()}) == 5);
    std::ofstream(dir / "empty.json") << R"({"model": "reduced", "max_steps": 1})";
    CHECK(run_args({"train", (dir / "empty.json").string()}) == 5);
    CHECK(run_args({"train", (dir / "missing.json").string()}) == 2);
}

TEST_CASE("segment command") {
    const fs::path dir = fresh_dir("segment");
    const std::string ckpt = train_checkpoint(dir);
    write_scan(dir / "scan.nii.gz", 58.0);
    const std::string scan = (dir / "scan.nii.gz").string();

    std::string log16, log32;
    REQUIRE(run_args({"segment", scan, (dir / "seg16.nii.gz").string(), "-c", ckpt}, &log16) == 0);
    REQUIRE(run_args({"segment", scan, (dir / "seg32.nii.gz").string(), "-c", ckpt, "--stride", "32"}, &log32) == 0);
    CHECK(log16.find("crop (128, 128, 128)") != std::string::npos);
    CHECK(log16.find("patches: 27\n") != std::string::npos);
    CHECK(log32.find("patches: 8\n") != std::string::npos);
    CHECK(log16.find("wall time: ") != std::string::npos);

    const Volume seg = nifti::read(dir / "seg32.nii.gz");
    CHECK(seg.data.dims() == kConformedDims);
    std::set<int> ids;
    for (const auto& e : LabelTable::builtin().entries()) ids.insert(e.freesurfer_id);
    bool valid = true;
    for (float x : seg.data.values()) valid &= ids.count(static_cast<int>(x)) == 1;
    CHECK(valid);

    std::string log;
    CHECK(run_args({"segment", scan, (dir / "s.nii").string(), "-c", ckpt, "--device", "accelerator", "--stride", "96"}, &log) == 0);
    CHECK(log.find("using cpu") != std::string::npos);

    std::ofstream(dir / "corrupt.ckpt") << "garbage";
    CHECK(run_args({"segment", scan, (dir / "s.nii").string(), "-c", (dir / "corrupt.ckpt").string()}) == 4);

    auto entries = LabelTable::builtin().entries();
    std::swap(entries[3].freesurfer_id, entries[4].freesurfer_id);
    LabelTable(entries).save(dir / "swapped.tsv");
    const std::string swapped = (dir / "swapped.tsv").string();
    CHECK(run_args({"segment", scan, (dir / "s.nii").string(), "-c", ckpt, "--labels", swapped, "--stride", "96"}) == 4);
    CHECK(run_args({"segment", scan, (dir / "s.nii").string(), "-c", ckpt, "--labels", swapped, "--stride", "96", "--force"}) == 0);

    CHECK(run_args({"segment", scan, (dir / "s.nii").string(), "-c", ckpt, "--stride", "0"}) == 5);
    Volume flat;
    flat.data = FloatGrid({40, 40, 40}, 0.0f);
    for (int k = 10; k < 30; ++k)
        for (int j = 10; j < 30; ++j)
            for (int i = 10; i < 30; ++i) flat.data(i, j, k) = 7.0f;
    nifti::write(dir / "flat.nii", flat);
    CHECK(run_args({"segment", (dir / "flat.nii").string(), (dir / "s.nii").string(), "-c", ckpt}) == 3);
}

TEST_CASE("evaluate and report") {
    const fs::path dir = fresh_dir("evaluate");
    REQUIRE(run_args({"phantom", (dir / "ph").string(), "--seed", "2", "--count", "1"}) == 0);
    fs::create_directories(dir / "ref");
    fs::copy_file(dir / "ph" / "phantom_000_labels.nii.gz", dir / "ref" / "case.nii.gz");
    std::string log;
    REQUIRE(run_args({"evaluate", (dir / "ref").string(), (dir / "ref").string(), (dir / "out").string(), "--dataset", "phantoms"},
                     &log) == 0);
    const auto report = metrics::CaseReport::from_json(slurp(dir / "out" / "case.json"));
    CHECK(report.mean_dsc == 1.0);
    CHECK(report.n_dsc == 31);
    CHECK(report.mean_assd.value() == 0.0);
    CHECK(report.dataset == "phantoms");
    for (const auto& r : report.regions)
        if (r.status == metrics::RegionStatus::Scored) CHECK(r.dsc.value() == 1.0);
    const std::string first = slurp(dir / "out" / "case.json");
    REQUIRE(run_args({"evaluate", (dir / "ref").string(), (dir / "ref").string(), (dir / "out").string(), "--dataset", "phantoms"}) == 0);
    CHECK(slurp(dir / "out" / "case.json") == first);

    CHECK(run_args({"evaluate", (dir / "nothing").string(), (dir / "ref").string(), (dir / "o").string()}) == 2);

    std::string out;
    REQUIRE(run_args({"report", SUBSEG_FIXTURE_DIR "/reports", "-", "--csv", (dir / "table.csv").string()}, &log, &out) == 0);
    CHECK(out.find("full_test") != std::string::npos);
    CHECK(out.find("0.872 ± 0.023") != std::string::npos);
    CHECK(out.find("0.374 ± 0.099") != std::string::npos);
    CHECK(out.find("0.792 ± 0.012") != std::string::npos);
    CHECK(out.find("0.661 ± 0.129") != std::string::npos);
    const std::string csv = slurp(dir / "table.csv");
    REQUIRE(run_args({"report", SUBSEG_FIXTURE_DIR "/reports", (dir / "table.txt").string(), "--csv", (dir / "table.csv").string()}) == 0);
    CHECK(slurp(dir / "table.txt") == out);
    CHECK(slurp(dir / "table.csv") == csv);

    REQUIRE(run_args({"report", SUBSEG_FIXTURE_DIR "/reports", "-", "--group-by", "none"}, &log, &out) == 0);
    CHECK(out.find("full_test") == std::string::npos);
    CHECK(run_args({"report", (dir / "ref").string(), "-"}) != 0);
}
