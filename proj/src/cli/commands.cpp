#include "subseg/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "subseg/checkpoint.hpp"
#include "subseg/conform.hpp"
#include "subseg/metrics.hpp"
#include "subseg/nifti.hpp"
#include "subseg/training.hpp"

namespace subseg::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Io:
            return kIoError;
        case ErrorCode::InvalidOrientationCode:
        case ErrorCode::NonPositiveSpacing:
        case ErrorCode::ConstantIntensity:
        case ErrorCode::EmptyVolume:
        case ErrorCode::FrameOutOfBounds:
        case ErrorCode::IncompatibleDims:
        case ErrorCode::ShapeMismatch:
        case ErrorCode::UnknownClassIndex:
        case ErrorCode::EmptyInput:
            return kDegenerateData;
        case ErrorCode::CheckpointMismatch:
        case ErrorCode::CorruptCheckpoint:
            return kCheckpointMismatch;
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidLabelTable:
        case ErrorCode::EmptyDataset:
            return kInvalidConfig;
        default:
            return kFailure;
    }
}

namespace {

int guarded(std::ostream& log, const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        log << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const nlohmann::json::exception& e) {
        log << "error: malformed JSON: " << e.what() << '\n';
        return kInvalidConfig;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kFailure;
    }
}

LabelTable load_table(const std::string& path) { return path.empty() ? LabelTable::builtin() : LabelTable::load(path); }

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

bool is_nifti(const fs::path& p) {
    const std::string name = p.filename().string();
    return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

std::string nifti_stem(const fs::path& p) {
    std::string name = p.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        if (name.ends_with(ext)) return name.substr(0, name.size() - std::string(ext).size());
    }
    return name;
}

LabelGrid to_label_grid(const FloatGrid& g) {
    LabelGrid out(g.dims());
    for (std::size_t n = 0; n < g.size(); ++n) out[n] = static_cast<std::int32_t>(std::lround(g[n]));
    return out;
}

FloatGrid to_float_grid(const LabelGrid& g) {
    FloatGrid out(g.dims());
    for (std::size_t n = 0; n < g.size(); ++n) out[n] = static_cast<float>(g[n]);
    return out;
}

Volume conformed_geometry(FloatGrid data, VolumeRole role) {
    Volume v;
    v.data = std::move(data);
    v.orientation = Orientation("RAS");
    v.origin = {-kConformedSide / 2.0, -kConformedSide / 2.0, -kConformedSide / 2.0};
    v.role = role;
    return v;
}

// Image conformed when its header is not; labels follow the image's resampling with nearest lookup.
std::pair<Volume, std::optional<LabelGrid>> load_conformed(const fs::path& image_path, const fs::path* labels_path,
                                                           std::ostream& log) {
    Volume image = nifti::read(image_path);
    image.validate();
    std::optional<LabelGrid> labels;
    std::optional<Volume> raw_labels;
    if (labels_path) {
        raw_labels = nifti::read(*labels_path);
        if (raw_labels->data.dims() != image.data.dims()) {
            throw Error(ErrorCode::ShapeMismatch, labels_path->string() + " does not match " + image_path.string());
        }
    }
    if (is_conformed(image)) {
        if (raw_labels) labels = to_label_grid(raw_labels->data);
        return {std::move(image), std::move(labels)};
    }
    ConformResult cr = conform(image);
    log << "conformed " << image_path.string() << " from " << to_string(cr.report.input_dims) << " "
        << cr.report.input_orientation << '\n';
    if (raw_labels) {
        raw_labels->spacing = image.spacing;
        raw_labels->orientation = image.orientation;
        raw_labels->origin = image.origin;
        labels = to_label_grid(resample(*raw_labels, cr.report.output_affine, kConformedDims, Interpolation::Nearest));
    }
    return {std::move(cr.volume), std::move(labels)};
}

torch::Device resolve_device(std::string name, std::ostream& log) {
    if (name.empty()) {
        const char* env = std::getenv("SUBSEG_DEVICE");
        name = env ? env : "cpu";
    }
    if (name == "cpu") return torch::kCPU;
    if (name == "accelerator") {
        if (torch::cuda::is_available()) return torch::kCUDA;
        log << "accelerator requested but none is available; using cpu\n";
        return torch::kCPU;
    }
    throw Error(ErrorCode::InvalidConfig, "device must be cpu or accelerator, got '" + name + "'");
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::function<bool(const fs::path&)>& keep) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && keep(entry.path())) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int cmd_conform(const ConformArgs& args, std::ostream& log) {
    return guarded(log, [&] {
        const Volume input = nifti::read(args.input);
        input.validate();
        ConformResult cr = conform(input);
        // Fails early on volumes that could never be rescaled.
        brain_intensity_range(cr.volume.data);
        nifti::write(args.output, cr.volume);
        const fs::path out(args.output);
        const fs::path report = args.report.empty() ? out.parent_path() / (nifti_stem(out) + ".resample.json") : fs::path(args.report);
        write_text(report, cr.report.to_json() + "\n");
        log << "wrote " << args.output << " (" << (cr.report.resampled ? "resampled" : "copied") << ")\n";
        return kOk;
    });
}

int cmd_segment(const SegmentArgs& args, std::ostream& log) {
    return guarded(log, [&] {
        if (args.stride < 1 || args.stride > kPatchSide) {
            throw Error(ErrorCode::InvalidConfig, "stride must be in 1..96, got " + std::to_string(args.stride));
        }
        const LabelTable table = load_table(args.labels);
        const torch::Device device = resolve_device(args.device, log);
        torch::manual_seed(args.seed);
        auto [volume, unused] = load_conformed(args.input, nullptr, log);
        auto loaded = model::load_checkpoint(args.checkpoint, table, {std::nullopt, args.force});
        model::NetworkPredictor predictor(loaded.net, device);
        SegmentOptions options;
        options.stride = args.stride;
        const SegmentResult result = segment_volume(volume.data, predictor, table, options);
        Volume out = volume;
        out.data = to_float_grid(result.labels);
        out.role = VolumeRole::Label;
        nifti::write(args.output, out);
        char seconds[32];
        std::snprintf(seconds, sizeof seconds, "%.2f", result.seconds);
        log << "crop " << to_string(result.frame.dims) << " at " << to_string(result.frame.offset) << '\n';
        log << "patches: " << result.patch_count << '\n';
        log << "wall time: " << seconds << " s\n";
        return kOk;
    });
}

int cmd_train(const TrainArgs& args, std::ostream& log) {
    return guarded(log, [&] {
        const fs::path config_path(args.config);
        const std::string text = read_text(config_path);
        training::TrainConfig cfg = training::TrainConfig::from_json(text);
        const fs::path base = config_path.parent_path();
        const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
        cfg.output_dir = resolve(cfg.output_dir).string();
        if (!cfg.resume_from.empty()) cfg.resume_from = resolve(cfg.resume_from).string();
        const LabelTable table = load_table(args.labels);

        const auto j = nlohmann::json::parse(text);
        std::vector<training::TrainCase> train_cases, val_cases;
        bool center_only = false;
        if (j.contains("phantoms")) {
            const auto& p = j.at("phantoms");
            const std::uint64_t seed = p.value("seed", cfg.seed);
            const int n_train = p.value("train", 1), n_val = p.value("val", 0);
            center_only = p.value("center_patch", false);
            if (n_train < 0 || n_val < 0) throw Error(ErrorCode::InvalidConfig, "phantom counts must be >= 0");
            int n = 0;
            for (auto& ph : training::make_phantoms(seed, n_train + n_val, table)) {
                auto c = training::prepare_case(ph.intensity, ph.labels, table, "phantom_" + std::to_string(n));
                (n < n_train ? train_cases : val_cases).push_back(std::move(c));
                ++n;
            }
        }
        for (const char* split : {"train", "val"}) {
            if (!j.contains(split)) continue;
            for (const auto& item : j.at(split)) {
                const fs::path image = resolve(item.at("image").get<std::string>());
                const fs::path labels = resolve(item.at("labels").get<std::string>());
                auto [vol, lab] = load_conformed(image, &labels, log);
                auto c = training::prepare_case(vol.data, *lab, table, nifti_stem(image));
                (std::string(split) == "train" ? train_cases : val_cases).push_back(std::move(c));
            }
        }
        if (center_only) {
            for (auto& c : train_cases) c = training::center_patch_case(c);
        }

        fs::create_directories(cfg.output_dir);
        write_text(fs::path(cfg.output_dir) / "config.json", cfg.to_json() + "\n");
        log << "training on " << train_cases.size() << " case(s), validating on " << val_cases.size() << '\n';
        const auto result = training::train(cfg, train_cases, val_cases, table, [&](const training::StepLog& s) {
            log << "step " << s.step << " loss " << s.loss;
            if (s.val_dsc) log << " val_dsc " << *s.val_dsc;
            log << '\n';
        });
        log << "finished after " << result.log.size() << " step(s); checkpoints in " << cfg.output_dir << '\n';
        return kOk;
    });
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& log) {
    return guarded(log, [&] {
        const LabelTable table = load_table(args.labels);
        const fs::path pred_dir(args.pred_dir), ref_dir(args.ref_dir), out_dir(args.out_dir);
        const auto preds = sorted_files(pred_dir, is_nifti);
        if (!fs::is_directory(ref_dir)) throw Error(ErrorCode::Io, ref_dir.string() + " is not a directory");
        if (preds.empty()) throw Error(ErrorCode::EmptyInput, "no NIfTI files in " + pred_dir.string());
        fs::create_directories(out_dir);
        const std::string dataset = args.dataset.empty() ? fs::absolute(ref_dir).lexically_normal().filename().string() : args.dataset;
        const std::string model_name = args.model.empty() ? fs::absolute(pred_dir).lexically_normal().filename().string() : args.model;
        std::vector<metrics::CaseReport> reports;
        for (const auto& pred_path : preds) {
            const fs::path ref_path = ref_dir / pred_path.filename();
            if (!fs::exists(ref_path)) throw Error(ErrorCode::Io, "no reference for " + pred_path.filename().string());
            const Volume pred = nifti::read(pred_path);
            const Volume ref = nifti::read(ref_path);
            if (pred.data.dims() != ref.data.dims()) {
                throw Error(ErrorCode::ShapeMismatch, pred_path.string() + " and " + ref_path.string() + " differ in shape");
            }
            auto report = metrics::evaluate_segmentation(to_label_grid(pred.data), to_label_grid(ref.data), table, ref.spacing,
                                                         nifti_stem(pred_path));
            report.dataset = dataset;
            report.model = model_name;
            write_text(out_dir / (report.case_id + ".json"), report.to_json() + "\n");
            log << report.case_id << " mean DSC " << report.mean_dsc << " over " << report.n_dsc << " region(s)\n";
            reports.push_back(std::move(report));
        }
        log << metrics::format_table(metrics::aggregate_reports(reports));
        return kOk;
    });
}

int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& log) {
    return guarded(log, [&] {
        const auto files = sorted_files(args.reports_dir, [](const fs::path& p) { return p.extension() == ".json"; });
        std::vector<metrics::CaseReport> reports;
        for (const auto& f : files) reports.push_back(metrics::CaseReport::from_json(read_text(f)));
        const auto rows = metrics::aggregate_reports(reports, {args.by_dataset, args.by_model});
        const std::string table = metrics::format_table(rows);
        if (args.output.empty() || args.output == "-") {
            out << table;
        } else {
            write_text(args.output, table);
        }
        if (!args.csv.empty()) write_text(args.csv, metrics::format_csv(rows));
        log << "aggregated " << reports.size() << " report(s) into " << rows.size() << " row(s)\n";
        return kOk;
    });
}

int cmd_phantom(const PhantomArgs& args, std::ostream& log) {
    return guarded(log, [&] {
        if (args.count < 1) throw Error(ErrorCode::InvalidConfig, "count must be >= 1");
        const fs::path dir(args.out_dir);
        fs::create_directories(dir);
        for (int n = 0; n < args.count; ++n) {
            const auto ph = training::make_phantom(args.seed + static_cast<std::uint64_t>(n));
            char stem[64];
            std::snprintf(stem, sizeof stem, "phantom_%03d", n);
            nifti::write(dir / (std::string(stem) + "_image.nii.gz"), conformed_geometry(ph.intensity, VolumeRole::Intensity));
            nifti::write(dir / (std::string(stem) + "_labels.nii.gz"),
                         conformed_geometry(to_float_grid(ph.labels), VolumeRole::Label));
            log << "wrote " << stem << '\n';
        }
        return kOk;
    });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log) {
    CLI::App app{"Subcortical segmentation: conform, segment, train, evaluate, report"};
    app.require_subcommand(1);

    ConformArgs conform_args;
    auto* conform_cmd = app.add_subcommand("conform", "Resample a scan to RAS 1 mm 256^3");
    conform_cmd->add_option("input", conform_args.input, "Input NIfTI")->required();
    conform_cmd->add_option("output", conform_args.output, "Output NIfTI")->required();
    conform_cmd->add_option("--report", conform_args.report, "Resample report JSON path");

    SegmentArgs segment_args;
    auto* segment_cmd = app.add_subcommand("segment", "Segment a scan with a trained checkpoint");
    segment_cmd->add_option("input", segment_args.input, "Input NIfTI (raw or conformed)")->required();
    segment_cmd->add_option("output", segment_args.output, "Output label NIfTI")->required();
    segment_cmd->add_option("-c,--checkpoint", segment_args.checkpoint, "Model checkpoint")->required();
    segment_cmd->add_option("--stride", segment_args.stride, "Patch stride in voxels")->check(CLI::Range(1, kPatchSide));
    segment_cmd->add_option("--labels", segment_args.labels, "Label table TSV");
    segment_cmd->add_flag("--force", segment_args.force, "Load despite config or label-table mismatch");
    segment_cmd->add_option("--device", segment_args.device, "cpu or accelerator (default $SUBSEG_DEVICE or cpu)");
    segment_cmd->add_option("--seed", segment_args.seed, "Seed for torch's generator");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train from a JSON configuration");
    train_cmd->add_option("config", train_args.config, "Training configuration JSON")->required();
    train_cmd->add_option("--labels", train_args.labels, "Label table TSV");

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against references (matching file names)");
    eval_cmd->add_option("pred_dir", eval_args.pred_dir)->required();
    eval_cmd->add_option("ref_dir", eval_args.ref_dir)->required();
    eval_cmd->add_option("out", eval_args.out_dir, "Directory for per-case JSON reports")->required();
    eval_cmd->add_option("--labels", eval_args.labels, "Label table TSV");
    eval_cmd->add_option("--dataset", eval_args.dataset, "Dataset tag for the reports");
    eval_cmd->add_option("--model", eval_args.model, "Model tag for the reports");

    ReportArgs report_args;
    std::string group_by = "dataset,model";
    auto* report_cmd = app.add_subcommand("report", "Aggregate case reports into a summary table");
    report_cmd->add_option("reports_dir", report_args.reports_dir)->required();
    report_cmd->add_option("out", report_args.output, "Text table path, - for stdout")->required();
    report_cmd->add_option("--csv", report_args.csv, "Also write CSV here");
    report_cmd->add_option("--group-by", group_by, "Comma list of dataset, model, or none");

    PhantomArgs phantom_args;
    auto* phantom_cmd = app.add_subcommand("phantom", "Write synthetic conformed phantoms with labels");
    phantom_cmd->add_option("out_dir", phantom_args.out_dir)->required();
    phantom_cmd->add_option("--seed", phantom_args.seed);
    phantom_cmd->add_option("--count", phantom_args.count);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, log);
        return code == 0 ? kOk : kInvalidConfig;
    }

    if (*conform_cmd) return cmd_conform(conform_args, log);
    if (*segment_cmd) return cmd_segment(segment_args, log);
    if (*train_cmd) return cmd_train(train_args, log);
    if (*eval_cmd) return cmd_evaluate(eval_args, log);
    if (*report_cmd) {
        report_args.by_dataset = group_by.find("dataset") != std::string::npos;
        report_args.by_model = group_by.find("model") != std::string::npos;
        return cmd_report(report_args, out, log);
    }
    return cmd_phantom(phantom_args, log);
}

}  // namespace subseg::cli
