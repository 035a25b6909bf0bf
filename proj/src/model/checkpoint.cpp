#include "subseg/checkpoint.hpp"

#include <filesystem>

namespace subseg::model {

namespace {

torch::serialize::InputArchive open_archive(const std::string& path) {
    if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::Io, "cannot open checkpoint " + path);
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path);
    } catch (const c10::Error& e) {
        throw Error(ErrorCode::CorruptCheckpoint, path + " is not a readable checkpoint");
    }
    return archive;
}

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
    c10::IValue v;
    if (!archive.try_read(key, v) || !v.isString()) throw Error(ErrorCode::CorruptCheckpoint, "checkpoint lacks " + key);
    return v.toStringRef();
}

std::int64_t read_int(torch::serialize::InputArchive& archive, const std::string& key) {
    c10::IValue v;
    if (!archive.try_read(key, v) || !v.isInt()) throw Error(ErrorCode::CorruptCheckpoint, "checkpoint lacks " + key);
    return v.toInt();
}

CheckpointInfo read_info(torch::serialize::InputArchive& archive) {
    CheckpointInfo info;
    info.format_version = read_int(archive, "format_version");
    if (info.format_version != kCheckpointFormat) {
        throw Error(ErrorCode::CheckpointMismatch, "checkpoint format " + std::to_string(info.format_version) + ", expected " +
                                                       std::to_string(kCheckpointFormat));
    }
    try {
        info.config = ModelConfig::from_json(read_string(archive, "model_config"));
    } catch (const Error& e) {
        throw Error(ErrorCode::CorruptCheckpoint, std::string("stored model config: ") + e.what());
    }
    info.label_fingerprint = read_string(archive, "label_fingerprint");
    info.step = read_int(archive, "step");
    info.train_state = read_string(archive, "train_state");
    info.has_optimizer = read_int(archive, "has_optimizer") != 0;
    return info;
}

}  // namespace

void save_checkpoint(const std::string& path, NetworkImpl& net, const LabelTable& table, const CheckpointExtras& extras) {
    torch::serialize::OutputArchive archive;
    archive.write("format_version", c10::IValue(kCheckpointFormat));
    archive.write("model_config", c10::IValue(net.config().to_json()));
    archive.write("label_fingerprint", c10::IValue(table.fingerprint()));
    archive.write("step", c10::IValue(extras.step));
    archive.write("train_state", c10::IValue(extras.train_state));
    archive.write("has_optimizer", c10::IValue(std::int64_t{extras.optimizer != nullptr}));
    torch::serialize::OutputArchive weights;
    net.save(weights);
    archive.write("model", weights);
    if (extras.optimizer) {
        torch::serialize::OutputArchive opt;
        extras.optimizer->save(opt);
        archive.write("optimizer", opt);
    }
    const std::string tmp = path + ".tmp";
    try {
        archive.save_to(tmp);
        std::filesystem::rename(tmp, path);
    } catch (const std::exception& e) {
        throw Error(ErrorCode::Io, "cannot write checkpoint " + path + ": " + e.what());
    }
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    auto archive = open_archive(path);
    return read_info(archive);
}

LoadedNetwork load_checkpoint(const std::string& path, const LabelTable& table, const LoadOptions& options) {
    auto archive = open_archive(path);
    LoadedNetwork out;
    out.info = read_info(archive);
    if (!options.force) {
        if (options.expected_config && !(*options.expected_config == out.info.config)) {
            throw Error(ErrorCode::CheckpointMismatch, "checkpoint config " + out.info.config.to_json() + " differs from " +
                                                           options.expected_config->to_json());
        }
        if (out.info.label_fingerprint != table.fingerprint()) {
            throw Error(ErrorCode::CheckpointMismatch, "checkpoint label table " + out.info.label_fingerprint +
                                                           " differs from " + table.fingerprint());
        }
    }
    out.net = Network(out.info.config);
    try {
        torch::serialize::InputArchive weights;
        if (!archive.try_read("model", weights)) throw Error(ErrorCode::CorruptCheckpoint, "checkpoint lacks weights");
        out.net->load(weights);
    } catch (const c10::Error& e) {
        throw Error(ErrorCode::CorruptCheckpoint, "weights do not fit the stored config: " + std::string(e.what_without_backtrace()));
    }
    return out;
}

void load_optimizer_state(const std::string& path, torch::optim::Optimizer& optimizer) {
    auto archive = open_archive(path);
    torch::serialize::InputArchive opt;
    if (!archive.try_read("optimizer", opt)) throw Error(ErrorCode::CorruptCheckpoint, path + " holds no optimizer state");
    try {
        optimizer.load(opt);
    } catch (const c10::Error& e) {
        throw Error(ErrorCode::CorruptCheckpoint, "optimizer state: " + std::string(e.what_without_backtrace()));
    }
}

}  // namespace subseg::model
