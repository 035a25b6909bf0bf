#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "subseg/label_table.hpp"
#include "subseg/model.hpp"

namespace subseg::model {

inline constexpr std::int64_t kCheckpointFormat = 1;

struct CheckpointInfo {
    std::int64_t format_version = kCheckpointFormat;
    ModelConfig config;
    std::string label_fingerprint;
    std::int64_t step = 0;
    bool has_optimizer = false;
    /// Opaque trainer state (RNG, best validation score), empty for inference-only files.
    std::string train_state;
};

struct CheckpointExtras {
    std::int64_t step = 0;
    torch::optim::Optimizer* optimizer = nullptr;
    std::string train_state;
};

/// Writes weights, config, label-table fingerprint and format version. Written to a
/// temporary file and renamed into place. Throws Io.
void save_checkpoint(const std::string& path, NetworkImpl& net, const LabelTable& table, const CheckpointExtras& extras = {});

/// Header fields only. Throws Io (missing file) or CorruptCheckpoint.
CheckpointInfo read_checkpoint_info(const std::string& path);

struct LoadOptions {
    /// When set, the stored config must equal it.
    std::optional<ModelConfig> expected_config;
    /// Load despite config or label-table mismatches (the stored config wins).
    bool force = false;
};

struct LoadedNetwork {
    Network net{nullptr};
    CheckpointInfo info;
};

/// Throws Io, CorruptCheckpoint, or CheckpointMismatch (unless forced).
LoadedNetwork load_checkpoint(const std::string& path, const LabelTable& table, const LoadOptions& options = {});

/// Restores optimizer moments saved alongside the weights. Throws CorruptCheckpoint when absent.
void load_optimizer_state(const std::string& path, torch::optim::Optimizer& optimizer);

}  // namespace subseg::model
