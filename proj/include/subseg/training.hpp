#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "subseg/model.hpp"
#include "subseg/patch.hpp"

namespace subseg::training {

inline constexpr double kDiceEps = 1e-5;

/// 1 - mean_c (2 sum p_c g_c + eps) / (sum p_c + sum g_c + eps), sums over every axis but 1
/// (batch and voxels pooled). Throws ShapeMismatch.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps = kDiceEps,
                        bool include_background = true);

/// Class-index grid -> [1, classes, k, j, i] float one-hot. Throws UnknownClassIndex.
torch::Tensor one_hot(const LabelGrid& class_labels, int classes = kNumClasses);

struct AugmentConfig {
    double probability = 0.2;
    double max_rotation_deg = 10.0;
    double min_scale = 0.9;
    double max_scale = 1.1;
    double max_translation = 5.0;
    /// Noise sigma is drawn from [0, max_noise_fraction] times the patch intensity range.
    double max_noise_fraction = 0.05;
    double min_blur_sigma = 0.25;
    double max_blur_sigma = 1.0;

    void validate() const;
};

struct TrainingPatch {
    FloatGrid intensity;
    LabelGrid labels;
    Index3 offset{};
};

struct AugmentDraw {
    bool affine = false;
    bool noise = false;
    bool blur = false;
};

/// Affine (trilinear / nearest), additive Gaussian noise and Gaussian blur, each applied with
/// `probability`. Labels are only ever moved by nearest-neighbour lookup.
AugmentDraw augment(TrainingPatch& patch, std::mt19937_64& rng, const AugmentConfig& cfg = {});

/// Uniform draw over the plan's offsets; with probability 0.5 re-drawn until the label patch holds
/// foreground. `intensity` and `labels` are crop grids of plan.crop_dims.
TrainingPatch sample_training_patch(const FloatGrid& intensity, const LabelGrid& labels, const PatchPlan& plan,
                                    std::mt19937_64& rng);

/// Synthetic conformed head: nested and offset ellipsoids carrying every table ID, distinct
/// intensity mean per class plus noise. Intensity is exactly zero outside the head.
struct Phantom {
    FloatGrid intensity;
    LabelGrid labels;  // FreeSurfer IDs
};

Phantom make_phantom(std::uint64_t seed, const LabelTable& table = LabelTable::builtin());
std::vector<Phantom> make_phantoms(std::uint64_t seed, int num_cases, const LabelTable& table = LabelTable::builtin());

/// A cropped, rescaled training pair with class-index labels.
struct TrainCase {
    std::string id;
    FloatGrid intensity;
    LabelGrid labels;
    CropFrame frame;
};

/// Throws ShapeMismatch or UnknownClassIndex.
TrainCase prepare_case(const FloatGrid& conformed, const LabelGrid& freesurfer_labels, const LabelTable& table,
                       std::string id = {});

/// The centred 96^3 window of a prepared case as a case of its own.
TrainCase center_patch_case(const TrainCase& c);

struct TrainConfig {
    double learning_rate = 1e-6;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 2;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    std::int64_t max_steps = 1000;
    std::int64_t val_every = 100;
    /// 0 disables periodic step_N checkpoints (last and best are always written).
    std::int64_t checkpoint_every = 0;
    bool include_background = true;
    double dice_eps = kDiceEps;
    model::ModelConfig model;
    std::string output_dir = "train_out";
    /// Checkpoint to continue from (weights, optimizer, RNG, step).
    std::string resume_from;

    /// Throws InvalidConfig.
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct StepLog {
    std::int64_t step = 0;
    double loss = 0.0;
    std::optional<double> val_dsc;
    double wall_time = 0.0;
};

struct TrainResult {
    model::Network net{nullptr};
    std::vector<StepLog> log;
    std::optional<double> best_val_dsc;
    std::int64_t best_step = 0;
};

/// Mean DSC over the reference classes (background excluded) of the argmax prediction on the
/// centred patch of each case.
double validation_dsc(model::NetworkImpl& net, const std::vector<TrainCase>& cases);

/// Optimises Dice loss with AdamW. Writes under output_dir: metrics.jsonl (step, loss, val_dsc,
/// wall_time), loss.tsv (step, loss), last.ckpt, best.ckpt when validating and step_N.ckpt.
/// Throws EmptyDataset, NonFiniteLoss, InvalidConfig, Io.
TrainResult train(const TrainConfig& cfg, const std::vector<TrainCase>& train_cases, const std::vector<TrainCase>& val_cases,
                  const LabelTable& table = LabelTable::builtin(), const std::function<void(const StepLog&)>& on_step = {});

}  // namespace subseg::training
